#include "hv/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace hv {

bool all_finite(const Vector& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool all_finite(const Matrix& m) {
    return std::all_of(m.data.begin(), m.data.end(),
                       [](double x) { return std::isfinite(x); });
}

void require_finite(const Vector& v, const char* what) {
    if (!all_finite(v)) throw NonFiniteValue(std::string(what) + ": non-finite value");
}

EmbeddingVector::EmbeddingVector(Vector values) : values_(std::move(values)) {
    if (values_.empty()) throw InvalidArgument("EmbeddingVector: empty");
    require_finite(values_, "EmbeddingVector");
    const double n = l2_norm(values_);
    if (std::abs(n - 1.0) > kUnitNormTolerance)
        throw InvalidArgument("EmbeddingVector: norm " + std::to_string(n) +
                              " is not unit within 1e-6");
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw DimMismatch("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(const Vector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

NormalizeResult l2_normalize(const Vector& v) {
    if (v.empty()) throw InvalidArgument("l2_normalize: empty vector");
    require_finite(v, "l2_normalize");
    const double n = l2_norm(v);
    if (n <= kDegenerateNormThreshold)
        throw DegenerateNorm("l2_normalize: norm " + std::to_string(n) + " <= 1e-12");
    Vector unit(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) unit[i] = v[i] / n;
    return NormalizeResult{EmbeddingVector(std::move(unit)), n};
}

Vector l2_normalize_backward(const Vector& v, const Vector& upstream_grad) {
    if (v.size() != upstream_grad.size())
        throw DimMismatch("l2_normalize_backward: length mismatch");
    require_finite(v, "l2_normalize_backward");
    const double n = l2_norm(v);
    if (n <= kDegenerateNormThreshold)
        throw DegenerateNorm("l2_normalize_backward: norm <= 1e-12");
    const double vu = dot(v, upstream_grad);
    const double n3 = n * n * n;
    Vector grad(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        grad[i] = upstream_grad[i] / n - v[i] * vu / n3;
    return grad;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) throw DimMismatch("cosine_similarity: dim mismatch");
    const double s = dot(a.values(), b.values());
    return std::clamp(s, -1.0, 1.0);
}

Vector finite_difference_gradient(const std::function<double(const Vector&)>& f,
                                  const Vector& point, double step) {
    if (step <= 0.0) throw InvalidArgument("finite_difference_gradient: step <= 0");
    Vector grad(point.size());
    Vector probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + step;
        const double fp = f(probe);
        probe[i] = point[i] - step;
        const double fm = f(probe);
        probe[i] = point[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NonFiniteValue("finite_difference_gradient: f not finite near point");
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

double finite_difference_check(const std::function<double(const Vector&)>& f,
                               const Vector& analytic_grad, const Vector& point,
                               double step) {
    if (analytic_grad.size() != point.size())
        throw DimMismatch("finite_difference_check: gradient/point length mismatch");
    const Vector fd = finite_difference_gradient(f, point, step);
    double max_err = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i)
        max_err = std::max(max_err, std::abs(fd[i] - analytic_grad[i]));
    return max_err;
}

double relative_gradient_error(const Vector& analytic, const Vector& reference) {
    if (analytic.size() != reference.size())
        throw DimMismatch("relative_gradient_error: length mismatch");
    double max_err = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom =
            std::max({1.0, std::abs(analytic[i]), std::abs(reference[i])});
        max_err = std::max(max_err, std::abs(analytic[i] - reference[i]) / denom);
    }
    return max_err;
}

} // namespace hv
