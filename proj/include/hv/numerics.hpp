#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "hv/errors.hpp"

namespace hv {

using Vector = std::vector<double>;

// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

// Unit-norm vector (L2 norm 1 within 1e-6). Construction validates.
class EmbeddingVector {
public:
    explicit EmbeddingVector(Vector values);

    const Vector& values() const { return values_; }
    std::size_t dim() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

private:
    Vector values_;
};

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);
void require_finite(const Vector& v, const char* what);

double dot(const Vector& a, const Vector& b);
double l2_norm(const Vector& v);

struct NormalizeResult {
    EmbeddingVector unit;
    double norm;
};

// unit = v / ||v||. Throws DegenerateNorm when ||v|| <= 1e-12.
NormalizeResult l2_normalize(const Vector& v);

// Gradient of v -> v/||v||:  (I/||v|| - v v^T/||v||^3) * upstream.
Vector l2_normalize_backward(const Vector& v, const Vector& upstream_grad);

// a^T b for unit vectors, clamped to [-1, 1].
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Max over coordinates of |central difference - analytic gradient|.
// Throws NonFiniteValue when f is non-finite at any probe point.
double finite_difference_check(const std::function<double(const Vector&)>& f,
                               const Vector& analytic_grad, const Vector& point,
                               double step);

// Central-difference gradient of f at point.
Vector finite_difference_gradient(const std::function<double(const Vector&)>& f,
                                  const Vector& point, double step);

// Max over coordinates of |a_i - b_i| / max(1, |a_i|, |b_i|).
double relative_gradient_error(const Vector& analytic, const Vector& reference);

inline constexpr double kDegenerateNormThreshold = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-6;

} // namespace hv
