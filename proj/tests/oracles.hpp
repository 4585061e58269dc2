// Independent brute-force oracles used by the unit and acceptance suites.
// These deliberately avoid the library's computation paths: no max-shift in
// the softmax, no sorting or binary search in the metric counting.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hv/numerics.hpp"

namespace oracle {

// Direct evaluation of the additive-margin softmax loss:
// mean_i -log( exp(s c_y - m) / (exp(s c_y - m) + sum_{j != y} exp(s c_j)) )
// with c_j the cosine against the normalized j-th weight column.
inline double am_softmax(const hv::Matrix& raw_weights, double scale, double margin,
                         const std::vector<hv::EmbeddingVector>& embeddings,
                         const std::vector<std::size_t>& labels) {
    const std::size_t d = raw_weights.rows;
    const std::size_t C = raw_weights.cols;
    double total = 0.0;
    for (std::size_t b = 0; b < embeddings.size(); ++b) {
        const std::size_t y = labels[b];
        std::vector<double> cosines(C);
        for (std::size_t j = 0; j < C; ++j) {
            double norm2 = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                norm2 += raw_weights.at(i, j) * raw_weights.at(i, j);
            const double norm = std::sqrt(norm2);
            double c = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                c += raw_weights.at(i, j) / norm * embeddings[b][i];
            cosines[j] = c;
        }
        const double target = std::exp(scale * cosines[y] - margin);
        double denom = target;
        for (std::size_t j = 0; j < C; ++j)
            if (j != y) denom += std::exp(scale * cosines[j]);
        total += -std::log(target / denom);
    }
    return total / static_cast<double>(embeddings.size());
}

// Exhaustive enumeration of Eq.-style MPS:
// mean_i [ max over all (j != i, direction) candidates - g_i.h_i + m' ]_+
inline double mps(double margin_mprime, const std::vector<hv::EmbeddingVector>& g,
                  const std::vector<hv::EmbeddingVector>& h) {
    const std::size_t P = g.size();
    double total = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        double hardest = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < P; ++j) {
            if (j == i) continue;
            hardest = std::max(hardest, hv::dot(g[j].values(), h[i].values()));
            hardest = std::max(hardest, hv::dot(g[i].values(), h[j].values()));
        }
        const double genuine = hv::dot(g[i].values(), h[i].values());
        total += std::max(0.0, hardest - genuine + margin_mprime);
    }
    return total / static_cast<double>(P);
}

inline double count_frac_at_least(const std::vector<double>& values, double t) {
    std::size_t n = 0;
    for (double v : values)
        if (v >= t) ++n;
    return static_cast<double>(n) / static_cast<double>(values.size());
}

struct VrOracle {
    double vr;
    double threshold;
};

// Direct candidate scan for the VR@FAR contract: smallest threshold among
// { impostor scores, one ulp above max impostor, -inf at far = 1 } whose
// false accept rate (>= semantics) does not exceed the target.
inline VrOracle vr_at_far(const std::vector<double>& genuine,
                          const std::vector<double>& impostor, double far_target) {
    std::vector<double> candidates;
    if (far_target >= 1.0)
        candidates.push_back(-std::numeric_limits<double>::infinity());
    candidates.insert(candidates.end(), impostor.begin(), impostor.end());
    const double max_imp = *std::max_element(impostor.begin(), impostor.end());
    candidates.push_back(std::nextafter(max_imp, std::numeric_limits<double>::infinity()));
    std::sort(candidates.begin(), candidates.end());

    for (double t : candidates) {
        if (count_frac_at_least(impostor, t) <= far_target)
            return VrOracle{count_frac_at_least(genuine, t), t};
    }
    return VrOracle{0.0, std::numeric_limits<double>::quiet_NaN()}; // unreachable
}

// (FAR, TAR) by direct counting at one ulp above the overall max and at every
// unique score, ordered by increasing FAR.
inline std::vector<std::pair<double, double>> roc(const std::vector<double>& genuine,
                                                  const std::vector<double>& impostor) {
    std::vector<double> thresholds = genuine;
    thresholds.insert(thresholds.end(), impostor.begin(), impostor.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.insert(thresholds.begin(),
                      std::nextafter(thresholds.front(),
                                     std::numeric_limits<double>::infinity()));
    std::vector<std::pair<double, double>> points;
    for (double t : thresholds)
        points.emplace_back(count_frac_at_least(impostor, t),
                            count_frac_at_least(genuine, t));
    return points;
}

} // namespace oracle
