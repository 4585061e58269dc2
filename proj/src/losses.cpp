#include "hv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hv/rng.hpp"

namespace hv {

double AMSoftmaxHead::scale() const { return std::exp(log_scale); }

AMSoftmaxHead make_am_softmax_head(std::size_t embedding_dim, std::size_t num_classes,
                                   double margin, double init_scale, std::uint64_t seed) {
    if (embedding_dim == 0 || num_classes == 0)
        throw InvalidArgument("make_am_softmax_head: zero dimension");
    if (margin < 0.0 || !std::isfinite(margin))
        throw InvalidArgument("make_am_softmax_head: bad margin");
    if (!(init_scale > 0.0))
        throw InvalidArgument("make_am_softmax_head: scale must be positive");
    AMSoftmaxHead head;
    head.weights = Matrix(embedding_dim, num_classes);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(embedding_dim));
    for (double& x : head.weights.data) x = rng.uniform(-bound, bound);
    head.log_scale = std::log(init_scale);
    head.margin = margin;
    head.learnable_scale = true;
    return head;
}

AMSoftmaxHead make_l2_softmax_head(std::size_t embedding_dim, std::size_t num_classes,
                                   double fixed_scale, std::uint64_t seed) {
    AMSoftmaxHead head = make_am_softmax_head(embedding_dim, num_classes,
                                              /*margin=*/0.0, fixed_scale, seed);
    head.learnable_scale = false;
    return head;
}

namespace {

// Shared softmax-over-cosine-logits core; margin and scale-gradient behavior
// differ between am_softmax_forward and l2_softmax_forward.
LossOutput softmax_core(const AMSoftmaxHead& head,
                        const std::vector<EmbeddingVector>& embeddings,
                        const std::vector<std::size_t>& labels, double margin,
                        bool scale_gradient) {
    if (embeddings.empty()) throw BatchTooSmall("softmax loss: empty batch");
    if (embeddings.size() != labels.size())
        throw DimMismatch("softmax loss: batch/label count mismatch");
    const std::size_t d = head.embedding_dim();
    const std::size_t C = head.num_classes();
    for (const auto& e : embeddings)
        if (e.dim() != d) throw DimMismatch("softmax loss: embedding dim mismatch");
    for (std::size_t y : labels)
        if (y >= C) throw LabelOutOfRange("softmax loss: label >= num_classes");
    if (!all_finite(head.weights)) throw NonFiniteValue("softmax loss: head weights");

    const double s = head.scale();
    const std::size_t B = embeddings.size();

    // Normalized weight columns and their norms.
    std::vector<Vector> w_unit(C, Vector(d));
    Vector w_norm(C);
    for (std::size_t j = 0; j < C; ++j) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) n2 += head.weights.at(i, j) * head.weights.at(i, j);
        const double n = std::sqrt(n2);
        if (n <= kDegenerateNormThreshold)
            throw DegenerateNorm("softmax loss: weight column with zero norm");
        w_norm[j] = n;
        for (std::size_t i = 0; i < d; ++i) w_unit[j][i] = head.weights.at(i, j) / n;
    }

    LossOutput out;
    out.grads_on_embeddings.assign(B, Vector(d, 0.0));
    // Accumulated dL/d(w_unit_j); chained through the column normalization once
    // at the end (the chain is linear in the upstream gradient).
    std::vector<Vector> unit_grads(C, Vector(d, 0.0));
    double scale_grad = 0.0;
    double total = 0.0;

    Vector cosines(C), logits(C), probs(C);
    for (std::size_t b = 0; b < B; ++b) {
        const Vector& f = embeddings[b].values();
        const std::size_t y = labels[b];
        for (std::size_t j = 0; j < C; ++j) {
            double c = 0.0;
            for (std::size_t i = 0; i < d; ++i) c += w_unit[j][i] * f[i];
            cosines[j] = c;
            logits[j] = s * c - (j == y ? margin : 0.0);
        }
        const double zmax = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            probs[j] = std::exp(logits[j] - zmax);
            denom += probs[j];
        }
        for (std::size_t j = 0; j < C; ++j) probs[j] /= denom;
        total += -(logits[y] - zmax) + std::log(denom);

        for (std::size_t j = 0; j < C; ++j) {
            const double dz = (probs[j] - (j == y ? 1.0 : 0.0)) / static_cast<double>(B);
            // dz/dcos = s, dz/ds = cos.
            for (std::size_t i = 0; i < d; ++i) {
                out.grads_on_embeddings[b][i] += s * dz * w_unit[j][i];
                unit_grads[j][i] += s * dz * f[i];
            }
            scale_grad += dz * cosines[j];
        }
    }

    HeadGrads head_grads;
    head_grads.weight_grads = Matrix(d, C);
    for (std::size_t j = 0; j < C; ++j) {
        // dL/dW*_j = (I - w_unit w_unit^T) / ||W*_j|| applied to dL/d(w_unit_j).
        const double proj = dot(w_unit[j], unit_grads[j]);
        for (std::size_t i = 0; i < d; ++i)
            head_grads.weight_grads.at(i, j) =
                (unit_grads[j][i] - w_unit[j][i] * proj) / w_norm[j];
    }
    // d(log s) = s * dL/ds.
    head_grads.log_scale_grad = scale_gradient ? s * scale_grad : 0.0;

    out.value = total / static_cast<double>(B);
    out.head_grads = std::move(head_grads);
    return out;
}

} // namespace

LossOutput am_softmax_forward(const AMSoftmaxHead& head,
                              const std::vector<EmbeddingVector>& embeddings,
                              const std::vector<std::size_t>& labels) {
    return softmax_core(head, embeddings, labels, head.margin, head.learnable_scale);
}

LossOutput l2_softmax_forward(const AMSoftmaxHead& head,
                              const std::vector<EmbeddingVector>& embeddings,
                              const std::vector<std::size_t>& labels) {
    return softmax_core(head, embeddings, labels, /*margin=*/0.0,
                        /*scale_gradient=*/false);
}

namespace {

struct ImpostorPick {
    std::size_t other = 0;   // the j of the winning candidate
    bool id_side = false;    // true: g_j . h_i, false: g_i . h_j
    double score = 0.0;
    double runner_up = 0.0;  // second-best candidate score
};

// Hardest impostor for pair i. Scan order: j ascending, g_j.h_i before
// g_i.h_j; strictly-greater replacement makes the first candidate win ties.
ImpostorPick hardest_impostor(const std::vector<Vector>& g, const std::vector<Vector>& h,
                              std::size_t i) {
    ImpostorPick pick;
    double best = -std::numeric_limits<double>::infinity();
    double second = best;
    for (std::size_t j = 0; j < g.size(); ++j) {
        if (j == i) continue;
        const double cand[2] = {dot(g[j], h[i]), dot(g[i], h[j])};
        for (int side = 0; side < 2; ++side) {
            if (cand[side] > best) {
                second = best;
                best = cand[side];
                pick.other = j;
                pick.id_side = side == 0;
            } else if (cand[side] > second) {
                second = cand[side];
            }
        }
    }
    pick.score = best;
    pick.runner_up = second;
    return pick;
}

} // namespace

LossOutput mps_forward(const MPSConfig& config,
                       const std::vector<EmbeddingVector>& id_embeddings,
                       const std::vector<EmbeddingVector>& selfie_embeddings) {
    const std::size_t P = id_embeddings.size();
    if (P != selfie_embeddings.size())
        throw DimMismatch("mps_forward: batch size mismatch between g and h");
    if (P < 2) throw BatchTooSmall("mps_forward: needs at least 2 pairs");
    if (!std::isfinite(config.margin_mprime))
        throw InvalidArgument("mps_forward: margin not finite");
    const std::size_t d = id_embeddings[0].dim();
    std::vector<Vector> g, h;
    g.reserve(P);
    h.reserve(P);
    for (std::size_t i = 0; i < P; ++i) {
        if (id_embeddings[i].dim() != d || selfie_embeddings[i].dim() != d)
            throw DimMismatch("mps_forward: embedding dim mismatch");
        g.push_back(id_embeddings[i].values());
        h.push_back(selfie_embeddings[i].values());
    }

    LossOutput out;
    out.grads_on_embeddings.assign(2 * P, Vector(d, 0.0));
    double total = 0.0;
    const double inv_p = 1.0 / static_cast<double>(P);

    for (std::size_t i = 0; i < P; ++i) {
        const ImpostorPick pick = hardest_impostor(g, h, i);
        const double genuine = dot(g[i], h[i]);
        const double pre_hinge = pick.score - genuine + config.margin_mprime;
        if (pre_hinge <= 0.0) continue; // inactive pair, subgradient 0
        total += pre_hinge;

        Vector& grad_gi = out.grads_on_embeddings[i];
        Vector& grad_hi = out.grads_on_embeddings[P + i];
        for (std::size_t k = 0; k < d; ++k) {
            grad_gi[k] -= inv_p * h[i][k];
            grad_hi[k] -= inv_p * g[i][k];
        }
        if (pick.id_side) {
            Vector& grad_gj = out.grads_on_embeddings[pick.other];
            for (std::size_t k = 0; k < d; ++k) {
                grad_gj[k] += inv_p * h[i][k];
                grad_hi[k] += inv_p * g[pick.other][k];
            }
        } else {
            Vector& grad_hj = out.grads_on_embeddings[P + pick.other];
            for (std::size_t k = 0; k < d; ++k) {
                grad_gi[k] += inv_p * h[pick.other][k];
                grad_hj[k] += inv_p * g[i][k];
            }
        }
    }

    out.value = total * inv_p;
    return out;
}

double mps_kink_distance(const MPSConfig& config,
                         const std::vector<EmbeddingVector>& id_embeddings,
                         const std::vector<EmbeddingVector>& selfie_embeddings) {
    const std::size_t P = id_embeddings.size();
    if (P != selfie_embeddings.size() || P < 2)
        throw BatchTooSmall("mps_kink_distance: needs at least 2 pairs");
    std::vector<Vector> graw, hraw;
    graw.reserve(P);
    hraw.reserve(P);
    for (const auto& e : id_embeddings) graw.push_back(e.values());
    for (const auto& e : selfie_embeddings) hraw.push_back(e.values());

    double distance = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < P; ++i) {
        const ImpostorPick pick = hardest_impostor(graw, hraw, i);
        const double pre_hinge = pick.score - dot(graw[i], hraw[i]) + config.margin_mprime;
        distance = std::min(distance, std::abs(pre_hinge));
        if (pre_hinge > 0.0)
            distance = std::min(distance, pick.score - pick.runner_up);
    }
    return distance;
}

double mps_gradients_check(const MPSConfig& config,
                           const std::vector<Vector>& id_features,
                           const std::vector<Vector>& selfie_features,
                           double step) {
    const std::size_t P = id_features.size();
    if (P != selfie_features.size() || P < 2)
        throw BatchTooSmall("mps_gradients_check: needs at least 2 pairs");
    const std::size_t d = id_features[0].size();

    auto normalize_all = [&](const std::vector<Vector>& raw) {
        std::vector<EmbeddingVector> unit;
        unit.reserve(raw.size());
        for (const Vector& v : raw) unit.push_back(l2_normalize(v).unit);
        return unit;
    };

    const auto g = normalize_all(id_features);
    const auto h = normalize_all(selfie_features);

    // Kink guard: a hinge sitting at 0, or an argmax tie on an active pair.
    // Ties on strictly inactive pairs are harmless: the region is flat there.
    if (mps_kink_distance(config, g, h) < kKinkTolerance)
        throw TieAtKink("mps_gradients_check: batch at a hinge or argmax kink");

    const LossOutput analytic = mps_forward(config, g, h);

    // Chain embedding gradients back to the raw features.
    Vector analytic_flat;
    for (std::size_t i = 0; i < P; ++i) {
        const Vector grad = l2_normalize_backward(id_features[i],
                                                  analytic.grads_on_embeddings[i]);
        analytic_flat.insert(analytic_flat.end(), grad.begin(), grad.end());
    }
    for (std::size_t i = 0; i < P; ++i) {
        const Vector grad = l2_normalize_backward(selfie_features[i],
                                                  analytic.grads_on_embeddings[P + i]);
        analytic_flat.insert(analytic_flat.end(), grad.begin(), grad.end());
    }

    Vector point;
    for (const Vector& v : id_features) point.insert(point.end(), v.begin(), v.end());
    for (const Vector& v : selfie_features) point.insert(point.end(), v.begin(), v.end());

    auto value_at = [&](const Vector& flat) {
        std::vector<Vector> graw(P, Vector(d)), hraw(P, Vector(d));
        for (std::size_t i = 0; i < P; ++i)
            for (std::size_t k = 0; k < d; ++k) {
                graw[i][k] = flat[i * d + k];
                hraw[i][k] = flat[(P + i) * d + k];
            }
        return mps_forward(config, normalize_all(graw), normalize_all(hraw)).value;
    };

    const Vector fd = finite_difference_gradient(value_at, point, step);
    return relative_gradient_error(analytic_flat, fd);
}

} // namespace hv
