#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "hv/numerics.hpp"

namespace hv {

// Classification head over cosine logits. Weight column j is the class-j
// direction; columns are stored unnormalized and normalized on use. The scale
// is kept as log(s) so s stays positive under gradient updates.
struct AMSoftmaxHead {
    Matrix weights; // embedding_dim x num_classes
    double log_scale = 0.0;
    double margin = 0.0;
    bool learnable_scale = true;

    std::size_t num_classes() const { return weights.cols; }
    std::size_t embedding_dim() const { return weights.rows; }
    double scale() const;
};

struct MPSConfig {
    double margin_mprime = 0.5;
};

struct HeadGrads {
    Matrix weight_grads;        // same shape as head.weights
    double log_scale_grad = 0.0;
};

// For the softmax losses grads_on_embeddings[i] matches embeddings[i].
// For the MPS loss the layout is [grads on g_0..g_{P-1}, grads on h_0..h_{P-1}].
struct LossOutput {
    double value = 0.0;
    std::vector<Vector> grads_on_embeddings;
    std::optional<HeadGrads> head_grads;
};

AMSoftmaxHead make_am_softmax_head(std::size_t embedding_dim, std::size_t num_classes,
                                   double margin, double init_scale, std::uint64_t seed);
AMSoftmaxHead make_l2_softmax_head(std::size_t embedding_dim, std::size_t num_classes,
                                   double fixed_scale, std::uint64_t seed);

// Mean over the batch of -log( exp(s cos_y - m) / (exp(s cos_y - m) +
// sum_{j != y} exp(s cos_j)) ), with a max shift inside the log-sum-exp.
LossOutput am_softmax_forward(const AMSoftmaxHead& head,
                              const std::vector<EmbeddingVector>& embeddings,
                              const std::vector<std::size_t>& labels);

// AM-Softmax at margin 0 with the scale held fixed (zero scale gradient).
LossOutput l2_softmax_forward(const AMSoftmaxHead& head,
                              const std::vector<EmbeddingVector>& embeddings,
                              const std::vector<std::size_t>& labels);

// Per pair i: [ max_{j != i} max(g_j.h_i, g_i.h_j) - g_i.h_i + m' ]_+ ,
// averaged over all pairs. Subgradients flow only through the genuine term
// and the selected hardest impostor of each strictly active pair; ties pick
// the first candidate in scan order (j ascending, g_j.h_i before g_i.h_j).
LossOutput mps_forward(const MPSConfig& config,
                       const std::vector<EmbeddingVector>& id_embeddings,
                       const std::vector<EmbeddingVector>& selfie_embeddings);

// Distance of the batch to the nearest MPS non-smoothness: min over pairs of
// |pre-hinge value| and, for active pairs, the top-2 impostor score gap.
double mps_kink_distance(const MPSConfig& config,
                         const std::vector<EmbeddingVector>& id_embeddings,
                         const std::vector<EmbeddingVector>& selfie_embeddings);

// Finite-difference check of the MPS gradients on pre-normalization features.
// Throws TieAtKink when the batch sits within 1e-6 of a hinge boundary or of
// an argmax tie on an active pair; the check is meaningless there.
double mps_gradients_check(const MPSConfig& config,
                           const std::vector<Vector>& id_features,
                           const std::vector<Vector>& selfie_features,
                           double step = 1e-4);

inline constexpr double kDefaultAmSoftmaxInitScale = 10.0;
inline constexpr double kDefaultL2SoftmaxScale = 16.0;
inline constexpr double kKinkTolerance = 1e-6;

} // namespace hv
