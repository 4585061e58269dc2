#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hv/numerics.hpp"

namespace hv {

enum class Activation : std::uint8_t { Relu = 0, Tanh = 1 };

struct ModelConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims; // may be empty (linear model)
    std::size_t embedding_dim = 0;        // >= 2
    Activation activation = Activation::Relu;
    std::uint64_t init_seed = 0;
};

// Fully connected embedding network. Layer l maps fan_in -> fan_out with
// weight shape (fan_in x fan_out) and y = W^T x + b; hidden layers apply the
// activation, the final layer is linear and its output is L2-normalized.
struct EmbeddingModel {
    ModelConfig config;
    std::vector<Matrix> layer_weights;
    std::vector<Vector> layer_biases;

    std::size_t num_layers() const { return layer_weights.size(); }
};

struct SiblingPair {
    EmbeddingModel id_model;     // template-side network
    EmbeddingModel selfie_model; // probe-side network
};

// Activation record kept by forward for the matching backward call.
struct ForwardCache {
    Vector input;
    std::vector<Vector> pre_activations;  // z_l per layer
    std::vector<Vector> activations;      // act(z_l) per hidden layer, last is linear
    Vector pre_norm_output;
    double pre_norm_norm = 0.0;
};

struct ParamGrads {
    std::vector<Matrix> weight_grads;
    std::vector<Vector> bias_grads;
};

struct ForwardResult {
    EmbeddingVector embedding;
    ForwardCache cache;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from config.init_seed, biases 0.
EmbeddingModel init_model(const ModelConfig& config);

ForwardResult forward(const EmbeddingModel& model, const Vector& x);

// Embedding-only forward, no cache.
EmbeddingVector embed(const EmbeddingModel& model, const Vector& x);

// Gradients for every weight and bias given the loss gradient on the
// normalized embedding. Chains through the output normalization.
ParamGrads backward(const EmbeddingModel& model, const ForwardCache& cache,
                    const Vector& upstream_grad_on_embedding);

ParamGrads zero_grads_like(const EmbeddingModel& model);
void accumulate(ParamGrads& into, const ParamGrads& grads);

// Two deep, independent copies of base.
SiblingPair clone_siblings(const EmbeddingModel& base);

bool models_equal(const EmbeddingModel& a, const EmbeddingModel& b);

// Checkpoint file: magic "HVCKPT", format version, config block, parameters
// as little-endian float64 in layer order, trailing FNV-1a 64 checksum of the
// parameter bytes. load(save(m)) round-trips bitwise.
void save_checkpoint(const EmbeddingModel& model, const std::filesystem::path& path);
EmbeddingModel load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

} // namespace hv
