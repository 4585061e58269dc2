#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hv/losses.hpp"
#include "hv/model.hpp"
#include "hv/rng.hpp"

namespace hv {

struct LrEntry {
    std::size_t step_threshold = 0;
    double learning_rate = 0.0;
};

struct TrainConfig {
    std::size_t batch_size = 256; // stage-2: M, must be even
    std::size_t total_steps = 0;
    std::vector<LrEntry> lr_schedule; // thresholds strictly increasing from 0
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t rng_seed = 0;
    std::size_t log_every = 10;
    std::size_t freeze_prefix = 0; // leading embedding layers left untouched
};

struct LabeledSample {
    Vector input;
    std::size_t label = 0;
};

struct LabeledDataset {
    std::vector<LabeledSample> samples;
    std::size_t num_classes = 0;

    std::size_t size() const { return samples.size(); }
};

struct PairSubject {
    Vector id_input;
    std::vector<Vector> selfie_inputs; // non-empty
    std::uint64_t subject_id = 0;
};

struct PairDataset {
    std::vector<PairSubject> pairs;

    std::size_t size() const { return pairs.size(); }
};

void validate_labeled_dataset(const LabeledDataset& dataset);
void validate_pair_dataset(const PairDataset& dataset);

// Velocity buffers mirroring a model's parameter tensors.
struct OptimizerState {
    std::vector<Matrix> weight_velocity;
    std::vector<Vector> bias_velocity;
    std::size_t step_count = 0;
};

struct HeadOptimizerState {
    Matrix weight_velocity;
    double log_scale_velocity = 0.0;
    std::size_t step_count = 0;
};

OptimizerState make_optimizer_state(const EmbeddingModel& model);
HeadOptimizerState make_head_optimizer_state(const AMSoftmaxHead& head);

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
void sgd_step(std::span<double> params, std::span<const double> grads,
              std::span<double> velocity, double lr, double momentum,
              double weight_decay);

void sgd_step_model(EmbeddingModel& model, const ParamGrads& grads,
                    OptimizerState& state, double lr, const TrainConfig& config);
void sgd_step_head(AMSoftmaxHead& head, const HeadGrads& grads,
                   HeadOptimizerState& state, double lr, const TrainConfig& config);

// Learning rate of the last schedule entry whose threshold <= step.
double lr_at(const TrainConfig& config, std::size_t step);

// batch_size samples drawn uniformly with replacement.
std::vector<LabeledSample> sample_class_batch(const LabeledDataset& dataset,
                                              std::size_t batch_size, Rng& rng);

struct PairBatch {
    std::vector<Vector> id_inputs;     // batch_size/2 entries
    std::vector<Vector> selfie_inputs; // one uniformly chosen selfie per subject
    std::vector<std::size_t> subject_indices;
};

// batch_size/2 distinct subjects drawn without replacement.
PairBatch sample_pair_batch(const PairDataset& dataset, std::size_t batch_size,
                            Rng& rng);

struct TraceRow {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

// CSV with columns step, lr, loss.
void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<TraceRow>& trace);

struct PretrainResult {
    EmbeddingModel model;
    AMSoftmaxHead head;
    std::vector<TraceRow> trace;
};

// Stage 1: classification training of the base model with the AM-Softmax head.
PretrainResult pretrain(EmbeddingModel model, AMSoftmaxHead head,
                        const LabeledDataset& dataset, const TrainConfig& config);

struct FinetuneResult {
    SiblingPair siblings;
    std::vector<TraceRow> trace;
};

// Stage 2: clones base into siblings (one shared parameter set when
// share_weights) and trains them on pair batches with the MPS loss.
FinetuneResult finetune(const EmbeddingModel& base, const PairDataset& dataset,
                        const TrainConfig& config, const MPSConfig& mps,
                        bool share_weights);

enum class ClassifierLoss { AmSoftmax, L2Softmax };

struct ClassifierFinetuneConfig {
    ClassifierLoss loss = ClassifierLoss::AmSoftmax;
    double margin = 5.0;      // AM-Softmax margin
    double init_scale = 10.0; // learnable scale init (AM-Softmax)
    double fixed_scale = 16.0; // fixed scale (L2-Softmax)
};

// Stage-2 ablation path: fine-tune the siblings with a per-subject
// classification loss instead of MPS. The head is created here (one class per
// dataset subject) and discarded with the result.
FinetuneResult finetune_classification(const EmbeddingModel& base,
                                       const PairDataset& dataset,
                                       const TrainConfig& config,
                                       const ClassifierFinetuneConfig& loss_config,
                                       bool share_weights);

// Published hyperparameter presets.
TrainConfig paper_stage1_preset(std::uint64_t rng_seed);
TrainConfig paper_stage2_preset(std::uint64_t rng_seed);

inline constexpr double kPaperMarginM = 5.0;
inline constexpr double kPaperMarginMPrime = 0.5;

} // namespace hv
