#include "hv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_set>

#include "hv/binio.hpp"

namespace hv {

namespace {

void validate_train_config(const TrainConfig& config) {
    if (config.lr_schedule.empty())
        throw ConfigInvalid("TrainConfig: empty lr_schedule");
    if (config.lr_schedule.front().step_threshold != 0)
        throw ConfigInvalid("TrainConfig: lr_schedule must start at step 0");
    for (std::size_t i = 1; i < config.lr_schedule.size(); ++i)
        if (config.lr_schedule[i].step_threshold <= config.lr_schedule[i - 1].step_threshold)
            throw ConfigInvalid("TrainConfig: lr_schedule thresholds must increase");
    if (config.momentum < 0.0 || config.momentum >= 1.0)
        throw ConfigInvalid("TrainConfig: momentum must be in [0, 1)");
    if (config.weight_decay < 0.0)
        throw ConfigInvalid("TrainConfig: weight_decay must be >= 0");
    if (config.batch_size == 0) throw ConfigInvalid("TrainConfig: batch_size must be positive");
    if (config.log_every == 0) throw ConfigInvalid("TrainConfig: log_every must be positive");
}

} // namespace

void validate_labeled_dataset(const LabeledDataset& dataset) {
    if (dataset.num_classes == 0)
        throw ConfigInvalid("LabeledDataset: num_classes must be positive");
    std::size_t len = 0;
    for (const auto& s : dataset.samples) {
        if (s.label >= dataset.num_classes)
            throw LabelOutOfRange("LabeledDataset: label >= num_classes");
        if (len == 0) len = s.input.size();
        if (s.input.size() != len)
            throw DimMismatch("LabeledDataset: inconsistent input lengths");
    }
}

void validate_pair_dataset(const PairDataset& dataset) {
    std::size_t len = 0;
    std::unordered_set<std::uint64_t> seen;
    for (const auto& p : dataset.pairs) {
        if (p.selfie_inputs.empty())
            throw ConfigInvalid("PairDataset: subject without selfies");
        if (!seen.insert(p.subject_id).second)
            throw ConfigInvalid("PairDataset: duplicate subject_id");
        if (len == 0) len = p.id_input.size();
        if (p.id_input.size() != len)
            throw DimMismatch("PairDataset: inconsistent input lengths");
        for (const auto& s : p.selfie_inputs)
            if (s.size() != len) throw DimMismatch("PairDataset: inconsistent input lengths");
    }
}

OptimizerState make_optimizer_state(const EmbeddingModel& model) {
    OptimizerState state;
    for (const Matrix& w : model.layer_weights)
        state.weight_velocity.emplace_back(w.rows, w.cols);
    for (const Vector& b : model.layer_biases)
        state.bias_velocity.emplace_back(b.size(), 0.0);
    return state;
}

HeadOptimizerState make_head_optimizer_state(const AMSoftmaxHead& head) {
    HeadOptimizerState state;
    state.weight_velocity = Matrix(head.weights.rows, head.weights.cols);
    return state;
}

void sgd_step(std::span<double> params, std::span<const double> grads,
              std::span<double> velocity, double lr, double momentum,
              double weight_decay) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw ShapeMismatch("sgd_step: buffer size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grads[i] + weight_decay * params[i];
        params[i] -= lr * velocity[i];
    }
}

void sgd_step_model(EmbeddingModel& model, const ParamGrads& grads,
                    OptimizerState& state, double lr, const TrainConfig& config) {
    if (grads.weight_grads.size() != model.num_layers())
        throw ShapeMismatch("sgd_step_model: layer count mismatch");
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        if (l < config.freeze_prefix) continue;
        sgd_step(model.layer_weights[l].data, grads.weight_grads[l].data,
                 state.weight_velocity[l].data, lr, config.momentum,
                 config.weight_decay);
        sgd_step(model.layer_biases[l], grads.bias_grads[l],
                 state.bias_velocity[l], lr, config.momentum, config.weight_decay);
    }
    ++state.step_count;
}

void sgd_step_head(AMSoftmaxHead& head, const HeadGrads& grads,
                   HeadOptimizerState& state, double lr, const TrainConfig& config) {
    if (!grads.weight_grads.same_shape(head.weights))
        throw ShapeMismatch("sgd_step_head: weight shape mismatch");
    sgd_step(head.weights.data, grads.weight_grads.data,
             state.weight_velocity.data, lr, config.momentum, config.weight_decay);
    if (head.learnable_scale) {
        // No decay on the scale: it is a temperature, not a weight.
        double grad = grads.log_scale_grad;
        state.log_scale_velocity = config.momentum * state.log_scale_velocity + grad;
        head.log_scale -= lr * state.log_scale_velocity;
    }
    ++state.step_count;
}

double lr_at(const TrainConfig& config, std::size_t step) {
    validate_train_config(config);
    if (step >= config.total_steps)
        throw StepOutOfRange("lr_at: step " + std::to_string(step) + " >= total_steps");
    double lr = config.lr_schedule.front().learning_rate;
    for (const LrEntry& e : config.lr_schedule) {
        if (e.step_threshold <= step) lr = e.learning_rate;
        else break;
    }
    return lr;
}

std::vector<LabeledSample> sample_class_batch(const LabeledDataset& dataset,
                                              std::size_t batch_size, Rng& rng) {
    if (dataset.samples.empty()) throw EmptyDataset("sample_class_batch: empty dataset");
    std::vector<LabeledSample> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i)
        batch.push_back(dataset.samples[rng.uniform_index(dataset.samples.size())]);
    return batch;
}

PairBatch sample_pair_batch(const PairDataset& dataset, std::size_t batch_size,
                            Rng& rng) {
    if (batch_size % 2 != 0) throw OddBatch("sample_pair_batch: batch size must be even");
    const std::size_t half = batch_size / 2;
    if (half < 2) throw BatchTooSmall("sample_pair_batch: needs at least 2 subjects per batch");
    if (dataset.size() < half)
        throw TooFewSubjects("sample_pair_batch: dataset has fewer subjects than batch/2");

    // Partial Fisher-Yates: first `half` slots are the drawn subjects.
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < half; ++i) {
        const std::size_t j = i + rng.uniform_index(order.size() - i);
        std::swap(order[i], order[j]);
    }

    PairBatch batch;
    batch.id_inputs.reserve(half);
    batch.selfie_inputs.reserve(half);
    batch.subject_indices.assign(order.begin(), order.begin() + half);
    for (std::size_t idx : batch.subject_indices) {
        const PairSubject& subject = dataset.pairs[idx];
        batch.id_inputs.push_back(subject.id_input);
        const std::size_t pick = rng.uniform_index(subject.selfie_inputs.size());
        batch.selfie_inputs.push_back(subject.selfie_inputs[pick]);
    }
    return batch;
}

void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<TraceRow>& trace) {
    std::string text = "step,lr,loss\n";
    char line[128];
    for (const TraceRow& row : trace) {
        std::snprintf(line, sizeof(line), "%zu,%.10g,%.10g\n", row.step, row.lr, row.loss);
        text += line;
    }
    atomic_write_text(path, text);
}

PretrainResult pretrain(EmbeddingModel model, AMSoftmaxHead head,
                        const LabeledDataset& dataset, const TrainConfig& config) {
    validate_labeled_dataset(dataset);
    if (config.total_steps > 0) validate_train_config(config);
    if (head.num_classes() != dataset.num_classes)
        throw DimMismatch("pretrain: head classes do not match dataset");
    if (head.embedding_dim() != model.config.embedding_dim)
        throw DimMismatch("pretrain: head dim does not match model");

    Rng rng(config.rng_seed);
    OptimizerState model_state = make_optimizer_state(model);
    HeadOptimizerState head_state = make_head_optimizer_state(head);
    std::vector<TraceRow> trace;

    for (std::size_t step = 0; step < config.total_steps; ++step) {
        const double lr = lr_at(config, step);
        const auto batch = sample_class_batch(dataset, config.batch_size, rng);

        std::vector<EmbeddingVector> embeddings;
        std::vector<ForwardCache> caches;
        std::vector<std::size_t> labels;
        embeddings.reserve(batch.size());
        caches.reserve(batch.size());
        for (const LabeledSample& sample : batch) {
            ForwardResult fr = forward(model, sample.input);
            embeddings.push_back(std::move(fr.embedding));
            caches.push_back(std::move(fr.cache));
            labels.push_back(sample.label);
        }

        const LossOutput loss = am_softmax_forward(head, embeddings, labels);

        ParamGrads grads = zero_grads_like(model);
        for (std::size_t b = 0; b < batch.size(); ++b)
            accumulate(grads, backward(model, caches[b], loss.grads_on_embeddings[b]));

        if (step % config.log_every == 0)
            trace.push_back(TraceRow{step, lr, loss.value});

        sgd_step_model(model, grads, model_state, lr, config);
        sgd_step_head(head, *loss.head_grads, head_state, lr, config);
    }
    return PretrainResult{std::move(model), std::move(head), std::move(trace)};
}

namespace {

// Shared stage-2 loop. `compute` maps a drawn batch to the loss value plus
// gradients on the id-side and selfie-side embeddings (in batch order).
template <typename ComputeFn>
FinetuneResult finetune_loop(const EmbeddingModel& base, const PairDataset& dataset,
                             const TrainConfig& config, bool share_weights,
                             ComputeFn&& compute) {
    validate_pair_dataset(dataset);
    if (config.total_steps > 0) validate_train_config(config);

    SiblingPair siblings = clone_siblings(base);
    EmbeddingModel shared = base;

    Rng rng(config.rng_seed);
    OptimizerState id_state = make_optimizer_state(base);
    OptimizerState selfie_state = make_optimizer_state(base);
    std::vector<TraceRow> trace;

    for (std::size_t step = 0; step < config.total_steps; ++step) {
        const double lr = lr_at(config, step);
        PairBatch batch = sample_pair_batch(dataset, config.batch_size, rng);
        const std::size_t half = batch.id_inputs.size();

        EmbeddingModel& id_net = share_weights ? shared : siblings.id_model;
        EmbeddingModel& selfie_net = share_weights ? shared : siblings.selfie_model;

        std::vector<EmbeddingVector> g, h;
        std::vector<ForwardCache> g_caches, h_caches;
        g.reserve(half);
        h.reserve(half);
        for (std::size_t i = 0; i < half; ++i) {
            ForwardResult fg = forward(id_net, batch.id_inputs[i]);
            g.push_back(std::move(fg.embedding));
            g_caches.push_back(std::move(fg.cache));
            ForwardResult fh = forward(selfie_net, batch.selfie_inputs[i]);
            h.push_back(std::move(fh.embedding));
            h_caches.push_back(std::move(fh.cache));
        }

        std::vector<Vector> g_grads, h_grads;
        const double loss_value = compute(batch, g, h, g_grads, h_grads, lr);

        if (share_weights) {
            ParamGrads grads = zero_grads_like(shared);
            for (std::size_t i = 0; i < half; ++i) {
                accumulate(grads, backward(shared, g_caches[i], g_grads[i]));
                accumulate(grads, backward(shared, h_caches[i], h_grads[i]));
            }
            sgd_step_model(shared, grads, id_state, lr, config);
        } else {
            ParamGrads grads_id = zero_grads_like(siblings.id_model);
            ParamGrads grads_selfie = zero_grads_like(siblings.selfie_model);
            for (std::size_t i = 0; i < half; ++i) {
                accumulate(grads_id, backward(siblings.id_model, g_caches[i], g_grads[i]));
                accumulate(grads_selfie,
                           backward(siblings.selfie_model, h_caches[i], h_grads[i]));
            }
            sgd_step_model(siblings.id_model, grads_id, id_state, lr, config);
            sgd_step_model(siblings.selfie_model, grads_selfie, selfie_state, lr, config);
        }

        if (step % config.log_every == 0)
            trace.push_back(TraceRow{step, lr, loss_value});
    }

    if (share_weights) siblings = SiblingPair{shared, shared};
    return FinetuneResult{std::move(siblings), std::move(trace)};
}

} // namespace

FinetuneResult finetune(const EmbeddingModel& base, const PairDataset& dataset,
                        const TrainConfig& config, const MPSConfig& mps,
                        bool share_weights) {
    return finetune_loop(
        base, dataset, config, share_weights,
        [&](const PairBatch&, const std::vector<EmbeddingVector>& g,
            const std::vector<EmbeddingVector>& h, std::vector<Vector>& g_grads,
            std::vector<Vector>& h_grads, double) {
            const std::size_t half = g.size();
            LossOutput loss = mps_forward(mps, g, h);
            g_grads.assign(loss.grads_on_embeddings.begin(),
                           loss.grads_on_embeddings.begin() + half);
            h_grads.assign(loss.grads_on_embeddings.begin() + half,
                           loss.grads_on_embeddings.end());
            return loss.value;
        });
}

FinetuneResult finetune_classification(const EmbeddingModel& base,
                                       const PairDataset& dataset,
                                       const TrainConfig& config,
                                       const ClassifierFinetuneConfig& loss_config,
                                       bool share_weights) {
    validate_pair_dataset(dataset);
    // One class per training subject.
    const std::size_t num_classes = dataset.size();
    if (num_classes == 0) throw EmptyDataset("finetune_classification: empty dataset");

    const std::uint64_t head_seed = Rng(config.rng_seed).child(1).seed();
    AMSoftmaxHead head =
        loss_config.loss == ClassifierLoss::AmSoftmax
            ? make_am_softmax_head(base.config.embedding_dim, num_classes,
                                   loss_config.margin, loss_config.init_scale, head_seed)
            : make_l2_softmax_head(base.config.embedding_dim, num_classes,
                                   loss_config.fixed_scale, head_seed);
    HeadOptimizerState head_state = make_head_optimizer_state(head);

    return finetune_loop(
        base, dataset, config, share_weights,
        [&, head = std::move(head), head_state = std::move(head_state)](
            const PairBatch& batch, const std::vector<EmbeddingVector>& g,
            const std::vector<EmbeddingVector>& h, std::vector<Vector>& g_grads,
            std::vector<Vector>& h_grads, double lr) mutable {
            const std::size_t half = g.size();
            std::vector<EmbeddingVector> embeddings;
            embeddings.reserve(2 * half);
            embeddings.insert(embeddings.end(), g.begin(), g.end());
            embeddings.insert(embeddings.end(), h.begin(), h.end());
            std::vector<std::size_t> labels(batch.subject_indices);
            labels.insert(labels.end(), batch.subject_indices.begin(),
                          batch.subject_indices.end());

            LossOutput loss = loss_config.loss == ClassifierLoss::AmSoftmax
                                  ? am_softmax_forward(head, embeddings, labels)
                                  : l2_softmax_forward(head, embeddings, labels);
            g_grads.assign(loss.grads_on_embeddings.begin(),
                           loss.grads_on_embeddings.begin() + half);
            h_grads.assign(loss.grads_on_embeddings.begin() + half,
                           loss.grads_on_embeddings.end());
            sgd_step_head(head, *loss.head_grads, head_state, lr, config);
            return loss.value;
        });
}

TrainConfig paper_stage1_preset(std::uint64_t rng_seed) {
    TrainConfig config;
    config.batch_size = 256;
    config.total_steps = 280000;
    config.lr_schedule = {{0, 0.1}, {160000, 0.01}, {240000, 0.001}};
    config.momentum = 0.9;
    config.weight_decay = 5e-4;
    config.rng_seed = rng_seed;
    return config;
}

TrainConfig paper_stage2_preset(std::uint64_t rng_seed) {
    TrainConfig config;
    config.batch_size = 256;
    config.total_steps = 800;
    config.lr_schedule = {{0, 0.01}, {500, 0.001}};
    config.momentum = 0.9;
    config.weight_decay = 5e-4;
    config.rng_seed = rng_seed;
    return config;
}

} // namespace hv
