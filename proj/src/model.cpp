#include "hv/model.hpp"

#include <cmath>

#include "hv/binio.hpp"
#include "hv/rng.hpp"

namespace hv {

namespace {

void validate_config(const ModelConfig& config) {
    if (config.input_dim == 0) throw InvalidArgument("ModelConfig: input_dim must be positive");
    if (config.embedding_dim < 2) throw InvalidArgument("ModelConfig: embedding_dim must be >= 2");
    for (std::size_t d : config.hidden_dims)
        if (d == 0) throw InvalidArgument("ModelConfig: hidden dim must be positive");
}

std::vector<std::size_t> layer_dims(const ModelConfig& config) {
    std::vector<std::size_t> dims;
    dims.push_back(config.input_dim);
    dims.insert(dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
    dims.push_back(config.embedding_dim);
    return dims;
}

double activate(Activation act, double z) {
    return act == Activation::Relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

double activate_grad(Activation act, double z, double a) {
    return act == Activation::Relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}

} // namespace

EmbeddingModel init_model(const ModelConfig& config) {
    validate_config(config);
    const auto dims = layer_dims(config);
    EmbeddingModel model;
    model.config = config;
    Rng rng(config.init_seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t fan_in = dims[l];
        const std::size_t fan_out = dims[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Matrix w(fan_in, fan_out);
        for (double& x : w.data) x = rng.uniform(-bound, bound);
        model.layer_weights.push_back(std::move(w));
        model.layer_biases.emplace_back(fan_out, 0.0);
    }
    return model;
}

ForwardResult forward(const EmbeddingModel& model, const Vector& x) {
    if (x.size() != model.config.input_dim)
        throw DimMismatch("forward: input length does not match config.input_dim");
    require_finite(x, "forward input");

    ForwardCache cache;
    cache.input = x;
    const std::size_t L = model.num_layers();
    const Vector* cur = &x;
    for (std::size_t l = 0; l < L; ++l) {
        const Matrix& w = model.layer_weights[l];
        const Vector& b = model.layer_biases[l];
        Vector z(w.cols);
        for (std::size_t j = 0; j < w.cols; ++j) {
            double s = b[j];
            for (std::size_t i = 0; i < w.rows; ++i) s += (*cur)[i] * w.at(i, j);
            z[j] = s;
        }
        Vector a = z;
        if (l + 1 < L)
            for (std::size_t j = 0; j < a.size(); ++j)
                a[j] = activate(model.config.activation, z[j]);
        cache.pre_activations.push_back(std::move(z));
        cache.activations.push_back(std::move(a));
        cur = &cache.activations.back();
    }
    cache.pre_norm_output = *cur;
    auto normalized = l2_normalize(cache.pre_norm_output);
    cache.pre_norm_norm = normalized.norm;
    return ForwardResult{std::move(normalized.unit), std::move(cache)};
}

EmbeddingVector embed(const EmbeddingModel& model, const Vector& x) {
    return forward(model, x).embedding;
}

ParamGrads backward(const EmbeddingModel& model, const ForwardCache& cache,
                    const Vector& upstream_grad_on_embedding) {
    const std::size_t L = model.num_layers();
    if (cache.activations.size() != L || cache.input.size() != model.config.input_dim)
        throw ShapeMismatch("backward: cache does not match model");
    if (upstream_grad_on_embedding.size() != model.config.embedding_dim)
        throw ShapeMismatch("backward: upstream gradient has wrong dimension");

    ParamGrads grads = zero_grads_like(model);
    // d(normalized)/d(pre-norm) chain.
    Vector delta = l2_normalize_backward(cache.pre_norm_output, upstream_grad_on_embedding);

    for (std::size_t l = L; l-- > 0;) {
        // delta holds dL/dz for layer l once the activation is unwound.
        if (l + 1 < L) {
            const Vector& z = cache.pre_activations[l];
            const Vector& a = cache.activations[l];
            for (std::size_t j = 0; j < delta.size(); ++j)
                delta[j] *= activate_grad(model.config.activation, z[j], a[j]);
        }
        const Vector& in = l == 0 ? cache.input : cache.activations[l - 1];
        Matrix& wg = grads.weight_grads[l];
        for (std::size_t i = 0; i < wg.rows; ++i)
            for (std::size_t j = 0; j < wg.cols; ++j)
                wg.at(i, j) = in[i] * delta[j];
        grads.bias_grads[l] = delta;

        if (l > 0) {
            const Matrix& w = model.layer_weights[l];
            Vector prev(w.rows, 0.0);
            for (std::size_t i = 0; i < w.rows; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < w.cols; ++j) s += w.at(i, j) * delta[j];
                prev[i] = s;
            }
            delta = std::move(prev);
        }
    }
    return grads;
}

ParamGrads zero_grads_like(const EmbeddingModel& model) {
    ParamGrads grads;
    for (const Matrix& w : model.layer_weights)
        grads.weight_grads.emplace_back(w.rows, w.cols);
    for (const Vector& b : model.layer_biases)
        grads.bias_grads.emplace_back(b.size(), 0.0);
    return grads;
}

void accumulate(ParamGrads& into, const ParamGrads& grads) {
    if (into.weight_grads.size() != grads.weight_grads.size())
        throw ShapeMismatch("accumulate: layer count mismatch");
    for (std::size_t l = 0; l < grads.weight_grads.size(); ++l) {
        if (!into.weight_grads[l].same_shape(grads.weight_grads[l]))
            throw ShapeMismatch("accumulate: weight shape mismatch");
        for (std::size_t i = 0; i < grads.weight_grads[l].data.size(); ++i)
            into.weight_grads[l].data[i] += grads.weight_grads[l].data[i];
        for (std::size_t i = 0; i < grads.bias_grads[l].size(); ++i)
            into.bias_grads[l][i] += grads.bias_grads[l][i];
    }
}

SiblingPair clone_siblings(const EmbeddingModel& base) {
    return SiblingPair{base, base};
}

bool models_equal(const EmbeddingModel& a, const EmbeddingModel& b) {
    if (a.layer_weights.size() != b.layer_weights.size()) return false;
    for (std::size_t l = 0; l < a.layer_weights.size(); ++l) {
        if (!a.layer_weights[l].same_shape(b.layer_weights[l])) return false;
        if (a.layer_weights[l].data != b.layer_weights[l].data) return false;
        if (a.layer_biases[l] != b.layer_biases[l]) return false;
    }
    return true;
}

void save_checkpoint(const EmbeddingModel& model, const std::filesystem::path& path) {
    ByteWriter w;
    w.put_magic("HVCKPT");
    w.put_u32(kCheckpointFormatVersion);
    w.put_u32(static_cast<std::uint32_t>(model.config.input_dim));
    w.put_u32(static_cast<std::uint32_t>(model.config.hidden_dims.size()));
    for (std::size_t d : model.config.hidden_dims)
        w.put_u32(static_cast<std::uint32_t>(d));
    w.put_u32(static_cast<std::uint32_t>(model.config.embedding_dim));
    w.put_u8(static_cast<std::uint8_t>(model.config.activation));
    w.put_u64(model.config.init_seed);
    w.mark_checksum_start();
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        for (double x : model.layer_weights[l].data) w.put_f64(x);
        for (double x : model.layer_biases[l]) w.put_f64(x);
    }
    const std::uint64_t checksum = w.checksum();
    w.put_u64(checksum);
    atomic_write_file(path, w.bytes());
}

EmbeddingModel load_checkpoint(const std::filesystem::path& path) {
    ByteReader r(read_file_bytes(path));
    r.expect_magic("HVCKPT");
    const std::uint32_t version = r.get_u32();
    if (version != kCheckpointFormatVersion)
        throw FormatVersionMismatch("checkpoint version " + std::to_string(version));

    ModelConfig config;
    config.input_dim = r.get_u32();
    const std::uint32_t num_hidden = r.get_u32();
    for (std::uint32_t i = 0; i < num_hidden; ++i) config.hidden_dims.push_back(r.get_u32());
    config.embedding_dim = r.get_u32();
    const std::uint8_t act = r.get_u8();
    if (act > 1) throw FormatVersionMismatch("checkpoint: unknown activation code");
    config.activation = static_cast<Activation>(act);
    config.init_seed = r.get_u64();

    EmbeddingModel model = init_model(config);
    r.mark_checksum_start();
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        for (double& x : model.layer_weights[l].data) x = r.get_f64();
        for (double& x : model.layer_biases[l]) x = r.get_f64();
    }
    const std::uint64_t expected = r.checksum_so_far();
    const std::uint64_t stored = r.get_u64();
    if (stored != expected) throw ChecksumMismatch("checkpoint: parameter checksum mismatch");
    return model;
}

} // namespace hv
