#include "hv/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "hv/binio.hpp"

namespace hv {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const char* where) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigInvalid("config: unknown key '" + item.key() + "' in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigInvalid(std::string("config: bad value for '") + key + "'");
    }
}

template <typename T>
T get_required(const json& obj, const char* key, const char* where) {
    if (!obj.contains(key))
        throw ConfigInvalid(std::string("config: missing key '") + key + "' in " + where);
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigInvalid(std::string("config: bad value for '") + key + "'");
    }
}

TransformBlend parse_blend(const json& obj, const char* where) {
    check_keys(obj, {"seed", "alpha"}, where);
    TransformBlend blend;
    blend.seed = get_required<std::uint64_t>(obj, "seed", where);
    blend.alpha = get_required<double>(obj, "alpha", where);
    if (blend.alpha < 0.0 || blend.alpha > 1.0)
        throw ConfigInvalid("config: blend alpha must be in [0, 1]");
    return blend;
}

SynthSpec parse_synth(const json& obj) {
    check_keys(obj,
               {"num_subjects", "latent_dim", "input_dim", "num_classes",
                "samples_per_class", "noise_sigma_source", "noise_sigma_id",
                "noise_sigma_selfie", "selfies_per_subject", "id_transform_seed",
                "selfie_transform_seed", "id_transform_blend",
                "selfie_transform_blend", "seed"},
               "synth");
    SynthSpec spec;
    spec.num_subjects = get_or<std::size_t>(obj, "num_subjects", 0);
    spec.latent_dim = get_required<std::size_t>(obj, "latent_dim", "synth");
    spec.input_dim = get_required<std::size_t>(obj, "input_dim", "synth");
    spec.num_classes = get_or<std::size_t>(obj, "num_classes", 0);
    spec.samples_per_class = get_or<std::size_t>(obj, "samples_per_class", 1);
    spec.noise_sigma_source = get_or<double>(obj, "noise_sigma_source", 0.0);
    spec.noise_sigma_id = get_or<double>(obj, "noise_sigma_id", 0.0);
    spec.noise_sigma_selfie = get_or<double>(obj, "noise_sigma_selfie", 0.0);
    if (obj.contains("selfies_per_subject")) {
        const auto range = obj.at("selfies_per_subject");
        if (!range.is_array() || range.size() != 2)
            throw ConfigInvalid("config: selfies_per_subject must be [min, max]");
        spec.selfies_min = range.at(0).get<std::size_t>();
        spec.selfies_max = range.at(1).get<std::size_t>();
    }
    spec.id_transform_seed = get_required<std::uint64_t>(obj, "id_transform_seed", "synth");
    spec.selfie_transform_seed =
        get_required<std::uint64_t>(obj, "selfie_transform_seed", "synth");
    if (obj.contains("id_transform_blend"))
        spec.id_transform_blend = parse_blend(obj.at("id_transform_blend"), "id_transform_blend");
    if (obj.contains("selfie_transform_blend"))
        spec.selfie_transform_blend =
            parse_blend(obj.at("selfie_transform_blend"), "selfie_transform_blend");
    spec.seed = get_required<std::uint64_t>(obj, "seed", "synth");
    return spec;
}

ModelConfig parse_model(const json& obj) {
    check_keys(obj, {"input_dim", "hidden_dims", "embedding_dim", "activation", "init_seed"},
               "model");
    ModelConfig config;
    config.input_dim = get_required<std::size_t>(obj, "input_dim", "model");
    config.hidden_dims = get_or<std::vector<std::size_t>>(obj, "hidden_dims", {});
    config.embedding_dim = get_required<std::size_t>(obj, "embedding_dim", "model");
    const std::string act = get_or<std::string>(obj, "activation", "relu");
    if (act == "relu") config.activation = Activation::Relu;
    else if (act == "tanh") config.activation = Activation::Tanh;
    else throw ConfigInvalid("config: activation must be 'relu' or 'tanh'");
    config.init_seed = get_required<std::uint64_t>(obj, "init_seed", "model");
    return config;
}

TrainConfig parse_train(const json& obj, std::uint64_t seed) {
    check_keys(obj,
               {"preset", "batch_size", "total_steps", "lr_schedule", "momentum",
                "weight_decay", "log_every", "freeze_prefix"},
               "train");
    TrainConfig config;
    if (obj.contains("preset")) {
        const std::string preset = obj.at("preset").get<std::string>();
        if (preset == "paper-stage1") config = paper_stage1_preset(seed);
        else if (preset == "paper-stage2") config = paper_stage2_preset(seed);
        else throw ConfigInvalid("config: unknown train preset '" + preset + "'");
    }
    config.rng_seed = seed;
    config.batch_size = get_or<std::size_t>(obj, "batch_size", config.batch_size);
    config.total_steps = get_or<std::size_t>(obj, "total_steps", config.total_steps);
    if (obj.contains("lr_schedule")) {
        config.lr_schedule.clear();
        for (const auto& entry : obj.at("lr_schedule")) {
            if (!entry.is_array() || entry.size() != 2)
                throw ConfigInvalid("config: lr_schedule entries must be [step, lr]");
            config.lr_schedule.push_back(
                LrEntry{entry.at(0).get<std::size_t>(), entry.at(1).get<double>()});
        }
    }
    config.momentum = get_or<double>(obj, "momentum", config.momentum);
    config.weight_decay = get_or<double>(obj, "weight_decay", config.weight_decay);
    config.log_every = get_or<std::size_t>(obj, "log_every", config.log_every);
    config.freeze_prefix = get_or<std::size_t>(obj, "freeze_prefix", config.freeze_prefix);
    return config;
}

LossSpec parse_loss(const json& obj) {
    check_keys(obj, {"kind", "margin", "margin_mprime", "init_scale", "fixed_scale"},
               "loss");
    LossSpec spec;
    spec.kind = get_or<std::string>(obj, "kind", spec.kind);
    if (spec.kind != "mps" && spec.kind != "am_softmax" && spec.kind != "l2_softmax")
        throw ConfigInvalid("config: loss kind must be mps, am_softmax or l2_softmax");
    spec.margin = get_or<double>(obj, "margin", spec.margin);
    spec.margin_mprime = get_or<double>(obj, "margin_mprime", spec.margin_mprime);
    spec.init_scale = get_or<double>(obj, "init_scale", spec.init_scale);
    spec.fixed_scale = get_or<double>(obj, "fixed_scale", spec.fixed_scale);
    return spec;
}

EvalSpec parse_eval(const json& obj) {
    check_keys(obj, {"k_folds", "far_targets", "roc_points"}, "eval");
    EvalSpec spec;
    spec.k_folds = get_or<std::size_t>(obj, "k_folds", spec.k_folds);
    spec.far_targets = get_or<std::vector<double>>(obj, "far_targets", spec.far_targets);
    spec.roc_points = get_or<std::size_t>(obj, "roc_points", spec.roc_points);
    if (spec.far_targets.empty())
        throw ConfigInvalid("config: far_targets must be non-empty");
    return spec;
}

} // namespace

SynthConfig build_synth_config(const SynthSpec& spec) {
    SynthConfig config;
    config.num_subjects = spec.num_subjects;
    config.latent_dim = spec.latent_dim;
    config.input_dim = spec.input_dim;
    config.num_classes = spec.num_classes;
    config.samples_per_class = spec.samples_per_class;
    config.noise_sigma_source = spec.noise_sigma_source;
    config.noise_sigma_id = spec.noise_sigma_id;
    config.noise_sigma_selfie = spec.noise_sigma_selfie;
    config.selfies_min = spec.selfies_min;
    config.selfies_max = spec.selfies_max;
    config.rng_seed = spec.seed;

    const auto make_transform = [&](std::uint64_t seed,
                                    const std::optional<TransformBlend>& blend) {
        Rng rng(seed);
        Matrix t = random_orthonormal_columns(spec.input_dim, spec.latent_dim, rng);
        if (blend) {
            Rng blend_rng(blend->seed);
            const Matrix other =
                random_orthonormal_columns(spec.input_dim, spec.latent_dim, blend_rng);
            t = blend_transforms(t, other, blend->alpha);
        }
        return t;
    };
    config.id_domain_transform =
        make_transform(spec.id_transform_seed, spec.id_transform_blend);
    config.selfie_domain_transform =
        make_transform(spec.selfie_transform_seed, spec.selfie_transform_blend);
    return config;
}

ExperimentConfig parse_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open config: " + path.string());
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigInvalid("config: parse error: " + std::string(e.what()));
    }
    if (!root.is_object()) throw ConfigInvalid("config: top level must be an object");
    check_keys(root, {"seed", "synth", "model", "train", "loss", "eval", "out_dir", "shared"},
               "top level");

    ExperimentConfig config;
    config.seed = get_or<std::uint64_t>(root, "seed", 0);
    if (root.contains("synth")) config.synth = parse_synth(root.at("synth"));
    if (root.contains("model")) config.model = parse_model(root.at("model"));
    if (root.contains("train")) config.train = parse_train(root.at("train"), config.seed);
    if (root.contains("loss")) config.loss = parse_loss(root.at("loss"));
    if (root.contains("eval")) config.eval = parse_eval(root.at("eval"));
    if (root.contains("out_dir"))
        config.out_dir = std::filesystem::path(root.at("out_dir").get<std::string>());
    config.shared = get_or<bool>(root, "shared", false);
    return config;
}

namespace cli {

namespace {

std::filesystem::path resolve_out_dir(const std::filesystem::path& flag_dir,
                                      const ExperimentConfig& config) {
    if (!flag_dir.empty()) return flag_dir;
    if (config.out_dir) return *config.out_dir;
    throw ConfigInvalid("no output directory: pass --out-dir or set out_dir in the config");
}

void require_input_file(const std::filesystem::path& path, const char* what) {
    if (path.empty())
        throw ConfigInvalid(std::string(what) + ": no path given");
    if (!std::filesystem::exists(path))
        throw IoFailure(std::string(what) + " not found: " + path.string());
}

const SynthSpec& require_synth(const ExperimentConfig& config) {
    if (!config.synth) throw ConfigInvalid("config: missing 'synth' section");
    return *config.synth;
}

const ModelConfig& require_model(const ExperimentConfig& config) {
    if (!config.model) throw ConfigInvalid("config: missing 'model' section");
    return *config.model;
}

const TrainConfig& require_train(const ExperimentConfig& config) {
    if (!config.train) throw ConfigInvalid("config: missing 'train' section");
    return *config.train;
}

int run_command(const char* name, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << name << ": error: " << e.what() << "\n";
        return 1;
    }
}

std::string resolve_loss_kind(const std::string& flag, const ExperimentConfig& config) {
    if (flag.empty()) return config.loss.kind;
    if (flag != "mps" && flag != "am_softmax" && flag != "l2_softmax")
        throw ConfigInvalid("--loss must be mps, am_softmax or l2_softmax");
    return flag;
}

// Seeded subset of a pair dataset, original subject order preserved.
PairDataset subset_pairs(const PairDataset& dataset, std::size_t size, Rng rng) {
    if (size > dataset.size())
        throw TooFewSubjects("--train-size exceeds the dataset subject count");
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < size; ++i) {
        const std::size_t j = i + rng.uniform_index(order.size() - i);
        std::swap(order[i], order[j]);
    }
    order.resize(size);
    std::sort(order.begin(), order.end());
    PairDataset subset;
    for (std::size_t idx : order) subset.pairs.push_back(dataset.pairs[idx]);
    return subset;
}

ClassifierFinetuneConfig classifier_config(const LossSpec& loss, const std::string& kind) {
    ClassifierFinetuneConfig clf;
    clf.loss = kind == "am_softmax" ? ClassifierLoss::AmSoftmax : ClassifierLoss::L2Softmax;
    clf.margin = loss.margin;
    clf.init_scale = loss.init_scale;
    clf.fixed_scale = loss.fixed_scale;
    return clf;
}

} // namespace

int cmd_gen_data(const GenDataArgs& args) {
    return run_command("gen-data", [&] {
        require_input_file(args.config, "config");
        const ExperimentConfig config = parse_experiment_config(args.config);
        const std::filesystem::path out_dir = resolve_out_dir(args.out_dir, config);
        const SynthSpec& spec = require_synth(config);
        const SynthConfig synth = build_synth_config(spec);

        if (spec.num_classes < 2 && spec.num_subjects < 2)
            throw ConfigInvalid("synth: nothing to generate (need num_classes or num_subjects)");

        if (spec.num_classes >= 2) {
            const LabeledDataset source = gen_source_dataset(synth);
            const auto path = out_dir / "source.hvdata";
            save_dataset(source, path);
            std::printf("source: %zu classes, %zu samples -> %s\n", source.num_classes,
                        source.size(), path.string().c_str());
        }
        if (spec.num_subjects >= 2) {
            const PairDataset pairs = gen_pair_dataset(synth);
            std::size_t images = 0;
            for (const auto& p : pairs.pairs) images += 1 + p.selfie_inputs.size();
            const auto path = out_dir / "pairs.hvdata";
            save_dataset(pairs, path);
            std::printf("pairs: %zu subjects, %zu images -> %s\n", pairs.size(), images,
                        path.string().c_str());
        }
    });
}

int cmd_pretrain(const PretrainArgs& args) {
    return run_command("pretrain", [&] {
        require_input_file(args.config, "config");
        require_input_file(args.data, "dataset");
        const ExperimentConfig config = parse_experiment_config(args.config);
        const std::filesystem::path out_dir = resolve_out_dir(args.out_dir, config);
        const TrainConfig& train = require_train(config);

        const LabeledDataset dataset = load_labeled_dataset(args.data);
        EmbeddingModel model = init_model(require_model(config));
        AMSoftmaxHead head = make_am_softmax_head(
            model.config.embedding_dim, dataset.num_classes, config.loss.margin,
            config.loss.init_scale, Rng(config.seed).child(2).seed());

        PretrainResult result = pretrain(std::move(model), std::move(head), dataset, train);
        save_checkpoint(result.model, out_dir / "base.hvckpt");
        write_trace_csv(out_dir / "pretrain_loss.csv", result.trace);
        std::printf("pretrained %zu steps on %zu samples (%zu classes) -> %s\n",
                    train.total_steps, dataset.size(), dataset.num_classes,
                    (out_dir / "base.hvckpt").string().c_str());
    });
}

namespace {

EmbeddingModel load_or_init_base(const ExperimentConfig& config,
                                 const std::filesystem::path& base_path,
                                 bool from_scratch) {
    if (from_scratch) {
        if (!base_path.empty())
            throw ConfigInvalid("--from-scratch and --base are mutually exclusive");
        return init_model(require_model(config));
    }
    require_input_file(base_path, "base checkpoint");
    return load_checkpoint(base_path);
}

} // namespace

int cmd_finetune(const FinetuneArgs& args) {
    return run_command("finetune", [&] {
        require_input_file(args.config, "config");
        require_input_file(args.data, "dataset");
        const ExperimentConfig config = parse_experiment_config(args.config);
        const std::filesystem::path out_dir = resolve_out_dir(args.out_dir, config);
        const TrainConfig& train = require_train(config);
        const std::string kind = resolve_loss_kind(args.loss, config);
        const bool shared = args.shared || config.shared;

        PairDataset dataset = load_pair_dataset(args.data);
        if (args.train_size > 0)
            dataset = subset_pairs(dataset, args.train_size, Rng(config.seed).child(0x5B5E7));

        const EmbeddingModel base = load_or_init_base(config, args.base, args.from_scratch);

        FinetuneResult result;
        if (kind == "mps") {
            result = finetune(base, dataset, train, MPSConfig{config.loss.margin_mprime},
                              shared);
        } else {
            result = finetune_classification(base, dataset, train,
                                             classifier_config(config.loss, kind), shared);
        }
        save_checkpoint(result.siblings.id_model, out_dir / "id.hvckpt");
        save_checkpoint(result.siblings.selfie_model, out_dir / "selfie.hvckpt");
        write_trace_csv(out_dir / "finetune_loss.csv", result.trace);
        std::printf("fine-tuned %zu steps (%s, %s) on %zu subjects -> %s\n",
                    train.total_steps, kind.c_str(), shared ? "shared" : "siblings",
                    dataset.size(), out_dir.string().c_str());
    });
}

int cmd_crossval(const CrossvalArgs& args) {
    return run_command("crossval", [&] {
        require_input_file(args.config, "config");
        require_input_file(args.data, "dataset");
        const ExperimentConfig config = parse_experiment_config(args.config);
        const std::filesystem::path out_dir = resolve_out_dir(args.out_dir, config);
        TrainConfig train = require_train(config);
        if (args.steps >= 0) train.total_steps = static_cast<std::size_t>(args.steps);
        const std::string kind = resolve_loss_kind(args.loss, config);

        const PairDataset dataset = load_pair_dataset(args.data);
        const EmbeddingModel base = load_or_init_base(config, args.base, args.from_scratch);

        CrossValOptions options;
        options.mode = kind == "mps"          ? FinetuneMode::Mps
                       : kind == "am_softmax" ? FinetuneMode::AmSoftmax
                                              : FinetuneMode::L2Softmax;
        options.share_weights = args.shared || config.shared;
        options.classifier = classifier_config(config.loss, kind);
        options.train_size = args.train_size;
        options.num_roc_points = config.eval.roc_points;

        const EvalReport report =
            cross_validate(dataset, base, train, MPSConfig{config.loss.margin_mprime},
                           config.eval.k_folds, config.eval.far_targets, options);

        char header[160];
        std::snprintf(header, sizeof(header),
                      "k-folds: %zu, subjects: %zu, loss: %s, %s, train-size: %zu\n",
                      config.eval.k_folds, dataset.size(), kind.c_str(),
                      options.share_weights ? "shared" : "siblings", args.train_size);
        const std::string text = header + render_report_text(report);
        atomic_write_text(out_dir / "crossval_report.txt", text);
        write_roc_csv(out_dir / "crossval_roc.csv", report.roc_points);
        std::fputs(text.c_str(), stdout);
    });
}

int cmd_eval(const EvalArgs& args) {
    return run_command("eval", [&] {
        require_input_file(args.config, "config");
        require_input_file(args.data, "dataset");
        const ExperimentConfig config = parse_experiment_config(args.config);
        const std::filesystem::path out_dir = resolve_out_dir(args.out_dir, config);

        SiblingPair siblings = [&] {
            if (!args.base.empty()) {
                if (!args.id_ckpt.empty() || !args.selfie_ckpt.empty())
                    throw ConfigInvalid("--base and --id-ckpt/--selfie-ckpt are exclusive");
                require_input_file(args.base, "base checkpoint");
                return clone_siblings(load_checkpoint(args.base));
            }
            require_input_file(args.id_ckpt, "id checkpoint");
            require_input_file(args.selfie_ckpt, "selfie checkpoint");
            return SiblingPair{load_checkpoint(args.id_ckpt),
                               load_checkpoint(args.selfie_ckpt)};
        }();

        const PairDataset dataset = load_pair_dataset(args.data);
        std::size_t fused = 0;
        for (const auto& p : dataset.pairs)
            if (p.selfie_inputs.size() > 1) ++fused;

        const EvalReport report = evaluate_pairs(dataset, siblings,
                                                 config.eval.far_targets,
                                                 config.eval.roc_points);
        char header[160];
        std::snprintf(header, sizeof(header),
                      "subjects: %zu\nmulti-selfie subjects (fused probes): %zu\n",
                      dataset.size(), fused);
        const std::string text = header + render_report_text(report);
        atomic_write_text(out_dir / "eval_report.txt", text);
        write_roc_csv(out_dir / "eval_roc.csv", report.roc_points);
        std::fputs(text.c_str(), stdout);
    });
}

} // namespace cli

} // namespace hv
