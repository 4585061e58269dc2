#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hv/eval.hpp"
#include "hv/synthdata.hpp"

namespace hv {

// Recipe for one domain transform: a seeded orthonormal-column matrix,
// optionally blended toward a second seeded matrix (a partial domain shift).
struct TransformBlend {
    std::uint64_t seed = 0;
    double alpha = 0.0;
};

struct SynthSpec {
    std::size_t num_subjects = 0;
    std::size_t latent_dim = 0;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::size_t samples_per_class = 1;
    double noise_sigma_source = 0.0;
    double noise_sigma_id = 0.0;
    double noise_sigma_selfie = 0.0;
    std::size_t selfies_min = 1;
    std::size_t selfies_max = 1;
    std::uint64_t id_transform_seed = 0;
    std::uint64_t selfie_transform_seed = 0;
    std::optional<TransformBlend> id_transform_blend;
    std::optional<TransformBlend> selfie_transform_blend;
    std::uint64_t seed = 0; // latent + noise streams
};

SynthConfig build_synth_config(const SynthSpec& spec);

struct LossSpec {
    std::string kind = "mps"; // "mps" | "am_softmax" | "l2_softmax"
    double margin = 5.0;      // AM-Softmax m
    double margin_mprime = 0.5;
    double init_scale = 10.0;
    double fixed_scale = 16.0;
};

struct EvalSpec {
    std::size_t k_folds = 5;
    std::vector<double> far_targets = {0.001, 0.01};
    std::size_t roc_points = 200;
};

// Parsed experiment configuration file (JSON, strict key set; unknown keys
// are rejected).
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::optional<SynthSpec> synth;
    std::optional<ModelConfig> model;
    std::optional<TrainConfig> train; // rng_seed filled from `seed`
    LossSpec loss;
    EvalSpec eval;
    std::optional<std::filesystem::path> out_dir;
    bool shared = false;
};

ExperimentConfig parse_experiment_config(const std::filesystem::path& path);

namespace cli {

struct GenDataArgs {
    std::filesystem::path config;
    std::filesystem::path out_dir; // empty: use config out_dir
};

struct PretrainArgs {
    std::filesystem::path config;
    std::filesystem::path data; // labeled dataset file
    std::filesystem::path out_dir;
};

struct FinetuneArgs {
    std::filesystem::path config;
    std::filesystem::path data; // pair dataset file
    std::filesystem::path out_dir;
    std::filesystem::path base; // base checkpoint, empty with from_scratch
    bool from_scratch = false;
    std::string loss;  // empty: config value
    bool shared = false;
    std::size_t train_size = 0; // 0 = full dataset
};

struct CrossvalArgs {
    std::filesystem::path config;
    std::filesystem::path data;
    std::filesystem::path out_dir;
    std::filesystem::path base;
    bool from_scratch = false;
    std::string loss;
    bool shared = false;
    std::size_t train_size = 0;
    long steps = -1; // override train.total_steps when >= 0
};

struct EvalArgs {
    std::filesystem::path config;
    std::filesystem::path data;
    std::filesystem::path out_dir;
    std::filesystem::path base;        // single checkpoint for both routes
    std::filesystem::path id_ckpt;     // or an explicit sibling pair
    std::filesystem::path selfie_ckpt;
};

// Each command returns a process exit status: 0 on success, 1 on error with
// a message on stderr. Outputs are written via temp + rename, so failures
// leave no partial files.
int cmd_gen_data(const GenDataArgs& args);
int cmd_pretrain(const PretrainArgs& args);
int cmd_finetune(const FinetuneArgs& args);
int cmd_crossval(const CrossvalArgs& args);
int cmd_eval(const EvalArgs& args);

} // namespace cli

} // namespace hv
