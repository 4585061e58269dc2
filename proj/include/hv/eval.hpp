#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hv/model.hpp"
#include "hv/trainer.hpp"

namespace hv {

struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> impostor;
};

struct VrEntry {
    double vr = 0.0;
    double threshold = 0.0;
};

struct RocPoint {
    double far = 0.0;
    double tar = 0.0;
};

struct TargetFoldStats {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation across folds
    std::vector<double> per_fold;
};

// Single-evaluation reports fill vr_at_far; cross-validation reports fill
// fold_stats (and pool the per-fold scores for the ROC).
struct EvalReport {
    std::map<double, VrEntry> vr_at_far;
    std::vector<RocPoint> roc_points;
    std::optional<std::map<double, TargetFoldStats>> fold_stats;
};

struct FoldSplit {
    std::size_t k = 0;
    std::vector<std::size_t> assignments; // subject index -> fold index
};

struct SubjectEmbeddings {
    EmbeddingVector id;
    std::vector<EmbeddingVector> selfies;
    std::uint64_t subject_id = 0;
};

// ID inputs pass through the id model only, selfies through the selfie model.
std::vector<SubjectEmbeddings> embed_dataset(const PairDataset& dataset,
                                             const SiblingPair& siblings);

// Elementwise mean, re-normalized to unit length.
EmbeddingVector fuse_selfies(const std::vector<EmbeddingVector>& embeddings);

// Genuine: cos(g_i, h_i) for every subject. Impostor: cos(g_i, h_j) for every
// ordered pair i != j (templates x probes), N*(N-1) scores.
ScoreSet score_protocol(const std::vector<EmbeddingVector>& id_embeddings,
                        const std::vector<EmbeddingVector>& selfie_embeddings);

// Embed, fuse multi-selfie subjects, and run the template/probe protocol.
ScoreSet score_dataset(const PairDataset& dataset, const SiblingPair& siblings);

// Smallest threshold t with (count of impostor >= t)/|impostor| <= far_target;
// acceptance is score >= t. Candidates are the impostor scores, one ulp above
// the largest impostor score (false accept rate 0), and -infinity (selected
// only when far_target = 1, where accepting everything is allowed).
VrEntry vr_at_far(const ScoreSet& scores, double far_target);

// (FAR, TAR) at one ulp above the overall max score and at every unique score
// threshold, ordered by increasing FAR, downsampled to num_points.
std::vector<RocPoint> roc_curve(const ScoreSet& scores, std::size_t num_points);

// Seeded random permutation split into k folds whose sizes differ by at most
// one, larger folds first.
FoldSplit kfold_split(std::size_t num_subjects, std::size_t k, Rng& rng);

EvalReport report_from_scores(const ScoreSet& scores,
                              const std::vector<double>& far_targets,
                              std::size_t num_roc_points);

EvalReport evaluate_pairs(const PairDataset& dataset, const SiblingPair& siblings,
                          const std::vector<double>& far_targets,
                          std::size_t num_roc_points = 200);

enum class FinetuneMode { Mps, AmSoftmax, L2Softmax };

struct CrossValOptions {
    FinetuneMode mode = FinetuneMode::Mps;
    bool share_weights = false;
    ClassifierFinetuneConfig classifier; // used by the classification modes
    std::size_t train_size = 0;          // 0 = full training split per fold
    std::size_t num_roc_points = 200;
};

// Per fold: fine-tune `base` on the other k-1 folds (seed = config seed +
// fold index) and evaluate the held-out fold. fold_stats carries per-target
// mean and sample standard deviation.
EvalReport cross_validate(const PairDataset& dataset, const EmbeddingModel& base,
                          const TrainConfig& train_config, const MPSConfig& mps_config,
                          std::size_t k, const std::vector<double>& far_targets,
                          const CrossValOptions& options = {});

// Text table: one row per FAR target for single evaluations, one row per fold
// plus a mean +- std row for cross-validation reports.
std::string render_report_text(const EvalReport& report);

// CSV of roc_points: "far,tar", 6 decimal places.
void write_roc_csv(const std::filesystem::path& path,
                   const std::vector<RocPoint>& roc_points);

} // namespace hv
