#include "hv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "hv/binio.hpp"

namespace hv {

namespace {

void validate_scores(const ScoreSet& scores) {
    if (scores.genuine.empty() || scores.impostor.empty())
        throw EmptyScores("score set: genuine and impostor must be non-empty");
    for (double s : scores.genuine)
        if (!std::isfinite(s)) throw NonFiniteValue("score set: non-finite genuine score");
    for (double s : scores.impostor)
        if (!std::isfinite(s)) throw NonFiniteValue("score set: non-finite impostor score");
}

// count of values >= t in an ascending-sorted vector
std::size_t count_at_least(const std::vector<double>& sorted_asc, double t) {
    return static_cast<std::size_t>(sorted_asc.end() -
                                    std::lower_bound(sorted_asc.begin(), sorted_asc.end(), t));
}

} // namespace

std::vector<SubjectEmbeddings> embed_dataset(const PairDataset& dataset,
                                             const SiblingPair& siblings) {
    validate_pair_dataset(dataset);
    std::vector<SubjectEmbeddings> out;
    out.reserve(dataset.size());
    for (const PairSubject& subject : dataset.pairs) {
        SubjectEmbeddings e{embed(siblings.id_model, subject.id_input), {}, subject.subject_id};
        e.selfies.reserve(subject.selfie_inputs.size());
        for (const Vector& s : subject.selfie_inputs)
            e.selfies.push_back(embed(siblings.selfie_model, s));
        out.push_back(std::move(e));
    }
    return out;
}

EmbeddingVector fuse_selfies(const std::vector<EmbeddingVector>& embeddings) {
    if (embeddings.empty()) throw InvalidArgument("fuse_selfies: empty input");
    const std::size_t d = embeddings.front().dim();
    Vector mean(d, 0.0);
    for (const EmbeddingVector& e : embeddings) {
        if (e.dim() != d) throw DimMismatch("fuse_selfies: dim mismatch");
        for (std::size_t i = 0; i < d; ++i) mean[i] += e[i];
    }
    for (double& x : mean) x /= static_cast<double>(embeddings.size());
    return l2_normalize(mean).unit;
}

ScoreSet score_protocol(const std::vector<EmbeddingVector>& id_embeddings,
                        const std::vector<EmbeddingVector>& selfie_embeddings) {
    const std::size_t n = id_embeddings.size();
    if (n != selfie_embeddings.size())
        throw DimMismatch("score_protocol: id/selfie count mismatch");
    if (n < 2) throw TooFewSubjects("score_protocol: needs at least 2 subjects");

    ScoreSet scores;
    scores.genuine.reserve(n);
    scores.impostor.reserve(n * (n - 1));
    for (std::size_t i = 0; i < n; ++i) {
        scores.genuine.push_back(cosine_similarity(id_embeddings[i], selfie_embeddings[i]));
        for (std::size_t j = 0; j < n; ++j)
            if (j != i)
                scores.impostor.push_back(
                    cosine_similarity(id_embeddings[i], selfie_embeddings[j]));
    }
    return scores;
}

ScoreSet score_dataset(const PairDataset& dataset, const SiblingPair& siblings) {
    const auto embedded = embed_dataset(dataset, siblings);
    std::vector<EmbeddingVector> ids, probes;
    ids.reserve(embedded.size());
    probes.reserve(embedded.size());
    for (const SubjectEmbeddings& e : embedded) {
        ids.push_back(e.id);
        probes.push_back(fuse_selfies(e.selfies));
    }
    return score_protocol(ids, probes);
}

VrEntry vr_at_far(const ScoreSet& scores, double far_target) {
    validate_scores(scores);
    if (!(far_target > 0.0) || far_target > 1.0)
        throw InvalidArgument("vr_at_far: far_target must be in (0, 1]");

    std::vector<double> imp = scores.impostor;
    std::sort(imp.begin(), imp.end());
    std::vector<double> gen = scores.genuine;
    std::sort(gen.begin(), gen.end());
    const double ni = static_cast<double>(imp.size());

    double threshold = std::numeric_limits<double>::quiet_NaN();
    if (far_target >= 1.0) {
        threshold = -std::numeric_limits<double>::infinity();
    } else {
        bool found = false;
        for (std::size_t i = 0; i < imp.size(); ++i) {
            if (i > 0 && imp[i] == imp[i - 1]) continue; // unique values only
            const double far = static_cast<double>(imp.size() - i) / ni;
            if (far <= far_target) {
                threshold = imp[i];
                found = true;
                break;
            }
        }
        if (!found)
            threshold = std::nextafter(imp.back(), std::numeric_limits<double>::infinity());
    }

    const double vr =
        static_cast<double>(count_at_least(gen, threshold)) / static_cast<double>(gen.size());
    return VrEntry{vr, threshold};
}

std::vector<RocPoint> roc_curve(const ScoreSet& scores, std::size_t num_points) {
    validate_scores(scores);
    if (num_points < 2) throw InvalidArgument("roc_curve: num_points must be >= 2");

    std::vector<double> gen = scores.genuine;
    std::vector<double> imp = scores.impostor;
    std::sort(gen.begin(), gen.end());
    std::sort(imp.begin(), imp.end());

    std::vector<double> thresholds;
    thresholds.reserve(gen.size() + imp.size() + 1);
    thresholds.insert(thresholds.end(), gen.begin(), gen.end());
    thresholds.insert(thresholds.end(), imp.begin(), imp.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    // Anchor above every score: (FAR, TAR) = (0, 0).
    thresholds.insert(thresholds.begin(),
                      std::nextafter(thresholds.front(), std::numeric_limits<double>::infinity()));

    std::vector<RocPoint> full;
    full.reserve(thresholds.size());
    for (double t : thresholds) {
        const double far = static_cast<double>(count_at_least(imp, t)) /
                           static_cast<double>(imp.size());
        const double tar = static_cast<double>(count_at_least(gen, t)) /
                           static_cast<double>(gen.size());
        full.push_back(RocPoint{far, tar});
    }

    if (full.size() <= num_points) return full;
    std::vector<RocPoint> sampled;
    sampled.reserve(num_points);
    for (std::size_t i = 0; i < num_points; ++i) {
        const std::size_t idx = i * (full.size() - 1) / (num_points - 1);
        sampled.push_back(full[idx]);
    }
    return sampled;
}

FoldSplit kfold_split(std::size_t num_subjects, std::size_t k, Rng& rng) {
    if (k < 2) throw BadK("kfold_split: k must be >= 2");
    if (num_subjects < k) throw BadK("kfold_split: fewer subjects than folds");

    std::vector<std::size_t> order(num_subjects);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const std::size_t j = i + rng.uniform_index(order.size() - i);
        std::swap(order[i], order[j]);
    }

    FoldSplit split;
    split.k = k;
    split.assignments.assign(num_subjects, 0);
    const std::size_t base_size = num_subjects / k;
    const std::size_t remainder = num_subjects % k;
    std::size_t pos = 0;
    for (std::size_t fold = 0; fold < k; ++fold) {
        const std::size_t size = base_size + (fold < remainder ? 1 : 0);
        for (std::size_t i = 0; i < size; ++i) split.assignments[order[pos++]] = fold;
    }
    return split;
}

EvalReport report_from_scores(const ScoreSet& scores,
                              const std::vector<double>& far_targets,
                              std::size_t num_roc_points) {
    EvalReport report;
    for (double far : far_targets) report.vr_at_far[far] = vr_at_far(scores, far);
    report.roc_points = roc_curve(scores, num_roc_points);
    return report;
}

EvalReport evaluate_pairs(const PairDataset& dataset, const SiblingPair& siblings,
                          const std::vector<double>& far_targets,
                          std::size_t num_roc_points) {
    return report_from_scores(score_dataset(dataset, siblings), far_targets,
                              num_roc_points);
}

EvalReport cross_validate(const PairDataset& dataset, const EmbeddingModel& base,
                          const TrainConfig& train_config, const MPSConfig& mps_config,
                          std::size_t k, const std::vector<double>& far_targets,
                          const CrossValOptions& options) {
    validate_pair_dataset(dataset);
    Rng split_rng = Rng(train_config.rng_seed).child(0xF01D);
    const FoldSplit split = kfold_split(dataset.size(), k, split_rng);

    std::map<double, TargetFoldStats> stats;
    for (double far : far_targets) stats[far] = TargetFoldStats{};
    ScoreSet pooled;

    for (std::size_t fold = 0; fold < k; ++fold) {
        PairDataset train_split, test_split;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            if (split.assignments[i] == fold) test_split.pairs.push_back(dataset.pairs[i]);
            else train_split.pairs.push_back(dataset.pairs[i]);
        }

        TrainConfig fold_config = train_config;
        fold_config.rng_seed = train_config.rng_seed + fold;

        if (options.train_size > 0) {
            if (options.train_size > train_split.size())
                throw TooFewSubjects("cross_validate: train_size exceeds training split");
            Rng subset_rng = Rng(fold_config.rng_seed).child(0x5B5E7);
            std::vector<std::size_t> order(train_split.size());
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = 0; i < options.train_size; ++i) {
                const std::size_t j = i + subset_rng.uniform_index(order.size() - i);
                std::swap(order[i], order[j]);
            }
            order.resize(options.train_size);
            std::sort(order.begin(), order.end());
            PairDataset subset;
            for (std::size_t idx : order) subset.pairs.push_back(train_split.pairs[idx]);
            train_split = std::move(subset);
        }

        FinetuneResult result;
        switch (options.mode) {
        case FinetuneMode::Mps:
            result = finetune(base, train_split, fold_config, mps_config,
                              options.share_weights);
            break;
        case FinetuneMode::AmSoftmax:
        case FinetuneMode::L2Softmax: {
            ClassifierFinetuneConfig clf = options.classifier;
            clf.loss = options.mode == FinetuneMode::AmSoftmax ? ClassifierLoss::AmSoftmax
                                                               : ClassifierLoss::L2Softmax;
            result = finetune_classification(base, train_split, fold_config, clf,
                                             options.share_weights);
            break;
        }
        }

        const ScoreSet fold_scores = score_dataset(test_split, result.siblings);
        pooled.genuine.insert(pooled.genuine.end(), fold_scores.genuine.begin(),
                              fold_scores.genuine.end());
        pooled.impostor.insert(pooled.impostor.end(), fold_scores.impostor.begin(),
                               fold_scores.impostor.end());
        for (double far : far_targets)
            stats[far].per_fold.push_back(vr_at_far(fold_scores, far).vr);
    }

    for (auto& [far, s] : stats) {
        const double n = static_cast<double>(s.per_fold.size());
        s.mean = std::accumulate(s.per_fold.begin(), s.per_fold.end(), 0.0) / n;
        double var = 0.0;
        for (double v : s.per_fold) var += (v - s.mean) * (v - s.mean);
        s.stddev = n > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    }

    EvalReport report;
    report.fold_stats = std::move(stats);
    report.roc_points = roc_curve(pooled, options.num_roc_points);
    return report;
}

namespace {

std::string format_far_header(double far) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "VR(%%) @FAR=%.4f%%", far * 100.0);
    return buf;
}

} // namespace

std::string render_report_text(const EvalReport& report) {
    std::string text;
    char buf[160];
    if (report.fold_stats) {
        const auto& stats = *report.fold_stats;
        text += "fold            ";
        for (const auto& [far, s] : stats) {
            std::snprintf(buf, sizeof(buf), "%-24s", format_far_header(far).c_str());
            text += buf;
        }
        text += "\n";
        const std::size_t folds = stats.empty() ? 0 : stats.begin()->second.per_fold.size();
        for (std::size_t f = 0; f < folds; ++f) {
            std::snprintf(buf, sizeof(buf), "%-16zu", f + 1);
            text += buf;
            for (const auto& [far, s] : stats) {
                std::snprintf(buf, sizeof(buf), "%-24.4f", s.per_fold[f] * 100.0);
                text += buf;
            }
            text += "\n";
        }
        text += "mean +- std     ";
        for (const auto& [far, s] : stats) {
            char cell[64];
            std::snprintf(cell, sizeof(cell), "%.4f +- %.4f", s.mean * 100.0,
                          s.stddev * 100.0);
            std::snprintf(buf, sizeof(buf), "%-24s", cell);
            text += buf;
        }
        text += "\n";
    } else {
        text += "FAR target      VR(%)           threshold\n";
        for (const auto& [far, entry] : report.vr_at_far) {
            char far_cell[32];
            std::snprintf(far_cell, sizeof(far_cell), "%.4f%%", far * 100.0);
            std::snprintf(buf, sizeof(buf), "%-16s%-16.4f%.6f\n", far_cell,
                          entry.vr * 100.0, entry.threshold);
            text += buf;
        }
    }
    return text;
}

void write_roc_csv(const std::filesystem::path& path,
                   const std::vector<RocPoint>& roc_points) {
    std::string text = "far,tar\n";
    char line[64];
    for (const RocPoint& p : roc_points) {
        std::snprintf(line, sizeof(line), "%.6f,%.6f\n", p.far, p.tar);
        text += line;
    }
    atomic_write_text(path, text);
}

} // namespace hv
