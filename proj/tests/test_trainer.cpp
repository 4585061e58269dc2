#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "hv/synthdata.hpp"
#include "hv/trainer.hpp"
#include "test_util.hpp"

using namespace hv;

namespace {

TrainConfig toy_config(std::size_t steps, double lr, std::uint64_t seed,
                       std::size_t batch = 16) {
    TrainConfig config;
    config.batch_size = batch;
    config.total_steps = steps;
    config.lr_schedule = {{0, lr}};
    config.momentum = 0.9;
    config.weight_decay = 5e-4;
    config.rng_seed = seed;
    config.log_every = 1;
    return config;
}

ModelConfig toy_model_config(std::size_t dim, std::uint64_t seed) {
    ModelConfig config;
    config.input_dim = dim;
    config.hidden_dims = {12};
    config.embedding_dim = dim;
    config.activation = Activation::Tanh;
    config.init_seed = seed;
    return config;
}

SynthConfig separable_synth(std::size_t dim, std::size_t classes, std::uint64_t seed) {
    SynthConfig config;
    config.latent_dim = dim;
    config.input_dim = dim;
    config.num_classes = classes;
    config.samples_per_class = 20;
    config.id_domain_transform = identity_transform(dim, dim);
    config.selfie_domain_transform = identity_transform(dim, dim);
    config.noise_sigma_source = 0.05;
    config.rng_seed = seed;
    return config;
}

double mean_loss(const std::vector<TraceRow>& trace, std::size_t from, std::size_t to) {
    double total = 0.0;
    std::size_t n = 0;
    for (const TraceRow& row : trace)
        if (row.step >= from && row.step < to) {
            total += row.loss;
            ++n;
        }
    return total / static_cast<double>(n);
}

} // namespace

TEST_CASE("lr_at follows the published stage-1 schedule") {
    const TrainConfig config = paper_stage1_preset(1);
    CHECK(lr_at(config, 0) == doctest::Approx(0.1));
    CHECK(lr_at(config, 159999) == doctest::Approx(0.1));
    CHECK(lr_at(config, 160000) == doctest::Approx(0.01));
    CHECK(lr_at(config, 239999) == doctest::Approx(0.01));
    CHECK(lr_at(config, 240000) == doctest::Approx(0.001));
    CHECK(lr_at(config, 279999) == doctest::Approx(0.001));
    CHECK_THROWS_AS(lr_at(config, 280000), StepOutOfRange);
}

TEST_CASE("published presets carry the stated hyperparameters") {
    const TrainConfig s1 = paper_stage1_preset(0);
    CHECK(s1.batch_size == 256);
    CHECK(s1.total_steps == 280000);
    CHECK(s1.momentum == doctest::Approx(0.9));
    CHECK(s1.weight_decay == doctest::Approx(5e-4));

    const TrainConfig s2 = paper_stage2_preset(0);
    CHECK(s2.batch_size == 256);
    CHECK(s2.total_steps == 800);
    REQUIRE(s2.lr_schedule.size() == 2);
    CHECK(s2.lr_schedule[0].learning_rate == doctest::Approx(0.01));
    CHECK(s2.lr_schedule[1].step_threshold == 500);
    CHECK(s2.lr_schedule[1].learning_rate == doctest::Approx(0.001));

    CHECK(kPaperMarginM == doctest::Approx(5.0));
    CHECK(kPaperMarginMPrime == doctest::Approx(0.5));
}

TEST_CASE("sgd_step arithmetic") {
    {
        std::vector<double> p{1.0}, v{0.0};
        const std::vector<double> g{0.5};
        sgd_step(p, g, v, 0.1, 0.0, 0.0);
        CHECK(p[0] == doctest::Approx(0.95));
    }
    {
        std::vector<double> p{1.0}, v{1.0};
        const std::vector<double> g{0.0};
        sgd_step(p, g, v, 0.1, 0.9, 0.0);
        CHECK(v[0] == doctest::Approx(0.9));
        CHECK(p[0] == doctest::Approx(0.91));
    }
    {
        // zero step size: parameters unchanged, velocity still updated
        std::vector<double> p{2.0}, v{0.0};
        const std::vector<double> g{1.5};
        sgd_step(p, g, v, 0.0, 0.5, 0.0);
        CHECK(p[0] == 2.0);
        CHECK(v[0] == doctest::Approx(1.5));
    }
    {
        // with zero momentum and decay this is vanilla gradient descent
        Rng rng(3);
        std::vector<double> p{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        std::vector<double> expected = p;
        std::vector<double> v{0.0, 0.0};
        for (int i = 0; i < 5; ++i) {
            const std::vector<double> g{rng.uniform(-1, 1), rng.uniform(-1, 1)};
            sgd_step(p, g, v, 0.05, 0.0, 0.0);
            for (std::size_t k = 0; k < 2; ++k) expected[k] -= 0.05 * g[k];
        }
        CHECK(p[0] == doctest::Approx(expected[0]));
        CHECK(p[1] == doctest::Approx(expected[1]));
    }
    {
        std::vector<double> p{1.0}, v{0.0, 0.0};
        const std::vector<double> g{0.5};
        CHECK_THROWS_AS(sgd_step(p, g, v, 0.1, 0.0, 0.0), ShapeMismatch);
    }
}

TEST_CASE("sample_class_batch semantics") {
    LabeledDataset dataset;
    dataset.num_classes = 2;
    for (int i = 0; i < 10; ++i)
        dataset.samples.push_back(LabeledSample{{double(i), 1.0}, std::size_t(i % 2)});

    Rng a(42), b(42);
    const auto batch1 = sample_class_batch(dataset, 256, a);
    const auto batch2 = sample_class_batch(dataset, 256, b);
    REQUIRE(batch1.size() == 256); // replacement sampling from 10 samples
    for (std::size_t i = 0; i < batch1.size(); ++i) {
        CHECK(batch1[i].input == batch2[i].input);
        CHECK(batch1[i].label == batch2[i].label);
    }

    // label histogram over 1e5 draws from a balanced 2-class set
    Rng c(7);
    std::size_t ones = 0;
    const std::size_t draws = 100000;
    const auto big = sample_class_batch(dataset, draws, c);
    for (const auto& s : big) ones += s.label;
    const double freq = double(ones) / double(draws);
    CHECK(freq == doctest::Approx(0.5).epsilon(0.04)); // 0.5 +- 0.02

    LabeledDataset empty;
    empty.num_classes = 2;
    Rng d(0);
    CHECK_THROWS_AS(sample_class_batch(empty, 4, d), EmptyDataset);
}

TEST_CASE("sample_pair_batch semantics") {
    PairDataset dataset;
    for (int i = 0; i < 10; ++i) {
        PairSubject s;
        s.subject_id = i;
        s.id_input = {double(i), 0.0};
        s.selfie_inputs = {{double(i), 1.0}, {double(i), 2.0}};
        dataset.pairs.push_back(s);
    }

    Rng rng(11);
    const PairBatch batch = sample_pair_batch(dataset, 4, rng);
    REQUIRE(batch.subject_indices.size() == 2);
    CHECK(batch.subject_indices[0] != batch.subject_indices[1]); // distinct

    Rng rng2(11);
    const PairBatch again = sample_pair_batch(dataset, 4, rng2);
    CHECK(again.subject_indices == batch.subject_indices);
    CHECK(again.selfie_inputs == batch.selfie_inputs);

    Rng rng3(0);
    CHECK_THROWS_AS(sample_pair_batch(dataset, 5, rng3), OddBatch);
    CHECK_THROWS_AS(sample_pair_batch(dataset, 2, rng3), BatchTooSmall);

    PairDataset one;
    one.pairs.push_back(dataset.pairs[0]);
    CHECK_THROWS_AS(sample_pair_batch(one, 4, rng3), TooFewSubjects);

    // drawn without replacement across a larger batch
    Rng rng4(5);
    const PairBatch big = sample_pair_batch(dataset, 20, rng4);
    std::vector<std::size_t> sorted = big.subject_indices;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("pretrain reduces the loss on a separable dataset") {
    const LabeledDataset dataset = gen_source_dataset(separable_synth(8, 8, 21));
    EmbeddingModel model = init_model(toy_model_config(8, 4));
    AMSoftmaxHead head = make_am_softmax_head(8, 8, 1.0, 10.0, 5);

    const TrainConfig config = toy_config(500, 0.05, 31, 32);
    const PretrainResult result = pretrain(model, head, dataset, config);
    REQUIRE(result.trace.size() == 500);
    CHECK(mean_loss(result.trace, 400, 500) < mean_loss(result.trace, 0, 100));
}

TEST_CASE("pretrain is deterministic and 0 steps is a no-op") {
    const LabeledDataset dataset = gen_source_dataset(separable_synth(6, 4, 3));
    const EmbeddingModel model = init_model(toy_model_config(6, 9));
    const AMSoftmaxHead head = make_am_softmax_head(6, 4, 1.0, 10.0, 2);

    const PretrainResult frozen = pretrain(model, head, dataset, toy_config(0, 0.05, 1));
    CHECK(models_equal(frozen.model, model));
    CHECK(frozen.trace.empty());

    const TrainConfig config = toy_config(50, 0.05, 17);
    const PretrainResult a = pretrain(model, head, dataset, config);
    const PretrainResult b = pretrain(model, head, dataset, config);
    CHECK(models_equal(a.model, b.model));
    CHECK(a.head.weights.data == b.head.weights.data);
    CHECK(a.head.log_scale == b.head.log_scale);
}

namespace {

SynthConfig pair_synth(std::size_t latent, std::size_t input, std::uint64_t seed,
                       std::size_t subjects) {
    SynthConfig config;
    config.num_subjects = subjects;
    config.latent_dim = latent;
    config.input_dim = input;
    Rng t1(100 + seed), t2(200 + seed);
    config.id_domain_transform = random_orthonormal_columns(input, latent, t1);
    config.selfie_domain_transform = random_orthonormal_columns(input, latent, t2);
    config.noise_sigma_id = 0.15;
    config.noise_sigma_selfie = 0.1;
    config.rng_seed = seed;
    return config;
}

} // namespace

TEST_CASE("finetune reduces the MPS loss") {
    const PairDataset dataset = gen_pair_dataset(pair_synth(6, 10, 77, 30));
    const EmbeddingModel base = init_model(toy_model_config(10, 13));

    const TrainConfig config = toy_config(200, 0.05, 19, 8);
    const FinetuneResult result = finetune(base, dataset, config, MPSConfig{0.5}, false);
    REQUIRE(result.trace.size() == 200);
    CHECK(mean_loss(result.trace, 150, 200) < mean_loss(result.trace, 0, 20));
}

TEST_CASE("finetune respects sharing, cloning and determinism") {
    const PairDataset dataset = gen_pair_dataset(pair_synth(5, 8, 3, 12));
    const EmbeddingModel base = init_model(toy_model_config(8, 23));
    const EmbeddingModel base_copy = base;

    // 0 steps: both siblings equal the base
    const FinetuneResult cloned = finetune(base, dataset, toy_config(0, 0.05, 1),
                                           MPSConfig{0.5}, false);
    CHECK(models_equal(cloned.siblings.id_model, base));
    CHECK(models_equal(cloned.siblings.selfie_model, base));

    const TrainConfig config = toy_config(40, 0.05, 29, 8);
    const FinetuneResult shared = finetune(base, dataset, config, MPSConfig{0.5}, true);
    CHECK(models_equal(shared.siblings.id_model, shared.siblings.selfie_model));

    const FinetuneResult siblings = finetune(base, dataset, config, MPSConfig{0.5}, false);
    CHECK(!models_equal(siblings.siblings.id_model, siblings.siblings.selfie_model));
    CHECK(models_equal(base, base_copy)); // caller's model untouched

    const FinetuneResult again = finetune(base, dataset, config, MPSConfig{0.5}, false);
    CHECK(models_equal(siblings.siblings.id_model, again.siblings.id_model));
    CHECK(models_equal(siblings.siblings.selfie_model, again.siblings.selfie_model));
}

TEST_CASE("finetune_classification trains both heads and nets") {
    const PairDataset dataset = gen_pair_dataset(pair_synth(5, 8, 41, 15));
    const EmbeddingModel base = init_model(toy_model_config(8, 31));
    const TrainConfig config = toy_config(60, 0.05, 37, 8);

    for (ClassifierLoss loss : {ClassifierLoss::AmSoftmax, ClassifierLoss::L2Softmax}) {
        ClassifierFinetuneConfig clf;
        clf.loss = loss;
        clf.margin = 1.0;
        const FinetuneResult result =
            finetune_classification(base, dataset, config, clf, false);
        REQUIRE(result.trace.size() == 60);
        CHECK(mean_loss(result.trace, 40, 60) < mean_loss(result.trace, 0, 10));
        CHECK(!models_equal(result.siblings.id_model, base));
    }
}

TEST_CASE("sibling independence under optimizer steps") {
    const EmbeddingModel base = init_model(toy_model_config(6, 53));
    SiblingPair pair = clone_siblings(base);
    OptimizerState state = make_optimizer_state(pair.id_model);
    const TrainConfig config = toy_config(1, 0.1, 0);

    Rng rng(8);
    for (int step = 0; step < 5; ++step) {
        ParamGrads grads = zero_grads_like(pair.id_model);
        for (Matrix& g : grads.weight_grads)
            for (double& x : g.data) x = rng.uniform(-1.0, 1.0);
        sgd_step_model(pair.id_model, grads, state, 0.1, config);
    }
    CHECK(models_equal(pair.selfie_model, base));
    CHECK(!models_equal(pair.id_model, base));
    CHECK(state.step_count == 5);
}

TEST_CASE("freeze_prefix leaves leading layers untouched") {
    const PairDataset dataset = gen_pair_dataset(pair_synth(5, 8, 61, 12));
    const EmbeddingModel base = init_model(toy_model_config(8, 67));

    TrainConfig config = toy_config(30, 0.05, 71, 8);
    config.freeze_prefix = 1;
    const FinetuneResult result = finetune(base, dataset, config, MPSConfig{0.5}, false);
    CHECK(result.siblings.id_model.layer_weights[0].data == base.layer_weights[0].data);
    CHECK(result.siblings.id_model.layer_weights[1].data != base.layer_weights[1].data);
}

TEST_CASE("trace CSV has one row per logged step") {
    testutil::TempDir dir("hv_trace");
    const LabeledDataset dataset = gen_source_dataset(separable_synth(6, 4, 5));
    TrainConfig config = toy_config(40, 0.05, 2);
    config.log_every = 10;
    const PretrainResult result = pretrain(init_model(toy_model_config(6, 1)),
                                           make_am_softmax_head(6, 4, 1.0, 10.0, 9),
                                           dataset, config);
    CHECK(result.trace.size() == 4); // total_steps / log_every

    write_trace_csv(dir.path() / "trace.csv", result.trace);
    std::ifstream in(dir.path() / "trace.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,lr,loss");
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);
}
