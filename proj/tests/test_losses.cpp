#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hv/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hv;

namespace {

AMSoftmaxHead axis_head(double scale, double margin) {
    AMSoftmaxHead head;
    head.weights = Matrix(2, 2);
    head.weights.at(0, 0) = 1.0; // class 0 along e0
    head.weights.at(1, 1) = 1.0; // class 1 along e1
    head.log_scale = std::log(scale);
    head.margin = margin;
    return head;
}

std::vector<EmbeddingVector> rand_batch(Rng& rng, std::size_t n, std::size_t dim) {
    std::vector<EmbeddingVector> batch;
    batch.reserve(n);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(testutil::rand_unit(rng, dim));
    return batch;
}

} // namespace

TEST_CASE("am_softmax worked examples") {
    const std::vector<EmbeddingVector> batch{EmbeddingVector(Vector{1.0, 0.0})};
    const std::vector<std::size_t> labels{0};

    {
        const AMSoftmaxHead head = axis_head(1.0, 0.0);
        const LossOutput out = am_softmax_forward(head, batch, labels);
        CHECK(out.value == doctest::Approx(0.31326).epsilon(1e-4));
        const double expected = oracle::am_softmax(head.weights, 1.0, 0.0, batch, labels);
        CHECK(std::abs(out.value - expected) < 1e-10);
        CHECK(std::abs(out.value - (-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)))) <
              1e-12);
    }
    {
        const AMSoftmaxHead head = axis_head(1.0, 1.0);
        const LossOutput out = am_softmax_forward(head, batch, labels);
        CHECK(out.value == doctest::Approx(std::log(2.0)).epsilon(1e-10));
        const double expected = oracle::am_softmax(head.weights, 1.0, 1.0, batch, labels);
        CHECK(std::abs(out.value - expected) < 1e-10);
    }
    {
        // single class: the impostor sum is empty, the ratio is 1
        AMSoftmaxHead head;
        head.weights = Matrix(2, 1);
        head.weights.at(0, 0) = 1.0;
        head.log_scale = std::log(4.0);
        head.margin = 2.0;
        const LossOutput out = am_softmax_forward(head, batch, labels);
        CHECK(out.value == doctest::Approx(0.0));
    }
}

TEST_CASE("am_softmax error paths") {
    const AMSoftmaxHead head = axis_head(1.0, 0.0);
    const std::vector<EmbeddingVector> batch{EmbeddingVector(Vector{1.0, 0.0})};
    CHECK_THROWS_AS(am_softmax_forward(head, batch, {2}), LabelOutOfRange);
    CHECK_THROWS_AS(
        am_softmax_forward(head, {EmbeddingVector(Vector{1.0, 0.0, 0.0})}, {0}),
        DimMismatch);
    CHECK_THROWS_AS(am_softmax_forward(head, {}, {}), BatchTooSmall);
}

TEST_CASE("am_softmax matches the brute-force oracle on random batches") {
    Rng rng(555);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t d = 2 + rng.uniform_index(5);
        const std::size_t C = 2 + rng.uniform_index(5); // C <= 6
        const std::size_t B = 1 + rng.uniform_index(6); // P <= 6
        AMSoftmaxHead head;
        head.weights = Matrix(d, C);
        for (double& w : head.weights.data) w = rng.uniform(-1.0, 1.0);
        head.log_scale = std::log(rng.uniform(0.5, 16.0));
        head.margin = rng.uniform(0.0, 5.0);

        const auto batch = rand_batch(rng, B, d);
        std::vector<std::size_t> labels(B);
        for (auto& y : labels) y = rng.uniform_index(C);

        const LossOutput out = am_softmax_forward(head, batch, labels);
        const double expected =
            oracle::am_softmax(head.weights, head.scale(), head.margin, batch, labels);
        CHECK(std::abs(out.value - expected) < 1e-10);
    }
}

TEST_CASE("am_softmax is monotone in the margin") {
    Rng rng(77);
    const std::size_t d = 4, C = 5, B = 6;
    AMSoftmaxHead head;
    head.weights = Matrix(d, C);
    for (double& w : head.weights.data) w = rng.uniform(-1.0, 1.0);
    head.log_scale = std::log(8.0);
    const auto batch = rand_batch(rng, B, d);
    std::vector<std::size_t> labels(B);
    for (auto& y : labels) y = rng.uniform_index(C);

    double prev = -1.0;
    for (double m : {0.0, 0.25, 0.5, 1.0, 2.0, 5.0}) {
        head.margin = m;
        const double value = am_softmax_forward(head, batch, labels).value;
        CHECK(value >= prev);
        prev = value;
    }
}

TEST_CASE("am_softmax is invariant to stored column norms") {
    Rng rng(88);
    AMSoftmaxHead head;
    head.weights = Matrix(4, 3);
    for (double& w : head.weights.data) w = rng.uniform(-1.0, 1.0);
    head.log_scale = std::log(10.0);
    head.margin = 1.5;
    const auto batch = rand_batch(rng, 5, 4);
    const std::vector<std::size_t> labels{0, 1, 2, 0, 1};

    const double before = am_softmax_forward(head, batch, labels).value;
    for (std::size_t i = 0; i < 4; ++i) head.weights.at(i, 1) *= 3.0;
    const double after = am_softmax_forward(head, batch, labels).value;
    CHECK(std::abs(before - after) < 1e-10);
}

TEST_CASE("l2_softmax reduces to am_softmax at margin 0 with frozen scale") {
    Rng rng(99);
    const std::size_t d = 4, C = 4, B = 5;
    AMSoftmaxHead head = make_l2_softmax_head(d, C, 16.0, 3);
    const auto batch = rand_batch(rng, B, d);
    std::vector<std::size_t> labels(B);
    for (auto& y : labels) y = rng.uniform_index(C);

    const LossOutput l2 = l2_softmax_forward(head, batch, labels);
    AMSoftmaxHead am_head = head;
    am_head.margin = 0.0;
    am_head.learnable_scale = true;
    const LossOutput am = am_softmax_forward(am_head, batch, labels);
    CHECK(l2.value == doctest::Approx(am.value).epsilon(1e-12));
    CHECK(l2.head_grads->log_scale_grad == 0.0);
    CHECK(am.head_grads->log_scale_grad != 0.0);

    // the worked two-class case at m=0
    const AMSoftmaxHead axes = [&] {
        AMSoftmaxHead h;
        h.weights = Matrix(2, 2);
        h.weights.at(0, 0) = 1.0;
        h.weights.at(1, 1) = 1.0;
        h.log_scale = 0.0;
        h.learnable_scale = false;
        return h;
    }();
    const LossOutput out = l2_softmax_forward(
        axes, {EmbeddingVector(Vector{1.0, 0.0})}, {0});
    CHECK(out.value == doctest::Approx(0.31326).epsilon(1e-4));
}

TEST_CASE("am_softmax gradients match finite differences") {
    Rng rng(4242);
    int done = 0;
    while (done < 25) {
        const std::size_t d = 3 + rng.uniform_index(3);
        const std::size_t C = 2 + rng.uniform_index(4);
        const std::size_t B = 2 + rng.uniform_index(3);
        AMSoftmaxHead head;
        head.weights = Matrix(d, C);
        for (double& w : head.weights.data) w = rng.uniform(-1.0, 1.0);
        head.log_scale = std::log(rng.uniform(1.0, 12.0));
        head.margin = rng.uniform(0.0, 3.0);

        std::vector<Vector> raw(B);
        std::vector<EmbeddingVector> batch;
        for (auto& v : raw) {
            v = testutil::rand_vector(rng, d, -1.5, 1.5);
            if (l2_norm(v) < 0.2) v[0] += 1.0;
            batch.push_back(l2_normalize(v).unit);
        }
        std::vector<std::size_t> labels(B);
        for (auto& y : labels) y = rng.uniform_index(C);

        const LossOutput out = am_softmax_forward(head, batch, labels);

        // embeddings, chained through the normalization
        for (std::size_t b = 0; b < B; ++b) {
            const Vector analytic =
                l2_normalize_backward(raw[b], out.grads_on_embeddings[b]);
            auto f = [&, b](const Vector& x) {
                auto probe = batch;
                probe[b] = l2_normalize(x).unit;
                return am_softmax_forward(head, probe, labels).value;
            };
            const Vector fd = finite_difference_gradient(f, raw[b], 1e-4);
            CHECK(relative_gradient_error(analytic, fd) < 1e-4);
        }

        // head weights
        {
            auto f = [&](const Vector& w) {
                AMSoftmaxHead probe = head;
                probe.weights.data = w;
                return am_softmax_forward(probe, batch, labels).value;
            };
            const Vector fd = finite_difference_gradient(f, head.weights.data, 1e-4);
            CHECK(relative_gradient_error(out.head_grads->weight_grads.data, fd) < 1e-4);
        }

        // log scale
        {
            auto f = [&](const Vector& s) {
                AMSoftmaxHead probe = head;
                probe.log_scale = s[0];
                return am_softmax_forward(probe, batch, labels).value;
            };
            const Vector fd = finite_difference_gradient(f, {head.log_scale}, 1e-4);
            CHECK(relative_gradient_error({out.head_grads->log_scale_grad}, fd) < 1e-4);
        }
        ++done;
    }
}

TEST_CASE("mps worked examples") {
    const std::vector<EmbeddingVector> g{EmbeddingVector(Vector{1.0, 0.0}),
                                         EmbeddingVector(Vector{0.0, 1.0})};
    const std::vector<EmbeddingVector> h = g;

    CHECK(mps_forward(MPSConfig{0.5}, g, h).value == doctest::Approx(0.0));
    {
        const LossOutput out = mps_forward(MPSConfig{1.5}, g, h);
        CHECK(out.value == doctest::Approx(0.5));
        CHECK(std::abs(out.value - oracle::mps(1.5, g, h)) < 1e-10);
    }
    CHECK_THROWS_AS(
        mps_forward(MPSConfig{0.5}, {EmbeddingVector(Vector{1.0, 0.0})},
                    {EmbeddingVector(Vector{1.0, 0.0})}),
        BatchTooSmall);

    Rng rng(404);
    const auto g3 = rand_batch(rng, 3, 4);
    const auto h3 = rand_batch(rng, 3, 4);
    const LossOutput out = mps_forward(MPSConfig{0.5}, g3, h3);
    CHECK(std::abs(out.value - oracle::mps(0.5, g3, h3)) < 1e-10);
}

TEST_CASE("mps matches the exhaustive oracle for P <= 6") {
    Rng rng(2024);
    for (std::size_t P = 2; P <= 6; ++P) {
        for (int trial = 0; trial < 40; ++trial) {
            const std::size_t d = 2 + rng.uniform_index(6);
            const auto g = rand_batch(rng, P, d);
            const auto h = rand_batch(rng, P, d);
            const double mprime = rng.uniform(0.0, 1.5);
            const LossOutput out = mps_forward(MPSConfig{mprime}, g, h);
            CHECK(std::abs(out.value - oracle::mps(mprime, g, h)) < 1e-10);
        }
    }
}

TEST_CASE("mps is invariant under simultaneous subject permutation") {
    Rng rng(606);
    const std::size_t P = 5, d = 6;
    const auto g = rand_batch(rng, P, d);
    const auto h = rand_batch(rng, P, d);
    const double base = mps_forward(MPSConfig{0.5}, g, h).value;

    const std::size_t perm[P] = {3, 0, 4, 1, 2};
    std::vector<EmbeddingVector> gp, hp;
    for (std::size_t i : perm) {
        gp.push_back(g[i]);
        hp.push_back(h[i]);
    }
    CHECK(mps_forward(MPSConfig{0.5}, gp, hp).value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("mps per-pair value is zero exactly when the margin is satisfied") {
    Rng rng(808);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t P = 2 + rng.uniform_index(4);
        const std::size_t d = 3 + rng.uniform_index(5);
        const auto g = rand_batch(rng, P, d);
        const auto h = rand_batch(rng, P, d);
        const double mprime = rng.uniform(0.0, 1.0);
        const LossOutput out = mps_forward(MPSConfig{mprime}, g, h);

        // recompute per-pair hinges from scratch
        double expected = 0.0;
        bool all_satisfied = true;
        for (std::size_t i = 0; i < P; ++i) {
            double hardest = -2.0;
            for (std::size_t j = 0; j < P; ++j) {
                if (j == i) continue;
                hardest = std::max(hardest, dot(g[j].values(), h[i].values()));
                hardest = std::max(hardest, dot(g[i].values(), h[j].values()));
            }
            const double genuine = dot(g[i].values(), h[i].values());
            const double pre = hardest - genuine + mprime;
            if (pre > 0.0) all_satisfied = false;
            expected += std::max(0.0, pre);
        }
        expected /= static_cast<double>(P);
        CHECK(out.value == doctest::Approx(expected).epsilon(1e-12));
        if (all_satisfied) CHECK(out.value == 0.0);
        if (out.value == 0.0) CHECK(all_satisfied);
    }
}

TEST_CASE("mps_gradients_check behavior") {
    // inactive batch: orthonormal pairs, margin strictly satisfied
    {
        std::vector<Vector> g{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
        std::vector<Vector> h = g;
        const double err = mps_gradients_check(MPSConfig{0.5}, g, h);
        CHECK(err == doctest::Approx(0.0));
        const LossOutput out =
            mps_forward(MPSConfig{0.5},
                        {EmbeddingVector(Vector{1.0, 0.0, 0.0}),
                         EmbeddingVector(Vector{0.0, 1.0, 0.0})},
                        {EmbeddingVector(Vector{1.0, 0.0, 0.0}),
                         EmbeddingVector(Vector{0.0, 1.0, 0.0})});
        for (const Vector& grad : out.grads_on_embeddings)
            for (double x : grad) CHECK(x == 0.0);
    }

    // active batch with an exact top-2 impostor tie
    {
        std::vector<Vector> g{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
        std::vector<Vector> h = g;
        CHECK_THROWS_AS(mps_gradients_check(MPSConfig{1.5}, g, h), TieAtKink);
    }

    // seeded random active batches away from kinks
    Rng rng(909);
    int done = 0;
    while (done < 30) {
        const std::size_t P = 2 + rng.uniform_index(3);
        const std::size_t d = 3 + rng.uniform_index(4);
        std::vector<Vector> g(P), h(P);
        for (auto& v : g) v = testutil::rand_vector(rng, d, -1.0, 1.0);
        for (auto& v : h) v = testutil::rand_vector(rng, d, -1.0, 1.0);
        bool degenerate = false;
        for (const auto& v : g) degenerate |= l2_norm(v) < 0.2;
        for (const auto& v : h) degenerate |= l2_norm(v) < 0.2;
        if (degenerate) continue;

        try {
            const double err = mps_gradients_check(MPSConfig{0.5}, g, h);
            CHECK(err < 1e-4);
            ++done;
        } catch (const TieAtKink&) {
            continue; // redraw
        }
    }
}

TEST_CASE("mps_kink_distance flags near-ties") {
    const std::vector<EmbeddingVector> g{EmbeddingVector(Vector{1.0, 0.0}),
                                         EmbeddingVector(Vector{0.0, 1.0})};
    CHECK(mps_kink_distance(MPSConfig{1.5}, g, g) == doctest::Approx(0.0));
    CHECK(mps_kink_distance(MPSConfig{0.5}, g, g) == doctest::Approx(0.5));
}
