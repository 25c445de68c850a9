// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "paragen/lora.hpp"
#include "paragen/rng.hpp"

using namespace paragen;

namespace {

LoraDelta random_delta(int layers, int rank, double alpha, int h, Rng& rng, double sd = 0.3) {
    LoraDelta d;
    d.rank = rank;
    d.alpha = alpha;
    d.layers.resize(static_cast<size_t>(layers));
    for (auto& layer : d.layers)
        for (auto& e : layer) {
            e.a = Tensor::from({rank, h}, rng.normal_vec(static_cast<size_t>(rank) * h, 0.0, sd));
            e.b = Tensor::from({h, rank}, rng.normal_vec(static_cast<size_t>(h) * rank, 0.0, sd));
        }
    return d;
}

// dense-matrix oracle: scale * B * A computed by plain loops
std::vector<double> dense_oracle(const LoraEntry& e, double scale) {
    const int h_out = e.b.rows(), r = e.b.cols(), h_in = e.a.cols();
    std::vector<double> out(static_cast<size_t>(h_out) * h_in, 0.0);
    for (int i = 0; i < h_out; ++i)
        for (int j = 0; j < h_in; ++j) {
            double s = 0;
            for (int k = 0; k < r; ++k) s += e.b.at(i, k) * e.a.at(k, j);
            out[static_cast<size_t>(i) * h_in + j] = scale * s;
        }
    return out;
}

}  // namespace

TEST_CASE("apply_delta: zero B leaves W unchanged") {
    Tensor w = Tensor::from({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    LoraEntry e{Tensor::from({2, 3}, {1, 1, 1, 1, 1, 1}), Tensor::zeros({3, 2})};
    Tensor out = apply_delta(w, e, 16.0);
    for (size_t i = 0; i < w.data().size(); ++i) REQUIRE(out.data()[i] == w.data()[i]);
}

TEST_CASE("apply_delta: rank-1 outer product places a single entry") {
    // r=1, alpha=1: B=[1,0]^T, A=[0,1] -> W + e1 e2^T adds 1 at (0,1)
    Tensor w = Tensor::zeros({2, 2});
    LoraEntry e{Tensor::from({1, 2}, {0, 1}), Tensor::from({2, 1}, {1, 0})};
    Tensor out = apply_delta(w, e, 1.0);
    REQUIRE(out.at(0, 0) == 0.0);
    REQUIRE(out.at(0, 1) == 1.0);
    REQUIRE(out.at(1, 0) == 0.0);
    REQUIRE(out.at(1, 1) == 0.0);
}

TEST_CASE("apply_delta: doubling alpha doubles the update exactly") {
    Rng rng(3);
    LoraDelta d = random_delta(1, 2, 32.0, 4, rng);
    const auto& e = d.layers[0][0];
    auto d1 = dense_oracle(e, 32.0 / 2.0);
    auto d2 = dense_oracle(e, 64.0 / 2.0);
    for (size_t i = 0; i < d1.size(); ++i) REQUIRE(d2[i] == Catch::Approx(2.0 * d1[i]).margin(1e-15));
}

TEST_CASE("apply_delta: shape mismatch rejected") {
    Tensor w = Tensor::zeros({3, 4});
    LoraEntry e{Tensor::from({1, 2}, {0, 1}), Tensor::from({2, 1}, {1, 0})};
    REQUIRE_THROWS_AS(apply_delta(w, e, 1.0), std::invalid_argument);
}

TEST_CASE("fuse_concat_rank: exact additivity in the dense delta") {
    Rng rng(7);
    const int h = 6;
    std::vector<LoraDelta> ds{random_delta(2, 2, 32.0, h, rng), random_delta(2, 2, 16.0, h, rng),
                              random_delta(2, 2, 8.0, h, rng)};
    LoraDelta fused = fuse_concat_rank(ds);
    REQUIRE(fused.rank == 6);
    REQUIRE(fused.scale() == 1.0);
    for (int l = 0; l < 2; ++l)
        for (int t = 0; t < kNumLoraTargets; ++t) {
            std::vector<double> expect(static_cast<size_t>(h) * h, 0.0);
            for (const auto& d : ds) {
                auto dd = dense_oracle(d.layers[static_cast<size_t>(l)][static_cast<size_t>(t)], d.scale());
                for (size_t i = 0; i < expect.size(); ++i) expect[i] += dd[i];
            }
            auto got = dense_oracle(fused.layers[static_cast<size_t>(l)][static_cast<size_t>(t)], fused.scale());
            for (size_t i = 0; i < expect.size(); ++i) REQUIRE(got[i] == Catch::Approx(expect[i]).margin(1e-9));
        }
}

TEST_CASE("fuse_concat_rank: two copies double, singleton is identity") {
    Rng rng(11);
    LoraDelta d = random_delta(1, 2, 32.0, 4, rng);
    auto base = dense_oracle(d.layers[0][0], d.scale());

    LoraDelta twice = fuse_concat_rank({d, d});
    auto got = dense_oracle(twice.layers[0][0], twice.scale());
    for (size_t i = 0; i < base.size(); ++i) REQUIRE(got[i] == Catch::Approx(2.0 * base[i]).margin(1e-12));

    LoraDelta single = fuse_concat_rank({d});
    auto got1 = dense_oracle(single.layers[0][0], single.scale());
    for (size_t i = 0; i < base.size(); ++i) REQUIRE(got1[i] == Catch::Approx(base[i]).margin(1e-12));
}

TEST_CASE("fuse_average: idempotent on identical inputs") {
    Rng rng(13);
    LoraDelta d = random_delta(2, 2, 32.0, 4, rng);
    LoraDelta avg = fuse_average({d, d, d});
    for (int l = 0; l < 2; ++l)
        for (int t = 0; t < kNumLoraTargets; ++t) {
            const auto& e0 = d.layers[static_cast<size_t>(l)][static_cast<size_t>(t)];
            const auto& e1 = avg.layers[static_cast<size_t>(l)][static_cast<size_t>(t)];
            for (size_t i = 0; i < e0.a.data().size(); ++i)
                REQUIRE(e1.a.data()[i] == Catch::Approx(e0.a.data()[i]).margin(1e-15));
            for (size_t i = 0; i < e0.b.data().size(); ++i)
                REQUIRE(e1.b.data()[i] == Catch::Approx(e0.b.data()[i]).margin(1e-15));
        }
}

TEST_CASE("fuse_average: {(A,B), (-A,B)} cancels to a zero delta") {
    Rng rng(17);
    LoraDelta d1 = random_delta(1, 2, 32.0, 4, rng);
    LoraDelta d2 = d1;
    d2.layers.clear();
    d2.layers.resize(1);
    for (int t = 0; t < kNumLoraTargets; ++t) {
        std::vector<double> neg = d1.layers[0][static_cast<size_t>(t)].a.data();
        for (auto& v : neg) v = -v;
        d2.layers[0][static_cast<size_t>(t)].a = Tensor::from({2, 4}, neg);
        d2.layers[0][static_cast<size_t>(t)].b = d1.layers[0][static_cast<size_t>(t)].b;
    }
    LoraDelta avg = fuse_average({d1, d2});
    auto dense = dense_oracle(avg.layers[0][0], avg.scale());
    for (double v : dense) REQUIRE(v == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("fuse_average: mean of factors is not the mean of deltas (witness)") {
    Rng rng(23);
    LoraDelta d1 = random_delta(1, 2, 32.0, 4, rng);
    LoraDelta d2 = random_delta(1, 2, 32.0, 4, rng);
    LoraDelta avg = fuse_average({d1, d2});
    auto avg_dense = dense_oracle(avg.layers[0][0], avg.scale());
    auto e1 = dense_oracle(d1.layers[0][0], d1.scale());
    auto e2 = dense_oracle(d2.layers[0][0], d2.scale());
    double diff = 0.0;
    for (size_t i = 0; i < e1.size(); ++i) diff += std::fabs(avg_dense[i] - 0.5 * (e1[i] + e2[i]));
    REQUIRE(diff > 1e-6);
}

TEST_CASE("fuse_average: rank mismatch rejected") {
    Rng rng(29);
    REQUIRE_THROWS_AS(fuse_average({random_delta(1, 2, 32.0, 4, rng), random_delta(1, 3, 32.0, 4, rng)}),
                      std::invalid_argument);
}

TEST_CASE("flatten: lossless bitwise round-trip and length formula") {
    Rng rng(31);
    const int layers = 3, rank = 2, h = 5;
    LoraDelta d = random_delta(layers, rank, 32.0, h, rng);
    auto flat = lora_flatten(d);
    REQUIRE(static_cast<int64_t>(flat.size()) == lora_flat_len(layers, rank, h, h));
    REQUIRE(static_cast<int64_t>(flat.size()) == layers * kNumLoraTargets * rank * (h + h));
    LoraDelta back = lora_unflatten(flat, layers, rank, 32.0, h, h);
    for (int l = 0; l < layers; ++l)
        for (int t = 0; t < kNumLoraTargets; ++t) {
            const auto& e0 = d.layers[static_cast<size_t>(l)][static_cast<size_t>(t)];
            const auto& e1 = back.layers[static_cast<size_t>(l)][static_cast<size_t>(t)];
            REQUIRE(e0.a.data() == e1.a.data());
            REQUIRE(e0.b.data() == e1.b.data());
        }
    REQUIRE_THROWS_AS(lora_unflatten(std::vector<double>(flat.size() - 1), layers, rank, 32.0, h, h),
                      std::invalid_argument);
}

TEST_CASE("flatten: documented element order on a hand-built rank-1 delta") {
    // one layer, 2x2 targets: layer asc, target {q_proj, v_proj}, A before B, row-major
    LoraDelta d;
    d.rank = 1;
    d.alpha = 1.0;
    d.layers.resize(1);
    d.layers[0][0] = {Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})};
    d.layers[0][1] = {Tensor::from({1, 2}, {5, 6}), Tensor::from({2, 1}, {7, 8})};
    auto flat = lora_flatten(d);
    REQUIRE(flat == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("adapter file round-trip through the shared container") {
    Rng rng(37);
    LoraDelta d = random_delta(2, 2, 32.0, 4, rng);
    const std::string path = "test_adapter.ckpt";
    save_lora(d, path, {{"note", "unit"}});
    LoraDelta back = load_lora(path);
    REQUIRE(back.rank == d.rank);
    REQUIRE(back.alpha == d.alpha);
    REQUIRE(back.num_layers() == d.num_layers());
    for (int l = 0; l < 2; ++l)
        for (int t = 0; t < kNumLoraTargets; ++t) {
            REQUIRE(back.layers[static_cast<size_t>(l)][static_cast<size_t>(t)].a.data() ==
                    d.layers[static_cast<size_t>(l)][static_cast<size_t>(t)].a.data());
            REQUIRE(back.layers[static_cast<size_t>(l)][static_cast<size_t>(t)].b.data() ==
                    d.layers[static_cast<size_t>(l)][static_cast<size_t>(t)].b.data());
        }
    std::remove(path.c_str());
}
