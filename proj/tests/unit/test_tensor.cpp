// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Gradient checks: every differentiable op against the central-difference
// oracle, plus the backward() contract itself.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "paragen/rng.hpp"
#include "paragen/tensor.hpp"

using namespace paragen;

namespace {

// |a - f| <= tol * max(1, |f|), elementwise
void require_grad_close(const std::vector<double>& analytic, const std::vector<double>& fd, double tol = 1e-4) {
    REQUIRE(analytic.size() == fd.size());
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double err = std::fabs(analytic[i] - fd[i]);
        const double bound = tol * std::max(1.0, std::fabs(fd[i]));
        INFO("index " << i << " analytic=" << analytic[i] << " fd=" << fd[i]);
        REQUIRE(err <= bound);
    }
}

// Generic harness: `build` maps leaf tensors to a scalar loss. Gradients of
// all leaves are compared against finite differences over the flattened
// parameter vector.
void check_against_fd(const std::vector<std::vector<int>>& shapes,
                      const std::function<Tensor(const std::vector<Tensor>&)>& build, Rng& rng,
                      double param_scale = 1.0) {
    std::vector<std::vector<double>> values;
    size_t total = 0;
    for (const auto& s : shapes) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        values.push_back(rng.normal_vec(n, 0.0, param_scale));
        total += n;
    }
    auto assemble = [&](const std::vector<double>& flat, bool rg) {
        std::vector<Tensor> ts;
        size_t off = 0;
        for (size_t i = 0; i < shapes.size(); ++i) {
            std::vector<double> v(flat.begin() + off, flat.begin() + off + values[i].size());
            off += values[i].size();
            ts.push_back(Tensor::from(shapes[i], std::move(v), rg));
        }
        return ts;
    };
    std::vector<double> flat;
    for (const auto& v : values) flat.insert(flat.end(), v.begin(), v.end());

    auto leaves = assemble(flat, true);
    Tensor loss = build(leaves);
    backward(loss);
    std::vector<double> analytic;
    for (auto& t : leaves) {
        const auto& g = t.grad();
        analytic.insert(analytic.end(), g.begin(), g.end());
    }

    auto f = [&](const std::vector<double>& p) {
        auto ts = assemble(p, false);
        return build(ts).item();
    };
    auto fd = finite_diff_grad(f, flat, 1e-5);
    require_grad_close(analytic, fd);
    REQUIRE(analytic.size() == total);
}

// weighted sum with a fixed cotangent so every output entry matters
Tensor weighted(const Tensor& t, const std::vector<double>& w) {
    return sum_all(mul(t, Tensor::from(t.shape(), w)));
}

}  // namespace

TEST_CASE("backward: d(x*x)/dx = 2x") {
    Tensor x = Tensor::from({1}, {3.0}, true);
    Tensor y = mul(x, x);
    backward(y);
    REQUIRE(x.grad()[0] == Catch::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward: softmax cross-entropy of uniform logits") {
    const int V = 7;
    Tensor logits = Tensor::from({1, V}, std::vector<double>(V, 0.4), true);
    Tensor loss = nll_from_logits(logits, {2});
    backward(loss);
    for (int j = 0; j < V; ++j) {
        const double expect = 1.0 / V - (j == 2 ? 1.0 : 0.0);
        REQUIRE(logits.grad()[j] == Catch::Approx(expect).margin(1e-12));
    }
    REQUIRE(loss.item() == Catch::Approx(std::log(static_cast<double>(V))).epsilon(1e-12));
}

TEST_CASE("backward: 2-layer MLP matches finite differences (seed 7)") {
    Rng rng(7);
    const int in = 5, hid = 6, out = 4;
    std::vector<double> xv = rng.normal_vec(static_cast<size_t>(2) * in, 0.0, 1.0);
    std::vector<double> cot = rng.normal_vec(static_cast<size_t>(2) * out, 0.0, 1.0);
    check_against_fd({{in, hid}, {hid}, {hid, out}, {out}}, [&](const std::vector<Tensor>& p) {
        Tensor x = Tensor::from({2, in}, xv);
        Tensor h = gelu(add_rowvec(matmul(x, p[0]), p[1]));
        Tensor y = add_rowvec(matmul(h, p[2]), p[3]);
        return weighted(y, cot);
    }, rng);
}

TEST_CASE("finite_diff_grad: constant function is zero") {
    auto g = finite_diff_grad([](const std::vector<double>&) { return 4.2; }, {1.0, -2.0, 0.5}, 1e-5);
    for (double v : g) REQUIRE(v == 0.0);
}

TEST_CASE("finite_diff_grad: sum is exactly ones") {
    auto g = finite_diff_grad(
        [](const std::vector<double>& p) {
            double s = 0;
            for (double v : p) s += v;
            return s;
        },
        {0.3, -1.7, 2.2, 5.0}, 1e-5);
    for (double v : g) REQUIRE(v == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("finite_diff_grad: rejects bad eps and non-finite f") {
    REQUIRE_THROWS_AS(finite_diff_grad([](const std::vector<double>&) { return 0.0; }, {1.0}, 0.0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(finite_diff_grad([](const std::vector<double>& p) { return std::log(p[0]); }, {-1.0}, 1e-5),
                      std::runtime_error);
}

TEST_CASE("gradcheck: every differentiable op, 20 seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        DYNAMIC_SECTION("seed " << seed) {
            {  // elementwise + scale + add_scalar
                std::vector<double> w = rng.normal_vec(12, 0.0, 1.0);
                check_against_fd({{3, 4}, {3, 4}}, [&](const std::vector<Tensor>& p) {
                    Tensor t = add(mul(p[0], p[1]), sub(p[0], scale(p[1], 0.7)));
                    return weighted(add_scalar(t, 0.3), w);
                }, rng);
            }
            {  // add_rowvec + gelu
                std::vector<double> w = rng.normal_vec(15, 0.0, 1.0);
                check_against_fd({{3, 5}, {5}}, [&](const std::vector<Tensor>& p) {
                    return weighted(gelu(add_rowvec(p[0], p[1])), w);
                }, rng);
            }
            {  // matmul + matmul_nt + transpose
                std::vector<double> w = rng.normal_vec(8, 0.0, 1.0);
                check_against_fd({{2, 3}, {3, 4}, {2, 4}}, [&](const std::vector<Tensor>& p) {
                    Tensor a = matmul(p[0], p[1]);          // 2x4
                    Tensor b = matmul_nt(a, p[2]);          // 2x2
                    return weighted(matmul(transpose(p[2]), b), w);  // 4x2
                }, rng);
            }
            {  // reshape + slices + concat
                std::vector<double> w = rng.normal_vec(12, 0.0, 1.0);
                check_against_fd({{2, 6}}, [&](const std::vector<Tensor>& p) {
                    Tensor r = reshape(p[0], {3, 4});
                    Tensor left = slice_cols(r, 0, 2);
                    Tensor right = slice_cols(r, 2, 4);
                    Tensor rows = slice_rows(r, 0, 3);
                    Tensor c = concat_cols({left, right, slice_cols(rows, 1, 3)});  // 3x6
                    return weighted(slice_rows(c, 0, 2), w);
                }, rng);
            }
            {  // gather_rows + embed_tokens
                std::vector<double> w = rng.normal_vec(12, 0.0, 1.0);
                std::vector<int> ids{0, 3, 1, 3};
                check_against_fd({{5, 3}, {3}}, [&](const std::vector<Tensor>& p) {
                    Tensor e = embed_tokens(p[0], p[1], ids, 3);
                    return weighted(e, w);
                }, rng);
                std::vector<double> w2 = rng.normal_vec(9, 0.0, 1.0);
                check_against_fd({{4, 3}}, [&](const std::vector<Tensor>& p) {
                    return weighted(gather_rows(p[0], {2, 0, 2}), w2);
                }, rng);
            }
            {  // layer_norm_rows
                std::vector<double> w = rng.normal_vec(12, 0.0, 1.0);
                check_against_fd({{2, 6}, {6}, {6}}, [&](const std::vector<Tensor>& p) {
                    return weighted(layer_norm_rows(p[0], p[1], p[2]), w);
                }, rng);
            }
            {  // softmax variants
                std::vector<double> w = rng.normal_vec(20, 0.0, 1.0);
                check_against_fd({{4, 5}}, [&](const std::vector<Tensor>& p) {
                    return weighted(softmax_rows(p[0]), w);
                }, rng);
                check_against_fd({{4, 5}}, [&](const std::vector<Tensor>& p) {
                    return weighted(causal_softmax_rows(p[0]), w);
                }, rng);
            }
            {  // reductions and losses
                check_against_fd({{3, 4}}, [&](const std::vector<Tensor>& p) { return mean_all(p[0]); }, rng);
                std::vector<int> targets{1, 0, 2};
                check_against_fd({{3, 4}}, [&](const std::vector<Tensor>& p) {
                    return nll_from_logits(p[0], targets);
                }, rng);
                // KL: teacher side fixed
                std::vector<double> tv = rng.normal_vec(12, 0.0, 1.0);
                check_against_fd({{3, 4}}, [&](const std::vector<Tensor>& p) {
                    return kl_rows_mean(Tensor::from({3, 4}, tv), p[0]);
                }, rng);
                check_against_fd({{3, 5}, {3, 5}}, [&](const std::vector<Tensor>& p) {
                    return cos_rows_mean(p[0], p[1]);
                }, rng);
            }
        }
    }
}

TEST_CASE("backward is bitwise deterministic") {
    auto run = [](std::vector<double>& grads_out) {
        Rng rng(99);
        std::vector<double> wv = rng.normal_vec(20, 0.0, 0.5);
        std::vector<double> xv = rng.normal_vec(12, 0.0, 1.0);
        Tensor w = Tensor::from({4, 5}, wv, true);
        Tensor x = Tensor::from({3, 4}, xv);
        Tensor y = softmax_rows(matmul(x, w));
        Tensor loss = nll_from_logits(gather_rows(y, {0, 2}), {1, 3});
        backward(loss);
        grads_out = w.grad();
    };
    std::vector<double> g1, g2;
    run(g1);
    run(g2);
    REQUIRE(g1.size() == g2.size());
    REQUIRE(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("backward contract errors") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tensor y = mul(x, x);
    REQUIRE_THROWS_AS(backward(y), std::invalid_argument);  // non-scalar
    Tensor s = sum_all(y);
    backward(s);
    REQUIRE_THROWS_AS(backward(s), std::runtime_error);  // consumed
}

TEST_CASE("no-grad graphs record nothing") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 2}, {1, 1, 1, 1});
    Tensor c = matmul(a, b);
    REQUIRE_FALSE(c.requires_grad());
    REQUIRE(c.node()->parents.empty());
}

TEST_CASE("kl_rows_mean rejects a grad-tracking reference side") {
    Tensor p = Tensor::from({1, 3}, {0.1, 0.2, 0.3}, true);
    Tensor q = Tensor::from({1, 3}, {0.3, 0.2, 0.1}, true);
    REQUIRE_THROWS_AS(kl_rows_mean(p, q), std::invalid_argument);
}
