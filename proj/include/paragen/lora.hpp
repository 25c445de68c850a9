// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters: per layer, one (A, B) pair for the attention query
// projection and one for the value projection. A is (r x h_in), B is
// (h_out x r); the injected update is W + (alpha/r) * B * A.
//
// Flattening order (stable contract for the generator head and the
// reconstruction attack): layers ascending, targets in order {q_proj,
// v_proj}, A before B, row-major within each matrix.
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "paragen/checkpoint.hpp"
#include "paragen/tensor.hpp"

namespace paragen {

inline constexpr int kNumLoraTargets = 2;
inline constexpr const char* kLoraTargetNames[kNumLoraTargets] = {"q_proj", "v_proj"};

struct LoraEntry {
    Tensor a;  // r x h_in
    Tensor b;  // h_out x r
};

struct LoraDelta {
    int rank = 2;
    double alpha = 32.0;
    std::vector<std::array<LoraEntry, kNumLoraTargets>> layers;

    double scale() const { return alpha / static_cast<double>(rank); }
    int num_layers() const { return static_cast<int>(layers.size()); }

    static LoraDelta zeros(int num_layers, int rank, double alpha, int h_in, int h_out) {
        LoraDelta d;
        d.rank = rank;
        d.alpha = alpha;
        d.layers.resize(static_cast<size_t>(num_layers));
        for (auto& layer : d.layers)
            for (auto& e : layer) {
                e.a = Tensor::zeros({rank, h_in});
                e.b = Tensor::zeros({h_out, rank});
            }
        return d;
    }
};

// dense delta for one target: (alpha/r) * B * A, shape h_out x h_in
inline Tensor lora_dense(const LoraDelta& d, int layer, int target) {
    const auto& e = d.layers.at(static_cast<size_t>(layer))[static_cast<size_t>(target)];
    return scale(matmul(e.b, e.a), d.scale());
}

// W + (alpha/r) * B * A for a plain (h_out x h_in) weight matrix
inline Tensor apply_delta(const Tensor& w, const LoraEntry& e, double sc) {
    const int h_out = e.b.rows(), h_in = e.a.cols();
    if (w.rows() != h_out || w.cols() != h_in || e.a.rows() != e.b.cols())
        throw std::invalid_argument("apply_delta: shape mismatch");
    return add(w, scale(matmul(e.b, e.a), sc));
}

// PRAG-style fusion: stack blocks along the rank dimension. Each source's
// alpha/r is folded into its B block so the fused delta equals the exact
// sum of member deltas; the fused scale is 1 (alpha == rank).
inline LoraDelta fuse_concat_rank(const std::vector<LoraDelta>& deltas) {
    if (deltas.empty()) throw std::invalid_argument("fuse_concat_rank: empty input");
    const int L = deltas[0].num_layers();
    int fused_rank = 0;
    for (const auto& d : deltas) {
        if (d.num_layers() != L) throw std::invalid_argument("fuse_concat_rank: layer count mismatch");
        fused_rank += d.rank;
    }
    const int h_in = deltas[0].layers[0][0].a.cols();
    const int h_out = deltas[0].layers[0][0].b.rows();
    LoraDelta out;
    out.rank = fused_rank;
    out.alpha = static_cast<double>(fused_rank);  // scale 1
    out.layers.resize(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        for (int t = 0; t < kNumLoraTargets; ++t) {
            Tensor a = Tensor::zeros({fused_rank, h_in});
            Tensor b = Tensor::zeros({h_out, fused_rank});
            int off = 0;
            for (const auto& d : deltas) {
                const auto& e = d.layers[static_cast<size_t>(l)][static_cast<size_t>(t)];
                if (e.a.cols() != h_in || e.b.rows() != h_out)
                    throw std::invalid_argument("fuse_concat_rank: target shape mismatch");
                const double sc = d.scale();
                for (int r = 0; r < d.rank; ++r)
                    for (int j = 0; j < h_in; ++j) a.at(off + r, j) = e.a.at(r, j);
                for (int i = 0; i < h_out; ++i)
                    for (int r = 0; r < d.rank; ++r) b.at(i, off + r) = sc * e.b.at(i, r);
                off += d.rank;
            }
            out.layers[static_cast<size_t>(l)][static_cast<size_t>(t)] = {a, b};
        }
    }
    return out;
}

// DyPRAG-style fusion: elementwise mean of the A and B factors. Note the
// dense delta of the mean generally differs from the mean of dense deltas.
inline LoraDelta fuse_average(const std::vector<LoraDelta>& deltas) {
    if (deltas.empty()) throw std::invalid_argument("fuse_average: empty input");
    const auto& first = deltas[0];
    for (const auto& d : deltas)
        if (d.rank != first.rank || d.num_layers() != first.num_layers() || d.alpha != first.alpha)
            throw std::invalid_argument("fuse_average: rank/layout mismatch");
    LoraDelta out = LoraDelta::zeros(first.num_layers(), first.rank, first.alpha,
                                     first.layers[0][0].a.cols(), first.layers[0][0].b.rows());
    const double inv = 1.0 / static_cast<double>(deltas.size());
    for (int l = 0; l < first.num_layers(); ++l)
        for (int t = 0; t < kNumLoraTargets; ++t) {
            auto& acc = out.layers[static_cast<size_t>(l)][static_cast<size_t>(t)];
            for (const auto& d : deltas) {
                const auto& e = d.layers[static_cast<size_t>(l)][static_cast<size_t>(t)];
                for (size_t i = 0; i < acc.a.data().size(); ++i) acc.a.data()[i] += inv * e.a.data()[i];
                for (size_t i = 0; i < acc.b.data().size(); ++i) acc.b.data()[i] += inv * e.b.data()[i];
            }
        }
    return out;
}

inline int64_t lora_flat_len(int num_layers, int rank, int h_in, int h_out) {
    return static_cast<int64_t>(num_layers) * kNumLoraTargets * rank * (h_in + h_out);
}

inline std::vector<double> lora_flatten(const LoraDelta& d) {
    std::vector<double> out;
    for (const auto& layer : d.layers)
        for (const auto& e : layer) {
            out.insert(out.end(), e.a.data().begin(), e.a.data().end());
            out.insert(out.end(), e.b.data().begin(), e.b.data().end());
        }
    return out;
}

inline LoraDelta lora_unflatten(const std::vector<double>& flat, int num_layers, int rank, double alpha, int h_in,
                                int h_out) {
    if (static_cast<int64_t>(flat.size()) != lora_flat_len(num_layers, rank, h_in, h_out))
        throw std::invalid_argument("lora_unflatten: length mismatch");
    LoraDelta d;
    d.rank = rank;
    d.alpha = alpha;
    d.layers.resize(static_cast<size_t>(num_layers));
    size_t off = 0;
    for (auto& layer : d.layers)
        for (auto& e : layer) {
            std::vector<double> av(flat.begin() + off, flat.begin() + off + static_cast<size_t>(rank) * h_in);
            off += static_cast<size_t>(rank) * h_in;
            std::vector<double> bv(flat.begin() + off, flat.begin() + off + static_cast<size_t>(h_out) * rank);
            off += static_cast<size_t>(h_out) * rank;
            e.a = Tensor::from({rank, h_in}, std::move(av));
            e.b = Tensor::from({h_out, rank}, std::move(bv));
        }
    return d;
}

// adapter file = shared container with a manifest of rank/alpha/targets
inline void save_lora(const LoraDelta& d, const std::string& path, nlohmann::json extra = {}) {
    Checkpoint ck;
    ck.config = std::move(extra);
    ck.config["kind"] = "lora_adapter";
    ck.config["rank"] = d.rank;
    ck.config["alpha"] = d.alpha;
    ck.config["targets"] = {kLoraTargetNames[0], kLoraTargetNames[1]};
    for (int l = 0; l < d.num_layers(); ++l)
        for (int t = 0; t < kNumLoraTargets; ++t) {
            const auto& e = d.layers[static_cast<size_t>(l)][static_cast<size_t>(t)];
            const std::string prefix = "layer" + std::to_string(l) + "." + kLoraTargetNames[t];
            ck.add(prefix + ".a", e.a);
            ck.add(prefix + ".b", e.b);
        }
    ck.save(path);
}

inline LoraDelta load_lora(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.config.value("kind", "") != "lora_adapter")
        throw std::runtime_error("load_lora: not an adapter file: " + path);
    LoraDelta d;
    d.rank = ck.config.at("rank").get<int>();
    d.alpha = ck.config.at("alpha").get<double>();
    for (int l = 0;; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        if (!ck.find(prefix + kLoraTargetNames[0] + ".a")) break;
        std::array<LoraEntry, kNumLoraTargets> layer;
        for (int t = 0; t < kNumLoraTargets; ++t) {
            layer[static_cast<size_t>(t)].a = ck.require(prefix + kLoraTargetNames[t] + ".a");
            layer[static_cast<size_t>(t)].b = ck.require(prefix + kLoraTargetNames[t] + ".b");
        }
        d.layers.push_back(layer);
    }
    return d;
}

}  // namespace paragen
