// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// The parameter generator: a frozen bidirectional document encoder followed
// by a trainable stack of learnable queries, multi-head cross-attention,
// a self-attention encoder, and an FFN head that emits one flattened LoRA
// slice per LM layer.
//
// Only the generator weights train during distillation; the encoder is
// pretrained once with masked-token reconstruction and then frozen.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "paragen/checkpoint.hpp"
#include "paragen/lm.hpp"
#include "paragen/lora.hpp"
#include "paragen/optim.hpp"
#include "paragen/rng.hpp"
#include "paragen/tensor.hpp"

namespace paragen {

// -------- document encoder --------

struct EncoderConfig {
    int vocab_size = 0;
    int dim = 64;
    int layers = 2;
    int heads = 4;
    int ffn = 128;
    int max_seq = 192;
    uint64_t seed = 21;

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size}, {"dim", dim},         {"layers", layers},
                {"heads", heads},           {"ffn", ffn},         {"max_seq", max_seq},
                {"seed", seed}};
    }
    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig c;
        c.vocab_size = j.at("vocab_size");
        c.dim = j.at("dim");
        c.layers = j.at("layers");
        c.heads = j.at("heads");
        c.ffn = j.at("ffn");
        c.max_seq = j.at("max_seq");
        c.seed = j.at("seed");
        return c;
    }
};

struct DocEncoder {
    EncoderConfig cfg;
    bool frozen = false;
    Tensor tok_emb;  // V x d
    std::vector<LmBlock> blocks;
    Tensor lnf_g, lnf_b;
    Tensor w_mlm, b_mlm;  // reconstruction head, used only in pretraining
    Tensor pos;

    static DocEncoder init(const EncoderConfig& cfg) {
        if (cfg.vocab_size <= 0) throw std::invalid_argument("EncoderConfig: vocab_size must be positive");
        if (cfg.dim % cfg.heads != 0) throw std::invalid_argument("EncoderConfig: dim must divide by heads");
        Rng rng(cfg.seed);
        DocEncoder e;
        e.cfg = cfg;
        e.tok_emb = Tensor::from({cfg.vocab_size, cfg.dim},
                                 rng.normal_vec(static_cast<size_t>(cfg.vocab_size) * cfg.dim, 0.0, 0.05), true);
        for (int l = 0; l < cfg.layers; ++l) e.blocks.push_back(init_block(cfg.dim, cfg.ffn, rng));
        e.lnf_g = Tensor::from({cfg.dim}, std::vector<double>(static_cast<size_t>(cfg.dim), 1.0), true);
        e.lnf_b = Tensor::zeros({cfg.dim}, true);
        e.w_mlm = Tensor::from({cfg.dim, cfg.vocab_size},
                               rng.normal_vec(static_cast<size_t>(cfg.dim) * cfg.vocab_size, 0.0, 0.02), true);
        e.b_mlm = Tensor::zeros({cfg.vocab_size}, true);
        e.pos = sinusoid_positions(cfg.max_seq, cfg.dim);
        return e;
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> ps{tok_emb};
        for (auto& b : blocks) collect_block_params(b, ps);
        ps.push_back(lnf_g);
        ps.push_back(lnf_b);
        ps.push_back(w_mlm);
        ps.push_back(b_mlm);
        return ps;
    }

    void set_trainable(bool on) {
        for (auto& p : parameters()) p.set_requires_grad(on);
        frozen = !on;
    }

    uint64_t checksum() {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (auto& p : parameters()) h = fnv1a64(p.data(), h);
        return h;
    }
};

// one contextual d-vector per token position (bidirectional attention)
inline Tensor encode_documents(const DocEncoder& e, const std::vector<int>& tokens) {
    const int L = static_cast<int>(tokens.size());
    if (L == 0) throw std::invalid_argument("encode_documents: empty input");
    if (L > e.cfg.max_seq) throw std::invalid_argument("encode_documents: sequence exceeds encoder max length");
    for (int id : tokens)
        if (id < 0 || id >= e.cfg.vocab_size) throw std::out_of_range("encode_documents: token id out of range");
    Tensor x = add(gather_rows(e.tok_emb, tokens), slice_rows(e.pos, 0, L));
    for (const auto& b : e.blocks) x = detail::block_forward(x, b, e.cfg.heads, /*causal=*/false);
    return layer_norm_rows(x, e.lnf_g, e.lnf_b);
}

struct EncoderPretrainOpts {
    int64_t steps = 600;
    int batch = 8;
    double base_lr = 2e-3;
    double mask_prob = 0.15;
    uint64_t seed = 2;
    int max_consecutive_divergence = 10;
};

namespace detail {
// corrupt ~mask_prob of the positions with the placeholder id; at least one
inline std::vector<int> mlm_corrupt(const std::vector<int>& seq, int mask_id, double prob, Rng& rng,
                                    std::vector<int>& positions) {
    std::vector<int> out = seq;
    positions.clear();
    for (size_t i = 0; i < seq.size(); ++i)
        if (rng.uniform() < prob) {
            out[i] = mask_id;
            positions.push_back(static_cast<int>(i));
        }
    if (positions.empty()) {
        const auto i = static_cast<size_t>(rng.below(seq.size()));
        out[i] = mask_id;
        positions.push_back(static_cast<int>(i));
    }
    return out;
}
}  // namespace detail

// masked-token reconstruction pretraining; the encoder is frozen afterwards
inline DocEncoder pretrain_encoder(const std::vector<std::vector<int>>& docs, const EncoderConfig& cfg,
                                   const EncoderPretrainOpts& opts, int mask_id) {
    if (docs.empty()) throw std::invalid_argument("pretrain_encoder: empty corpus");
    DocEncoder enc = DocEncoder::init(cfg);
    LrSchedule sched;
    sched.base_lr = opts.base_lr;
    sched.end_lr = 1e-6;
    sched.total_steps = opts.steps;
    AdamW opt(enc.parameters(), {}, sched);
    Rng rng(opts.seed);
    int streak = 0;
    for (int64_t step = 0; step < opts.steps; ++step) {
        opt.zero_grad();
        for (int bi = 0; bi < opts.batch; ++bi) {
            const auto& seq = docs[static_cast<size_t>(rng.below(docs.size()))];
            std::vector<int> positions;
            auto corrupted = detail::mlm_corrupt(seq, mask_id, opts.mask_prob, rng, positions);
            Tensor ctx = encode_documents(enc, corrupted);
            Tensor logits = add_rowvec(matmul(gather_rows(ctx, positions), enc.w_mlm), enc.b_mlm);
            std::vector<int> targets;
            for (int p : positions) targets.push_back(seq[static_cast<size_t>(p)]);
            backward(scale(nll_from_logits(logits, targets), 1.0 / opts.batch));
        }
        if (opt.step() == StepStatus::diverged) {
            if (++streak >= opts.max_consecutive_divergence)
                throw DivergenceError("pretrain_encoder: persistent divergence at step " + std::to_string(step));
        } else {
            streak = 0;
        }
    }
    enc.set_trainable(false);
    return enc;
}

// held-out reconstruction accuracy of the masked-token head
inline double mlm_accuracy(const DocEncoder& enc, const std::vector<std::vector<int>>& docs, int mask_id,
                           uint64_t seed, double mask_prob = 0.15) {
    Rng rng(seed);
    int64_t correct = 0, total = 0;
    for (const auto& seq : docs) {
        std::vector<int> positions;
        auto corrupted = detail::mlm_corrupt(seq, mask_id, mask_prob, rng, positions);
        Tensor ctx = encode_documents(enc, corrupted);
        Tensor logits = add_rowvec(matmul(gather_rows(ctx, positions), enc.w_mlm), enc.b_mlm);
        for (size_t r = 0; r < positions.size(); ++r) {
            int best = 0;
            for (int j = 1; j < enc.cfg.vocab_size; ++j)
                if (logits.at(static_cast<int>(r), j) > logits.at(static_cast<int>(r), best)) best = j;
            correct += (best == seq[static_cast<size_t>(positions[r])]) ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// -------- generator --------

struct GeneratorConfig {
    int enc_dim = 64;    // d; must match the encoder output width
    int lm_layers = 4;   // one query row per LM layer
    int lm_hidden = 128;
    int heads = 4;       // cross-attention heads
    int sa_layers = 2;   // self-attention encoder depth
    int ffn = 256;       // hidden width of SA blocks and the output head
    int rank = 2;
    double alpha = 32.0;
    uint64_t seed = 31;

    // flattened LoRA length for one LM layer (both targets)
    int64_t slice_len() const {
        return static_cast<int64_t>(kNumLoraTargets) * rank * (2 * lm_hidden);
    }

    nlohmann::json to_json() const {
        return {{"enc_dim", enc_dim},     {"lm_layers", lm_layers}, {"lm_hidden", lm_hidden},
                {"heads", heads},         {"sa_layers", sa_layers}, {"ffn", ffn},
                {"rank", rank},           {"alpha", alpha},         {"seed", seed}};
    }
    static GeneratorConfig from_json(const nlohmann::json& j) {
        GeneratorConfig c;
        c.enc_dim = j.at("enc_dim");
        c.lm_layers = j.at("lm_layers");
        c.lm_hidden = j.at("lm_hidden");
        c.heads = j.at("heads");
        c.sa_layers = j.at("sa_layers");
        c.ffn = j.at("ffn");
        c.rank = j.at("rank");
        c.alpha = j.at("alpha");
        c.seed = j.at("seed");
        return c;
    }
};

struct GeneratorNet {
    GeneratorConfig cfg;
    Tensor queries;  // lm_layers x d
    Tensor ca_wq, ca_wk, ca_wv, ca_wo;  // d x d
    Tensor ca_bq, ca_bk, ca_bv, ca_bo;
    std::vector<LmBlock> sa_blocks;
    Tensor head_w1, head_b1;  // d -> ffn
    Tensor head_w2, head_b2;  // ffn -> slice_len, zero-initialized

    static GeneratorNet init(const GeneratorConfig& cfg) {
        if (cfg.enc_dim % cfg.heads != 0) throw std::invalid_argument("GeneratorConfig: enc_dim must divide by heads");
        Rng rng(cfg.seed);
        GeneratorNet g;
        g.cfg = cfg;
        const int d = cfg.enc_dim;
        auto w = [&](int r, int c, double sd) { return Tensor::from({r, c}, rng.normal_vec(static_cast<size_t>(r) * c, 0.0, sd), true); };
        g.queries = w(cfg.lm_layers, d, 0.5);
        g.ca_wq = w(d, d, 0.05);
        g.ca_wk = w(d, d, 0.05);
        g.ca_wv = w(d, d, 0.05);
        g.ca_wo = w(d, d, 0.05);
        g.ca_bq = Tensor::zeros({d}, true);
        g.ca_bk = Tensor::zeros({d}, true);
        g.ca_bv = Tensor::zeros({d}, true);
        g.ca_bo = Tensor::zeros({d}, true);
        for (int l = 0; l < cfg.sa_layers; ++l) g.sa_blocks.push_back(init_block(d, cfg.ffn, rng));
        g.head_w1 = w(d, cfg.ffn, 0.05);
        g.head_b1 = Tensor::zeros({cfg.ffn}, true);
        // Antisymmetric tied head init: consecutive rank pairs emit identical
        // A rows and negated B columns, so every generated dense delta starts
        // at exactly zero (student == base model) while both factors stay
        // non-degenerate and gradients reach the whole generator from the
        // first batch. A literally zero head would zero both LoRA factors and
        // block all gradient flow through B*A. Odd trailing ranks fall back
        // to zeroed B columns.
        g.head_w2 = w(cfg.ffn, static_cast<int>(cfg.slice_len()), 0.05);
        g.head_b2 = Tensor::zeros({static_cast<int>(cfg.slice_len())}, true);
        const int h = cfg.lm_hidden, r = cfg.rank;
        for (int t = 0; t < kNumLoraTargets; ++t) {
            const int a_off = t * 2 * r * h;      // A block: (r x h) row-major
            const int b_off = a_off + r * h;      // B block: (h x r) row-major
            for (int ri = 0; ri + 1 < r; ri += 2) {
                for (int j = 0; j < h; ++j)
                    for (int i = 0; i < cfg.ffn; ++i) {
                        g.head_w2.at(i, a_off + (ri + 1) * h + j) = g.head_w2.at(i, a_off + ri * h + j);
                        g.head_w2.at(i, b_off + j * r + ri + 1) = -g.head_w2.at(i, b_off + j * r + ri);
                    }
            }
            if (r % 2 == 1)
                for (int j = 0; j < h; ++j)
                    for (int i = 0; i < cfg.ffn; ++i) g.head_w2.at(i, b_off + j * r + (r - 1)) = 0.0;
        }
        return g;
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> ps{queries, ca_wq, ca_wk, ca_wv, ca_wo, ca_bq, ca_bk, ca_bv, ca_bo};
        for (auto& b : sa_blocks) collect_block_params(b, ps);
        ps.push_back(head_w1);
        ps.push_back(head_b1);
        ps.push_back(head_w2);
        ps.push_back(head_b2);
        return ps;
    }

    void set_trainable(bool on) {
        for (auto& p : parameters()) p.set_requires_grad(on);
    }

    uint64_t checksum() {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (auto& p : parameters()) h = fnv1a64(p.data(), h);
        return h;
    }
};

// H0 = CrossAttention(Q, E_D, E_D); H1 = SelfAttentionEncoder(H0);
// FFN(H1) rows unflattened into per-layer (A, B) pairs.
inline LoraDelta generate_lora(const GeneratorNet& g, const Tensor& e_d) {
    const auto& cfg = g.cfg;
    if (e_d.cols() != cfg.enc_dim) throw std::invalid_argument("generate_lora: encoder width mismatch");
    const int d = cfg.enc_dim;
    const int dh = d / cfg.heads;

    Tensor q = add_rowvec(matmul(g.queries, g.ca_wq), g.ca_bq);
    Tensor k = add_rowvec(matmul(e_d, g.ca_wk), g.ca_bk);
    Tensor v = add_rowvec(matmul(e_d, g.ca_wv), g.ca_bv);
    std::vector<Tensor> ctx;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int i = 0; i < cfg.heads; ++i) {
        Tensor qh = slice_cols(q, i * dh, (i + 1) * dh);
        Tensor kh = slice_cols(k, i * dh, (i + 1) * dh);
        Tensor vh = slice_cols(v, i * dh, (i + 1) * dh);
        ctx.push_back(matmul(softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dh)), vh));
    }
    Tensor h0 = add_rowvec(matmul(concat_cols(ctx), g.ca_wo), g.ca_bo);

    Tensor h1 = h0;
    for (const auto& b : g.sa_blocks) h1 = detail::block_forward(h1, b, cfg.heads, /*causal=*/false);

    Tensor out = add_rowvec(matmul(gelu(add_rowvec(matmul(h1, g.head_w1), g.head_b1)), g.head_w2), g.head_b2);

    // unflatten rows into the documented LoRA element order
    const int h = cfg.lm_hidden;
    const int r = cfg.rank;
    LoraDelta delta;
    delta.rank = r;
    delta.alpha = cfg.alpha;
    delta.layers.resize(static_cast<size_t>(cfg.lm_layers));
    for (int l = 0; l < cfg.lm_layers; ++l) {
        Tensor row = slice_rows(out, l, l + 1);
        int off = 0;
        for (int t = 0; t < kNumLoraTargets; ++t) {
            Tensor a = reshape(slice_cols(row, off, off + r * h), {r, h});
            off += r * h;
            Tensor b = reshape(slice_cols(row, off, off + h * r), {h, r});
            off += h * r;
            delta.layers[static_cast<size_t>(l)][static_cast<size_t>(t)] = {a, b};
        }
    }
    return delta;
}

// -------- checkpoint io --------

inline void save_encoder(DocEncoder& e, const std::string& path) {
    Checkpoint ck;
    ck.config["kind"] = "doc_encoder";
    ck.config["encoder"] = e.cfg.to_json();
    ck.config["frozen"] = e.frozen;
    int i = 0;
    for (auto& p : e.parameters()) ck.add("p" + std::to_string(i++), p);
    ck.save(path);
}

inline DocEncoder load_encoder(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.config.value("kind", "") != "doc_encoder")
        throw std::runtime_error("load_encoder: not an encoder checkpoint: " + path);
    DocEncoder e = DocEncoder::init(EncoderConfig::from_json(ck.config.at("encoder")));
    int i = 0;
    for (auto& p : e.parameters()) {
        Tensor src = ck.require("p" + std::to_string(i++));
        if (src.shape() != p.shape()) throw std::runtime_error("load_encoder: shape mismatch");
        p.data() = src.data();
    }
    if (ck.config.value("frozen", false)) e.set_trainable(false);
    return e;
}

// generator checkpoints bind to an LM config hash and carry the frozen
// mask embedding so inference reproduces the training-time student exactly
inline void save_generator(GeneratorNet& g, const std::string& path, uint64_t lm_config_hash,
                           const std::vector<double>& e_mask, const std::string& mask_mode) {
    Checkpoint ck;
    ck.config["kind"] = "generator";
    ck.config["generator"] = g.cfg.to_json();
    ck.config["lm_config_hash"] = lm_config_hash;
    ck.config["mask_mode"] = mask_mode;
    int i = 0;
    for (auto& p : g.parameters()) ck.add("p" + std::to_string(i++), p);
    ck.add("e_mask", Tensor::from({static_cast<int>(e_mask.size())}, e_mask));
    ck.save(path);
}

struct LoadedGenerator {
    GeneratorNet net;
    std::vector<double> e_mask;
    std::string mask_mode;
};

inline LoadedGenerator load_generator(const std::string& path, uint64_t expected_lm_hash) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.config.value("kind", "") != "generator")
        throw std::runtime_error("load_generator: not a generator checkpoint: " + path);
    if (ck.config.at("lm_config_hash").get<uint64_t>() != expected_lm_hash)
        throw std::runtime_error("load_generator: checkpoint was trained against a different LM config");
    LoadedGenerator lg{GeneratorNet::init(GeneratorConfig::from_json(ck.config.at("generator"))), {}, ""};
    int i = 0;
    for (auto& p : lg.net.parameters()) {
        Tensor src = ck.require("p" + std::to_string(i++));
        if (src.shape() != p.shape()) throw std::runtime_error("load_generator: shape mismatch");
        p.data() = src.data();
    }
    lg.e_mask = ck.require("e_mask").data();
    lg.mask_mode = ck.config.value("mask_mode", "stats");
    return lg;
}

}  // namespace paragen
