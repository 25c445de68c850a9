// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer language model: pre-LN blocks, causal multi-head
// attention, GELU FFN, sinusoidal positions, untied output head. The forward
// pass captures every block output (the per-layer hidden states) and can
// inject a low-rank adapter on the attention query/value projections.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "paragen/checkpoint.hpp"
#include "paragen/lora.hpp"
#include "paragen/optim.hpp"
#include "paragen/rng.hpp"
#include "paragen/tensor.hpp"

namespace paragen {

struct LmConfig {
    int vocab_size = 0;
    int hidden = 128;
    int layers = 4;
    int heads = 4;
    int ffn = 256;
    int max_seq = 192;
    uint64_t seed = 11;

    void validate() const {
        if (vocab_size <= 0) throw std::invalid_argument("LmConfig: vocab_size must be positive");
        if (layers < 2) throw std::invalid_argument("LmConfig: at least two layers required");
        if (hidden % heads != 0) throw std::invalid_argument("LmConfig: hidden must divide by heads");
    }

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size}, {"hidden", hidden},   {"layers", layers}, {"heads", heads},
                {"ffn", ffn},               {"max_seq", max_seq}, {"seed", seed}};
    }
    static LmConfig from_json(const nlohmann::json& j) {
        LmConfig c;
        c.vocab_size = j.at("vocab_size");
        c.hidden = j.at("hidden");
        c.layers = j.at("layers");
        c.heads = j.at("heads");
        c.ffn = j.at("ffn");
        c.max_seq = j.at("max_seq");
        c.seed = j.at("seed");
        return c;
    }
    uint64_t hash() const {
        const std::string s = to_json().dump();
        return fnv1a64(s.data(), s.size());
    }
};

struct LmBlock {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv, wo;  // (in, out) storage
    Tensor bq, bk, bv, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

// fixed sinusoidal position table, (max_seq x h). The amplitude is kept
// comparable to the token-embedding scale so token identity is not drowned
// out at initialization.
inline Tensor sinusoid_positions(int max_seq, int h, double amplitude = 0.1) {
    Tensor p = Tensor::zeros({max_seq, h});
    for (int t = 0; t < max_seq; ++t)
        for (int j = 0; j < h / 2; ++j) {
            const double freq = std::pow(10000.0, -2.0 * j / static_cast<double>(h));
            p.at(t, 2 * j) = amplitude * std::sin(t * freq);
            p.at(t, 2 * j + 1) = amplitude * std::cos(t * freq);
        }
    return p;
}

inline LmBlock init_block(int h, int ffn, Rng& rng, double sd = 0.05) {
    auto w = [&](int r, int c) { return Tensor::from({r, c}, rng.normal_vec(static_cast<size_t>(r) * c, 0.0, sd), true); };
    LmBlock b;
    b.ln1_g = Tensor::from({h}, std::vector<double>(h, 1.0), true);
    b.ln1_b = Tensor::zeros({h}, true);
    b.wq = w(h, h);
    b.wk = w(h, h);
    b.wv = w(h, h);
    b.wo = w(h, h);
    b.bq = Tensor::zeros({h}, true);
    b.bk = Tensor::zeros({h}, true);
    b.bv = Tensor::zeros({h}, true);
    b.bo = Tensor::zeros({h}, true);
    b.ln2_g = Tensor::from({h}, std::vector<double>(h, 1.0), true);
    b.ln2_b = Tensor::zeros({h}, true);
    b.w1 = w(h, ffn);
    b.b1 = Tensor::zeros({ffn}, true);
    b.w2 = w(ffn, h);
    b.b2 = Tensor::zeros({h}, true);
    return b;
}

inline void collect_block_params(LmBlock& b, std::vector<Tensor>& ps) {
    for (auto* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.bq, &b.bk, &b.bv, &b.bo, &b.ln2_g, &b.ln2_b,
                    &b.w1, &b.b1, &b.w2, &b.b2})
        ps.push_back(*t);
}

struct LmModel {
    LmConfig cfg;
    int mask_id = -1;  // token id routed to e_mask instead of tok_emb
    Tensor tok_emb;    // V x h
    Tensor e_mask;     // h; frozen placeholder (see mask.hpp)
    std::vector<LmBlock> blocks;
    Tensor lnf_g, lnf_b;
    Tensor w_out;  // h x V
    Tensor b_out;  // V
    Tensor pos;    // constant

    static LmModel init(const LmConfig& cfg, int mask_id) {
        cfg.validate();
        Rng rng(cfg.seed);
        LmModel m;
        m.cfg = cfg;
        m.mask_id = mask_id;
        const int h = cfg.hidden, V = cfg.vocab_size;
        auto w = [&](int r, int c, double sd) { return Tensor::from({r, c}, rng.normal_vec(static_cast<size_t>(r) * c, 0.0, sd), true); };
        m.tok_emb = w(V, h, 0.05);
        m.e_mask = Tensor::zeros({h});
        for (int l = 0; l < cfg.layers; ++l) m.blocks.push_back(init_block(h, cfg.ffn, rng));
        m.lnf_g = Tensor::from({h}, std::vector<double>(h, 1.0), true);
        m.lnf_b = Tensor::zeros({h}, true);
        m.w_out = w(h, V, 0.02);
        m.b_out = Tensor::zeros({V}, true);
        m.pos = sinusoid_positions(cfg.max_seq, h);
        return m;
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> ps{tok_emb};
        for (auto& b : blocks) collect_block_params(b, ps);
        ps.push_back(lnf_g);
        ps.push_back(lnf_b);
        ps.push_back(w_out);
        ps.push_back(b_out);
        return ps;
    }

    void set_trainable(bool on) {
        for (auto& p : parameters()) p.set_requires_grad(on);
    }

    // checksum over theta (excludes e_mask, which has its own freeze contract)
    uint64_t checksum() {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (auto& p : parameters()) h = fnv1a64(p.data(), h);
        return h;
    }
    uint64_t mask_checksum() const { return fnv1a64(e_mask.data()); }

    // read-only view of the token embedding matrix E
    const Tensor& embedding_matrix() const { return tok_emb; }
};

struct ForwardTrace {
    Tensor logits;               // (#rows x V); rows listed in logit_rows, or all T when empty
    std::vector<int> logit_rows;
    std::vector<Tensor> hidden;  // exactly M block outputs, each (T x h)
    std::vector<int> tokens;
};

namespace detail {

inline Tensor lora_path(const Tensor& x, const LoraEntry& e, double sc) {
    // x (T x h_in) -> (T x r) -> (T x h_out), scaled by alpha/r
    return scale(matmul_nt(matmul_nt(x, e.a), e.b), sc);
}

inline Tensor attention(const Tensor& x, const LmBlock& b, int heads, bool causal, const LoraEntry* lq = nullptr,
                        const LoraEntry* lv = nullptr, double lora_scale = 0.0) {
    const int h = x.cols();
    const int dh = h / heads;
    Tensor q = add_rowvec(matmul(x, b.wq), b.bq);
    Tensor k = add_rowvec(matmul(x, b.wk), b.bk);
    Tensor v = add_rowvec(matmul(x, b.wv), b.bv);
    if (lq) q = add(q, lora_path(x, *lq, lora_scale));
    if (lv) v = add(v, lora_path(x, *lv, lora_scale));
    std::vector<Tensor> ctx;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int i = 0; i < heads; ++i) {
        Tensor qh = slice_cols(q, i * dh, (i + 1) * dh);
        Tensor kh = slice_cols(k, i * dh, (i + 1) * dh);
        Tensor vh = slice_cols(v, i * dh, (i + 1) * dh);
        Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
        Tensor p = causal ? causal_softmax_rows(scores) : softmax_rows(scores);
        ctx.push_back(matmul(p, vh));
    }
    return add_rowvec(matmul(concat_cols(ctx), b.wo), b.bo);
}

// pre-LN residual block: x + att(ln(x)), then + ffn(ln(.))
inline Tensor block_forward(const Tensor& x, const LmBlock& b, int heads, bool causal, const LoraEntry* lq = nullptr,
                            const LoraEntry* lv = nullptr, double lora_scale = 0.0) {
    Tensor y = add(x, attention(layer_norm_rows(x, b.ln1_g, b.ln1_b), b, heads, causal, lq, lv, lora_scale));
    Tensor f = layer_norm_rows(y, b.ln2_g, b.ln2_b);
    f = add_rowvec(matmul(gelu(add_rowvec(matmul(f, b.w1), b.b1)), b.w2), b.b2);
    return add(y, f);
}

}  // namespace detail

// Full forward pass. `adapter` (optional) adds (alpha/r) B A to the query and
// value projections of every layer; `logit_rows` restricts the output head to
// the listed positions (empty/null = all positions).
inline ForwardTrace lm_forward(const LmModel& m, const std::vector<int>& tokens, const LoraDelta* adapter = nullptr,
                               const std::vector<int>* logit_rows = nullptr) {
    const int T = static_cast<int>(tokens.size());
    if (T == 0) throw std::invalid_argument("lm_forward: empty input");
    if (T > m.cfg.max_seq) throw std::invalid_argument("lm_forward: sequence exceeds max length");
    for (int id : tokens)
        if (id < 0 || id >= m.cfg.vocab_size) throw std::out_of_range("lm_forward: token id out of range");
    if (adapter && adapter->num_layers() != m.cfg.layers)
        throw std::invalid_argument("lm_forward: adapter layer count mismatch");

    ForwardTrace tr;
    tr.tokens = tokens;
    Tensor x = add(embed_tokens(m.tok_emb, m.e_mask, tokens, m.mask_id), slice_rows(m.pos, 0, T));
    for (int l = 0; l < m.cfg.layers; ++l) {
        const auto& b = m.blocks[static_cast<size_t>(l)];
        const LoraEntry* lq = adapter ? &adapter->layers[static_cast<size_t>(l)][0] : nullptr;
        const LoraEntry* lv = adapter ? &adapter->layers[static_cast<size_t>(l)][1] : nullptr;
        x = detail::block_forward(x, b, m.cfg.heads, true, lq, lv, adapter ? adapter->scale() : 0.0);
        tr.hidden.push_back(x);
    }
    Tensor fin = layer_norm_rows(x, m.lnf_g, m.lnf_b);
    if (logit_rows && !logit_rows->empty()) {
        tr.logit_rows = *logit_rows;
        fin = gather_rows(fin, *logit_rows);
    }
    tr.logits = add_rowvec(matmul(fin, m.w_out), m.b_out);
    return tr;
}

// merged-weight counterpart of adapter injection: W' = W + (alpha/r) B A,
// transposed into the model's (in, out) storage
inline LmModel merge_adapter(const LmModel& m, const LoraDelta& d) {
    if (d.num_layers() != m.cfg.layers) throw std::invalid_argument("merge_adapter: layer count mismatch");
    LmModel out = m;
    out.blocks = m.blocks;
    const double sc = d.scale();
    const int h = m.cfg.hidden;
    for (int l = 0; l < m.cfg.layers; ++l) {
        auto& b = out.blocks[static_cast<size_t>(l)];
        for (int t = 0; t < kNumLoraTargets; ++t) {
            const auto& e = d.layers[static_cast<size_t>(l)][static_cast<size_t>(t)];
            Tensor w_old = (t == 0) ? b.wq : b.wv;
            Tensor w_new = Tensor::from(w_old.shape(), w_old.data(), w_old.requires_grad());
            for (int i = 0; i < h; ++i)          // in
                for (int o = 0; o < h; ++o) {    // out
                    double dv = 0.0;
                    for (int r = 0; r < d.rank; ++r) dv += e.b.at(o, r) * e.a.at(r, i);
                    w_new.at(i, o) += sc * dv;
                }
            if (t == 0)
                b.wq = w_new;
            else
                b.wv = w_new;
        }
    }
    return out;
}

// argmax continuation; ties resolve to the lowest token id. Stops after
// emitting `stop_token` or at max_new_tokens.
inline std::vector<int> greedy_decode(const LmModel& m, const std::vector<int>& prompt, int stop_token,
                                      int max_new_tokens, const LoraDelta* adapter = nullptr) {
    if (prompt.empty()) throw std::invalid_argument("greedy_decode: empty prompt");
    std::vector<int> seq = prompt;
    std::vector<int> out;
    for (int step = 0; step < max_new_tokens; ++step) {
        if (static_cast<int>(seq.size()) >= m.cfg.max_seq) break;
        std::vector<int> last{static_cast<int>(seq.size()) - 1};
        ForwardTrace tr = lm_forward(m, seq, adapter, &last);
        const auto& row = tr.logits.data();
        int best = 0;
        for (int j = 1; j < m.cfg.vocab_size; ++j)
            if (row[static_cast<size_t>(j)] > row[static_cast<size_t>(best)]) best = j;
        out.push_back(best);
        seq.push_back(best);
        if (best == stop_token) break;
    }
    return out;
}

// mean next-token NLL over a sequence (rows 0..T-2 predict tokens 1..T-1)
inline Tensor lm_nll(const LmModel& m, const std::vector<int>& tokens) {
    const int T = static_cast<int>(tokens.size());
    if (T < 2) throw std::invalid_argument("lm_nll: sequence too short");
    std::vector<int> rows(static_cast<size_t>(T - 1));
    for (int i = 0; i < T - 1; ++i) rows[static_cast<size_t>(i)] = i;
    ForwardTrace tr = lm_forward(m, tokens, nullptr, &rows);
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    return nll_from_logits(tr.logits, targets);
}

struct PretrainOpts {
    int64_t steps = 2000;
    int batch = 4;
    double base_lr = 1.5e-3;
    double end_lr = 1e-6;
    double warmup_fraction = 0.1;
    double weight_decay = 0.01;
    uint64_t seed = 1;
    int max_consecutive_divergence = 10;
};

// Next-token pretraining over episode sequences; the desk-scale stand-in
// for a pretrained backbone. Deterministic per (cfg.seed, opts.seed).
inline LmModel pretrain_lm(const std::vector<std::vector<int>>& corpus, const LmConfig& cfg, const PretrainOpts& opts,
                           int mask_id, std::vector<double>* loss_log = nullptr) {
    if (corpus.empty()) throw std::invalid_argument("pretrain_lm: empty corpus");
    LmModel m = LmModel::init(cfg, mask_id);
    LrSchedule sched;
    sched.base_lr = opts.base_lr;
    sched.end_lr = opts.end_lr;
    sched.warmup_fraction = opts.warmup_fraction;
    sched.total_steps = opts.steps;
    AdamwConfig acfg;
    acfg.weight_decay = opts.weight_decay;
    AdamW opt(m.parameters(), acfg, sched);
    Rng rng(opts.seed);
    int diverged_streak = 0;
    for (int64_t step = 0; step < opts.steps; ++step) {
        opt.zero_grad();
        double step_loss = 0.0;
        for (int bi = 0; bi < opts.batch; ++bi) {
            const auto& seq = corpus[static_cast<size_t>(rng.below(corpus.size()))];
            Tensor loss = scale(lm_nll(m, seq), 1.0 / opts.batch);
            step_loss += loss.item();
            backward(loss);
        }
        if (opt.step() == StepStatus::diverged) {
            if (++diverged_streak >= opts.max_consecutive_divergence)
                throw DivergenceError("pretrain_lm: persistent divergence at step " + std::to_string(step));
        } else {
            diverged_streak = 0;
        }
        if (loss_log) loss_log->push_back(step_loss);
    }
    return m;
}

// -------- checkpoint io --------

inline void save_lm(LmModel& m, const std::string& path) {
    Checkpoint ck;
    ck.config["kind"] = "lm";
    ck.config["lm"] = m.cfg.to_json();
    ck.config["lm_config_hash"] = m.cfg.hash();
    ck.config["mask_id"] = m.mask_id;
    ck.add("tok_emb", m.tok_emb);
    ck.add("e_mask", m.e_mask);
    for (int l = 0; l < m.cfg.layers; ++l) {
        auto& b = m.blocks[static_cast<size_t>(l)];
        const std::string p = "block" + std::to_string(l) + ".";
        ck.add(p + "ln1_g", b.ln1_g);
        ck.add(p + "ln1_b", b.ln1_b);
        ck.add(p + "wq", b.wq);
        ck.add(p + "wk", b.wk);
        ck.add(p + "wv", b.wv);
        ck.add(p + "wo", b.wo);
        ck.add(p + "bq", b.bq);
        ck.add(p + "bk", b.bk);
        ck.add(p + "bv", b.bv);
        ck.add(p + "bo", b.bo);
        ck.add(p + "ln2_g", b.ln2_g);
        ck.add(p + "ln2_b", b.ln2_b);
        ck.add(p + "w1", b.w1);
        ck.add(p + "b1", b.b1);
        ck.add(p + "w2", b.w2);
        ck.add(p + "b2", b.b2);
    }
    ck.add("lnf_g", m.lnf_g);
    ck.add("lnf_b", m.lnf_b);
    ck.add("w_out", m.w_out);
    ck.add("b_out", m.b_out);
    ck.save(path);
}

inline LmModel load_lm(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.config.value("kind", "") != "lm") throw std::runtime_error("load_lm: not an lm checkpoint: " + path);
    LmConfig cfg = LmConfig::from_json(ck.config.at("lm"));
    LmModel m = LmModel::init(cfg, ck.config.at("mask_id").get<int>());
    auto take = [&](Tensor& dst, const std::string& name) {
        Tensor src = ck.require(name);
        if (src.shape() != dst.shape()) throw std::runtime_error("load_lm: shape mismatch for " + name);
        dst.data() = src.data();
    };
    take(m.tok_emb, "tok_emb");
    take(m.e_mask, "e_mask");
    for (int l = 0; l < cfg.layers; ++l) {
        auto& b = m.blocks[static_cast<size_t>(l)];
        const std::string p = "block" + std::to_string(l) + ".";
        take(b.ln1_g, p + "ln1_g");
        take(b.ln1_b, p + "ln1_b");
        take(b.wq, p + "wq");
        take(b.wk, p + "wk");
        take(b.wv, p + "wv");
        take(b.wo, p + "wo");
        take(b.bq, p + "bq");
        take(b.bk, p + "bk");
        take(b.bv, p + "bv");
        take(b.bo, p + "bo");
        take(b.ln2_g, p + "ln2_g");
        take(b.ln2_b, p + "ln2_b");
        take(b.w1, p + "w1");
        take(b.b1, p + "b1");
        take(b.w2, p + "w2");
        take(b.b2, p + "b2");
    }
    take(m.lnf_g, "lnf_g");
    take(m.lnf_b, "lnf_b");
    take(m.w_out, "w_out");
    take(m.b_out, "b_out");
    return m;
}

}  // namespace paragen
