// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Distillation objectives and the generator training loop. The teacher is
// the plaintext-context model f_theta(x); the student is f_{theta+delta}
// on the masked input. Only the generator weights (plus the mask embedding
// in the trainable-token ablation) receive gradients.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "paragen/datagen.hpp"
#include "paragen/generator.hpp"
#include "paragen/lm.hpp"
#include "paragen/mask.hpp"
#include "paragen/optim.hpp"
#include "paragen/tokenizer.hpp"

namespace paragen {

enum class CosPolicy { all_positions, answer_only };

struct DistillConfig {
    double lambda1 = 0.5;   // hidden-state alignment weight
    double lambda2 = 0.1;   // logit alignment weight
    int batch_size = 4;
    int epochs = 1;
    double base_lr = 1e-4;
    double end_lr = 1e-6;
    double warmup_fraction = 0.1;
    double lr_power = 1.0;
    double weight_decay = 0.01;
    uint64_t seed = 7;
    CosPolicy cos_policy = CosPolicy::all_positions;
    MaskInitMode mask_mode = MaskInitMode::stats;
    int max_consecutive_divergence = 10;

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("DistillConfig: lambdas must be non-negative");
        if (batch_size < 1 || epochs < 1) throw std::invalid_argument("DistillConfig: bad batch/epochs");
    }
};

struct LossBreakdown {
    double gen = 0, cos = 0, kl = 0, total = 0;
    std::vector<double> per_layer_cos;
    double lr = 0;
    int64_t step = 0;
};

// rows whose logits predict the answer tokens (and the terminator)
inline std::vector<int> answer_rows(const AnswerSpan& span) {
    if (span.start >= span.end) throw std::invalid_argument("answer_rows: empty span");
    if (span.start < 1) throw std::invalid_argument("answer_rows: span starts at the sequence head");
    std::vector<int> rows;
    for (int p = span.start - 1; p < span.end - 1; ++p) rows.push_back(p);
    return rows;
}

inline std::vector<int> answer_targets(const std::vector<int>& tokens, const AnswerSpan& span) {
    return {tokens.begin() + span.start, tokens.begin() + span.end};
}

// negative log-likelihood of the gold answer tokens; `logits` rows must be
// the answer-predicting rows in order
inline Tensor gen_loss(const Tensor& logits, const std::vector<int>& gold) {
    if (gold.empty()) throw std::invalid_argument("gen_loss: empty answer span");
    return nll_from_logits(logits, gold);
}

struct CosLoss {
    std::vector<Tensor> per_layer;  // 1 - mean cos per layer
    Tensor weighted;                // sum_i i * L_i / sum_i i
};

// layer weights are i / sum_j j (layers closer to the output weigh more);
// teacher states carry no gradient by construction
inline CosLoss cos_align_loss(const std::vector<Tensor>& teacher_hidden, const std::vector<Tensor>& student_hidden,
                              CosPolicy policy, const AnswerSpan& teacher_span, const AnswerSpan& student_span) {
    if (teacher_hidden.size() != student_hidden.size())
        throw std::invalid_argument("cos_align_loss: layer count mismatch");
    const int m = static_cast<int>(teacher_hidden.size());
    CosLoss out;
    double wsum = 0;
    for (int i = 1; i <= m; ++i) wsum += i;
    Tensor total = Tensor::scalar(0.0);
    for (int i = 0; i < m; ++i) {
        Tensor t = teacher_hidden[static_cast<size_t>(i)];
        Tensor s = student_hidden[static_cast<size_t>(i)];
        if (policy == CosPolicy::answer_only) {
            t = slice_rows(t, teacher_span.start, teacher_span.end);
            s = slice_rows(s, student_span.start, student_span.end);
        }
        if (t.rows() != s.rows())
            throw std::invalid_argument("cos_align_loss: sequence length mismatch (positionwise alignment broken)");
        Tensor li = add_scalar(scale(cos_rows_mean(t, s), -1.0), 1.0);
        out.per_layer.push_back(li);
        total = add(total, scale(li, static_cast<double>(i + 1) / wsum));
    }
    out.weighted = total;
    return out;
}

// mean KL(softmax(teacher) || softmax(student)) over the answer rows
inline Tensor kl_loss(const Tensor& teacher_logits, const Tensor& student_logits) {
    if (teacher_logits.rows() == 0) throw std::invalid_argument("kl_loss: empty answer span");
    return kl_rows_mean(teacher_logits, student_logits);
}

// one tokenized training example: concatenated documents, question, answer
struct DistillExample {
    std::vector<int> doc_tokens;
    std::vector<int> q_tokens;
    std::vector<int> a_tokens;
    std::string kind;
};

inline DistillExample prepare_example(const datagen::TrainingTriple& t, const datagen::FactWorld& w,
                                      const Tokenizer& tk) {
    DistillExample ex;
    std::string docs;
    for (size_t i = 0; i < t.doc_ids.size(); ++i) {
        if (i) docs += ' ';
        docs += w.doc(t.doc_ids[i]).text;
    }
    ex.doc_tokens = tk.encode(docs);
    ex.q_tokens = tk.encode(t.question);
    ex.a_tokens = tk.encode(t.answer);
    ex.kind = t.kind;
    return ex;
}

struct DistillSession {
    LmModel* lm = nullptr;
    const DocEncoder* enc = nullptr;
    GeneratorNet* gen = nullptr;
    const Tokenizer* tk = nullptr;
    DistillConfig cfg;
};

// forward one example through teacher and student and assemble the
// combined objective; returns the scalar graph plus logged components
inline Tensor distill_example_loss(DistillSession& s, const DistillExample& ex, LossBreakdown& bd) {
    const auto& cfg = s.cfg;
    SequenceBatch sb = build_pair(ex.doc_tokens, ex.q_tokens, ex.a_tokens, *s.tk, s.lm->cfg.max_seq, cfg.mask_mode);

    const auto t_rows = answer_rows(sb.teacher_span);
    ForwardTrace teacher = lm_forward(*s.lm, sb.teacher, nullptr, &t_rows);

    // generator consumes the (possibly truncated) document prefix
    std::vector<int> doc_part(sb.teacher.begin(), sb.teacher.begin() + sb.doc_len);
    Tensor e_d = encode_documents(*s.enc, doc_part);
    LoraDelta delta = generate_lora(*s.gen, e_d);

    const auto s_rows = answer_rows(sb.student_span);
    ForwardTrace student = lm_forward(*s.lm, sb.student, &delta, &s_rows);

    Tensor l_gen = gen_loss(student.logits, answer_targets(sb.student, sb.student_span));
    const CosPolicy policy = (cfg.mask_mode == MaskInitMode::none) ? CosPolicy::answer_only : cfg.cos_policy;
    CosLoss l_cos = cos_align_loss(teacher.hidden, student.hidden, policy, sb.teacher_span, sb.student_span);
    Tensor l_kl = kl_loss(teacher.logits, student.logits);

    Tensor total = add(add(l_gen, scale(l_cos.weighted, cfg.lambda1)), scale(l_kl, cfg.lambda2));
    bd.gen += l_gen.item();
    bd.cos += l_cos.weighted.item();
    bd.kl += l_kl.item();
    bd.total += total.item();
    if (bd.per_layer_cos.empty()) bd.per_layer_cos.assign(l_cos.per_layer.size(), 0.0);
    for (size_t i = 0; i < l_cos.per_layer.size(); ++i) bd.per_layer_cos[i] += l_cos.per_layer[i].item();
    return total;
}

// one optimizer step over a batch; gradients flow into the generator only
// (plus e_mask in trainable-token mode)
inline LossBreakdown train_step(DistillSession& s, const std::vector<DistillExample>& batch, AdamW& opt) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    opt.zero_grad();
    LossBreakdown bd;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) backward(scale(distill_example_loss(s, ex, bd), inv));
    bd.gen *= inv;
    bd.cos *= inv;
    bd.kl *= inv;
    bd.total *= inv;
    for (auto& v : bd.per_layer_cos) v *= inv;
    if (opt.step() == StepStatus::diverged) bd.total = std::numeric_limits<double>::quiet_NaN();
    bd.lr = opt.last_lr();
    return bd;
}

struct TrainLogEntry {
    int64_t step;
    double gen, cos, kl, total, lr;
};

// Full distillation run: freezes theta and psi, initializes the mask
// embedding per the configured mode, and fits omega for cfg.epochs over a
// seeded shuffle of the dataset.
inline GeneratorNet train_generator(LmModel& lm, DocEncoder& enc, const std::vector<DistillExample>& data,
                                    const Tokenizer& tk, const GeneratorConfig& gcfg, DistillConfig cfg,
                                    std::vector<TrainLogEntry>* log = nullptr) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("train_generator: empty dataset");
    if (gcfg.lm_layers != lm.cfg.layers || gcfg.lm_hidden != lm.cfg.hidden)
        throw std::invalid_argument("train_generator: generator/LM geometry mismatch");
    if (gcfg.enc_dim != enc.cfg.dim) throw std::invalid_argument("train_generator: generator/encoder width mismatch");

    lm.set_trainable(false);
    enc.set_trainable(false);

    MaskStats stats = compute_stats(lm.tok_emb);
    lm.e_mask.data() = init_mask_embedding(stats, cfg.mask_mode, cfg.seed);
    lm.e_mask.set_requires_grad(cfg.mask_mode == MaskInitMode::trainable);

    GeneratorNet gen = GeneratorNet::init(gcfg);
    DistillSession s{&lm, &enc, &gen, &tk, cfg};

    const int64_t steps_per_epoch = (static_cast<int64_t>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
    LrSchedule sched;
    sched.base_lr = cfg.base_lr;
    sched.end_lr = cfg.end_lr;
    sched.warmup_fraction = cfg.warmup_fraction;
    sched.power = cfg.lr_power;
    sched.total_steps = steps_per_epoch * cfg.epochs;
    AdamwConfig acfg;
    acfg.weight_decay = cfg.weight_decay;
    std::vector<Tensor> params = gen.parameters();
    if (cfg.mask_mode == MaskInitMode::trainable) params.push_back(lm.e_mask);
    AdamW opt(params, acfg, sched);

    Rng shuffle_rng(cfg.seed ^ 0x64697374ULL);
    std::vector<size_t> order(data.size());
    int64_t step = 0;
    int streak = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);
        for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
            std::vector<DistillExample> batch;
            for (size_t k = off; k < std::min(order.size(), off + static_cast<size_t>(cfg.batch_size)); ++k)
                batch.push_back(data[order[k]]);
            LossBreakdown bd = train_step(s, batch, opt);
            bd.step = step;
            if (std::isnan(bd.total)) {
                if (++streak >= cfg.max_consecutive_divergence)
                    throw DivergenceError("train_generator: persistent divergence at step " + std::to_string(step));
            } else {
                streak = 0;
            }
            if (log) log->push_back({step, bd.gen, bd.cos, bd.kl, bd.total, bd.lr});
            ++step;
        }
    }
    return gen;
}

}  // namespace paragen
