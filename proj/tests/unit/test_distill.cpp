// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "paragen/distill.hpp"

using namespace paragen;

namespace {

Tokenizer micro_tokenizer() {
    return Tokenizer::build(
        {"doc words here about facts question what is answer value other filler token a b c d e f g"});
}

struct MicroStack {
    Tokenizer tk;
    LmModel lm;
    DocEncoder enc;
    GeneratorConfig gcfg;

    static MicroStack make(uint64_t seed = 1) {
        Tokenizer tk = micro_tokenizer();
        LmConfig lcfg;
        lcfg.vocab_size = tk.vocab_size();
        lcfg.hidden = 12;
        lcfg.layers = 2;
        lcfg.heads = 3;
        lcfg.ffn = 16;
        lcfg.max_seq = 48;
        lcfg.seed = seed;
        EncoderConfig ecfg;
        ecfg.vocab_size = tk.vocab_size();
        ecfg.dim = 8;
        ecfg.layers = 1;
        ecfg.heads = 2;
        ecfg.ffn = 12;
        ecfg.max_seq = 48;
        ecfg.seed = seed + 1;
        GeneratorConfig gcfg;
        gcfg.enc_dim = 8;
        gcfg.lm_layers = 2;
        gcfg.lm_hidden = 12;
        gcfg.heads = 2;
        gcfg.sa_layers = 1;
        gcfg.ffn = 12;
        gcfg.rank = 2;
        gcfg.alpha = 32.0;
        gcfg.seed = seed + 2;
        return MicroStack{tk, LmModel::init(lcfg, tk.mask_id()), DocEncoder::init(ecfg), gcfg};
    }

    DistillExample example() const {
        DistillExample ex;
        ex.doc_tokens = tk.encode("doc words here about facts value");
        ex.q_tokens = tk.encode("what is value");
        ex.a_tokens = tk.encode("answer");
        ex.kind = "single";
        return ex;
    }
};

}  // namespace

TEST_CASE("gen_loss: one-hot limit, uniform value, hand-computed case") {
    // forced near-one-hot gold logits drive the loss to zero
    Tensor hot = Tensor::from({2, 4}, {30, 0, 0, 0, 0, 0, 30, 0});
    REQUIRE(gen_loss(hot, {0, 2}).item() == Catch::Approx(0.0).margin(1e-10));
    // uniform logits: ln V
    Tensor uni = Tensor::from({3, 5}, std::vector<double>(15, 0.7));
    REQUIRE(gen_loss(uni, {0, 1, 2}).item() == Catch::Approx(std::log(5.0)).epsilon(1e-12));
    // hand-applied softmax + log over 3 positions
    Tensor logits = Tensor::from({3, 3}, {1, 0, 0, 0, 2, 0, 0, 0, 3});
    std::vector<int> gold{0, 1, 2};
    double expect = 0;
    for (int i = 0; i < 3; ++i) {
        const double z = logits.at(i, 0), o1 = logits.at(i, 1), o2 = logits.at(i, 2);
        const double denom = std::exp(z) + std::exp(o1) + std::exp(o2);
        expect -= std::log(std::exp(logits.at(i, gold[static_cast<size_t>(i)])) / denom);
    }
    expect /= 3.0;
    REQUIRE(gen_loss(logits, gold).item() == Catch::Approx(expect).epsilon(1e-12));
    REQUIRE_THROWS_AS(gen_loss(hot, {}), std::invalid_argument);
}

TEST_CASE("cos_align_loss: identical traces give zero, antipodal gives two") {
    Rng rng(5);
    std::vector<Tensor> teacher, student_same, student_anti;
    for (int l = 0; l < 3; ++l) {
        auto v = rng.normal_vec(4 * 6, 0.0, 1.0);
        teacher.push_back(Tensor::from({4, 6}, v));
        student_same.push_back(Tensor::from({4, 6}, v));
        auto neg = v;
        for (auto& x : neg) x = -x;
        student_anti.push_back(Tensor::from({4, 6}, neg));
    }
    AnswerSpan span{1, 3};
    CosLoss same = cos_align_loss(teacher, student_same, CosPolicy::all_positions, span, span);
    for (auto& li : same.per_layer) REQUIRE(li.item() == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(same.weighted.item() == Catch::Approx(0.0).margin(1e-12));
    CosLoss anti = cos_align_loss(teacher, student_anti, CosPolicy::all_positions, span, span);
    for (auto& li : anti.per_layer) REQUIRE(li.item() == Catch::Approx(2.0).margin(1e-9));
    REQUIRE(anti.weighted.item() == Catch::Approx(2.0).margin(1e-9));
}

TEST_CASE("cos_align_loss: hand-applied layer weighting") {
    // M=3 with per-layer losses (0.3, 0.6, 0.9) -> (1*0.3 + 2*0.6 + 3*0.9)/6 = 0.7
    std::vector<Tensor> teacher, student;
    const double targets[3] = {0.3, 0.6, 0.9};
    for (double li : targets) {
        const double c = 1.0 - li;  // desired cosine
        const double s = std::sqrt(1.0 - c * c);
        teacher.push_back(Tensor::from({1, 2}, {1.0, 0.0}));
        student.push_back(Tensor::from({1, 2}, {c, s}));
    }
    AnswerSpan span{0, 1};
    CosLoss cl = cos_align_loss(teacher, student, CosPolicy::all_positions, span, span);
    for (int i = 0; i < 3; ++i) REQUIRE(cl.per_layer[static_cast<size_t>(i)].item() == Catch::Approx(targets[i]).margin(1e-9));
    REQUIRE(cl.weighted.item() == Catch::Approx(0.7).margin(1e-9));
    // layer weights i / sum j sum to one: all-equal per-layer losses pass through
    std::vector<Tensor> ones_t, ones_s;
    for (int l = 0; l < 4; ++l) {
        ones_t.push_back(Tensor::from({1, 2}, {1.0, 0.0}));
        ones_s.push_back(Tensor::from({1, 2}, {0.0, 1.0}));  // cos 0 -> loss 1
    }
    CosLoss unit = cos_align_loss(ones_t, ones_s, CosPolicy::all_positions, span, span);
    REQUIRE(unit.weighted.item() == Catch::Approx(1.0).margin(1e-12));
    // misaligned lengths rejected
    std::vector<Tensor> bad{Tensor::zeros({3, 2}), Tensor::zeros({3, 2}), Tensor::zeros({3, 2})};
    REQUIRE_THROWS_AS(cos_align_loss(ones_t, bad, CosPolicy::all_positions, span, span), std::invalid_argument);
}

TEST_CASE("kl_loss: zero at equality, non-negative, brute-force 3-outcome case") {
    Tensor z = Tensor::from({2, 4}, {0.3, -1, 2, 0.5, 1, 1, 1, 1});
    REQUIRE(kl_loss(z, Tensor::from({2, 4}, z.data(), true)).item() == Catch::Approx(0.0).margin(1e-12));
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        Tensor p = Tensor::from({2, 5}, rng.normal_vec(10, 0.0, 2.0));
        Tensor q = Tensor::from({2, 5}, rng.normal_vec(10, 0.0, 2.0), true);
        REQUIRE(kl_loss(p, q).item() >= -1e-12);
    }
    // V=3, z_t=(1,0,0), z_s=(0,1,0): brute force sum p ln(p/q)
    Tensor zt = Tensor::from({1, 3}, {1, 0, 0});
    Tensor zs = Tensor::from({1, 3}, {0, 1, 0}, true);
    double pt[3], ps[3];
    const double dt = std::exp(1.0) + 2.0, ds = std::exp(1.0) + 2.0;
    pt[0] = std::exp(1.0) / dt;
    pt[1] = pt[2] = 1.0 / dt;
    ps[1] = std::exp(1.0) / ds;
    ps[0] = ps[2] = 1.0 / ds;
    double expect = 0;
    for (int i = 0; i < 3; ++i) expect += pt[i] * std::log(pt[i] / ps[i]);
    REQUIRE(kl_loss(zt, zs).item() == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("distill example: total identity and lambda switches") {
    MicroStack ms = MicroStack::make();
    ms.lm.set_trainable(false);
    ms.enc.set_trainable(false);
    MaskStats stats = compute_stats(ms.lm.tok_emb);
    ms.lm.e_mask.data() = init_mask_embedding(stats, MaskInitMode::stats, 3);
    GeneratorNet gen = GeneratorNet::init(ms.gcfg);
    Rng rng(4);
    gen.head_w2.data() = rng.normal_vec(gen.head_w2.data().size(), 0.0, 0.02);

    DistillConfig cfg;
    DistillSession s{&ms.lm, &ms.enc, &gen, &ms.tk, cfg};
    LossBreakdown bd;
    Tensor total = distill_example_loss(s, ms.example(), bd);
    REQUIRE(std::isfinite(total.item()));
    REQUIRE(std::fabs(bd.total - (bd.gen + 0.5 * bd.cos + 0.1 * bd.kl)) <= 1e-12);
    REQUIRE(bd.per_layer_cos.size() == 2);

    // lambda1 = lambda2 = 0 reduces the total to L_gen exactly
    s.cfg.lambda1 = 0.0;
    s.cfg.lambda2 = 0.0;
    LossBreakdown bd0;
    Tensor t0 = distill_example_loss(s, ms.example(), bd0);
    REQUIRE(t0.item() == bd0.gen);
    REQUIRE(bd0.total == bd0.gen);
}

TEST_CASE("distill losses pass finite-difference checks through a 2-layer toy model") {
    MicroStack ms = MicroStack::make(7);
    ms.lm.set_trainable(false);
    ms.enc.set_trainable(false);
    MaskStats stats = compute_stats(ms.lm.tok_emb);
    ms.lm.e_mask.data() = init_mask_embedding(stats, MaskInitMode::stats, 5);
    GeneratorNet gen = GeneratorNet::init(ms.gcfg);
    Rng rng(6);
    gen.head_w2.data() = rng.normal_vec(gen.head_w2.data().size(), 0.0, 0.02);

    DistillExample ex = ms.example();

    // checked parameters: the learnable queries and the head bias
    std::vector<Tensor> checked{gen.queries, gen.head_b2};

    auto loss_for = [&](double l1, double l2) {
        return [&ms, &gen, ex, l1, l2](bool want_backward) {
            DistillConfig cfg;
            cfg.lambda1 = l1;
            cfg.lambda2 = l2;
            DistillSession s{&ms.lm, &ms.enc, &gen, &ms.tk, cfg};
            LossBreakdown bd;
            Tensor total = distill_example_loss(s, ex, bd);
            const double v = total.item();
            if (want_backward) backward(total);
            return v;
        };
    };

    // (l1, l2) configurations isolate each objective: gen-only, cos-only, kl-only
    const std::pair<double, double> combos[] = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {0.5, 0.1}};
    for (auto [l1, l2] : combos) {
        DYNAMIC_SECTION("lambda1=" << l1 << " lambda2=" << l2) {
            auto run = loss_for(l1, l2);
            for (auto& t : checked) t.zero_grad();
            run(true);
            for (auto& t : checked) {
                std::vector<double> analytic = t.grad();
                std::vector<double> flat = t.data();
                auto f = [&](const std::vector<double>& p) {
                    t.data() = p;
                    const double v = run(false);
                    return v;
                };
                auto fd = finite_diff_grad(f, flat, 1e-5);
                t.data() = flat;
                for (size_t i = 0; i < analytic.size(); ++i) {
                    INFO("param element " << i);
                    REQUIRE(std::fabs(analytic[i] - fd[i]) <= 1e-4 * std::max(1.0, std::fabs(fd[i])));
                }
            }
        }
    }
}

TEST_CASE("train_step: freeze contract and gradient flow audit") {
    MicroStack ms = MicroStack::make(9);
    std::vector<DistillExample> data(6, ms.example());
    DistillConfig cfg;
    cfg.batch_size = 2;
    cfg.epochs = 1;
    cfg.base_lr = 1e-3;
    std::vector<TrainLogEntry> log;

    const uint64_t theta_before = ms.lm.checksum();
    const uint64_t psi_before_init = ms.enc.checksum();
    GeneratorNet gen = train_generator(ms.lm, ms.enc, data, ms.tk, ms.gcfg, cfg, &log);
    REQUIRE(ms.lm.checksum() == theta_before);       // theta bitwise unchanged
    REQUIRE(ms.enc.checksum() == psi_before_init);   // psi bitwise unchanged
    REQUIRE(log.size() == 3);
    for (const auto& e : log) REQUIRE(std::isfinite(e.total));

    // omega moved away from its init
    GeneratorNet fresh = GeneratorNet::init(ms.gcfg);
    REQUIRE(gen.checksum() != fresh.checksum());

    // e_mask frozen in stats mode across the run
    const uint64_t em = ms.lm.mask_checksum();
    GeneratorNet gen2 = train_generator(ms.lm, ms.enc, data, ms.tk, ms.gcfg, cfg, nullptr);
    REQUIRE(ms.lm.mask_checksum() == em);

    // determinism: identical run produces identical weights and losses
    std::vector<TrainLogEntry> log2;
    GeneratorNet gen3 = train_generator(ms.lm, ms.enc, data, ms.tk, ms.gcfg, cfg, &log2);
    REQUIRE(gen2.checksum() == gen3.checksum());
}

TEST_CASE("train_step: zero-init head, first batch reaches the queries") {
    MicroStack ms = MicroStack::make(11);
    ms.lm.set_trainable(false);
    ms.enc.set_trainable(false);
    MaskStats stats = compute_stats(ms.lm.tok_emb);
    ms.lm.e_mask.data() = init_mask_embedding(stats, MaskInitMode::stats, 2);
    GeneratorNet gen = GeneratorNet::init(ms.gcfg);  // zero head: delta = 0

    DistillConfig cfg;
    DistillSession s{&ms.lm, &ms.enc, &gen, &ms.tk, cfg};
    LossBreakdown bd;
    Tensor total = distill_example_loss(s, ms.example(), bd);
    REQUIRE(std::isfinite(total.item()));
    backward(total);
    // gradients reach the head output parameters and the queries
    double gnorm = 0;
    for (double v : gen.head_w2.grad()) gnorm += v * v;
    REQUIRE(gnorm > 0.0);
    double qnorm = 0;
    for (double v : gen.queries.grad()) qnorm += v * v;
    REQUIRE(qnorm > 0.0);
    // theta and psi leaves accumulate nothing
    for (auto& p : ms.lm.parameters()) {
        for (double v : p.grad()) REQUIRE(v == 0.0);
    }
    for (auto& p : ms.enc.parameters()) {
        for (double v : p.grad()) REQUIRE(v == 0.0);
    }
}

TEST_CASE("train_generator: trainable-token mode moves e_mask, stats mode freezes it") {
    MicroStack ms = MicroStack::make(13);
    std::vector<DistillExample> data(4, ms.example());
    DistillConfig cfg;
    cfg.batch_size = 2;
    cfg.base_lr = 1e-3;
    cfg.mask_mode = MaskInitMode::trainable;
    train_generator(ms.lm, ms.enc, data, ms.tk, ms.gcfg, cfg, nullptr);
    MaskStats stats = compute_stats(ms.lm.tok_emb);
    auto fresh_init = init_mask_embedding(stats, MaskInitMode::trainable, cfg.seed);
    REQUIRE(ms.lm.e_mask.data() != fresh_init);  // moved during training

    cfg.mask_mode = MaskInitMode::stats;
    train_generator(ms.lm, ms.enc, data, ms.tk, ms.gcfg, cfg, nullptr);
    REQUIRE(ms.lm.e_mask.data() == init_mask_embedding(stats, MaskInitMode::stats, cfg.seed));
    REQUIRE_FALSE(ms.lm.e_mask.requires_grad());
}

TEST_CASE("train_generator: none mode trains without document positions") {
    MicroStack ms = MicroStack::make(17);
    std::vector<DistillExample> data(4, ms.example());
    DistillConfig cfg;
    cfg.batch_size = 2;
    cfg.mask_mode = MaskInitMode::none;
    std::vector<TrainLogEntry> log;
    train_generator(ms.lm, ms.enc, data, ms.tk, ms.gcfg, cfg, &log);
    for (const auto& e : log) REQUIRE(std::isfinite(e.total));
}

TEST_CASE("answer_rows/targets helpers") {
    AnswerSpan span{4, 7};
    REQUIRE(answer_rows(span) == std::vector<int>{3, 4, 5});
    std::vector<int> toks{9, 9, 9, 9, 1, 2, 3, 9};
    REQUIRE(answer_targets(toks, span) == std::vector<int>{1, 2, 3});
    REQUIRE_THROWS_AS(answer_rows(AnswerSpan{3, 3}), std::invalid_argument);
}
