// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// The document-mask placeholder: embedding statistics, one-shot frozen
// initialization, and aligned teacher/student sequence construction.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "paragen/rng.hpp"
#include "paragen/tensor.hpp"
#include "paragen/tokenizer.hpp"

namespace paragen {

struct MaskStats {
    std::vector<double> mu;
    std::vector<double> sigma;  // population convention (divide by V)
};

inline MaskStats compute_stats(const Tensor& emb) {
    const int V = emb.rows(), h = emb.cols();
    if (V < 2) throw std::invalid_argument("compute_stats: need at least two embedding rows");
    MaskStats s;
    s.mu.assign(static_cast<size_t>(h), 0.0);
    s.sigma.assign(static_cast<size_t>(h), 0.0);
    for (int i = 0; i < V; ++i)
        for (int j = 0; j < h; ++j) s.mu[static_cast<size_t>(j)] += emb.at(i, j);
    for (auto& v : s.mu) v /= V;
    for (int i = 0; i < V; ++i)
        for (int j = 0; j < h; ++j) {
            const double d = emb.at(i, j) - s.mu[static_cast<size_t>(j)];
            s.sigma[static_cast<size_t>(j)] += d * d;
        }
    for (auto& v : s.sigma) v = std::sqrt(v / V);
    return s;
}

enum class MaskInitMode { stats, random_002, trainable, none };

inline MaskInitMode mask_mode_from_string(const std::string& s) {
    if (s == "stats") return MaskInitMode::stats;
    if (s == "random_002") return MaskInitMode::random_002;
    if (s == "trainable") return MaskInitMode::trainable;
    if (s == "none") return MaskInitMode::none;
    throw std::invalid_argument("unknown mask mode: " + s);
}

inline std::string mask_mode_to_string(MaskInitMode m) {
    switch (m) {
        case MaskInitMode::stats: return "stats";
        case MaskInitMode::random_002: return "random_002";
        case MaskInitMode::trainable: return "trainable";
        case MaskInitMode::none: return "none";
    }
    throw std::invalid_argument("unknown mask mode");
}

// One draw, then frozen (stats / random modes). `trainable` shares the
// random_002 init but joins the optimizer's parameter set. `none` produces
// zeros; the student input simply carries no document positions.
inline std::vector<double> init_mask_embedding(const MaskStats& stats, MaskInitMode mode, uint64_t seed) {
    const size_t h = stats.mu.size();
    Rng rng(seed ^ 0x6d61736bULL);
    std::vector<double> e(h, 0.0);
    switch (mode) {
        case MaskInitMode::stats:
            for (size_t j = 0; j < h; ++j) e[j] = stats.mu[j] + stats.sigma[j] * rng.normal();
            break;
        case MaskInitMode::random_002:
        case MaskInitMode::trainable:
            for (size_t j = 0; j < h; ++j) e[j] = 0.02 * rng.normal();
            break;
        case MaskInitMode::none:
            break;
    }
    return e;
}

struct AnswerSpan {
    int start = 0;  // first answer token position
    int end = 0;    // one past the answer terminator
};

// Teacher x = [D; sep; q; sep; a; eoa], student x~ identical except the |D|
// document positions are the mask id (or dropped entirely in `none` mode).
struct SequenceBatch {
    std::vector<int> teacher;
    std::vector<int> student;
    AnswerSpan teacher_span;
    AnswerSpan student_span;  // equals teacher_span except in `none` mode
    int doc_len = 0;
    bool truncated = false;
};

class TruncationError : public std::runtime_error {
public:
    explicit TruncationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline SequenceBatch build_pair(std::vector<int> doc_tokens, const std::vector<int>& q_tokens,
                                const std::vector<int>& a_tokens, const Tokenizer& tk, int max_seq,
                                MaskInitMode mode = MaskInitMode::stats) {
    if (a_tokens.empty()) throw std::invalid_argument("build_pair: empty answer");
    if (q_tokens.empty()) throw std::invalid_argument("build_pair: empty question");
    for (const std::vector<int>* part : {static_cast<const std::vector<int>*>(&doc_tokens), &q_tokens, &a_tokens})
        for (int id : *part)
            if (id == tk.mask_id())
                throw std::invalid_argument("build_pair: mask token id in raw content");

    SequenceBatch sb;
    const int fixed = static_cast<int>(q_tokens.size() + a_tokens.size()) + 3;  // 2 seps + eoa
    if (fixed + 1 > max_seq)
        throw TruncationError("build_pair: question/answer alone exceed the sequence budget");
    if (static_cast<int>(doc_tokens.size()) + fixed > max_seq) {
        // drop leading document tokens, symmetrically in x and x~
        const int keep = max_seq - fixed;
        doc_tokens.erase(doc_tokens.begin(), doc_tokens.end() - keep);
        sb.truncated = true;
    }
    sb.doc_len = static_cast<int>(doc_tokens.size());

    sb.teacher = doc_tokens;
    sb.teacher.push_back(tk.sep_id());
    sb.teacher.insert(sb.teacher.end(), q_tokens.begin(), q_tokens.end());
    sb.teacher.push_back(tk.sep_id());
    sb.teacher_span.start = static_cast<int>(sb.teacher.size());
    sb.teacher.insert(sb.teacher.end(), a_tokens.begin(), a_tokens.end());
    sb.teacher.push_back(tk.eoa_id());
    sb.teacher_span.end = static_cast<int>(sb.teacher.size());

    if (mode == MaskInitMode::none) {
        sb.student.assign(sb.teacher.begin() + sb.doc_len + 1, sb.teacher.end());  // drop doc + first sep
        sb.student_span.start = sb.teacher_span.start - sb.doc_len - 1;
        sb.student_span.end = sb.teacher_span.end - sb.doc_len - 1;
    } else {
        sb.student = sb.teacher;
        for (int i = 0; i < sb.doc_len; ++i) sb.student[static_cast<size_t>(i)] = tk.mask_id();
        sb.student_span = sb.teacher_span;
    }
    return sb;
}

}  // namespace paragen
