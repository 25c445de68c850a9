// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Okapi BM25 inverted index (+1-smoothed IDF, so scores stay non-negative
// on tiny corpora) and a MinHash/LSH maximum-Jaccard overlap estimator over
// unigram token sets.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "paragen/rng.hpp"
#include "paragen/tokenizer.hpp"

namespace paragen {

struct Bm25Config {
    double k1 = 1.2;
    double b = 0.75;
};

struct ScoredDoc {
    int doc_id;
    double score;
};

class Bm25Index {
public:
    static Bm25Index build(const std::vector<std::pair<int, std::string>>& corpus, Bm25Config cfg = {}) {
        if (corpus.empty()) throw std::invalid_argument("Bm25Index::build: empty corpus");
        Bm25Index idx;
        idx.cfg_ = cfg;
        double total_len = 0.0;
        for (const auto& [doc_id, text] : corpus) {
            if (idx.doc_len_.count(doc_id)) throw std::invalid_argument("Bm25Index::build: duplicate doc_id");
            auto toks = Tokenizer::words(text);
            idx.doc_len_[doc_id] = static_cast<int>(toks.size());
            total_len += static_cast<double>(toks.size());
            std::map<std::string, int> tf;
            for (const auto& t : toks) tf[t] += 1;
            for (const auto& [term, f] : tf) idx.postings_[term].emplace_back(doc_id, f);
        }
        for (auto& [term, plist] : idx.postings_) std::sort(plist.begin(), plist.end());
        idx.avg_len_ = total_len / static_cast<double>(corpus.size());
        idx.n_docs_ = static_cast<int>(corpus.size());
        return idx;
    }

    double idf(const std::string& term) const {
        auto it = postings_.find(term);
        const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
        return std::log((static_cast<double>(n_docs_) - df + 0.5) / (df + 0.5) + 1.0);
    }

    const std::vector<std::pair<int, int>>& postings(const std::string& term) const {
        static const std::vector<std::pair<int, int>> empty;
        auto it = postings_.find(term);
        return it == postings_.end() ? empty : it->second;
    }

    int doc_len(int doc_id) const { return doc_len_.at(doc_id); }
    double avg_len() const { return avg_len_; }
    int num_docs() const { return n_docs_; }

    // score(q, d) = sum over query tokens (multiset) of
    //   IDF(t) * tf / (tf + k1 (1 - b + b len/avglen))
    std::vector<ScoredDoc> top_k(const std::string& query, int k = 3) const {
        if (k < 1) throw std::invalid_argument("Bm25Index::top_k: k must be at least 1");
        auto terms = Tokenizer::words(query);
        if (terms.empty()) return {};  // empty query: empty result (caller warns)
        std::map<int, double> acc;
        for (const auto& t : terms) {
            const double w = idf(t);
            for (const auto& [doc_id, tf] : postings(t)) {
                const double norm = cfg_.k1 * (1.0 - cfg_.b + cfg_.b * doc_len_.at(doc_id) / avg_len_);
                acc[doc_id] += w * static_cast<double>(tf) / (static_cast<double>(tf) + norm);
            }
        }
        std::vector<ScoredDoc> out;
        for (const auto& [doc_id, s] : acc) out.push_back({doc_id, s});
        std::sort(out.begin(), out.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.doc_id < b.doc_id;
        });
        if (static_cast<int>(out.size()) > k) out.resize(static_cast<size_t>(k));
        return out;
    }

private:
    Bm25Config cfg_;
    std::map<std::string, std::vector<std::pair<int, int>>> postings_;
    std::map<int, int> doc_len_;
    double avg_len_ = 0.0;
    int n_docs_ = 0;
};

// -------- MinHash / LSH --------

struct MinHashConfig {
    int n_perm = 512;
    uint64_t seed = 42;
};

inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class MinHasher {
public:
    explicit MinHasher(MinHashConfig cfg) : cfg_(cfg) {
        Rng rng(cfg.seed);
        for (int i = 0; i < cfg.n_perm; ++i) perm_seeds_.push_back(rng.next_u64());
    }

    // sketch over the unigram token set of the text
    std::vector<uint64_t> sketch(const std::string& text) const {
        std::set<std::string> shingles;
        for (auto& w : Tokenizer::words(text)) shingles.insert(w);
        if (shingles.empty()) throw std::invalid_argument("MinHasher::sketch: empty document");
        std::vector<uint64_t> minima(static_cast<size_t>(cfg_.n_perm), UINT64_MAX);
        for (const auto& s : shingles) {
            const uint64_t h = fnv1a64(s.data(), s.size());
            for (int p = 0; p < cfg_.n_perm; ++p) {
                const uint64_t v = mix64(h ^ perm_seeds_[static_cast<size_t>(p)]);
                if (v < minima[static_cast<size_t>(p)]) minima[static_cast<size_t>(p)] = v;
            }
        }
        return minima;
    }

    static double estimate(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b) {
        if (a.size() != b.size()) throw std::invalid_argument("MinHasher::estimate: sketch length mismatch");
        size_t eq = 0;
        for (size_t i = 0; i < a.size(); ++i) eq += (a[i] == b[i]) ? 1 : 0;
        return static_cast<double>(eq) / static_cast<double>(a.size());
    }

    int n_perm() const { return cfg_.n_perm; }

private:
    MinHashConfig cfg_;
    std::vector<uint64_t> perm_seeds_;
};

inline double exact_jaccard(const std::string& a, const std::string& b) {
    std::set<std::string> sa, sb;
    for (auto& w : Tokenizer::words(a)) sa.insert(w);
    for (auto& w : Tokenizer::words(b)) sb.insert(w);
    size_t inter = 0;
    for (const auto& w : sa) inter += sb.count(w);
    const size_t uni = sa.size() + sb.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct OverlapResult {
    double mean_max_jaccard_pct = 0.0;
    std::vector<double> per_doc_max;   // estimated max Jaccard per test doc
    std::vector<int> argmax_train;     // surfaced train index, -1 when no candidate
};

// LSH banding: two docs become candidates when any band of their sketches
// collides; per test doc the estimate is the max sketch similarity over
// surfaced candidates.
inline OverlapResult max_jaccard_overlap(const std::vector<std::string>& test_docs,
                                         const std::vector<std::string>& train_docs, int n_perm = 512,
                                         int lsh_bands = 64, uint64_t seed = 42) {
    if (n_perm % lsh_bands != 0)
        throw std::invalid_argument("max_jaccard_overlap: n_perm must divide by the band count");
    const int rows = n_perm / lsh_bands;
    MinHasher hasher({n_perm, seed});

    std::vector<std::vector<uint64_t>> train_sk;
    train_sk.reserve(train_docs.size());
    for (const auto& d : train_docs) train_sk.push_back(hasher.sketch(d));

    // band bucket -> train doc indices
    std::unordered_map<uint64_t, std::vector<int>> buckets;
    for (size_t ti = 0; ti < train_sk.size(); ++ti)
        for (int b = 0; b < lsh_bands; ++b) {
            uint64_t key = fnv1a64(train_sk[ti].data() + static_cast<size_t>(b) * rows,
                                   static_cast<size_t>(rows) * sizeof(uint64_t), 0x62616e64ULL + static_cast<uint64_t>(b));
            buckets[key].push_back(static_cast<int>(ti));
        }

    OverlapResult res;
    double total = 0.0;
    for (const auto& d : test_docs) {
        auto sk = hasher.sketch(d);
        std::set<int> cands;
        for (int b = 0; b < lsh_bands; ++b) {
            uint64_t key = fnv1a64(sk.data() + static_cast<size_t>(b) * rows,
                                   static_cast<size_t>(rows) * sizeof(uint64_t), 0x62616e64ULL + static_cast<uint64_t>(b));
            auto it = buckets.find(key);
            if (it != buckets.end())
                for (int ti : it->second) cands.insert(ti);
        }
        double best = 0.0;
        int best_ti = -1;
        for (int ti : cands) {
            const double est = MinHasher::estimate(sk, train_sk[static_cast<size_t>(ti)]);
            if (est > best) {
                best = est;
                best_ti = ti;
            }
        }
        res.per_doc_max.push_back(best);
        res.argmax_train.push_back(best_ti);
        total += best;
    }
    res.mean_max_jaccard_pct = test_docs.empty() ? 0.0 : 100.0 * total / static_cast<double>(test_docs.size());
    return res;
}

}  // namespace paragen
