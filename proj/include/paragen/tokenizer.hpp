// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Whitespace word-level tokenizer over a fixed vocabulary. Special tokens
// occupy the first ids; the <|doc_mask|> surface form is reserved and never
// produced by rendered text.
#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace paragen {

class Tokenizer {
public:
    static constexpr const char* kUnk = "<|unk|>";
    static constexpr const char* kSep = "<|sep|>";
    static constexpr const char* kEoa = "<|eoa|>";
    static constexpr const char* kDocMask = "<|doc_mask|>";

    static std::vector<std::string> words(const std::string& text) {
        std::vector<std::string> out;
        std::istringstream iss(text);
        std::string w;
        while (iss >> w) out.push_back(w);
        return out;
    }

    // vocabulary = specials + sorted unique words of the corpus
    static Tokenizer build(const std::vector<std::string>& corpus_lines) {
        Tokenizer t;
        t.add_token(kUnk);
        t.add_token(kSep);
        t.add_token(kEoa);
        t.add_token(kDocMask);
        std::vector<std::string> uniq;
        std::unordered_map<std::string, bool> seen;
        for (const auto& line : corpus_lines)
            for (auto& w : words(line))
                if (!seen.count(w)) {
                    seen[w] = true;
                    uniq.push_back(w);
                }
        std::sort(uniq.begin(), uniq.end());
        for (auto& w : uniq) t.add_token(w);
        return t;
    }

    int vocab_size() const { return static_cast<int>(id_to_tok_.size()); }
    int unk_id() const { return 0; }
    int sep_id() const { return 1; }
    int eoa_id() const { return 2; }
    int mask_id() const { return 3; }

    int id_of(const std::string& tok) const {
        auto it = tok_to_id_.find(tok);
        return it == tok_to_id_.end() ? unk_id() : it->second;
    }
    const std::string& token(int id) const {
        if (id < 0 || id >= vocab_size()) throw std::out_of_range("Tokenizer::token: id out of range");
        return id_to_tok_[static_cast<size_t>(id)];
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (auto& w : words(text)) ids.push_back(id_of(w));
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += token(ids[i]);
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("Tokenizer::save: cannot open " + path);
        for (const auto& t : id_to_tok_) f << t << "\n";
    }

    static Tokenizer load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("Tokenizer::load: cannot open " + path);
        Tokenizer t;
        std::string line;
        while (std::getline(f, line))
            if (!line.empty()) t.add_token(line);
        if (t.vocab_size() < 4 || t.id_to_tok_[3] != kDocMask)
            throw std::runtime_error("Tokenizer::load: malformed vocabulary file");
        return t;
    }

private:
    void add_token(const std::string& tok) {
        if (tok_to_id_.count(tok)) throw std::invalid_argument("Tokenizer: duplicate token " + tok);
        tok_to_id_[tok] = static_cast<int>(id_to_tok_.size());
        id_to_tok_.push_back(tok);
    }

    std::vector<std::string> id_to_tok_;
    std::unordered_map<std::string, int> tok_to_id_;
};

}  // namespace paragen
