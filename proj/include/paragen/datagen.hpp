// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic fact-world corpus and QA synthesizer. Entities carry six
// single-token facts; documents are fixed template realizations; questions
// come from a template registry that doubles as an exact answerability
// oracle (template inversion over the rendered documents).
//
// Splits are entity-disjoint: lm-pretrain, distill-train, eval-in-domain,
// eval-ood-style. OOD means question templates and entities held out from
// distillation training.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "paragen/rng.hpp"

namespace paragen::datagen {

// -------- vocab pools (all single tokens, lowercase) --------

inline const std::vector<std::string>& first_names() {
    static const std::vector<std::string> v{
        "alice", "bruno",  "carla",  "derek",  "elena",  "felix",  "greta",  "hugo",   "irene",  "jonas",
        "karin", "liam",   "mona",   "nadia",  "oscar",  "paula",  "quentin", "rosa",  "stefan", "tara",
        "ulrich", "vera",  "walter", "xenia",  "yusuf",  "zelda",  "amir",   "bella",  "carlos", "dina",
        "emil",  "fiona",  "gavin",  "hana",   "ivan",   "julia",  "kofi",   "lena",   "marco",  "nora",
        "omar",  "priya",  "ravi",   "sofia",  "tomas",  "uma",    "viktor", "wanda"};
    return v;
}
inline const std::vector<std::string>& last_names() {
    static const std::vector<std::string> v{
        "stone",  "rivera",  "novak",  "fischer", "moreau",  "tanaka", "silva",  "larsen", "kovacs", "brandt",
        "okafor", "petrov",  "durand", "weiss",   "romano",  "holm",   "keller", "ahmadi", "castro", "lindgren",
        "meyer",  "ortiz",   "popov",  "quirke",  "reines",  "sauer",  "toledo", "unger",  "varga",  "wilder",
        "xander", "yilmaz",  "ziegler", "arnold", "becker",  "conti",  "dvorak", "eriksen", "farkas", "gruber",
        "hansen", "ibsen",   "jansen", "krause",  "lombard", "mendes", "nilsen", "oberst"};
    return v;
}
inline const std::vector<std::string>& cities() {
    static const std::vector<std::string> v{
        "paris",   "rome",    "oslo",     "lisbon",  "vienna", "prague",  "dublin", "madrid", "athens",
        "berlin",  "warsaw",  "helsinki", "zagreb",  "riga",   "tallinn", "porto",  "milan",  "geneva",
        "bruges",  "seville", "valencia", "naples",  "turin",  "bergen",  "malmo",  "graz",   "brno",
        "cork",    "bilbao",  "split",    "gdansk",  "lyon",   "nice",    "bonn",   "basel",  "leiden"};
    return v;
}
inline const std::vector<std::string>& years() {
    static const std::vector<std::string> v = [] {
        std::vector<std::string> y;
        for (int i = 1950; i <= 1977; ++i) y.push_back(std::to_string(i));
        return y;
    }();
    return v;
}
inline const std::vector<std::string>& occupations() {
    static const std::vector<std::string> v{
        "engineer",  "baker",     "florist",   "teacher",  "pilot",     "chemist",   "notary",   "plumber",
        "architect", "librarian", "surveyor",  "tailor",   "locksmith", "glazier",   "printer",  "brewer",
        "carpenter", "geologist", "clerk",     "jeweler",  "machinist", "optician",  "farrier",  "weaver",
        "cooper",    "mason",     "navigator", "smith",    "potter",    "cartographer", "archivist", "falconer"};
    return v;
}
inline const std::vector<std::string>& companies() {
    static const std::vector<std::string> v{
        "novatek",  "sunform",  "bluecrest", "ironleaf",  "midgard",  "quartzon", "helioware", "vantora",
        "corvex",   "lumina",   "drakkar",   "polarius",  "ferrodyn", "maplecore", "zephyra",  "oakengate",
        "tidewell", "cinderon", "glasswing", "northbeam", "redmoor",  "silverfen", "tarnhill", "umbra",
        "veldspar", "wyvernix", "yarrowell", "zincfield", "ashgrove", "brimstone", "cloudmere", "dunwick"};
    return v;
}
inline const std::vector<std::string>& hobbies() {
    static const std::vector<std::string> v{
        "chess",    "sailing",  "archery",  "painting", "gardening", "climbing", "fencing", "birdwatching",
        "pottery",  "origami",  "astronomy", "cycling", "calligraphy", "fishing", "juggling", "beekeeping",
        "woodcarving", "kayaking", "baking", "stargazing", "quilting", "bowling", "skating", "drumming"};
    return v;
}
inline const std::vector<std::string>& colors() {
    static const std::vector<std::string> v{"red",    "blue",  "green",  "amber", "violet", "teal",
                                            "crimson", "ochre", "indigo", "coral", "olive",  "maroon"};
    return v;
}

inline const std::vector<std::string>& relations() {
    static const std::vector<std::string> v{"born_city", "birth_year", "occupation", "employer", "hobby", "color"};
    return v;
}

// -------- world --------

enum class Split { lm_pretrain = 0, distill_train = 1, eval_in_domain = 2, eval_ood = 3 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::lm_pretrain: return "lm-pretrain";
        case Split::distill_train: return "distill-train";
        case Split::eval_in_domain: return "eval-in-domain";
        case Split::eval_ood: return "eval-ood-style";
    }
    return "?";
}

struct Entity {
    int id = 0;
    std::string first, last;
    std::map<std::string, std::string> facts;  // relation -> value, exactly one value each
    Split split = Split::lm_pretrain;

    std::string name() const { return first + " " + last; }
};

struct Document {
    int doc_id = 0;  // == entity id
    int entity_id = 0;
    std::string text;
    Split split = Split::lm_pretrain;
};

struct WorldOpts {
    double frac_pretrain = 0.45;
    double frac_train = 0.40;
    double frac_eval_id = 0.10;
    double frac_eval_ood = 0.05;
};

struct FactWorld {
    uint64_t seed = 0;
    std::vector<Entity> entities;  // indexed by id
    std::vector<Document> docs;    // doc_id == entity id

    std::vector<int> split_ids(Split s) const {
        std::vector<int> out;
        for (const auto& e : entities)
            if (e.split == s) out.push_back(e.id);
        return out;
    }
    const Entity& entity(int id) const { return entities.at(static_cast<size_t>(id)); }
    const Document& doc(int id) const { return docs.at(static_cast<size_t>(id)); }
};

// fixed three-sentence realization; every fact appears exactly once
inline std::string render_document(const Entity& e) {
    std::ostringstream os;
    os << e.first << " " << e.last << " was born in the city of " << e.facts.at("born_city") << " in the year "
       << e.facts.at("birth_year") << " . " << e.first << " " << e.last << " works as a " << e.facts.at("occupation")
       << " at the company " << e.facts.at("employer") << " . " << e.first << " " << e.last << " enjoys "
       << e.facts.at("hobby") << " and loves the color " << e.facts.at("color") << " .";
    return os.str();
}

inline FactWorld gen_world(uint64_t seed, int n_entities, WorldOpts opts = {}) {
    if (n_entities < 10) throw std::invalid_argument("gen_world: need at least 10 entities");
    const auto& fn = first_names();
    const auto& ln = last_names();
    if (n_entities > static_cast<int>(fn.size() * ln.size()))
        throw std::invalid_argument("gen_world: name grid too small for requested entity count");
    Rng rng(seed);
    FactWorld w;
    w.seed = seed;

    // distinct (first, last) combinations
    std::vector<int> grid(fn.size() * ln.size());
    for (size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<int>(i);
    rng.shuffle(grid);

    auto pick = [&rng](const std::vector<std::string>& pool) { return pool[rng.below(pool.size())]; };
    for (int i = 0; i < n_entities; ++i) {
        Entity e;
        e.id = i;
        e.first = fn[static_cast<size_t>(grid[static_cast<size_t>(i)]) / ln.size()];
        e.last = ln[static_cast<size_t>(grid[static_cast<size_t>(i)]) % ln.size()];
        e.facts["born_city"] = pick(cities());
        e.facts["birth_year"] = pick(years());
        e.facts["occupation"] = pick(occupations());
        e.facts["employer"] = pick(companies());
        e.facts["hobby"] = pick(hobbies());
        e.facts["color"] = pick(colors());
        w.entities.push_back(std::move(e));
    }

    // entity-disjoint splits
    std::vector<int> order(static_cast<size_t>(n_entities));
    for (int i = 0; i < n_entities; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    const int n_train = static_cast<int>(opts.frac_train * n_entities);
    const int n_eval_id = std::max(2, static_cast<int>(opts.frac_eval_id * n_entities));
    const int n_eval_ood = std::max(2, static_cast<int>(opts.frac_eval_ood * n_entities));
    int idx = 0;
    for (int i = 0; i < n_train; ++i) w.entities[static_cast<size_t>(order[static_cast<size_t>(idx++)])].split = Split::distill_train;
    for (int i = 0; i < n_eval_id; ++i) w.entities[static_cast<size_t>(order[static_cast<size_t>(idx++)])].split = Split::eval_in_domain;
    for (int i = 0; i < n_eval_ood; ++i) w.entities[static_cast<size_t>(order[static_cast<size_t>(idx++)])].split = Split::eval_ood;
    while (idx < n_entities) w.entities[static_cast<size_t>(order[static_cast<size_t>(idx++)])].split = Split::lm_pretrain;

    for (const auto& e : w.entities) w.docs.push_back({e.id, e.id, render_document(e), e.split});
    return w;
}

// -------- question templates --------

// {f} {l}: subject names; {f2} {l2}: second entity (cross templates)
struct SingleTemplate {
    std::string relation;
    std::string pattern;
    bool ood;           // held out from distillation training
    bool underspecified = false;  // degraded-synthesis variant ({f} only)
};

inline const std::vector<SingleTemplate>& single_templates() {
    static const std::vector<SingleTemplate> v{
        {"born_city", "in which city was {f} {l} born ?", false},
        {"birth_year", "in which year was {f} {l} born ?", false},
        {"occupation", "what job does {f} {l} have ?", false},
        {"employer", "at which company does {f} {l} work ?", false},
        {"hobby", "which hobby does {f} {l} enjoy ?", false},
        {"color", "which color does {f} {l} love ?", false},
        {"born_city", "where was {f} {l} born ?", true},
        {"birth_year", "when was {f} {l} born ?", true},
        {"occupation", "what does {f} {l} do for a living ?", true},
        {"employer", "who employs {f} {l} ?", true},
        {"hobby", "what pastime does {f} {l} like ?", true},
        {"color", "what is the favorite color of {f} {l} ?", true},
        // degraded variants: first name only
        {"born_city", "in which city was {f} born ?", false, true},
        {"birth_year", "in which year was {f} born ?", false, true},
        {"occupation", "what job does {f} have ?", false, true},
        {"employer", "at which company does {f} work ?", false, true},
        {"hobby", "which hobby does {f} enjoy ?", false, true},
        {"color", "which color does {f} love ?", false, true},
    };
    return v;
}

// cross kinds: earlier | later | same_company | same_city | same_hobby |
// both_cities | both_jobs
struct CrossTemplate {
    std::string kind;
    std::string pattern;
    bool ood;
};

inline const std::vector<CrossTemplate>& cross_templates() {
    static const std::vector<CrossTemplate> v{
        {"earlier", "who was born earlier , {f} {l} or {f2} {l2} ?", false},
        {"later", "who was born later , {f} {l} or {f2} {l2} ?", false},
        {"same_company", "do {f} {l} and {f2} {l2} work at the same company ?", false},
        {"same_city", "were {f} {l} and {f2} {l2} born in the same city ?", false},
        {"same_hobby", "do {f} {l} and {f2} {l2} enjoy the same hobby ?", false},
        {"both_cities", "in which cities were {f} {l} and {f2} {l2} born ?", false},
        {"both_jobs", "which jobs do {f} {l} and {f2} {l2} have ?", false},
        {"earlier", "between {f} {l} and {f2} {l2} , who is older ?", true},
        {"same_company", "are {f} {l} and {f2} {l2} employed by the same company ?", true},
        {"both_cities", "which two cities are {f} {l} and {f2} {l2} from ?", true},
    };
    return v;
}

inline std::string fill(const std::string& pattern, const Entity& a, const Entity* b = nullptr) {
    std::string out;
    std::istringstream iss(pattern);
    std::string tok;
    bool need_space = false;
    while (iss >> tok) {
        std::string piece = tok;
        if (tok == "{f}") piece = a.first;
        else if (tok == "{l}") piece = a.last;
        else if (tok == "{f2}") piece = b ? b->first : tok;
        else if (tok == "{l2}") piece = b ? b->last : tok;
        if (need_space) out += ' ';
        out += piece;
        need_space = true;
    }
    return out;
}

inline std::string cross_answer(const CrossTemplate& t, const Entity& a, const Entity& b) {
    if (t.kind == "earlier" || t.kind == "later") {
        const int ya = std::stoi(a.facts.at("birth_year"));
        const int yb = std::stoi(b.facts.at("birth_year"));
        if (ya == yb) return "";  // ambiguous; caller skips
        const bool a_wins = (t.kind == "earlier") ? (ya < yb) : (ya > yb);
        return a_wins ? a.name() : b.name();
    }
    if (t.kind == "same_company") return a.facts.at("employer") == b.facts.at("employer") ? "yes" : "no";
    if (t.kind == "same_city") return a.facts.at("born_city") == b.facts.at("born_city") ? "yes" : "no";
    if (t.kind == "same_hobby") return a.facts.at("hobby") == b.facts.at("hobby") ? "yes" : "no";
    if (t.kind == "both_cities") return a.facts.at("born_city") + " and " + b.facts.at("born_city");
    if (t.kind == "both_jobs") return a.facts.at("occupation") + " and " + b.facts.at("occupation");
    throw std::invalid_argument("cross_answer: unknown kind " + t.kind);
}

// -------- QA records --------

struct QaPair {
    std::vector<int> doc_ids;
    std::string question;
    std::string answer;
    std::string kind;  // "single" | "cross"
};

struct SynthOpts {
    bool degraded = false;  // paraphrase noise + 20% underspecified questions
};

// 2..5 QA pairs per document, one template per distinct relation
inline std::vector<QaPair> synth_single_doc_qa(const FactWorld& w, const Document& d, uint64_t seed,
                                               SynthOpts opts = {}) {
    const Entity& e = w.entity(d.entity_id);
    if (e.facts.size() < 2) return {};  // underspecified entity; caller logs and skips
    Rng rng(fnv1a64(&d.doc_id, sizeof(d.doc_id), seed ^ 0x73696e67ULL));
    std::vector<const SingleTemplate*> core;
    for (const auto& t : single_templates())
        if (!t.ood && !t.underspecified) core.push_back(&t);
    rng.shuffle(core);
    const int k = 2 + static_cast<int>(rng.below(4));  // in [2, 5]
    std::vector<QaPair> out;
    for (int i = 0; i < k && i < static_cast<int>(core.size()); ++i) {
        const SingleTemplate* t = core[static_cast<size_t>(i)];
        std::string q;
        if (opts.degraded && rng.uniform() < 0.20) {
            // underspecified: first name only
            for (const auto& u : single_templates())
                if (u.underspecified && u.relation == t->relation) q = fill(u.pattern, e);
        } else {
            q = fill(t->pattern, e);
        }
        if (opts.degraded && rng.uniform() < 0.5) q = "please tell me " + q;
        out.push_back({{d.doc_id}, q, e.facts.at(t->relation), "single"});
    }
    return out;
}

// >=5 cross-document QA pairs; every question needs one fact from each doc
inline std::vector<QaPair> synth_cross_doc_qa(const FactWorld& w, const Document& da, const Document& db,
                                              uint64_t seed, SynthOpts opts = {}) {
    if (da.entity_id == db.entity_id) throw std::invalid_argument("synth_cross_doc_qa: documents share an entity");
    const Entity& a = w.entity(da.entity_id);
    const Entity& b = w.entity(db.entity_id);
    Rng rng(fnv1a64(&da.doc_id, sizeof(da.doc_id), seed ^ 0x63726f73ULL) ^ static_cast<uint64_t>(db.doc_id));
    std::vector<QaPair> out;
    for (const auto& t : cross_templates()) {
        if (t.ood) continue;
        const std::string ans = cross_answer(t, a, b);
        if (ans.empty()) continue;  // year tie: comparison template falls away
        std::string q = fill(t.pattern, a, &b);
        if (opts.degraded && rng.uniform() < 0.5) q = "please tell me " + q;
        out.push_back({{da.doc_id, db.doc_id}, q, ans, "cross"});
    }
    return out;
}

struct TrainingTriple {
    std::vector<int> doc_ids;
    std::string question;
    std::string answer;
    std::string kind;
};

struct BuildOpts {
    uint64_t seed = 1;
    double single_ratio = 0.48;  // mirrors the corpus composition default
    bool degraded = false;
    bool single_doc_only = false;
    int max_triples = 0;  // 0 = no cap
};

// shuffled, deduplicated mixture of single and cross triples over the
// distill-train split, balanced to the configured ratio within +-2%
inline std::vector<TrainingTriple> build_training_set(const FactWorld& w, BuildOpts opts = {}) {
    if (w.entities.empty()) throw std::invalid_argument("build_training_set: empty world");
    SynthOpts sopts{opts.degraded};
    std::vector<int> ids = w.split_ids(Split::distill_train);
    Rng rng(opts.seed ^ 0x6275696cULL);

    std::vector<QaPair> singles, crosses;
    for (int id : ids) {
        auto qs = synth_single_doc_qa(w, w.doc(id), opts.seed, sopts);
        singles.insert(singles.end(), qs.begin(), qs.end());
    }
    if (!opts.single_doc_only && ids.size() >= 2) {
        for (size_t i = 0; i < ids.size(); ++i) {
            size_t j = rng.below(ids.size());
            while (j == i) j = rng.below(ids.size());
            auto qs = synth_cross_doc_qa(w, w.doc(ids[i]), w.doc(ids[j]), opts.seed, sopts);
            crosses.insert(crosses.end(), qs.begin(), qs.end());
        }
    }

    // dedup exact question strings, first occurrence wins
    std::set<std::string> seen;
    auto dedup = [&seen](std::vector<QaPair>& v) {
        std::vector<QaPair> out;
        for (auto& q : v)
            if (seen.insert(q.question).second) out.push_back(std::move(q));
        v = std::move(out);
    };
    dedup(singles);
    dedup(crosses);

    // balance to the requested single:cross ratio
    size_t n_single = singles.size(), n_cross = crosses.size();
    if (!opts.single_doc_only && n_cross > 0 && n_single > 0) {
        const double r = opts.single_ratio;
        const auto want_cross = static_cast<size_t>(static_cast<double>(n_single) * (1.0 - r) / r);
        if (n_cross > want_cross) {
            n_cross = want_cross;
        } else {
            const auto want_single = static_cast<size_t>(static_cast<double>(n_cross) * r / (1.0 - r));
            n_single = std::min(n_single, want_single);
        }
    }
    rng.shuffle(singles);
    rng.shuffle(crosses);
    singles.resize(n_single);
    crosses.resize(n_cross);

    std::vector<TrainingTriple> out;
    for (auto& q : singles) out.push_back({q.doc_ids, q.question, q.answer, q.kind});
    for (auto& q : crosses) out.push_back({q.doc_ids, q.question, q.answer, q.kind});
    rng.shuffle(out);
    if (opts.max_triples > 0 && static_cast<int>(out.size()) > opts.max_triples)
        out.resize(static_cast<size_t>(opts.max_triples));
    return out;
}

// -------- answerability oracle (template inversion) --------

struct ParsedDoc {
    std::string first, last;
    std::map<std::string, std::string> facts;
};

// inverse of render_document; nullopt if the text does not match the layout
inline std::optional<ParsedDoc> parse_document(const std::string& text) {
    std::vector<std::string> t;
    std::istringstream iss(text);
    std::string w;
    while (iss >> w) t.push_back(w);
    if (t.size() != 35) return std::nullopt;
    auto expect = [&](size_t i, const char* word) { return t[i] == word; };
    if (!(expect(2, "was") && expect(3, "born") && expect(6, "city") && expect(11, "year") && expect(13, ".") &&
          expect(16, "works") && expect(22, "company") && expect(24, ".") && expect(27, "enjoys") &&
          expect(32, "color") && expect(34, ".")))
        return std::nullopt;
    ParsedDoc d;
    d.first = t[0];
    d.last = t[1];
    d.facts["born_city"] = t[8];
    d.facts["birth_year"] = t[12];
    d.facts["occupation"] = t[19];
    d.facts["employer"] = t[23];
    d.facts["hobby"] = t[28];
    d.facts["color"] = t[33];
    return d;
}

namespace detail {

struct QuestionMatch {
    bool cross = false;
    std::string relation_or_kind;
    std::string f1, l1, f2, l2;
    bool underspecified = false;
};

inline bool match_pattern(const std::vector<std::string>& q, const std::string& pattern, QuestionMatch& m) {
    std::vector<std::string> p;
    std::istringstream iss(pattern);
    std::string w;
    while (iss >> w) p.push_back(w);
    if (p.size() != q.size()) return false;
    std::map<std::string, std::string> slots;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i].size() > 2 && p[i].front() == '{') {
            slots[p[i]] = q[i];
        } else if (p[i] != q[i]) {
            return false;
        }
    }
    m.f1 = slots.count("{f}") ? slots["{f}"] : "";
    m.l1 = slots.count("{l}") ? slots["{l}"] : "";
    m.f2 = slots.count("{f2}") ? slots["{f2}"] : "";
    m.l2 = slots.count("{l2}") ? slots["{l2}"] : "";
    return true;
}

inline std::optional<QuestionMatch> parse_question(const std::string& question) {
    std::vector<std::string> q;
    std::istringstream iss(question);
    std::string w;
    while (iss >> w) q.push_back(w);
    // strip degraded-synthesis politeness prefix
    if (q.size() > 3 && q[0] == "please" && q[1] == "tell" && q[2] == "me") q.erase(q.begin(), q.begin() + 3);
    QuestionMatch m;
    for (const auto& t : single_templates())
        if (match_pattern(q, t.pattern, m)) {
            m.cross = false;
            m.relation_or_kind = t.relation;
            m.underspecified = t.underspecified;
            return m;
        }
    for (const auto& t : cross_templates())
        if (match_pattern(q, t.pattern, m)) {
            m.cross = true;
            m.relation_or_kind = t.kind;
            return m;
        }
    return std::nullopt;
}

inline const ParsedDoc* find_entity(const std::vector<ParsedDoc>& docs, const std::string& f, const std::string& l) {
    for (const auto& d : docs)
        if (d.first == f && d.last == l) return &d;
    return nullptr;
}

}  // namespace detail

// Reconstructs the answer from the documents alone; nullopt when the
// question cannot be answered from the supplied texts.
inline std::optional<std::string> oracle_answer(const std::string& question, const std::vector<std::string>& doc_texts) {
    auto qm = detail::parse_question(question);
    if (!qm) return std::nullopt;
    std::vector<ParsedDoc> docs;
    for (const auto& t : doc_texts)
        if (auto d = parse_document(t)) docs.push_back(*d);
    if (docs.empty()) return std::nullopt;

    if (!qm->cross) {
        const ParsedDoc* d = nullptr;
        if (qm->underspecified) {
            // resolvable only if exactly one entity carries the first name
            int hits = 0;
            for (const auto& cand : docs)
                if (cand.first == qm->f1) {
                    ++hits;
                    d = &cand;
                }
            if (hits != 1) return std::nullopt;
        } else {
            d = detail::find_entity(docs, qm->f1, qm->l1);
        }
        if (!d) return std::nullopt;
        auto it = d->facts.find(qm->relation_or_kind);
        return it == d->facts.end() ? std::nullopt : std::optional<std::string>(it->second);
    }

    const ParsedDoc* da = detail::find_entity(docs, qm->f1, qm->l1);
    const ParsedDoc* db = detail::find_entity(docs, qm->f2, qm->l2);
    if (!da || !db) return std::nullopt;
    const std::string& kind = qm->relation_or_kind;
    if (kind == "earlier" || kind == "later") {
        const int ya = std::stoi(da->facts.at("birth_year"));
        const int yb = std::stoi(db->facts.at("birth_year"));
        if (ya == yb) return std::nullopt;
        const bool a_wins = (kind == "earlier") ? (ya < yb) : (ya > yb);
        return a_wins ? da->first + " " + da->last : db->first + " " + db->last;
    }
    if (kind == "same_company") return std::optional<std::string>(da->facts.at("employer") == db->facts.at("employer") ? "yes" : "no");
    if (kind == "same_city") return std::optional<std::string>(da->facts.at("born_city") == db->facts.at("born_city") ? "yes" : "no");
    if (kind == "same_hobby") return std::optional<std::string>(da->facts.at("hobby") == db->facts.at("hobby") ? "yes" : "no");
    if (kind == "both_cities") return std::optional<std::string>(da->facts.at("born_city") + " and " + db->facts.at("born_city"));
    if (kind == "both_jobs") return std::optional<std::string>(da->facts.at("occupation") + " and " + db->facts.at("occupation"));
    return std::nullopt;
}

// -------- evaluation sets --------

// single-doc questions over a split; ood_templates selects the held-out phrasings
inline std::vector<TrainingTriple> build_eval_single(const FactWorld& w, Split split, bool ood_templates,
                                                     int max_questions, uint64_t seed) {
    std::vector<TrainingTriple> out;
    std::vector<int> ids = w.split_ids(split);
    Rng rng(seed ^ 0x6576616cULL);
    for (int id : ids) {
        const Entity& e = w.entity(id);
        for (const auto& t : single_templates()) {
            if (t.underspecified || t.ood != ood_templates) continue;
            out.push_back({{id}, fill(t.pattern, e), e.facts.at(t.relation), "single"});
        }
    }
    rng.shuffle(out);
    if (max_questions > 0 && static_cast<int>(out.size()) > max_questions) out.resize(static_cast<size_t>(max_questions));
    return out;
}

inline std::vector<TrainingTriple> build_eval_cross(const FactWorld& w, Split split, bool ood_templates,
                                                    int max_questions, uint64_t seed) {
    std::vector<TrainingTriple> out;
    std::vector<int> ids = w.split_ids(split);
    Rng rng(seed ^ 0x63657661ULL);
    if (ids.size() < 2) return out;
    for (size_t i = 0; i < ids.size(); ++i) {
        size_t j = rng.below(ids.size());
        while (j == i) j = rng.below(ids.size());
        const Entity& a = w.entity(ids[i]);
        const Entity& b = w.entity(ids[j]);
        for (const auto& t : cross_templates()) {
            if (t.ood != ood_templates) continue;
            const std::string ans = cross_answer(t, a, b);
            if (ans.empty()) continue;
            out.push_back({{ids[i], ids[j]}, fill(t.pattern, a, &b), ans, "cross"});
        }
    }
    rng.shuffle(out);
    if (max_questions > 0 && static_cast<int>(out.size()) > max_questions) out.resize(static_cast<size_t>(max_questions));
    return out;
}

// -------- vocabulary corpus --------

// lines whose words span every token the pipeline can produce
inline std::vector<std::string> vocab_corpus(const FactWorld& w) {
    std::vector<std::string> lines;
    for (const auto& d : w.docs) lines.push_back(d.text);
    auto pool_line = [&lines](const std::vector<std::string>& pool) {
        std::string s;
        for (const auto& p : pool) {
            if (!s.empty()) s += ' ';
            s += p;
        }
        lines.push_back(s);
    };
    pool_line(first_names());
    pool_line(last_names());
    pool_line(cities());
    pool_line(years());
    pool_line(occupations());
    pool_line(companies());
    pool_line(hobbies());
    pool_line(colors());
    lines.emplace_back("yes no please tell me");
    if (w.entities.size() >= 2) {
        const Entity& a = w.entities[0];
        const Entity& b = w.entities[1];
        for (const auto& t : single_templates()) lines.push_back(fill(t.pattern, a));
        for (const auto& t : cross_templates()) lines.push_back(fill(t.pattern, a, &b));
    }
    return lines;
}

}  // namespace paragen::datagen
