#pragma once

// Dataset loading, synthetic task generation, batching, and collation.
//
// File inputs: token-per-line CoNLL with tab-separated tags for tagging
// tasks, three-field TSV for sentence pairs. Synthetic tasks are produced
// by seeded rules whose targets can be recomputed from the texts alone, so
// an independent oracle can audit every generated example.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/encoder.hpp"
#include "mtenc/heads.hpp"
#include "mtenc/tokenizer.hpp"

namespace mtenc {

// ---------------------------------------------------------------- records

struct NerExample {
    std::vector<std::string> words;
    std::vector<std::string> tags;                // BIO strings, one per word
    std::vector<std::pair<int, int>> offsets;     // char spans after space-joining

    std::string text() const {
        std::string out;
        for (size_t i = 0; i < words.size(); ++i) {
            if (i) out += ' ';
            out += words[i];
        }
        return out;
    }
};

struct PairExample {
    std::string text_a, text_b;
    double score = 0.0;       // sts target
    int label = -1;           // nli label id
    std::string label_name;
};

struct TaskData {
    HeadKind kind = HeadKind::ner;
    std::vector<NerExample> ner;
    std::vector<PairExample> pairs;

    int size() const {
        return kind == HeadKind::ner ? static_cast<int>(ner.size())
                                     : static_cast<int>(pairs.size());
    }
};

// ---------------------------------------------------------------- parsing

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

inline bool valid_bio_tag(const std::string& tag) {
    if (tag == "O") return true;
    return tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-';
}

inline void finish_sentence(std::vector<NerExample>& out, NerExample& cur) {
    if (cur.words.empty()) return;
    int cursor = 0;
    cur.offsets.clear();
    for (const auto& w : cur.words) {
        cur.offsets.emplace_back(cursor, cursor + static_cast<int>(w.size()));
        cursor += static_cast<int>(w.size()) + 1;
    }
    out.push_back(std::move(cur));
    cur = NerExample{};
}

}  // namespace detail

// token<TAB>tag lines, sentences separated by blank lines. Offsets are
// assigned as if the tokens were joined by single spaces.
inline std::vector<NerExample> parse_conll(const std::string& content) {
    std::vector<NerExample> out;
    NerExample cur;
    std::istringstream in(content);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            detail::finish_sentence(out, cur);
            continue;
        }
        auto fields = detail::split_tabs(line);
        if (fields.size() != 2)
            throw ParseError("conll line " + std::to_string(line_no) +
                             ": expected token<TAB>tag, got " + std::to_string(fields.size()) +
                             " fields");
        if (fields[0].empty())
            throw ParseError("conll line " + std::to_string(line_no) + ": empty token");
        for (char c : fields[0])
            if (std::isspace(static_cast<unsigned char>(c)))
                throw ParseError("conll line " + std::to_string(line_no) +
                                 ": whitespace inside token");
        if (!detail::valid_bio_tag(fields[1]))
            throw ParseError("conll line " + std::to_string(line_no) + ": bad tag " + fields[1]);
        cur.words.push_back(fields[0]);
        cur.tags.push_back(fields[1]);
    }
    detail::finish_sentence(out, cur);
    return out;
}

// text_a<TAB>text_b<TAB>target. For sts the target is a decimal in [0, 5];
// for nli it must be one of the given label names.
inline std::vector<PairExample> parse_pairs(const std::string& content, HeadKind kind,
                                            const std::vector<std::string>& labels = {}) {
    if (kind == HeadKind::ner) throw ConfigError("parse_pairs: tagging data is not pair data");
    std::vector<PairExample> out;
    std::istringstream in(content);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_tabs(line);
        if (fields.size() != 3)
            throw ParseError("pairs line " + std::to_string(line_no) + ": expected 3 fields, got " +
                             std::to_string(fields.size()));
        PairExample ex;
        ex.text_a = fields[0];
        ex.text_b = fields[1];
        if (kind == HeadKind::sts) {
            const char* s = fields[2].c_str();
            char* end = nullptr;
            ex.score = std::strtod(s, &end);
            if (end == s || *end != '\0')
                throw ParseError("pairs line " + std::to_string(line_no) + ": bad score " +
                                 fields[2]);
            if (!(ex.score >= 0.0 && ex.score <= 5.0))
                throw ParseError("pairs line " + std::to_string(line_no) + ": score " + fields[2] +
                                 " outside [0, 5]");
        } else {
            ex.label = -1;
            for (size_t i = 0; i < labels.size(); ++i)
                if (labels[i] == fields[2]) ex.label = static_cast<int>(i);
            if (ex.label < 0)
                throw ParseError("pairs line " + std::to_string(line_no) + ": unknown label " +
                                 fields[2]);
            ex.label_name = fields[2];
        }
        out.push_back(std::move(ex));
    }
    return out;
}

// ------------------------------------------------------------ serializing

inline std::string conll_to_string(const std::vector<NerExample>& examples) {
    std::string out;
    for (const auto& ex : examples) {
        for (size_t i = 0; i < ex.words.size(); ++i)
            out += ex.words[i] + "\t" + ex.tags[i] + "\n";
        out += "\n";
    }
    return out;
}

inline std::string pairs_to_string(const std::vector<PairExample>& examples, HeadKind kind) {
    std::string out;
    char buf[32];
    for (const auto& ex : examples) {
        out += ex.text_a + "\t" + ex.text_b + "\t";
        if (kind == HeadKind::sts) {
            std::snprintf(buf, sizeof(buf), "%.1f", ex.score);
            out += buf;
        } else {
            out += ex.label_name;
        }
        out += "\n";
    }
    return out;
}

// -------------------------------------------------------- synthetic tasks

namespace synth {

// small deterministic pronounceable word pool
inline std::string word_for(int i) {
    static const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m",
                                    "n", "p", "r", "s", "t", "v", "z"};
    static const char* kVowels[] = {"a", "e", "i", "o", "u"};
    std::string w;
    int n = i;
    do {
        w += kOnsets[(n % 70) / 5];
        w += kVowels[n % 5];
        n /= 70;
    } while (n > 0);
    return w;
}

// word indices 0..5 are entity triggers, 6 is the negation marker, the
// regular pool starts at 10
constexpr int kTriggerCount = 6;
constexpr int kNegationIndex = 6;
constexpr int kPoolBase = 10;

inline const std::vector<std::string>& entity_types() {
    static const std::vector<std::string> t = {"ALPHA", "BETA", "GAMMA"};
    return t;
}

inline std::vector<std::string> ner_labels() {
    std::vector<std::string> labels = {"O"};
    for (const auto& t : entity_types()) {
        labels.push_back("B-" + t);
        labels.push_back("I-" + t);
    }
    return labels;
}

inline std::vector<std::string> nli_labels() {
    return {"entailment", "neutral", "contradiction"};
}

// trigger j marks the next (j % 2 + 1) words as entity type (j / 2)
inline void apply_trigger_rule(const std::vector<std::string>& words,
                               std::vector<std::string>& tags) {
    tags.assign(words.size(), "O");
    for (size_t i = 0; i < words.size(); ++i) {
        for (int j = 0; j < kTriggerCount; ++j) {
            if (words[i] != word_for(j)) continue;
            const std::string& type = entity_types()[j / 2];
            const int len = j % 2 + 1;
            for (int m = 1; m <= len && i + m < words.size(); ++m)
                tags[i + m] = (m == 1 ? "B-" : "I-") + type;
            break;
        }
    }
}

inline std::vector<NerExample> gen_ner(uint64_t seed, int n, int pool_size) {
    Rng rng(seed);
    std::vector<NerExample> out;
    out.reserve(n);
    for (int k = 0; k < n; ++k) {
        NerExample ex;
        const int len = 5 + static_cast<int>(rng.bounded(6));
        for (int i = 0; i < len; ++i) {
            if (rng.uniform() < 0.25)
                ex.words.push_back(word_for(static_cast<int>(rng.bounded(kTriggerCount))));
            else
                ex.words.push_back(
                    word_for(kPoolBase + static_cast<int>(rng.bounded(pool_size))));
        }
        apply_trigger_rule(ex.words, ex.tags);
        int cursor = 0;
        for (const auto& w : ex.words) {
            ex.offsets.emplace_back(cursor, cursor + static_cast<int>(w.size()));
            cursor += static_cast<int>(w.size()) + 1;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

inline std::vector<std::string> split_ws(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

// multiset Jaccard similarity of the two word lists
inline double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::map<std::string, int> ca, cb;
    for (const auto& w : a) ++ca[w];
    for (const auto& w : b) ++cb[w];
    long inter = 0, uni = 0;
    for (const auto& [w, c] : ca) {
        auto it = cb.find(w);
        const int other = it == cb.end() ? 0 : it->second;
        inter += std::min(c, other);
        uni += std::max(c, other);
    }
    for (const auto& [w, c] : cb)
        if (!ca.count(w)) uni += c;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// 5 * jaccard, rounded half-up to one decimal
inline double sts_score(const std::string& text_a, const std::string& text_b) {
    const double j = jaccard(split_ws(text_a), split_ws(text_b));
    return std::floor(50.0 * j + 0.5) / 10.0;
}

inline std::vector<PairExample> gen_sts(uint64_t seed, int n, int pool_size) {
    Rng rng(seed);
    std::vector<PairExample> out;
    out.reserve(n);
    for (int k = 0; k < n; ++k) {
        const int len = 4 + static_cast<int>(rng.bounded(6));
        std::vector<std::string> a;
        for (int i = 0; i < len; ++i)
            a.push_back(word_for(kPoolBase + static_cast<int>(rng.bounded(pool_size))));
        const double keep = 0.2 + 0.8 * rng.uniform();
        std::vector<std::string> b;
        for (const auto& w : a)
            if (rng.uniform() < keep) b.push_back(w);
        const int fresh = static_cast<int>(rng.bounded(4));
        for (int i = 0; i < fresh; ++i)
            b.push_back(word_for(kPoolBase + static_cast<int>(rng.bounded(pool_size))));
        if (b.empty()) b.push_back(a[0]);
        for (size_t i = b.size(); i > 1; --i)
            std::swap(b[i - 1], b[rng.bounded(i)]);
        PairExample ex;
        for (size_t i = 0; i < a.size(); ++i) ex.text_a += (i ? " " : "") + a[i];
        for (size_t i = 0; i < b.size(); ++i) ex.text_b += (i ? " " : "") + b[i];
        ex.score = sts_score(ex.text_a, ex.text_b);
        out.push_back(std::move(ex));
    }
    return out;
}

// Label rule, applied to the final texts: hypothesis being a sub-multiset
// of the premise wins first, then a negation marker on exactly one side,
// otherwise neutral.
inline int nli_rule(const std::string& premise, const std::string& hypothesis) {
    auto pw = split_ws(premise);
    auto hw = split_ws(hypothesis);
    std::map<std::string, int> pc;
    for (const auto& w : pw) ++pc[w];
    bool subset = !hw.empty();
    std::map<std::string, int> hc;
    for (const auto& w : hw) ++hc[w];
    for (const auto& [w, c] : hc)
        if (pc[w] < c) subset = false;
    if (subset) return 0;
    const std::string neg = word_for(kNegationIndex);
    const bool pneg = pc.count(neg) && pc[neg] > 0;
    const bool hneg = hc.count(neg) && hc[neg] > 0;
    if (pneg != hneg) return 2;
    return 1;
}

inline std::vector<PairExample> gen_nli(uint64_t seed, int n, int pool_size) {
    // Premises run up to 9 words. The neutral recipes draw until they find a
    // pool word absent from the premise, so a pool the premise can cover
    // entirely would spin forever.
    if (pool_size < 10) throw ConfigError("gen_nli: pool_size must be at least 10");
    Rng rng(seed);
    const std::string neg = word_for(kNegationIndex);
    std::vector<PairExample> out;
    out.reserve(n);
    auto pool_word = [&]() {
        return word_for(kPoolBase + static_cast<int>(rng.bounded(pool_size)));
    };
    auto fresh_word = [&](const std::vector<std::string>& avoid) {
        while (true) {
            std::string w = pool_word();
            bool hit = false;
            for (const auto& v : avoid) hit = hit || v == w;
            if (!hit) return w;
        }
    };
    for (int k = 0; k < n; ++k) {
        const int len = 5 + static_cast<int>(rng.bounded(5));
        std::vector<std::string> premise;
        for (int i = 0; i < len; ++i) premise.push_back(pool_word());
        std::vector<std::string> hyp;
        const int recipe = static_cast<int>(rng.bounded(3));
        if (recipe == 0) {
            for (const auto& w : premise)
                if (rng.uniform() < 0.6) hyp.push_back(w);
            if (hyp.empty()) hyp.push_back(premise[0]);
        } else if (recipe == 1) {
            for (const auto& w : premise)
                if (rng.uniform() < 0.5) hyp.push_back(w);
            const int extra = 1 + static_cast<int>(rng.bounded(2));
            for (int i = 0; i < extra; ++i) hyp.push_back(fresh_word(premise));
        } else {
            if (rng.bounded(2) == 0) {
                for (const auto& w : premise)
                    if (rng.uniform() < 0.5) hyp.push_back(w);
                hyp.push_back(neg);
            } else {
                for (const auto& w : premise)
                    if (rng.uniform() < 0.5) hyp.push_back(w);
                hyp.push_back(fresh_word(premise));
                premise.insert(premise.begin() + rng.bounded(premise.size() + 1), neg);
            }
        }
        for (size_t i = hyp.size(); i > 1; --i) std::swap(hyp[i - 1], hyp[rng.bounded(i)]);
        PairExample ex;
        for (size_t i = 0; i < premise.size(); ++i) ex.text_a += (i ? " " : "") + premise[i];
        for (size_t i = 0; i < hyp.size(); ++i) ex.text_b += (i ? " " : "") + hyp[i];
        ex.label = nli_rule(ex.text_a, ex.text_b);
        ex.label_name = nli_labels()[ex.label];
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace synth

struct SynthTask {
    TaskData train, test;
    std::vector<std::string> labels;
};

// Train and test splits come from independent derived streams, so resizing
// one never perturbs the other.
inline SynthTask synth_task(HeadKind kind, uint64_t seed, int n_train, int n_test,
                            int pool_size = 120) {
    if (n_train < 1 || n_test < 1) throw ConfigError("synth_task: split sizes must be positive");
    if (pool_size < 2) throw ConfigError("synth_task: pool_size must be at least 2");
    const uint64_t strain = derive_seed(seed, {fnv1a64("synth-train")});
    const uint64_t stest = derive_seed(seed, {fnv1a64("synth-test")});
    SynthTask out;
    out.train.kind = out.test.kind = kind;
    switch (kind) {
        case HeadKind::ner:
            out.train.ner = synth::gen_ner(strain, n_train, pool_size);
            out.test.ner = synth::gen_ner(stest, n_test, pool_size);
            out.labels = synth::ner_labels();
            break;
        case HeadKind::sts:
            out.train.pairs = synth::gen_sts(strain, n_train, pool_size);
            out.test.pairs = synth::gen_sts(stest, n_test, pool_size);
            break;
        case HeadKind::nli:
            out.train.pairs = synth::gen_nli(strain, n_train, pool_size);
            out.test.pairs = synth::gen_nli(stest, n_test, pool_size);
            out.labels = synth::nli_labels();
            break;
    }
    return out;
}

// ---------------------------------------------------------------- batching

// Cycling index iterator with one shuffle per epoch, derived from
// (seed, task_key, epoch). The wrap counter increments lazily: drawing from
// an exhausted epoch rolls into the next one and counts the restart.
class BatchIter {
  public:
    BatchIter() = default;

    BatchIter(int n, int batch_size, uint64_t seed, uint64_t task_key, bool cycling)
        : n_(n), batch_(batch_size), seed_(seed), task_key_(task_key), cycling_(cycling) {
        if (n < 1) throw ConfigError("batch iter: empty dataset");
        if (batch_size < 1) throw ConfigError("batch iter: batch_size must be positive");
        reshuffle();
    }

    // Next index block, at most batch_size long; the final block of an
    // epoch may be short. Non-cycling mode returns empty at epoch end.
    std::vector<int> next() {
        if (cursor_ >= n_) {
            if (!cycling_) return {};
            ++epoch_;
            ++wraps_;
            cursor_ = 0;
            reshuffle();
        }
        const int take = std::min(batch_, n_ - cursor_);
        std::vector<int> out(order_.begin() + cursor_, order_.begin() + cursor_ + take);
        cursor_ += take;
        return out;
    }

    int batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }
    int size() const { return n_; }
    uint32_t epoch() const { return epoch_; }
    uint32_t cursor() const { return cursor_; }
    uint32_t wraps() const { return wraps_; }

    // ordinal of the batch the next draw produces, within its epoch
    uint32_t next_batch_ordinal() const {
        return cursor_ >= n_ ? 0 : static_cast<uint32_t>(cursor_ / batch_);
    }

    // At an outer-loop boundary an exactly-finished epoch rolls over as a
    // fresh epoch rather than as a counted wrap; either way counting
    // restarts anew for the loop that begins here.
    void normalize_loop_start() {
        if (cursor_ >= n_) {
            ++epoch_;
            cursor_ = 0;
            reshuffle();
        }
        wraps_ = 0;
    }

    void restore(uint32_t epoch, uint32_t cursor, uint32_t wraps) {
        if (cursor > static_cast<uint32_t>(n_))
            throw CorruptError("batch iter: cursor beyond dataset size");
        epoch_ = epoch;
        cursor_ = static_cast<int>(cursor);
        wraps_ = wraps;
        reshuffle();
    }

  private:
    int n_ = 0;
    int batch_ = 1;
    uint64_t seed_ = 0;
    uint64_t task_key_ = 0;
    bool cycling_ = true;
    uint32_t epoch_ = 0;
    int cursor_ = 0;
    uint32_t wraps_ = 0;
    std::vector<int> order_;

    void reshuffle() {
        order_.resize(n_);
        for (int i = 0; i < n_; ++i) order_[i] = i;
        if (!cycling_) return;  // evaluation order stays sequential
        Rng rng(derive_seed(seed_, {fnv1a64("shuffle"), task_key_, epoch_}));
        for (int i = n_ - 1; i > 0; --i)
            std::swap(order_[i], order_[rng.bounded(static_cast<uint64_t>(i) + 1)]);
    }
};

// ---------------------------------------------------------------- collate

inline std::vector<Encoding> encode_dataset(const TaskData& data, const Vocab& vocab,
                                            int max_len) {
    std::vector<Encoding> out;
    if (data.kind == HeadKind::ner) {
        out.reserve(data.ner.size());
        for (const auto& ex : data.ner) out.push_back(encode_single(ex.text(), vocab, max_len));
    } else {
        out.reserve(data.pairs.size());
        for (const auto& ex : data.pairs)
            out.push_back(encode_pair(ex.text_a, ex.text_b, vocab, max_len));
    }
    return out;
}

// gold char-offset spans of one tagging example
inline std::vector<Span> gold_spans(const NerExample& ex, const TagSet& ts) {
    std::vector<int> ids(ex.tags.size());
    for (size_t i = 0; i < ex.tags.size(); ++i) {
        ids[i] = ts.id(ex.tags[i]);
        if (ids[i] < 0) throw DataError("gold_spans: tag " + ex.tags[i] + " not in the tag set");
    }
    return spans_from_bio(ids, ex.offsets, ts);
}

struct Batch {
    EncodedBatch packed;
    std::vector<const Encoding*> encs;
    std::vector<int> indices;
    std::vector<int64_t> ner_tags;     // [B * seq], kIgnoreIndex off-word
    std::vector<double> sts_targets;   // [B]
    std::vector<int64_t> nli_labels;   // [B]
};

// Piece-level tag alignment: the first piece of a word carries the word's
// tag, continuation pieces carry the matching I- tag (O stays O), and
// special or padded positions are ignored by the loss.
inline Batch collate(const TaskData& data, const std::vector<Encoding>& encs,
                     const std::vector<int>& indices, const TagSet* ts, bool trim = true) {
    if (indices.empty()) throw ShapeError("collate: empty index block");
    if (encs.size() != static_cast<size_t>(data.size()))
        throw ShapeError("collate: encodings out of step with the dataset");
    Batch b;
    b.indices = indices;
    for (int idx : indices) {
        if (idx < 0 || idx >= data.size()) throw ShapeError("collate: index out of range");
        b.encs.push_back(&encs[idx]);
    }
    b.packed = pack_batch(b.encs, trim);

    if (data.kind == HeadKind::ner) {
        if (!ts) throw ConfigError("collate: tagging batches need a tag set");
        b.ner_tags.assign(static_cast<size_t>(b.packed.batch) * b.packed.seq, kIgnoreIndex);
        for (int row = 0; row < b.packed.batch; ++row) {
            const NerExample& ex = data.ner[indices[row]];
            const Encoding& enc = *b.encs[row];
            int prev_word = -1;
            for (int t = 0; t < b.packed.seq; ++t) {
                const int w = enc.word_index[t];
                if (w < 0) {
                    prev_word = -1;
                    continue;
                }
                if (w >= static_cast<int>(ex.tags.size()))
                    throw DataError("collate: encoding refers past the word list");
                const std::string& tag = ex.tags[w];
                std::string effective = tag;
                if (w == prev_word && tag != "O") effective = "I-" + tag.substr(2);
                const int id = ts->id(effective);
                if (id < 0)
                    throw DataError("collate: tag " + effective + " not in the task label set");
                b.ner_tags[static_cast<size_t>(row) * b.packed.seq + t] = id;
                prev_word = w;
            }
        }
    } else if (data.kind == HeadKind::sts) {
        for (int idx : indices) b.sts_targets.push_back(data.pairs[idx].score);
    } else {
        for (int idx : indices) b.nli_labels.push_back(data.pairs[idx].label);
    }
    return b;
}

}  // namespace mtenc
