#pragma once

// Per-task heads over the shared encoder output. Each head is a single
// linear map: token tagging reads every position, sentence scoring and
// classification read the first ([CLS]) position. BIO span extraction is
// lenient: an I- tag without a matching open span simply starts one.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/tape.hpp"
#include "mtenc/tensor.hpp"
#include "mtenc/tokenizer.hpp"

namespace mtenc {

enum class HeadKind { ner, sts, nli };
enum class MetricKind { micro_f1, pearson, accuracy };

inline const char* head_kind_name(HeadKind k) {
    switch (k) {
        case HeadKind::ner: return "ner";
        case HeadKind::sts: return "sts";
        case HeadKind::nli: return "nli";
    }
    return "?";
}

inline const char* metric_kind_name(MetricKind m) {
    switch (m) {
        case MetricKind::micro_f1: return "micro_f1";
        case MetricKind::pearson: return "pearson";
        case MetricKind::accuracy: return "accuracy";
    }
    return "?";
}

inline HeadKind head_kind_from(const std::string& s) {
    if (s == "ner") return HeadKind::ner;
    if (s == "sts") return HeadKind::sts;
    if (s == "nli") return HeadKind::nli;
    throw ConfigError("unknown head kind: " + s);
}

inline MetricKind metric_kind_from(const std::string& s) {
    if (s == "micro_f1") return MetricKind::micro_f1;
    if (s == "pearson") return MetricKind::pearson;
    if (s == "accuracy") return MetricKind::accuracy;
    throw ConfigError("unknown metric: " + s);
}

// --------------------------------------------------------------- tag set

constexpr int kTagO = 0;
constexpr int kTagB = 1;
constexpr int kTagI = 2;

struct TagSet {
    std::vector<std::string> labels;
    std::vector<int> role;          // kTagO / kTagB / kTagI per label id
    std::vector<std::string> type;  // entity type per label id, "" for O
    int o_id = -1;

    int size() const { return static_cast<int>(labels.size()); }

    int id(const std::string& label) const {
        for (int i = 0; i < size(); ++i)
            if (labels[i] == label) return i;
        return -1;
    }

    static TagSet from_labels(const std::vector<std::string>& labels) {
        if (labels.empty()) throw ConfigError("tag set: no labels");
        TagSet ts;
        ts.labels = labels;
        ts.role.resize(labels.size());
        ts.type.resize(labels.size());
        for (size_t i = 0; i < labels.size(); ++i) {
            const std::string& l = labels[i];
            for (size_t j = 0; j < i; ++j)
                if (labels[j] == l) throw ConfigError("tag set: duplicate label " + l);
            if (l == "O") {
                ts.role[i] = kTagO;
                ts.o_id = static_cast<int>(i);
            } else if (l.size() > 2 && (l[0] == 'B' || l[0] == 'I') && l[1] == '-') {
                ts.role[i] = l[0] == 'B' ? kTagB : kTagI;
                ts.type[i] = l.substr(2);
            } else {
                throw ConfigError("tag set: malformed label " + l);
            }
        }
        if (ts.o_id < 0) throw ConfigError("tag set: missing O label");
        return ts;
    }
};

// ----------------------------------------------------------------- spans

struct Span {
    int start, end;
    std::string type;

    bool operator==(const Span& o) const {
        return start == o.start && end == o.end && type == o.type;
    }
    bool operator<(const Span& o) const {
        return std::tie(start, end, type) < std::tie(o.start, o.end, o.type);
    }
};

// Lenient BIO decode over parallel tag/offset lists. Positions with the
// (-1, -1) sentinel offset (specials, pads) are skipped and close any open
// span. Spans report character offsets of their first and last unit.
inline std::vector<Span> spans_from_bio(const std::vector<int>& tag_ids,
                                        const std::vector<std::pair<int, int>>& offsets,
                                        const TagSet& ts) {
    if (tag_ids.size() != offsets.size())
        throw ShapeError("spans_from_bio: tags and offsets must align");
    std::vector<Span> out;
    bool open = false;
    Span cur{0, 0, ""};
    auto close = [&]() {
        if (open) out.push_back(cur);
        open = false;
    };
    for (size_t i = 0; i < tag_ids.size(); ++i) {
        if (offsets[i].first < 0) {
            close();
            continue;
        }
        const int tag = tag_ids[i];
        if (tag < 0 || tag >= ts.size()) throw LabelError("spans_from_bio: tag id out of range");
        if (ts.role[tag] == kTagO) {
            close();
        } else if (ts.role[tag] == kTagB) {
            close();
            cur = {offsets[i].first, offsets[i].second, ts.type[tag]};
            open = true;
        } else {  // I-tag: continue a same-type span, otherwise start one
            if (open && cur.type == ts.type[tag]) {
                cur.end = offsets[i].second;
            } else {
                close();
                cur = {offsets[i].first, offsets[i].second, ts.type[tag]};
                open = true;
            }
        }
    }
    close();
    return out;
}

// ----------------------------------------------------------------- heads

struct HeadParams {
    Tensor w;  // [hidden, out]
    Tensor b;  // [out]

    static HeadParams init(int hidden, int out, double init_std, uint64_t seed) {
        if (hidden < 1 || out < 1) throw ConfigError("head: dims must be positive");
        HeadParams h;
        Rng rng(derive_seed(seed, {fnv1a64("head-init")}));
        h.w = Tensor::zeros({hidden, out});
        for (auto& v : *h.w.data) v = rng.truncated_normal(init_std);
        h.b = Tensor::zeros({out});
        return h;
    }

    std::vector<std::pair<std::string, Tensor*>> named(const std::string& task_id) {
        return {{"head." + task_id + ".weight", &w}, {"head." + task_id + ".bias", &b}};
    }

    int out_dim() const { return b.shape.empty() ? 0 : b.shape[0]; }

    HeadParams clone() const {
        HeadParams h;
        h.w = w.clone();
        h.b = b.clone();
        return h;
    }
};

// argmax with ties resolved to the lowest index
inline int argmax_lowest(const double* row, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

inline double sts_clamp(double v) { return std::min(5.0, std::max(0.0, v)); }

// Token tagging: per-position logits and mean cross-entropy over positions
// whose tag is not kIgnoreIndex (specials and pads are ignored upstream).
struct NerOut {
    Tensor loss;
    Tensor logits;  // [B, T, C]
};

inline NerOut ner_loss(Tape& tape, const Tensor& hidden, HeadParams& head,
                       const std::vector<int64_t>& tags) {
    if (hidden.rank() != 3) throw ShapeError("ner_loss: hidden must be [B, T, H]");
    const int b = hidden.shape[0], t = hidden.shape[1], h = hidden.shape[2];
    if (tags.size() != static_cast<size_t>(b) * t)
        throw ShapeError("ner_loss: one tag per position required");
    tape.leaf(head.w);
    tape.leaf(head.b);
    Tensor flat = tape.reshape(hidden, {b * t, h});
    Tensor logits = tape.add_bias(tape.matmul(flat, head.w), head.b);
    Tensor loss = tape.cross_entropy(logits, tags);
    return {loss, tape.reshape(logits, {b, t, head.out_dim()})};
}

// Sentence regression on the [CLS] state. The loss sees the raw output;
// clamping to [0, 5] happens only when predictions are read out.
struct StsOut {
    Tensor loss;
    Tensor raw;  // [B]
};

inline StsOut sts_loss(Tape& tape, const Tensor& hidden, HeadParams& head,
                       const std::vector<double>& targets) {
    if (hidden.rank() != 3) throw ShapeError("sts_loss: hidden must be [B, T, H]");
    const int b = hidden.shape[0];
    if (targets.size() != static_cast<size_t>(b))
        throw ShapeError("sts_loss: one target per input required");
    for (double v : targets)
        if (!(v >= 0.0 && v <= 5.0))
            throw DataError("sts_loss: target " + format_g17(v) + " outside [0, 5]");
    tape.leaf(head.w);
    tape.leaf(head.b);
    Tensor cls = tape.select_position(hidden, 0);
    Tensor raw = tape.reshape(tape.add_bias(tape.matmul(cls, head.w), head.b), {b});
    Tensor loss = tape.mse(raw, Tensor::from({b}, targets));
    return {loss, raw};
}

inline std::vector<double> sts_predictions(const Tensor& raw) {
    std::vector<double> out(raw.ptr(), raw.ptr() + raw.numel());
    for (auto& v : out) v = sts_clamp(v);
    return out;
}

// Sentence classification on the [CLS] state.
struct NliOut {
    Tensor loss;
    Tensor logits;  // [B, C]
};

inline NliOut nli_loss(Tape& tape, const Tensor& hidden, HeadParams& head,
                       const std::vector<int64_t>& labels) {
    if (hidden.rank() != 3) throw ShapeError("nli_loss: hidden must be [B, T, H]");
    const int b = hidden.shape[0];
    if (labels.size() != static_cast<size_t>(b))
        throw ShapeError("nli_loss: one label per input required");
    tape.leaf(head.w);
    tape.leaf(head.b);
    Tensor cls = tape.select_position(hidden, 0);
    Tensor logits = tape.add_bias(tape.matmul(cls, head.w), head.b);
    Tensor loss = tape.cross_entropy(logits, labels);
    return {loss, logits};
}

// Char-offset entity spans from per-position logits of one sequence.
inline std::vector<Span> ner_decode(const double* logits, int t, int c, const TagSet& ts,
                                    const Encoding& enc) {
    if (t > enc.length()) throw ShapeError("ner_decode: more positions than the encoding has");
    if (c != ts.size()) throw ShapeError("ner_decode: logit width must match the tag set");
    std::vector<int> tags(t);
    std::vector<std::pair<int, int>> offsets(t);
    for (int i = 0; i < t; ++i) {
        tags[i] = argmax_lowest(logits + static_cast<int64_t>(i) * c, c);
        offsets[i] = enc.offsets[i];
    }
    return spans_from_bio(tags, offsets, ts);
}

}  // namespace mtenc
