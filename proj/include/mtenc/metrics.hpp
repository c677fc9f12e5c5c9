#pragma once

// Evaluation metrics. Span F1 is exact-match and micro-averaged: a predicted
// span scores only when its start, end, and type all equal a gold span of
// the same example, and counts pool over the whole evaluation set.

#include <cmath>
#include <set>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/heads.hpp"

namespace mtenc {

struct F1Result {
    long tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// `pred` and `gold` hold per-example span lists, treated as sets: repeated
// identical triples collapse before counting. Empty denominators give 0
// rather than an error, so an all-O prediction scores 0, not a crash.
inline F1Result span_f1(const std::vector<std::vector<Span>>& pred,
                        const std::vector<std::vector<Span>>& gold) {
    if (pred.size() != gold.size())
        throw ShapeError("span_f1: prediction and gold sets differ in size");
    F1Result r;
    for (size_t i = 0; i < pred.size(); ++i) {
        const std::set<Span> p(pred[i].begin(), pred[i].end());
        const std::set<Span> g(gold[i].begin(), gold[i].end());
        long matched = 0;
        for (const auto& s : p) matched += g.count(s);
        r.tp += matched;
        r.fp += static_cast<long>(p.size()) - matched;
        r.fn += static_cast<long>(g.size()) - matched;
    }
    r.precision = r.tp + r.fp == 0 ? 0.0 : static_cast<double>(r.tp) / (r.tp + r.fp);
    r.recall = r.tp + r.fn == 0 ? 0.0 : static_cast<double>(r.tp) / (r.tp + r.fn);
    r.f1 = r.precision + r.recall == 0.0
               ? 0.0
               : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

// Sample Pearson correlation. Degenerate inputs are an evaluation error:
// correlation is undefined for fewer than two points or a constant side.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("pearson: input lengths differ");
    const size_t n = x.size();
    if (n < 2) throw EvalError("pearson: need at least two points");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw EvalError("pearson: zero variance input");
    return sxy / std::sqrt(sxx * syy);
}

inline double accuracy(const std::vector<int64_t>& pred, const std::vector<int64_t>& gold) {
    if (pred.size() != gold.size())
        throw ShapeError("accuracy: prediction and gold sets differ in size");
    if (pred.empty()) throw EvalError("accuracy: empty evaluation set");
    long hits = 0;
    for (size_t i = 0; i < pred.size(); ++i) hits += pred[i] == gold[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace mtenc
