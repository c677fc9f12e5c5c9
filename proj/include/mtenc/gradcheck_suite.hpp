#pragma once

// Derivative self-tests. Every differentiable primitive gets a small random
// composition whose analytic gradient is compared against central finite
// differences, and each task loss is checked end to end through the encoder
// by perturbing every parameter tensor in turn. The checks run on fixed
// derived seeds, so a report is reproducible bit for bit.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/encoder.hpp"
#include "mtenc/heads.hpp"
#include "mtenc/tape.hpp"
#include "mtenc/tensor.hpp"

namespace mtenc {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    double step = 1e-5;
    double tolerance = 1e-4;
    std::vector<GradCheckResult> checks;

    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return !checks.empty();
    }
};

namespace detail {

inline Tensor randt(Rng& rng, std::vector<int> shape, double scale) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : *t.data) v = scale * (2.0 * rng.uniform() - 1.0);
    return t;
}

// One check function per primitive. Each routes the probed tensor through
// the op under test plus an elementwise weighting, so gradients are
// non-uniform and transposition mistakes cannot cancel out.
inline std::map<std::string, std::function<double(Rng&, double)>> primitive_checks() {
    using Fn = std::function<double(Rng&, double)>;
    std::map<std::string, Fn> m;

    m["matmul"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {3, 3}, 0.8);
        const Tensor a = randt(rng, {3, 3}, 0.8), b = randt(rng, {3, 3}, 0.8);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.mul(t.matmul(x, b), t.matmul(a, x)));
            },
            x0, step);
    };
    m["bmm"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {2, 3, 4}, 0.8);
        const Tensor w = randt(rng, {2, 4, 3}, 0.8), c = randt(rng, {2, 3, 3}, 0.8);
        const Tensor l = randt(rng, {2, 2, 3}, 0.8), d = randt(rng, {2, 2, 4}, 0.8);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                Tensor left = t.reduce_sum(t.mul(t.bmm(x, w), c));
                Tensor right = t.reduce_sum(t.mul(t.bmm(l, x), d));
                return t.add(left, right);
            },
            x0, step);
    };
    m["add"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {4, 5}, 1.0);
        const Tensor a = randt(rng, {4, 5}, 1.0), c = randt(rng, {4, 5}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) { return t.reduce_sum(t.mul(t.add(x, a), c)); },
            x0, step);
    };
    m["add_bias"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {6}, 1.0);
        const Tensor mat = randt(rng, {4, 6}, 1.0), c = randt(rng, {4, 6}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.mul(t.add_bias(mat, x), c));
            },
            x0, step);
    };
    m["mul"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {3, 4}, 1.0);
        const Tensor a = randt(rng, {3, 4}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) { return t.reduce_sum(t.mul(t.mul(x, a), x)); },
            x0, step);
    };
    m["scale"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {3, 4}, 1.0);
        const Tensor a = randt(rng, {3, 4}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.scale(t.mul(x, a), -1.7));
            },
            x0, step);
    };
    m["gelu"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {3, 4}, 2.0);
        const Tensor c = randt(rng, {3, 4}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) { return t.reduce_sum(t.mul(t.gelu(x), c)); },
            x0, step);
    };
    m["softmax"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {3, 5}, 1.5);
        const Tensor c = randt(rng, {3, 5}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.mul(t.softmax(x, 1), c));
            },
            x0, step);
    };
    m["layer_norm"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {4, 6}, 1.0);
        const Tensor g = randt(rng, {6}, 1.0), b = randt(rng, {6}, 0.5);
        const Tensor c = randt(rng, {4, 6}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.mul(t.layer_norm(x, g, b, 1e-5), c));
            },
            x0, step);
    };
    m["cross_entropy"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {4, 3}, 1.0);
        const Tensor c = randt(rng, {4, 3}, 1.0);
        const std::vector<int64_t> targets = {0, 2, kIgnoreIndex, 1};
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.cross_entropy(t.mul(x, c), targets);
            },
            x0, step);
    };
    m["mse"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {5}, 1.0);
        const Tensor c = randt(rng, {5}, 1.0), target = randt(rng, {5}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) { return t.mse(t.mul(x, c), target); }, x0,
            step);
    };
    m["embedding"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {7, 4}, 1.0);
        const Tensor c = randt(rng, {5, 4}, 1.0);
        const std::vector<int64_t> ids = {1, 3, 1, 0, 6};  // repeats accumulate
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.mul(t.embedding(x, ids), c));
            },
            x0, step);
    };
    m["reshape"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {3, 4}, 1.0);
        const Tensor a = randt(rng, {3, 4}, 1.0), c = randt(rng, {6, 2}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.mul(t.reshape(t.mul(x, a), {6, 2}), c));
            },
            x0, step);
    };
    m["permute"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {2, 3, 2}, 1.0);
        const Tensor a = randt(rng, {2, 3, 2}, 1.0), c = randt(rng, {2, 2, 3}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.mul(t.permute(t.mul(x, a), {2, 0, 1}), c));
            },
            x0, step);
    };
    m["masked_fill"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {3, 4}, 1.0);
        const Tensor a = randt(rng, {3, 4}, 1.0), c = randt(rng, {3, 4}, 1.0);
        Tensor mask = Tensor::zeros({3, 4});
        for (int64_t i = 0; i < mask.numel(); ++i)
            (*mask.data)[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.mul(t.masked_fill(t.mul(x, a), mask, -2.5), c));
            },
            x0, step);
    };
    m["reduce_sum"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {3, 4}, 1.0);
        const Tensor c = randt(rng, {3, 4}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) { return t.reduce_sum(t.mul(x, c)); }, x0,
            step);
    };
    m["select_position"] = [](Rng& rng, double step) {
        const Tensor x0 = randt(rng, {2, 4, 3}, 1.0);
        const Tensor a = randt(rng, {2, 4, 3}, 1.0), c = randt(rng, {2, 3}, 1.0);
        return finite_diff_check(
            [&](Tape& t, const Tensor& x) {
                return t.reduce_sum(t.mul(t.select_position(t.mul(x, a), 1), c));
            },
            x0, step);
    };
    return m;
}

// Fixed two-row batch for the end-to-end loss checks. Every vocabulary id,
// position row, and segment row is consumed somewhere unpadded: a table row
// the forward never touches has an exactly-zero gradient, and checking zero
// against finite-difference roundoff only measures noise. The one padded
// slot keeps the attention masking path on the tape; its id recurs in the
// other row.
inline EncodedBatch gradcheck_batch() {
    EncodedBatch b;
    b.batch = 2;
    b.seq = 12;
    b.token_ids = {0,  1,  2,  3,  4,  5,  6,  7,  8,  9,  10, 11,
                   12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 5};
    b.segment_ids = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1,
                     0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
    b.positions = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11,
                   0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    b.pad_mask = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1,
                  1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0};
    return b;
}

inline EncoderConfig gradcheck_encoder() {
    EncoderConfig cfg;
    cfg.num_layers = 1;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.ffn_dim = 16;
    cfg.vocab_size = 23;   // every id appears in gradcheck_batch
    cfg.max_seq_len = 12;  // every position row is occupied
    cfg.init_std = 0.3;    // larger than training init so gradients sit well above noise
    return cfg;
}

// Worst relative error across every parameter tensor of encoder plus head
// for one task loss. Each parameter is probed by swapping the probe tensor
// into its slot; the shared grad buffer then receives the analytic gradient.
inline double composed_loss_check(HeadKind kind, uint64_t seed, double step) {
    const EncoderConfig cfg = gradcheck_encoder();
    EncoderParams enc = EncoderParams::init(cfg, derive_seed(seed, {fnv1a64("enc")}));
    const int out_dim = kind == HeadKind::ner ? 7 : kind == HeadKind::sts ? 1 : 3;
    HeadParams head =
        HeadParams::init(cfg.hidden_dim, out_dim, 0.3, derive_seed(seed, {fnv1a64("head")}));
    const EncodedBatch batch = gradcheck_batch();

    const std::vector<int64_t> tags = {kIgnoreIndex, 2, 3, 0, 0, 1, 4, 0, 5, 6, 0, kIgnoreIndex,
                                       kIgnoreIndex, 1, 0, 2, 0, 3, 0, 4, 0, 5, 6, kIgnoreIndex};
    const std::vector<double> scores = {1.0, 3.5};
    const std::vector<int64_t> labels = {0, 2};

    auto loss_of = [&](Tape& tape) {
        Tensor hidden = encoder_forward(tape, enc, batch);
        switch (kind) {
            case HeadKind::ner: return ner_loss(tape, hidden, head, tags).loss;
            case HeadKind::sts: return sts_loss(tape, hidden, head, scores).loss;
            case HeadKind::nli: return nli_loss(tape, hidden, head, labels).loss;
        }
        throw ConfigError("composed_loss_check: unknown head kind");
    };

    std::vector<std::pair<std::string, Tensor*>> params = enc.named();
    for (auto& [name, t] : head.named("probe")) params.emplace_back(name, t);

    double worst = 0.0;
    for (auto& [name, slot] : params) {
        const Tensor saved = *slot;
        const double err = finite_diff_check(
            [&](Tape& tape, const Tensor& x) {
                *slot = x;  // shallow swap: forward now reads and grads the probe
                return loss_of(tape);
            },
            saved, step);
        *slot = saved;
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace detail

// primitives first, in tape op order, then the composed task losses
inline std::vector<std::string> gradcheck_names() {
    return {"matmul",   "bmm",   "add",        "add_bias",    "mul",
            "scale",    "gelu",  "softmax",    "layer_norm",  "cross_entropy",
            "mse",      "embedding", "reshape", "permute",    "masked_fill",
            "reduce_sum", "select_position", "ner_loss", "sts_loss", "nli_loss"};
}

inline GradCheckReport run_gradcheck(const std::vector<std::string>& names, uint64_t seed,
                                     double step = 1e-5, double tolerance = 1e-4) {
    if (names.empty()) throw ConfigError("gradcheck: op list must not be empty");
    const auto prims = detail::primitive_checks();
    for (const std::string& name : names)
        if (!prims.count(name) && name != "ner_loss" && name != "sts_loss" &&
            name != "nli_loss")
            throw ConfigError("gradcheck: unknown check " + name);

    GradCheckReport report;
    report.step = step;
    report.tolerance = tolerance;
    for (const std::string& name : names) {
        GradCheckResult res;
        res.name = name;
        if (auto it = prims.find(name); it != prims.end()) {
            Rng rng(derive_seed(seed, {fnv1a64("gradcheck"), fnv1a64(name)}));
            res.max_rel_err = it->second(rng, step);
        } else if (name == "ner_loss") {
            res.max_rel_err = detail::composed_loss_check(HeadKind::ner, seed, step);
        } else if (name == "sts_loss") {
            res.max_rel_err = detail::composed_loss_check(HeadKind::sts, seed, step);
        } else {
            res.max_rel_err = detail::composed_loss_check(HeadKind::nli, seed, step);
        }
        res.pass = res.max_rel_err < tolerance;
        report.checks.push_back(std::move(res));
    }
    return report;
}

inline GradCheckReport run_gradcheck(uint64_t seed = 0, double step = 1e-5,
                                     double tolerance = 1e-4) {
    return run_gradcheck(gradcheck_names(), seed, step, tolerance);
}

}  // namespace mtenc
