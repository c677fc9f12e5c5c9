#pragma once

// Inference cost comparison between the two deployment shapes: one shared
// encoder feeding every head versus one private encoder per head. Forward
// counts are exact by construction (the loops below are the only call
// sites); wall-clock numbers are medians over repeated passes after two
// untimed warmup passes. Both modes compute identical head outputs, so the
// report carries a checksum that doubles as a correctness cross-check.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/encoder.hpp"
#include "mtenc/heads.hpp"
#include "mtenc/tape.hpp"

namespace mtenc {

struct BenchReport {
    int tasks = 0;
    int inputs = 0;
    int seq_len = 0;
    int reps = 0;
    uint64_t shared_forwards = 0;    // encoder passes per repetition
    uint64_t isolated_forwards = 0;  // encoder passes per repetition
    double forward_ratio = 0.0;      // isolated / shared, equals the head count
    double shared_ms = 0.0;          // median per-repetition wall clock
    double isolated_ms = 0.0;
    double wall_ratio = 0.0;         // isolated_ms / shared_ms
    double shared_checksum = 0.0;    // sum over all head outputs, both modes
    double isolated_checksum = 0.0;
};

namespace detail {

// single-sequence inputs with no padding, so every forward does full work
inline std::vector<EncodedBatch> bench_inputs(const EncoderConfig& cfg, int n_inputs,
                                              int seq_len, uint64_t seed) {
    Rng rng(derive_seed(seed, {fnv1a64("bench-inputs")}));
    std::vector<EncodedBatch> inputs;
    inputs.reserve(n_inputs);
    for (int i = 0; i < n_inputs; ++i) {
        EncodedBatch b;
        b.batch = 1;
        b.seq = seq_len;
        b.token_ids.resize(seq_len);
        for (auto& id : b.token_ids)
            id = static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(cfg.vocab_size)));
        b.segment_ids.assign(seq_len, 0);
        b.positions.resize(seq_len);
        for (int t = 0; t < seq_len; ++t) b.positions[t] = t;
        b.pad_mask.assign(seq_len, 1.0);
        inputs.push_back(std::move(b));
    }
    return inputs;
}

inline double apply_head(Tape& tape, const Tensor& hidden, HeadKind kind,
                         HeadParams& head) {
    Tensor out;
    if (kind == HeadKind::ner) {
        const int b = hidden.shape[0], t = hidden.shape[1], h = hidden.shape[2];
        Tensor flat = tape.reshape(hidden, {b * t, h});
        out = tape.add_bias(tape.matmul(flat, head.w), head.b);
    } else {
        Tensor cls = tape.select_position(hidden, 0);
        out = tape.add_bias(tape.matmul(cls, head.w), head.b);
    }
    double sum = 0.0;
    for (int64_t i = 0; i < out.numel(); ++i) sum += out.ptr()[i];
    return sum;
}

inline double median_ms(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const size_t n = samples.size();
    return n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

}  // namespace detail

inline BenchReport run_bench(EncoderParams& enc,
                             const std::vector<std::pair<HeadKind, HeadParams*>>& heads,
                             int n_inputs, int seq_len, uint64_t seed, int reps = 5) {
    if (heads.empty()) throw ConfigError("bench: need at least one head");
    if (n_inputs < 1) throw ConfigError("bench: n_inputs must be positive");
    if (reps < 5) throw ConfigError("bench: need at least 5 timed repetitions");
    if (seq_len < 1 || seq_len > enc.cfg.max_seq_len)
        throw ConfigError("bench: seq_len must lie in [1, " +
                          std::to_string(enc.cfg.max_seq_len) + "]");

    const std::vector<EncodedBatch> inputs =
        detail::bench_inputs(enc.cfg, n_inputs, seq_len, seed);
    const int n_heads = static_cast<int>(heads.size());

    uint64_t forwards = 0;
    // per-(head, input) output sums; reduced in one canonical order afterwards
    // so both modes yield bitwise-identical checksums
    std::vector<double> sums(static_cast<size_t>(n_heads) * n_inputs, 0.0);
    auto checksum = [&] {
        double total = 0.0;
        for (double s : sums) total += s;
        return total;
    };

    // one encoder pass per input, every head reads the same hidden states
    auto shared_pass = [&] {
        forwards = 0;
        for (int i = 0; i < n_inputs; ++i) {
            Tape tape;
            Tensor hidden = encoder_forward(tape, enc, inputs[i]);
            ++forwards;
            for (int h = 0; h < n_heads; ++h)
                sums[static_cast<size_t>(h) * n_inputs + i] =
                    detail::apply_head(tape, hidden, heads[h].first, *heads[h].second);
        }
    };

    // one private encoder pass per head per input
    auto isolated_pass = [&] {
        forwards = 0;
        for (int h = 0; h < n_heads; ++h) {
            for (int i = 0; i < n_inputs; ++i) {
                Tape tape;
                Tensor hidden = encoder_forward(tape, enc, inputs[i]);
                ++forwards;
                sums[static_cast<size_t>(h) * n_inputs + i] =
                    detail::apply_head(tape, hidden, heads[h].first, *heads[h].second);
            }
        }
    };

    using clock = std::chrono::steady_clock;
    auto timed = [&](auto& pass) {
        const auto t0 = clock::now();
        pass();
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };

    for (int i = 0; i < 2; ++i) {  // allocation warm-up, untimed
        shared_pass();
        isolated_pass();
    }

    BenchReport rep;
    rep.tasks = n_heads;
    rep.inputs = n_inputs;
    rep.seq_len = seq_len;
    rep.reps = reps;

    std::vector<double> shared_times, isolated_times;
    for (int r = 0; r < reps; ++r) {
        shared_times.push_back(timed(shared_pass));
        rep.shared_forwards = forwards;
        rep.shared_checksum = checksum();
        isolated_times.push_back(timed(isolated_pass));
        rep.isolated_forwards = forwards;
        rep.isolated_checksum = checksum();
    }

    rep.shared_ms = detail::median_ms(shared_times);
    rep.isolated_ms = detail::median_ms(isolated_times);
    rep.forward_ratio =
        static_cast<double>(rep.isolated_forwards) / static_cast<double>(rep.shared_forwards);
    rep.wall_ratio = rep.isolated_ms / rep.shared_ms;
    return rep;
}

}  // namespace mtenc
