#pragma once

// Shared text encoder: token + position + segment embeddings, a stack of
// self-attention/FFN blocks with post-sublayer layer norm, and the
// [CLS]-first sequence layout produced by the tokenizer.
//
// Padding is handled by adding -1e9 to attention scores of padded keys
// before softmax. With trailing pads the exponential of those scores
// underflows to exactly zero, so hidden states at real positions are
// bit-identical no matter how much padding a batch carries. Batches may
// therefore be trimmed to the longest real sequence for speed.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/tape.hpp"
#include "mtenc/tensor.hpp"
#include "mtenc/tokenizer.hpp"

namespace mtenc {

struct EncoderConfig {
    int num_layers = 2;
    int hidden_dim = 64;
    int num_heads = 4;
    int ffn_dim = 256;
    int vocab_size = 1024;
    int max_seq_len = 128;
    int num_segments = 2;
    double dropout_rate = 0.1;
    double init_std = 0.02;
    double ln_eps = 1e-12;

    void validate() const {
        // zero layers is legal: the stack degenerates to the embedding block
        if (num_layers < 0) throw ConfigError("encoder: num_layers must be non-negative");
        if (hidden_dim < 1 || ffn_dim < 1) throw ConfigError("encoder: dims must be positive");
        if (num_heads < 1 || hidden_dim % num_heads != 0)
            throw ConfigError("encoder: hidden_dim must divide evenly across num_heads");
        if (vocab_size < 5) throw ConfigError("encoder: vocab_size must cover reserved ids");
        if (max_seq_len < 3) throw ConfigError("encoder: max_seq_len must be >= 3");
        if (num_segments < 1) throw ConfigError("encoder: num_segments must be >= 1");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw ConfigError("encoder: dropout_rate must lie in [0, 1)");
        if (!(init_std >= 0.0)) throw ConfigError("encoder: init_std must be non-negative");
        if (!(ln_eps > 0.0)) throw ConfigError("encoder: ln_eps must be positive");
    }
};

struct EncoderParams {
    EncoderConfig cfg;
    Tensor tok, pos, seg;          // embedding tables
    Tensor emb_ln_g, emb_ln_b;
    struct Layer {
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln1_g, ln1_b;
        Tensor w1, b1, w2, b2;
        Tensor ln2_g, ln2_b;
    };
    std::vector<Layer> layers;

    // Weight tensors are filled by truncated-normal draws from a single
    // stream in named() order; biases start at zero, layer-norm gains at
    // one. Same seed, same config: bitwise identical parameters.
    static EncoderParams init(const EncoderConfig& config, uint64_t seed) {
        config.validate();
        EncoderParams p;
        p.cfg = config;
        const int h = config.hidden_dim;
        Rng rng(derive_seed(seed, {fnv1a64("encoder-init")}));
        auto weights = [&](std::vector<int> shape) {
            Tensor t = Tensor::zeros(std::move(shape));
            for (auto& v : *t.data) v = rng.truncated_normal(config.init_std);
            return t;
        };
        p.tok = weights({config.vocab_size, h});
        p.pos = weights({config.max_seq_len, h});
        p.seg = weights({config.num_segments, h});
        p.emb_ln_g = Tensor::full({h}, 1.0);
        p.emb_ln_b = Tensor::zeros({h});
        p.layers.resize(config.num_layers);
        for (auto& l : p.layers) {
            l.wq = weights({h, h});
            l.bq = Tensor::zeros({h});
            l.wk = weights({h, h});
            l.bk = Tensor::zeros({h});
            l.wv = weights({h, h});
            l.bv = Tensor::zeros({h});
            l.wo = weights({h, h});
            l.bo = Tensor::zeros({h});
            l.ln1_g = Tensor::full({h}, 1.0);
            l.ln1_b = Tensor::zeros({h});
            l.w1 = weights({h, config.ffn_dim});
            l.b1 = Tensor::zeros({config.ffn_dim});
            l.w2 = weights({config.ffn_dim, h});
            l.b2 = Tensor::zeros({h});
            l.ln2_g = Tensor::full({h}, 1.0);
            l.ln2_b = Tensor::zeros({h});
        }
        return p;
    }

    std::vector<std::pair<std::string, Tensor*>> named() {
        std::vector<std::pair<std::string, Tensor*>> out = {
            {"encoder.emb.tok", &tok},
            {"encoder.emb.pos", &pos},
            {"encoder.emb.seg", &seg},
            {"encoder.emb.ln.gamma", &emb_ln_g},
            {"encoder.emb.ln.beta", &emb_ln_b},
        };
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string pre = "encoder.layer" + std::to_string(i);
            Layer& l = layers[i];
            out.emplace_back(pre + ".attn.wq", &l.wq);
            out.emplace_back(pre + ".attn.bq", &l.bq);
            out.emplace_back(pre + ".attn.wk", &l.wk);
            out.emplace_back(pre + ".attn.bk", &l.bk);
            out.emplace_back(pre + ".attn.wv", &l.wv);
            out.emplace_back(pre + ".attn.bv", &l.bv);
            out.emplace_back(pre + ".attn.wo", &l.wo);
            out.emplace_back(pre + ".attn.bo", &l.bo);
            out.emplace_back(pre + ".attn.ln.gamma", &l.ln1_g);
            out.emplace_back(pre + ".attn.ln.beta", &l.ln1_b);
            out.emplace_back(pre + ".ffn.w1", &l.w1);
            out.emplace_back(pre + ".ffn.b1", &l.b1);
            out.emplace_back(pre + ".ffn.w2", &l.w2);
            out.emplace_back(pre + ".ffn.b2", &l.b2);
            out.emplace_back(pre + ".ffn.ln.gamma", &l.ln2_g);
            out.emplace_back(pre + ".ffn.ln.beta", &l.ln2_b);
        }
        return out;
    }

    std::vector<Tensor*> all() {
        std::vector<Tensor*> out;
        for (auto& [name, t] : named()) out.push_back(t);
        return out;
    }

    int64_t param_count() {
        int64_t n = 0;
        for (Tensor* t : all()) n += t->numel();
        return n;
    }

    EncoderParams clone() {
        EncoderParams c;
        c.cfg = cfg;
        c.tok = tok.clone();
        c.pos = pos.clone();
        c.seg = seg.clone();
        c.emb_ln_g = emb_ln_g.clone();
        c.emb_ln_b = emb_ln_b.clone();
        c.layers.resize(layers.size());
        for (size_t i = 0; i < layers.size(); ++i) {
            const Layer& l = layers[i];
            Layer& o = c.layers[i];
            o.wq = l.wq.clone();
            o.bq = l.bq.clone();
            o.wk = l.wk.clone();
            o.bk = l.bk.clone();
            o.wv = l.wv.clone();
            o.bv = l.bv.clone();
            o.wo = l.wo.clone();
            o.bo = l.bo.clone();
            o.ln1_g = l.ln1_g.clone();
            o.ln1_b = l.ln1_b.clone();
            o.w1 = l.w1.clone();
            o.b1 = l.b1.clone();
            o.w2 = l.w2.clone();
            o.b2 = l.b2.clone();
            o.ln2_g = l.ln2_g.clone();
            o.ln2_b = l.ln2_b.clone();
        }
        return c;
    }
};

// One packed batch, flattened row-major [B * T]. Real positions always form
// a prefix of each row; `pad_mask` is 1 on real positions, 0 on pads.
struct EncodedBatch {
    int batch = 0;
    int seq = 0;
    std::vector<int64_t> token_ids;
    std::vector<int64_t> segment_ids;
    std::vector<int64_t> positions;
    std::vector<double> pad_mask;
};

// Stacks encodings into one batch. With trim enabled the sequence axis is
// cut to the longest real length present, which changes nothing numerically
// (see the padding note at the top) but skips dead work.
inline EncodedBatch pack_batch(const std::vector<const Encoding*>& encs, bool trim = true) {
    if (encs.empty()) throw ShapeError("pack_batch: empty batch");
    const int full = encs[0]->length();
    int seq = trim ? 1 : full;
    for (const Encoding* e : encs) {
        if (e->length() != full) throw ShapeError("pack_batch: encodings of unequal length");
        if (trim) seq = std::max(seq, e->real_length());
    }
    EncodedBatch b;
    b.batch = static_cast<int>(encs.size());
    b.seq = seq;
    const size_t total = static_cast<size_t>(b.batch) * seq;
    b.token_ids.reserve(total);
    b.segment_ids.reserve(total);
    b.positions.reserve(total);
    b.pad_mask.reserve(total);
    for (const Encoding* e : encs) {
        for (int t = 0; t < seq; ++t) {
            b.token_ids.push_back(e->token_ids[t]);
            b.segment_ids.push_back(e->segment_ids[t]);
            b.positions.push_back(t);
            b.pad_mask.push_back(e->attention_mask[t] ? 1.0 : 0.0);
        }
    }
    return b;
}

struct ForwardCtx {
    bool train = false;
    uint64_t seed = 0;   // run seed; dropout streams derive from it
    uint64_t step = 0;   // global update count, part of the stream key
};

namespace detail {

// Inverted dropout as a constant mask: entries are 0 or 1/keep. The stream
// key is (seed, step, site) so replaying a step replays its masks exactly.
inline Tensor dropout(Tape& tape, const Tensor& x, double rate, const ForwardCtx& ctx,
                      uint64_t site) {
    if (!ctx.train || rate == 0.0) return x;
    const double keep = 1.0 - rate;
    Rng rng(derive_seed(ctx.seed, {fnv1a64("dropout"), ctx.step, site}));
    Tensor mask = Tensor::zeros(x.shape);
    for (auto& v : *mask.data) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return tape.mul(x, mask);
}

}  // namespace detail

// Full forward pass: [B, T, H] hidden states, one row per input position.
// All parameters are registered on the tape, so a following backward()
// fills every encoder gradient.
inline Tensor encoder_forward(Tape& tape, EncoderParams& p, const EncodedBatch& batch,
                              const ForwardCtx& ctx = {}) {
    const EncoderConfig& cfg = p.cfg;
    const int b = batch.batch, t = batch.seq, h = cfg.hidden_dim;
    const int heads = cfg.num_heads, dh = h / heads;
    if (b < 1 || t < 1) throw ShapeError("encoder_forward: empty batch");
    if (t > cfg.max_seq_len)
        throw ShapeError("encoder_forward: sequence length " + std::to_string(t) +
                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    if (batch.token_ids.size() != static_cast<size_t>(b) * t ||
        batch.segment_ids.size() != batch.token_ids.size() ||
        batch.positions.size() != batch.token_ids.size() ||
        batch.pad_mask.size() != batch.token_ids.size())
        throw ShapeError("encoder_forward: batch views disagree on size");

    for (auto& [name, param] : p.named()) tape.leaf(*param);

    // additive attention mask, shared by every layer: -1e9 on padded keys
    Tensor attn_bias = Tensor::zeros({b * heads, t, t});
    {
        double* m = attn_bias.ptr();
        for (int bi = 0; bi < b; ++bi)
            for (int hd = 0; hd < heads; ++hd)
                for (int q = 0; q < t; ++q)
                    for (int k = 0; k < t; ++k)
                        m[((static_cast<int64_t>(bi) * heads + hd) * t + q) * t + k] =
                            batch.pad_mask[static_cast<int64_t>(bi) * t + k] == 0.0 ? -1e9 : 0.0;
    }

    uint64_t site = 0;
    Tensor x = tape.add(tape.add(tape.embedding(p.tok, batch.token_ids),
                                 tape.embedding(p.pos, batch.positions)),
                        tape.embedding(p.seg, batch.segment_ids));
    x = tape.layer_norm(x, p.emb_ln_g, p.emb_ln_b, cfg.ln_eps);
    x = detail::dropout(tape, x, cfg.dropout_rate, ctx, site++);

    auto split_heads = [&](const Tensor& v) {
        Tensor r = tape.reshape(v, {b, t, heads, dh});
        r = tape.permute(r, {0, 2, 1, 3});
        return tape.reshape(r, {b * heads, t, dh});
    };

    for (auto& l : p.layers) {
        Tensor q = split_heads(tape.add_bias(tape.matmul(x, l.wq), l.bq));
        Tensor k = split_heads(tape.add_bias(tape.matmul(x, l.wk), l.bk));
        Tensor v = split_heads(tape.add_bias(tape.matmul(x, l.wv), l.bv));

        Tensor scores = tape.scale(tape.bmm(q, tape.permute(k, {0, 2, 1})), 1.0 / std::sqrt(dh));
        scores = tape.add(scores, attn_bias);
        Tensor attn = tape.softmax(scores, 2);

        Tensor mixed = tape.bmm(attn, v);  // [B*heads, T, dh]
        mixed = tape.reshape(mixed, {b, heads, t, dh});
        mixed = tape.permute(mixed, {0, 2, 1, 3});
        mixed = tape.reshape(mixed, {b * t, h});
        Tensor proj = tape.add_bias(tape.matmul(mixed, l.wo), l.bo);
        proj = detail::dropout(tape, proj, cfg.dropout_rate, ctx, site++);
        x = tape.layer_norm(tape.add(x, proj), l.ln1_g, l.ln1_b, cfg.ln_eps);

        Tensor f = tape.gelu(tape.add_bias(tape.matmul(x, l.w1), l.b1));
        f = tape.add_bias(tape.matmul(f, l.w2), l.b2);
        f = detail::dropout(tape, f, cfg.dropout_rate, ctx, site++);
        x = tape.layer_norm(tape.add(x, f), l.ln2_g, l.ln2_b, cfg.ln_eps);
    }
    return tape.reshape(x, {b, t, h});
}

}  // namespace mtenc
