#pragma once

// Bit-exact model persistence. The format is a flat little-endian stream:
//
//   magic "MTCB", version u32
//   encoder config   7 x i32, 3 x f64
//   trainer config   optimizer u8, alpha/beta1/beta2/adam_eps f64, schedule
//                    u8, outer_loops i32, seed u64, epochs i32, seed list
//   task manifest    count u32, then per task in registry order:
//                    task_id str, head_kind u8, labels, out_dim i32,
//                    batch_size i32, metric u8
//   tensor section   count u32, entries sorted by name: name str, dtype u8
//                    (0 = f64), rank u32, dims i32 each, payload f64 each
//   trainer state    global_step u64, outer i32, loop position i32, then
//                    per task epoch/cursor/wraps u32, sampler state 4 x u64
//   adam section     count u32, entries sorted by name: name str, t u64,
//                    length u64, first moments, second moments
//
// str = u32 byte length + bytes. Identical states serialize to identical
// bytes, so determinism claims extend to files on disk.

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/tensor.hpp"
#include "mtenc/trainer.hpp"

namespace mtenc {

constexpr uint32_t kCheckpointVersion = 1;
inline const char kCheckpointMagic[4] = {'M', 'T', 'C', 'B'};

struct IterState {
    uint32_t epoch = 0, cursor = 0, wraps = 0;
};

struct CheckpointState {
    EncoderConfig ecfg;
    TrainerConfig tcfg;
    std::vector<TaskSpec> tasks;            // registry order
    std::map<std::string, Tensor> tensors;  // canonical parameter names
    uint64_t global_step = 0;
    int outer = 0;
    int pos = 0;
    std::vector<IterState> iters;           // registry order
    std::array<uint64_t, 4> sampler_state = {0, 0, 0, 0};
    std::map<std::string, AdamSlot> adam;
};

namespace detail {

inline void put_u32(std::string& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_i32(std::string& b, int32_t v) { put_u32(b, static_cast<uint32_t>(v)); }

inline void put_f64(std::string& b, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(b, bits);
}

inline void put_str(std::string& b, const std::string& s) {
    put_u32(b, static_cast<uint32_t>(s.size()));
    b += s;
}

// Bounds-checked little-endian reader. `ctx` names what was being read so
// truncation errors point at the offending field.
struct ByteReader {
    const std::string& buf;
    size_t off = 0;

    void need(size_t n, const std::string& ctx) {
        if (off + n > buf.size())
            throw CorruptError("checkpoint truncated while reading " + ctx);
    }
    uint32_t get_u32(const std::string& ctx) {
        need(4, ctx);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
        off += 4;
        return v;
    }
    uint64_t get_u64(const std::string& ctx) {
        need(8, ctx);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
        off += 8;
        return v;
    }
    int32_t get_i32(const std::string& ctx) { return static_cast<int32_t>(get_u32(ctx)); }
    double get_f64(const std::string& ctx) {
        const uint64_t bits = get_u64(ctx);
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string get_str(const std::string& ctx) {
        const uint32_t n = get_u32(ctx + " length");
        need(n, ctx);
        std::string s = buf.substr(off, n);
        off += n;
        return s;
    }
    // element count whose entries occupy at least `entry_bytes` each; keeps a
    // corrupt count from driving a huge allocation before bounds checks fire
    uint64_t get_count(const std::string& ctx, uint64_t entry_bytes) {
        const uint32_t n = get_u32(ctx);
        if (n > (buf.size() - off) / entry_bytes)
            throw CorruptError("checkpoint: " + ctx + " " + std::to_string(n) +
                               " exceeds the remaining file");
        return n;
    }
};

}  // namespace detail

// ------------------------------------------------------------- serializing

inline std::string checkpoint_bytes(const CheckpointState& st) {
    using namespace detail;
    std::string b;
    b.append(kCheckpointMagic, 4);
    put_u32(b, kCheckpointVersion);

    put_i32(b, st.ecfg.num_layers);
    put_i32(b, st.ecfg.hidden_dim);
    put_i32(b, st.ecfg.num_heads);
    put_i32(b, st.ecfg.ffn_dim);
    put_i32(b, st.ecfg.vocab_size);
    put_i32(b, st.ecfg.max_seq_len);
    put_i32(b, st.ecfg.num_segments);
    put_f64(b, st.ecfg.dropout_rate);
    put_f64(b, st.ecfg.init_std);
    put_f64(b, st.ecfg.ln_eps);

    b.push_back(static_cast<char>(st.tcfg.optimizer == Optimizer::adam ? 1 : 0));
    put_f64(b, st.tcfg.alpha);
    put_f64(b, st.tcfg.beta1);
    put_f64(b, st.tcfg.beta2);
    put_f64(b, st.tcfg.adam_eps);
    b.push_back(static_cast<char>(static_cast<int>(st.tcfg.schedule)));
    put_i32(b, st.tcfg.outer_loops);
    put_u64(b, st.tcfg.seed);
    put_i32(b, st.tcfg.epochs);
    put_u32(b, static_cast<uint32_t>(st.tcfg.seeds.size()));
    for (uint64_t s : st.tcfg.seeds) put_u64(b, s);

    put_u32(b, static_cast<uint32_t>(st.tasks.size()));
    for (const auto& t : st.tasks) {
        put_str(b, t.task_id);
        b.push_back(static_cast<char>(static_cast<int>(t.kind)));
        put_u32(b, static_cast<uint32_t>(t.labels.size()));
        for (const auto& l : t.labels) put_str(b, l);
        put_i32(b, t.out_dim());
        put_i32(b, t.batch_size);
        b.push_back(static_cast<char>(static_cast<int>(t.metric())));
    }

    put_u32(b, static_cast<uint32_t>(st.tensors.size()));
    for (const auto& [name, t] : st.tensors) {  // std::map iterates sorted
        put_str(b, name);
        b.push_back(0);  // dtype f64
        put_u32(b, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) put_i32(b, d);
        for (double v : *t.data) put_f64(b, v);
    }

    put_u64(b, st.global_step);
    put_i32(b, st.outer);
    put_i32(b, st.pos);
    for (const auto& it : st.iters) {
        put_u32(b, it.epoch);
        put_u32(b, it.cursor);
        put_u32(b, it.wraps);
    }
    for (uint64_t w : st.sampler_state) put_u64(b, w);

    put_u32(b, static_cast<uint32_t>(st.adam.size()));
    for (const auto& [name, slot] : st.adam) {
        put_str(b, name);
        put_u64(b, slot.t);
        put_u64(b, slot.m.size());
        for (double v : slot.m) put_f64(b, v);
        for (double v : slot.v) put_f64(b, v);
    }
    return b;
}

// expected on-disk size for a given state, per the layout above
inline size_t checkpoint_size(const CheckpointState& st) {
    size_t n = 4 + 4;                         // magic, version
    n += 7 * 4 + 3 * 8;                       // encoder config
    n += 1 + 4 * 8 + 1 + 4 + 8 + 4;           // trainer scalars
    n += 4 + 8 * st.tcfg.seeds.size();        // seed list
    n += 4;                                   // task count
    for (const auto& t : st.tasks) {
        n += 4 + t.task_id.size() + 1 + 4;
        for (const auto& l : t.labels) n += 4 + l.size();
        n += 4 + 4 + 1;
    }
    n += 4;  // tensor count
    for (const auto& [name, t] : st.tensors)
        n += 4 + name.size() + 1 + 4 + 4 * t.shape.size() + 8 * t.numel();
    n += 8 + 4 + 4 + 12 * st.iters.size() + 32;
    n += 4;  // adam count
    for (const auto& [name, slot] : st.adam)
        n += 4 + name.size() + 8 + 8 + 16 * slot.m.size();
    return n;
}

inline CheckpointState parse_checkpoint(const std::string& bytes) {
    using namespace detail;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic, not a checkpoint file");
    ByteReader r{bytes, 4};
    const uint32_t version = r.get_u32("version");
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint: format version " + std::to_string(version) +
                           ", expected " + std::to_string(kCheckpointVersion));

    CheckpointState st;
    st.ecfg.num_layers = r.get_i32("encoder num_layers");
    st.ecfg.hidden_dim = r.get_i32("encoder hidden_dim");
    st.ecfg.num_heads = r.get_i32("encoder num_heads");
    st.ecfg.ffn_dim = r.get_i32("encoder ffn_dim");
    st.ecfg.vocab_size = r.get_i32("encoder vocab_size");
    st.ecfg.max_seq_len = r.get_i32("encoder max_seq_len");
    st.ecfg.num_segments = r.get_i32("encoder num_segments");
    st.ecfg.dropout_rate = r.get_f64("encoder dropout_rate");
    st.ecfg.init_std = r.get_f64("encoder init_std");
    st.ecfg.ln_eps = r.get_f64("encoder ln_eps");

    r.need(1, "optimizer");
    st.tcfg.optimizer = bytes[r.off++] ? Optimizer::adam : Optimizer::sgd;
    st.tcfg.alpha = r.get_f64("alpha");
    st.tcfg.beta1 = r.get_f64("beta1");
    st.tcfg.beta2 = r.get_f64("beta2");
    st.tcfg.adam_eps = r.get_f64("adam_eps");
    r.need(1, "schedule");
    {
        const int s = static_cast<unsigned char>(bytes[r.off++]);
        if (s > 2) throw CorruptError("checkpoint: schedule code " + std::to_string(s));
        st.tcfg.schedule = static_cast<Schedule>(s);
    }
    st.tcfg.outer_loops = r.get_i32("outer_loops");
    st.tcfg.seed = r.get_u64("seed");
    st.tcfg.epochs = r.get_i32("epochs");
    st.tcfg.seeds.resize(r.get_count("seed list count", 8));
    for (auto& s : st.tcfg.seeds) s = r.get_u64("seed list entry");

    const uint64_t ntasks = r.get_count("task count", 10);
    for (uint64_t i = 0; i < ntasks; ++i) {
        TaskSpec t;
        t.task_id = r.get_str("task_id");
        r.need(1, "head kind of " + t.task_id);
        {
            const int k = static_cast<unsigned char>(bytes[r.off++]);
            if (k > 2)
                throw CorruptError("checkpoint: head kind code " + std::to_string(k) +
                                   " for task " + t.task_id);
            t.kind = static_cast<HeadKind>(k);
        }
        t.labels.resize(r.get_count("label count of " + t.task_id, 4));
        for (auto& l : t.labels) l = r.get_str("label of " + t.task_id);
        const int32_t out_dim = r.get_i32("out_dim of " + t.task_id);
        t.batch_size = r.get_i32("batch_size of " + t.task_id);
        r.need(1, "metric of " + t.task_id);
        ++r.off;  // metric byte is derived from the head kind on load
        if (out_dim != t.out_dim())
            throw CorruptError("checkpoint: task " + t.task_id + " out_dim " +
                               std::to_string(out_dim) + " does not match its labels");
        st.tasks.push_back(std::move(t));
    }

    const uint64_t ntensors = r.get_count("tensor count", 9);
    for (uint64_t i = 0; i < ntensors; ++i) {
        const std::string name = r.get_str("tensor name");
        r.need(1, "dtype of " + name);
        if (bytes[r.off++] != 0)
            throw CorruptError("checkpoint: tensor " + name + " has an unknown dtype");
        std::vector<int> shape(r.get_count("rank of " + name, 4));
        for (auto& d : shape) d = r.get_i32("dims of " + name);
        int64_t numel = 1;
        for (int d : shape) {
            if (d <= 0 || numel > (1 << 28))
                throw CorruptError("checkpoint: tensor " + name + " has an invalid shape");
            numel *= d;
        }
        r.need(static_cast<size_t>(numel) * 8, "payload of " + name);
        Tensor t = Tensor::zeros(shape);
        for (auto& v : *t.data) v = r.get_f64("payload of " + name);
        if (!st.tensors.emplace(name, std::move(t)).second)
            throw CorruptError("checkpoint: duplicate tensor " + name);
    }

    st.global_step = r.get_u64("global step");
    st.outer = r.get_i32("outer index");
    st.pos = r.get_i32("loop position");
    st.iters.resize(ntasks);
    for (auto& it : st.iters) {
        it.epoch = r.get_u32("iterator epoch");
        it.cursor = r.get_u32("iterator cursor");
        it.wraps = r.get_u32("iterator wraps");
    }
    for (auto& w : st.sampler_state) w = r.get_u64("sampler state");

    const uint64_t nslots = r.get_count("adam slot count", 20);
    for (uint64_t i = 0; i < nslots; ++i) {
        const std::string name = r.get_str("adam slot name");
        AdamSlot slot;
        slot.t = r.get_u64("adam t of " + name);
        const uint64_t len = r.get_u64("adam length of " + name);
        if (len > (bytes.size() - r.off) / 16)
            throw CorruptError("checkpoint: adam length of " + name +
                               " exceeds the remaining file");
        slot.m.resize(len);
        slot.v.resize(len);
        for (auto& v : slot.m) v = r.get_f64("adam m of " + name);
        for (auto& v : slot.v) v = r.get_f64("adam v of " + name);
        st.adam.emplace(name, std::move(slot));
    }

    if (r.off != bytes.size()) throw CorruptError("checkpoint: trailing bytes after state");
    return st;
}

// ------------------------------------------------------------------- file io

inline void save_checkpoint(const CheckpointState& st, const std::string& path) {
    const std::string bytes = checkpoint_bytes(st);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("checkpoint: cannot open " + tmp + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("checkpoint: short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw IoError("checkpoint: cannot move " + tmp + " into place");
    }
}

inline CheckpointState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

// --------------------------------------------------------- trainer bridge

inline CheckpointState capture(Trainer& tr) {
    CheckpointState st;
    st.ecfg = tr.encoder_config();
    st.tcfg = tr.config();
    for (int i = 0; i < tr.task_count(); ++i) {
        st.tasks.push_back(tr.task(i).spec);
        const BatchIter& it = tr.task(i).iter;
        st.iters.push_back({it.epoch(), it.cursor(), it.wraps()});
    }
    for (auto& [name, t] : tr.named_params()) st.tensors.emplace(name, t->clone());
    st.global_step = tr.global_step();
    st.outer = tr.outer_index();
    st.pos = tr.loop_position();
    st.sampler_state = tr.sampler().state();
    st.adam = tr.adam_state();
    return st;
}

// Writes a captured state back into a trainer that was built from the same
// configuration and datasets. Parameter payloads are copied bitwise.
inline void restore(Trainer& tr, const CheckpointState& st) {
    if (static_cast<size_t>(tr.task_count()) != st.tasks.size())
        throw CorruptError("restore: task count differs from the checkpoint");
    for (int i = 0; i < tr.task_count(); ++i) {
        if (tr.task(i).spec.task_id != st.tasks[i].task_id)
            throw CorruptError("restore: task order differs at " + st.tasks[i].task_id);
        if (tr.task(i).spec.kind != st.tasks[i].kind ||
            tr.task(i).spec.labels != st.tasks[i].labels)
            throw CorruptError("restore: task " + st.tasks[i].task_id +
                               " differs from the checkpoint");
    }
    auto params = tr.named_params();
    if (params.size() != st.tensors.size())
        throw CorruptError("restore: parameter count differs from the checkpoint");
    for (auto& [name, t] : params) {
        auto it = st.tensors.find(name);
        if (it == st.tensors.end()) throw CorruptError("restore: missing tensor " + name);
        if (it->second.shape != t->shape)
            throw CorruptError("restore: tensor " + name + " has mismatched shape");
        *t->data = *it->second.data;
    }
    for (int i = 0; i < tr.task_count(); ++i) {
        const IterState& is = st.iters[i];
        tr.task(i).iter.restore(is.epoch, is.cursor, is.wraps);
    }
    tr.sampler().set_state(st.sampler_state);
    tr.adam_state() = st.adam;
    tr.restore_position(st.global_step, st.outer, st.pos);
}

// Bare inference parameters rebuilt from a checkpoint alone: no datasets,
// no vocabulary, no trainer. Enough for the benchmark or raw forwards.
struct MaterializedParams {
    EncoderParams enc;
    std::vector<TaskSpec> specs;
    std::vector<HeadParams> heads;  // parallel to specs
};

inline MaterializedParams materialize_params(const CheckpointState& st) {
    MaterializedParams mp;
    mp.enc = EncoderParams::init(st.ecfg, 0);
    auto copy_into = [&](const std::string& name, Tensor* dst) {
        auto it = st.tensors.find(name);
        if (it == st.tensors.end())
            throw CorruptError("checkpoint: missing tensor " + name);
        if (it->second.shape != dst->shape)
            throw CorruptError("checkpoint: tensor " + name + " has mismatched shape");
        *dst->data = *it->second.data;
    };
    for (auto& [name, t] : mp.enc.named()) copy_into(name, t);
    for (const TaskSpec& spec : st.tasks) {
        HeadParams head =
            HeadParams::init(st.ecfg.hidden_dim, spec.out_dim(), st.ecfg.init_std, 0);
        for (auto& [name, t] : head.named(spec.task_id)) copy_into(name, t);
        mp.specs.push_back(spec);
        mp.heads.push_back(std::move(head));
    }
    return mp;
}

}  // namespace mtenc
