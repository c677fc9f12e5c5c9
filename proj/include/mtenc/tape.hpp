#pragma once

// Reverse-mode autodiff over an append-only tape.
//
// Ops are recorded as nodes holding shared value/grad buffers. backward()
// walks the node list once in reverse id order and accumulates gradients
// additively, so parameter gradients survive across multiple backward
// passes until an optimizer step clears them. Inputs that were never
// registered with leaf() participate as constants and receive no gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/tensor.hpp"

namespace mtenc {

// target value marking positions excluded from cross_entropy
constexpr int64_t kIgnoreIndex = -1;

namespace detail {

// C[m,n] = A[m,k] * B[k,n]
inline void mm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    if (!acc) std::fill(c, c + static_cast<int64_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] = A[m,k] * B[n,k]^T
inline void mm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<int64_t>(j) * k;
            double dot = 0.0;
            for (int l = 0; l < k; ++l) dot += arow[l] * brow[l];
            crow[j] = acc ? crow[j] + dot : dot;
        }
    }
}

// C[m,n] = A[k,m]^T * B[k,n]
inline void mm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
    if (!acc) std::fill(c, c + static_cast<int64_t>(m) * n, 0.0);
    for (int l = 0; l < k; ++l) {
        const double* arow = a + static_cast<int64_t>(l) * m;
        const double* brow = b + static_cast<int64_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu_fwd(double x) {
    double u = kGeluC * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_bwd(double x) {
    double u = kGeluC * (x + 0.044715 * x * x * x);
    double t = std::tanh(u);
    double du = kGeluC * (1.0 + 0.134145 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace detail

enum class Op : uint8_t {
    kLeaf,
    kMatmul,
    kBmm,
    kAdd,
    kAddBias,
    kMul,
    kScale,
    kGelu,
    kSoftmax,
    kLayerNorm,
    kCrossEntropy,
    kMse,
    kEmbedding,
    kReshape,
    kPermute,
    kMaskedFill,
    kReduceSum,
    kSelectPosition,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kMatmul: return "matmul";
        case Op::kBmm: return "bmm";
        case Op::kAdd: return "add";
        case Op::kAddBias: return "add_bias";
        case Op::kMul: return "mul";
        case Op::kScale: return "scale";
        case Op::kGelu: return "gelu";
        case Op::kSoftmax: return "softmax";
        case Op::kLayerNorm: return "layer_norm";
        case Op::kCrossEntropy: return "cross_entropy";
        case Op::kMse: return "mse";
        case Op::kEmbedding: return "embedding";
        case Op::kReshape: return "reshape";
        case Op::kPermute: return "permute";
        case Op::kMaskedFill: return "masked_fill";
        case Op::kReduceSum: return "reduce_sum";
        case Op::kSelectPosition: return "select_position";
    }
    return "?";
}

class Tape {
  public:
    struct InRef {
        int node = -1;  // -1 marks a constant input
        std::shared_ptr<const std::vector<double>> data;
        std::vector<int> shape;
    };

    struct Node {
        Op op;
        std::vector<InRef> in;
        std::shared_ptr<std::vector<double>> value;
        std::shared_ptr<std::vector<double>> grad;
        std::vector<int> shape;
        std::vector<int64_t> imeta;  // targets, ids, axis, permutation
        std::vector<double> dmeta;   // scale factor, eps, saved row stats
    };

    // Fault-injection hook for derivative self-tests: the backward pass of
    // the named op gets scaled by 1.01 so gradient checks must flag it.
    static std::string& corrupt_op() {
        static std::string name;
        return name;
    }

    size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        leaf_ids_.clear();
        backward_done_ = false;
    }

    // Registers t as a differentiable input. Its grad buffer is shared with
    // the tape, so backward() writes straight into the parameter. Repeated
    // registration of the same buffer returns the existing node.
    int leaf(Tensor& t) {
        if (!t.data) throw StateError("leaf: tensor has no storage");
        auto it = leaf_ids_.find(t.data.get());
        if (it != leaf_ids_.end()) {
            t.node = it->second;
            return t.node;
        }
        t.ensure_grad();
        Node n;
        n.op = Op::kLeaf;
        n.value = t.data;
        n.grad = t.grad;
        n.shape = t.shape;
        nodes_.push_back(std::move(n));
        t.node = static_cast<int>(nodes_.size()) - 1;
        leaf_ids_[t.data.get()] = t.node;
        return t.node;
    }

    // ----------------------------------------------------------- ops

    Tensor matmul(const Tensor& a, const Tensor& b) {
        if (a.rank() != 2 || b.rank() != 2)
            throw ShapeError("matmul: expects rank-2 operands");
        if (a.shape[1] != b.shape[0])
            throw ShapeError("matmul: inner dims disagree: " + std::to_string(a.shape[1]) +
                             " vs " + std::to_string(b.shape[0]));
        const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
        auto out = alloc({m, n});
        detail::mm_nn(a.ptr(), b.ptr(), out->data(), m, k, n, false);
        return emit(Op::kMatmul, {ref(a), ref(b)}, out, {m, n});
    }

    Tensor bmm(const Tensor& a, const Tensor& b) {
        if (a.rank() != 3 || b.rank() != 3)
            throw ShapeError("bmm: expects rank-3 operands");
        if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[1])
            throw ShapeError("bmm: incompatible shapes");
        const int nb = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2];
        auto out = alloc({nb, m, n});
        for (int i = 0; i < nb; ++i)
            detail::mm_nn(a.ptr() + static_cast<int64_t>(i) * m * k,
                          b.ptr() + static_cast<int64_t>(i) * k * n,
                          out->data() + static_cast<int64_t>(i) * m * n, m, k, n, false);
        return emit(Op::kBmm, {ref(a), ref(b)}, out, {nb, m, n});
    }

    Tensor add(const Tensor& a, const Tensor& b) {
        if (a.shape != b.shape) throw ShapeError("add: shapes must match");
        auto out = alloc(a.shape);
        const double* pa = a.ptr();
        const double* pb = b.ptr();
        for (int64_t i = 0; i < a.numel(); ++i) (*out)[i] = pa[i] + pb[i];
        return emit(Op::kAdd, {ref(a), ref(b)}, out, a.shape);
    }

    Tensor add_bias(const Tensor& x, const Tensor& b) {
        if (b.rank() != 1 || x.rank() < 1 || x.shape.back() != b.shape[0])
            throw ShapeError("add_bias: bias must match the last dim");
        const int h = b.shape[0];
        const int64_t rows = x.numel() / h;
        auto out = alloc(x.shape);
        const double* px = x.ptr();
        const double* pb = b.ptr();
        for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < h; ++j) (*out)[r * h + j] = px[r * h + j] + pb[j];
        return emit(Op::kAddBias, {ref(x), ref(b)}, out, x.shape);
    }

    Tensor mul(const Tensor& a, const Tensor& b) {
        if (a.shape != b.shape) throw ShapeError("mul: shapes must match");
        auto out = alloc(a.shape);
        const double* pa = a.ptr();
        const double* pb = b.ptr();
        for (int64_t i = 0; i < a.numel(); ++i) (*out)[i] = pa[i] * pb[i];
        return emit(Op::kMul, {ref(a), ref(b)}, out, a.shape);
    }

    Tensor scale(const Tensor& x, double c) {
        auto out = alloc(x.shape);
        const double* px = x.ptr();
        for (int64_t i = 0; i < x.numel(); ++i) (*out)[i] = px[i] * c;
        return emit(Op::kScale, {ref(x)}, out, x.shape, {}, {c});
    }

    Tensor gelu(const Tensor& x) {
        auto out = alloc(x.shape);
        const double* px = x.ptr();
        for (int64_t i = 0; i < x.numel(); ++i) (*out)[i] = detail::gelu_fwd(px[i]);
        return emit(Op::kGelu, {ref(x)}, out, x.shape);
    }

    Tensor softmax(const Tensor& x, int axis) {
        if (axis < 0 || axis >= x.rank()) throw ShapeError("softmax: axis out of range");
        const double* px = x.ptr();
        for (int64_t i = 0; i < x.numel(); ++i)
            if (!std::isfinite(px[i])) throw NumericError("softmax: non-finite input");
        int64_t outer = 1, inner = 1;
        const int d = x.shape[axis];
        for (int i = 0; i < axis; ++i) outer *= x.shape[i];
        for (int i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
        auto out = alloc(x.shape);
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * d * inner + in;
                double mx = px[base];
                for (int j = 1; j < d; ++j) mx = std::max(mx, px[base + j * inner]);
                double sum = 0.0;
                for (int j = 0; j < d; ++j) {
                    double e = std::exp(px[base + j * inner] - mx);
                    (*out)[base + j * inner] = e;
                    sum += e;
                }
                for (int j = 0; j < d; ++j) (*out)[base + j * inner] /= sum;
            }
        }
        return emit(Op::kSoftmax, {ref(x)}, out, x.shape, {axis});
    }

    // Normalizes the last axis with population variance, then applies the
    // per-feature affine. Row stats are stashed for the backward pass.
    Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
        if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
        const int h = x.shape.back();
        if (gamma.rank() != 1 || beta.rank() != 1 || gamma.shape[0] != h || beta.shape[0] != h)
            throw ShapeError("layer_norm: affine params must match the last dim");
        if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
        const int64_t rows = x.numel() / h;
        auto out = alloc(x.shape);
        std::vector<double> stats(2 * rows);
        const double* px = x.ptr();
        const double* pg = gamma.ptr();
        const double* pb = beta.ptr();
        for (int64_t r = 0; r < rows; ++r) {
            const double* row = px + r * h;
            double mean = 0.0;
            for (int j = 0; j < h; ++j) mean += row[j];
            mean /= h;
            double var = 0.0;
            for (int j = 0; j < h; ++j) {
                double dlt = row[j] - mean;
                var += dlt * dlt;
            }
            var /= h;
            double inv = 1.0 / std::sqrt(var + eps);
            for (int j = 0; j < h; ++j)
                (*out)[r * h + j] = pg[j] * ((row[j] - mean) * inv) + pb[j];
            stats[2 * r] = mean;
            stats[2 * r + 1] = inv;
        }
        return emit(Op::kLayerNorm, {ref(x), ref(gamma), ref(beta)}, out, x.shape, {},
                    std::move(stats));
    }

    // Mean negative log-likelihood over rows whose target is not
    // kIgnoreIndex. logits: [N, C], targets: length N.
    Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets) {
        if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [N, C]");
        const int n = logits.shape[0], c = logits.shape[1];
        if (static_cast<int>(targets.size()) != n)
            throw ShapeError("cross_entropy: one target per row required");
        int64_t m = 0;
        for (int64_t t : targets) {
            if (t == kIgnoreIndex) continue;
            if (t < 0 || t >= c)
                throw LabelError("cross_entropy: target " + std::to_string(t) +
                                 " outside [0, " + std::to_string(c) + ")");
            ++m;
        }
        if (m == 0) throw EmptyLossError("cross_entropy: every position is ignored");
        const double* px = logits.ptr();
        double loss = 0.0;
        for (int r = 0; r < n; ++r) {
            if (targets[r] == kIgnoreIndex) continue;
            const double* row = px + static_cast<int64_t>(r) * c;
            double mx = row[0];
            for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (int j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
            loss += mx + std::log(sum) - row[targets[r]];
        }
        auto out = alloc({1});
        (*out)[0] = loss / static_cast<double>(m);
        std::vector<int64_t> meta(targets.begin(), targets.end());
        return emit(Op::kCrossEntropy, {ref(logits)}, out, {1}, std::move(meta));
    }

    Tensor mse(const Tensor& pred, const Tensor& target) {
        if (pred.shape != target.shape) throw ShapeError("mse: shapes must match");
        const int64_t n = pred.numel();
        const double* pp = pred.ptr();
        const double* pt = target.ptr();
        double loss = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double dlt = pp[i] - pt[i];
            loss += dlt * dlt;
        }
        auto out = alloc({1});
        (*out)[0] = loss / static_cast<double>(n);
        return emit(Op::kMse, {ref(pred), ref(target)}, out, {1});
    }

    // Gathers rows of table: out[i, :] = table[ids[i], :]
    Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids) {
        if (table.rank() != 2) throw ShapeError("embedding: table must be [V, H]");
        const int v = table.shape[0], h = table.shape[1];
        for (int64_t id : ids)
            if (id < 0 || id >= v)
                throw LabelError("embedding: id " + std::to_string(id) + " outside [0, " +
                                 std::to_string(v) + ")");
        if (ids.empty()) throw ShapeError("embedding: empty id list");
        const int n = static_cast<int>(ids.size());
        auto out = alloc({n, h});
        const double* pt = table.ptr();
        for (int i = 0; i < n; ++i)
            std::copy(pt + ids[i] * h, pt + (ids[i] + 1) * h, out->data() + static_cast<int64_t>(i) * h);
        std::vector<int64_t> meta(ids.begin(), ids.end());
        return emit(Op::kEmbedding, {ref(table)}, out, {n, h}, std::move(meta));
    }

    // Pure view: the output shares the input buffer, only metadata changes.
    Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
        if (shape_numel(new_shape) != x.numel())
            throw ShapeError("reshape: element count must be preserved");
        Node nn;
        nn.op = Op::kReshape;
        nn.in = {ref(x)};
        nn.value = x.data;
        nn.grad = std::make_shared<std::vector<double>>(x.numel(), 0.0);
        nn.shape = new_shape;
        return push(std::move(nn));
    }

    Tensor permute(const Tensor& x, const std::vector<int>& perm) {
        const int r = x.rank();
        if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
        std::vector<bool> seen(r, false);
        for (int p : perm) {
            if (p < 0 || p >= r || seen[p]) throw ShapeError("permute: not a permutation");
            seen[p] = true;
        }
        std::vector<int> out_shape(r);
        for (int j = 0; j < r; ++j) out_shape[j] = x.shape[perm[j]];
        auto out = alloc(out_shape);
        permute_copy(x.ptr(), out->data(), x.shape, perm, false);
        std::vector<int64_t> meta(perm.begin(), perm.end());
        return emit(Op::kPermute, {ref(x)}, out, out_shape, std::move(meta));
    }

    // out = fill where mask == 1, x where mask == 0. The mask is always a
    // constant: no gradient is defined or propagated for it.
    Tensor masked_fill(const Tensor& x, const Tensor& mask, double fill) {
        if (x.shape != mask.shape) throw ShapeError("masked_fill: shapes must match");
        const double* pm = mask.ptr();
        for (int64_t i = 0; i < mask.numel(); ++i)
            if (pm[i] != 0.0 && pm[i] != 1.0)
                throw DataError("masked_fill: mask entries must be 0 or 1");
        auto out = alloc(x.shape);
        const double* px = x.ptr();
        for (int64_t i = 0; i < x.numel(); ++i) (*out)[i] = pm[i] == 1.0 ? fill : px[i];
        InRef mref;
        mref.node = -1;  // constant regardless of tape registration
        mref.data = mask.data;
        mref.shape = mask.shape;
        return emit(Op::kMaskedFill, {ref(x), mref}, out, x.shape, {}, {fill});
    }

    Tensor reduce_sum(const Tensor& x) {
        auto out = alloc({1});
        const double* px = x.ptr();
        double s = 0.0;
        for (int64_t i = 0; i < x.numel(); ++i) s += px[i];
        (*out)[0] = s;
        return emit(Op::kReduceSum, {ref(x)}, out, {1});
    }

    // out[b, :] = x[b, pos, :] for x of shape [B, T, H]
    Tensor select_position(const Tensor& x, int pos) {
        if (x.rank() != 3) throw ShapeError("select_position: expects [B, T, H]");
        const int b = x.shape[0], t = x.shape[1], h = x.shape[2];
        if (pos < 0 || pos >= t) throw ShapeError("select_position: position out of range");
        auto out = alloc({b, h});
        const double* px = x.ptr();
        for (int i = 0; i < b; ++i)
            std::copy(px + (static_cast<int64_t>(i) * t + pos) * h,
                      px + (static_cast<int64_t>(i) * t + pos + 1) * h,
                      out->data() + static_cast<int64_t>(i) * h);
        return emit(Op::kSelectPosition, {ref(x)}, out, {b, h}, {pos});
    }

    // ------------------------------------------------------ backward

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse id
    // order. A second call without reset() is a lifecycle violation.
    void backward(const Tensor& loss) {
        if (backward_done_) throw StateError("backward: tape already swept; reset() first");
        if (loss.node < 0 || loss.node >= static_cast<int>(nodes_.size()))
            throw StateError("backward: loss is not on this tape");
        if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar");
        backward_done_ = true;
        (*nodes_[loss.node].grad)[0] += 1.0;
        for (int i = loss.node; i >= 0; --i) backward_node(nodes_[i]);
    }

  private:
    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> leaf_ids_;
    bool backward_done_ = false;

    static std::shared_ptr<std::vector<double>> alloc(const std::vector<int>& shape) {
        return std::make_shared<std::vector<double>>(shape_numel(shape), 0.0);
    }

    InRef ref(const Tensor& t) const {
        if (!t.data) throw StateError("op input has no storage");
        InRef r;
        r.data = t.data;
        r.shape = t.shape;
        r.node = -1;
        if (t.node >= 0) {
            if (t.node >= static_cast<int>(nodes_.size()) ||
                nodes_[t.node].value.get() != t.data.get())
                throw StateError("op input is attached to a different tape generation");
            r.node = t.node;
        }
        return r;
    }

    Tensor push(Node&& n) {
        if (backward_done_)
            throw StateError("tape already swept; reset() before recording new ops");
        nodes_.push_back(std::move(n));
        Node& nd = nodes_.back();
        Tensor out;
        out.shape = nd.shape;
        out.data = nd.value;
        out.grad = nd.grad;
        out.node = static_cast<int>(nodes_.size()) - 1;
        return out;
    }

    Tensor emit(Op op, std::vector<InRef> in, std::shared_ptr<std::vector<double>> value,
                std::vector<int> shape, std::vector<int64_t> imeta = {},
                std::vector<double> dmeta = {}) {
        Node n;
        n.op = op;
        n.in = std::move(in);
        n.value = std::move(value);
        n.grad = std::make_shared<std::vector<double>>(n.value->size(), 0.0);
        n.shape = std::move(shape);
        n.imeta = std::move(imeta);
        n.dmeta = std::move(dmeta);
        return push(std::move(n));
    }

    double* grad_of(const InRef& r) {
        return r.node >= 0 ? nodes_[r.node].grad->data() : nullptr;
    }

    static void permute_copy(const double* src, double* dst, const std::vector<int>& in_shape,
                             const std::vector<int>& perm, bool accumulate_back,
                             const double* back_src = nullptr, double* back_dst = nullptr) {
        const int r = static_cast<int>(in_shape.size());
        std::vector<int64_t> out_strides(r);  // stride of output axis j
        int64_t s = 1;
        for (int j = r - 1; j >= 0; --j) {
            out_strides[j] = s;
            s *= in_shape[perm[j]];
        }
        std::vector<int64_t> contrib(r);  // input axis a -> its output stride
        for (int j = 0; j < r; ++j) contrib[perm[j]] = out_strides[j];
        std::vector<int64_t> idx(r, 0);
        const int64_t total = shape_numel(in_shape);
        int64_t out_off = 0;
        for (int64_t flat = 0; flat < total; ++flat) {
            if (accumulate_back)
                back_dst[flat] += back_src[out_off];
            else
                dst[out_off] = src[flat];
            for (int a = r - 1; a >= 0; --a) {
                ++idx[a];
                out_off += contrib[a];
                if (idx[a] < in_shape[a]) break;
                out_off -= contrib[a] * in_shape[a];
                idx[a] = 0;
            }
        }
    }

    void backward_node(Node& n) {
        if (!corrupt_op().empty() && corrupt_op() == op_name(n.op))
            for (auto& g : *n.grad) g *= 1.01;
        const double* g = n.grad->data();
        switch (n.op) {
            case Op::kLeaf:
                break;
            case Op::kMatmul: {
                const int m = n.in[0].shape[0], k = n.in[0].shape[1], nn = n.in[1].shape[1];
                if (double* da = grad_of(n.in[0]))
                    detail::mm_nt(g, n.in[1].data->data(), da, m, nn, k, true);
                if (double* db = grad_of(n.in[1]))
                    detail::mm_tn(n.in[0].data->data(), g, db, k, m, nn, true);
                break;
            }
            case Op::kBmm: {
                const int nb = n.in[0].shape[0], m = n.in[0].shape[1];
                const int k = n.in[0].shape[2], nn = n.in[1].shape[2];
                double* da = grad_of(n.in[0]);
                double* db = grad_of(n.in[1]);
                for (int i = 0; i < nb; ++i) {
                    const double* gi = g + static_cast<int64_t>(i) * m * nn;
                    if (da)
                        detail::mm_nt(gi, n.in[1].data->data() + static_cast<int64_t>(i) * k * nn,
                                      da + static_cast<int64_t>(i) * m * k, m, nn, k, true);
                    if (db)
                        detail::mm_tn(n.in[0].data->data() + static_cast<int64_t>(i) * m * k, gi,
                                      db + static_cast<int64_t>(i) * k * nn, k, m, nn, true);
                }
                break;
            }
            case Op::kAdd: {
                const int64_t total = static_cast<int64_t>(n.value->size());
                for (int s2 = 0; s2 < 2; ++s2)
                    if (double* d = grad_of(n.in[s2]))
                        for (int64_t i = 0; i < total; ++i) d[i] += g[i];
                break;
            }
            case Op::kAddBias: {
                const int h = n.in[1].shape[0];
                const int64_t rows = static_cast<int64_t>(n.value->size()) / h;
                if (double* dx = grad_of(n.in[0]))
                    for (int64_t i = 0; i < rows * h; ++i) dx[i] += g[i];
                if (double* db = grad_of(n.in[1]))
                    for (int64_t r = 0; r < rows; ++r)
                        for (int j = 0; j < h; ++j) db[j] += g[r * h + j];
                break;
            }
            case Op::kMul: {
                const int64_t total = static_cast<int64_t>(n.value->size());
                const double* a = n.in[0].data->data();
                const double* b = n.in[1].data->data();
                if (double* da = grad_of(n.in[0]))
                    for (int64_t i = 0; i < total; ++i) da[i] += g[i] * b[i];
                if (double* db = grad_of(n.in[1]))
                    for (int64_t i = 0; i < total; ++i) db[i] += g[i] * a[i];
                break;
            }
            case Op::kScale: {
                const double c = n.dmeta[0];
                if (double* dx = grad_of(n.in[0]))
                    for (size_t i = 0; i < n.value->size(); ++i) dx[i] += g[i] * c;
                break;
            }
            case Op::kGelu: {
                const double* x = n.in[0].data->data();
                if (double* dx = grad_of(n.in[0]))
                    for (size_t i = 0; i < n.value->size(); ++i)
                        dx[i] += g[i] * detail::gelu_bwd(x[i]);
                break;
            }
            case Op::kSoftmax: {
                double* dx = grad_of(n.in[0]);
                if (!dx) break;
                const int axis = static_cast<int>(n.imeta[0]);
                const int d = n.shape[axis];
                int64_t outer = 1, inner = 1;
                for (int i = 0; i < axis; ++i) outer *= n.shape[i];
                for (int i = axis + 1; i < static_cast<int>(n.shape.size()); ++i)
                    inner *= n.shape[i];
                const double* y = n.value->data();
                for (int64_t o = 0; o < outer; ++o) {
                    for (int64_t in = 0; in < inner; ++in) {
                        const int64_t base = o * d * inner + in;
                        double dot = 0.0;
                        for (int j = 0; j < d; ++j)
                            dot += g[base + j * inner] * y[base + j * inner];
                        for (int j = 0; j < d; ++j)
                            dx[base + j * inner] +=
                                y[base + j * inner] * (g[base + j * inner] - dot);
                    }
                }
                break;
            }
            case Op::kLayerNorm: {
                const int h = n.shape.back();
                const int64_t rows = static_cast<int64_t>(n.value->size()) / h;
                const double* x = n.in[0].data->data();
                const double* gamma = n.in[1].data->data();
                double* dx = grad_of(n.in[0]);
                double* dg = grad_of(n.in[1]);
                double* db = grad_of(n.in[2]);
                for (int64_t r = 0; r < rows; ++r) {
                    const double mean = n.dmeta[2 * r];
                    const double inv = n.dmeta[2 * r + 1];
                    const double* xr = x + r * h;
                    const double* gr = g + r * h;
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < h; ++j) {
                        const double xh = (xr[j] - mean) * inv;
                        const double gdy = gamma[j] * gr[j];
                        m1 += gdy;
                        m2 += gdy * xh;
                        if (dg) dg[j] += gr[j] * xh;
                        if (db) db[j] += gr[j];
                    }
                    if (dx) {
                        m1 /= h;
                        m2 /= h;
                        for (int j = 0; j < h; ++j) {
                            const double xh = (xr[j] - mean) * inv;
                            dx[r * h + j] += inv * (gamma[j] * gr[j] - m1 - xh * m2);
                        }
                    }
                }
                break;
            }
            case Op::kCrossEntropy: {
                double* dx = grad_of(n.in[0]);
                if (!dx) break;
                const int rows = n.in[0].shape[0], c = n.in[0].shape[1];
                int64_t m = 0;
                for (int64_t t : n.imeta)
                    if (t != kIgnoreIndex) ++m;
                const double gs = g[0] / static_cast<double>(m);
                const double* x = n.in[0].data->data();
                std::vector<double> p(c);
                for (int r = 0; r < rows; ++r) {
                    if (n.imeta[r] == kIgnoreIndex) continue;
                    const double* row = x + static_cast<int64_t>(r) * c;
                    double mx = row[0];
                    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                    double sum = 0.0;
                    for (int j = 0; j < c; ++j) {
                        p[j] = std::exp(row[j] - mx);
                        sum += p[j];
                    }
                    for (int j = 0; j < c; ++j) {
                        double soft = p[j] / sum;
                        dx[static_cast<int64_t>(r) * c + j] +=
                            gs * (soft - (j == n.imeta[r] ? 1.0 : 0.0));
                    }
                }
                break;
            }
            case Op::kMse: {
                const int64_t total = static_cast<int64_t>(n.in[0].data->size());
                const double* p = n.in[0].data->data();
                const double* t = n.in[1].data->data();
                const double gs = 2.0 * g[0] / static_cast<double>(total);
                if (double* dp = grad_of(n.in[0]))
                    for (int64_t i = 0; i < total; ++i) dp[i] += gs * (p[i] - t[i]);
                if (double* dt = grad_of(n.in[1]))
                    for (int64_t i = 0; i < total; ++i) dt[i] -= gs * (p[i] - t[i]);
                break;
            }
            case Op::kEmbedding: {
                double* dt = grad_of(n.in[0]);
                if (!dt) break;
                const int h = n.in[0].shape[1];
                for (size_t i = 0; i < n.imeta.size(); ++i) {
                    const int64_t id = n.imeta[i];
                    for (int j = 0; j < h; ++j) dt[id * h + j] += g[i * h + j];
                }
                break;
            }
            case Op::kReshape: {
                if (double* dx = grad_of(n.in[0]))
                    for (size_t i = 0; i < n.grad->size(); ++i) dx[i] += g[i];
                break;
            }
            case Op::kPermute: {
                double* dx = grad_of(n.in[0]);
                if (!dx) break;
                std::vector<int> perm(n.imeta.begin(), n.imeta.end());
                permute_copy(nullptr, nullptr, n.in[0].shape, perm, true, g, dx);
                break;
            }
            case Op::kMaskedFill: {
                double* dx = grad_of(n.in[0]);
                if (!dx) break;
                const double* m = n.in[1].data->data();
                for (size_t i = 0; i < n.value->size(); ++i) dx[i] += g[i] * (1.0 - m[i]);
                break;
            }
            case Op::kReduceSum: {
                if (double* dx = grad_of(n.in[0]))
                    for (size_t i = 0; i < n.in[0].data->size(); ++i) dx[i] += g[0];
                break;
            }
            case Op::kSelectPosition: {
                double* dx = grad_of(n.in[0]);
                if (!dx) break;
                const int b = n.in[0].shape[0], t = n.in[0].shape[1], h = n.in[0].shape[2];
                const int pos = static_cast<int>(n.imeta[0]);
                for (int i = 0; i < b; ++i)
                    for (int j = 0; j < h; ++j)
                        dx[(static_cast<int64_t>(i) * t + pos) * h + j] +=
                            g[static_cast<int64_t>(i) * h + j];
                break;
            }
        }
    }
};

// ---------------------------------------------------------- optimizer step

// Vanilla SGD: p -= alpha * dp, then clear the gradients that were consumed.
inline void sgd_step(const std::vector<Tensor*>& params, double alpha) {
    for (Tensor* p : params)
        if (!p->grad) throw StateError("sgd_step: parameter was never registered on a tape");
    for (Tensor* p : params) {
        double* d = p->ptr();
        const double* g = p->grad->data();
        for (int64_t i = 0; i < p->numel(); ++i) d[i] -= alpha * g[i];
        p->zero_grad();
    }
}

// ---------------------------------------------------- finite differences

// Central-difference check of d f / d x against the tape's backward pass.
// f is any scalar-valued composition (Tape&, const Tensor&) -> Tensor; x is
// registered as a leaf for the analytic pass and perturbed component-wise
// for the numeric one. Returns the worst relative disagreement.
template <class F>
double finite_diff_check(F&& f, const Tensor& x0, double step) {
    if (!(step > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
    auto eval = [&](const std::vector<double>& xv) {
        Tape tape;
        Tensor x = Tensor::from(x0.shape, xv);
        Tensor y = f(tape, x);
        if (y.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
        return y.item();
    };

    const std::vector<double> base = *x0.data;
    const double v1 = eval(base);
    const double v2 = eval(base);
    if (std::memcmp(&v1, &v2, sizeof(double)) != 0)
        throw OracleError("finite_diff_check: f is not deterministic across probe calls");

    Tape tape;
    Tensor x = Tensor::from(x0.shape, base);
    tape.leaf(x);
    Tensor y = f(tape, x);
    if (y.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
    tape.backward(y);
    const std::vector<double> analytic = *x.grad;

    double worst = 0.0;
    std::vector<double> probe = base;
    for (size_t i = 0; i < base.size(); ++i) {
        probe[i] = base[i] + step;
        const double fp = eval(probe);
        probe[i] = base[i] - step;
        const double fm = eval(probe);
        probe[i] = base[i];
        const double numeric = (fp - fm) / (2.0 * step);
        // The guard must exceed the rounding noise of the central difference,
        // about eps * |f| / step (~2e-11 per unit of f): a component whose
        // true derivative is zero measures only that noise, and a smaller
        // guard would report it as disagreement.
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-6});
        worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace mtenc
