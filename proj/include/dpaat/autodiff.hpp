// autodiff.hpp - minimal reverse-mode automatic differentiation.
//
// A CompGraph is declared once (leaves with fixed shapes, then primitive ops in
// topological order), evaluated with forward(), and differentiated with
// backward(). Intermediate values stay cached on the graph so callers can read
// activations and their gradients (Grad-CAM uses this).
//
// The primitive set is closed: add, mul, matmul, conv2d, 2x2 max-pool, relu,
// softmax, log, sum, mean, reshape. Everything else is composed from these.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "tensor.hpp"

namespace dpaat {

enum class OpKind {
    Input,
    Param,
    Constant,
    Add,
    Mul,
    MatMul,
    Conv2d,
    MaxPool2,
    Relu,
    Softmax,
    Log,
    Sum,
    Mean,
    Reshape,
};

enum class Reduce { All, LastAxis };

// Which leaves backward() must produce gradients for. Leaves outside the scope
// still get (zero) gradient tensors of the right shape.
enum class GradScope { All, Params, Inputs };

struct NodeId {
    std::size_t index = 0;
    friend bool operator==(NodeId, NodeId) = default;
};

struct Gradients {
    NamedTensors params;
    NamedTensors inputs;
};

class CompGraph {
public:
    static constexpr Real kLogFloor = Real(1e-12);

    // ---- leaves -----------------------------------------------------------

    NodeId input(std::string name, Shape shape) { return leaf(OpKind::Input, std::move(name), std::move(shape)); }
    NodeId param(std::string name, Shape shape) { return leaf(OpKind::Param, std::move(name), std::move(shape)); }

    NodeId constant(Tensor value, std::string name = "const") {
        Node n;
        n.kind = OpKind::Constant;
        n.name = std::move(name);
        n.shape = value.shape();
        n.value = std::move(value);
        return push(std::move(n));
    }

    // ---- primitives ---------------------------------------------------------

    // Elementwise a + b. b may be a scalar ([1]) or match a trailing block of
    // a's shape, in which case it is broadcast over the leading axes.
    NodeId add(NodeId a, NodeId b) { return binary(OpKind::Add, "add", a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(OpKind::Mul, "mul", a, b); }

    // a [M,K] times b [K,N] (or b [K] -> [M]). With transpose_b, b is [N,K].
    NodeId matmul(NodeId a, NodeId b, bool transpose_b = false) {
        const Shape& sa = shape_of(a);
        const Shape& sb = shape_of(b);
        const std::string name = "matmul#" + std::to_string(nodes_.size());
        if (sa.size() != 2) throw ShapeError(name + ": left operand must be rank 2, got " + shape_str(sa));
        Shape out;
        if (sb.size() == 1 && !transpose_b) {
            if (sb[0] != sa[1]) throw ShapeError(name + ": " + shape_str(sa) + " x " + shape_str(sb));
            out = {sa[0]};
        } else if (sb.size() == 2) {
            const std::size_t k = transpose_b ? sb[1] : sb[0];
            if (k != sa[1])
                throw ShapeError(name + ": inner dimensions differ, " + shape_str(sa) + " x " + shape_str(sb) +
                                 (transpose_b ? "^T" : ""));
            out = {sa[0], transpose_b ? sb[0] : sb[1]};
        } else {
            throw ShapeError(name + ": right operand must be rank 1 or 2, got " + shape_str(sb));
        }
        Node n;
        n.kind = OpKind::MatMul;
        n.name = name;
        n.inputs = {a.index, b.index};
        n.shape = std::move(out);
        n.transpose_b = transpose_b;
        return push(std::move(n));
    }

    // Stride-1 2-D convolution. x [N,Ci,H,W], w [Co,Ci,K,K], optional bias [Co].
    NodeId conv2d(NodeId x, NodeId w, std::optional<NodeId> bias, std::size_t padding) {
        const Shape& sx = shape_of(x);
        const Shape& sw = shape_of(w);
        const std::string name = "conv2d#" + std::to_string(nodes_.size());
        if (sx.size() != 4 || sw.size() != 4)
            throw ShapeError(name + ": expects x rank 4 and w rank 4, got " + shape_str(sx) + ", " + shape_str(sw));
        if (sw[1] != sx[1])
            throw ShapeError(name + ": input has " + std::to_string(sx[1]) + " channels, kernel expects " +
                             std::to_string(sw[1]));
        if (sw[2] != sw[3]) throw ShapeError(name + ": kernel must be square, got " + shape_str(sw));
        const std::size_t k = sw[2];
        if (sx[2] + 2 * padding < k || sx[3] + 2 * padding < k)
            throw ShapeError(name + ": kernel " + std::to_string(k) + " larger than padded input " + shape_str(sx));
        Node n;
        n.kind = OpKind::Conv2d;
        n.name = name;
        n.inputs = {x.index, w.index};
        if (bias) {
            const Shape& sb = shape_of(*bias);
            if (sb.size() != 1 || sb[0] != sw[0])
                throw ShapeError(name + ": bias shape " + shape_str(sb) + " does not match " +
                                 std::to_string(sw[0]) + " output channels");
            n.inputs.push_back(bias->index);
        }
        n.padding = padding;
        n.shape = {sx[0], sw[0], sx[2] + 2 * padding - k + 1, sx[3] + 2 * padding - k + 1};
        return push(std::move(n));
    }

    // 2x2 max-pool, stride 2 (odd trailing row/column dropped).
    NodeId maxpool2(NodeId x) {
        const Shape& sx = shape_of(x);
        const std::string name = "maxpool2#" + std::to_string(nodes_.size());
        if (sx.size() != 4 || sx[2] < 2 || sx[3] < 2)
            throw ShapeError(name + ": expects [N,C,H,W] with H,W >= 2, got " + shape_str(sx));
        Node n;
        n.kind = OpKind::MaxPool2;
        n.name = name;
        n.inputs = {x.index};
        n.shape = {sx[0], sx[1], sx[2] / 2, sx[3] / 2};
        return push(std::move(n));
    }

    NodeId relu(NodeId x) { return unary(OpKind::Relu, "relu", x, shape_of(x)); }

    // Softmax over the last axis, max-subtracted.
    NodeId softmax(NodeId x) { return unary(OpKind::Softmax, "softmax", x, shape_of(x)); }

    // log(max(x, floor)); gradient is zero where the floor is active.
    NodeId log(NodeId x, Real floor = kLogFloor) {
        NodeId id = unary(OpKind::Log, "log", x, shape_of(x));
        nodes_[id.index].floor = floor;
        return id;
    }

    NodeId sum(NodeId x, Reduce how = Reduce::All) { return reduction(OpKind::Sum, "sum", x, how); }
    NodeId mean(NodeId x, Reduce how = Reduce::All) { return reduction(OpKind::Mean, "mean", x, how); }

    NodeId reshape(NodeId x, Shape shape) {
        const std::string name = "reshape#" + std::to_string(nodes_.size());
        if (shape_numel(shape) != shape_numel(shape_of(x)))
            throw ShapeError(name + ": cannot reshape " + shape_str(shape_of(x)) + " to " + shape_str(shape));
        return unary(OpKind::Reshape, "reshape", x, std::move(shape));
    }

    // ---- evaluation ---------------------------------------------------------

    void set_output(NodeId id) {
        check_id(id);
        output_ = id.index;
    }

    NodeId output() const {
        if (nodes_.empty()) throw StateError("graph has no nodes");
        return NodeId{output_.value_or(nodes_.size() - 1)};
    }

    // Binds leaves by name, evaluates every node in order, caches values.
    const Tensor& forward(const NamedTensors& inputs, const NamedTensors& params) {
        for (auto& n : nodes_) {
            switch (n.kind) {
                case OpKind::Input: bind(n, inputs, "input"); break;
                case OpKind::Param: bind(n, params, "param"); break;
                case OpKind::Constant: break;
                default: eval(n); break;
            }
        }
        evaluated_ = true;
        return nodes_[output().index].value;
    }

    // Reverse pass from the output node.
    Gradients backward(const Tensor& seed, GradScope scope = GradScope::All) {
        return backward(output(), seed, scope);
    }

    // Reverse pass from an arbitrary node (e.g. one logit for Grad-CAM).
    Gradients backward(NodeId from, const Tensor& seed, GradScope scope = GradScope::All) {
        if (!evaluated_) throw StateError("backward called before forward");
        check_id(from);
        Node& root = nodes_[from.index];
        if (seed.shape() != root.shape)
            throw ShapeError("backward seed shape " + shape_str(seed.shape()) + " does not match node '" +
                             root.name + "' shape " + shape_str(root.shape));

        // Which nodes lead to a wanted leaf.
        for (auto& n : nodes_) {
            if (n.kind == OpKind::Input)
                n.needs_grad = scope != GradScope::Params;
            else if (n.kind == OpKind::Param)
                n.needs_grad = scope != GradScope::Inputs;
            else if (n.kind == OpKind::Constant)
                n.needs_grad = false;
            else
                n.needs_grad = std::any_of(n.inputs.begin(), n.inputs.end(),
                                           [&](std::size_t i) { return nodes_[i].needs_grad; });
            n.reached = false;
            if (n.grad.shape() != n.shape)
                n.grad = Tensor(n.shape);
            else
                n.grad.fill(Real(0));
        }

        root.grad = seed;
        root.reached = true;
        for (std::size_t i = from.index + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.reached || !n.needs_grad) continue;
            propagate(n);
            for (auto in : n.inputs)
                if (nodes_[in].needs_grad) nodes_[in].reached = true;
        }

        Gradients out;
        for (const auto& n : nodes_) {
            if (n.kind == OpKind::Param) out.params.push_back({n.name, n.grad});
            if (n.kind == OpKind::Input) out.inputs.push_back({n.name, n.grad});
        }
        return out;
    }

    const Tensor& value(NodeId id) const {
        check_id(id);
        if (!evaluated_ && nodes_[id.index].kind != OpKind::Constant)
            throw StateError("value of '" + nodes_[id.index].name + "' requested before forward");
        return nodes_[id.index].value;
    }

    const Tensor& grad(NodeId id) const {
        check_id(id);
        return nodes_[id.index].grad;
    }

    const Shape& shape_of(NodeId id) const {
        check_id(id);
        return nodes_[id.index].shape;
    }

    const std::string& name_of(NodeId id) const {
        check_id(id);
        return nodes_[id.index].name;
    }

    OpKind kind_of(NodeId id) const {
        check_id(id);
        return nodes_[id.index].kind;
    }

    std::size_t size() const { return nodes_.size(); }
    bool evaluated() const { return evaluated_; }

    std::vector<std::string> leaf_names(OpKind kind) const {
        std::vector<std::string> out;
        for (const auto& n : nodes_)
            if (n.kind == kind) out.push_back(n.name);
        return out;
    }

private:
    struct Node {
        OpKind kind = OpKind::Constant;
        std::string name;
        std::vector<std::size_t> inputs;
        Shape shape;
        std::size_t padding = 0;
        bool transpose_b = false;
        Reduce reduce = Reduce::All;
        Real floor = kLogFloor;
        Tensor value;
        Tensor grad;
        std::vector<std::uint32_t> argmax;
        bool needs_grad = false;
        bool reached = false;
    };

    void check_id(NodeId id) const {
        if (id.index >= nodes_.size())
            throw ContractError("node id " + std::to_string(id.index) + " is not part of this graph");
    }

    NodeId push(Node n) {
        for (auto in : n.inputs) check_id(NodeId{in});
        nodes_.push_back(std::move(n));
        evaluated_ = false;
        return NodeId{nodes_.size() - 1};
    }

    NodeId leaf(OpKind kind, std::string name, Shape shape) {
        for (const auto& n : nodes_)
            if ((n.kind == OpKind::Input || n.kind == OpKind::Param) && n.name == name)
                throw ContractError("duplicate leaf name '" + name + "'");
        Tensor probe(shape); // validates shape
        Node n;
        n.kind = kind;
        n.name = std::move(name);
        n.shape = std::move(shape);
        return push(std::move(n));
    }

    NodeId unary(OpKind kind, const char* op, NodeId x, Shape shape) {
        check_id(x);
        Node n;
        n.kind = kind;
        n.name = std::string(op) + "#" + std::to_string(nodes_.size());
        n.inputs = {x.index};
        n.shape = std::move(shape);
        return push(std::move(n));
    }

    NodeId binary(OpKind kind, const char* op, NodeId a, NodeId b) {
        const Shape& sa = shape_of(a);
        const Shape& sb = shape_of(b);
        const std::string name = std::string(op) + "#" + std::to_string(nodes_.size());
        if (!broadcastable(sa, sb))
            throw ShapeError(name + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
        Node n;
        n.kind = kind;
        n.name = name;
        n.inputs = {a.index, b.index};
        n.shape = sa;
        return push(std::move(n));
    }

    NodeId reduction(OpKind kind, const char* op, NodeId x, Reduce how) {
        const Shape& sx = shape_of(x);
        Shape out{1};
        if (how == Reduce::LastAxis && sx.size() > 1) out.assign(sx.begin(), sx.end() - 1);
        NodeId id = unary(kind, op, x, std::move(out));
        nodes_[id.index].reduce = how;
        return id;
    }

    static bool broadcastable(const Shape& a, const Shape& b) {
        if (a == b || shape_numel(b) == 1) return true;
        if (b.size() > a.size()) return false;
        return std::equal(b.rbegin(), b.rend(), a.rbegin());
    }

    void bind(Node& n, const NamedTensors& set, const char* what) {
        const Tensor* t = find_tensor(set, n.name);
        if (!t) throw ContractError(std::string("no ") + what + " bound for leaf '" + n.name + "'");
        if (t->shape() != n.shape)
            throw ShapeError(std::string(what) + " '" + n.name + "' declared " + shape_str(n.shape) +
                             " but got " + shape_str(t->shape()));
        n.value = *t;
    }

    Tensor& val(std::size_t i) { return nodes_[i].value; }

    void prepare(Node& n) {
        if (n.value.shape() != n.shape)
            n.value = Tensor(n.shape);
    }

    void eval(Node& n) {
        prepare(n);
        auto out = n.value.data();
        switch (n.kind) {
            case OpKind::Add:
            case OpKind::Mul: {
                const auto a = val(n.inputs[0]).data();
                const auto b = val(n.inputs[1]).data();
                const std::size_t inner = b.size();
                const bool is_add = n.kind == OpKind::Add;
                for (std::size_t i = 0, j = 0; i < a.size(); ++i, j = (j + 1 == inner ? 0 : j + 1))
                    out[i] = is_add ? a[i] + b[j] : a[i] * b[j];
                break;
            }
            case OpKind::MatMul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                const std::size_t m = a.dim(0), k = a.dim(1);
                const std::size_t cols = n.shape.size() == 2 ? n.shape[1] : 1;
                const auto ad = a.data();
                const auto bd = b.data();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < cols; ++c) {
                        Real acc = 0;
                        for (std::size_t t = 0; t < k; ++t)
                            acc += ad[r * k + t] * (n.transpose_b ? bd[c * k + t] : bd[t * cols + c]);
                        out[r * cols + c] = acc;
                    }
                break;
            }
            case OpKind::Conv2d: conv_forward(n); break;
            case OpKind::MaxPool2: {
                const Tensor& x = val(n.inputs[0]);
                const std::size_t planes = n.shape[0] * n.shape[1];
                const std::size_t h = x.dim(2), w = x.dim(3), oh = n.shape[2], ow = n.shape[3];
                n.argmax.resize(n.value.numel());
                const auto xd = x.data();
                for (std::size_t p = 0; p < planes; ++p)
                    for (std::size_t i = 0; i < oh; ++i)
                        for (std::size_t j = 0; j < ow; ++j) {
                            std::size_t best = p * h * w + 2 * i * w + 2 * j;
                            for (std::size_t di = 0; di < 2; ++di)
                                for (std::size_t dj = 0; dj < 2; ++dj) {
                                    const std::size_t idx = p * h * w + (2 * i + di) * w + 2 * j + dj;
                                    if (xd[idx] > xd[best]) best = idx;
                                }
                            const std::size_t o = (p * oh + i) * ow + j;
                            out[o] = xd[best];
                            n.argmax[o] = static_cast<std::uint32_t>(best);
                        }
                break;
            }
            case OpKind::Relu: {
                const auto x = val(n.inputs[0]).data();
                for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0 ? x[i] : Real(0);
                break;
            }
            case OpKind::Softmax: {
                const auto x = val(n.inputs[0]).data();
                const std::size_t c = n.shape.back();
                for (std::size_t r = 0; r < x.size() / c; ++r) {
                    const auto row = x.subspan(r * c, c);
                    const Real mx = *std::max_element(row.begin(), row.end());
                    Real z = 0;
                    for (std::size_t j = 0; j < c; ++j) {
                        out[r * c + j] = std::exp(row[j] - mx);
                        z += out[r * c + j];
                    }
                    for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= z;
                }
                break;
            }
            case OpKind::Log: {
                const auto x = val(n.inputs[0]).data();
                for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::log(std::max(x[i], n.floor));
                break;
            }
            case OpKind::Sum:
            case OpKind::Mean: {
                const auto x = val(n.inputs[0]).data();
                const std::size_t groups = n.value.numel();
                const std::size_t len = x.size() / groups;
                for (std::size_t g = 0; g < groups; ++g) {
                    Real acc = 0;
                    for (std::size_t t = 0; t < len; ++t) acc += x[g * len + t];
                    out[g] = n.kind == OpKind::Mean ? acc / Real(len) : acc;
                }
                break;
            }
            case OpKind::Reshape: {
                const auto x = val(n.inputs[0]).data();
                std::copy(x.begin(), x.end(), out.begin());
                break;
            }
            default: break;
        }
    }

    void conv_forward(Node& n) {
        const Tensor& x = val(n.inputs[0]);
        const Tensor& w = val(n.inputs[1]);
        const std::size_t batch = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
        const std::size_t co = w.dim(0), k = w.dim(2), oh = n.shape[2], ow = n.shape[3];
        const auto pad = static_cast<std::ptrdiff_t>(n.padding);
        const auto xd = x.data();
        const auto wdat = w.data();
        auto out = n.value.data();
        const Real* bias = n.inputs.size() > 2 ? val(n.inputs[2]).data().data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < co; ++o) {
                Real* plane = out.data() + (b * co + o) * oh * ow;
                std::fill(plane, plane + oh * ow, bias ? bias[o] : Real(0));
                for (std::size_t c = 0; c < ci; ++c) {
                    const Real* src = xd.data() + (b * ci + c) * h * wd;
                    for (std::size_t kh = 0; kh < k; ++kh)
                        for (std::size_t kw = 0; kw < k; ++kw) {
                            const Real wv = wdat[((o * ci + c) * k + kh) * k + kw];
                            const auto [i0, i1] = valid_range(oh, h, kh, pad);
                            const auto [j0, j1] = valid_range(ow, wd, kw, pad);
                            for (std::size_t i = i0; i < i1; ++i) {
                                const Real* srow = src + offset(i, kh, kw, pad, wd);
                                Real* orow = plane + i * ow;
                                for (std::size_t j = j0; j < j1; ++j) orow[j] += wv * srow[j];
                            }
                        }
                }
            }
    }

    void conv_backward(Node& n) {
        Node& xn = nodes_[n.inputs[0]];
        Node& wn = nodes_[n.inputs[1]];
        const std::size_t batch = xn.shape[0], ci = xn.shape[1], h = xn.shape[2], wd = xn.shape[3];
        const std::size_t co = wn.shape[0], k = wn.shape[2], oh = n.shape[2], ow = n.shape[3];
        const auto pad = static_cast<std::ptrdiff_t>(n.padding);
        const auto g = n.grad.data();
        const auto xd = xn.value.data();
        const auto wdat = wn.value.data();
        auto gx = xn.grad.data();
        auto gw = wn.grad.data();
        if (n.inputs.size() > 2 && nodes_[n.inputs[2]].needs_grad) {
            auto gb = nodes_[n.inputs[2]].grad.data();
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t o = 0; o < co; ++o) {
                    const Real* gp = g.data() + (b * co + o) * oh * ow;
                    Real acc = 0;
                    for (std::size_t t = 0; t < oh * ow; ++t) acc += gp[t];
                    gb[o] += acc;
                }
        }
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < co; ++o) {
                const Real* gp = g.data() + (b * co + o) * oh * ow;
                for (std::size_t c = 0; c < ci; ++c) {
                    const std::size_t plane = (b * ci + c) * h * wd;
                    for (std::size_t kh = 0; kh < k; ++kh)
                        for (std::size_t kw = 0; kw < k; ++kw) {
                            const std::size_t widx = ((o * ci + c) * k + kh) * k + kw;
                            const auto [i0, i1] = valid_range(oh, h, kh, pad);
                            const auto [j0, j1] = valid_range(ow, wd, kw, pad);
                            if (wn.needs_grad) {
                                Real acc = 0;
                                for (std::size_t i = i0; i < i1; ++i) {
                                    const Real* srow = xd.data() + plane + offset(i, kh, kw, pad, wd);
                                    const Real* grow = gp + i * ow;
                                    for (std::size_t j = j0; j < j1; ++j) acc += grow[j] * srow[j];
                                }
                                gw[widx] += acc;
                            }
                            if (xn.needs_grad) {
                                const Real wv = wdat[widx];
                                for (std::size_t i = i0; i < i1; ++i) {
                                    Real* drow = gx.data() + plane + offset(i, kh, kw, pad, wd);
                                    const Real* grow = gp + i * ow;
                                    for (std::size_t j = j0; j < j1; ++j) drow[j] += wv * grow[j];
                                }
                            }
                        }
                }
            }
    }

    // Signed offset of input element (i + kh - pad, kw - pad) within a plane of width w.
    static std::ptrdiff_t offset(std::size_t i, std::size_t kh, std::size_t kw, std::ptrdiff_t pad, std::size_t w) {
        const auto row = static_cast<std::ptrdiff_t>(i + kh) - pad;
        return row * static_cast<std::ptrdiff_t>(w) + static_cast<std::ptrdiff_t>(kw) - pad;
    }

    // Output positions i in [lo, hi) whose input row i + kernel_off - pad lies inside [0, in).
    static std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t kernel_off,
                                                           std::ptrdiff_t pad) {
        const auto off = static_cast<std::ptrdiff_t>(kernel_off) - pad;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
        const std::ptrdiff_t hi =
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out), static_cast<std::ptrdiff_t>(in) - off);
        return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
    }

    void propagate(Node& n) {
        const auto g = n.grad.data();
        switch (n.kind) {
            case OpKind::Add:
            case OpKind::Mul: {
                Node& an = nodes_[n.inputs[0]];
                Node& bn = nodes_[n.inputs[1]];
                const std::size_t inner = bn.value.numel();
                const bool is_add = n.kind == OpKind::Add;
                const auto a = an.value.data();
                const auto b = bn.value.data();
                if (an.needs_grad) {
                    auto ga = an.grad.data();
                    for (std::size_t i = 0, j = 0; i < g.size(); ++i, j = (j + 1 == inner ? 0 : j + 1))
                        ga[i] += is_add ? g[i] : g[i] * b[j];
                }
                if (bn.needs_grad) {
                    auto gb = bn.grad.data();
                    for (std::size_t i = 0, j = 0; i < g.size(); ++i, j = (j + 1 == inner ? 0 : j + 1))
                        gb[j] += is_add ? g[i] : g[i] * a[i];
                }
                break;
            }
            case OpKind::MatMul: {
                Node& an = nodes_[n.inputs[0]];
                Node& bn = nodes_[n.inputs[1]];
                const std::size_t m = an.shape[0], k = an.shape[1];
                const std::size_t cols = n.shape.size() == 2 ? n.shape[1] : 1;
                const auto a = an.value.data();
                const auto b = bn.value.data();
                auto bidx = [&](std::size_t t, std::size_t c) { return n.transpose_b ? c * k + t : t * cols + c; };
                if (an.needs_grad) {
                    auto ga = an.grad.data();
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t t = 0; t < k; ++t) {
                            Real acc = 0;
                            for (std::size_t c = 0; c < cols; ++c) acc += g[r * cols + c] * b[bidx(t, c)];
                            ga[r * k + t] += acc;
                        }
                }
                if (bn.needs_grad) {
                    auto gb = bn.grad.data();
                    for (std::size_t t = 0; t < k; ++t)
                        for (std::size_t c = 0; c < cols; ++c) {
                            Real acc = 0;
                            for (std::size_t r = 0; r < m; ++r) acc += a[r * k + t] * g[r * cols + c];
                            gb[bidx(t, c)] += acc;
                        }
                }
                break;
            }
            case OpKind::Conv2d: conv_backward(n); break;
            case OpKind::MaxPool2: {
                auto gx = nodes_[n.inputs[0]].grad.data();
                for (std::size_t o = 0; o < g.size(); ++o) gx[n.argmax[o]] += g[o];
                break;
            }
            case OpKind::Relu: {
                Node& xn = nodes_[n.inputs[0]];
                const auto x = xn.value.data();
                auto gx = xn.grad.data();
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] > 0) gx[i] += g[i];
                break;
            }
            case OpKind::Softmax: {
                auto gx = nodes_[n.inputs[0]].grad.data();
                const auto y = n.value.data();
                const std::size_t c = n.shape.back();
                for (std::size_t r = 0; r < y.size() / c; ++r) {
                    Real dot = 0;
                    for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
                    for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
                }
                break;
            }
            case OpKind::Log: {
                Node& xn = nodes_[n.inputs[0]];
                const auto x = xn.value.data();
                auto gx = xn.grad.data();
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] > n.floor) gx[i] += g[i] / x[i];
                break;
            }
            case OpKind::Sum:
            case OpKind::Mean: {
                auto gx = nodes_[n.inputs[0]].grad.data();
                const std::size_t groups = n.value.numel();
                const std::size_t len = gx.size() / groups;
                for (std::size_t grp = 0; grp < groups; ++grp) {
                    const Real v = n.kind == OpKind::Mean ? g[grp] / Real(len) : g[grp];
                    for (std::size_t t = 0; t < len; ++t) gx[grp * len + t] += v;
                }
                break;
            }
            case OpKind::Reshape: {
                auto gx = nodes_[n.inputs[0]].grad.data();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                break;
            }
            default: break;
        }
    }

    std::vector<Node> nodes_;
    std::optional<std::size_t> output_;
    bool evaluated_ = false;
};

// Largest relative disagreement between backward() and central differences,
// over every coordinate of every bound input and parameter:
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
inline Real finite_diff_check(CompGraph& graph, NamedTensors inputs, NamedTensors params, Real step) {
    const Tensor& out = graph.forward(inputs, params);
    if (out.numel() != 1)
        throw ContractError("finite_diff_check needs a scalar output, got " + shape_str(out.shape()));
    const Gradients analytic = graph.backward(Tensor::scalar(1));

    Real worst = 0;
    auto sweep = [&](NamedTensors& set, const NamedTensors& grads) {
        for (auto& entry : set) {
            const Tensor* g = find_tensor(grads, entry.name);
            if (!g) continue;
            auto v = entry.value.data();
            for (std::size_t i = 0; i < v.size(); ++i) {
                const Real saved = v[i];
                v[i] = saved + step;
                const Real up = graph.forward(inputs, params)[0];
                v[i] = saved - step;
                const Real down = graph.forward(inputs, params)[0];
                v[i] = saved;
                const Real numeric = (up - down) / (2 * step);
                const Real a = (*g)[i];
                const Real denom = std::max({std::abs(a), std::abs(numeric), Real(1e-8)});
                worst = std::max(worst, std::abs(a - numeric) / denom);
            }
        }
    };
    sweep(inputs, analytic.inputs);
    sweep(params, analytic.params);
    graph.forward(inputs, params);
    return worst;
}

} // namespace dpaat
