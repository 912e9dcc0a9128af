// model.hpp - classifier architectures, softmax head, cross-entropy loss.
//
// Architectures are described by an ArchSpec (a layer list) and compiled into
// a CompGraph per batch size. The reference SmallCNN is
//   conv 1->8 k3 (same) -> relu -> pool -> conv 8->16 k3 (same) -> relu -> pool
//   -> dense -> softmax
// and two smaller families (mlp, linear) cover tests and quick experiments.

#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace dpaat {

using Labels = std::vector<std::size_t>;

enum class LayerKind { Conv, Pool, Dense, Relu, Softmax };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    std::size_t in = 0;  // conv: input channels, dense: input features
    std::size_t out = 0; // conv: output channels, dense: output features
    std::size_t kernel = 0;
    bool same_padding = false;
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Pool: return "pool";
        case LayerKind::Dense: return "dense";
        case LayerKind::Relu: return "relu";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

struct ArchSpec {
    std::string family;               // small_cnn | mlp | linear | custom
    std::size_t hidden = 0;           // mlp only
    std::array<std::size_t, 3> input{}; // channels, height, width
    std::size_t classes = 0;
    std::vector<LayerSpec> layers;

    std::string id() const {
        std::string s = family;
        if (family == "mlp") s += ":" + std::to_string(hidden);
        s += "@" + std::to_string(input[0]) + "x" + std::to_string(input[1]) + "x" + std::to_string(input[2]);
        return s + "/" + std::to_string(classes);
    }
};

// Shape after each layer, for a single example ([C,H,W] or [features]).
struct LayerShapes {
    std::vector<Shape> after;
};

// Walks the layer list and checks that consecutive shapes chain. Throws on the
// first layer that does not fit.
inline LayerShapes validate_arch(const ArchSpec& arch) {
    LayerShapes out;
    if (arch.classes < 2) throw ContractError("arch '" + arch.id() + "': needs at least 2 classes");
    if (arch.input[0] == 0 || arch.input[1] == 0 || arch.input[2] == 0)
        throw ContractError("arch '" + arch.id() + "': input dimensions must be positive");
    if (arch.layers.empty() || arch.layers.back().kind != LayerKind::Softmax)
        throw ContractError("arch '" + arch.id() + "': last layer must be softmax");
    Shape cur{arch.input[0], arch.input[1], arch.input[2]};
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        auto bad = [&](const std::string& why) {
            return ContractError("arch '" + arch.id() + "': layer " + std::to_string(i) + " (" +
                                 layer_kind_name(l.kind) + ") " + why + ", incoming shape " + shape_str(cur));
        };
        switch (l.kind) {
            case LayerKind::Conv: {
                if (cur.size() != 3) throw bad("needs a [C,H,W] input");
                if (l.in != cur[0]) throw bad("expects " + std::to_string(l.in) + " input channels");
                if (l.out == 0 || l.kernel == 0) throw bad("has zero channels or kernel");
                const std::size_t pad = l.same_padding ? (l.kernel - 1) / 2 : 0;
                if (cur[1] + 2 * pad < l.kernel || cur[2] + 2 * pad < l.kernel) throw bad("kernel exceeds input");
                cur = {l.out, cur[1] + 2 * pad - l.kernel + 1, cur[2] + 2 * pad - l.kernel + 1};
                break;
            }
            case LayerKind::Pool:
                if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) throw bad("needs a [C,H,W] input with H,W >= 2");
                cur = {cur[0], cur[1] / 2, cur[2] / 2};
                break;
            case LayerKind::Dense: {
                const std::size_t features = shape_numel(cur);
                if (l.in != features) throw bad("expects " + std::to_string(l.in) + " inputs, got " + std::to_string(features));
                if (l.out == 0) throw bad("has zero outputs");
                cur = {l.out};
                break;
            }
            case LayerKind::Relu: break;
            case LayerKind::Softmax:
                if (i + 1 != arch.layers.size()) throw bad("softmax must be the last layer");
                if (cur.size() != 1 || cur[0] != arch.classes)
                    throw bad("softmax input must be [" + std::to_string(arch.classes) + "]");
                break;
        }
        out.after.push_back(cur);
    }
    return out;
}

inline ArchSpec small_cnn(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes) {
    ArchSpec a;
    a.family = "small_cnn";
    a.input = {channels, height, width};
    a.classes = classes;
    const std::size_t flat = 16 * (height / 2 / 2) * (width / 2 / 2);
    a.layers = {
        {LayerKind::Conv, channels, 8, 3, true},
        {LayerKind::Relu},
        {LayerKind::Pool},
        {LayerKind::Conv, 8, 16, 3, true},
        {LayerKind::Relu},
        {LayerKind::Pool},
        {LayerKind::Dense, flat, classes},
        {LayerKind::Softmax},
    };
    return a;
}

inline ArchSpec mlp(std::size_t channels, std::size_t height, std::size_t width, std::size_t hidden,
                    std::size_t classes) {
    ArchSpec a;
    a.family = "mlp";
    a.hidden = hidden;
    a.input = {channels, height, width};
    a.classes = classes;
    const std::size_t flat = channels * height * width;
    a.layers = {
        {LayerKind::Dense, flat, hidden},
        {LayerKind::Relu},
        {LayerKind::Dense, hidden, classes},
        {LayerKind::Softmax},
    };
    return a;
}

inline ArchSpec linear_classifier(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes) {
    ArchSpec a;
    a.family = "linear";
    a.input = {channels, height, width};
    a.classes = classes;
    a.layers = {{LayerKind::Dense, channels * height * width, classes}, {LayerKind::Softmax}};
    return a;
}

// Inverse of ArchSpec::id() for the built-in families.
inline ArchSpec arch_from_id(std::string_view id) {
    auto fail = [&] { return ContractError("unrecognized architecture id '" + std::string(id) + "'"); };
    auto num = [&](std::string_view s) {
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || v == 0) throw fail();
        return v;
    };
    const auto at = id.find('@');
    const auto slash = id.rfind('/');
    if (at == std::string_view::npos || slash == std::string_view::npos || slash < at) throw fail();
    std::string_view head = id.substr(0, at);
    std::string_view dims = id.substr(at + 1, slash - at - 1);
    const std::size_t classes = num(id.substr(slash + 1));
    std::array<std::size_t, 3> in{};
    for (int i = 0; i < 3; ++i) {
        const auto x = dims.find('x');
        if ((i < 2) != (x != std::string_view::npos)) throw fail();
        in[i] = num(dims.substr(0, x));
        if (x != std::string_view::npos) dims.remove_prefix(x + 1);
    }
    ArchSpec a;
    if (head == "small_cnn")
        a = small_cnn(in[0], in[1], in[2], classes);
    else if (head == "linear")
        a = linear_classifier(in[0], in[1], in[2], classes);
    else if (head.starts_with("mlp:"))
        a = mlp(in[0], in[1], in[2], num(head.substr(4)), classes);
    else
        throw fail();
    validate_arch(a);
    return a;
}

struct ModelParams {
    std::string arch_id;
    NamedTensors entries;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Canonical (name, shape) list for an architecture, in serialization order.
inline std::vector<std::pair<std::string, Shape>> param_layout(const ArchSpec& arch) {
    validate_arch(arch);
    std::vector<std::pair<std::string, Shape>> out;
    std::size_t convs = 0, denses = 0;
    for (const auto& l : arch.layers) {
        if (l.kind == LayerKind::Conv) {
            const std::string p = "conv" + std::to_string(++convs);
            out.push_back({p + ".weight", {l.out, l.in, l.kernel, l.kernel}});
            out.push_back({p + ".bias", {l.out}});
        } else if (l.kind == LayerKind::Dense) {
            const std::string p = "dense" + std::to_string(++denses);
            out.push_back({p + ".weight", {l.out, l.in}});
            out.push_back({p + ".bias", {l.out}});
        }
    }
    return out;
}

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
inline ModelParams build_model(const ArchSpec& arch, std::uint64_t seed) {
    ModelParams p;
    p.arch_id = arch.id();
    Rng rng(seed);
    for (auto& [name, shape] : param_layout(arch)) {
        Tensor t(shape);
        if (shape.size() > 1) {
            const std::size_t receptive = shape.size() == 4 ? shape[2] * shape[3] : 1;
            const double fan_in = double(shape[1] * receptive);
            const double fan_out = double(shape[0] * receptive);
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
        }
        p.entries.push_back({name, std::move(t)});
    }
    return p;
}

// Checks names, order and shapes of params against the architecture.
inline void check_params(const ArchSpec& arch, const ModelParams& params) {
    const auto layout = param_layout(arch);
    if (layout.size() != params.entries.size())
        throw ShapeError("model '" + arch.id() + "' has " + std::to_string(layout.size()) + " tensors, params have " +
                         std::to_string(params.entries.size()));
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].first != params.entries[i].name)
            throw ShapeError("param " + std::to_string(i) + " is '" + params.entries[i].name + "', expected '" +
                             layout[i].first + "'");
        if (layout[i].second != params.entries[i].value.shape())
            throw ShapeError("param '" + layout[i].first + "' has shape " +
                             shape_str(params.entries[i].value.shape()) + ", expected " +
                             shape_str(layout[i].second));
    }
}

inline Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
    Tensor t({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes)
            throw ContractError("label " + std::to_string(labels[i]) + " out of range for " +
                                std::to_string(classes) + " classes");
        t.at(i, labels[i]) = 1;
    }
    return t;
}

// Per-example -log(max(p[i, y_i], 1e-12)).
inline Tensor cross_entropy(const Tensor& prob, std::span<const std::size_t> labels) {
    if (prob.rank() != 2 || prob.dim(0) != labels.size())
        throw ShapeError("cross_entropy: prob " + shape_str(prob.shape()) + " vs " + std::to_string(labels.size()) +
                         " labels");
    Tensor out({labels.size()});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= prob.dim(1))
            throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
        out[i] = -std::log(std::max(prob.at(i, labels[i]), CompGraph::kLogFloor));
    }
    return out;
}

inline Real mean_of(const Tensor& t) {
    Real s = 0;
    for (auto v : t.data()) s += v;
    return s / Real(t.numel());
}

inline std::size_t argmax_row(const Tensor& prob, std::size_t row) {
    const std::size_t c = prob.dim(1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (prob.at(row, j) > prob.at(row, best)) best = j;
    return best;
}

inline Labels argmax_rows(const Tensor& prob) {
    Labels out(prob.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_row(prob, i);
    return out;
}

// Output handles of one forward tower through the architecture.
struct Tower {
    NodeId logits;
    NodeId probs;
    NodeId per_example_loss; // [N]
    NodeId loss_mean;        // [1]
    NodeId loss_sum;         // [1]
    std::optional<NodeId> last_conv; // post-relu activation of the last conv block
};

// Declares one param leaf per tensor of the architecture.
inline std::vector<NodeId> declare_params(CompGraph& g, const ArchSpec& arch) {
    std::vector<NodeId> ids;
    for (auto& [name, shape] : param_layout(arch)) ids.push_back(g.param(name, shape));
    return ids;
}

// Adds softmax cross-entropy against a one-hot [N,C] node.
inline void attach_loss(CompGraph& g, Tower& t, NodeId onehot) {
    const NodeId logp = g.log(t.probs);
    const NodeId picked = g.sum(g.mul(logp, onehot), Reduce::LastAxis);
    t.per_example_loss = g.mul(picked, g.constant(Tensor::scalar(-1)));
    t.loss_mean = g.mean(t.per_example_loss);
    t.loss_sum = g.sum(t.per_example_loss);
}

inline Tower add_tower(CompGraph& g, const ArchSpec& arch, const std::vector<NodeId>& params, NodeId x,
                       std::optional<NodeId> onehot) {
    Tower t;
    NodeId cur = x;
    std::size_t p = 0;
    const std::size_t batch = g.shape_of(x)[0];
    std::optional<NodeId> conv_out;
    for (const auto& l : arch.layers) {
        switch (l.kind) {
            case LayerKind::Conv:
                cur = g.conv2d(cur, params[p], params[p + 1], l.same_padding ? (l.kernel - 1) / 2 : 0);
                p += 2;
                conv_out = cur;
                break;
            case LayerKind::Pool: cur = g.maxpool2(cur); break;
            case LayerKind::Relu:
                cur = g.relu(cur);
                if (conv_out && *conv_out == NodeId{cur.index - 1}) t.last_conv = cur;
                break;
            case LayerKind::Dense:
                if (g.shape_of(cur).size() != 2) cur = g.reshape(cur, {batch, shape_numel(g.shape_of(cur)) / batch});
                cur = g.add(g.matmul(cur, params[p], true), params[p + 1]);
                p += 2;
                break;
            case LayerKind::Softmax:
                t.logits = cur;
                t.probs = g.softmax(cur);
                break;
        }
    }
    if (!t.last_conv && conv_out) t.last_conv = conv_out;
    if (onehot) attach_loss(g, t, *onehot);
    return t;
}

inline Shape batch_input_shape(const ArchSpec& arch, std::size_t batch) {
    return {batch, arch.input[0], arch.input[1], arch.input[2]};
}

// Single-tower graph: x, y (one-hot) -> probs, loss.
struct ModelGraph {
    CompGraph graph;
    Tower tower;
};

inline ModelGraph build_model_graph(const ArchSpec& arch, std::size_t batch) {
    ModelGraph m;
    const auto params = declare_params(m.graph, arch);
    const NodeId x = m.graph.input("x", batch_input_shape(arch, batch));
    const NodeId y = m.graph.input("y", {batch, arch.classes});
    m.tower = add_tower(m.graph, arch, params, x, y);
    m.graph.set_output(m.tower.loss_mean);
    return m;
}

// Architecture plus parameters plus a per-batch-size cache of compiled graphs.
// Not thread-safe; use one instance per thread.
class Classifier {
public:
    static constexpr std::size_t kEvalChunk = 64;

    Classifier(ArchSpec arch, ModelParams params) : arch_(std::move(arch)), params_(std::move(params)) {
        check_params(arch_, params_);
    }

    const ArchSpec& arch() const { return arch_; }
    const ModelParams& params() const { return params_; }
    ModelParams& mutable_params() { return params_; }
    void set_params(ModelParams p) {
        check_params(arch_, p);
        params_ = std::move(p);
    }

    ModelGraph& graph_for(std::size_t batch) {
        auto it = cache_.find(batch);
        if (it == cache_.end()) it = cache_.emplace(batch, build_model_graph(arch_, batch)).first;
        return it->second;
    }

    void check_input(const Tensor& x) const {
        if (x.rank() != 4 || x.dim(1) != arch_.input[0] || x.dim(2) != arch_.input[1] || x.dim(3) != arch_.input[2])
            throw ShapeError("model '" + arch_.id() + "' expects input [N," + std::to_string(arch_.input[0]) + "," +
                             std::to_string(arch_.input[1]) + "," + std::to_string(arch_.input[2]) + "], got " +
                             shape_str(x.shape()));
    }

    // Softmax probabilities [N, classes].
    Tensor predict_proba(const Tensor& x) {
        check_input(x);
        const std::size_t n = x.dim(0);
        std::vector<Real> out;
        out.reserve(n * arch_.classes);
        for (std::size_t s = 0; s < n; s += kEvalChunk) {
            const std::size_t e = std::min(n, s + kEvalChunk);
            ModelGraph& m = graph_for(e - s);
            m.graph.forward({{"x", x.rows(s, e)}, {"y", Tensor({e - s, arch_.classes})}}, params_.entries);
            const auto p = m.graph.value(m.tower.probs).data();
            out.insert(out.end(), p.begin(), p.end());
        }
        return Tensor({n, arch_.classes}, std::move(out));
    }

    struct LossGrad {
        Tensor per_example_loss; // [N]
        Tensor probs;            // [N, C]
        Tensor input_grad;       // d(sum of per-example losses)/dx, same shape as x
    };

    // Loss and its input gradient for one batch (no chunking: callers batch).
    LossGrad loss_and_input_grad(const Tensor& x, std::span<const std::size_t> labels) {
        check_input(x);
        ModelGraph& m = graph_for(x.dim(0));
        m.graph.forward({{"x", x}, {"y", one_hot(labels, arch_.classes)}}, params_.entries);
        LossGrad r{m.graph.value(m.tower.per_example_loss), m.graph.value(m.tower.probs), {}};
        Gradients g = m.graph.backward(m.tower.loss_sum, Tensor::scalar(1), GradScope::Inputs);
        r.input_grad = std::move(*find_tensor(g.inputs, "x"));
        return r;
    }

    Tensor per_example_loss(const Tensor& x, std::span<const std::size_t> labels) {
        return cross_entropy(predict_proba(x), labels);
    }

private:
    ArchSpec arch_;
    ModelParams params_;
    std::map<std::size_t, ModelGraph> cache_;
};

inline Tensor predict_proba(const ArchSpec& arch, const ModelParams& params, const Tensor& x) {
    Classifier c(arch, params);
    return c.predict_proba(x);
}

} // namespace dpaat
