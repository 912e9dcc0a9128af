// gradcam.hpp - Grad-CAM maps for the last convolutional block.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "data.hpp"
#include "model.hpp"

namespace dpaat {

struct CamResult {
    Tensor map;        // [H', W'], >= 0
    Tensor upsampled;  // [H, W], in [0, 1]
    std::size_t target_class = 0;
    std::string layer_id;
};

// Mean of the class-score gradient over each channel's spatial positions.
inline Tensor channel_weights(const Tensor& activations, const Tensor& grads) {
    if (activations.rank() != 3 || activations.shape() != grads.shape())
        throw ShapeError("channel_weights: activations " + shape_str(activations.shape()) + " vs gradients " +
                         shape_str(grads.shape()));
    const std::size_t k = grads.dim(0), z = grads.dim(1) * grads.dim(2);
    Tensor w({k});
    const auto g = grads.data();
    for (std::size_t c = 0; c < k; ++c) {
        Real s = 0;
        for (std::size_t i = 0; i < z; ++i) s += g[c * z + i];
        w[c] = s / Real(z);
    }
    return w;
}

inline Tensor cam(const Tensor& activations, const Tensor& weights) {
    if (activations.rank() != 3 || weights.rank() != 1 || weights.dim(0) != activations.dim(0))
        throw ShapeError("cam: activations " + shape_str(activations.shape()) + " vs weights " +
                         shape_str(weights.shape()));
    const std::size_t k = activations.dim(0), h = activations.dim(1), w = activations.dim(2);
    Tensor out({h, w});
    const auto a = activations.data();
    auto o = out.data();
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < h * w; ++i) o[i] += weights[c] * a[c * h * w + i];
    for (auto& v : o) v = std::max(v, Real(0));
    return out;
}

// Align-corners bilinear resize of a 2-D map.
inline Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w) {
    if (map.rank() != 2) throw ShapeError("bilinear_upsample: expected a 2-D map, got " + shape_str(map.shape()));
    const std::size_t h = map.dim(0), w = map.dim(1);
    if (out_h < h || out_w < w)
        throw ContractError("bilinear_upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                            " is smaller than the map " + std::to_string(h) + "x" + std::to_string(w));
    Tensor out({out_h, out_w});
    auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
        return n_out == 1 ? Real(0) : Real(i) * Real(n_in - 1) / Real(n_out - 1);
    };
    for (std::size_t i = 0; i < out_h; ++i) {
        const Real y = coord(i, out_h, h);
        const std::size_t y0 = std::min(static_cast<std::size_t>(y), h - 1), y1 = std::min(y0 + 1, h - 1);
        const Real fy = y - Real(y0);
        for (std::size_t j = 0; j < out_w; ++j) {
            const Real x = coord(j, out_w, w);
            const std::size_t x0 = std::min(static_cast<std::size_t>(x), w - 1), x1 = std::min(x0 + 1, w - 1);
            const Real fx = x - Real(x0);
            const Real top = map.at(y0, x0) * (1 - fx) + map.at(y0, x1) * fx;
            const Real bot = map.at(y1, x0) * (1 - fx) + map.at(y1, x1) * fx;
            out.at(i, j) = top * (1 - fy) + bot * fy;
        }
    }
    return out;
}

// Min-max scaling to [0, 1]; a constant map becomes all zeros.
inline Tensor normalize_map(const Tensor& map) {
    const auto d = map.data();
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    Tensor out(map.shape());
    if (*hi == *lo) return out;
    auto o = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) o[i] = (d[i] - *lo) / (*hi - *lo);
    return out;
}

// Full map for one image [C,H,W]: gradient of the class logit with respect
// to the post-ReLU output of the last conv block.
inline CamResult grad_cam(const ArchSpec& arch, const ModelParams& params, const Tensor& image, std::size_t target) {
    if (target >= arch.classes) throw ContractError("grad_cam: target class " + std::to_string(target) + " out of range");
    const Tensor x = image.reshaped({1, arch.input[0], arch.input[1], arch.input[2]});
    ModelGraph m = build_model_graph(arch, 1);
    if (!m.tower.last_conv) throw ContractError("grad_cam: architecture '" + arch.id() + "' has no conv layer");
    m.graph.forward({{"x", x}, {"y", Tensor({1, arch.classes})}}, params.entries);
    Tensor seed({1, arch.classes});
    seed[target] = 1;
    m.graph.backward(m.tower.logits, seed, GradScope::Inputs);
    const NodeId layer = *m.tower.last_conv;
    const Shape& s = m.graph.shape_of(layer);
    const Shape chw{s[1], s[2], s[3]};
    const Tensor act = m.graph.value(layer).reshaped(chw);
    const Tensor grad = m.graph.grad(layer).reshaped(chw);
    CamResult r;
    r.map = cam(act, channel_weights(act, grad));
    r.upsampled = normalize_map(bilinear_upsample(r.map, arch.input[1], arch.input[2]));
    r.target_class = target;
    r.layer_id = m.graph.name_of(layer);
    return r;
}

inline std::string heatmap_stem(const std::string& image_id, const std::string& method, std::size_t cls) {
    return image_id + "_" + method + "_" + std::to_string(cls);
}

// Writes `{stem}.pgm` (8-bit) and `{stem}.csv` (normalized values, one row per line).
inline void render_heatmap(const Tensor& normalized, const std::filesystem::path& dir, const std::string& stem) {
    if (normalized.rank() != 2) throw ShapeError("render_heatmap: expected a 2-D map");
    const std::size_t h = normalized.dim(0), w = normalized.dim(1);
    PnmImage img{1, h, w, {}};
    for (auto v : normalized.data()) img.pixels.push_back(to_byte(v));
    write_pnm(dir / (stem + ".pgm"), img);
    std::ofstream csv(dir / (stem + ".csv"), std::ios::trunc);
    if (!csv) throw IoError("cannot write heatmap CSV: " + (dir / (stem + ".csv")).string());
    csv.precision(17);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) csv << (j ? "," : "") << normalized.at(i, j);
        csv << "\n";
    }
    if (!csv) throw IoError("failed writing heatmap CSV: " + (dir / (stem + ".csv")).string());
}

inline Tensor read_heatmap_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError("heatmap CSV not found: " + path.string());
    std::vector<Real> vals;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::size_t n = 0;
        while (std::getline(ls, cell, ',')) {
            vals.push_back(static_cast<Real>(std::stod(cell)));
            ++n;
        }
        if (rows == 0) cols = n;
        if (n != cols) throw DecodeError("heatmap CSV '" + path.string() + "' has ragged rows");
        ++rows;
    }
    if (rows == 0) throw DecodeError("heatmap CSV '" + path.string() + "' is empty");
    return Tensor({rows, cols}, std::move(vals));
}

} // namespace dpaat
