// data.hpp - datasets: PGM/PPM folders with a CSV index, a seeded synthetic
// lesion-style generator, and stratified splitting.
//
// Index file: CSV with header "filename,class". Images are 8-bit binary PGM
// (P5, one channel) or PPM (P6, three channels), already at the configured
// resolution. Pixels are scaled to [0, 1].

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"
#include "rng.hpp"

namespace dpaat {

class MissingFileError : public IoError {
public:
    using IoError::IoError;
};

class DecodeError : public IoError {
public:
    using IoError::IoError;
};

class UnknownClassError : public Error {
public:
    using Error::Error;
};

enum class SplitTag { All, Train, Val, Test };

inline const char* split_name(SplitTag t) {
    switch (t) {
        case SplitTag::All: return "all";
        case SplitTag::Train: return "train";
        case SplitTag::Val: return "val";
        case SplitTag::Test: return "test";
    }
    return "?";
}

struct Dataset {
    Tensor images; // [N, channels, H, W], values in [0, 1]
    Labels labels;
    std::vector<std::string> class_names;
    SplitTag split = SplitTag::All;

    std::size_t size() const { return labels.size(); }
    std::size_t classes() const { return class_names.size(); }

    Dataset subset(std::span<const std::size_t> idx, SplitTag tag) const {
        Dataset d;
        d.images = gather_rows(images, idx);
        for (auto i : idx) d.labels.push_back(labels[i]);
        d.class_names = class_names;
        d.split = tag;
        return d;
    }

    // Order-sensitive fingerprint of pixels and labels.
    std::uint64_t checksum() const {
        std::uint64_t h = 0x84222325cbf29ce4ULL;
        auto mix = [&](std::uint64_t v) { h = splitmix64(h ^ v); };
        for (auto v : images.data()) mix(std::bit_cast<std::uint64_t>(static_cast<double>(v)));
        for (auto l : labels) mix(l);
        return h;
    }

    void validate() const {
        if (images.rank() != 4 || images.dim(0) != labels.size())
            throw ShapeError("dataset: images " + shape_str(images.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
        for (auto l : labels)
            if (l >= class_names.size()) throw ContractError("dataset: label " + std::to_string(l) + " out of range");
        for (auto v : images.data())
            if (!(v >= 0 && v <= 1)) throw ContractError("dataset: pixel outside [0,1]");
    }
};

// ---- PGM / PPM ---------------------------------------------------------------

struct PnmImage {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels; // interleaved, row-major
};

inline PnmImage read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("missing file: " + path.string());
    auto fail = [&](const std::string& why) { return DecodeError("cannot decode image " + path.string() + ": " + why); };
    auto token = [&]() {
        std::string t;
        char ch;
        while (in.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!t.empty()) break;
                continue;
            }
            t += ch;
        }
        return t;
    };
    auto number = [&](const char* what) {
        const std::string t = token();
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (t.empty() || ec != std::errc() || p != t.data() + t.size()) throw fail(std::string("bad ") + what);
        return v;
    };
    PnmImage img;
    const std::string magic = token();
    if (magic == "P5")
        img.channels = 1;
    else if (magic == "P6")
        img.channels = 3;
    else
        throw fail("unsupported format '" + magic + "' (need P5 or P6)");
    img.width = number("width");
    img.height = number("height");
    const std::size_t maxval = number("maxval");
    if (img.width == 0 || img.height == 0) throw fail("zero size");
    if (maxval != 255) throw fail("only 8-bit maxval 255 is supported");
    img.pixels.resize(img.width * img.height * img.channels);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) throw fail("truncated pixel data");
    return img;
}

inline void write_pnm(const std::filesystem::path& path, const PnmImage& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image: " + path.string());
    out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("failed writing image: " + path.string());
}

inline std::uint8_t to_byte(Real v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp<double>(v, 0.0, 1.0) * 255.0));
}

// ---- folder ingestion --------------------------------------------------------

struct FolderOptions {
    std::optional<std::array<std::size_t, 3>> expected_shape;  // channels, H, W
    std::optional<std::vector<std::string>> known_classes;     // reject anything else
};

inline Dataset load_folder(const std::filesystem::path& root, const std::filesystem::path& index,
                           const FolderOptions& opts = {}) {
    std::ifstream in(index);
    if (!in) throw MissingFileError("missing file: " + index.string());
    std::string line;
    if (!std::getline(in, line)) throw DecodeError("index " + index.string() + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "filename,class")
        throw DecodeError("index " + index.string() + ": header must be 'filename,class', got '" + line + "'");

    std::vector<std::pair<std::string, std::string>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw DecodeError("index " + index.string() + " line " + std::to_string(lineno) + ": expected 2 fields");
        rows.emplace_back(line.substr(0, comma), line.substr(comma + 1));
    }
    if (rows.empty()) throw DecodeError("index " + index.string() + " lists no images");

    std::set<std::string> names;
    for (auto& [file, cls] : rows) {
        if (opts.known_classes &&
            std::find(opts.known_classes->begin(), opts.known_classes->end(), cls) == opts.known_classes->end())
            throw UnknownClassError("unknown class '" + cls + "' for " + file);
        names.insert(cls);
    }
    Dataset d;
    d.class_names.assign(names.begin(), names.end());
    std::map<std::string, std::size_t> label_of;
    for (std::size_t i = 0; i < d.class_names.size(); ++i) label_of[d.class_names[i]] = i;

    std::vector<Real> data;
    std::optional<std::array<std::size_t, 3>> shape = opts.expected_shape;
    for (auto& [file, cls] : rows) {
        const auto path = root / file;
        if (!std::filesystem::exists(path)) throw MissingFileError("missing file: " + path.string());
        const PnmImage img = read_pnm(path);
        const std::array<std::size_t, 3> s{img.channels, img.height, img.width};
        if (!shape) shape = s;
        if (*shape != s)
            throw DecodeError("image " + path.string() + " is " + std::to_string(s[0]) + "x" + std::to_string(s[1]) +
                              "x" + std::to_string(s[2]) + ", expected " + std::to_string((*shape)[0]) + "x" +
                              std::to_string((*shape)[1]) + "x" + std::to_string((*shape)[2]));
        // interleaved -> planar
        for (std::size_t c = 0; c < img.channels; ++c)
            for (std::size_t p = 0; p < img.height * img.width; ++p)
                data.push_back(Real(img.pixels[p * img.channels + c]) / Real(255));
        d.labels.push_back(label_of[cls]);
    }
    d.images = Tensor({rows.size(), (*shape)[0], (*shape)[1], (*shape)[2]}, std::move(data));
    return d;
}

// Writes images (8-bit quantized) plus an index.csv loadable by load_folder.
inline void export_dataset(const Dataset& d, const std::filesystem::path& dir, const std::string& prefix) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.csv", std::ios::trunc);
    if (!index) throw IoError("cannot write " + (dir / "index.csv").string());
    index << "filename,class\n";
    const std::size_t ch = d.images.dim(1), h = d.images.dim(2), w = d.images.dim(3);
    if (ch != 1 && ch != 3) throw ContractError("export_dataset: only 1 or 3 channels can be written");
    for (std::size_t i = 0; i < d.size(); ++i) {
        PnmImage img{ch, h, w, std::vector<std::uint8_t>(ch * h * w)};
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t p = 0; p < h * w; ++p)
                img.pixels[p * ch + c] = to_byte(d.images[((i * ch) + c) * h * w + p]);
        char name[64];
        std::snprintf(name, sizeof name, "%s%05zu.%s", prefix.c_str(), i, ch == 3 ? "ppm" : "pgm");
        write_pnm(dir / name, img);
        index << name << "," << d.class_names[d.labels[i]] << "\n";
    }
    if (!index) throw IoError("failed writing " + (dir / "index.csv").string());
}

// ---- synthetic generator -----------------------------------------------------

struct SynthOptions {
    Real noise = Real(0.05);  // uniform additive noise in [-noise, noise]
    Real jitter = Real(0.1);  // center jitter, fraction of the image size
};

// Class c is an elliptical blob of radius (0.15 + 0.08c)H, axis ratio
// 1 + 0.3c (stretched horizontally) and falloff exp(-d^2 / r^2). Each example
// draws from its own counter stream, so the output depends only on the
// arguments.
inline Dataset synth(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed,
                     const SynthOptions& opts = {}) {
    if (classes < 2) throw ContractError("synth: need at least 2 classes");
    if (per_class == 0 || size == 0) throw ContractError("synth: per_class and size must be positive");
    Dataset d;
    // zero-padded so lexicographic order (as used by load_folder) is label order
    const std::size_t width = std::to_string(classes - 1).size();
    for (std::size_t c = 0; c < classes; ++c) {
        const std::string num = std::to_string(c);
        d.class_names.push_back("class" + std::string(width - num.size(), '0') + num);
    }
    std::vector<Real> data;
    data.reserve(classes * per_class * size * size);
    const double h = double(size);
    for (std::size_t c = 0; c < classes; ++c) {
        const double r = (0.15 + 0.08 * double(c)) * h;
        const double ecc = 1.0 + 0.3 * double(c);
        for (std::size_t k = 0; k < per_class; ++k) {
            CounterStream rs(StreamKey{seed, 0x5e7d, c, k});
            const double cx = h / 2 + rs.uniform(-1, 1) * double(opts.jitter) * h;
            const double cy = h / 2 + rs.uniform(-1, 1) * double(opts.jitter) * h;
            for (std::size_t i = 0; i < size; ++i)
                for (std::size_t j = 0; j < size; ++j) {
                    const double dx = (double(j) - cx) / ecc;
                    const double dy = double(i) - cy;
                    double v = std::exp(-(dx * dx + dy * dy) / (r * r));
                    v += rs.uniform(-1, 1) * double(opts.noise);
                    data.push_back(static_cast<Real>(std::clamp(v, 0.0, 1.0)));
                }
            d.labels.push_back(c);
        }
    }
    d.images = Tensor({classes * per_class, 1, size, size}, std::move(data));
    return d;
}

// ---- splitting ---------------------------------------------------------------

struct SplitFractions {
    Real train = Real(0.7);
    Real val = Real(0.15);
    Real test = Real(0.15);
};

struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Seeded stratified split: each class is shuffled on its own stream and cut
// by the fractions (every split gets at least one example per class). When
// the fractions sum to 1, rounding leftovers go to train.
inline Splits split(const Dataset& d, const SplitFractions& f, std::uint64_t seed) {
    if (!(f.train > 0 && f.val > 0 && f.test > 0))
        throw ContractError("split: fractions must be positive");
    const Real sum = f.train + f.val + f.test;
    if (sum > Real(1) + Real(1e-9)) throw ContractError("split: fractions sum to more than 1");
    const bool full = sum > Real(1) - Real(1e-9);

    std::vector<std::size_t> tr, va, te;
    for (std::size_t c = 0; c < d.classes(); ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (d.labels[i] == c) idx.push_back(i);
        if (idx.size() < 3)
            throw ContractError("split: class '" + d.class_names[c] + "' has " + std::to_string(idx.size()) +
                                " examples, fewer than the 3 splits");
        Rng rng(derive_seed(seed, c));
        rng.shuffle(idx);
        const std::size_t n = idx.size();
        auto portion = [&](Real frac) {
            return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(double(frac) * double(n) + 1e-9)));
        };
        const std::size_t nv = portion(f.val), nt = portion(f.test);
        std::size_t ntr = full ? n - std::min(n, nv + nt) : portion(f.train);
        if (ntr == 0 || ntr + nv + nt > n)
            throw ContractError("split: class '" + d.class_names[c] + "' is too small for the requested fractions");
        tr.insert(tr.end(), idx.begin(), idx.begin() + ntr);
        va.insert(va.end(), idx.begin() + ntr, idx.begin() + ntr + nv);
        te.insert(te.end(), idx.begin() + ntr + nv, idx.begin() + ntr + nv + nt);
    }
    for (auto* v : {&tr, &va, &te}) std::sort(v->begin(), v->end());
    return {d.subset(tr, SplitTag::Train), d.subset(va, SplitTag::Val), d.subset(te, SplitTag::Test)};
}

} // namespace dpaat
