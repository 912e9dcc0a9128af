// checkpoint.hpp - portable parameter file (.dpat).
//
// Layout, all integers u32 little-endian:
//   "DPAT" | version (=1) | arch_id (len + UTF-8) | tensor count |
//   per tensor: name (len + UTF-8) | rank | dims... | float32 LE payload
// Parameters are always stored as 32-bit floats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "model.hpp"

namespace dpaat {

class CheckpointError : public Error {
public:
    enum class Kind { BadMagic, UnsupportedVersion, Truncated, ShapeMismatch, UnknownArch };

    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr char kCheckpointMagic[4] = {'D', 'P', 'A', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_str(std::vector<std::uint8_t>& buf, const std::string& s) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
}

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

    void need(std::size_t n, const char* what) const {
        if (buf_.size() - pos_ < n)
            throw CheckpointError(CheckpointError::Kind::Truncated,
                                  "checkpoint '" + path_ + "' truncated while reading " + what);
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(buf_.begin() + pos_, buf_.begin() + pos_ + n);
        pos_ += n;
        return s;
    }

    const std::uint8_t* take(std::size_t n, const char* what) {
        need(n, what);
        const std::uint8_t* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

    bool done() const { return pos_ == buf_.size(); }

private:
    const std::vector<std::uint8_t>& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
    std::vector<std::uint8_t> buf(kCheckpointMagic, kCheckpointMagic + 4);
    detail::put_u32(buf, kCheckpointVersion);
    detail::put_str(buf, params.arch_id);
    detail::put_u32(buf, static_cast<std::uint32_t>(params.entries.size()));
    for (const auto& [name, t] : params.entries) {
        detail::put_str(buf, name);
        detail::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) detail::put_u32(buf, static_cast<std::uint32_t>(d));
        for (auto v : t.data()) detail::put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return buf;
}

inline ModelParams decode_checkpoint(const std::vector<std::uint8_t>& buf, const std::string& path = "<memory>") {
    using Kind = CheckpointError::Kind;
    detail::Reader r(buf, path);
    const std::uint8_t* magic = r.take(4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw CheckpointError(Kind::BadMagic, "checkpoint '" + path + "' has bad magic (expected \"DPAT\")");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw CheckpointError(Kind::UnsupportedVersion,
                              "checkpoint '" + path + "' has unsupported version " + std::to_string(version));
    ModelParams p;
    p.arch_id = r.str("arch id");
    ArchSpec arch;
    try {
        arch = arch_from_id(p.arch_id);
    } catch (const ContractError& e) {
        throw CheckpointError(Kind::UnknownArch, "checkpoint '" + path + "': " + e.what());
    }
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str("tensor name");
        const std::uint32_t rank = r.u32("rank");
        if (rank == 0 || rank > 8)
            throw CheckpointError(Kind::ShapeMismatch,
                                  "checkpoint '" + path + "': tensor '" + name + "' has rank " + std::to_string(rank));
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape.push_back(r.u32("dims"));
            if (shape.back() == 0)
                throw CheckpointError(Kind::ShapeMismatch,
                                      "checkpoint '" + path + "': tensor '" + name + "' has a zero dimension");
            numel *= shape.back();
        }
        r.need(numel * 4, "tensor payload");
        std::vector<Real> data(numel);
        for (auto& v : data) v = static_cast<Real>(std::bit_cast<float>(r.u32("tensor payload")));
        p.entries.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
    }
    if (!r.done())
        throw CheckpointError(Kind::ShapeMismatch, "checkpoint '" + path + "' has trailing bytes");
    try {
        check_params(arch, p);
    } catch (const ShapeError& e) {
        throw CheckpointError(Kind::ShapeMismatch, "checkpoint '" + path + "': " + e.what());
    }
    return p;
}

inline void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    const auto buf = encode_checkpoint(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(buf, path.string());
}

} // namespace dpaat
