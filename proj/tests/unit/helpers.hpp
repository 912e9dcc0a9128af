#pragma once

#include <filesystem>
#include <string>

#include <dpaat/dpaat.hpp>

namespace testutil {

inline dpaat::Tensor random_tensor(dpaat::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
    dpaat::Tensor t(std::move(shape));
    dpaat::Rng r(seed);
    for (auto& v : t.data()) v = static_cast<dpaat::Real>(r.uniform(lo, hi));
    return t;
}

inline dpaat::Tensor random_probs(std::size_t n, std::size_t c, dpaat::Rng& r) {
    dpaat::Tensor t({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < c; ++k) s += (t.at(i, k) = static_cast<dpaat::Real>(r.uniform() + 1e-3));
        for (std::size_t k = 0; k < c; ++k) t.at(i, k) /= static_cast<dpaat::Real>(s);
    }
    return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("dpaat_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace testutil
