#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cirsynth/embedding.hpp"
#include "cirsynth/encoders.hpp"
#include "cirsynth/error.hpp"

namespace testing {

/// Runs `expr` and checks it throws cirsynth::Error with `code`.
#define CHECK_THROWS_CODE(expr, expected)                               \
    do {                                                                \
        bool thrown_ = false;                                           \
        try {                                                           \
            (void)(expr);                                               \
        } catch (const cirsynth::Error& e_) {                           \
            thrown_ = true;                                             \
            CHECK_MESSAGE(e_.code() == (expected), e_.what());          \
        }                                                               \
        CHECK_MESSAGE(thrown_, "expected cirsynth::Error from " #expr); \
    } while (0)

inline std::vector<double> gaussian(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    return v;
}

inline cirsynth::UnitVector random_unit(std::mt19937_64& rng, std::size_t dim) {
    return cirsynth::l2_normalize(cirsynth::EmbeddingVector(gaussian(rng, dim)));
}

inline cirsynth::UnitVector unit(std::vector<double> v) {
    return cirsynth::l2_normalize(cirsynth::EmbeddingVector(std::move(v)));
}

inline cirsynth::Vec random_vec(std::mt19937_64& rng, std::size_t dim) {
    const auto g = gaussian(rng, dim);
    return Eigen::Map<const cirsynth::Vec>(g.data(), static_cast<Eigen::Index>(dim));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("cirsynth-" + tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
