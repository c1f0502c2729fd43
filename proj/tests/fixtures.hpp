#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "axdelta.hpp"

namespace fixtures {

// A model small enough for exhaustive checks in unit tests.
inline axdelta::ModelSpec small_spec(std::uint64_t seed = 11, std::size_t layers = 1) {
    axdelta::ModelSpec s;
    s.vocab = 32;
    s.d_model = 16;
    s.n_heads = 2;
    s.d_ff = 24;
    s.n_layers = layers;
    s.seed = seed;
    return s;
}

inline axdelta::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    axdelta::Rng rng(seed);
    axdelta::Matrix m(rows, cols);
    for (float& v : m.values()) v = static_cast<float>(scale * rng.normal());
    return m;
}

inline axdelta::CalibConfig small_calib(std::uint64_t seed = 5) {
    axdelta::CalibConfig c;
    c.train_batches = 6;
    c.val_batches = 2;
    c.batch_size = 2;
    c.seq_len = 8;
    c.seed = seed;
    return c;
}

// Fresh per-test scratch directory under the system temp dir.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("axdelta_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace fixtures
