#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "axdelta/container.hpp"
#include "axdelta/toy_model.hpp"

namespace axdelta {

struct CalibConfig {
    std::size_t train_batches = 50;
    std::size_t val_batches = 0;  // 0 selects ceil(train_batches / 4)
    std::size_t batch_size = 1;
    std::size_t seq_len = 32;
    std::uint64_t seed = 0;

    std::size_t resolved_val_batches() const {
        return val_batches != 0 ? val_batches : (train_batches + 3) / 4;
    }
    void validate() const {
        if (train_batches < 1) throw ConfigError("calibration needs at least one train batch");
        if (batch_size < 1 || seq_len < 1) throw ConfigError("batch size and sequence length must be >= 1");
    }
};

// Token batches used to build caches: `train` feeds the fit, `val` the
// held-out loss and axis selection.
struct CalibrationSet {
    std::vector<TokenBatch> train;
    std::vector<TokenBatch> val;
};

inline CalibrationSet make_calibration_set(const CalibConfig& cfg, std::size_t vocab) {
    cfg.validate();
    const std::size_t total = cfg.train_batches + cfg.resolved_val_batches();
    auto all = synthetic_batches(total, cfg.batch_size, cfg.seq_len, vocab, cfg.seed);
    CalibrationSet set;
    set.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.train_batches));
    set.val.assign(all.begin() + static_cast<std::ptrdiff_t>(cfg.train_batches), all.end());
    return set;
}

// Uses the first train_batches batches from a token file for training and the
// next resolved_val_batches() for validation.
inline CalibrationSet calibration_set_from_sequences(const std::vector<std::vector<std::uint32_t>>& seqs,
                                                     const CalibConfig& cfg) {
    cfg.validate();
    auto batches = batches_from_sequences(seqs, cfg.batch_size);
    const std::size_t need = cfg.train_batches + cfg.resolved_val_batches();
    if (batches.size() < need) {
        throw InputError("calibration data has " + std::to_string(batches.size()) + " batches, need " +
                         std::to_string(need));
    }
    CalibrationSet set;
    set.train.assign(batches.begin(), batches.begin() + static_cast<std::ptrdiff_t>(cfg.train_batches));
    set.val.assign(batches.begin() + static_cast<std::ptrdiff_t>(cfg.train_batches),
                   batches.begin() + static_cast<std::ptrdiff_t>(need));
    return set;
}

struct CalibCache {
    std::string layer;
    Matrix x_train, y_train;
    Matrix x_val, y_val;
};

namespace detail {

inline std::pair<Matrix, Matrix> collect_pairs(const ToyModel& teacher, const ToyModel& student,
                                               const std::string& layer,
                                               const std::vector<TokenBatch>& batches) {
    const std::vector<TapPoint> teacher_tap{{layer, CaptureMode::Output}};
    const std::vector<TapPoint> student_tap{{layer, CaptureMode::Input}};
    std::vector<Matrix> xs, ys;
    xs.reserve(batches.size());
    ys.reserve(batches.size());
    for (const auto& b : batches) {
        auto t = forward(teacher, b, teacher_tap, nullptr, false);
        auto s = forward(student, b, student_tap, nullptr, false);
        ys.push_back(std::move(t.captures.begin()->second));
        xs.push_back(std::move(s.captures.begin()->second));
    }
    return {vstack(xs), vstack(ys)};
}

}  // namespace detail

// Runs teacher and student in lockstep over the same batches. Y holds the
// teacher's layer output; X holds the student's layer input, so it reflects
// whatever layers below have already been compressed in the student.
inline CalibCache build_cache(const ToyModel& teacher, const ToyModel& student, const std::string& layer,
                              const CalibrationSet& data) {
    parse_layer_name(layer, teacher.blocks.size());
    parse_layer_name(layer, student.blocks.size());
    if (data.train.empty() || data.val.empty()) {
        throw InputError("calibration data source is empty (train " + std::to_string(data.train.size()) +
                         " batches, val " + std::to_string(data.val.size()) + ")");
    }
    CalibCache c;
    c.layer = layer;
    std::tie(c.x_train, c.y_train) = detail::collect_pairs(teacher, student, layer, data.train);
    std::tie(c.x_val, c.y_val) = detail::collect_pairs(teacher, student, layer, data.val);
    return c;
}

struct Shard {
    Matrix x, y;
};

// Contiguous split: the first floor(rows * fraction) rows train, the rest validate.
inline std::pair<Shard, Shard> split_shards(const Matrix& x, const Matrix& y, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in (0, 1)");
    if (x.rows() != y.rows()) throw DimensionError("split_shards: X and Y row counts differ");
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(x.rows()) * fraction + 1e-9));
    if (n_train == 0 || n_train == x.rows()) {
        throw ConfigError("split of " + std::to_string(x.rows()) + " rows at " + std::to_string(fraction) +
                          " leaves an empty shard");
    }
    return {Shard{slice_rows(x, 0, n_train), slice_rows(y, 0, n_train)},
            Shard{slice_rows(x, n_train, x.rows()), slice_rows(y, n_train, y.rows())}};
}

// Cache spill files use the tensor container format with entries
// "<layer>.X_train", "<layer>.Y_train", "<layer>.X_val", "<layer>.Y_val".
inline void write_cache(const std::string& path, const CalibCache& c) {
    TensorContainer tc;
    tc.add(c.layer + ".X_train", c.x_train);
    tc.add(c.layer + ".Y_train", c.y_train);
    tc.add(c.layer + ".X_val", c.x_val);
    tc.add(c.layer + ".Y_val", c.y_val);
    write_container(path, tc);
}

inline CalibCache read_cache(const std::string& path, const std::string& layer) {
    const TensorContainer tc = read_container(path);
    CalibCache c;
    c.layer = layer;
    c.x_train = tc.at(layer + ".X_train");
    c.y_train = tc.at(layer + ".Y_train");
    c.x_val = tc.at(layer + ".X_val");
    c.y_val = tc.at(layer + ".Y_val");
    return c;
}

}  // namespace axdelta
