#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "axdelta/adam.hpp"
#include "axdelta/calibration.hpp"
#include "axdelta/delta_codec.hpp"
#include "axdelta/toy_model.hpp"

namespace axdelta {

enum class SelectBy { End, Layer };

struct FitConfig {
    double learning_rate = 1e-4;
    int epochs = 5;
    AdamConfig adam;
    bool cosine_schedule = true;
    // Rows per optimizer step. 0: the whole train shard when it has at most
    // kFullBatchRows rows, otherwise kAutoMinibatchRows.
    std::size_t minibatch_rows = 0;
    static constexpr std::size_t kFullBatchRows = 4096;
    static constexpr std::size_t kAutoMinibatchRows = 1024;
    // One scale for the whole matrix (the scalar baseline) instead of a vector.
    bool scalar = false;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
    }
};

// Mean |delta| along the broadcast axis, rounded to binary16. With `scalar`
// the mean is over every entry and the result is a constant row vector.
inline AxisScaleVector init_scale(const Matrix& delta, Axis axis, bool scalar = false) {
    std::vector<float> v(axis_length(axis, delta.rows(), delta.cols()), 0.0f);
    if (scalar) {
        double s = 0.0;
        for (float x : delta.values()) s += std::fabs(x);
        const float mean = delta.empty() ? 0.0f : static_cast<float>(s / static_cast<double>(delta.size()));
        std::fill(v.begin(), v.end(), mean);
        return AxisScaleVector::from_float(axis, v);
    }
    if (axis == Axis::Row) {
        for (std::size_t i = 0; i < delta.rows(); ++i) {
            double s = 0.0;
            for (float x : delta.row(i)) s += std::fabs(x);
            v[i] = static_cast<float>(s / static_cast<double>(delta.cols()));
        }
    } else {
        std::vector<double> s(delta.cols(), 0.0);
        for (std::size_t i = 0; i < delta.rows(); ++i) {
            auto r = delta.row(i);
            for (std::size_t j = 0; j < delta.cols(); ++j) s[j] += std::fabs(r[j]);
        }
        for (std::size_t j = 0; j < delta.cols(); ++j) v[j] = static_cast<float>(s[j] / static_cast<double>(delta.rows()));
    }
    return AxisScaleVector::from_float(axis, v);
}

// Layer output-matching loss as a function of the scale vector:
//   L(v) = mean over all entries of (X W_hat(v)^T - Y)^2.
// Everything independent of v is precomputed in double: the residual
// R = Y - X W_b^T and, in row mode, S = X B^T so that the prediction is v_i S[n,i].
class LayerProblem {
public:
    LayerProblem(const Matrix& x, const Matrix& y, const Matrix& base, const PackedSignMask& mask, Axis axis)
        : axis_(axis), rows_(x.rows()), d_out_(mask.d_out()), d_in_(mask.d_in()) {
        if (base.rows() != d_out_ || base.cols() != d_in_ || x.cols() != d_in_ || y.cols() != d_out_ ||
            y.rows() != x.rows()) {
            throw DimensionError("LayerProblem: X" + x.shape_string() + " Y" + y.shape_string() + " base" +
                                 base.shape_string() + " disagree");
        }
        residual_.resize(rows_ * d_out_);
        const Matrix xw = matmul_nt(x, base);
        for (std::size_t k = 0; k < residual_.size(); ++k)
            residual_[k] = static_cast<double>(y.values()[k]) - xw.values()[k];

        signs_.resize(d_out_ * d_in_);
        for (std::size_t i = 0; i < d_out_; ++i)
            for (std::size_t j = 0; j < d_in_; ++j) signs_[i * d_in_ + j] = mask.sign(i, j);

        x_.assign(x.values().begin(), x.values().end());
        if (axis_ == Axis::Row) {
            s_.assign(rows_ * d_out_, 0.0);
            for (std::size_t n = 0; n < rows_; ++n) {
                const double* xr = x_.data() + n * d_in_;
                for (std::size_t i = 0; i < d_out_; ++i) {
                    const double* br = signs_.data() + i * d_in_;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < d_in_; ++j) acc += xr[j] * br[j];
                    s_[n * d_out_ + i] = acc;
                }
            }
        }
    }

    Axis axis() const noexcept { return axis_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t vector_length() const noexcept { return axis_length(axis_, d_out_, d_in_); }

    // Loss over rows [begin, end); grad (if non-empty) receives dL/dv.
    double loss_and_grad(std::span<const float> v, std::size_t begin, std::size_t end,
                         std::span<double> grad) const {
        if (v.size() != vector_length()) throw DimensionError("LayerProblem: vector length mismatch");
        const bool want_grad = !grad.empty();
        if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
        const double count = static_cast<double>((end - begin) * d_out_);
        if (count == 0.0) return 0.0;
        double loss = 0.0;
        if (axis_ == Axis::Row) {
            for (std::size_t n = begin; n < end; ++n) {
                const double* sr = s_.data() + n * d_out_;
                const double* rr = residual_.data() + n * d_out_;
                for (std::size_t i = 0; i < d_out_; ++i) {
                    const double e = v[i] * sr[i] - rr[i];
                    loss += e * e;
                    if (want_grad) grad[i] += e * sr[i];
                }
            }
        } else {
            std::vector<double> xv(d_in_), e(d_out_);
            for (std::size_t n = begin; n < end; ++n) {
                const double* xr = x_.data() + n * d_in_;
                for (std::size_t j = 0; j < d_in_; ++j) xv[j] = xr[j] * v[j];
                const double* rr = residual_.data() + n * d_out_;
                for (std::size_t i = 0; i < d_out_; ++i) {
                    const double* br = signs_.data() + i * d_in_;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < d_in_; ++j) acc += xv[j] * br[j];
                    e[i] = acc - rr[i];
                    loss += e[i] * e[i];
                }
                if (want_grad) {
                    for (std::size_t i = 0; i < d_out_; ++i) {
                        const double* br = signs_.data() + i * d_in_;
                        const double ei = e[i];
                        for (std::size_t j = 0; j < d_in_; ++j) grad[j] += ei * br[j] * xr[j];
                    }
                }
            }
        }
        if (want_grad)
            for (double& g : grad) g *= 2.0 / count;
        return loss / count;
    }

    double loss(std::span<const float> v) const { return loss_and_grad(v, 0, rows_, {}); }

private:
    Axis axis_;
    std::size_t rows_, d_out_, d_in_;
    std::vector<double> residual_;
    std::vector<double> signs_;
    std::vector<double> x_;
    std::vector<double> s_;
};

inline double layer_mse(const Matrix& x, const Matrix& y, const Matrix& base, const PackedSignMask& mask,
                        Axis axis, std::span<const float> v) {
    return LayerProblem(x, y, base, mask, axis).loss(v);
}

struct VectorFit {
    Axis axis = Axis::Row;
    std::vector<float> values;        // FP32, as trained
    std::vector<double> loss_curve;   // mean minibatch loss per epoch
    double train_mse = 0.0;
    double val_mse = 0.0;

    AxisScaleVector to_half() const { return AxisScaleVector::from_float(axis, values); }
};

// Trains the scale vector on the cache's train shard with AdamW on the layer
// MSE, then reports the MSE on the validation shard. Base and mask are not
// modified. In scalar mode every component of `init` must be equal and the
// components move together.
inline VectorFit fit_layer_vector(const CalibCache& cache, const Matrix& base, const PackedSignMask& mask,
                                  Axis axis, std::span<const float> init, const FitConfig& cfg) {
    cfg.validate();
    const LayerProblem train(cache.x_train, cache.y_train, base, mask, axis);
    if (init.size() != train.vector_length()) throw DimensionError("fit_layer_vector: init length mismatch");

    VectorFit fit;
    fit.axis = axis;
    fit.values.assign(init.begin(), init.end());

    std::size_t step_rows = cfg.minibatch_rows;
    if (step_rows == 0) {
        step_rows = train.rows() <= FitConfig::kFullBatchRows ? train.rows() : FitConfig::kAutoMinibatchRows;
    }
    if (step_rows == 0 || step_rows > train.rows()) step_rows = train.rows();
    const std::size_t n_mini = train.rows() == 0 ? 0 : (train.rows() + step_rows - 1) / step_rows;
    const long total_steps = static_cast<long>(n_mini) * cfg.epochs;

    const std::size_t n_params = cfg.scalar ? 1 : fit.values.size();
    AdamW opt(n_params, cfg.adam);
    std::vector<double> grad(fit.values.size());
    std::vector<double> scalar_grad(1);
    std::vector<float> scalar_param(1);
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t mb = 0; mb < n_mini; ++mb) {
            const std::size_t begin = mb * step_rows;
            const std::size_t end = std::min(train.rows(), begin + step_rows);
            const double loss = train.loss_and_grad(fit.values, begin, end, grad);
            if (!std::isfinite(loss)) {
                throw DivergenceError("layer fit diverged in epoch " + std::to_string(epoch + 1) + " (" +
                                          cache.layer + ")",
                                      epoch + 1);
            }
            epoch_loss += loss;
            const double lr = cfg.cosine_schedule ? cosine_lr(cfg.learning_rate, step, total_steps)
                                                  : cfg.learning_rate;
            if (cfg.scalar) {
                scalar_grad[0] = 0.0;
                for (double g : grad) scalar_grad[0] += g;
                scalar_param[0] = fit.values.empty() ? 0.0f : fit.values[0];
                opt.step(scalar_param, scalar_grad, lr);
                std::fill(fit.values.begin(), fit.values.end(), scalar_param[0]);
            } else {
                opt.step(fit.values, grad, lr);
            }
            ++step;
        }
        fit.loss_curve.push_back(n_mini ? epoch_loss / static_cast<double>(n_mini) : 0.0);
    }
    fit.train_mse = train.loss(fit.values);
    fit.val_mse = layer_mse(cache.x_val, cache.y_val, base, mask, axis, fit.values);
    if (!std::isfinite(fit.train_mse) || !std::isfinite(fit.val_mse)) {
        throw DivergenceError("layer fit produced a non-finite loss (" + cache.layer + ")", cfg.epochs);
    }
    return fit;
}

struct OracleOptions {
    bool allow_ridge = true;
    double ridge = 1e-8;
    bool scalar = false;
};

// Exact minimizer of the layer MSE over v (the loss is quadratic in v).
// Computed directly from X, Y, W_b and B in double precision, sharing no code
// with LayerProblem. Row mode decouples into one scalar problem per output
// unit; col mode solves the d_in x d_in normal equations
//   G[j,k] = (X^T X)[j,k] * (B^T B)[j,k],  rhs[j] = sum_n X[n,j] (R B)[n,j].
// Scalar mode returns the best constant vector for `axis`.
inline std::vector<double> closed_form_oracle(const Matrix& x, const Matrix& y, const Matrix& base,
                                              const PackedSignMask& mask, Axis axis,
                                              const OracleOptions& opt = {}) {
    const std::size_t n = x.rows(), d_in = mask.d_in(), d_out = mask.d_out();
    if (base.rows() != d_out || base.cols() != d_in || x.cols() != d_in || y.cols() != d_out || y.rows() != n) {
        throw DimensionError("closed_form_oracle: shapes disagree");
    }
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Mat X(n, d_in), Y(n, d_out), Wb(d_out, d_in), B(d_out, d_in);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d_in; ++j) X(r, j) = x(r, j);
        for (std::size_t i = 0; i < d_out; ++i) Y(r, i) = y(r, i);
    }
    for (std::size_t i = 0; i < d_out; ++i)
        for (std::size_t j = 0; j < d_in; ++j) {
            Wb(i, j) = base(i, j);
            B(i, j) = mask.sign(i, j);
        }
    const Mat R = Y - X * Wb.transpose();
    const std::size_t len = axis_length(axis, d_out, d_in);

    if (opt.scalar) {
        // Constant v: prediction is alpha * X B^T on either axis.
        const Mat S = X * B.transpose();
        const double num = (R.array() * S.array()).sum();
        const double den = S.array().square().sum();
        if (den == 0.0) {
            if (!opt.allow_ridge) throw NumericError("closed_form_oracle: singular scalar problem");
            return std::vector<double>(len, 0.0);
        }
        return std::vector<double>(len, num / den);
    }

    std::vector<double> v(len, 0.0);
    if (axis == Axis::Row) {
        const Mat S = X * B.transpose();
        for (std::size_t i = 0; i < d_out; ++i) {
            const double num = R.col(static_cast<Eigen::Index>(i)).dot(S.col(static_cast<Eigen::Index>(i)));
            double den = S.col(static_cast<Eigen::Index>(i)).squaredNorm();
            if (den == 0.0) {
                if (!opt.allow_ridge) throw NumericError("closed_form_oracle: singular row " + std::to_string(i));
                den = opt.ridge;
            }
            v[i] = num / den;
        }
        return v;
    }
    Mat G = (X.transpose() * X).cwiseProduct(B.transpose() * B);
    const Eigen::VectorXd rhs = (X.cwiseProduct(R * B)).colwise().sum().transpose();
    Eigen::LLT<Mat> llt(G);
    if (llt.info() != Eigen::Success) {
        if (!opt.allow_ridge) throw NumericError("closed_form_oracle: singular column normal equations");
        G.diagonal().array() += opt.ridge;
        llt.compute(G);
        if (llt.info() != Eigen::Success) throw NumericError("closed_form_oracle: ridge did not regularize");
    }
    const Eigen::VectorXd sol = llt.solve(rhs);
    for (std::size_t j = 0; j < d_in; ++j) v[j] = sol(static_cast<Eigen::Index>(j));
    return v;
}

inline std::vector<double> closed_form_oracle(const CalibCache& cache, const Matrix& base,
                                              const PackedSignMask& mask, Axis axis,
                                              const OracleOptions& opt = {}) {
    return closed_form_oracle(cache.x_train, cache.y_train, base, mask, axis, opt);
}

inline std::vector<float> to_float_vector(std::span<const double> v) {
    return {v.begin(), v.end()};
}

// ---------------------------------------------------------------------------
// End-to-end loss

// Teacher logits computed once per batch, with the batches they belong to.
struct TeacherLogits {
    std::vector<TokenBatch> batches;
    std::vector<Matrix> logits;
};

inline TeacherLogits cache_teacher_logits(const ToyModel& teacher, const std::vector<TokenBatch>& batches) {
    TeacherLogits t;
    t.batches = batches;
    t.logits.reserve(batches.size());
    for (const auto& b : batches) t.logits.push_back(forward(teacher, b).logits);
    return t;
}

// Mean over batches of the summed squared logit difference. `batches` must be
// the same batches, in the same order, that the teacher logits were cached for.
inline double end_loss(const ToyModel& student, const TeacherLogits& teacher,
                       const std::vector<TokenBatch>& batches) {
    if (batches.size() != teacher.batches.size()) {
        throw InputError("end_loss: " + std::to_string(batches.size()) + " batches but " +
                         std::to_string(teacher.batches.size()) + " cached teacher logits");
    }
    if (batches.empty()) throw InputError("end_loss: no batches");
    double total = 0.0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
        if (batches[i].ids != teacher.batches[i].ids) {
            throw InputError("end_loss: batch " + std::to_string(i) + " is not aligned with cached teacher logits");
        }
        const Matrix logits = forward(student, batches[i]).logits;
        total += frobenius_distance_sq(logits, teacher.logits[i]);
    }
    return total / static_cast<double>(batches.size());
}

inline double end_loss(const ToyModel& student, const TeacherLogits& teacher) {
    return end_loss(student, teacher, teacher.batches);
}

// ---------------------------------------------------------------------------
// Compressed student

struct CompressedLayer {
    PackedSignMask mask;
    Axis axis = Axis::Row;
    std::vector<float> values;  // FP32 while training
    bool scalar = false;

    AxisScaleVector to_half() const { return AxisScaleVector::from_float(axis, values); }
};

// A student initialized from the base model. Compressed layers carry their own
// mask and vector; their dense weights in `model` are kept equal to
// reconstruct(base, mask, values).
class CompressedStudent {
public:
    explicit CompressedStudent(ToyModel base) : base_(base), model_(std::move(base)) {}

    const ToyModel& model() const noexcept { return model_; }
    const ToyModel& base() const noexcept { return base_; }
    const std::map<std::string, CompressedLayer>& layers() const noexcept { return layers_; }
    std::map<std::string, CompressedLayer>& mutable_layers() noexcept { return layers_; }

    void install(const std::string& name, CompressedLayer layer) {
        layers_[name] = std::move(layer);
        refresh(name);
    }

    void refresh(const std::string& name) {
        const CompressedLayer& l = layers_.at(name);
        model_.weight(name) = reconstruct(base_.weight(name), l.mask, l.axis, l.values);
    }

    void refresh_all() {
        for (const auto& [name, _] : layers_) refresh(name);
    }

    // Rounds every vector to binary16 and reinstalls it.
    void round_to_half() {
        for (auto& [_, l] : layers_)
            for (float& v : l.values) v = round_through_half(v);
        refresh_all();
    }

private:
    ToyModel base_;
    ToyModel model_;
    std::map<std::string, CompressedLayer> layers_;
};

struct LayerFitResult {
    std::string layer;
    Axis chosen = Axis::Row;
    bool scalar = false;
    std::vector<float> values;
    std::vector<double> loss_curve_row, loss_curve_col;
    double val_mse_row = std::numeric_limits<double>::quiet_NaN();
    double val_mse_col = std::numeric_limits<double>::quiet_NaN();
    double end_loss_row = std::numeric_limits<double>::quiet_NaN();
    double end_loss_col = std::numeric_limits<double>::quiet_NaN();
};

// Compresses one layer of the student: builds the calibration cache against
// the current (partially compressed) student, fits col and row vectors from
// mean-|delta| initializations, scores each candidate installed in the
// student, and keeps the winner (ties go to row). Scalar mode fits a single
// constant and skips the axis comparison.
inline LayerFitResult compress_layer(const ToyModel& teacher, CompressedStudent& student,
                                     const std::string& layer, const FitConfig& cfg,
                                     const CalibrationSet& data, const TeacherLogits& val_logits,
                                     SelectBy select_by = SelectBy::End, const CalibCache* prebuilt = nullptr) {
    const CalibCache cache = prebuilt ? *prebuilt : build_cache(teacher, student.model(), layer, data);
    const Matrix& base_w = student.base().weight(layer);
    const Matrix delta = subtract(teacher.weight(layer), base_w);
    const PackedSignMask mask = sign_mask(delta);

    LayerFitResult result;
    result.layer = layer;
    result.scalar = cfg.scalar;

    auto fit_axis = [&](Axis axis) {
        const std::vector<float> init = init_scale(delta, axis, cfg.scalar).to_float();
        return fit_layer_vector(cache, base_w, mask, axis, init, cfg);
    };
    auto score = [&](const VectorFit& f) {
        student.install(layer, CompressedLayer{mask, f.axis, f.values, cfg.scalar});
        return end_loss(student.model(), val_logits, data.val);
    };

    if (cfg.scalar) {
        VectorFit f = fit_axis(Axis::Row);
        result.loss_curve_row = f.loss_curve;
        result.val_mse_row = f.val_mse;
        result.end_loss_row = score(f);
        result.chosen = Axis::Row;
        result.values = f.values;
        return result;
    }

    VectorFit col = fit_axis(Axis::Col);
    result.loss_curve_col = col.loss_curve;
    result.val_mse_col = col.val_mse;
    result.end_loss_col = score(col);

    VectorFit row = fit_axis(Axis::Row);
    result.loss_curve_row = row.loss_curve;
    result.val_mse_row = row.val_mse;
    result.end_loss_row = score(row);

    const bool pick_row = select_by == SelectBy::End ? result.end_loss_row <= result.end_loss_col
                                                     : result.val_mse_row <= result.val_mse_col;
    const VectorFit& winner = pick_row ? row : col;
    result.chosen = winner.axis;
    result.values = winner.values;
    student.install(layer, CompressedLayer{mask, winner.axis, winner.values, false});
    return result;
}

// ---------------------------------------------------------------------------
// End-to-end refinement

struct E2EConfig {
    int epochs = 5;
    double learning_rate = 1e-4;
    std::size_t batches = 150;
    AdamConfig adam;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("e2e learning rate must be > 0");
        if (epochs < 0) throw ConfigError("e2e epochs must be >= 0");
    }
};

struct E2EResult {
    double initial_train_loss = 0.0;
    double final_train_loss = 0.0;
    std::vector<double> epoch_losses;  // mean batch loss seen during each epoch
};

// dL/dv for one compressed layer from dL/dW_hat.
inline std::vector<double> scale_gradient(const CompressedLayer& l, const Matrix& dw) {
    const std::size_t d_out = l.mask.d_out(), d_in = l.mask.d_in();
    std::vector<double> g(l.values.size(), 0.0);
    for (std::size_t i = 0; i < d_out; ++i) {
        auto r = dw.row(i);
        for (std::size_t j = 0; j < d_in; ++j) {
            const double c = l.mask.positive(i, j) ? r[j] : -static_cast<double>(r[j]);
            g[l.axis == Axis::Row ? i : j] += c;
        }
    }
    if (l.scalar) {
        double s = 0.0;
        for (double x : g) s += x;
        std::fill(g.begin(), g.end(), s);
    }
    return g;
}

// Jointly trains every compressed layer's vector to match teacher logits with
// loss ||logits - teacher_logits||^2 per batch. Masks and base weights stay frozen.
inline E2EResult e2e_refine(CompressedStudent& student, const TeacherLogits& train, const E2EConfig& cfg) {
    cfg.validate();
    E2EResult res;
    res.initial_train_loss = end_loss(student.model(), train);
    if (cfg.epochs == 0 || student.layers().empty()) {
        res.final_train_loss = res.initial_train_loss;
        return res;
    }

    struct Slot {
        std::string name;
        LayerId id;
        AdamW opt;
    };
    std::vector<Slot> slots;
    for (const auto& [name, l] : student.layers()) {
        slots.push_back({name, parse_layer_name(name, student.model().blocks.size()),
                         AdamW(l.scalar ? 1 : l.values.size(), cfg.adam)});
    }

    std::vector<float> scalar_param(1);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < train.batches.size(); ++b) {
            ForwardTrace trace;
            const Matrix logits = forward(student.model(), train.batches[b], {}, &trace).logits;
            Matrix dlogits(logits.rows(), logits.cols());
            double loss = 0.0;
            for (std::size_t k = 0; k < logits.size(); ++k) {
                const float d = logits.values()[k] - train.logits[b].values()[k];
                loss += static_cast<double>(d) * d;
                dlogits.values()[k] = 2.0f * d;
            }
            if (!std::isfinite(loss)) {
                throw DivergenceError("end-to-end refinement diverged in epoch " + std::to_string(epoch + 1),
                                      epoch + 1);
            }
            epoch_loss += loss;
            const auto grads = backward(student.model(), trace, dlogits);
            for (auto& slot : slots) {
                CompressedLayer& l = student.mutable_layers().at(slot.name);
                const auto& dw = grads[slot.id.block][static_cast<std::size_t>(slot.id.proj)];
                const std::vector<double> g = scale_gradient(l, dw);
                if (l.scalar) {
                    scalar_param[0] = l.values.empty() ? 0.0f : l.values[0];
                    const double g0 = g.empty() ? 0.0 : g[0];
                    slot.opt.step(scalar_param, std::span<const double>(&g0, 1), cfg.learning_rate);
                    std::fill(l.values.begin(), l.values.end(), scalar_param[0]);
                } else {
                    slot.opt.step(l.values, g, cfg.learning_rate);
                }
                student.refresh(slot.name);
            }
        }
        res.epoch_losses.push_back(epoch_loss / static_cast<double>(train.batches.size()));
    }
    res.final_train_loss = end_loss(student.model(), train);
    if (!std::isfinite(res.final_train_loss)) {
        throw DivergenceError("end-to-end refinement produced a non-finite loss", cfg.epochs);
    }
    return res;
}

}  // namespace axdelta
