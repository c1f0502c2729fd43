#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "axdelta/artifact.hpp"
#include "axdelta/calibration.hpp"
#include "axdelta/report.hpp"
#include "axdelta/scale_fit.hpp"

namespace axdelta {

struct PipelineConfig {
    CalibConfig calib;   // per-layer caches: 50 train batches by default
    FitConfig fit;       // per-layer vectors: lr 1e-4, 5 epochs
    E2EConfig e2e;       // joint refinement: 150 batches, lr 1e-4, 5 epochs
    SelectBy select_by = SelectBy::End;
    std::uint64_t seed = 0;
    // Externally supplied calibration sequences. When set they replace the
    // synthetic batches: per-layer train, then validation, then e2e batches.
    std::optional<std::vector<std::vector<std::uint32_t>>> token_sequences;
    // Caches with more rows than spill_row_budget are written to cache_dir
    // (TNC1, entries "<layer>.X_train" ...). Empty dir disables spilling.
    std::string cache_dir;
    std::size_t spill_row_budget = 0;
};

// The single-scalar-per-matrix baseline: same pipeline, one epoch for both stages.
inline PipelineConfig scalar_baseline(PipelineConfig cfg) {
    cfg.fit.scalar = true;
    cfg.fit.epochs = 1;
    cfg.e2e.epochs = 1;
    return cfg;
}

struct PipelineData {
    CalibrationSet calib;
    std::vector<TokenBatch> e2e_train;
};

inline PipelineData make_pipeline_data(const PipelineConfig& cfg, std::size_t vocab) {
    PipelineData d;
    CalibConfig calib = cfg.calib;
    calib.seed = derive_seed(cfg.seed, 1);
    if (cfg.token_sequences) {
        auto batches = batches_from_sequences(*cfg.token_sequences, calib.batch_size);
        const std::size_t t = calib.train_batches, e = calib.resolved_val_batches(), k = cfg.e2e.batches;
        if (batches.size() < t + e + k) {
            throw InputError("calibration file provides " + std::to_string(batches.size()) + " batches, pipeline needs " +
                             std::to_string(t + e + k));
        }
        for (auto id_batch : batches)
            for (auto id : id_batch.ids)
                if (id >= vocab) throw InputError("calibration token " + std::to_string(id) + " out of range");
        auto at = [&](std::size_t i) { return batches.begin() + static_cast<std::ptrdiff_t>(i); };
        d.calib.train.assign(at(0), at(t));
        d.calib.val.assign(at(t), at(t + e));
        d.e2e_train.assign(at(t + e), at(t + e + k));
        return d;
    }
    d.calib = make_calibration_set(calib, vocab);
    d.e2e_train = synthetic_batches(cfg.e2e.batches, calib.batch_size, calib.seq_len, vocab, derive_seed(cfg.seed, 2));
    return d;
}

struct PipelineResult {
    Digest base_fingerprint{};
    std::vector<DeltaLayerRecord> records;
    PipelineReport report;
    std::vector<LayerFitResult> layer_fits;
    E2EResult e2e;
    ToyModel student;  // final model, binary16 vectors installed
};

inline void check_compatible(const ToyModel& a, const ToyModel& b) {
    const auto& x = a.spec;
    const auto& y = b.spec;
    if (x.vocab != y.vocab || x.d_model != y.d_model || x.n_heads != y.n_heads || x.d_ff != y.d_ff ||
        x.n_layers != y.n_layers) {
        throw DimensionError("base and fine-tuned checkpoints have different architectures");
    }
}

// Cache -> per-layer compress (in layer order, so each cache sees the
// already-compressed stack below it) -> joint e2e refinement -> records.
inline PipelineResult run_pipeline(const ToyModel& base, const ToyModel& finetuned, const PipelineConfig& cfg) {
    check_compatible(base, finetuned);
    cfg.fit.validate();
    cfg.e2e.validate();
    const PipelineData data = make_pipeline_data(cfg, base.spec.vocab);

    PipelineResult out;
    out.base_fingerprint = container_fingerprint(to_container(base));
    const TeacherLogits val_logits = cache_teacher_logits(finetuned, data.calib.val);

    CompressedStudent student(base);
    out.report.summary.base_end_loss = end_loss(student.model(), val_logits);

    for (const std::string& name : linear_layer_names(base)) {
        CalibCache cache = build_cache(finetuned, student.model(), name, data.calib);
        if (!cfg.cache_dir.empty() && cache.x_train.rows() + cache.x_val.rows() > cfg.spill_row_budget) {
            std::filesystem::create_directories(cfg.cache_dir);
            write_cache((std::filesystem::path(cfg.cache_dir) / (name + ".tnc")).string(), cache);
        }
        out.layer_fits.push_back(
            compress_layer(finetuned, student, name, cfg.fit, data.calib, val_logits, cfg.select_by, &cache));
        out.report.layers.push_back(to_report_record(out.layer_fits.back()));
    }
    out.report.summary.pre_e2e_end_loss = end_loss(student.model(), val_logits);

    const TeacherLogits train_logits = cache_teacher_logits(finetuned, data.e2e_train);
    out.e2e = e2e_refine(student, train_logits, cfg.e2e);
    out.report.summary.e2e_train_initial = out.e2e.initial_train_loss;
    out.report.summary.e2e_train_final = out.e2e.final_train_loss;

    student.round_to_half();
    out.report.summary.final_end_loss = end_loss(student.model(), val_logits);

    for (const std::string& name : linear_layer_names(base)) {
        const CompressedLayer& l = student.layers().at(name);
        out.records.push_back({name, l.mask, l.to_half()});
    }
    out.student = student.model();
    return out;
}

}  // namespace axdelta
