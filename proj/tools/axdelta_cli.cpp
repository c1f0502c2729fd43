// axdelta: compress a fine-tuned checkpoint into a 1-bit sign delta with
// per-axis FP16 scales, apply it onto the base, and inspect the result.
//
// Exit codes: 0 success, 2 usage, 3 data/fingerprint, 4 numeric divergence.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "axdelta.hpp"

namespace {

using namespace axdelta;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::uint64_t default_seed() {
    if (const char* s = std::getenv("AXDELTA_SEED")) return std::strtoull(s, nullptr, 10);
    return 0;
}

ToyModel load_model(const std::string& path) { return from_container(read_container(path)); }

std::string default_report_path(const std::string& artifact) {
    std::filesystem::path p(artifact);
    p.replace_extension(".report");
    return p.string();
}

struct CalibFlags {
    std::string calib_file;
    std::size_t calib_train = 50;
    std::size_t calib_e2e = 150;
    std::size_t batch_size = 1;
    std::size_t seq_len = 32;
    std::uint64_t seed = default_seed();

    void add_to(CLI::App* cmd) {
        cmd->add_option("--calib", calib_file, "Token file, one space-separated sequence per line")
            ->check(CLI::ExistingFile);
        cmd->add_option("--calib-train", calib_train, "Calibration batches for per-layer fitting")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--calib-e2e", calib_e2e, "Calibration batches for end-to-end refinement")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--batch-size", batch_size, "Sequences per calibration batch")->check(CLI::PositiveNumber);
        cmd->add_option("--seq-len", seq_len, "Tokens per synthetic sequence")->check(CLI::PositiveNumber);
        cmd->add_option("--seed", seed, "Seed (default: $AXDELTA_SEED or 0)");
    }

    PipelineConfig to_config() const {
        PipelineConfig cfg;
        cfg.calib.train_batches = calib_train;
        cfg.calib.batch_size = batch_size;
        cfg.calib.seq_len = seq_len;
        cfg.e2e.batches = calib_e2e;
        cfg.seed = seed;
        if (!calib_file.empty()) cfg.token_sequences = read_token_file(calib_file);
        return cfg;
    }
};

void print_axis_stats(const AxisStats& st, bool json) {
    if (json) {
        nlohmann::ordered_json j;
        for (const auto& [sub, c] : st.by_sub_type) j["sub_types"][sub] = {{"row", c.row}, {"col", c.col}};
        j["depths"] = nlohmann::ordered_json::array();
        for (const auto& [depth, axes] : st.by_depth) {
            nlohmann::ordered_json d;
            d["depth"] = depth;
            for (const auto& [sub, axis] : axes) d["axes"][sub] = to_string(axis);
            j["depths"].push_back(d);
        }
        j["total"] = {{"row", st.total.row}, {"col", st.total.col}};
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::printf("%-12s %5s %5s\n", "sub_type", "row", "col");
    for (const auto& [sub, c] : st.by_sub_type) std::printf("%-12s %5zu %5zu\n", sub.c_str(), c.row, c.col);
    std::printf("%-12s %5zu %5zu\n", "total", st.total.row, st.total.col);
    for (const auto& [depth, axes] : st.by_depth) {
        std::printf("depth %zu:", depth);
        for (const auto& [sub, axis] : axes) std::printf(" %s=%s", sub.c_str(), to_string(axis));
        std::printf("\n");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"1-bit sign deltas with per-axis FP16 scales"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a toy base model and a synthetic fine-tune");
    std::string synth_base, synth_ft, synth_ft16, synth_axis = "row";
    ModelSpec spec;
    DeltaProfile profile;
    std::uint64_t synth_seed = default_seed();
    synth->add_option("--out-base", synth_base, "Base container path")->required();
    synth->add_option("--out-finetuned", synth_ft, "Fine-tuned container path")->required();
    synth->add_option("--out-finetuned-fp16", synth_ft16, "Also write the fine-tune as an FP16 (TNH1) checkpoint");
    synth->add_option("--axis", synth_axis, "Delta anisotropy")->check(CLI::IsMember({"row", "col", "isotropic"}));
    synth->add_option("--magnitude", profile.magnitude, "Largest per-axis delta scale")->check(CLI::NonNegativeNumber);
    synth->add_option("--jitter", profile.jitter, "Per-entry log-normal jitter")->check(CLI::NonNegativeNumber);
    synth->add_option("--vocab", spec.vocab)->check(CLI::PositiveNumber);
    synth->add_option("--d-model", spec.d_model)->check(CLI::PositiveNumber);
    synth->add_option("--heads", spec.n_heads)->check(CLI::PositiveNumber);
    synth->add_option("--d-ff", spec.d_ff)->check(CLI::PositiveNumber);
    synth->add_option("--layers", spec.n_layers)->check(CLI::PositiveNumber);
    synth->add_option("--seed", synth_seed, "Seed (default: $AXDELTA_SEED or 0)");

    // compress
    auto* compress = app.add_subcommand("compress", "Compress a fine-tuned checkpoint against its base");
    std::string c_base, c_ft, c_out, c_report, c_select = "end", c_cache_dir;
    CalibFlags c_calib;
    double c_lr = 1e-4, c_e2e_lr = 1e-4;
    int c_epochs = 5, c_e2e_epochs = 5;
    bool c_scalar = false;
    compress->add_option("--base", c_base, "Base container (TNC1)")->required()->check(CLI::ExistingFile);
    compress->add_option("--finetuned", c_ft, "Fine-tuned container (TNC1)")->required()->check(CLI::ExistingFile);
    compress->add_option("--out", c_out, "Delta artifact path")->required();
    compress->add_option("--report", c_report, "Layer report path (default: <out> with a .report extension)");
    auto* lr_opt = compress->add_option("--lr", c_lr, "Per-layer learning rate")->check(CLI::PositiveNumber);
    auto* epochs_opt = compress->add_option("--epochs", c_epochs, "Per-layer epochs")->check(CLI::PositiveNumber);
    compress->add_option("--e2e-lr", c_e2e_lr, "End-to-end learning rate")->check(CLI::PositiveNumber);
    auto* e2e_epochs_opt =
        compress->add_option("--e2e-epochs", c_e2e_epochs, "End-to-end epochs")->check(CLI::NonNegativeNumber);
    compress->add_option("--select-by", c_select, "Axis selection criterion")->check(CLI::IsMember({"end", "layer"}));
    compress->add_flag("--scalar-baseline", c_scalar, "One scale per matrix, one epoch per stage");
    compress->add_option("--cache-dir", c_cache_dir, "Write calibration caches here");
    c_calib.add_to(compress);
    (void)lr_opt;

    // apply
    auto* apply = app.add_subcommand("apply", "Apply a delta artifact onto its base");
    std::string a_base, a_art, a_out;
    bool a_skip = false;
    apply->add_option("--base", a_base)->required()->check(CLI::ExistingFile);
    apply->add_option("--artifact", a_art)->required()->check(CLI::ExistingFile);
    apply->add_option("--out", a_out, "Patched container path")->required();
    apply->add_flag("--skip-fingerprint", a_skip, "Apply even if the base does not match");

    // eval
    auto* eval = app.add_subcommand("eval", "End loss of base+artifact against the fine-tuned model");
    std::string e_base, e_art, e_ft;
    CalibFlags e_calib;
    eval->add_option("--base", e_base)->required()->check(CLI::ExistingFile);
    eval->add_option("--artifact", e_art)->required()->check(CLI::ExistingFile);
    eval->add_option("--finetuned", e_ft)->required()->check(CLI::ExistingFile);
    e_calib.add_to(eval);

    // bench-load
    auto* bench = app.add_subcommand("bench-load", "Time delta application against a full checkpoint load");
    std::string b_base, b_art, b_ft, b_timing;
    int b_runs = 10;
    bench->add_option("--base", b_base)->required()->check(CLI::ExistingFile);
    bench->add_option("--artifact", b_art)->required()->check(CLI::ExistingFile);
    bench->add_option("--finetuned", b_ft, "Full checkpoint (TNC1 or TNH1)")->required()->check(CLI::ExistingFile);
    bench->add_option("--runs", b_runs)->check(CLI::PositiveNumber);
    bench->add_option("--timing-out", b_timing, "Write one row per path per run here");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "Row/col counts per projection sub-type");
    std::string i_path;
    bool i_json = false;
    inspect->add_option("path", i_path, "Delta artifact or layer report")->required()->check(CLI::ExistingFile);
    inspect->add_flag("--json", i_json, "Machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*synth) {
            spec.seed = synth_seed;
            profile.axis = synth_axis == "row" ? DeltaAxis::Row : synth_axis == "col" ? DeltaAxis::Col : DeltaAxis::Isotropic;
            profile.seed = derive_seed(synth_seed, 100);
            const ToyModel base = init_base(spec);
            const ToyModel ft = synth_finetune(base, profile).model;
            write_container(synth_base, to_container(base));
            write_container(synth_ft, to_container(ft));
            if (!synth_ft16.empty()) write_container(synth_ft16, to_container(ft), PayloadType::F16);
            std::cout << "wrote " << synth_base << " and " << synth_ft << '\n';
        } else if (*compress) {
            PipelineConfig cfg = c_calib.to_config();
            cfg.fit.learning_rate = c_lr;
            cfg.fit.epochs = c_epochs;
            cfg.e2e.learning_rate = c_e2e_lr;
            cfg.e2e.epochs = c_e2e_epochs;
            cfg.select_by = c_select == "end" ? SelectBy::End : SelectBy::Layer;
            cfg.cache_dir = c_cache_dir;
            if (c_scalar) {
                cfg = scalar_baseline(cfg);
                if (epochs_opt->count()) cfg.fit.epochs = c_epochs;
                if (e2e_epochs_opt->count()) cfg.e2e.epochs = c_e2e_epochs;
            }
            const ToyModel base = load_model(c_base);
            const ToyModel ft = load_model(c_ft);
            const PipelineResult res = run_pipeline(base, ft, cfg);
            const std::size_t bytes = save_artifact(c_out, res.records, res.base_fingerprint);
            const std::string report_path = c_report.empty() ? default_report_path(c_out) : c_report;
            std::ofstream rep(report_path);
            if (!rep) throw IoError("cannot write report '" + report_path + "'");
            write_report(rep, res.report);
            std::cout << "artifact " << c_out << " (" << bytes << " bytes), report " << report_path
                      << ", final end loss " << res.report.summary.final_end_loss << '\n';
        } else if (*apply) {
            const TensorContainer base_c = read_container(a_base);
            const ToyModel base = from_container(base_c);
            const ToyModel out = load_and_apply(base, container_fingerprint(base_c), a_art, nullptr,
                                                ApplyOptions{a_skip});
            write_container(a_out, to_container(out));
            std::cout << "wrote " << a_out << '\n';
        } else if (*eval) {
            const ToyModel base = load_model(e_base);
            const ToyModel ft = load_model(e_ft);
            check_compatible(base, ft);
            const DeltaArtifact art = load_artifact(e_art);
            const ToyModel patched = load_and_apply(base, e_art);
            const PipelineConfig cfg = e_calib.to_config();
            const PipelineData data = make_pipeline_data(cfg, base.spec.vocab);
            const TeacherLogits val = cache_teacher_logits(ft, data.calib.val);
            std::printf("end_loss patched=%.9g base=%.9g (%zu held-out batches)\n", end_loss(patched, val),
                        end_loss(base, val), data.calib.val.size());
            for (const auto& rec : art.records) {
                const CalibCache cache = build_cache(ft, patched, rec.name, data.calib);
                const auto v = rec.scale.to_float();
                const double mse = layer_mse(cache.x_val, cache.y_val, base.weight(rec.name), rec.mask, rec.axis(), v);
                std::printf("layer=%s axis=%s val_mse=%.9g\n", rec.name.c_str(), to_string(rec.axis()), mse);
            }
        } else if (*bench) {
            const TensorContainer base_c = read_container(b_base);
            const ToyModel base = from_container(base_c);
            const BenchReport rep = bench_load(base, container_fingerprint(base_c), b_art, b_ft, b_runs);
            std::printf("%-6s %5s %12s %12s %12s %12s\n", "path", "runs", "mean_s", "median_s", "min_s", "bytes");
            std::printf("%-6s %5zu %12.6f %12.6f %12.6f %12zu\n", "delta", rep.delta.samples.size(), rep.delta.mean(),
                        rep.delta.median(), rep.delta.min(), rep.delta.samples.front().bytes_read);
            std::printf("%-6s %5zu %12.6f %12.6f %12.6f %12zu\n", "full", rep.full.samples.size(), rep.full.mean(),
                        rep.full.median(), rep.full.min(), rep.full.samples.front().bytes_read);
            if (!b_timing.empty()) {
                std::ofstream t(b_timing);
                if (!t) throw IoError("cannot write '" + b_timing + "'");
                write_timing_report(t, rep);
            }
        } else if (*inspect) {
            const auto bytes = read_file(i_path);
            const bool is_artifact = bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "DLT1");
            AxisStats st;
            if (is_artifact) {
                st = axis_stats(parse_artifact(bytes));
            } else {
                std::ifstream in(i_path);
                st = axis_stats(parse_report(in));
            }
            print_axis_stats(st, i_json);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}
