#pragma once

#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "axdelta/artifact.hpp"
#include "axdelta/scale_fit.hpp"

namespace axdelta {

// One line per compressed layer, written by the pipeline and read back by
// `inspect`:
//   layer=<name> mode=<vector|scalar> val_mse_row=<g> val_mse_col=<g>
//     end_loss_row=<g> end_loss_col=<g> chosen=<row|col>
// followed by one "summary ..." line. Lines starting with '#' are comments.
struct ReportRecord {
    std::string layer;
    bool scalar = false;
    double val_mse_row = NAN, val_mse_col = NAN;
    double end_loss_row = NAN, end_loss_col = NAN;
    Axis chosen = Axis::Row;
};

struct PipelineSummary {
    double base_end_loss = NAN;      // uncompressed base vs teacher, validation batches
    double pre_e2e_end_loss = NAN;   // after per-layer compression
    double e2e_train_initial = NAN;  // e2e objective on its training batches, before
    double e2e_train_final = NAN;    // and after refinement
    double final_end_loss = NAN;     // validation, vectors rounded to binary16
};

struct PipelineReport {
    std::vector<ReportRecord> layers;
    PipelineSummary summary;
};

inline ReportRecord to_report_record(const LayerFitResult& r) {
    return {r.layer, r.scalar, r.val_mse_row, r.val_mse_col, r.end_loss_row, r.end_loss_col, r.chosen};
}

namespace detail {

inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    if (s == "nan" || s == "-nan") return NAN;
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
}

inline std::map<std::string, std::string> parse_fields(std::istringstream& in) {
    std::map<std::string, std::string> kv;
    std::string tok;
    while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw ParseError(ParseErrorKind::Malformed, "report field '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

}  // namespace detail

inline void write_report(std::ostream& os, const PipelineReport& rep) {
    using detail::fmt_g;
    os << "# axdelta layer report v1\n";
    for (const auto& r : rep.layers) {
        os << "layer=" << r.layer << " mode=" << (r.scalar ? "scalar" : "vector") << " val_mse_row=" << fmt_g(r.val_mse_row)
           << " val_mse_col=" << fmt_g(r.val_mse_col) << " end_loss_row=" << fmt_g(r.end_loss_row)
           << " end_loss_col=" << fmt_g(r.end_loss_col) << " chosen=" << to_string(r.chosen) << '\n';
    }
    const auto& s = rep.summary;
    os << "summary base_end_loss=" << fmt_g(s.base_end_loss) << " pre_e2e_end_loss=" << fmt_g(s.pre_e2e_end_loss)
       << " e2e_train_initial=" << fmt_g(s.e2e_train_initial) << " e2e_train_final=" << fmt_g(s.e2e_train_final)
       << " final_end_loss=" << fmt_g(s.final_end_loss) << '\n';
}

inline PipelineReport parse_report(std::istream& is) {
    PipelineReport rep;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        try {
            std::istringstream ls(line);
            if (line.starts_with("summary")) {
                std::string head;
                ls >> head;
                auto kv = detail::parse_fields(ls);
                auto& s = rep.summary;
                s.base_end_loss = detail::parse_double(kv.at("base_end_loss"));
                s.pre_e2e_end_loss = detail::parse_double(kv.at("pre_e2e_end_loss"));
                s.e2e_train_initial = detail::parse_double(kv.at("e2e_train_initial"));
                s.e2e_train_final = detail::parse_double(kv.at("e2e_train_final"));
                s.final_end_loss = detail::parse_double(kv.at("final_end_loss"));
                continue;
            }
            auto kv = detail::parse_fields(ls);
            ReportRecord r;
            r.layer = kv.at("layer");
            r.scalar = kv.at("mode") == "scalar";
            r.val_mse_row = detail::parse_double(kv.at("val_mse_row"));
            r.val_mse_col = detail::parse_double(kv.at("val_mse_col"));
            r.end_loss_row = detail::parse_double(kv.at("end_loss_row"));
            r.end_loss_col = detail::parse_double(kv.at("end_loss_col"));
            const std::string& chosen = kv.at("chosen");
            if (chosen != "row" && chosen != "col") throw std::invalid_argument(chosen);
            r.chosen = chosen == "row" ? Axis::Row : Axis::Col;
            rep.layers.push_back(std::move(r));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(ParseErrorKind::Malformed, "report line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rep;
}

// Row/col counts per projection sub-type and the axis sequence per depth.
struct AxisStats {
    struct Counts {
        std::size_t row = 0;
        std::size_t col = 0;
    };
    std::map<std::string, Counts> by_sub_type;
    std::map<std::size_t, std::vector<std::pair<std::string, Axis>>> by_depth;
    Counts total;
};

inline AxisStats axis_stats(const std::vector<std::pair<std::string, Axis>>& layers) {
    AxisStats st;
    for (const auto& [name, axis] : layers) {
        const std::string sub(sub_type_of(name));
        auto& c = st.by_sub_type[sub];
        (axis == Axis::Row ? c.row : c.col)++;
        (axis == Axis::Row ? st.total.row : st.total.col)++;
        std::size_t depth = 0;
        if (std::sscanf(name.c_str(), "blocks.%zu.", &depth) != 1) {
            throw ParseError(ParseErrorKind::Malformed, "layer name '" + name + "' has no depth");
        }
        st.by_depth[depth].emplace_back(sub, axis);
    }
    return st;
}

inline AxisStats axis_stats(const DeltaArtifact& a) {
    std::vector<std::pair<std::string, Axis>> v;
    for (const auto& r : a.records) v.emplace_back(r.name, r.axis());
    return axis_stats(v);
}

inline AxisStats axis_stats(const PipelineReport& rep) {
    std::vector<std::pair<std::string, Axis>> v;
    for (const auto& r : rep.layers) v.emplace_back(r.layer, r.chosen);
    return axis_stats(v);
}

}  // namespace axdelta
