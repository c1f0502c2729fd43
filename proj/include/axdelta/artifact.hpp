#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "axdelta/bytes.hpp"
#include "axdelta/container.hpp"
#include "axdelta/delta_codec.hpp"
#include "axdelta/toy_model.hpp"

namespace axdelta {

struct DeltaLayerRecord {
    std::string name;
    PackedSignMask mask;
    AxisScaleVector scale;

    Axis axis() const { return scale.axis; }
    std::size_t d_out() const { return mask.d_out(); }
    std::size_t d_in() const { return mask.d_in(); }

    friend bool operator==(const DeltaLayerRecord&, const DeltaLayerRecord&) = default;
};

struct DeltaArtifact {
    static constexpr std::uint32_t kVersion = 1;
    Digest base_fingerprint{};
    std::vector<DeltaLayerRecord> records;

    friend bool operator==(const DeltaArtifact&, const DeltaArtifact&) = default;
};

// Layout, little-endian:
//   "DLT1" | u32 version | 32-byte base fingerprint | u32 record count |
//   per record { u32 name_len | name | u8 axis (0 row, 1 col) | u32 d_out | u32 d_in |
//                d_out*ceil(d_in/8) mask bytes | vector as binary16 } |
//   32-byte SHA-256 over every byte after the magic and before the checksum.
inline constexpr std::size_t kArtifactHeaderBytes = 4 + 4 + 32 + 4;
inline constexpr std::size_t kArtifactChecksumBytes = 32;
inline constexpr std::size_t kEmptyArtifactBytes = kArtifactHeaderBytes + kArtifactChecksumBytes;

inline std::size_t record_payload_bytes(const DeltaLayerRecord& r) {
    return r.mask.bytes().size() + 2 * r.scale.values.size();
}

inline std::size_t record_bytes(const DeltaLayerRecord& r) {
    return 4 + r.name.size() + 1 + 4 + 4 + record_payload_bytes(r);
}

inline std::size_t artifact_bytes(const std::vector<DeltaLayerRecord>& records) {
    std::size_t n = kEmptyArtifactBytes;
    for (const auto& r : records) n += record_bytes(r);
    return n;
}

inline void validate_record(const DeltaLayerRecord& r) {
    const std::size_t want = axis_length(r.scale.axis, r.d_out(), r.d_in());
    if (r.scale.values.size() != want) {
        throw DimensionError("record '" + r.name + "': " + to_string(r.scale.axis) + " vector has length " +
                             std::to_string(r.scale.values.size()) + ", expected " + std::to_string(want));
    }
    for (Half h : r.scale.values) {
        if (!std::isfinite(half_to_float(h))) throw InvalidValueError("record '" + r.name + "': non-finite scale");
    }
}

inline std::vector<std::uint8_t> serialize_artifact(const DeltaArtifact& a) {
    std::unordered_set<std::string> seen;
    ByteWriter w;
    w.put_string("DLT1");
    w.put_u32(DeltaArtifact::kVersion);
    w.put_bytes(a.base_fingerprint);
    w.put_u32(static_cast<std::uint32_t>(a.records.size()));
    for (const auto& r : a.records) {
        validate_record(r);
        if (!seen.insert(r.name).second) throw ParseError(ParseErrorKind::DuplicateName, "record '" + r.name + "'");
        w.put_u32(static_cast<std::uint32_t>(r.name.size()));
        w.put_string(r.name);
        w.put_u8(static_cast<std::uint8_t>(r.scale.axis));
        w.put_u32(static_cast<std::uint32_t>(r.d_out()));
        w.put_u32(static_cast<std::uint32_t>(r.d_in()));
        w.put_bytes(r.mask.bytes());
        for (Half h : r.scale.values) w.put_u16(h.bits);
    }
    const Digest sum = sha256(std::span<const std::uint8_t>(w.buffer()).subspan(4));
    w.put_bytes(sum);
    return std::move(w.buffer());
}

inline DeltaArtifact parse_artifact(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::string(reinterpret_cast<const char*>(bytes.data()), 4) != "DLT1") {
        throw ParseError(ParseErrorKind::BadMagic, "expected DLT1");
    }
    if (bytes.size() < kEmptyArtifactBytes) {
        throw ParseError(ParseErrorKind::Truncated, "artifact shorter than header and checksum");
    }
    const auto body = bytes.subspan(4, bytes.size() - 4 - kArtifactChecksumBytes);
    const Digest expect = sha256(body);
    if (!std::equal(expect.begin(), expect.end(), bytes.end() - kArtifactChecksumBytes)) {
        throw ChecksumError("artifact checksum mismatch (corrupt or truncated file)");
    }
    ByteReader r(body);
    DeltaArtifact a;
    const std::uint32_t version = r.u32("version");
    if (version != DeltaArtifact::kVersion) {
        throw ParseError(ParseErrorKind::UnsupportedVersion, "artifact version " + std::to_string(version));
    }
    auto fp = r.take(32, "fingerprint");
    std::copy(fp.begin(), fp.end(), a.base_fingerprint.begin());
    const std::uint32_t count = r.u32("record count");
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        DeltaLayerRecord rec;
        rec.name = r.string(r.u32("name length"), "name");
        if (!seen.insert(rec.name).second) throw ParseError(ParseErrorKind::DuplicateName, "record '" + rec.name + "'");
        const std::uint8_t axis = r.u8("axis");
        if (axis > 1) throw ParseError(ParseErrorKind::Malformed, "axis byte " + std::to_string(axis));
        const std::uint32_t d_out = r.u32("d_out");
        const std::uint32_t d_in = r.u32("d_in");
        const std::size_t mask_len = static_cast<std::size_t>(d_out) * PackedSignMask::row_bytes_for(d_in);
        auto mb = r.take(mask_len, "mask");
        rec.mask = PackedSignMask(d_out, d_in, std::vector<std::uint8_t>(mb.begin(), mb.end()));
        rec.scale.axis = static_cast<Axis>(axis);
        const std::size_t len = axis_length(rec.scale.axis, d_out, d_in);
        std::vector<std::uint16_t> raw(len);
        r.u16s(raw, "scale vector");
        rec.scale.values.resize(len);
        for (std::size_t k = 0; k < len; ++k) rec.scale.values[k] = Half{raw[k]};
        a.records.push_back(std::move(rec));
    }
    if (r.remaining() != 0) throw ParseError(ParseErrorKind::Malformed, "trailing bytes before checksum");
    return a;
}

inline std::size_t save_artifact(const std::string& path, const std::vector<DeltaLayerRecord>& records,
                                 const Digest& base_fingerprint) {
    const auto bytes = serialize_artifact(DeltaArtifact{base_fingerprint, records});
    write_file(path, bytes);
    return bytes.size();
}

inline DeltaArtifact load_artifact(const std::string& path) { return parse_artifact(read_file(path)); }

// ---------------------------------------------------------------------------
// Applying

struct ApplyTiming {
    double read_s = 0.0;
    double decode_s = 0.0;
    double install_s = 0.0;
    std::size_t bytes_read = 0;

    double total_s() const { return read_s + decode_s + install_s; }
};

struct ApplyOptions {
    bool skip_fingerprint_check = false;
};

// Replaces each named layer of `model` by reconstruct(base, mask, v).
// Layers without a record are left untouched.
inline void apply_records(ToyModel& model, const std::vector<DeltaLayerRecord>& records) {
    for (const auto& rec : records) {
        const LayerId id = parse_layer_name(rec.name, model.blocks.size());
        const auto v = rec.scale.to_float();
        patch_in_place(model.weight(id), rec.mask, rec.scale.axis, v);
    }
}

inline void check_fingerprint(const DeltaArtifact& a, const Digest& base_fp) {
    if (a.base_fingerprint != base_fp) {
        throw FingerprintError("artifact was built for base " + to_hex(a.base_fingerprint) +
                               " but the supplied base is " + to_hex(base_fp));
    }
}

// One bulk file read, then decode, then one install per record.
inline ToyModel load_and_apply(const ToyModel& base, const Digest& base_fp, const std::string& path,
                               ApplyTiming* timing = nullptr, const ApplyOptions& opts = {}) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const auto bytes = read_file(path);
    const auto t1 = clock::now();
    const DeltaArtifact a = parse_artifact(bytes);
    if (!opts.skip_fingerprint_check) check_fingerprint(a, base_fp);
    const auto t2 = clock::now();
    ToyModel out = base;
    apply_records(out, a.records);
    const auto t3 = clock::now();
    if (timing) {
        timing->read_s = std::chrono::duration<double>(t1 - t0).count();
        timing->decode_s = std::chrono::duration<double>(t2 - t1).count();
        timing->install_s = std::chrono::duration<double>(t3 - t2).count();
        timing->bytes_read = bytes.size();
    }
    return out;
}

inline ToyModel load_and_apply(const ToyModel& base, const std::string& path, ApplyTiming* timing = nullptr,
                               const ApplyOptions& opts = {}) {
    return load_and_apply(base, container_fingerprint(to_container(base)), path, timing, opts);
}

// ---------------------------------------------------------------------------
// Size accounting

struct SizeReport {
    std::size_t artifact_bytes = 0;
    std::size_t fp16_checkpoint_bytes = 0;  // 2 bytes per parameter of every tensor
    double ratio = 0.0;                     // fp16_checkpoint_bytes / artifact_bytes
    std::size_t patched_fp16_bytes = 0;     // 2 bytes per parameter of patched tensors
    std::size_t patched_payload_bytes = 0;  // mask + vector bytes of patched tensors
    double patched_ratio = 0.0;
};

inline SizeReport size_report(const DeltaArtifact& a, const TensorContainer& base) {
    SizeReport s;
    s.artifact_bytes = artifact_bytes(a.records);
    for (const auto& [_, m] : base.entries) s.fp16_checkpoint_bytes += 2 * m.size();
    s.ratio = static_cast<double>(s.fp16_checkpoint_bytes) / static_cast<double>(s.artifact_bytes);
    for (const auto& r : a.records) {
        s.patched_fp16_bytes += 2 * r.d_out() * r.d_in();
        s.patched_payload_bytes += record_payload_bytes(r);
    }
    s.patched_ratio = s.patched_payload_bytes == 0
                          ? 0.0
                          : static_cast<double>(s.patched_fp16_bytes) / static_cast<double>(s.patched_payload_bytes);
    return s;
}

// ---------------------------------------------------------------------------
// Load benchmark

struct LoadSample {
    double seconds = 0.0;
    std::size_t bytes_read = 0;
};

struct LoadStats {
    std::vector<LoadSample> samples;

    double mean() const {
        if (samples.empty()) return 0.0;
        double s = 0.0;
        for (const auto& x : samples) s += x.seconds;
        return s / static_cast<double>(samples.size());
    }
    double min() const {
        double m = samples.empty() ? 0.0 : samples.front().seconds;
        for (const auto& x : samples) m = std::min(m, x.seconds);
        return m;
    }
    double median() const {
        if (samples.empty()) return 0.0;
        std::vector<double> t;
        for (const auto& x : samples) t.push_back(x.seconds);
        std::sort(t.begin(), t.end());
        const std::size_t n = t.size();
        return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
    }
};

struct BenchReport {
    LoadStats delta;  // resident base + artifact
    LoadStats full;   // full checkpoint from disk
};

// Warm-cache wall-clock timing. The delta path copies the resident base and
// applies the artifact; the full path reads and decodes a complete checkpoint
// (TNC1 or TNH1) into a model.
inline BenchReport bench_load(const ToyModel& base, const Digest& base_fp, const std::string& artifact_path,
                              const std::string& full_checkpoint_path, int runs) {
    if (runs < 1) throw ConfigError("bench_load: runs must be >= 1");
    using clock = std::chrono::steady_clock;
    BenchReport rep;
    for (int i = 0; i < runs; ++i) {
        ApplyTiming t;
        const auto a0 = clock::now();
        const ToyModel patched = load_and_apply(base, base_fp, artifact_path, &t);
        const auto a1 = clock::now();
        (void)patched;
        rep.delta.samples.push_back({std::chrono::duration<double>(a1 - a0).count(), t.bytes_read});

        const auto f0 = clock::now();
        const auto bytes = read_file(full_checkpoint_path);
        const ToyModel full = from_container(parse_container(bytes));
        const auto f1 = clock::now();
        (void)full;
        rep.full.samples.push_back({std::chrono::duration<double>(f1 - f0).count(), bytes.size()});
    }
    return rep;
}

// One row per path per run.
inline void write_timing_report(std::ostream& os, const BenchReport& rep) {
    auto rows = [&](const char* path, const LoadStats& s) {
        for (std::size_t i = 0; i < s.samples.size(); ++i) {
            os << "path=" << path << " run=" << i << " seconds=" << s.samples[i].seconds
               << " bytes=" << s.samples[i].bytes_read << '\n';
        }
    };
    rows("delta", rep.delta);
    rows("full", rep.full);
}

}  // namespace axdelta
