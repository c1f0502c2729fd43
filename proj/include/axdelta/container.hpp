#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "axdelta/bytes.hpp"
#include "axdelta/half.hpp"
#include "axdelta/matrix.hpp"

namespace axdelta {

// Named FP32 tensors in insertion order.
//
// On disk ("TNC1"), little-endian:
//   magic "TNC1" | u32 version=1 | u32 count |
//   count x { u32 name_len | name | u32 rows | u32 cols | rows*cols f32 }
//
// The FP16 variant ("TNH1") has the same layout with binary16 payloads. It
// exists only to measure what a half-precision full checkpoint costs.
struct TensorContainer {
    static constexpr std::uint32_t kVersion = 1;

    std::vector<std::pair<std::string, Matrix>> entries;

    void add(std::string name, Matrix m) { entries.emplace_back(std::move(name), std::move(m)); }

    const Matrix* find(const std::string& name) const {
        for (const auto& [n, m] : entries)
            if (n == name) return &m;
        return nullptr;
    }

    const Matrix& at(const std::string& name) const {
        if (const Matrix* m = find(name)) return *m;
        throw LookupError("container has no tensor named '" + name + "'");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.second.size();
        return n;
    }

    friend bool operator==(const TensorContainer&, const TensorContainer&) = default;
};

enum class PayloadType { F32, F16 };

namespace detail {

inline const char* container_magic(PayloadType t) { return t == PayloadType::F32 ? "TNC1" : "TNH1"; }

inline void check_unique_names(const TensorContainer& c) {
    std::unordered_set<std::string> seen;
    for (const auto& e : c.entries) {
        if (!seen.insert(e.first).second) {
            throw ParseError(ParseErrorKind::DuplicateName, "tensor '" + e.first + "' appears twice");
        }
    }
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_container(const TensorContainer& c,
                                                     PayloadType type = PayloadType::F32) {
    detail::check_unique_names(c);
    ByteWriter w;
    w.put_string(detail::container_magic(type));
    w.put_u32(TensorContainer::kVersion);
    w.put_u32(static_cast<std::uint32_t>(c.entries.size()));
    std::vector<std::uint16_t> halves;
    for (const auto& [name, m] : c.entries) {
        w.put_u32(static_cast<std::uint32_t>(name.size()));
        w.put_string(name);
        w.put_u32(static_cast<std::uint32_t>(m.rows()));
        w.put_u32(static_cast<std::uint32_t>(m.cols()));
        if (type == PayloadType::F32) {
            w.put_f32s(m.values());
        } else {
            halves.resize(m.size());
            for (std::size_t i = 0; i < m.size(); ++i) halves[i] = to_half_round(m.values()[i]).bits;
            w.put_u16s(halves);
        }
    }
    return std::move(w.buffer());
}

inline TensorContainer parse_container(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const std::string magic = r.remaining() >= 4 ? r.string(4, "magic") : std::string();
    PayloadType type;
    if (magic == "TNC1") {
        type = PayloadType::F32;
    } else if (magic == "TNH1") {
        type = PayloadType::F16;
    } else {
        throw ParseError(ParseErrorKind::BadMagic, "expected TNC1 or TNH1");
    }
    const std::uint32_t version = r.u32("version");
    if (version != TensorContainer::kVersion) {
        throw ParseError(ParseErrorKind::UnsupportedVersion, "version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32("entry count");
    TensorContainer c;
    std::unordered_set<std::string> seen;
    std::vector<std::uint16_t> halves;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = r.u32("name length");
        std::string name = r.string(name_len, "name");
        const std::uint32_t rows = r.u32("rows");
        const std::uint32_t cols = r.u32("cols");
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        const std::size_t elem = type == PayloadType::F32 ? 4 : 2;
        if (n > r.remaining() / elem) {
            throw ParseError(ParseErrorKind::Truncated, "payload of '" + name + "'");
        }
        if (!seen.insert(name).second) {
            throw ParseError(ParseErrorKind::DuplicateName, "tensor '" + name + "' appears twice");
        }
        std::vector<float> data(n);
        if (type == PayloadType::F32) {
            r.f32s(data, "payload");
        } else {
            halves.resize(n);
            r.u16s(halves, "payload");
            for (std::size_t i = 0; i < n; ++i) data[i] = half_to_float(Half{halves[i]});
        }
        c.add(std::move(name), Matrix(rows, cols, std::move(data)));
    }
    if (r.remaining() != 0) {
        throw ParseError(ParseErrorKind::Malformed, std::to_string(r.remaining()) + " trailing bytes");
    }
    return c;
}

inline std::size_t write_container(const std::string& path, const TensorContainer& c,
                                   PayloadType type = PayloadType::F32) {
    const auto bytes = serialize_container(c, type);
    write_file(path, bytes);
    return bytes.size();
}

inline TensorContainer read_container(const std::string& path) {
    return parse_container(read_file(path));
}

// Hash of the canonical FP32 serialization; identifies a base model.
inline Digest container_fingerprint(const TensorContainer& c) {
    return sha256(serialize_container(c, PayloadType::F32));
}

}  // namespace axdelta
