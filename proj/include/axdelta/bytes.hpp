#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "axdelta/error.hpp"

namespace axdelta {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

using Digest = std::array<std::uint8_t, 32>;

inline Digest sha256(std::span<const std::uint8_t> bytes) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != out.size()) {
        throw Error("sha256: digest failed");
    }
    return out;
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        s.push_back(kDigits[b >> 4]);
        s.push_back(kDigits[b & 0xF]);
    }
    return s;
}

class ByteWriter {
public:
    void put_bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void put_string(std::string_view s) {
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void put_u8(std::uint8_t v) { buf_.push_back(v); }
    void put_u16(std::uint16_t v) { put_raw(&v, sizeof v); }
    void put_u32(std::uint32_t v) { put_raw(&v, sizeof v); }
    void put_f32s(std::span<const float> v) { put_raw(v.data(), v.size_bytes()); }
    void put_u16s(std::span<const std::uint16_t> v) { put_raw(v.data(), v.size_bytes()); }

    std::vector<std::uint8_t>& buffer() noexcept { return buf_; }
    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

private:
    void put_raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> buf_;
};

// Bounds-checked cursor; running past the end raises a Truncated parse error.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (n > remaining()) {
            throw ParseError(ParseErrorKind::Truncated,
                             std::string(what) + " needs " + std::to_string(n) + " bytes, " +
                                 std::to_string(remaining()) + " left");
        }
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8(const char* what) { return take(1, what)[0]; }
    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        std::memcpy(&v, take(4, what).data(), 4);
        return v;
    }
    std::string string(std::size_t n, const char* what) {
        auto s = take(n, what);
        return {reinterpret_cast<const char*>(s.data()), s.size()};
    }
    void f32s(std::span<float> out, const char* what) {
        auto s = take(out.size_bytes(), what);
        std::memcpy(out.data(), s.data(), s.size());
    }
    void u16s(std::span<std::uint16_t> out, const char* what) {
        auto s = take(out.size_bytes(), what);
        std::memcpy(out.data(), s.data(), s.size());
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<std::uint8_t> bytes(size);
    in.seekg(0);
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw IoError("short read from '" + path + "'");
    }
    return bytes;
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace axdelta
