// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "adfg/error.hpp"

namespace adfg::release {

// File layout, all integers little-endian:
//   "ADFG1" | u64 manifest length | manifest (UTF-8 JSON) | blob region
// The manifest holds the format version, free-form metadata and one entry per
// blob {name, dtype, shape, offset, length, sha256}; offsets are relative to
// the blob region, which blobs tile contiguously in manifest order.
inline constexpr std::string_view kMagic = "ADFG1";
inline constexpr int kFormatVersion = 1;

enum class DType { f32, f64, i32, u8 };

std::string_view to_string(DType t);
DType dtype_from_string(std::string_view s);
std::size_t dtype_size(DType t);

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) {
        return DType::f32;
    } else if constexpr (std::is_same_v<T, double>) {
        return DType::f64;
    } else if constexpr (std::is_same_v<T, std::int32_t>) {
        return DType::i32;
    } else {
        static_assert(std::is_same_v<T, std::uint8_t>, "unsupported container dtype");
        return DType::u8;
    }
}

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(const Digest& d);

struct Blob {
    DType dtype = DType::u8;
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> bytes;  // little-endian element bytes
    nlohmann::json attrs = nlohmann::json::object();

    [[nodiscard]] std::size_t numel() const;
};

class Container {
public:
    nlohmann::json meta = nlohmann::json::object();

    // Throws InvalidArgument on a duplicate name or a shape/byte-count mismatch.
    void put(const std::string& name, Blob blob);

    template <typename T>
    void put_array(const std::string& name, std::vector<std::size_t> shape, std::span<const T> values,
                   nlohmann::json attrs = nlohmann::json::object()) {
        Blob b;
        b.dtype = dtype_of<T>();
        b.shape = std::move(shape);
        b.bytes.resize(values.size() * sizeof(T));
        if (!values.empty()) {
            std::memcpy(b.bytes.data(), values.data(), b.bytes.size());  // host is little-endian
        }
        b.attrs = std::move(attrs);
        put(name, std::move(b));
    }

    // Throws FormatError when the blob is missing or has another dtype.
    template <typename T>
    [[nodiscard]] std::vector<T> get_array(const std::string& name) const {
        const Blob& b = at(name);
        if (b.dtype != dtype_of<T>()) {
            throw FormatError("blob '" + name + "' has dtype " + std::string(to_string(b.dtype)));
        }
        std::vector<T> out(b.bytes.size() / sizeof(T));
        if (!out.empty()) {
            std::memcpy(out.data(), b.bytes.data(), b.bytes.size());
        }
        return out;
    }

    [[nodiscard]] bool has(const std::string& name) const { return index_.count(name) != 0; }
    [[nodiscard]] const Blob& at(const std::string& name) const;
    [[nodiscard]] const std::vector<std::string>& names() const { return order_; }
    [[nodiscard]] std::size_t size() const { return order_.size(); }

    // Canonical bytes: identical containers serialize identically.
    [[nodiscard]] std::vector<std::uint8_t> serialize() const;
    // Throws FormatError on bad magic, unsupported version, truncation,
    // inconsistent manifest, or a checksum mismatch (naming the blob).
    static Container deserialize(std::span<const std::uint8_t> bytes);

    void save(const std::string& path) const;
    static Container load(const std::string& path);

    // SHA-256 of the canonical bytes.
    [[nodiscard]] Digest fingerprint() const;

    bool operator==(const Container& other) const;

private:
    std::vector<std::string> order_;
    std::map<std::string, Blob> index_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace adfg::release
