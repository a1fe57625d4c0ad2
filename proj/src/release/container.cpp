// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/release/container.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

namespace adfg::release {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

std::uint64_t read_u64(std::span<const std::uint8_t> in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(in[static_cast<std::size_t>(i)]) << (8 * i);
    }
    return v;
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (const auto d : shape) {
        n *= d;
    }
    return n;
}

}  // namespace

std::string_view to_string(DType t) {
    switch (t) {
        case DType::f32:
            return "f32";
        case DType::f64:
            return "f64";
        case DType::i32:
            return "i32";
        case DType::u8:
            return "u8";
    }
    return "?";
}

DType dtype_from_string(std::string_view s) {
    for (const DType t : {DType::f32, DType::f64, DType::i32, DType::u8}) {
        if (to_string(t) == s) {
            return t;
        }
    }
    throw FormatError("unknown dtype: " + std::string(s));
}

std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::f32:
        case DType::i32:
            return 4;
        case DType::f64:
            return 8;
        case DType::u8:
            return 1;
    }
    return 0;
}

Digest sha256(std::span<const std::uint8_t> bytes) {
    Digest d{};
    unsigned int len = 0;
    const std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), d.data(), &len) != 1 || len != d.size()) {
        throw Error("SHA-256 computation failed");
    }
    return d;
}

std::string to_hex(const Digest& d) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (const auto b : d) {
        s.push_back(kHex[b >> 4]);
        s.push_back(kHex[b & 0xF]);
    }
    return s;
}

std::size_t Blob::numel() const { return shape_numel(shape); }

void Container::put(const std::string& name, Blob blob) {
    if (name.empty()) {
        throw InvalidArgument("container blob name is empty");
    }
    if (index_.count(name) != 0) {
        throw InvalidArgument("duplicate container blob: " + name);
    }
    if (blob.numel() * dtype_size(blob.dtype) != blob.bytes.size()) {
        throw InvalidArgument("blob '" + name + "' byte count does not match its shape");
    }
    if (!blob.attrs.is_object()) {
        throw InvalidArgument("blob '" + name + "' attrs must be an object");
    }
    order_.push_back(name);
    index_.emplace(name, std::move(blob));
}

const Blob& Container::at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw FormatError("container has no blob '" + name + "'");
    }
    return it->second;
}

std::vector<std::uint8_t> Container::serialize() const {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["meta"] = meta;
    auto entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& name : order_) {
        const Blob& b = index_.at(name);
        entries.push_back({{"name", name},
                           {"dtype", to_string(b.dtype)},
                           {"shape", b.shape},
                           {"offset", offset},
                           {"length", b.bytes.size()},
                           {"sha256", to_hex(sha256(b.bytes))},
                           {"attrs", b.attrs}});
        offset += b.bytes.size();
    }
    manifest["tensors"] = std::move(entries);
    const std::string text = manifest.dump();
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    out.reserve(kMagic.size() + 8 + text.size() + offset);
    append_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& name : order_) {
        const auto& bytes = index_.at(name).bytes;
        out.insert(out.end(), bytes.begin(), bytes.end());
    }
    return out;
}

Container Container::deserialize(std::span<const std::uint8_t> bytes) {
    const std::size_t header = kMagic.size() + 8;
    if (bytes.size() < header) {
        throw FormatError("container truncated before the header ends");
    }
    if (std::string_view(reinterpret_cast<const char*>(bytes.data()), kMagic.size()) != kMagic) {
        throw FormatError("bad container magic");
    }
    const std::uint64_t manifest_len = read_u64(bytes.subspan(kMagic.size(), 8));
    if (manifest_len > bytes.size() - header) {
        throw FormatError("container truncated inside the manifest");
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                                         bytes.begin() + static_cast<std::ptrdiff_t>(header + manifest_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("container manifest is not valid JSON: ") + e.what());
    }
    Container c;
    try {
        const int version = manifest.at("format_version").get<int>();
        if (version != kFormatVersion) {
            throw FormatError("unsupported container version " + std::to_string(version));
        }
        c.meta = manifest.at("meta");
        const auto blobs = bytes.subspan(header + manifest_len);
        std::uint64_t expected_offset = 0;
        for (const auto& e : manifest.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            Blob b;
            b.dtype = dtype_from_string(e.at("dtype").get<std::string>());
            b.shape = e.at("shape").get<std::vector<std::size_t>>();
            b.attrs = e.at("attrs");
            const auto offset = e.at("offset").get<std::uint64_t>();
            const auto length = e.at("length").get<std::uint64_t>();
            if (offset != expected_offset) {
                throw FormatError("blob '" + name + "' offset overlaps or leaves a gap");
            }
            if (length != b.numel() * dtype_size(b.dtype)) {
                throw FormatError("blob '" + name + "' length does not match its shape");
            }
            if (offset + length > blobs.size()) {
                throw FormatError("blob '" + name + "' is truncated");
            }
            b.bytes.assign(blobs.begin() + static_cast<std::ptrdiff_t>(offset),
                           blobs.begin() + static_cast<std::ptrdiff_t>(offset + length));
            if (to_hex(sha256(b.bytes)) != e.at("sha256").get<std::string>()) {
                throw FormatError("blob '" + name + "' checksum mismatch");
            }
            expected_offset = offset + length;
            try {
                c.put(name, std::move(b));
            } catch (const InvalidArgument& err) {
                throw FormatError(err.what());
            }
        }
        if (expected_offset != blobs.size()) {
            throw FormatError("container has trailing bytes after the last blob");
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("container manifest is inconsistent: ") + e.what());
    }
    return c;
}

void Container::save(const std::string& path) const { write_file_atomic(path, serialize()); }

Container Container::load(const std::string& path) { return deserialize(read_file(path)); }

Digest Container::fingerprint() const { return sha256(serialize()); }

bool Container::operator==(const Container& other) const {
    if (meta != other.meta || order_ != other.order_) {
        return false;
    }
    for (const auto& name : order_) {
        const Blob& a = index_.at(name);
        const Blob& b = other.index_.at(name);
        if (a.dtype != b.dtype || a.shape != b.shape || a.bytes != b.bytes || a.attrs != b.attrs) {
            return false;
        }
    }
    return true;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw Error("read failure on " + path);
    }
    return bytes;
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot open " + tmp + " for writing");
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw Error("write failure on " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::remove(tmp.c_str());
        throw Error("cannot move " + tmp + " to " + path + ": " + ec.message());
    }
}

}  // namespace adfg::release
