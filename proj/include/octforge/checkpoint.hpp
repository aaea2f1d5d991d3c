#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "octforge/tensor.hpp"

namespace octforge {

// CRC-32 (IEEE, reflected, poly 0xEDB88320), the trailing integrity word of
// the checkpoint format.
inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0) {
    static const auto table = [] {
        std::vector<uint32_t> t(256);
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc ^= 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

// Named-tensor archive.
//
// Byte layout (all little-endian):
//   "OCTF" | u32 version=1 | u32 tensor count
//   per tensor: u16 name length, name bytes, u8 rank, rank x u32 dims,
//               numel x f32 raw values
//   u32 CRC32 of every preceding byte
struct CheckpointData {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }

    const Tensor<float>& at(const std::string& name) const {
        const Tensor<float>* t = find(name);
        if (!t) throw DataError("checkpoint: missing tensor " + name);
        return *t;
    }

    void add(const std::string& name, Tensor<float> t) {
        tensors.emplace_back(name, std::move(t));
    }
};

namespace detail {

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v & 0xFF));
    out.push_back(uint8_t(v >> 8));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const uint8_t* p;
    size_t remaining;
    void need(size_t n) const {
        if (remaining < n) throw DataError("checkpoint: truncated file");
    }
    uint16_t u16() {
        need(2);
        uint16_t v = uint16_t(p[0]) | uint16_t(p[1]) << 8;
        p += 2;
        remaining -= 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
        p += 4;
        remaining -= 4;
        return v;
    }
    uint8_t u8() {
        need(1);
        uint8_t v = *p;
        ++p;
        --remaining;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        remaining -= n;
        return s;
    }
};

} // namespace detail

inline std::vector<uint8_t> encode_checkpoint(const CheckpointData& ckpt) {
    std::vector<uint8_t> out;
    out.push_back('O');
    out.push_back('C');
    out.push_back('T');
    out.push_back('F');
    detail::put_u32(out, 1);
    detail::put_u32(out, uint32_t(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        check(name.size() < 65536, "checkpoint: tensor name too long");
        detail::put_u16(out, uint16_t(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(uint8_t(t.rank()));
        for (int i = 0; i < t.rank(); ++i) detail::put_u32(out, uint32_t(t.dim(i)));
        for (int64_t i = 0; i < t.numel(); ++i) detail::put_f32(out, t[i]);
    }
    detail::put_u32(out, crc32(out.data(), out.size()));
    return out;
}

inline CheckpointData decode_checkpoint(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 16) throw DataError("checkpoint: truncated file");
    if (std::memcmp(bytes.data(), "OCTF", 4) != 0)
        throw DataError("checkpoint: bad magic, not an OCTF file");
    const size_t body = bytes.size() - 4;
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= uint32_t(bytes[body + size_t(i)]) << (8 * i);
    if (crc32(bytes.data(), body) != stored)
        throw DataError("checkpoint: CRC mismatch, file is corrupted");

    detail::Reader r{bytes.data() + 4, body - 4};
    const uint32_t version = r.u32();
    if (version != 1)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t count = r.u32();
    CheckpointData ckpt;
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str(r.u16());
        const int rank = r.u8();
        if (rank < 1 || rank > 4) throw DataError("checkpoint: bad tensor rank for " + name);
        std::vector<int> dims;
        int64_t numel = 1;
        for (int k = 0; k < rank; ++k) {
            dims.push_back(int(r.u32()));
            numel *= dims.back();
        }
        std::vector<float> data(static_cast<size_t>(numel));
        for (int64_t k = 0; k < numel; ++k) data[size_t(k)] = r.f32();
        ckpt.add(name, Tensor<float>(dims, std::move(data)));
    }
    if (r.remaining != 0) throw DataError("checkpoint: trailing bytes after tensor table");
    return ckpt;
}

inline void save_checkpoint_file(const std::string& path, const CheckpointData& ckpt) {
    std::vector<uint8_t> bytes = encode_checkpoint(ckpt);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw DataError("failed writing checkpoint: " + path);
}

inline CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

// u64 values (seeds, counters) ride in checkpoints as four exact u16 chunks;
// f32 cannot hold u32 losslessly.
inline Tensor<float> encode_u64(uint64_t v) {
    Tensor<float> t({4});
    for (int i = 0; i < 4; ++i) t[i] = float((v >> (16 * i)) & 0xFFFFu);
    return t;
}

inline uint64_t decode_u64(const Tensor<float>& t) {
    check(t.numel() == 4, "checkpoint: bad u64 encoding");
    uint64_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint64_t(uint16_t(t[i])) << (16 * i);
    return v;
}

} // namespace octforge
