#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include "sftnet/tensor.hpp"

namespace sft {

// "SFT1" tensor container: magic bytes `SFT1`, u8 dtype code (0 = f32,
// 1 = f64), u8 rank, rank x u32 little-endian extents, then the raw
// little-endian values in row-major order.

static_assert(std::endian::native == std::endian::little,
              "SFT1 I/O assumes a little-endian host");

template <class T>
constexpr uint8_t sft1_dtype_code() {
    if constexpr (std::is_same_v<T, float>) return 0;
    else return 1;
}

namespace detail {
inline void read_exact(std::istream& in, char* buf, size_t n, int64_t offset, const char* what) {
    in.read(buf, std::streamsize(n));
    if (size_t(in.gcount()) != n)
        throw FormatError(std::string("truncated ") + what + " at offset " + std::to_string(offset));
}
}  // namespace detail

template <class T>
void save_sft1(std::ostream& out, const Tensor<T>& t) {
    out.write("SFT1", 4);
    const uint8_t dtype = sft1_dtype_code<T>();
    const uint8_t rank = uint8_t(t.rank());
    out.write(reinterpret_cast<const char*>(&dtype), 1);
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (int64_t e : t.shape()) {
        const uint32_t u = uint32_t(e);
        out.write(reinterpret_cast<const char*>(&u), 4);
    }
    out.write(reinterpret_cast<const char*>(t.values().data()),
              std::streamsize(t.values().size() * sizeof(T)));
    if (!out) throw IoError("SFT1 write failed");
}

template <class T>
Tensor<T> load_sft1(std::istream& in, int64_t base_offset = 0) {
    char magic[4];
    detail::read_exact(in, magic, 4, base_offset, "SFT1 magic");
    if (std::memcmp(magic, "SFT1", 4) != 0)
        throw FormatError("bad SFT1 magic at offset " + std::to_string(base_offset));
    uint8_t dtype = 0, rank = 0;
    detail::read_exact(in, reinterpret_cast<char*>(&dtype), 1, base_offset + 4, "SFT1 dtype");
    detail::read_exact(in, reinterpret_cast<char*>(&rank), 1, base_offset + 5, "SFT1 rank");
    if (dtype > 1) throw FormatError("unknown SFT1 dtype code at offset " + std::to_string(base_offset + 4));
    if (dtype != sft1_dtype_code<T>())
        throw FormatError("SFT1 dtype mismatch at offset " + std::to_string(base_offset + 4));
    if (rank > 8) throw FormatError("SFT1 rank too large at offset " + std::to_string(base_offset + 5));
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) {
        uint32_t u = 0;
        detail::read_exact(in, reinterpret_cast<char*>(&u), 4, base_offset + 6 + 4 * i, "SFT1 extent");
        shape[size_t(i)] = int64_t(u);
    }
    const int64_t n = numel(shape);
    std::vector<T> data(size_t(n));
    detail::read_exact(in, reinterpret_cast<char*>(data.data()), size_t(n) * sizeof(T),
                       base_offset + 6 + 4 * rank, "SFT1 payload");
    return Tensor<T>::from_data(std::move(shape), std::move(data));
}

template <class T>
void save_sft1_file(const std::string& path, const Tensor<T>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    save_sft1(f, t);
}

template <class T>
Tensor<T> load_sft1_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    return load_sft1<T>(f);
}

}  // namespace sft
