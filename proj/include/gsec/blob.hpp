#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "gsec/error.hpp"

namespace gsec {

enum class DType : std::uint8_t { F32 = 1, F64 = 2, I32 = 3, U8 = 4, U32 = 5, U64 = 6 };

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) {
        return DType::F32;
    } else if constexpr (std::is_same_v<T, double>) {
        return DType::F64;
    } else if constexpr (std::is_same_v<T, std::int32_t>) {
        return DType::I32;
    } else if constexpr (std::is_same_v<T, std::uint8_t>) {
        return DType::U8;
    } else if constexpr (std::is_same_v<T, std::uint32_t>) {
        return DType::U32;
    } else {
        static_assert(std::is_same_v<T, std::uint64_t>, "unsupported blob dtype");
        return DType::U64;
    }
}

std::size_t dtype_size(DType dtype);
const char* dtype_name(DType dtype);

struct BlobArray {
    std::string name;
    DType dtype = DType::U8;
    std::vector<std::uint64_t> dims;
    std::vector<std::byte> bytes;

    std::uint64_t element_count() const;
};

// Container for named little-endian arrays:
//   "GSECBLOB" | u32 version | u32 len, kind | u64 seed | u64 config hash |
//   u32 count | count x (u32 len, name | u8 dtype | u8 rank | u16 0 |
//   u64 dims[rank] | u64 byte length | raw data)
class Blob {
public:
    static constexpr std::uint32_t kVersion = 1;

    std::string kind;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;

    template <typename T>
    void put(const std::string& name, std::vector<std::uint64_t> dims, std::span<const T> values) {
        BlobArray array;
        array.name = name;
        array.dtype = dtype_of<T>();
        array.dims = std::move(dims);
        if (array.element_count() != values.size()) {
            throw ShapeMismatch("blob array '" + name + "': dims do not match value count");
        }
        array.bytes.resize(values.size_bytes());
        if (!values.empty()) {
            std::memcpy(array.bytes.data(), values.data(), values.size_bytes());
        }
        put_array(std::move(array));
    }

    void put_text(const std::string& name, const std::string& text);

    bool has(const std::string& name) const;
    const BlobArray& array(const std::string& name) const;
    const std::vector<BlobArray>& arrays() const { return arrays_; }

    template <typename T>
    std::vector<T> get(const std::string& name) const {
        const auto& a = array(name);
        if (a.dtype != dtype_of<T>()) {
            throw FormatError("blob array '" + name + "' has dtype " + dtype_name(a.dtype));
        }
        std::vector<T> out(a.element_count());
        if (!out.empty()) {
            std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
        }
        return out;
    }

    std::string get_text(const std::string& name) const;

    std::vector<std::byte> serialize() const;
    static Blob parse(std::span<const std::byte> bytes);

    void save(const std::filesystem::path& path) const;
    static Blob load(const std::filesystem::path& path);

private:
    void put_array(BlobArray array);

    std::vector<BlobArray> arrays_;
};

}  // namespace gsec
