#include "gsec/blob.hpp"

#include <algorithm>

#include "gsec/file_util.hpp"

namespace gsec {

namespace {

constexpr char kMagic[8] = {'G', 'S', 'E', 'C', 'B', 'L', 'O', 'B'};

class Writer {
public:
    template <typename T>
    void pod(const T& value) {
        const auto* p = reinterpret_cast<const std::byte*>(&value);
        out_.insert(out_.end(), p, p + sizeof(T));
    }
    void raw(std::span<const std::byte> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
    void string(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        raw(std::as_bytes(std::span(s.data(), s.size())));
    }
    std::vector<std::byte> take() { return std::move(out_); }

private:
    std::vector<std::byte> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

    template <typename T>
    T pod() {
        T value;
        std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
        return value;
    }
    std::span<const std::byte> take(std::uint64_t n) {
        if (n > bytes_.size() - pos_) {
            throw FormatError("blob truncated");
        }
        auto s = bytes_.subspan(pos_, static_cast<std::size_t>(n));
        pos_ += static_cast<std::size_t>(n);
        return s;
    }
    std::string string() {
        const auto n = pod<std::uint32_t>();
        const auto s = take(n);
        return {reinterpret_cast<const char*>(s.data()), s.size()};
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::byte> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::F32: return 4;
        case DType::F64: return 8;
        case DType::I32: return 4;
        case DType::U8: return 1;
        case DType::U32: return 4;
        case DType::U64: return 8;
    }
    throw FormatError("unknown dtype code " + std::to_string(static_cast<int>(dtype)));
}

const char* dtype_name(DType dtype) {
    switch (dtype) {
        case DType::F32: return "f32";
        case DType::F64: return "f64";
        case DType::I32: return "i32";
        case DType::U8: return "u8";
        case DType::U32: return "u32";
        case DType::U64: return "u64";
    }
    return "?";
}

std::uint64_t BlobArray::element_count() const {
    std::uint64_t n = 1;
    for (const auto d : dims) {
        n *= d;
    }
    return n;
}

void Blob::put_array(BlobArray array) {
    auto it = std::find_if(arrays_.begin(), arrays_.end(), [&](const BlobArray& a) { return a.name == array.name; });
    if (it != arrays_.end()) {
        *it = std::move(array);
    } else {
        arrays_.push_back(std::move(array));
    }
}

void Blob::put_text(const std::string& name, const std::string& text) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(text.data());
    put<std::uint8_t>(name, {text.size()}, std::span(p, text.size()));
}

bool Blob::has(const std::string& name) const {
    return std::any_of(arrays_.begin(), arrays_.end(), [&](const BlobArray& a) { return a.name == name; });
}

const BlobArray& Blob::array(const std::string& name) const {
    for (const auto& a : arrays_) {
        if (a.name == name) {
            return a;
        }
    }
    throw FormatError("blob has no array '" + name + "'");
}

std::string Blob::get_text(const std::string& name) const {
    const auto& a = array(name);
    return {reinterpret_cast<const char*>(a.bytes.data()), a.bytes.size()};
}

std::vector<std::byte> Blob::serialize() const {
    Writer w;
    w.raw(std::as_bytes(std::span(kMagic)));
    w.pod(kVersion);
    w.string(kind);
    w.pod(seed);
    w.pod(config_hash);
    w.pod(static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& a : arrays_) {
        w.string(a.name);
        w.pod(static_cast<std::uint8_t>(a.dtype));
        w.pod(static_cast<std::uint8_t>(a.dims.size()));
        w.pod(std::uint16_t{0});
        for (const auto d : a.dims) {
            w.pod(d);
        }
        w.pod(static_cast<std::uint64_t>(a.bytes.size()));
        w.raw(a.bytes);
    }
    return w.take();
}

Blob Blob::parse(std::span<const std::byte> bytes) {
    Reader r(bytes);
    const auto magic = r.take(sizeof(kMagic));
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("not a GSECBLOB file");
    }
    const auto version = r.pod<std::uint32_t>();
    if (version != kVersion) {
        throw FormatError("unsupported blob version " + std::to_string(version));
    }
    Blob blob;
    blob.kind = r.string();
    blob.seed = r.pod<std::uint64_t>();
    blob.config_hash = r.pod<std::uint64_t>();
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        BlobArray a;
        a.name = r.string();
        a.dtype = static_cast<DType>(r.pod<std::uint8_t>());
        const auto rank = r.pod<std::uint8_t>();
        r.pod<std::uint16_t>();
        for (int d = 0; d < rank; ++d) {
            a.dims.push_back(r.pod<std::uint64_t>());
        }
        const auto n = r.pod<std::uint64_t>();
        if (n != a.element_count() * dtype_size(a.dtype)) {
            throw FormatError("blob array '" + a.name + "' byte length disagrees with its dims");
        }
        const auto data = r.take(n);
        a.bytes.assign(data.begin(), data.end());
        blob.arrays_.push_back(std::move(a));
    }
    if (!r.done()) {
        throw FormatError("trailing bytes after blob arrays");
    }
    return blob;
}

void Blob::save(const std::filesystem::path& path) const {
    write_file_atomic(path, serialize());
}

Blob Blob::load(const std::filesystem::path& path) {
    return parse(read_file_bytes(path));
}

}  // namespace gsec
