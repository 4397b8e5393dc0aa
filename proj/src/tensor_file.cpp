#include "alignedcut/tensor_file.hpp"

#include "alignedcut/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace alignedcut {
namespace {

constexpr std::array<char, 4> kMagic{'A', 'C', 'F', 'S'};
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
T byteswap(T value) {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

template <typename T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) return byteswap(value);
    return value;
}

template <typename T>
void put(std::ostream& out, T value) {
    value = to_little(value);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw FormatError("truncated header in " + path.string());
    }
    return to_little(value);
}

}  // namespace

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& tensor) {
    if (tensor.shape.size() > kMaxRank) throw ConfigError("tensor rank too large for " + path.string());
    if (tensor.element_count() != tensor.data.size()) {
        throw IntegrityError("tensor data size does not match its shape for " + path.string());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kTensorFileVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (auto extent : tensor.shape) put<std::uint64_t>(out, extent);
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        out.write(reinterpret_cast<const char*>(tensor.data.data()),
                  static_cast<std::streamsize>(tensor.data.size() * sizeof(T)));
    } else {
        for (const T& v : tensor.data) put<T>(out, v);
    }
    if (!out) throw Error("write failed for " + path.string());
}

namespace {

std::vector<std::uint64_t> read_header(std::istream& in, const std::filesystem::path& path) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw FormatError("bad magic in " + path.string());
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kTensorFileVersion) {
        throw FormatError("unsupported version " + std::to_string(version) + " in " + path.string());
    }
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > kMaxRank) throw FormatError("implausible rank in " + path.string());
    std::vector<std::uint64_t> shape(rank);
    for (auto& extent : shape) extent = get<std::uint64_t>(in, path);
    return shape;
}

}  // namespace

std::vector<std::uint64_t> read_tensor_shape(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_header(in, path);
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    Tensor<T> tensor;
    tensor.shape = read_header(in, path);

    std::uint64_t count = 1;
    for (auto e : tensor.shape) {
        if (e != 0 && count > std::numeric_limits<std::uint64_t>::max() / sizeof(T) / e) {
            throw IntegrityError("extents overflow in " + path.string());
        }
        count *= e;
    }
    const auto header_bytes = static_cast<std::uint64_t>(in.tellg());
    const auto file_bytes = static_cast<std::uint64_t>(std::filesystem::file_size(path));
    if (file_bytes - header_bytes != count * sizeof(T)) {
        throw IntegrityError("payload of " + path.string() + " holds " + std::to_string(file_bytes - header_bytes) +
                             " bytes, extents require " + std::to_string(count * sizeof(T)));
    }
    tensor.data.resize(count);
    in.read(reinterpret_cast<char*>(tensor.data.data()), static_cast<std::streamsize>(count * sizeof(T)));
    if (!in) throw FormatError("truncated payload in " + path.string());
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        for (auto& v : tensor.data) v = byteswap(v);
    }
    return tensor;
}

template void write_tensor<float>(const std::filesystem::path&, const Tensor<float>&);
template void write_tensor<std::uint16_t>(const std::filesystem::path&, const Tensor<std::uint16_t>&);
template void write_tensor<std::uint8_t>(const std::filesystem::path&, const Tensor<std::uint8_t>&);
template Tensor<float> read_tensor<float>(const std::filesystem::path&);
template Tensor<std::uint16_t> read_tensor<std::uint16_t>(const std::filesystem::path&);
template Tensor<std::uint8_t> read_tensor<std::uint8_t>(const std::filesystem::path&);

}  // namespace alignedcut
