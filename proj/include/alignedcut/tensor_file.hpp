#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace alignedcut {

/// Dense C-contiguous tensor as stored in an "ACFS" container.
///
/// Layout on disk (all integers little-endian):
///   "ACFS" | u32 version (=1) | u32 rank | rank x u64 extents | payload
/// The payload element type is not recorded in the header; callers know it
/// from context (features and brain targets are f32, label masks u16, colors u8).
template <typename T>
struct Tensor {
    std::vector<std::uint64_t> shape;
    std::vector<T> data;

    std::uint64_t element_count() const noexcept {
        std::uint64_t n = 1;
        for (auto e : shape) n *= e;
        return n;
    }
};

inline constexpr std::uint32_t kTensorFileVersion = 1;

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& tensor);

/// Reads and validates a container. Throws FormatError on a bad header and
/// IntegrityError when the payload size disagrees with the extents.
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path);

/// Reads only the extents from the header.
std::vector<std::uint64_t> read_tensor_shape(const std::filesystem::path& path);

extern template void write_tensor<float>(const std::filesystem::path&, const Tensor<float>&);
extern template void write_tensor<std::uint16_t>(const std::filesystem::path&, const Tensor<std::uint16_t>&);
extern template void write_tensor<std::uint8_t>(const std::filesystem::path&, const Tensor<std::uint8_t>&);
extern template Tensor<float> read_tensor<float>(const std::filesystem::path&);
extern template Tensor<std::uint16_t> read_tensor<std::uint16_t>(const std::filesystem::path&);
extern template Tensor<std::uint8_t> read_tensor<std::uint8_t>(const std::filesystem::path&);

}  // namespace alignedcut
