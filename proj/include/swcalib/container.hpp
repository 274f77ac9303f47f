#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swcalib/tensor.hpp"

namespace swcalib {

// "SWQ1" weight container, all integers little-endian:
//   magic "SWQ1" | u32 version | u64 tensor count
//   per tensor: u32 name bytes | UTF-8 name | u32 rank | u64 dims[rank] |
//               u64 byte offset into the payload
//   payload: raw f64 values
constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

class WeightContainer {
   public:
    void add(std::string name, const Tensor& t);
    void add(NamedTensor entry);

    const std::vector<NamedTensor>& entries() const { return entries_; }
    const NamedTensor* find(const std::string& name) const;
    // Throws FormatError(kMalformed) when absent.
    Tensor get(const std::string& name, bool requires_grad = false) const;
    bool contains(const std::string& name) const { return find(name) != nullptr; }

   private:
    std::vector<NamedTensor> entries_;
};

// Offsets are assigned in entry order, back to back.
std::vector<std::uint8_t> encode_container(const WeightContainer& c);
// Raises FormatError with a distinct code per failure: bad magic, version
// mismatch, truncated payload, overlapping offsets, malformed manifest.
WeightContainer decode_container(std::span<const std::uint8_t> bytes);

void save_container(const std::filesystem::path& path, const WeightContainer& c);
WeightContainer load_container(const std::filesystem::path& path);

}  // namespace swcalib
