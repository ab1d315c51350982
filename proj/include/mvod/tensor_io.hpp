#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mvod/tensor.hpp"

namespace mvod {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw tensor record: "TNSR", u32 n, u32 c, u32 h, u32 w (little-endian),
// then n*c*h*w float32 values. A stream file is a concatenation of records.

void write_tensor(std::ostream& os, const Tensor& t);
/// Returns nullopt at a clean end of stream.
std::optional<Tensor> read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);
std::vector<Tensor> load_tensor_stream(const std::filesystem::path& path);

namespace le {
void put_u32(std::ostream& os, std::uint32_t v);
std::uint32_t get_u32(std::istream& is);
void put_f32(std::ostream& os, float v);
float get_f32(std::istream& is);
}  // namespace le

}  // namespace mvod
