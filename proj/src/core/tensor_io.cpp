#include "mvod/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mvod {
namespace le {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("unexpected end of stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

}  // namespace le

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("TNSR", 4);
  le::put_u32(os, static_cast<std::uint32_t>(t.n()));
  le::put_u32(os, static_cast<std::uint32_t>(t.c()));
  le::put_u32(os, static_cast<std::uint32_t>(t.h()));
  le::put_u32(os, static_cast<std::uint32_t>(t.w()));
  for (float v : t.values()) le::put_f32(os, v);
  if (!os) throw FormatError("tensor write failed");
}

std::optional<Tensor> read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() == 0 && is.eof()) return std::nullopt;
  if (is.gcount() != 4 || std::memcmp(magic, "TNSR", 4) != 0)
    throw FormatError("bad tensor magic (expected TNSR)");
  Shape s;
  s.n = static_cast<int>(le::get_u32(is));
  s.c = static_cast<int>(le::get_u32(is));
  s.h = static_cast<int>(le::get_u32(is));
  s.w = static_cast<int>(le::get_u32(is));
  if (!s.valid()) throw FormatError("tensor record has an empty dimension: " + s.str());
  Tensor t(s);
  for (auto& v : t.values()) v = le::get_f32(is);
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  auto t = read_tensor(is);
  if (!t) throw FormatError(path.string() + ": empty tensor file");
  return *t;
}

std::vector<Tensor> load_tensor_stream(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<Tensor> out;
  while (auto t = read_tensor(is)) out.push_back(std::move(*t));
  return out;
}

}  // namespace mvod
