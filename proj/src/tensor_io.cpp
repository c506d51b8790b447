#include "mgst/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace mgst {
inline namespace MGST_ABI {
namespace binio {
namespace {

void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    fail(ErrorCode::kTruncatedPayload, std::string("truncated payload while reading ") + what);
}

}  // namespace

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4, "u32 field");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  read_exact(is, reinterpret_cast<char*>(b), 8, "u64 field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  read_exact(is, s.data(), n, "string");
  return s;
}

void expect_magic(std::istream& is, const char (&magic)[4], const char* what) {
  char got[4] = {};
  is.read(got, 4);
  if (is.gcount() != 4) fail(ErrorCode::kTruncatedPayload, std::string("truncated header in ") + what);
  if (std::memcmp(got, magic, 4) != 0)
    fail(ErrorCode::kBadMagic, std::string("bad magic in ") + what + ": expected " + std::string(magic, 4));
}

}  // namespace binio

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  binio::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) binio::put_u32(os, static_cast<std::uint32_t>(e));
  std::vector<unsigned char> buf(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t[i]));
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Tensor read_tensor(std::istream& is) {
  binio::expect_magic(is, kTensorMagic, "tensor");
  const std::uint32_t rank = binio::get_u32(is);
  require(rank <= 16, ErrorCode::kExtentMismatch, "tensor rank " + std::to_string(rank) + " is implausible");
  Shape shape(rank);
  for (auto& e : shape) e = binio::get_u32(is);
  const std::size_t n = shape_numel(shape);
  std::vector<unsigned char> buf(n * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size())
    fail(ErrorCode::kTruncatedPayload, "truncated payload: declared extents " + shape_str(shape) + " need " +
                                           std::to_string(buf.size()) + " bytes, got " + std::to_string(is.gcount()));
  std::vector<Real> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + b]) << (8 * b);
    data[i] = static_cast<Real>(std::bit_cast<float>(bits));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  write_tensor(os, t);
  require(static_cast<bool>(os), ErrorCode::kIo, "write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace MGST_ABI
}  // namespace mgst
