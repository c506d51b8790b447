#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "mgst/tensor.hpp"

namespace mgst {
inline namespace MGST_ABI {

// "MGT1" | u32 rank | rank x u32 extents | f32 payload, all little-endian.
inline constexpr char kTensorMagic[4] = {'M', 'G', 'T', '1'};

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace binio {

void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_f64(std::ostream& os, double v);
void put_string(std::ostream& os, const std::string& s);

std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
double get_f64(std::istream& is);
std::string get_string(std::istream& is);
void expect_magic(std::istream& is, const char (&magic)[4], const char* what);

}  // namespace binio

}  // namespace MGST_ABI
}  // namespace mgst
