#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "crossfuse/tensor.hpp"

namespace crossfuse {

/// Binary tensor layout ("CFTN"):
///   4 bytes  magic "CFTN"
///   u8       version (1)
///   u8       dtype (0 = f32)
///   u32      ndim
///   ndim*u32 dims
///   payload  little-endian f32, row-major
/// All integers little-endian.
inline constexpr char kTensorMagic[4] = {'C', 'F', 'T', 'N'};
inline constexpr std::uint8_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

using Bytes = std::vector<std::uint8_t>;

void append_u32(Bytes& out, std::uint32_t value);
void append_tensor(Bytes& out, const Tensor& tensor);
Bytes encode_tensor(const Tensor& tensor);

/// Sequential little-endian reader over a byte buffer; errors name the source.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source);

  std::uint8_t read_u8();
  std::uint32_t read_u32();
  std::string read_string(std::size_t length);
  Tensor read_tensor();

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n);
  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

Tensor decode_tensor(const Bytes& bytes, const std::string& source);

Bytes read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames over the target on success.
void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace crossfuse
