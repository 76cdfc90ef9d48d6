#include "crossfuse/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <system_error>

#include "crossfuse/errors.hpp"

namespace crossfuse {

void append_u32(Bytes& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void append_tensor(Bytes& out, const Tensor& tensor) {
  out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
  out.push_back(kTensorVersion);
  out.push_back(kDtypeF32);
  append_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) append_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * tensor.numel());
  for (float v : tensor.data()) append_u32(out, std::bit_cast<std::uint32_t>(v));
}

Bytes encode_tensor(const Tensor& tensor) {
  Bytes out;
  append_tensor(out, tensor);
  return out;
}

ByteReader::ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

void ByteReader::fail(const std::string& what) const {
  throw FormatError(source_ + ": " + what + " (offset " + std::to_string(pos_) + ")");
}

void ByteReader::need(std::size_t n) {
  if (bytes_.size() - pos_ < n) fail("truncated, needed " + std::to_string(n) + " more bytes");
}

std::uint8_t ByteReader::read_u8() {
  need(1);
  return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint32_t ByteReader::read_u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::string ByteReader::read_string(std::size_t length) {
  need(length);
  std::string s(bytes_.substr(pos_, length));
  pos_ += length;
  return s;
}

Tensor ByteReader::read_tensor() {
  if (read_string(4) != std::string_view(kTensorMagic, 4)) fail("bad tensor magic");
  const std::uint8_t version = read_u8();
  if (version != kTensorVersion) fail("unsupported tensor version " + std::to_string(version));
  const std::uint8_t dtype = read_u8();
  if (dtype != kDtypeF32) fail("unsupported dtype " + std::to_string(dtype));
  const std::uint32_t ndim = read_u32();
  if (ndim > 16) fail("implausible rank " + std::to_string(ndim));
  Shape shape(ndim);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = read_u32();
    if (d == 0) fail("zero-sized dimension");
    count *= d;
  }
  if (remaining() / 4 < count) fail("truncated payload, expected " + std::to_string(count) + " floats");
  std::vector<float> data(count);
  for (float& v : data) v = std::bit_cast<float>(read_u32());
  return Tensor(std::move(shape), std::move(data));
}

Tensor decode_tensor(const Bytes& bytes, const std::string& source) {
  ByteReader reader(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), source);
  Tensor t = reader.read_tensor();
  if (!reader.at_end()) reader.fail("trailing bytes after tensor");
  return t;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes) {
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  write_file_atomic(path, encode_tensor(tensor));
}

Tensor load_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file(path), path.string());
}

}  // namespace crossfuse
