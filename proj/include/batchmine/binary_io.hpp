#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace batchmine {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t state = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text,
                      std::uint64_t state = 0xcbf29ce484222325ULL);

std::string to_hex(std::uint64_t value);
std::uint64_t from_hex(std::string_view text);

/// Append-only little-endian byte buffer.
class ByteWriter {
 public:
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f32(float v);
  void put_bytes(std::span<const std::uint8_t> bytes);
  void put_string(std::string_view s);  // u32 length prefix
  void put_u32s(std::span<const std::uint32_t> values);
  void put_u64s(std::span<const std::uint64_t> values);
  void put_f32s(std::span<const float> values);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; throws FormatError on overrun.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t get_u32();
  std::uint64_t get_u64();
  std::string get_string();
  void get_u32s(std::span<std::uint32_t> out);
  void get_u64s(std::span<std::uint64_t> out);
  void get_f32s(std::span<float> out);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t count, const char* what) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Framed binary artifact shared by every on-disk format except the text
/// manifests:
///
///   u32 header length H | H bytes of UTF-8 JSON header | body | u64 FNV-1a
///
/// The trailing checksum covers every byte that precedes it.
struct ArtifactBytes {
  nlohmann::json header;
  std::vector<std::uint8_t> bytes;  // whole file
  std::size_t body_offset = 0;

  std::span<const std::uint8_t> body() const {
    return std::span<const std::uint8_t>(bytes).subspan(body_offset);
  }
};

/// Serializes header + body + checksum. Returns the checksum.
std::uint64_t write_artifact(const std::filesystem::path& path, const nlohmann::json& header,
                             std::span<const std::uint8_t> body);

/// Same framing in memory, used for checksumming without touching disk.
std::vector<std::uint8_t> frame_artifact(const nlohmann::json& header,
                                         std::span<const std::uint8_t> body);

/// Reads the file and parses the header. `kind` must match header["kind"].
/// The body (including its trailing checksum) is left for the caller to
/// validate with verify_artifact_checksum once its length is known.
ArtifactBytes read_artifact(const std::filesystem::path& path, std::string_view kind);

/// Validates that exactly `body_length` body bytes are followed by a matching
/// checksum. Returns the checksum.
std::uint64_t verify_artifact_checksum(const ArtifactBytes& artifact, std::size_t body_length);

}  // namespace batchmine
