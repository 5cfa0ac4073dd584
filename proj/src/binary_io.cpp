#include "batchmine/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "batchmine/error.hpp"

namespace batchmine {

static_assert(std::endian::native == std::endian::little,
              "bulk array I/O assumes a little-endian host");

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state) {
  for (std::uint8_t b : bytes) {
    state ^= b;
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t state) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), state);
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t from_hex(std::string_view text) {
  if (text.empty() || text.size() > 16) throw FormatError("bad hex value '" + std::string(text) + "'");
  std::uint64_t v = 0;
  for (char c : text) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F') v |= static_cast<std::uint64_t>(c - 'A' + 10);
    else throw FormatError("bad hex value '" + std::string(text) + "'");
  }
  return v;
}

void ByteWriter::put_u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::put_bytes(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::put_string(std::string_view s) {
  put_u32(static_cast<std::uint32_t>(s.size()));
  put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

void ByteWriter::put_u32s(std::span<const std::uint32_t> values) {
  put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()));
}

void ByteWriter::put_u64s(std::span<const std::uint64_t> values) {
  put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()));
}

void ByteWriter::put_f32s(std::span<const float> values) {
  put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()));
}

void ByteReader::need(std::size_t count, const char* what) const {
  if (remaining() < count) {
    throw FormatError(std::string("unexpected end of data while reading ") + what);
  }
}

std::uint32_t ByteReader::get_u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::get_u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

std::string ByteReader::get_string() {
  const std::uint32_t len = get_u32();
  need(len, "string");
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
  pos_ += len;
  return s;
}

void ByteReader::get_u32s(std::span<std::uint32_t> out) {
  need(out.size_bytes(), "u32 array");
  if (!out.empty()) std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

void ByteReader::get_u64s(std::span<std::uint64_t> out) {
  need(out.size_bytes(), "u64 array");
  if (!out.empty()) std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

void ByteReader::get_f32s(std::span<float> out) {
  need(out.size_bytes(), "f32 array");
  if (!out.empty()) std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("failed reading '" + path.string() + "'");
  }
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<std::uint8_t> frame_artifact(const nlohmann::json& header,
                                         std::span<const std::uint8_t> body) {
  const std::string text = header.dump();
  ByteWriter w;
  w.put_string(text);
  w.put_bytes(body);
  const std::uint64_t checksum = fnv1a64(w.bytes());
  w.put_u64(checksum);
  return w.take();
}

std::uint64_t write_artifact(const std::filesystem::path& path, const nlohmann::json& header,
                             std::span<const std::uint8_t> body) {
  const auto bytes = frame_artifact(header, body);
  write_file(path, bytes);
  ByteReader r(std::span<const std::uint8_t>(bytes).last(8));
  return r.get_u64();
}

ArtifactBytes read_artifact(const std::filesystem::path& path, std::string_view kind) {
  ArtifactBytes a;
  a.bytes = read_file(path);
  ByteReader r(a.bytes);
  std::string text;
  try {
    text = r.get_string();
  } catch (const FormatError&) {
    throw FormatError("malformed header in '" + path.string() + "'");
  }
  try {
    a.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed header in '" + path.string() + "': " + e.what());
  }
  if (!a.header.is_object() || !a.header.contains("kind") || a.header["kind"] != kind) {
    throw FormatError("malformed header in '" + path.string() + "': expected kind '" +
                      std::string(kind) + "'");
  }
  a.body_offset = r.position();
  return a;
}

std::uint64_t verify_artifact_checksum(const ArtifactBytes& artifact, std::size_t body_length) {
  const std::size_t available = artifact.bytes.size() - artifact.body_offset;
  if (available < body_length + 8) throw FormatError("file truncated before checksum");
  if (available > body_length + 8) throw FormatError("trailing bytes after checksum");
  const std::size_t end = artifact.body_offset + body_length;
  const std::uint64_t expected = fnv1a64(std::span(artifact.bytes).first(end));
  ByteReader r(std::span(artifact.bytes).subspan(end));
  const std::uint64_t stored = r.get_u64();
  if (stored != expected) {
    throw FormatError("checksum mismatch (stored " + to_hex(stored) + ", computed " +
                      to_hex(expected) + ")");
  }
  return stored;
}

}  // namespace batchmine
