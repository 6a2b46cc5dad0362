#include "discrim/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace discrim {

namespace {

constexpr std::array<char, 8> kTensorMagic{'D', 'T', 'R', 'N', '0', '0', '0', '1'};
constexpr std::array<char, 8> kArchiveMagic{'D', 'C', 'K', 'P', '0', '0', '0', '1'};

// Payload guard: refuse rank or sizes no real file of ours would carry.
constexpr std::uint32_t kMaxRank = 16;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b.data(), b.size());
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  out.write(b.data(), b.size());
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(fmt::format("truncated input while reading {}", what));
  }
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  std::array<unsigned char, 4> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), b.size(), what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::string get_string(std::istream& in, std::uint32_t n, const char* what) {
  std::string s(n, '\0');
  read_exact(in, s.data(), n, what);
  return s;
}

std::string encode_manifest(const std::map<std::string, std::string>& manifest) {
  std::string text;
  for (const auto& [k, v] : manifest) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError(fmt::format("manifest entry '{}' contains a reserved character", k));
    }
    text += k;
    text += '=';
    text += v;
    text += '\n';
  }
  return text;
}

std::map<std::string, std::string> decode_manifest(const std::string& text) {
  std::map<std::string, std::string> manifest;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(fmt::format("bad manifest line '{}'", line));
    manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return manifest;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic.data(), kTensorMagic.size());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put_f64(out, v);
  if (!out) throw FormatError("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 8> magic{};
  read_exact(in, magic.data(), magic.size(), "tensor magic");
  if (magic != kTensorMagic) throw FormatError("bad magic: not a DTRN0001 tensor");
  const std::uint32_t rank = get_u32(in, "tensor rank");
  if (rank > kMaxRank) throw FormatError(fmt::format("implausible tensor rank {}", rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = get_u32(in, "tensor dims");
    count *= d;
    if (count > kMaxElements) throw FormatError("tensor payload too large");
  }
  std::vector<double> data(count);
  std::vector<unsigned char> raw(count * 8);
  read_exact(in, reinterpret_cast<char*>(raw.data()), raw.size(), "tensor payload");
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | raw[i * 8 + static_cast<std::size_t>(b)];
    data[i] = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot open {} for writing", path.string()));
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open {}", path.string()));
  return read_tensor(in);
}

const Tensor& TensorArchive::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError(fmt::format("archive has no tensor '{}'", name));
  return it->second;
}

const std::string& TensorArchive::value(const std::string& key) const {
  auto it = manifest.find(key);
  if (it == manifest.end()) throw FormatError(fmt::format("archive manifest has no key '{}'", key));
  return it->second;
}

void write_archive(std::ostream& out, const TensorArchive& archive) {
  out.write(kArchiveMagic.data(), kArchiveMagic.size());
  const std::string text = encode_manifest(archive.manifest);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(out, static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, t] : archive.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
  if (!out) throw FormatError("write_archive: stream failure");
}

TensorArchive read_archive(std::istream& in) {
  std::array<char, 8> magic{};
  read_exact(in, magic.data(), magic.size(), "archive magic");
  if (magic != kArchiveMagic) throw FormatError("bad magic: not a DCKP0001 archive");
  TensorArchive archive;
  const std::uint32_t manifest_bytes = get_u32(in, "manifest length");
  if (manifest_bytes > (1u << 24)) throw FormatError("implausible manifest length");
  archive.manifest = decode_manifest(get_string(in, manifest_bytes, "manifest"));
  const std::uint32_t count = get_u32(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_bytes = get_u32(in, "tensor name length");
    if (name_bytes > 4096) throw FormatError("implausible tensor name length");
    std::string name = get_string(in, name_bytes, "tensor name");
    archive.tensors.emplace(std::move(name), read_tensor(in));
  }
  return archive;
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot open {} for writing", path.string()));
  write_archive(out, archive);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open {}", path.string()));
  return read_archive(in);
}

}  // namespace discrim
