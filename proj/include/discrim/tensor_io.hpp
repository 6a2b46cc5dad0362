#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "discrim/tensor.hpp"

namespace discrim {

// Single tensor, little-endian:
//   "DTRN0001" | u32 rank | u32 dims[rank] | f64 payload[product(dims)]
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Named tensors plus a free-form text manifest.
///
/// File layout, little-endian:
///   "DCKP0001" | u32 manifest bytes | manifest (UTF-8 "key=value" lines)
///   | u32 tensor count | { u32 name bytes | name | tensor record }*
/// where each tensor record is the single-tensor format above.
struct TensorArchive {
  std::map<std::string, std::string> manifest;
  std::map<std::string, Tensor> tensors;

  const Tensor& tensor(const std::string& name) const;
  const std::string& value(const std::string& key) const;
};

void write_archive(std::ostream& out, const TensorArchive& archive);
TensorArchive read_archive(std::istream& in);

void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

}  // namespace discrim
