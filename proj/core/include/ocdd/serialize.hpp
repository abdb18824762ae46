#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "ocdd/tensor.hpp"

namespace ocdd::nd {

/// Little-endian binary tensor container. Layout:
///   magic "OCDD", format version u32, then per tensor:
///   name byte-length u32, UTF-8 name, rank u32, dims u64 each,
///   raw 32-bit float payload.
/// Used by checkpoint files and dataset trajectory files.
inline constexpr uint32_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Streaming writer; header is emitted on open.
class TensorFileWriter {
 public:
  explicit TensorFileWriter(const std::string& path);
  ~TensorFileWriter();
  TensorFileWriter(const TensorFileWriter&) = delete;
  TensorFileWriter& operator=(const TensorFileWriter&) = delete;

  void write(const std::string& name, const Tensor& t);
  void close();

 private:
  std::FILE* f_ = nullptr;
  std::string path_;
};

void write_tensor_file(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_file(const std::string& path);

}  // namespace ocdd::nd
