#include "ocdd/serialize.hpp"

#include <cstring>

namespace ocdd::nd {

namespace {

constexpr char kMagic[4] = {'O', 'C', 'D', 'D'};

void put_u32(std::FILE* f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  if (std::fwrite(b, 1, 4, f) != 4) throw_io("tensor container: short write");
}

void put_u64(std::FILE* f, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  if (std::fwrite(b, 1, 8, f) != 8) throw_io("tensor container: short write");
}

bool get_u32(std::FILE* f, uint32_t& v) {
  unsigned char b[4];
  size_t n = std::fread(b, 1, 4, f);
  if (n == 0) return false;
  if (n != 4) throw_format("tensor container: truncated u32");
  v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
      (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}

uint64_t get_u64(std::FILE* f) {
  unsigned char b[8];
  if (std::fread(b, 1, 8, f) != 8) throw_format("tensor container: truncated u64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_record(std::FILE* f, const std::string& name, const Tensor& t) {
  put_u32(f, static_cast<uint32_t>(name.size()));
  if (!name.empty() && std::fwrite(name.data(), 1, name.size(), f) != name.size())
    throw_io("tensor container: short write");
  put_u32(f, static_cast<uint32_t>(t.rank()));
  for (int d : t.dims) put_u64(f, static_cast<uint64_t>(d));
  static_assert(sizeof(float) == 4);
  if (!t.data.empty() &&
      std::fwrite(t.data.data(), sizeof(float), t.data.size(), f) != t.data.size())
    throw_io("tensor container: short write");
}

}  // namespace

TensorFileWriter::TensorFileWriter(const std::string& path) : path_(path) {
  f_ = std::fopen(path.c_str(), "wb");
  if (!f_) throw_io("cannot open for write: " + path);
  if (std::fwrite(kMagic, 1, 4, f_) != 4) throw_io("tensor container: short write");
  put_u32(f_, kContainerVersion);
}

TensorFileWriter::~TensorFileWriter() {
  if (f_) std::fclose(f_);
}

void TensorFileWriter::write(const std::string& name, const Tensor& t) {
  if (!f_) throw_io("tensor container: writer already closed");
  write_record(f_, name, t);
}

void TensorFileWriter::close() {
  if (f_) {
    if (std::fclose(f_) != 0) {
      f_ = nullptr;
      throw_io("tensor container: close failed for " + path_);
    }
    f_ = nullptr;
  }
}

void write_tensor_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
  TensorFileWriter w(path);
  for (const auto& nt : tensors) w.write(nt.name, nt.tensor);
  w.close();
}

std::vector<NamedTensor> read_tensor_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw_io("cannot open for read: " + path);
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw_format("tensor container: bad magic in " + path);
  uint32_t version;
  if (!get_u32(f, version) || version != kContainerVersion)
    throw_format("tensor container: unsupported version in " + path);

  std::vector<NamedTensor> out;
  uint32_t name_len;
  while (get_u32(f, name_len)) {
    NamedTensor nt;
    nt.name.resize(name_len);
    if (name_len > 0 && std::fread(nt.name.data(), 1, name_len, f) != name_len)
      throw_format("tensor container: truncated name");
    uint32_t rank;
    if (!get_u32(f, rank)) throw_format("tensor container: truncated rank");
    Dims dims(rank);
    for (uint32_t i = 0; i < rank; ++i) dims[i] = static_cast<int>(get_u64(f));
    int64_t n = numel(dims);
    Tensor t = Tensor::zeros(dims);
    if (n > 0 && std::fread(t.data.data(), sizeof(float), static_cast<size_t>(n), f) !=
                     static_cast<size_t>(n))
      throw_format("tensor container: truncated payload for " + nt.name);
    nt.tensor = std::move(t);
    out.push_back(std::move(nt));
  }
  return out;
}

}  // namespace ocdd::nd
