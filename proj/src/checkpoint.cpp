#include "aad/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <functional>
#include <map>

#include "aad/common.hpp"

namespace aad {

namespace {

constexpr char kDenseMagic[8] = {'A', 'A', 'D', 'W', 'T', 'S', 'v', '1'};
constexpr char kSparseMagic[8] = {'A', 'A', 'D', 'W', 'T', 'S', 's', '1'};

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    const unsigned char b = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw IoError("truncated", "checkpoint: truncated");
  return uint16_t(b[0]) | uint16_t(b[1]) << 8;
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("truncated", "checkpoint: truncated");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("truncated", "checkpoint: truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}

void write_header(std::ostream& os, const std::string& name, const Shape& shape) {
  require(name.size() < 65536, "checkpoint: name too long");
  put_u16(os, uint16_t(name.size()));
  os.write(name.data(), std::streamsize(name.size()));
  const unsigned char rank = static_cast<unsigned char>(shape.size());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int64_t d : shape) put_u32(os, uint32_t(d));
}

// returns false at a clean EOF before the name length
bool read_header(std::istream& is, std::string& name, Shape& shape) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (is.eof() && is.gcount() == 0) return false;
  if (!is) throw IoError("truncated", "checkpoint: truncated name length");
  const uint16_t len = uint16_t(b[0]) | uint16_t(b[1]) << 8;
  name.resize(len);
  is.read(name.data(), len);
  unsigned char rank = 0;
  is.read(reinterpret_cast<char*>(&rank), 1);
  if (!is) throw IoError("truncated", "checkpoint: truncated header");
  shape.resize(rank);
  for (auto& d : shape) d = int64_t(get_u32(is));
  return true;
}

// every named tensor in the store, parameters first then running stats
void for_each_tensor(const ParamStore<float>& store,
                     const std::function<void(const std::string&, Tensor<float>&)>& fn) {
  auto& s = const_cast<ParamStore<float>&>(store);
  for (auto& p : s.params()) fn(p.name, p.var->value);
  for (auto& [name, t] : s.state()) fn(name, *t);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("open-failed", "save_checkpoint: cannot open " + path);
  os.write(kDenseMagic, 8);
  for_each_tensor(store, [&](const std::string& name, Tensor<float>& t) {
    write_header(os, name, t.shape);
    os.write(reinterpret_cast<const char*>(t.ptr()), std::streamsize(t.numel() * 4));
  });
  if (!os) throw IoError("write-failed", "save_checkpoint: short write");
}

void load_checkpoint(const std::string& path, ParamStore<float>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("open-failed", "load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kDenseMagic, 8) != 0)
    throw IoError("bad-magic", "load_checkpoint: bad magic in " + path);

  std::map<std::string, Tensor<float>*> want;
  for_each_tensor(store, [&](const std::string& name, Tensor<float>& t) { want[name] = &t; });

  std::string name;
  Shape shape;
  while (read_header(is, name, shape)) {
    auto it = want.find(name);
    if (it == want.end())
      throw IoError("unknown-param", "load_checkpoint: unexpected tensor '" + name + "'");
    Tensor<float>* dst = it->second;
    if (dst->shape != shape)
      throw IoError("dim-mismatch", "load_checkpoint: shape mismatch for '" + name + "'");
    is.read(reinterpret_cast<char*>(dst->ptr()), std::streamsize(dst->numel() * 4));
    if (!is) throw IoError("truncated", "load_checkpoint: truncated payload for '" + name + "'");
    want.erase(it);
  }
  if (!want.empty())
    throw IoError("missing-param",
                  "load_checkpoint: file lacks tensor '" + want.begin()->first + "'");
}

void save_sparse_checkpoint(const std::string& path, const ParamStore<float>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("open-failed", "save_sparse_checkpoint: cannot open " + path);
  os.write(kSparseMagic, 8);
  for_each_tensor(store, [&](const std::string& name, Tensor<float>& t) {
    write_header(os, name, t.shape);
    std::vector<uint32_t> runs;
    std::vector<float> nonzero;
    int64_t i = 0;
    const int64_t n = t.numel();
    bool zero_run = true;  // runs alternate starting with a zero run
    while (i < n) {
      int64_t j = i;
      if (zero_run) {
        while (j < n && t[j] == 0.f) ++j;
      } else {
        while (j < n && t[j] != 0.f) {
          nonzero.push_back(t[j]);
          ++j;
        }
      }
      runs.push_back(uint32_t(j - i));
      zero_run = !zero_run;
      i = j;
    }
    put_u64(os, uint64_t(nonzero.size()));
    put_u32(os, uint32_t(runs.size()));
    for (uint32_t r : runs) put_u32(os, r);
    os.write(reinterpret_cast<const char*>(nonzero.data()),
             std::streamsize(nonzero.size() * 4));
  });
  if (!os) throw IoError("write-failed", "save_sparse_checkpoint: short write");
}

void load_sparse_checkpoint(const std::string& path, ParamStore<float>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("open-failed", "load_sparse_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kSparseMagic, 8) != 0)
    throw IoError("bad-magic", "load_sparse_checkpoint: bad magic in " + path);

  std::map<std::string, Tensor<float>*> want;
  for_each_tensor(store, [&](const std::string& name, Tensor<float>& t) { want[name] = &t; });

  std::string name;
  Shape shape;
  while (read_header(is, name, shape)) {
    auto it = want.find(name);
    if (it == want.end())
      throw IoError("unknown-param", "load_sparse_checkpoint: unexpected tensor '" + name + "'");
    Tensor<float>* dst = it->second;
    if (dst->shape != shape)
      throw IoError("dim-mismatch", "load_sparse_checkpoint: shape mismatch for '" + name + "'");
    const uint64_t advertised = get_u64(is);
    const uint32_t n_runs = get_u32(is);
    std::vector<uint32_t> runs(n_runs);
    for (auto& r : runs) r = get_u32(is);
    int64_t total = 0, nnz = 0;
    for (uint32_t k = 0; k < n_runs; ++k) {
      total += runs[k];
      if (k % 2 == 1) nnz += runs[k];
    }
    if (total != dst->numel() || uint64_t(nnz) != advertised)
      throw IoError("sparsity-mismatch",
                    "load_sparse_checkpoint: advertised sparsity disagrees for '" + name + "'");
    std::vector<float> nonzero(static_cast<size_t>(nnz));
    is.read(reinterpret_cast<char*>(nonzero.data()), std::streamsize(nnz * 4));
    if (!is)
      throw IoError("truncated", "load_sparse_checkpoint: truncated payload for '" + name + "'");
    int64_t pos = 0;
    size_t src = 0;
    for (uint32_t k = 0; k < n_runs; ++k) {
      if (k % 2 == 0) {
        for (uint32_t r = 0; r < runs[k]; ++r) (*dst)[pos++] = 0.f;
      } else {
        for (uint32_t r = 0; r < runs[k]; ++r) (*dst)[pos++] = nonzero[src++];
      }
    }
    want.erase(it);
  }
  if (!want.empty())
    throw IoError("missing-param",
                  "load_sparse_checkpoint: file lacks tensor '" + want.begin()->first + "'");
}

}  // namespace aad
