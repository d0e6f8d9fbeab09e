// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/container.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace kfade {

namespace {

constexpr std::uint8_t kMagic[4] = {0x4B, 0x46, 0x54, 0x31};  // "KFT1"
constexpr std::uint8_t kDtypeF64 = 0;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const std::uint8_t* p = take(2);
    return static_cast<std::uint16_t>(p[0]) |
           static_cast<std::uint16_t>(p[1]) << 8;
  }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str(std::size_t n) {
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw Error::io("container truncated");
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) n *= d;
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode_container(const std::vector<TensorEntry>& entries) {
  std::set<std::string> names;
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const TensorEntry& e : entries) {
    if (!names.insert(e.name).second) {
      throw Error::io("container: duplicate entry name '" + e.name + "'");
    }
    if (e.name.size() > 0xffff) throw Error::io("container: name too long");
    if (element_count(e.dims) != e.data.size()) {
      throw Error::io("container: entry '" + e.name +
                      "' payload does not match dims");
    }
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(kDtypeF64);
    if (e.dims.size() > 0xff) throw Error::io("container: rank too large");
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (std::uint64_t d : e.dims) put_u64(out, d);
    for (double v : e.data) put_f64(out, v);
  }
  return out;
}

std::vector<TensorEntry> decode_container(const std::vector<std::uint8_t>& bytes) {
  Reader reader(bytes);
  const std::string magic = reader.str(4);
  if (magic != std::string(reinterpret_cast<const char*>(kMagic), 4)) {
    throw Error::io("container: bad magic bytes");
  }
  const std::uint32_t count = reader.u32();
  std::vector<TensorEntry> entries;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    const std::uint16_t name_len = reader.u16();
    e.name = reader.str(name_len);
    if (!names.insert(e.name).second) {
      throw Error::io("container: duplicate entry name '" + e.name + "'");
    }
    const std::uint8_t dtype = reader.u8();
    if (dtype != kDtypeF64) {
      throw Error::io("container: unknown dtype code " + std::to_string(dtype));
    }
    const std::uint8_t rank = reader.u8();
    e.dims.resize(rank);
    for (std::uint8_t r = 0; r < rank; ++r) e.dims[r] = reader.u64();
    const std::uint64_t n = element_count(e.dims);
    if (n > (1ull << 32)) throw Error::io("container: entry too large");
    e.data.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) e.data[k] = reader.f64();
    entries.push_back(std::move(e));
  }
  if (!reader.exhausted()) throw Error::io("container: trailing bytes");
  return entries;
}

void write_container(const std::filesystem::path& path,
                     const std::vector<TensorEntry>& entries) {
  const std::vector<std::uint8_t> bytes = encode_container(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error::io("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error::io("write failed for '" + path.string() + "'");
}

std::vector<TensorEntry> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error::io("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

TensorEntry matrix_entry(const std::string& name, const Matrix& m) {
  TensorEntry e;
  e.name = name;
  e.dims = {static_cast<std::uint64_t>(m.rows()),
            static_cast<std::uint64_t>(m.cols())};
  e.data.reserve(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) e.data.push_back(m(i, j));
  }
  return e;
}

TensorEntry vector_entry(const std::string& name, const Vector& v) {
  TensorEntry e;
  e.name = name;
  e.dims = {static_cast<std::uint64_t>(v.size())};
  e.data.assign(v.data(), v.data() + v.size());
  return e;
}

TensorEntry scalar_entry(const std::string& name, double value) {
  TensorEntry e;
  e.name = name;
  e.dims = {};
  e.data = {value};
  return e;
}

TensorEntry string_entry(const std::string& name, const std::string& text) {
  TensorEntry e;
  e.name = name;
  e.dims = {static_cast<std::uint64_t>(text.size())};
  e.data.reserve(text.size());
  for (unsigned char c : text) e.data.push_back(static_cast<double>(c));
  return e;
}

Matrix entry_to_matrix(const TensorEntry& e) {
  if (e.dims.size() != 2) {
    throw Error::io("entry '" + e.name + "' is not rank 2");
  }
  Matrix m(e.dims[0], e.dims[1]);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = e.data[k++];
  }
  return m;
}

Vector entry_to_vector(const TensorEntry& e) {
  if (e.dims.size() != 1) {
    throw Error::io("entry '" + e.name + "' is not rank 1");
  }
  Vector v(e.dims[0]);
  for (std::size_t i = 0; i < e.data.size(); ++i) v(i) = e.data[i];
  return v;
}

double entry_to_scalar(const TensorEntry& e) {
  if (!e.dims.empty() || e.data.size() != 1) {
    throw Error::io("entry '" + e.name + "' is not a scalar");
  }
  return e.data[0];
}

std::string entry_to_string(const TensorEntry& e) {
  if (e.dims.size() != 1) {
    throw Error::io("entry '" + e.name + "' is not rank 1");
  }
  std::string s;
  s.reserve(e.data.size());
  for (double v : e.data) {
    if (v < 0.0 || v > 255.0 || v != static_cast<double>(static_cast<unsigned char>(v))) {
      throw Error::io("entry '" + e.name + "' is not a byte string");
    }
    s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return s;
}

const TensorEntry& find_entry(const std::vector<TensorEntry>& entries,
                              const std::string& name) {
  for (const TensorEntry& e : entries) {
    if (e.name == name) return e;
  }
  throw Error::io("container entry '" + name + "' not found");
}

bool has_entry(const std::vector<TensorEntry>& entries, const std::string& name) {
  for (const TensorEntry& e : entries) {
    if (e.name == name) return true;
  }
  return false;
}

}  // namespace kfade
