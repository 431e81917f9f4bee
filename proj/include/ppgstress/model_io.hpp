#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppgstress/compress.hpp"
#include "ppgstress/model.hpp"

// Model container, magic "SDM1". One format for both engines: a quantized
// flag selects float32 tensors (0) or int8/int32 tensors with quantization
// records and a trailing boundary table (1). All integers and floats are
// little-endian.
//
//   "SDM1" | u32 version=1 | u8 quantized | u32 h | u32 w | u32 c | u64 seed
//   u32 layer_count
//   per layer: u8 kind | u8 activation | u32 tensor_count
//     per tensor: u8 dtype (0=f32,1=i8,2=i32) | f64 scale | i32 zero_point
//                 u32 ndims | u32 dims[] | payload
//   if quantized: u32 boundary_count | per boundary f64 lo | f64 hi
//                 f64 scale | i32 zero_point

namespace ppgstress {

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<uint8_t>& out) : out_(out) {}
  void u8(uint8_t v) { out_.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }

 private:
  std::vector<uint8_t>& out_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void need(std::size_t n) const {
    if (pos_ + n > size_)
      throw std::runtime_error("truncated payload: expected " + std::to_string(pos_ + n) +
                               " bytes, got " + std::to_string(size_));
  }
  std::size_t pos() const { return pos_; }

 private:
  const uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw std::runtime_error("read failed: " + path);
  return bytes;
}

constexpr uint32_t kModelVersion = 1;

inline void check_header(ByteReader& r, uint8_t expect_flag) {
  char magic[4];
  for (char& ch : magic) ch = static_cast<char>(r.u8());
  if (std::memcmp(magic, "SDM1", 4) != 0) throw std::runtime_error("bad magic: not a model file");
  const uint32_t version = r.u32();
  if (version != kModelVersion)
    throw std::runtime_error("version mismatch: file version " + std::to_string(version) +
                             ", expected " + std::to_string(kModelVersion));
  const uint8_t flag = r.u8();
  if (flag != expect_flag)
    throw std::runtime_error(expect_flag ? std::string("model file is not quantized")
                                         : std::string("model file is quantized"));
}

inline void write_dims(ByteWriter& w, const std::vector<int>& dims) {
  w.u32(static_cast<uint32_t>(dims.size()));
  for (int d : dims) w.u32(static_cast<uint32_t>(d));
}

inline std::vector<int> read_dims(ByteReader& r) {
  const uint32_t n = r.u32();
  if (n > 8) throw std::runtime_error("corrupt tensor record: rank " + std::to_string(n));
  std::vector<int> dims(n);
  for (auto& d : dims) d = static_cast<int>(r.u32());
  return dims;
}

}  // namespace detail

inline std::vector<uint8_t> serialize_model(const Model& m) {
  std::vector<uint8_t> bytes;
  detail::ByteWriter w(bytes);
  for (char ch : {'S', 'D', 'M', '1'}) w.u8(static_cast<uint8_t>(ch));
  w.u32(detail::kModelVersion);
  w.u8(0);
  w.u32(static_cast<uint32_t>(m.input_h));
  w.u32(static_cast<uint32_t>(m.input_w));
  w.u32(static_cast<uint32_t>(m.input_c));
  w.u64(m.seed);
  w.u32(static_cast<uint32_t>(m.layers.size()));
  for (const auto& l : m.layers) {
    w.u8(static_cast<uint8_t>(l.kind));
    w.u8(static_cast<uint8_t>(l.act));
    const bool has_params = l.kind == LayerKind::conv2d || l.kind == LayerKind::dense;
    w.u32(has_params ? 2u : 0u);
    if (!has_params) continue;
    w.u8(0);  // dtype f32
    w.f64(1.0);
    w.i32(0);
    detail::write_dims(w, l.weights.shape);
    for (float v : l.weights.data) w.f32(v);
    w.u8(0);
    w.f64(1.0);
    w.i32(0);
    detail::write_dims(w, {static_cast<int>(l.bias.size())});
    for (float v : l.bias) w.f32(v);
  }
  return bytes;
}

inline Model deserialize_model(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  detail::check_header(r, 0);
  Model m;
  m.input_h = static_cast<int>(r.u32());
  m.input_w = static_cast<int>(r.u32());
  m.input_c = static_cast<int>(r.u32());
  m.seed = r.u64();
  const uint32_t layer_count = r.u32();
  for (uint32_t li = 0; li < layer_count; ++li) {
    LayerT<float> l;
    l.kind = static_cast<LayerKind>(r.u8());
    l.act = static_cast<Activation>(r.u8());
    const uint32_t tensors = r.u32();
    if (tensors == 2) {
      for (int t = 0; t < 2; ++t) {
        if (r.u8() != 0) throw std::runtime_error("float model file carries a non-f32 tensor");
        r.f64();
        r.i32();
        const auto dims = detail::read_dims(r);
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        if (t == 0) {
          l.weights = TensorT<float>(dims);
          for (auto& v : l.weights.data) v = r.f32();
        } else {
          l.bias.resize(n);
          for (auto& v : l.bias) v = r.f32();
        }
      }
    } else if (tensors != 0) {
      throw std::runtime_error("corrupt layer record: tensor count " + std::to_string(tensors));
    }
    m.layers.push_back(std::move(l));
  }
  boundary_shapes(m);
  return m;
}

inline std::vector<uint8_t> serialize_model(const QuantModel& qm) {
  std::vector<uint8_t> bytes;
  detail::ByteWriter w(bytes);
  for (char ch : {'S', 'D', 'M', '1'}) w.u8(static_cast<uint8_t>(ch));
  w.u32(detail::kModelVersion);
  w.u8(1);
  w.u32(static_cast<uint32_t>(qm.input_h));
  w.u32(static_cast<uint32_t>(qm.input_w));
  w.u32(static_cast<uint32_t>(qm.input_c));
  w.u64(qm.seed);
  w.u32(static_cast<uint32_t>(qm.layers.size()));
  for (const auto& l : qm.layers) {
    w.u8(static_cast<uint8_t>(l.kind));
    w.u8(static_cast<uint8_t>(l.act));
    const bool has_params = l.kind == LayerKind::conv2d || l.kind == LayerKind::dense;
    w.u32(has_params ? 2u : 0u);
    if (!has_params) continue;
    w.u8(1);  // dtype i8
    w.f64(l.weight_scale);
    w.i32(0);
    detail::write_dims(w, l.weight_shape);
    for (int8_t v : l.weights) w.u8(static_cast<uint8_t>(v));
    w.u8(2);  // dtype i32
    w.f64(l.bias_scale);
    w.i32(0);
    detail::write_dims(w, {static_cast<int>(l.bias.size())});
    for (int32_t v : l.bias) w.i32(v);
  }
  w.u32(static_cast<uint32_t>(qm.boundaries.size()));
  for (const auto& b : qm.boundaries) {
    w.f64(b.range.lo);
    w.f64(b.range.hi);
    w.f64(b.params.scale);
    w.i32(b.params.zero_point);
  }
  return bytes;
}

inline QuantModel deserialize_quant_model(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  detail::check_header(r, 1);
  QuantModel qm;
  qm.input_h = static_cast<int>(r.u32());
  qm.input_w = static_cast<int>(r.u32());
  qm.input_c = static_cast<int>(r.u32());
  qm.seed = r.u64();
  const uint32_t layer_count = r.u32();
  for (uint32_t li = 0; li < layer_count; ++li) {
    QuantLayer l;
    l.kind = static_cast<LayerKind>(r.u8());
    l.act = static_cast<Activation>(r.u8());
    const uint32_t tensors = r.u32();
    if (tensors == 2) {
      if (r.u8() != 1) throw std::runtime_error("quantized model file: weights are not int8");
      l.weight_scale = r.f64();
      r.i32();
      l.weight_shape = detail::read_dims(r);
      std::size_t n = 1;
      for (int d : l.weight_shape) n *= static_cast<std::size_t>(d);
      l.weights.resize(n);
      for (auto& v : l.weights) v = static_cast<int8_t>(r.u8());
      if (r.u8() != 2) throw std::runtime_error("quantized model file: biases are not int32");
      l.bias_scale = r.f64();
      r.i32();
      const auto bdims = detail::read_dims(r);
      std::size_t bn = 1;
      for (int d : bdims) bn *= static_cast<std::size_t>(d);
      l.bias.resize(bn);
      for (auto& v : l.bias) v = r.i32();
    } else if (tensors != 0) {
      throw std::runtime_error("corrupt layer record: tensor count " + std::to_string(tensors));
    }
    qm.layers.push_back(std::move(l));
  }
  const uint32_t boundary_count = r.u32();
  for (uint32_t b = 0; b < boundary_count; ++b) {
    BoundaryQuant bq;
    bq.range.lo = r.f64();
    bq.range.hi = r.f64();
    bq.params.scale = r.f64();
    bq.params.zero_point = r.i32();
    qm.boundaries.push_back(bq);
  }
  return qm;
}

/// Peeks the quantized flag without parsing the body.
inline bool is_quantized_model_file(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  for (char& ch : magic) ch = static_cast<char>(r.u8());
  if (std::memcmp(magic, "SDM1", 4) != 0) throw std::runtime_error("bad magic: not a model file");
  const uint32_t version = r.u32();
  if (version != detail::kModelVersion)
    throw std::runtime_error("version mismatch: file version " + std::to_string(version) +
                             ", expected " + std::to_string(detail::kModelVersion));
  return r.u8() != 0;
}

inline void save_model(const Model& m, const std::string& path) {
  detail::write_file(path, serialize_model(m));
}

inline void save_model(const QuantModel& qm, const std::string& path) {
  detail::write_file(path, serialize_model(qm));
}

inline Model load_model(const std::string& path) {
  return deserialize_model(detail::read_file(path));
}

inline QuantModel load_quant_model(const std::string& path) {
  return deserialize_quant_model(detail::read_file(path));
}

}  // namespace ppgstress
