#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "foura/adapter.hpp"
#include "foura/config.hpp"
#include "foura/csv.hpp"
#include "foura/errors.hpp"
#include "foura/matrix.hpp"

namespace foura {

inline constexpr char kCheckpointMagic[5] = {'F', 'O', 'U', 'R', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline constexpr std::uint8_t kDtypeF64 = 0;
inline constexpr std::uint8_t kDtypeF32 = 1;

struct TensorRecord {
  std::string name;
  std::uint8_t dtype = kDtypeF64;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;  // row-major; f32 tensors are widened on read
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;  // ordered key=value lines
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(std::string_view name) const {
    for (const TensorRecord& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  std::string meta_value(std::string_view key) const {
    for (const auto& [k, v] : meta) {
      if (k == key) return v;
    }
    throw CheckpointError("checkpoint meta is missing key '" + std::string(key) + "'");
  }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32(out, bits);
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  void bytes(void* dst, std::size_t n) {
    if (pos_ + n > data_.size()) throw CheckpointError("checkpoint truncated");
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }

  std::uint16_t u16() {
    unsigned char b[2];
    bytes(b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    unsigned char b[8];
    bytes(b, 8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  bool exhausted() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// On-disk layout (all integers little-endian):
//   magic "FOUR1" | version u16 | meta_len u32 + meta bytes |
//   tensor_count u32 | per tensor: name_len u32 + name, dtype u8, ndim u8,
//   dims u32 each, payload of row-major scalars (f64 or f32 per dtype).
inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u16(out, kCheckpointVersion);

  std::string meta;
  for (const auto& [k, v] : ckpt.meta) {
    meta += k;
    meta += '=';
    meta += v;
    meta += '\n';
  }
  detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;

  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const TensorRecord& t : ckpt.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.dims.size()));
    std::size_t count = 1;
    for (std::uint32_t d : t.dims) {
      detail::put_u32(out, d);
      count *= d;
    }
    if (count != t.values.size()) {
      throw CheckpointError("tensor '" + t.name + "' dims do not match value count");
    }
    if (t.dtype == kDtypeF64) {
      for (double v : t.values) detail::put_f64(out, v);
    } else if (t.dtype == kDtypeF32) {
      for (double v : t.values) detail::put_f32(out, static_cast<float>(v));
    } else {
      throw CheckpointError("tensor '" + t.name + "' has unknown dtype");
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  char magic[5];
  r.bytes(magic, 5);
  if (std::memcmp(magic, kCheckpointMagic, 5) != 0) {
    throw CheckpointError("bad checkpoint magic");
  }
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::uint32_t meta_len = r.u32();
  const std::string meta = r.str(meta_len);
  std::size_t start = 0;
  while (start < meta.size()) {
    std::size_t end = meta.find('\n', start);
    if (end == std::string::npos) end = meta.size();
    const std::string line = meta.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed meta line '" + line + "'");
    ckpt.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }

  const std::uint32_t count = r.u32();
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    const std::uint32_t name_len = r.u32();
    t.name = r.str(name_len);
    t.dtype = r.u8();
    if (t.dtype != kDtypeF64 && t.dtype != kDtypeF32) {
      throw CheckpointError("tensor '" + t.name + "' has unknown dtype");
    }
    const std::uint8_t ndim = r.u8();
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
      if (n > (1u << 28)) throw CheckpointError("tensor '" + t.name + "' is implausibly large");
    }
    t.values.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
      t.values[v] = t.dtype == kDtypeF64 ? r.f64() : static_cast<double>(r.f32());
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.exhausted()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ckpt;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

namespace detail {

inline TensorRecord tensor_from_matrix(std::string name, const Matrix& m, std::uint8_t dtype) {
  TensorRecord t;
  t.name = std::move(name);
  t.dtype = dtype;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.values = m.data();
  return t;
}

inline Matrix matrix_from_tensor(const TensorRecord& t) {
  if (t.dims.size() != 2) {
    throw CheckpointError("tensor '" + t.name + "' is not 2-dimensional");
  }
  return Matrix(t.dims[0], t.dims[1], t.values);
}

}  // namespace detail

// Serialize trained layers plus the defining config echo.
inline Checkpoint make_checkpoint(const TrainConfig& cfg,
                                  std::span<const AdapterLayer> layers,
                                  bool store_f32 = false) {
  const std::uint8_t dtype = store_f32 ? kDtypeF32 : kDtypeF64;
  Checkpoint ckpt;
  ckpt.meta = {
      {"task", to_string(cfg.task)},
      {"rank", std::to_string(cfg.rank)},
      {"transform", to_string(cfg.transform)},
      {"axis", to_string(cfg.axis)},
      {"alpha", format_real(cfg.alpha)},
      {"seed", std::to_string(cfg.seed)},
      {"gate_mode", to_string(cfg.gate_mode)},
      {"threshold", format_real(cfg.gate_threshold)},
      {"lambda_entropy", format_real(cfg.lambda_entropy)},
      {"layers", std::to_string(layers.size())},
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const AdapterLayer& l = layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    ckpt.tensors.push_back(detail::tensor_from_matrix(prefix + "w0", l.w0, dtype));
    ckpt.tensors.push_back(detail::tensor_from_matrix(prefix + "a", l.a, dtype));
    ckpt.tensors.push_back(detail::tensor_from_matrix(prefix + "b", l.b, dtype));
    if (l.gate) {
      ckpt.tensors.push_back(detail::tensor_from_matrix(prefix + "gate.g1", l.gate->g1, dtype));
      ckpt.tensors.push_back(detail::tensor_from_matrix(prefix + "gate.g2", l.gate->g2, dtype));
      if (l.gate->mode == GateMode::Frozen) {
        TensorRecord fm;
        fm.name = prefix + "gate.frozen_mask";
        fm.dtype = dtype;
        fm.dims = {static_cast<std::uint32_t>(l.gate->frozen_mask.size())};
        fm.values = l.gate->frozen_mask;
        ckpt.tensors.push_back(std::move(fm));
      }
    }
  }
  return ckpt;
}

// Rebuild adapter layers from a checkpoint written by make_checkpoint.
inline std::vector<AdapterLayer> layers_from_checkpoint(const Checkpoint& ckpt) {
  const std::size_t n_layers = detail::parse_u64(ckpt.meta_value("layers"));
  const GateChoice gate_mode = detail::parse_gate(ckpt.meta_value("gate_mode"));
  std::vector<AdapterLayer> layers;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    const auto need = [&](const std::string& name) -> const TensorRecord& {
      const TensorRecord* t = ckpt.find(prefix + name);
      if (!t) throw CheckpointError("checkpoint is missing tensor '" + prefix + name + "'");
      return *t;
    };
    AdapterLayer l;
    l.w0 = detail::matrix_from_tensor(need("w0"));
    l.a = detail::matrix_from_tensor(need("a"));
    l.b = detail::matrix_from_tensor(need("b"));
    l.rank = detail::parse_u64(ckpt.meta_value("rank"));
    l.alpha = detail::parse_real(ckpt.meta_value("alpha"));
    l.transform = detail::parse_transform(ckpt.meta_value("transform"));
    l.axis = detail::parse_axis(ckpt.meta_value("axis"));
    if (gate_mode != GateChoice::Absent) {
      GateState g;
      g.g1 = detail::matrix_from_tensor(need("gate.g1"));
      g.g2 = detail::matrix_from_tensor(need("gate.g2"));
      g.threshold = detail::parse_real(ckpt.meta_value("threshold"));
      g.entropy_weight = detail::parse_real(ckpt.meta_value("lambda_entropy"));
      switch (gate_mode) {
        case GateChoice::Soft: g.mode = GateMode::Soft; break;
        case GateChoice::HardAdaptive: g.mode = GateMode::HardAdaptive; break;
        case GateChoice::Frozen: {
          g.mode = GateMode::Frozen;
          const TensorRecord& fm = need("gate.frozen_mask");
          g.frozen_mask = fm.values;
          break;
        }
        case GateChoice::Absent: break;
      }
      l.gate = std::move(g);
    }
    validate_layer(l);
    layers.push_back(std::move(l));
  }
  return layers;
}

}  // namespace foura
