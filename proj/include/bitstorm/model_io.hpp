#pragma once

// Model container:
//
//   "BSTM1\n"
//   <one-line UTF-8 JSON header>"\n"
//   per layer, in order: [u64 LE byte length][blob] for each parameter tensor
//     Conv3x3 / FullyConnected: weights, then bias (real64)
//     BatchNormAffine:          scale (real64), then shift (real64)
//
// The header carries magic, version, dtype ("real64", "int8-ternary" or
// "signmag-N"), input_shape, class_count, the layer table and a free-form
// "meta" object. All numeric payloads are little-endian.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "bitstorm/error.hpp"
#include "bitstorm/model.hpp"

namespace bitstorm {

inline constexpr const char* model_magic = "BSTM1";
inline constexpr int model_format_version = 1;

namespace io {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

/// Bounds-checked reader over an in-memory payload.
class Cursor {
 public:
  explicit Cursor(std::string bytes) : bytes_(std::move(bytes)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  /// Reads a length-prefixed blob and checks it holds exactly `expected` bytes.
  std::string_view blob(std::size_t expected, const std::string& what) {
    if (remaining() < 8) {
      throw FormatError(FormatErrc::payload_length_mismatch, what + ": missing length prefix");
    }
    const std::uint64_t len =
        get_u64(reinterpret_cast<const unsigned char*>(bytes_.data() + pos_));
    pos_ += 8;
    if (len > remaining()) {
      throw FormatError(FormatErrc::payload_length_mismatch,
                        what + ": declares " + std::to_string(len) + " bytes, " +
                            std::to_string(remaining()) + " present");
    }
    if (len != expected) {
      throw FormatError(FormatErrc::shape_mismatch, what + ": " + std::to_string(len) +
                                                        " bytes, shape implies " +
                                                        std::to_string(expected));
    }
    std::string_view out(bytes_.data() + pos_, len);
    pos_ += len;
    return out;
  }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_all(std::istream& is) {
  std::ostringstream ss;
  ss << is.rdbuf();
  return std::move(ss).str();
}

// Element codecs: fixed byte width per element.
struct Real64Codec {
  static constexpr const char* tag = "real64";
  std::size_t bytes() const { return 8; }
  void encode(double v, unsigned char* out) const {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(bits >> (8 * i));
  }
  double decode(const unsigned char* in) const { return std::bit_cast<double>(get_u64(in)); }
};

struct TernaryCodec {
  std::size_t bytes() const { return 1; }
  void encode(std::int8_t v, unsigned char* out) const { out[0] = static_cast<unsigned char>(v); }
  std::int8_t decode(const unsigned char* in) const {
    const auto v = static_cast<std::int8_t>(in[0]);
    if (v < -1 || v > 1) {
      throw FormatError(FormatErrc::invalid_value, "discrete weight " + std::to_string(v));
    }
    return v;
  }
};

// Word of ceil((N+1)/8) bytes: low N bits magnitude, bit N set for negative.
struct SignMagnitudeCodec {
  unsigned width;
  std::size_t bytes() const { return (width + 1 + 7) / 8; }
  void encode(const SignMagnitudeWeight& w, unsigned char* out) const {
    const std::uint64_t word =
        w.magnitude.bits() | (w.sign < 0 ? std::uint64_t{1} << width : 0);
    for (std::size_t i = 0; i < bytes(); ++i) out[i] = static_cast<unsigned char>(word >> (8 * i));
  }
  SignMagnitudeWeight decode(const unsigned char* in) const {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < bytes(); ++i) word |= std::uint64_t{in[i]} << (8 * i);
    if (word >> (width + 1)) throw FormatError(FormatErrc::invalid_value, "sign-magnitude word");
    const bool negative = (word >> width) & 1U;
    return {negative ? -1 : 1, QFraction(word & ((std::uint64_t{1} << width) - 1), width)};
  }
};

template <typename T, typename Codec>
void put_blob(std::ostream& os, std::span<const T> values, const Codec& codec) {
  std::string buf(values.size() * codec.bytes(), '\0');
  auto* p = reinterpret_cast<unsigned char*>(buf.data());
  for (std::size_t i = 0; i < values.size(); ++i) codec.encode(values[i], p + i * codec.bytes());
  put_u64(os, buf.size());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <typename T, typename Codec>
std::vector<T> get_blob(Cursor& cur, std::size_t count, const Codec& codec, const std::string& what) {
  const auto raw = cur.blob(count * codec.bytes(), what);
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  std::vector<T> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(codec.decode(p + i * codec.bytes()));
  return out;
}

inline std::vector<double> get_real_blob(Cursor& cur, std::size_t count, const std::string& what) {
  auto v = get_blob<double>(cur, count, Real64Codec{}, what);
  for (double x : v) {
    if (!std::isfinite(x)) throw FormatError(FormatErrc::non_finite_value, what);
  }
  return v;
}

template <typename W, typename Codec>
void write_network(std::ostream& os, const BasicNetwork<W>& net, const std::string& dtype,
                   nlohmann::json extra, const Codec& codec) {
  validate(net);
  nlohmann::json header = std::move(extra);
  header["magic"] = model_magic;
  header["version"] = model_format_version;
  header["dtype"] = dtype;
  header["input_shape"] = net.input_shape;
  header["class_count"] = net.class_count;
  auto& layers = header["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"kind", to_string(l.kind)}, {"in", l.in_units}, {"out", l.out_units}});
  }
  os << model_magic << '\n' << header.dump() << '\n';
  for (const auto& l : net.layers) {
    if (has_weights(l.kind)) {
      put_blob<W>(os, l.weights.data(), codec);
      put_blob<double>(os, l.bias, Real64Codec{});
    } else if (l.kind == LayerKind::batch_norm_affine) {
      put_blob<double>(os, l.scale, Real64Codec{});
      put_blob<double>(os, l.bias, Real64Codec{});
    }
  }
  if (!os) throw FormatError(FormatErrc::io, "write failed");
}

struct RawContainer {
  nlohmann::json header;
  Cursor payload;
};

inline RawContainer split_container(std::string bytes, const char* magic) {
  const std::string m = std::string(magic) + "\n";
  if (bytes.compare(0, m.size(), m) != 0) {
    throw FormatError(FormatErrc::bad_magic, std::string("expected ") + magic);
  }
  const auto eol = bytes.find('\n', m.size());
  if (eol == std::string::npos) throw FormatError(FormatErrc::malformed_header, "unterminated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(m.size(), eol - m.size()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrc::malformed_header, e.what());
  }
  if (!header.is_object() || header.value("magic", "") != magic) {
    throw FormatError(FormatErrc::malformed_header, "header magic field");
  }
  if (header.value("version", -1) != model_format_version) {
    throw FormatError(FormatErrc::unsupported_version, header.value("version", nlohmann::json()).dump());
  }
  return {std::move(header), Cursor(bytes.substr(eol + 1))};
}

template <typename W, typename Codec>
BasicNetwork<W> read_network(RawContainer& raw, const Codec& codec) {
  BasicNetwork<W> net;
  try {
    net.input_shape = raw.header.at("input_shape").get<std::vector<std::size_t>>();
    net.class_count = raw.header.at("class_count").get<std::size_t>();
    for (const auto& jl : raw.header.at("layers")) {
      const LayerKind kind = parse_layer_kind(jl.at("kind").get<std::string>());
      net.layers.push_back(make_layer<W>(kind, jl.at("in").get<std::size_t>(),
                                         jl.at("out").get<std::size_t>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrc::malformed_header, e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrc::malformed_header, e.what());
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (has_weights(l.kind)) {
      auto shape = l.weights.shape();
      auto w = get_blob<W>(raw.payload, l.weights.size(), codec, where + " weights");
      if constexpr (std::is_floating_point_v<W>) {
        for (W x : w) {
          if (!std::isfinite(x)) throw FormatError(FormatErrc::non_finite_value, where + " weights");
        }
      }
      l.weights = BasicTensor<W>(std::move(shape), std::move(w));
      l.bias = get_real_blob(raw.payload, l.out_units, where + " bias");
    } else if (l.kind == LayerKind::batch_norm_affine) {
      l.scale = get_real_blob(raw.payload, l.in_units, where + " scale");
      l.bias = get_real_blob(raw.payload, l.in_units, where + " shift");
    }
  }
  if (raw.payload.remaining() != 0) {
    throw FormatError(FormatErrc::payload_length_mismatch,
                      std::to_string(raw.payload.remaining()) + " trailing bytes");
  }
  try {
    validate(net);
  } catch (const ShapeError& e) {
    throw FormatError(FormatErrc::shape_mismatch, e.what());
  }
  return net;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(FormatErrc::io, "cannot open " + path.string() + " for writing");
  return os;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatErrc::io, "cannot open " + path.string());
  return read_all(is);
}

}  // namespace io

struct LoadedModel {
  NetworkModel model;
  std::size_t clipped = 0;  // weights altered by the clip on load
  nlohmann::json meta;
};

inline void write_model(std::ostream& os, const NetworkModel& model, const nlohmann::json& meta = {}) {
  io::write_network(os, model, "real64", {{"meta", meta.is_null() ? nlohmann::json::object() : meta}},
                    io::Real64Codec{});
}

inline LoadedModel read_model(std::istream& is) {
  auto raw = io::split_container(io::read_all(is), model_magic);
  if (raw.header.value("dtype", "") != "real64") {
    throw FormatError(FormatErrc::malformed_header, "expected dtype real64");
  }
  LoadedModel out;
  out.model = io::read_network<double>(raw, io::Real64Codec{});
  out.clipped = clip_weights(out.model);
  out.meta = raw.header.value("meta", nlohmann::json::object());
  return out;
}

inline void store_model(const NetworkModel& model, const std::filesystem::path& path,
                        const nlohmann::json& meta = {}) {
  auto os = io::open_out(path);
  write_model(os, model, meta);
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  std::istringstream is(io::slurp(path));
  return read_model(is);
}

inline void write_instance(std::ostream& os, const DiscreteModelInstance& inst,
                           const nlohmann::json& meta = {}) {
  io::write_network(os, static_cast<const BasicNetwork<std::int8_t>&>(inst), "int8-ternary",
                    {{"projection_mode", to_string(inst.mode)},
                     {"meta", meta.is_null() ? nlohmann::json::object() : meta}},
                    io::TernaryCodec{});
}

inline DiscreteModelInstance read_instance(std::istream& is) {
  auto raw = io::split_container(io::read_all(is), model_magic);
  if (raw.header.value("dtype", "") != "int8-ternary") {
    throw FormatError(FormatErrc::malformed_header, "expected dtype int8-ternary");
  }
  DiscreteModelInstance inst;
  try {
    inst.mode = parse_projection_mode(raw.header.value("projection_mode", ""));
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrc::malformed_header, e.what());
  }
  static_cast<BasicNetwork<std::int8_t>&>(inst) = io::read_network<std::int8_t>(raw, io::TernaryCodec{});
  if (inst.mode == ProjectionMode::binary) {
    for (const auto& l : inst.layers)
      for (auto w : l.weights.data())
        if (w == 0) throw FormatError(FormatErrc::invalid_value, "zero weight in binary instance");
  }
  return inst;
}

inline void write_sign_magnitude(std::ostream& os, const SignMagnitudeModel& model, unsigned width,
                                 const nlohmann::json& meta = {}) {
  for (const auto& l : model.layers)
    for (const auto& w : l.weights.data())
      if (w.magnitude.width() != width) throw std::invalid_argument("mixed sign-magnitude widths");
  io::write_network(os, model, "signmag-" + std::to_string(width),
                    {{"meta", meta.is_null() ? nlohmann::json::object() : meta}},
                    io::SignMagnitudeCodec{width});
}

inline SignMagnitudeModel read_sign_magnitude(std::istream& is) {
  auto raw = io::split_container(io::read_all(is), model_magic);
  const std::string dtype = raw.header.value("dtype", "");
  unsigned width = 0;
  if (dtype.rfind("signmag-", 0) == 0) {
    try {
      width = static_cast<unsigned>(std::stoul(dtype.substr(8)));
    } catch (const std::exception&) {
    }
  }
  if (!is_rounder_width(width)) throw FormatError(FormatErrc::malformed_header, "dtype " + dtype);
  return io::read_network<SignMagnitudeWeight>(raw, io::SignMagnitudeCodec{width});
}

}  // namespace bitstorm
