#pragma once

// Labeled dataset container:
//
//   "BSTD1\n"
//   <one-line JSON header: magic, version, count, example_shape, class_count, meta>"\n"
//   [u64 LE byte length][features: count * volume(example_shape) real32 LE]
//   [u64 LE byte length][labels: count uint16 LE]

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bitstorm/model_io.hpp"
#include "bitstorm/random.hpp"
#include "bitstorm/tensor.hpp"

namespace bitstorm {

inline constexpr const char* dataset_magic = "BSTD1";

struct Dataset {
  std::vector<std::size_t> example_shape;
  std::size_t class_count = 0;
  std::vector<float> features;
  std::vector<std::uint16_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::size_t example_volume() const { return shape_volume(example_shape); }

  Tensor example(std::size_t i) const {
    const std::size_t v = example_volume();
    std::vector<double> x(features.begin() + static_cast<std::ptrdiff_t>(i * v),
                          features.begin() + static_cast<std::ptrdiff_t>((i + 1) * v));
    return Tensor(example_shape, std::move(x));
  }

  std::size_t label(std::size_t i) const { return labels.at(i); }

  void validate() const {
    if (example_shape.empty()) throw std::invalid_argument("dataset has no example shape");
    if (features.size() != labels.size() * example_volume()) {
      throw std::invalid_argument("dataset feature count does not match labels");
    }
    for (auto l : labels) {
      if (l >= class_count) throw std::invalid_argument("dataset label out of range");
    }
  }

  /// Copy restricted to the given example indices, in order.
  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out{example_shape, class_count, {}, {}};
    const std::size_t v = example_volume();
    for (std::size_t i : indices) {
      out.features.insert(out.features.end(), features.begin() + static_cast<std::ptrdiff_t>(i * v),
                          features.begin() + static_cast<std::ptrdiff_t>((i + 1) * v));
      out.labels.push_back(labels.at(i));
    }
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline void write_dataset(std::ostream& os, const Dataset& data, const nlohmann::json& meta = {}) {
  data.validate();
  nlohmann::json header = {{"magic", dataset_magic},
                           {"version", model_format_version},
                           {"count", data.size()},
                           {"example_shape", data.example_shape},
                           {"class_count", data.class_count},
                           {"meta", meta.is_null() ? nlohmann::json::object() : meta}};
  os << dataset_magic << '\n' << header.dump() << '\n';
  std::string buf(data.features.size() * 4, '\0');
  for (std::size_t i = 0; i < data.features.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(data.features[i]);
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>(bits >> (8 * b));
  }
  io::put_u64(os, buf.size());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  buf.assign(data.labels.size() * 2, '\0');
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    buf[i * 2] = static_cast<char>(data.labels[i] & 0xFF);
    buf[i * 2 + 1] = static_cast<char>(data.labels[i] >> 8);
  }
  io::put_u64(os, buf.size());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw FormatError(FormatErrc::io, "dataset write failed");
}

inline Dataset read_dataset(std::istream& is) {
  auto raw = io::split_container(io::read_all(is), dataset_magic);
  Dataset data;
  std::size_t count = 0;
  try {
    count = raw.header.at("count").get<std::size_t>();
    data.example_shape = raw.header.at("example_shape").get<std::vector<std::size_t>>();
    data.class_count = raw.header.at("class_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrc::malformed_header, e.what());
  }
  const std::size_t values = count * shape_volume(data.example_shape);
  const auto fbytes = raw.payload.blob(values * 4, "features");
  data.features.resize(values);
  for (std::size_t i = 0; i < values; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{static_cast<unsigned char>(fbytes[i * 4 + b])} << (8 * b);
    data.features[i] = std::bit_cast<float>(bits);
    if (!std::isfinite(data.features[i])) throw FormatError(FormatErrc::non_finite_value, "feature");
  }
  const auto lbytes = raw.payload.blob(count * 2, "labels");
  data.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    data.labels[i] = static_cast<std::uint16_t>(static_cast<unsigned char>(lbytes[i * 2]) |
                                                (static_cast<unsigned char>(lbytes[i * 2 + 1]) << 8));
    if (data.labels[i] >= data.class_count) throw FormatError(FormatErrc::invalid_value, "label out of range");
  }
  if (raw.payload.remaining() != 0) throw FormatError(FormatErrc::payload_length_mismatch, "trailing bytes");
  return data;
}

inline void store_dataset(const Dataset& data, const std::filesystem::path& path, const nlohmann::json& meta = {}) {
  auto os = io::open_out(path);
  write_dataset(os, data, meta);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::istringstream is(io::slurp(path));
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// Synthetic 2-D datasets. Class sizes differ by at most one; examples are
// shuffled with the seed.

enum class SyntheticKind { two_moons, gaussian_blobs, rings };

inline SyntheticKind parse_synthetic_kind(std::string_view s) {
  if (s == "two-moons") return SyntheticKind::two_moons;
  if (s == "gaussian-blobs") return SyntheticKind::gaussian_blobs;
  if (s == "rings") return SyntheticKind::rings;
  throw std::invalid_argument("unknown dataset kind '" + std::string(s) + "'");
}

inline const char* to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::two_moons: return "two-moons";
    case SyntheticKind::gaussian_blobs: return "gaussian-blobs";
    case SyntheticKind::rings: return "rings";
  }
  return "?";
}

inline void shuffle_indices(std::vector<std::size_t>& idx, RandomSource& rng) {
  // Fisher-Yates with the stream's own integer draws (reproducible across stdlibs)
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

inline Dataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed,
                              std::size_t blob_classes = 3) {
  if (n < 10) throw std::invalid_argument("synthetic dataset needs n >= 10");
  const std::size_t classes = kind == SyntheticKind::gaussian_blobs ? blob_classes : 2;
  if (classes < 2) throw std::invalid_argument("need at least two classes");
  RandomSource rng(seed, stream_key({0xDA7A, static_cast<std::uint64_t>(kind)}));
  const double pi = std::numbers::pi;

  std::vector<float> xs;
  std::vector<std::uint16_t> ys;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t count = n / classes + (c < n % classes ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) {
      const double t = count > 1 ? static_cast<double>(i) / static_cast<double>(count - 1) : 0.5;
      double x = 0.0, y = 0.0;
      switch (kind) {
        case SyntheticKind::two_moons:
          if (c == 0) {
            x = std::cos(pi * t);
            y = std::sin(pi * t);
          } else {
            x = 1.0 - std::cos(pi * t);
            y = 0.5 - std::sin(pi * t);
          }
          break;
        case SyntheticKind::gaussian_blobs: {
          const double a = 2.0 * pi * static_cast<double>(c) / static_cast<double>(classes);
          x = 2.0 * std::cos(a);
          y = 2.0 * std::sin(a);
          break;
        }
        case SyntheticKind::rings: {
          const double r = c == 0 ? 0.5 : 1.0;
          x = r * std::cos(2.0 * pi * t);
          y = r * std::sin(2.0 * pi * t);
          break;
        }
      }
      const double scale = kind == SyntheticKind::gaussian_blobs ? std::max(noise, 1e-9) * 5.0 : noise;
      xs.push_back(static_cast<float>(x + scale * rng.normal()));
      xs.push_back(static_cast<float>(y + scale * rng.normal()));
      ys.push_back(static_cast<std::uint16_t>(c));
    }
  }
  std::vector<std::size_t> order(ys.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_indices(order, rng);
  Dataset all{{2}, classes, std::move(xs), std::move(ys)};
  return all.subset(order);
}

struct DataSplits {
  Dataset train, validation, test;
};

/// Contiguous 60/20/20 split of an already shuffled dataset.
inline DataSplits split_dataset(const Dataset& data) {
  const std::size_t n = data.size();
  const std::size_t n_train = n * 3 / 5;
  const std::size_t n_val = n / 5;
  std::vector<std::size_t> a, b, c;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? a : i < n_train + n_val ? b : c).push_back(i);
  return {data.subset(a), data.subset(b), data.subset(c)};
}

}  // namespace bitstorm
