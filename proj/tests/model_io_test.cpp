#include <bit>
#include <cstring>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "bitstorm/model_io.hpp"
#include "bitstorm/projection.hpp"
#include "bitstorm/train.hpp"

namespace bitstorm {
namespace {

NetworkModel two_layer_model(std::uint64_t seed) {
  auto m = build_model("5FC-3SVM", {4}, HiddenActivation::sign, true);
  initialize(m, seed);
  m.layers[0].bias[1] = 0.123456789012345;
  m.layers[1].scale[2] = -3.5;
  return m;
}

std::string serialize(const NetworkModel& m) {
  std::ostringstream os;
  write_model(os, m);
  return os.str();
}

LoadedModel deserialize(const std::string& bytes) {
  std::istringstream is(bytes);
  return read_model(is);
}

TEST(ModelIo, RoundTripIsBitExact) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = two_layer_model(seed);
    const auto loaded = deserialize(serialize(m));
    EXPECT_EQ(loaded.model, m);
    EXPECT_EQ(loaded.clipped, 0U);
    EXPECT_EQ(serialize(loaded.model), serialize(m));
  }
}

TEST(ModelIo, ClipsOnLoad) {
  auto m = two_layer_model(1);
  m.layers[0].weights[3] = 1.5;
  const auto loaded = deserialize(serialize(m));
  EXPECT_EQ(loaded.clipped, 1U);
  EXPECT_EQ(loaded.model.layers[0].weights[3], 1.0);
}

TEST(ModelIo, TruncatedBlob) {
  const auto bytes = serialize(two_layer_model(2));
  try {
    deserialize(bytes.substr(0, bytes.size() - 5));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::payload_length_mismatch);
  }
}

TEST(ModelIo, TrailingBytes) {
  try {
    deserialize(serialize(two_layer_model(2)) + "x");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::payload_length_mismatch);
  }
}

TEST(ModelIo, BadMagicAndHeader) {
  auto bytes = serialize(two_layer_model(3));
  auto broken = bytes;
  broken[0] = 'X';
  try {
    deserialize(broken);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::bad_magic);
  }
  broken = bytes;
  broken[6] = '[';
  try {
    deserialize(broken);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::malformed_header);
  }
}

TEST(ModelIo, NanWeightRejected) {
  auto bytes = serialize(two_layer_model(4));
  // first blob starts right after the header line and its 8-byte length
  const auto start = bytes.find('\n', 6) + 1 + 8;
  const auto nan_bits = std::bit_cast<std::uint64_t>(std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < 8; ++i) bytes[start + i] = static_cast<char>(nan_bits >> (8 * i));
  try {
    deserialize(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::non_finite_value);
  }
}

TEST(ModelIo, ShapeMismatchInLayerTable) {
  auto bytes = serialize(two_layer_model(5));
  const auto pos = bytes.find("\"in\":4");
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, 6, "\"in\":6");
  try {
    deserialize(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::shape_mismatch);
  }
}

TEST(ModelIo, MetaIsPreserved) {
  std::ostringstream os;
  write_model(os, two_layer_model(6), {{"seed", 17}, {"command_line", "bitstorm train"}});
  std::istringstream is(os.str());
  const auto loaded = read_model(is);
  EXPECT_EQ(loaded.meta.at("seed"), 17);
}

TEST(InstanceIo, RoundTrip) {
  const auto m = two_layer_model(7);
  for (auto mode : {ProjectionMode::ternary, ProjectionMode::binary}) {
    const auto inst = project(m, mode, RandomSource(1, 2));
    std::ostringstream os;
    write_instance(os, inst);
    std::istringstream is(os.str());
    EXPECT_EQ(read_instance(is), inst);
  }
}

TEST(InstanceIo, RejectsOutOfAlphabet) {
  auto inst = project_ternary(two_layer_model(8), RandomSource(1, 2));
  std::ostringstream os;
  write_instance(os, inst);
  auto bytes = os.str();
  bytes[bytes.find('\n', 6) + 1 + 8] = 5;
  std::istringstream is(bytes);
  EXPECT_THROW(read_instance(is), FormatError);
}

TEST(SignMagnitudeIo, RoundTrip) {
  const auto m = two_layer_model(9);
  for (unsigned width : {2U, 4U, 8U, 16U, 32U}) {
    const auto sm = to_sign_magnitude(m, width);
    std::ostringstream os;
    write_sign_magnitude(os, sm, width);
    std::istringstream is(os.str());
    EXPECT_EQ(read_sign_magnitude(is), sm) << "width " << width;
  }
}

}  // namespace
}  // namespace bitstorm
