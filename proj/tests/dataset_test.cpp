#include <sstream>

#include <gtest/gtest.h>

#include "bitstorm/dataset.hpp"

namespace bitstorm {
namespace {

TEST(Synthetic, Deterministic) {
  EXPECT_EQ(make_synthetic(SyntheticKind::two_moons, 1000, 0.2, 7), make_synthetic(SyntheticKind::two_moons, 1000, 0.2, 7));
  EXPECT_NE(make_synthetic(SyntheticKind::two_moons, 1000, 0.2, 7), make_synthetic(SyntheticKind::two_moons, 1000, 0.2, 8));
}

TEST(Synthetic, LabelsAndBalance) {
  const SyntheticKind kinds[] = {SyntheticKind::two_moons, SyntheticKind::gaussian_blobs, SyntheticKind::rings};
  for (auto kind : kinds) {
    for (std::size_t n : {10U, 11U, 101U, 1000U}) {
      const auto d = make_synthetic(kind, n, 0.2, 1, 4);
      d.validate();
      ASSERT_EQ(d.size(), n);
      EXPECT_EQ(d.class_count, kind == SyntheticKind::gaussian_blobs ? 4U : 2U);
      std::vector<std::size_t> counts(d.class_count, 0);
      for (auto l : d.labels) ++counts.at(l);
      const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
      EXPECT_LE(*hi - *lo, 1U) << to_string(kind) << " n=" << n;
    }
  }
  EXPECT_THROW(make_synthetic(SyntheticKind::rings, 9, 0.1, 0), std::invalid_argument);
  EXPECT_EQ(parse_synthetic_kind("gaussian-blobs"), SyntheticKind::gaussian_blobs);
  EXPECT_THROW(parse_synthetic_kind("spirals"), std::invalid_argument);
}

TEST(Split, SixtyTwentyTwentyDisjoint) {
  const auto d = make_synthetic(SyntheticKind::two_moons, 1000, 0.2, 7);
  const auto s = split_dataset(d);
  EXPECT_EQ(s.train.size(), 600U);
  EXPECT_EQ(s.validation.size(), 200U);
  EXPECT_EQ(s.test.size(), 200U);
  Dataset joined = s.train;
  for (const auto* part : {&s.validation, &s.test}) {
    joined.features.insert(joined.features.end(), part->features.begin(), part->features.end());
    joined.labels.insert(joined.labels.end(), part->labels.begin(), part->labels.end());
  }
  EXPECT_EQ(joined, d);
}

TEST(Container, RoundTripIsBitExact) {
  const auto d = make_synthetic(SyntheticKind::rings, 50, 0.05, 3);
  std::stringstream a, b;
  write_dataset(a, d, {{"kind", "rings"}});
  const std::string first = a.str();
  const auto back = read_dataset(a);
  EXPECT_EQ(back, d);
  write_dataset(b, back, {{"kind", "rings"}});
  EXPECT_EQ(first, b.str());
}

TEST(Container, Errors) {
  const auto d = make_synthetic(SyntheticKind::two_moons, 20, 0.1, 3);
  std::stringstream ss;
  write_dataset(ss, d);
  const std::string bytes = ss.str();

  auto read = [](const std::string& s) {
    std::istringstream is(s);
    return read_dataset(is);
  };
  try {
    read("XXXXX" + bytes.substr(5));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::bad_magic);
  }
  try {
    read(bytes.substr(0, bytes.size() - 3));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::payload_length_mismatch);
  }
  std::string bad_label = bytes;
  bad_label[bad_label.size() - 1] = 0x7F;  // high byte of the last u16 label
  EXPECT_THROW(read(bad_label), FormatError);
  EXPECT_THROW(load_dataset("/nonexistent/dir/none.bstd"), FormatError);
}

}  // namespace
}  // namespace bitstorm
