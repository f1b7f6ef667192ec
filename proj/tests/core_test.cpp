#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "coherent/core.hpp"
#include "coherent/io.hpp"
#include "coherent/png.hpp"
#include "support.hpp"

namespace coherent {
namespace {

namespace fs = std::filesystem;

SoftmaxMap<float> map_from(int h, int w, int c, std::vector<float> v) {
  return SoftmaxMap<float>(ScoreTensor<float>(h, w, c, std::move(v)));
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("coherent_core_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Argmax, PicksLargestScore) {
  EXPECT_EQ(argmax_labels(map_from(1, 1, 2, {0.2f, 0.8f}))[0], 1u);
}

TEST(Argmax, TiesGoToLowestClass) {
  EXPECT_EQ(argmax_labels(map_from(1, 1, 2, {0.5f, 0.5f}))[0], 0u);
}

TEST(Argmax, TwoByTwo) {
  const auto l = argmax_labels(map_from(2, 2, 2, {.9f, .1f, .1f, .9f, .6f, .4f, .3f, .7f}));
  EXPECT_EQ(l.at(0, 0), 0u);
  EXPECT_EQ(l.at(0, 1), 1u);
  EXPECT_EQ(l.at(1, 0), 0u);
  EXPECT_EQ(l.at(1, 1), 1u);
}

TEST(Argmax, InvariantUnderPositiveRescaling) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = testing::random_softmax<double>(6, 5, 4, rng);
    ScoreTensor<double> s = m.scores();
    for (std::size_t i = 0; i < s.pixels(); ++i) {
      const double k = scale(rng);
      double sum = 0.0;
      for (auto& v : s.pixel(i)) sum += v *= k;
      for (auto& v : s.pixel(i)) v /= sum;
    }
    EXPECT_EQ(argmax_labels(m), argmax_labels(SoftmaxMap<double>(std::move(s))));
  }
}

TEST(SoftmaxMap, RejectsBadSums) {
  EXPECT_THROW(map_from(1, 1, 2, {0.5f, 0.6f}), InvariantError);
  EXPECT_THROW(map_from(1, 1, 2, {-0.1f, 1.1f}), InvariantError);
  EXPECT_NO_THROW(map_from(1, 1, 2, {0.5f, 0.500004f}));
}

TEST(Types, BasicInvariants) {
  EXPECT_THROW(Image(0, 3, 1, {}), InvariantError);
  EXPECT_THROW(Image(1, 1, 2, {0.f, 0.f}), InvariantError);
  EXPECT_THROW(Image(1, 1, 1, {1.5f}), InvariantError);
  EXPECT_THROW(BinaryMask(1, 1, {2}), InvariantError);
  EXPECT_THROW(FlowField(1, 1, {0.f, NAN}), InvariantError);
  EXPECT_THROW(LabelMap::filled(2, 2, 3).require_classes(3), RangeError);
  LossConfig bad;
  bad.gamma = 1.0;
  EXPECT_THROW(bad.validate(), InvariantError);
}

TEST(Types, CorrespondenceSubset) {
  EXPECT_THROW(CorrespondenceSet(BinaryMask(1, 2, {1, 0}), BinaryMask(1, 2, {0, 1}), {0.f, 0.f}),
               InvariantError);
}

// ---- SFM1 ----------------------------------------------------------------------

TEST(Sfm, RoundTripThreeByThree) {
  std::mt19937_64 rng(1);
  const auto m = testing::random_softmax<float>(3, 3, 2, rng);
  const auto dir = scratch_dir("sfm");
  write_sfm(dir / "m.sfm", m);
  EXPECT_EQ(read_sfm(dir / "m.sfm"), m);
}

TEST(Sfm, BadMagic) {
  std::string bytes = encode_sfm(map_from(1, 1, 2, {0.5f, 0.5f}).scores());
  bytes.replace(0, 4, "XXXX");
  EXPECT_THROW(decode_sfm(bytes), FormatError);
}

TEST(Sfm, TruncatedPayload) {
  std::string bytes = encode_sfm(ScoreTensor<float>(2, 2, 2, 0.5f));
  bytes.resize(16 + 7 * 4);
  EXPECT_THROW(decode_sfm(bytes), FormatError);
}

TEST(Sfm, DimensionOverflow) {
  std::string bytes = "SFM1";
  for (int i = 0; i < 3; ++i) bytes.append("\xff\xff\xff\x7f", 4);
  EXPECT_THROW(decode_sfm(bytes), FormatError);
}

TEST(Sfm, SumViolationIsAFormatError) {
  const std::string bytes = encode_sfm(ScoreTensor<float>(1, 1, 2, std::vector<float>{0.7f, 0.7f}));
  EXPECT_THROW(decode_sfm(bytes), FormatError);
  EXPECT_NO_THROW(decode_score_tensor(bytes));
}

TEST(Sfm, LittleEndianLayout) {
  const std::string bytes = encode_sfm(map_from(1, 2, 2, {1.f, 0.f, 0.25f, 0.75f}).scores());
  ASSERT_EQ(bytes.size(), 16u + 16u);
  EXPECT_EQ(bytes.substr(0, 4), "SFM1");
  EXPECT_EQ(bytes[4], 1);   // H
  EXPECT_EQ(bytes[8], 2);   // W
  EXPECT_EQ(bytes[12], 2);  // C
  // 1.0f = 0x3f800000 little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[19]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[18]), 0x80);
}

// ---- flo -----------------------------------------------------------------------

TEST(Flo, RoundTripFourByFour) {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> d(0.f, 5.f);
  std::vector<float> v(32);
  for (auto& f : v) f = d(rng);
  const FlowField flow(4, 4, v);
  EXPECT_EQ(decode_flo(encode_flo(flow)), flow);
}

TEST(Flo, ZeroFieldRoundTrip) {
  const auto dir = scratch_dir("flo");
  write_flo(dir / "z.flo", FlowField::zeros(5, 7));
  EXPECT_EQ(read_flo(dir / "z.flo"), FlowField::zeros(5, 7));
}

TEST(Flo, BadSentinel) {
  std::string bytes = encode_flo(FlowField::zeros(2, 2));
  bytes[0] ^= 0x01;
  EXPECT_THROW(decode_flo(bytes), FormatError);
}

TEST(Flo, HeaderIsWidthThenHeight) {
  const std::string bytes = encode_flo(FlowField::zeros(2, 5));
  EXPECT_EQ(bytes[4], 5);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes.size(), 12u + 2 * 5 * 2 * 4);
}

TEST(Flo, Truncated) {
  std::string bytes = encode_flo(FlowField::zeros(2, 2));
  bytes.pop_back();
  EXPECT_THROW(decode_flo(bytes), FormatError);
}

// ---- PNG -----------------------------------------------------------------------

TEST(LabelPng, BinaryMaskRoundTrip) {
  std::mt19937_64 rng(4);
  const auto labels = testing::random_labels(9, 13, 2, rng);
  EXPECT_EQ(decode_label_png(encode_label_png(labels)), labels);
}

TEST(LabelPng, NineteenClassesAtEightBit) {
  std::mt19937_64 rng(5);
  const auto labels = testing::random_labels(16, 16, 19, rng);
  EXPECT_EQ(decode_label_png(encode_label_png(labels, 8)), labels);
}

TEST(LabelPng, SixteenBit) {
  const LabelMap labels(1, 3, {0, 300, 65535});
  EXPECT_EQ(decode_label_png(encode_label_png(labels, 16)), labels);
}

TEST(LabelPng, RangeErrorAtEightBit) {
  EXPECT_THROW(encode_label_png(LabelMap(1, 2, {0, 70000}), 8), RangeError);
  EXPECT_THROW(encode_label_png(LabelMap(1, 2, {0, 70000}), 16), RangeError);
}

TEST(LabelPng, RejectsColourImages) {
  const std::string rgb = encode_image_png(Image::filled(2, 2, 3, 0.5f));
  EXPECT_THROW(decode_label_png(rgb), FormatError);
}

TEST(LabelPng, RejectsGarbage) { EXPECT_THROW(decode_label_png("not a png at all"), FormatError); }

TEST(ImagePng, EightBitRoundTripOnGrid) {
  std::vector<float> v;
  for (int i = 0; i < 12; ++i) v.push_back(static_cast<float>(i * 20 / 255.0));
  const Image img(2, 2, 3, v);
  const Image back = decode_image_png(encode_image_png(img));
  ASSERT_EQ(back.channels(), 3);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_FLOAT_EQ(back.samples()[i], v[i]);
}

TEST(MaskPng, RoundTrip) {
  const BinaryMask m(2, 3, {1, 0, 1, 1, 0, 0});
  const auto dir = scratch_dir("mask");
  write_mask_png(dir / "m.png", m);
  EXPECT_EQ(read_mask_png(dir / "m.png"), m);
}

}  // namespace
}  // namespace coherent
