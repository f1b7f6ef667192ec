#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "coherent/synth.hpp"
#include "support.hpp"

namespace coherent {
namespace {

struct Source {
  Image image;
  LabelMap label;
};

Source make_source(int h, int w, std::uint64_t seed) {
  const testing::Texture tex(seed);
  Image image = tex.render(h, w);
  std::vector<LabelMap::Label> l(image.samples().size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = image.samples()[i] > 0.5f;
  return {std::move(image), LabelMap(h, w, std::move(l))};
}

BinaryMask complement(const BinaryMask& m) {
  std::vector<std::uint8_t> bits(m.pixels());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = !m[i];
  return BinaryMask(m.height(), m.width(), std::move(bits));
}

SyntheticFrame first_frame(const Source& s) { return {s.image, s.label, std::nullopt, std::nullopt}; }

std::string fingerprint(const SyntheticSequence& seq) {
  std::string out;
  for (const auto& f : seq.frames) {
    out += encode_image_png(f.image);
    out += encode_label_png(f.label);
    if (f.gt_flow_from_prev) out += encode_flo(*f.gt_flow_from_prev);
  }
  return out;
}

double mean_displacement(const FlowField& f) {
  double sum = 0.0;
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) sum += std::hypot(f.u(y, x), f.v(y, x));
  }
  return sum / static_cast<double>(f.pixels());
}

TEST(PerturbationSpec, SeverityRange) {
  EXPECT_THROW(PerturbationSpec::standard(PerturbationKind::kRotation, 0).validate(),
               PreconditionError);
  EXPECT_THROW(PerturbationSpec::standard(PerturbationKind::kRotation, 7).validate(),
               PreconditionError);
  const auto s = make_source(16, 16, 1);
  Rng rng(1);
  EXPECT_THROW(perturb_step(first_frame(s), {PerturbationKind::kScaling, 9, 0.0}, rng),
               PreconditionError);
}

TEST(PerturbStep, TranslationByTable) {
  const auto s = make_source(100, 100, 2);
  for (int k = kMinSeverity; k <= kMaxSeverity; ++k) {
    Perturbation p;
    p.kind = PerturbationKind::kTranslation;
    p.dx = SeverityTable::translation_px(k);
    Rng rng(0);
    const auto next = apply_perturbation(first_frame(s), p, rng);
    const auto& flow = *next.gt_flow_from_prev;
    const auto& occl = *next.occluded_from_prev;
    for (int y = 0; y < 100; ++y) {
      for (int x = 0; x < 100; ++x) {
        ASSERT_EQ(flow.u(y, x), static_cast<float>(-2 * k));
        ASSERT_EQ(flow.v(y, x), 0.0f);
        ASSERT_EQ(occl.at(y, x), x < 2 * k);
      }
    }
    EXPECT_EQ(occl.count(), static_cast<std::size_t>(100 * 2 * k));
    // Row check by hand: content moves right by 2k.
    EXPECT_EQ(next.image.at(50, 60), s.image.at(50, 60 - 2 * k));
    EXPECT_EQ(next.label.at(50, 60), s.label.at(50, 60 - 2 * k));
  }
}

TEST(PerturbStep, OcclusionMovesNothing) {
  const auto s = make_source(40, 40, 3);
  Rng rng(3);
  const auto next = perturb_step(first_frame(s), {PerturbationKind::kOcclusion, 4, 0.0}, rng);
  EXPECT_EQ(*next.gt_flow_from_prev, FlowField::zeros(40, 40));
  EXPECT_EQ(next.label, s.label);
  const auto& occl = *next.occluded_from_prev;
  const double area = static_cast<double>(occl.count()) / 1600.0;
  EXPECT_NEAR(area, SeverityTable::occluder_area(4), 0.02);
  for (std::size_t i = 0; i < occl.pixels(); ++i) {
    if (occl[i]) {
      EXPECT_EQ(next.image.samples()[i], SeverityTable::kOccluderFill);
    } else {
      EXPECT_EQ(next.image.samples()[i], s.image.samples()[i]);
    }
  }
}

TEST(PerturbStep, IdentityScalingWithoutNoise) {
  const auto s = make_source(20, 24, 4);
  Perturbation p;
  p.kind = PerturbationKind::kScaling;
  p.scale = 1.0;
  Rng rng(4);
  const auto next = apply_perturbation(first_frame(s), p, rng);
  EXPECT_EQ(next.image, s.image);
  EXPECT_EQ(next.label, s.label);
  EXPECT_EQ(*next.gt_flow_from_prev, FlowField::zeros(20, 24));
  EXPECT_EQ(next.occluded_from_prev->count(), 0u);
}

TEST(PerturbStep, NoiseTouchesImageOnly) {
  const auto s = make_source(20, 20, 5);
  Perturbation p;
  p.kind = PerturbationKind::kScaling;
  p.noise_sigma = 0.05;
  Rng rng(5);
  const auto next = apply_perturbation(first_frame(s), p, rng);
  EXPECT_EQ(next.label, s.label);
  EXPECT_NE(next.image, s.image);
}

TEST(GenerateSequence, LengthElevenGivesTenFlows) {
  const auto s = make_source(24, 24, 6);
  const auto seq = generate_sequence(s.image, s.label, 3, kDefaultSequenceLength, 7);
  ASSERT_EQ(seq.frames.size(), 11u);
  EXPECT_EQ(seq.steps.size(), 10u);
  EXPECT_FALSE(seq.frames[0].gt_flow_from_prev.has_value());
  EXPECT_EQ(seq.frames[0].image, s.image);
  EXPECT_EQ(seq.frames[0].label, s.label);
  int flows = 0;
  for (const auto& f : seq.frames) flows += f.gt_flow_from_prev.has_value();
  EXPECT_EQ(flows, 10);
}

TEST(GenerateSequence, Deterministic) {
  const auto s = make_source(24, 24, 8);
  EXPECT_EQ(fingerprint(generate_sequence(s.image, s.label, 5, 11, 99)),
            fingerprint(generate_sequence(s.image, s.label, 5, 11, 99)));
  EXPECT_NE(fingerprint(generate_sequence(s.image, s.label, 5, 11, 99)),
            fingerprint(generate_sequence(s.image, s.label, 5, 11, 100)));
}

TEST(GenerateSequence, SeverityIncreasesDisplacement) {
  const auto s = make_source(48, 48, 9);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto low = generate_sequence(s.image, s.label, 1, 11, seed);
    const auto high = generate_sequence(s.image, s.label, 6, 11, seed);
    double a = 0.0, b = 0.0;
    for (std::size_t i = 1; i < 11; ++i) {
      a += mean_displacement(*low.frames[i].gt_flow_from_prev);
      b += mean_displacement(*high.frames[i].gt_flow_from_prev);
    }
    EXPECT_GT(b, a) << "seed " << seed;
  }
}

TEST(GenerateSequence, KindsAreResampledPerStep) {
  const auto s = make_source(16, 16, 10);
  std::set<PerturbationKind> kinds;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const auto& p : generate_sequence(s.image, s.label, 2, 11, seed).steps) kinds.insert(p.kind);
  }
  EXPECT_EQ(kinds.size(), 4u);
}

TEST(GenerateSequence, GroundTruthFlowTransportsLabelsExactly) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto s = make_source(40, 36, 20 + seed);
    for (int sev = kMinSeverity; sev <= kMaxSeverity; ++sev) {
      const auto seq = generate_sequence(s.image, s.label, sev, 11, seed);
      for (std::size_t t = 1; t < seq.frames.size(); ++t) {
        const auto& f = seq.frames[t];
        const auto [moved, valid] = warp_labels(seq.frames[t - 1].label, *f.gt_flow_from_prev);
        EXPECT_TRUE(complement(valid).is_subset_of(*f.occluded_from_prev));
        for (std::size_t i = 0; i < moved.pixels(); ++i) {
          if ((*f.occluded_from_prev)[i]) continue;
          ASSERT_EQ(moved[i], f.label[i]) << "seed " << seed << " sev " << sev << " t " << t;
        }
      }
    }
  }
}

TEST(GenerateSuite, ProtocolCounts) {
  const auto one = make_source(16, 16, 11);
  std::size_t frames = 0;
  for (const auto& seq : generate_suite(one.image, one.label, 1)) frames += seq.frames.size();
  EXPECT_EQ(frames, 66u);

  frames = 0;
  for (std::uint64_t img = 0; img < 20; ++img) {
    const auto s = make_source(16, 16, 100 + img);
    for (const auto& seq : generate_suite(s.image, s.label, img)) frames += seq.frames.size();
  }
  EXPECT_EQ(frames, 1320u);

  frames = 0;
  for (std::uint64_t k = 0; k < 228; ++k) {
    frames += generate_sequence(one.image, one.label, 1 + static_cast<int>(k % 6), 11, k).frames.size();
  }
  EXPECT_EQ(frames, 2508u);
}

TEST(GenerateSuite, OneSequencePerSeverity) {
  const auto s = make_source(16, 16, 12);
  const auto suite = generate_suite(s.image, s.label, 5);
  ASSERT_EQ(suite.size(), 6u);
  for (int k = 0; k < 6; ++k) EXPECT_EQ(suite[k].severity, k + 1);
}

TEST(SequenceDirectory, RoundTrip) {
  const auto s = make_source(20, 20, 13);
  const auto seq = generate_sequence(s.image, s.label, 4, 5, 17);
  const auto dir = std::filesystem::temp_directory_path() / "coherent_synth_test_seq";
  std::filesystem::remove_all(dir);
  write_sequence(dir, seq);
  for (const char* name : {"frame_000.png", "label_004.png", "flow_001.flo", "occl_004.png",
                           "manifest.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "flow_000.flo"));
  const auto back = read_sequence(dir);
  ASSERT_EQ(back.images.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(back.labels[i], seq.frames[i].label);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(back.flows[k], *seq.frames[k + 1].gt_flow_from_prev);
    EXPECT_EQ(back.occlusions[k], *seq.frames[k + 1].occluded_from_prev);
  }
  const auto manifest = KeyValueRecord::read(dir / "manifest.txt");
  EXPECT_EQ(manifest.get("severity"), "4");
  EXPECT_EQ(manifest.get("seed"), "17");
  EXPECT_EQ(manifest.get("length"), "5");
  EXPECT_TRUE(manifest.get("step_001").has_value());
}

}  // namespace
}  // namespace coherent
