#pragma once

// Synthetic evaluation sequences: chains of random translation / rotation /
// scaling / occlusion steps with exact ground-truth flow.
//
// Each geometric step is an affine map realised by inverse lookup. The stored
// flow of frame t lives on frame t's grid and points into frame t-1, so
// warp_labels(label[t-1], flow[t]) reproduces label[t] on every pixel that is
// not marked occluded.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coherent/core.hpp"
#include "coherent/flow.hpp"
#include "coherent/io.hpp"
#include "coherent/keyvalue.hpp"
#include "coherent/png.hpp"

namespace coherent {

inline constexpr int kMinSeverity = 1;
inline constexpr int kMaxSeverity = 6;
inline constexpr int kDefaultSequenceLength = 11;

enum class PerturbationKind { kTranslation, kRotation, kScaling, kOcclusion };

inline const char* to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::kTranslation: return "translation";
    case PerturbationKind::kRotation: return "rotation";
    case PerturbationKind::kScaling: return "scaling";
    case PerturbationKind::kOcclusion: return "occlusion";
  }
  return "unknown";
}

// Per-step magnitudes at severity k.
struct SeverityTable {
  static double translation_px(int k) { return 2.0 * k; }
  static double rotation_deg(int k) { return 0.5 * k; }
  static double scale_delta(int k) { return 0.01 * k; }
  static double occluder_area(int k) { return 0.02 * k; }
  static double noise_sigma(int k) { return 0.002 * k; }
  static constexpr float kOccluderFill = 0.5f;
};

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::kTranslation;
  int severity = 1;
  double noise_sigma = 0.0;

  static PerturbationSpec standard(PerturbationKind kind, int severity) {
    return {kind, severity, SeverityTable::noise_sigma(severity)};
  }

  void validate() const {
    if (severity < kMinSeverity || severity > kMaxSeverity) {
      throw PreconditionError("PerturbationSpec: severity " + std::to_string(severity) +
                              " outside [1,6]");
    }
    if (!(noise_sigma >= 0.0)) throw PreconditionError("PerturbationSpec: noise_sigma must be >= 0");
  }
};

// A fully realised step.
struct Perturbation {
  PerturbationKind kind = PerturbationKind::kTranslation;
  double dx = 0.0, dy = 0.0;  // translation, pixels
  double angle_deg = 0.0;     // rotation about the image centre
  double scale = 1.0;         // scaling about the image centre
  int rect_x = 0, rect_y = 0, rect_w = 0, rect_h = 0;  // occluder
  double noise_sigma = 0.0;

  std::string describe() const {
    char buf[160];
    switch (kind) {
      case PerturbationKind::kTranslation:
        std::snprintf(buf, sizeof buf, "translation dx=%.6f dy=%.6f", dx, dy);
        break;
      case PerturbationKind::kRotation:
        std::snprintf(buf, sizeof buf, "rotation angle_deg=%.6f", angle_deg);
        break;
      case PerturbationKind::kScaling:
        std::snprintf(buf, sizeof buf, "scaling factor=%.6f", scale);
        break;
      case PerturbationKind::kOcclusion:
        std::snprintf(buf, sizeof buf, "occlusion x=%d y=%d w=%d h=%d", rect_x, rect_y, rect_w,
                      rect_h);
        break;
    }
    return std::string(buf) + " noise_sigma=" + format_number(noise_sigma);
  }
};

struct SyntheticFrame {
  Image image;
  LabelMap label;
  std::optional<FlowField> gt_flow_from_prev;    // absent on the first frame
  std::optional<BinaryMask> occluded_from_prev;  // absent on the first frame
};

struct SyntheticSequence {
  std::vector<SyntheticFrame> frames;
  std::vector<Perturbation> steps;  // steps[i] produced frames[i + 1]
  int severity = 1;
  std::uint64_t seed = 0;
};

// Engine output is fully specified by the standard; the distributions below
// are written out so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }  // [0, 1)
  int uniform_int(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniform() * static_cast<double>(hi - lo + 1));
  }
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Draws the step parameters. The number of draws does not depend on the
// severity, so equal seeds give geometrically similar chains.
inline Perturbation sample_perturbation(const PerturbationSpec& spec, int height, int width,
                                        Rng& rng) {
  spec.validate();
  const int k = spec.severity;
  Perturbation p;
  p.kind = spec.kind;
  p.noise_sigma = spec.noise_sigma;
  const double a = rng.uniform();
  const double b = rng.uniform();
  const double c = rng.uniform();
  switch (spec.kind) {
    case PerturbationKind::kTranslation: {
      const double dir = 2.0 * std::numbers::pi * a;
      p.dx = SeverityTable::translation_px(k) * std::cos(dir);
      p.dy = SeverityTable::translation_px(k) * std::sin(dir);
      break;
    }
    case PerturbationKind::kRotation:
      p.angle_deg = (a < 0.5 ? -1.0 : 1.0) * SeverityTable::rotation_deg(k);
      break;
    case PerturbationKind::kScaling:
      p.scale = 1.0 + (a < 0.5 ? -1.0 : 1.0) * SeverityTable::scale_delta(k);
      break;
    case PerturbationKind::kOcclusion: {
      const double area = SeverityTable::occluder_area(k) * height * width;
      const double aspect = std::exp((2.0 * a - 1.0) * std::numbers::ln2);  // [1/2, 2)
      p.rect_w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, width);
      p.rect_h = std::clamp(static_cast<int>(std::lround(area / p.rect_w)), 1, height);
      p.rect_x = std::min(static_cast<int>(b * (width - p.rect_w + 1)), width - p.rect_w);
      p.rect_y = std::min(static_cast<int>(c * (height - p.rect_h + 1)), height - p.rect_h);
      break;
    }
  }
  return p;
}

namespace detail {

// Inverse map of the step: new-frame coordinate -> previous-frame coordinate.
inline std::array<double, 2> inverse_lookup(const Perturbation& p, double x, double y, int height,
                                            int width) {
  const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
  switch (p.kind) {
    case PerturbationKind::kTranslation:
      return {x - p.dx, y - p.dy};
    case PerturbationKind::kRotation: {
      const double t = -p.angle_deg * std::numbers::pi / 180.0;
      const double rx = x - cx, ry = y - cy;
      return {cx + std::cos(t) * rx - std::sin(t) * ry, cy + std::sin(t) * rx + std::cos(t) * ry};
    }
    case PerturbationKind::kScaling:
      return {cx + (x - cx) / p.scale, cy + (y - cy) / p.scale};
    case PerturbationKind::kOcclusion:
      return {x, y};
  }
  return {x, y};
}

}  // namespace detail

// Applies a realised step to a frame. Noise (if any) is drawn from rng and
// only touches the image.
inline SyntheticFrame apply_perturbation(const SyntheticFrame& frame, const Perturbation& p,
                                         Rng& rng) {
  const Image& src = frame.image;
  const int h = src.height(), w = src.width(), ch = src.channels();
  detail::require_same_size(h, w, frame.label.height(), frame.label.width(), "perturb_step");
  const auto n = static_cast<std::size_t>(h) * w;

  std::vector<float> offsets(2 * n, 0.0f);
  std::vector<std::uint8_t> occluded(n, 0);
  std::vector<float> samples(src.samples().begin(), src.samples().end());
  std::vector<LabelMap::Label> labels(frame.label.labels().begin(), frame.label.labels().end());

  if (p.kind == PerturbationKind::kOcclusion) {
    for (int y = p.rect_y; y < p.rect_y + p.rect_h; ++y) {
      for (int x = p.rect_x; x < p.rect_x + p.rect_w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        occluded[i] = 1;
        for (int c = 0; c < ch; ++c) samples[i * ch + c] = SeverityTable::kOccluderFill;
      }
    }
  } else {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const auto [lx, ly] = detail::inverse_lookup(p, x, y, h, w);
        offsets[2 * i] = static_cast<float>(lx - x);
        offsets[2 * i + 1] = static_cast<float>(ly - y);
        // Sample at exactly the position the stored (float) flow describes.
        const double tx = x + static_cast<double>(offsets[2 * i]);
        const double ty = y + static_cast<double>(offsets[2 * i + 1]);
        occluded[i] = !detail::in_bounds(tx, ty, w, h);
        const double sx = std::clamp(tx, 0.0, double(w - 1));
        const double sy = std::clamp(ty, 0.0, double(h - 1));
        const auto tap = detail::bilinear_tap(sx, sy, w, h);
        for (int c = 0; c < ch; ++c) {
          double s = 0.0;
          for (int k = 0; k < 4; ++k) s += tap.weight[k] * src.samples()[tap.index[k] * ch + c];
          samples[i * ch + c] = static_cast<float>(s);
        }
        const long nx = std::clamp(detail::nearest_index(tx), 0L, long(w - 1));
        const long ny = std::clamp(detail::nearest_index(ty), 0L, long(h - 1));
        labels[i] = frame.label.at(static_cast<int>(ny), static_cast<int>(nx));
      }
    }
  }

  if (p.noise_sigma > 0.0) {
    for (auto& s : samples) {
      s = static_cast<float>(std::clamp(s + p.noise_sigma * rng.normal(), 0.0, 1.0));
    }
  } else {
    for (auto& s : samples) s = std::clamp(s, 0.0f, 1.0f);
  }

  return SyntheticFrame{Image(h, w, ch, std::move(samples)), LabelMap(h, w, std::move(labels)),
                        FlowField(h, w, std::move(offsets)), BinaryMask(h, w, std::move(occluded))};
}

inline SyntheticFrame perturb_step(const SyntheticFrame& frame, const PerturbationSpec& spec,
                                   Rng& rng) {
  const Perturbation p = sample_perturbation(spec, frame.image.height(), frame.image.width(), rng);
  return apply_perturbation(frame, p, rng);
}

// Frame 0 is the input; every later frame applies one step of a kind drawn
// uniformly per step, at a fixed severity. Pure function of its arguments.
inline SyntheticSequence generate_sequence(const Image& image, const LabelMap& label, int severity,
                                           int length = kDefaultSequenceLength,
                                           std::uint64_t seed = 0) {
  if (severity < kMinSeverity || severity > kMaxSeverity) {
    throw PreconditionError("generate_sequence: severity " + std::to_string(severity) +
                            " outside [1,6]");
  }
  if (length < 1) throw PreconditionError("generate_sequence: length must be >= 1");
  detail::require_same_size(image.height(), image.width(), label.height(), label.width(),
                            "generate_sequence");
  SyntheticSequence seq;
  seq.severity = severity;
  seq.seed = seed;
  seq.frames.push_back(SyntheticFrame{image, label, std::nullopt, std::nullopt});
  for (int step = 1; step < length; ++step) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(step)));
    const auto kind = static_cast<PerturbationKind>(rng.uniform_int(0, 3));
    const auto spec = PerturbationSpec::standard(kind, severity);
    const Perturbation p = sample_perturbation(spec, image.height(), image.width(), rng);
    seq.frames.push_back(apply_perturbation(seq.frames.back(), p, rng));
    seq.steps.push_back(p);
  }
  return seq;
}

// Seed used for one severity of a suite.
inline std::uint64_t suite_seed(std::uint64_t seed, int severity) {
  return mix_seed(seed, 0x5EED0000ull + static_cast<std::uint64_t>(severity));
}

// One sequence per severity 1..6.
inline std::vector<SyntheticSequence> generate_suite(const Image& image, const LabelMap& label,
                                                     std::uint64_t seed,
                                                     int length = kDefaultSequenceLength) {
  std::vector<SyntheticSequence> suite;
  for (int s = kMinSeverity; s <= kMaxSeverity; ++s) {
    suite.push_back(generate_sequence(image, label, s, length, suite_seed(seed, s)));
  }
  return suite;
}

// ---- directory layout -------------------------------------------------------

namespace detail {

inline std::string indexed_name(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu.%s", stem, i, ext);
  return buf;
}

}  // namespace detail

inline KeyValueRecord sequence_manifest(const SyntheticSequence& seq) {
  KeyValueRecord m;
  m.set("length", std::to_string(seq.frames.size()));
  m.set("severity", std::to_string(seq.severity));
  m.set("seed", std::to_string(seq.seed));
  const int k = seq.severity;
  m.set_number("table.translation_px", SeverityTable::translation_px(k));
  m.set_number("table.rotation_deg", SeverityTable::rotation_deg(k));
  m.set_number("table.scale_delta", SeverityTable::scale_delta(k));
  m.set_number("table.occluder_area", SeverityTable::occluder_area(k));
  m.set_number("table.noise_sigma", SeverityTable::noise_sigma(k));
  m.set("kind_sampling", "per_step_uniform");
  for (std::size_t i = 0; i < seq.steps.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "step_%03zu", i + 1);
    m.set(key, seq.steps[i].describe());
  }
  return m;
}

// frame_%03d.png, label_%03d.png, flow_%03d.flo and occl_%03d.png (flow and
// occlusion of frame i relative to i-1), plus manifest.txt.
inline void write_sequence(const std::filesystem::path& dir, const SyntheticSequence& seq,
                           const KeyValueRecord& extra = {}) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const auto& f = seq.frames[i];
    write_image_png(dir / detail::indexed_name("frame", i, "png"), f.image);
    write_label_png(dir / detail::indexed_name("label", i, "png"), f.label,
                    f.label.max_label() > 0xFFu ? 16 : 8);
    if (f.gt_flow_from_prev) write_flo(dir / detail::indexed_name("flow", i, "flo"), *f.gt_flow_from_prev);
    if (f.occluded_from_prev) {
      write_mask_png(dir / detail::indexed_name("occl", i, "png"), *f.occluded_from_prev);
    }
  }
  KeyValueRecord manifest = sequence_manifest(seq);
  manifest.merge(extra);
  manifest.write(dir / "manifest.txt");
}

// A sequence read back from disk.
struct StoredSequence {
  std::vector<Image> images;
  std::vector<LabelMap> labels;
  std::vector<FlowField> flows;        // flows[k] belongs to frame k + 1
  std::vector<BinaryMask> occlusions;  // occlusions[k] belongs to frame k + 1
};

inline StoredSequence read_sequence(const std::filesystem::path& dir) {
  StoredSequence s;
  for (std::size_t i = 0;; ++i) {
    const auto frame = dir / detail::indexed_name("frame", i, "png");
    if (!std::filesystem::exists(frame)) break;
    s.images.push_back(read_image_png(frame));
    s.labels.push_back(read_label_png(dir / detail::indexed_name("label", i, "png")));
    if (i > 0) {
      s.flows.push_back(read_flo(dir / detail::indexed_name("flow", i, "flo")));
      s.occlusions.push_back(read_mask_png(dir / detail::indexed_name("occl", i, "png")));
    }
  }
  if (s.images.empty()) throw InputError("no frame_000.png in " + dir.string());
  return s;
}

}  // namespace coherent
