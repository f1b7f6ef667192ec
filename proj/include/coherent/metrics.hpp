#pragma once

// Temporal stability rate and per-frame accuracy metrics.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "coherent/core.hpp"
#include "coherent/flow.hpp"

namespace coherent {

// A pixel is on the boundary iff one of its 4-neighbours has another label,
// so both sides of every transition are marked.
inline BinaryMask extract_boundary(const LabelMap& labels) {
  const int h = labels.height(), w = labels.width();
  std::vector<std::uint8_t> bits(labels.pixels(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto l = labels.at(y, x);
      const bool edge = (x > 0 && labels.at(y, x - 1) != l) ||
                        (x + 1 < w && labels.at(y, x + 1) != l) ||
                        (y > 0 && labels.at(y - 1, x) != l) ||
                        (y + 1 < h && labels.at(y + 1, x) != l);
      bits[static_cast<std::size_t>(y) * w + x] = edge;
    }
  }
  return BinaryMask(h, w, std::move(bits));
}

// Dilation by a Euclidean disc of radius floor(theta / 2).
inline BinaryMask extend_boundary(const BinaryMask& boundary, int theta) {
  if (theta < 1) throw PreconditionError("extend_boundary: theta must be >= 1");
  const int r = theta / 2;
  if (r == 0) return boundary;
  const int h = boundary.height(), w = boundary.width();
  std::vector<std::pair<int, int>> disc;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy <= r * r) disc.emplace_back(dy, dx);
    }
  }
  std::vector<std::uint8_t> bits(boundary.pixels(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!boundary.at(y, x)) continue;
      for (auto [dy, dx] : disc) {
        const int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) bits[static_cast<std::size_t>(yy) * w + xx] = 1;
      }
    }
  }
  return BinaryMask(h, w, std::move(bits));
}

struct RegionSpec {
  enum class Mode { kGlobal, kLocal };
  Mode mode = Mode::kGlobal;
  int band_width = 15;

  static RegionSpec global() { return {}; }
  static RegionSpec local(int band = 15) { return {Mode::kLocal, band}; }

  void validate() const {
    if (mode == Mode::kLocal && band_width < 1) {
      throw InvariantError("RegionSpec: band_width must be >= 1 for local regions");
    }
  }
};

struct PairStability {
  std::size_t evaluated = 0;
  std::size_t agreed = 0;
  // No pixel survived the region/occlusion/tracking filters; excluded from the mean.
  bool skipped() const { return evaluated == 0; }
  double ratio() const { return static_cast<double>(agreed) / static_cast<double>(evaluated); }
};

struct StabilityReport {
  double stb = 0.0;  // percent
  std::vector<PairStability> pairs;

  bool has_skipped_pairs() const {
    return std::any_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.skipped(); });
  }
  std::vector<double> per_pair_ratios() const {
    std::vector<double> r;
    for (const auto& p : pairs) {
      if (!p.skipped()) r.push_back(p.ratio());
    }
    return r;
  }

  // Recomputes stb from pairs: mean of the non-skipped ratios times 100.
  void finalize() {
    const auto ratios = per_pair_ratios();
    if (ratios.empty()) throw PreconditionError("stb: every frame pair has an empty evaluation set");
    stb = 100.0 * std::accumulate(ratios.begin(), ratios.end(), 0.0) /
          static_cast<double>(ratios.size());
  }
};

// Pools several sequences by concatenating their per-pair lists.
inline StabilityReport merge_reports(std::span<const StabilityReport> reports) {
  StabilityReport out;
  for (const auto& r : reports) out.pairs.insert(out.pairs.end(), r.pairs.begin(), r.pairs.end());
  out.finalize();
  return out;
}

// Stability rate over a sequence of N predictions.
//
// gt_flows[k] / occlusions[k] / tracked[k] belong to the pair (k, k+1) and
// live on frame k+1's grid: gt_flows[k] maps frame k+1 into frame k.
// tracked may be empty, meaning every pixel counts as tracked; gt_labels is
// only consulted for local regions, where the band sits on frame k+1's edge.
inline StabilityReport stb(std::span<const LabelMap> predictions, std::span<const FlowField> gt_flows,
                           std::span<const BinaryMask> occlusions,
                           std::span<const CorrespondenceSet> tracked, const RegionSpec& region,
                           std::span<const LabelMap> gt_labels = {}) {
  region.validate();
  const std::size_t n = predictions.size();
  if (n < 2) throw PreconditionError("stb: at least two frames required");
  if (gt_flows.size() != n - 1 || occlusions.size() != n - 1) {
    throw PreconditionError("stb: need one ground-truth flow and occlusion mask per frame pair");
  }
  if (!tracked.empty() && tracked.size() != n - 1) {
    throw PreconditionError("stb: need one correspondence set per frame pair");
  }
  const bool local = region.mode == RegionSpec::Mode::kLocal;
  if (local && gt_labels.size() != n) {
    throw PreconditionError("stb: local regions need one ground-truth label map per frame");
  }

  StabilityReport report;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const LabelMap& before = predictions[k];
    const LabelMap& after = predictions[k + 1];
    const int h = after.height(), w = after.width();
    detail::require_same_size(before.height(), before.width(), h, w, "stb");
    detail::require_same_size(gt_flows[k].height(), gt_flows[k].width(), h, w, "stb");
    detail::require_same_size(occlusions[k].height(), occlusions[k].width(), h, w, "stb");
    if (!tracked.empty()) {
      detail::require_same_size(tracked[k].height(), tracked[k].width(), h, w, "stb");
    }
    std::optional<BinaryMask> band;
    if (local) {
      detail::require_same_size(gt_labels[k + 1].height(), gt_labels[k + 1].width(), h, w, "stb");
      band = extend_boundary(extract_boundary(gt_labels[k + 1]), region.band_width);
    }
    // Nearest-neighbour transport of the earlier prediction along the exact flow.
    const auto [transported, valid] = warp_labels(before, gt_flows[k]);

    PairStability pair;
    for (std::size_t i = 0; i < after.pixels(); ++i) {
      if (occlusions[k][i] || !valid[i]) continue;
      if (band && !(*band)[i]) continue;
      if (!tracked.empty() && !tracked[k].tracked()[i]) continue;
      ++pair.evaluated;
      if (transported[i] == after[i]) ++pair.agreed;
    }
    report.pairs.push_back(pair);
  }
  report.finalize();
  return report;
}

template <typename T>
StabilityReport stb(std::span<const SoftmaxMap<T>> predictions, std::span<const FlowField> gt_flows,
                    std::span<const BinaryMask> occlusions,
                    std::span<const CorrespondenceSet> tracked, const RegionSpec& region,
                    std::span<const LabelMap> gt_labels = {}) {
  std::vector<LabelMap> labels;
  labels.reserve(predictions.size());
  for (const auto& p : predictions) labels.push_back(argmax_labels(p));
  return stb(std::span<const LabelMap>(labels), gt_flows, occlusions, tracked, region, gt_labels);
}

// Mean IoU in percent; the confusion counts are pooled over all frames and
// classes absent from both predictions and ground truth are left out.
inline double miou(std::span<const LabelMap> preds, std::span<const LabelMap> gts, int classes) {
  if (classes < 1) throw PreconditionError("miou: classes must be >= 1");
  if (preds.size() != gts.size() || preds.empty()) {
    throw PreconditionError("miou: need the same non-zero number of predictions and labels");
  }
  std::vector<std::uint64_t> inter(classes, 0), uni(classes, 0);
  for (std::size_t f = 0; f < preds.size(); ++f) {
    detail::require_same_size(preds[f].height(), preds[f].width(), gts[f].height(), gts[f].width(),
                              "miou");
    preds[f].require_classes(classes);
    gts[f].require_classes(classes);
    for (std::size_t i = 0; i < preds[f].pixels(); ++i) {
      const auto p = preds[f][i], g = gts[f][i];
      if (p == g) {
        ++inter[p];
        ++uni[p];
      } else {
        ++uni[p];
        ++uni[g];
      }
    }
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    if (uni[c] == 0) continue;
    sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++present;
  }
  return 100.0 * sum / present;
}

// Mean absolute error between foreground probability and a binary ground
// truth, in percent.
template <typename T>
double mae(std::span<const SoftmaxMap<T>> preds, std::span<const LabelMap> gts) {
  if (preds.size() != gts.size() || preds.empty()) {
    throw PreconditionError("mae: need the same non-zero number of predictions and labels");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t f = 0; f < preds.size(); ++f) {
    if (preds[f].classes() != 2) throw PreconditionError("mae: binary (2-class) maps required");
    detail::require_same_size(preds[f].height(), preds[f].width(), gts[f].height(), gts[f].width(),
                              "mae");
    gts[f].require_classes(2);
    for (std::size_t i = 0; i < gts[f].pixels(); ++i) {
      sum += std::abs(static_cast<double>(preds[f].pixel(i)[1]) - static_cast<double>(gts[f][i]));
    }
    count += gts[f].pixels();
  }
  return 100.0 * sum / static_cast<double>(count);
}

}  // namespace coherent
