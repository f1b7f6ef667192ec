#pragma once

// Test-only helpers: random instances, a procedural texture with an analytic
// form, and a central finite-difference oracle.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "coherent/coherent.hpp"

namespace coherent::testing {

template <typename T = double>
SoftmaxMap<T> random_softmax(int h, int w, int c, std::mt19937_64& rng, double spread = 2.0) {
  std::normal_distribution<double> logit(0.0, spread);
  ScoreTensor<T> s(h, w, c);
  for (std::size_t i = 0; i < s.pixels(); ++i) {
    std::vector<double> e(c);
    double sum = 0.0;
    for (int k = 0; k < c; ++k) sum += e[k] = std::exp(logit(rng));
    for (int k = 0; k < c; ++k) s.pixel(i)[k] = static_cast<T>(e[k] / sum);
  }
  return SoftmaxMap<T>::unchecked(std::move(s));
}

template <typename T = double>
SoftmaxMap<T> one_hot(const LabelMap& labels, int classes) {
  ScoreTensor<T> s(labels.height(), labels.width(), classes);
  for (std::size_t i = 0; i < labels.pixels(); ++i) s.pixel(i)[labels[i]] = T(1);
  return SoftmaxMap<T>(std::move(s));
}

inline LabelMap random_labels(int h, int w, int c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, c - 1);
  std::vector<LabelMap::Label> v(static_cast<std::size_t>(h) * w);
  for (auto& l : v) l = static_cast<LabelMap::Label>(d(rng));
  return LabelMap(h, w, std::move(v));
}

// Sum of random plane waves with log-uniform wavelengths in [8, 64] px, so
// every pyramid level keeps some structure in both directions.
class Texture {
 public:
  explicit Texture(std::uint64_t seed, int waves = 12) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> log_wavelength(std::log(8.0), std::log(64.0));
    for (int i = 0; i < waves; ++i) {
      const double a = angle(rng), l = std::exp(log_wavelength(rng));
      waves_.push_back({2.0 * std::numbers::pi * std::cos(a) / l,
                        2.0 * std::numbers::pi * std::sin(a) / l, angle(rng)});
    }
  }

  double operator()(double x, double y) const {
    double s = 0.0;
    for (const auto& w : waves_) s += std::sin(w.kx * x + w.ky * y + w.phase);
    return 0.5 + 0.2 * s / std::sqrt(static_cast<double>(waves_.size()));
  }

  // Renders pixel (x, y) as texture(map(x, y)).
  Image render(int h, int w, const std::function<std::pair<double, double>(double, double)>& map =
                                 [](double x, double y) { return std::pair{x, y}; }) const {
    std::vector<float> px(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto [sx, sy] = map(x, y);
        px[static_cast<std::size_t>(y) * w + x] =
            static_cast<float>(std::clamp((*this)(sx, sy), 0.0, 1.0));
      }
    }
    return Image(h, w, 1, std::move(px));
  }

 private:
  struct Wave {
    double kx, ky, phase;
  };
  std::vector<Wave> waves_;
};

// Central differences of f with respect to every entry of `at`.
inline ScoreTensor<double> numeric_gradient(
    const std::function<double(const SoftmaxMap<double>&)>& f, const SoftmaxMap<double>& at,
    double step = 1e-4) {
  ScoreTensor<double> grad(at.height(), at.width(), at.classes());
  ScoreTensor<double> probe = at.scores();
  for (std::size_t i = 0; i < probe.data().size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double up = f(SoftmaxMap<double>::unchecked(probe));
    probe.data()[i] = orig - step;
    const double down = f(SoftmaxMap<double>::unchecked(probe));
    probe.data()[i] = orig;
    grad.data()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

struct GradientComparison {
  double worst = 0.0;  // largest |a - n| / max(|a|, |n|, floor)
  std::size_t worst_index = 0;
};

// Relative agreement with an absolute floor so entries that are zero in both
// do not divide by zero.
inline GradientComparison compare_gradients(const ScoreTensor<double>& analytic,
                                            const ScoreTensor<double>& numeric,
                                            double floor = 1e-3) {
  GradientComparison c;
  for (std::size_t i = 0; i < analytic.data().size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    if (rel > c.worst) {
      c.worst = rel;
      c.worst_index = i;
    }
  }
  return c;
}

// Smallest gap between distinct Lovasz error values on the active set for
// every present class; instances with near-ties are not differentiable.
inline double min_error_gap(const SoftmaxMap<double>& pred, const LabelMap& labels,
                            const BinaryMask& active) {
  double gap = std::numeric_limits<double>::infinity();
  for (int c = 0; c < pred.classes(); ++c) {
    std::vector<double> err;
    for (std::size_t i = 0; i < active.pixels(); ++i) {
      if (!active[i]) continue;
      const double p = pred.pixel(i)[c];
      err.push_back(labels[i] == static_cast<LabelMap::Label>(c) ? 1.0 - p : p);
    }
    std::sort(err.begin(), err.end());
    for (std::size_t k = 1; k < err.size(); ++k) gap = std::min(gap, err[k] - err[k - 1]);
  }
  return gap;
}

// Smallest top-1 vs runner-up margin; argmax labels are stable under steps
// well below it.
template <typename T>
double min_argmax_margin(const SoftmaxMap<T>& m) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.pixels(); ++i) {
    std::vector<double> p(m.pixel(i).begin(), m.pixel(i).end());
    std::sort(p.rbegin(), p.rend());
    margin = std::min(margin, p[0] - p[1]);
  }
  return margin;
}

// Smallest distance of a top-1 margin to gamma over dual-matched pixels, in
// the given direction; D is stable under perturbations well below it.
inline double d_set_clearance(const SoftmaxMap<double>& source, const SoftmaxMap<double>& target,
                       const FlowField& lookup, const CorrespondenceSet& corr, double gamma) {
  const auto [warped, valid] = warp_map(source, lookup);
  double clearance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < target.pixels(); ++i) {
    if (!corr.dual_matched()[i] || !valid[i]) continue;
    const auto t = target.pixel(i);
    const auto top = std::max_element(t.begin(), t.end()) - t.begin();
    clearance = std::min(clearance, std::abs(t[top] - warped.pixel(i)[top] - gamma));
  }
  return clearance;
}

// Direct per-pixel definitions used as oracles for the metric code.
inline bool brute_boundary_pixel(const LabelMap& l, int y, int x) {
  const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
  for (int k = 0; k < 4; ++k) {
    const int ny = y + dy[k], nx = x + dx[k];
    if (ny < 0 || nx < 0 || ny >= l.height() || nx >= l.width()) continue;
    if (l.at(ny, nx) != l.at(y, x)) return true;
  }
  return false;
}

inline bool brute_in_band(const LabelMap& l, int y, int x, int theta) {
  const int r = theta / 2;
  for (int by = 0; by < l.height(); ++by) {
    for (int bx = 0; bx < l.width(); ++bx) {
      if ((by - y) * (by - y) + (bx - x) * (bx - x) <= r * r && brute_boundary_pixel(l, by, bx)) {
        return true;
      }
    }
  }
  return false;
}

struct BrutePair {
  std::uint64_t agreed = 0;
  std::uint64_t evaluated = 0;
};

// Pair k compares frame k+1 with frame k transported along flows[k].
// tracked and band_labels may be empty.
inline std::vector<BrutePair> brute_force_stb_pairs(const std::vector<LabelMap>& preds,
                                                    const std::vector<FlowField>& flows,
                                                    const std::vector<BinaryMask>& occl,
                                                    const std::vector<BinaryMask>& tracked,
                                                    const std::vector<LabelMap>& band_labels,
                                                    int theta) {
  std::vector<BrutePair> out;
  for (std::size_t k = 0; k + 1 < preds.size(); ++k) {
    BrutePair pair;
    const int h = preds[k + 1].height(), w = preds[k + 1].width();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (occl[k].at(y, x)) continue;
        if (!tracked.empty() && !tracked[k].at(y, x)) continue;
        if (!band_labels.empty() && !brute_in_band(band_labels[k + 1], y, x, theta)) continue;
        const double sx = x + static_cast<double>(flows[k].u(y, x));
        const double sy = y + static_cast<double>(flows[k].v(y, x));
        if (sx < 0 || sy < 0 || sx > w - 1 || sy > h - 1) continue;
        const int nx = static_cast<int>(std::floor(sx + 0.5));
        const int ny = static_cast<int>(std::floor(sy + 0.5));
        ++pair.evaluated;
        if (preds[k].at(ny, nx) == preds[k + 1].at(y, x)) ++pair.agreed;
      }
    }
    out.push_back(pair);
  }
  return out;
}

inline double brute_force_stb(const std::vector<BrutePair>& pairs) {
  double sum = 0.0;
  int used = 0;
  for (const auto& p : pairs) {
    if (p.evaluated == 0) continue;
    sum += static_cast<double>(p.agreed) / static_cast<double>(p.evaluated);
    ++used;
  }
  return 100.0 * sum / used;
}

}  // namespace coherent::testing
