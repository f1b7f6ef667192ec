#pragma once

// Dense correspondence between frames.
//
// Flow convention: a FlowField f defined on the grid of frame A maps pixel x
// of A to x + f(x) in frame B. compute_flow(prev, next) therefore returns a
// field on prev's grid pointing into next, and warping a map that lives on
// B's grid by f (warp_map / warp_labels) yields that map resampled on A's grid.

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "coherent/core.hpp"

namespace coherent {

struct FlowParams {
  int pyramid_levels = 4;
  int window_radius = 10;
  int iterations_per_level = 10;
  double min_eigen_threshold = 1e-4;

  void validate() const {
    if (pyramid_levels < 1) throw InvariantError("FlowParams: pyramid_levels must be >= 1");
    if (window_radius < 1) throw InvariantError("FlowParams: window_radius must be >= 1");
    if (iterations_per_level < 1) {
      throw InvariantError("FlowParams: iterations_per_level must be >= 1");
    }
    if (!(min_eigen_threshold > 0.0)) {
      throw InvariantError("FlowParams: min_eigen_threshold must be > 0");
    }
  }

  // Smallest image side compute_flow accepts with these parameters.
  int min_image_side() const { return (1 << (pyramid_levels - 1)) * (2 * window_radius + 1); }
};

namespace detail {

// Round half up; the single nearest-neighbour rule used everywhere.
inline long nearest_index(double t) { return static_cast<long>(std::floor(t + 0.5)); }

inline bool in_bounds(double x, double y, int width, int height) {
  return x >= 0.0 && y >= 0.0 && x <= width - 1 && y <= height - 1;
}

// Four-tap bilinear stencil at an in-bounds continuous location.
struct BilinearTap {
  std::array<std::uint32_t, 4> index{};
  std::array<double, 4> weight{};
};

inline BilinearTap bilinear_tap(double x, double y, int width, int height) {
  const int x0 = std::min(static_cast<int>(std::floor(x)), width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), height - 1);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  BilinearTap t;
  t.index = {static_cast<std::uint32_t>(y0 * width + x0), static_cast<std::uint32_t>(y0 * width + x1),
             static_cast<std::uint32_t>(y1 * width + x0), static_cast<std::uint32_t>(y1 * width + x1)};
  t.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  return t;
}

// Single-channel double raster used inside the flow solver.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0)
      : height(h), width(w), v(static_cast<std::size_t>(h) * w, fill) {}
  double& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
  double operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }
  double clamped(int y, int x) const {
    return (*this)(std::clamp(y, 0, height - 1), std::clamp(x, 0, width - 1));
  }
  // Bilinear with replicated borders.
  double sample(double x, double y) const {
    x = std::clamp(x, 0.0, double(width - 1));
    y = std::clamp(y, 0.0, double(height - 1));
    const auto t = bilinear_tap(x, y, width, height);
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += t.weight[k] * v[t.index[k]];
    return s;
  }
};

inline Plane to_plane(const Image& image) {
  const Image gray = image.to_gray();
  Plane p(gray.height(), gray.width());
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = gray.samples()[i];
  return p;
}

// Separable [1 4 6 4 1] / 16 blur, replicated borders.
inline Plane binomial_blur(const Plane& in) {
  static constexpr std::array<double, 5> k{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  Plane tmp(in.height, in.width);
  Plane out(in.height, in.width);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (int d = -2; d <= 2; ++d) s += k[d + 2] * in.clamped(y, x + d);
      tmp(y, x) = s;
    }
  }
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (int d = -2; d <= 2; ++d) s += k[d + 2] * tmp.clamped(y + d, x);
      out(y, x) = s;
    }
  }
  return out;
}

inline Plane downsample(const Plane& in) {
  const Plane blurred = binomial_blur(in);
  Plane out((in.height + 1) / 2, (in.width + 1) / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out(y, x) = blurred(2 * y, 2 * x);
  }
  return out;
}

// Window sums over [x-r, x+r] x [y-r, y+r] clipped to the image.
class BoxSummer {
 public:
  BoxSummer(int height, int width, int radius)
      : h_(height), w_(width), r_(radius),
        integral_(static_cast<std::size_t>(height + 1) * (width + 1)) {}

  Plane operator()(const Plane& in) {
    std::fill(integral_.begin(), integral_.end(), 0.0);
    const int stride = w_ + 1;
    for (int y = 0; y < h_; ++y) {
      double row = 0.0;
      for (int x = 0; x < w_; ++x) {
        row += in(y, x);
        integral_[(y + 1) * stride + x + 1] = integral_[y * stride + x + 1] + row;
      }
    }
    Plane out(h_, w_);
    for (int y = 0; y < h_; ++y) {
      const int y0 = std::max(y - r_, 0), y1 = std::min(y + r_, h_ - 1) + 1;
      for (int x = 0; x < w_; ++x) {
        const int x0 = std::max(x - r_, 0), x1 = std::min(x + r_, w_ - 1) + 1;
        out(y, x) = integral_[y1 * stride + x1] - integral_[y0 * stride + x1] -
                    integral_[y1 * stride + x0] + integral_[y0 * stride + x0];
      }
    }
    return out;
  }

  double window_area(int y, int x) const {
    const int ny = std::min(y + r_, h_ - 1) - std::max(y - r_, 0) + 1;
    const int nx = std::min(x + r_, w_ - 1) - std::max(x - r_, 0) + 1;
    return static_cast<double>(nx) * ny;
  }

 private:
  int h_, w_, r_;
  std::vector<double> integral_;
};

// Iterative Lucas-Kanade refinement of (u, v) on one pyramid level.
inline void refine_level(const Plane& prev, const Plane& next, const FlowParams& params,
                         Plane& u, Plane& v) {
  const int h = prev.height, w = prev.width;
  Plane ix(h, w), iy(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      ix(y, x) = 0.5 * (prev.clamped(y, x + 1) - prev.clamped(y, x - 1));
      iy(y, x) = 0.5 * (prev.clamped(y + 1, x) - prev.clamped(y - 1, x));
    }
  }
  BoxSummer box(h, w, params.window_radius);
  Plane prod(h, w);
  for (std::size_t i = 0; i < prod.v.size(); ++i) prod.v[i] = ix.v[i] * ix.v[i];
  const Plane gxx = box(prod);
  for (std::size_t i = 0; i < prod.v.size(); ++i) prod.v[i] = ix.v[i] * iy.v[i];
  const Plane gxy = box(prod);
  for (std::size_t i = 0; i < prod.v.size(); ++i) prod.v[i] = iy.v[i] * iy.v[i];
  const Plane gyy = box(prod);

  std::vector<std::uint8_t> solvable(prod.v.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double a = gxx(y, x), b = gxy(y, x), c = gyy(y, x);
      const double min_eig = 0.5 * (a + c - std::sqrt((a - c) * (a - c) + 4 * b * b));
      solvable[static_cast<std::size_t>(y) * w + x] =
          min_eig / box.window_area(y, x) >= params.min_eigen_threshold;
    }
  }

  // Each window pixel x' is warped by its own flow f(x'); the residual is
  // re-linearised to the centre flow f(x) as dt(x') + grad(x') . (f(x) - f(x')).
  // The Gauss-Newton step then solves G f_new = sum grad grad^T f(x') - grad dt(x'),
  // which keeps every window's estimate independent of neighbouring errors.
  Plane rx(h, w), ry(h, w);
  for (int it = 0; it < params.iterations_per_level; ++it) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double gx = ix(y, x), gy = iy(y, x);
        const double du = u(y, x), dv = v(y, x);
        const double dt = next.sample(x + du, y + dv) - prev(y, x);
        const double proj = gx * du + gy * dv - dt;
        rx(y, x) = gx * proj;
        ry(y, x) = gy * proj;
      }
    }
    const Plane bx = box(rx);
    const Plane by = box(ry);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!solvable[static_cast<std::size_t>(y) * w + x]) continue;
        const double a = gxx(y, x), b = gxy(y, x), c = gyy(y, x);
        const double det = a * c - b * b;
        u(y, x) = (c * bx(y, x) - b * by(y, x)) / det;
        v(y, x) = (a * by(y, x) - b * bx(y, x)) / det;
      }
    }
  }
}

}  // namespace detail

// Pyramidal iterative Lucas-Kanade over every pixel. Returns a field on
// prev's grid such that next(x + u, y + v) ~ prev(x, y).
inline FlowField compute_flow(const Image& prev, const Image& next,
                              const FlowParams& params = {}) {
  params.validate();
  detail::require_same_size(prev.height(), prev.width(), next.height(), next.width(),
                            "compute_flow");
  if (std::min(prev.height(), prev.width()) < params.min_image_side()) {
    throw DimensionError("compute_flow: image side " +
                         std::to_string(std::min(prev.height(), prev.width())) +
                         " is smaller than the required " +
                         std::to_string(params.min_image_side()));
  }

  std::vector<detail::Plane> pyr_prev{detail::binomial_blur(detail::to_plane(prev))};
  std::vector<detail::Plane> pyr_next{detail::binomial_blur(detail::to_plane(next))};
  for (int l = 1; l < params.pyramid_levels; ++l) {
    pyr_prev.push_back(detail::downsample(pyr_prev.back()));
    pyr_next.push_back(detail::downsample(pyr_next.back()));
  }

  detail::Plane u, v;
  for (int l = params.pyramid_levels - 1; l >= 0; --l) {
    const auto& p = pyr_prev[l];
    detail::Plane lu(p.height, p.width), lv(p.height, p.width);
    if (!u.v.empty()) {
      for (int y = 0; y < p.height; ++y) {
        for (int x = 0; x < p.width; ++x) {
          lu(y, x) = 2.0 * u.sample(0.5 * x, 0.5 * y);
          lv(y, x) = 2.0 * v.sample(0.5 * x, 0.5 * y);
        }
      }
    }
    detail::refine_level(p, pyr_next[l], params, lu, lv);
    u = std::move(lu);
    v = std::move(lv);
  }

  std::vector<float> offsets(2 * u.v.size());
  for (std::size_t i = 0; i < u.v.size(); ++i) {
    offsets[2 * i] = std::isfinite(u.v[i]) ? static_cast<float>(u.v[i]) : 0.0f;
    offsets[2 * i + 1] = std::isfinite(v.v[i]) ? static_cast<float>(v.v[i]) : 0.0f;
  }
  return FlowField(prev.height(), prev.width(), std::move(offsets));
}

// {O}: pixels whose forward target lies inside the image. The verified subset
// additionally satisfies |x + fwd(x) + bwd(x + fwd(x)) - x| < fb_epsilon, with
// bwd sampled bilinearly. Untracked pixels carry an infinite fb_error.
inline CorrespondenceSet forward_backward_check(const FlowField& fwd, const FlowField& bwd,
                                                double fb_epsilon) {
  detail::require_same_size(fwd.height(), fwd.width(), bwd.height(), bwd.width(),
                            "forward_backward_check");
  if (!(fb_epsilon > 0.0)) throw PreconditionError("forward_backward_check: fb_epsilon must be > 0");
  const int h = fwd.height(), w = fwd.width();
  const auto n = static_cast<std::size_t>(h) * w;
  std::vector<std::uint8_t> tracked(n, 0), dual(n, 0);
  std::vector<float> err(n, std::numeric_limits<float>::infinity());
  const auto bwd_off = bwd.offsets();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double tx = x + static_cast<double>(fwd.u(y, x));
      const double ty = y + static_cast<double>(fwd.v(y, x));
      if (!detail::in_bounds(tx, ty, w, h)) continue;
      tracked[i] = 1;
      const auto tap = detail::bilinear_tap(tx, ty, w, h);
      double bu = 0.0, bv = 0.0;
      for (int k = 0; k < 4; ++k) {
        bu += tap.weight[k] * bwd_off[2 * tap.index[k]];
        bv += tap.weight[k] * bwd_off[2 * tap.index[k] + 1];
      }
      const double e = std::hypot(tx + bu - x, ty + bv - y);
      err[i] = static_cast<float>(e);
      dual[i] = e < fb_epsilon;
    }
  }
  return CorrespondenceSet(BinaryMask(h, w, std::move(tracked)), BinaryMask(h, w, std::move(dual)),
                           std::move(err));
}

// Precomputed bilinear resampling of a map along a flow field, with the
// matching vector-Jacobian product for backpropagation into the source.
class WarpPlan {
 public:
  explicit WarpPlan(const FlowField& flow)
      : height_(flow.height()), width_(flow.width()), taps_(flow.pixels()) {
    std::vector<std::uint8_t> valid(flow.pixels(), 0);
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
        const double tx = x + static_cast<double>(flow.u(y, x));
        const double ty = y + static_cast<double>(flow.v(y, x));
        if (!detail::in_bounds(tx, ty, width_, height_)) continue;
        valid[i] = 1;
        taps_[i] = detail::bilinear_tap(tx, ty, width_, height_);
      }
    }
    validity_ = BinaryMask(height_, width_, std::move(valid));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  const BinaryMask& validity() const { return validity_; }

  // Interpolated scores renormalised to sum 1; invalid pixels get the
  // uniform distribution.
  template <typename T>
  SoftmaxMap<T> apply(const SoftmaxMap<T>& source) const {
    require_shape(source);
    const int c = source.classes();
    ScoreTensor<T> out(height_, width_, c, T(1) / T(c));
    std::vector<double> mixed(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < taps_.size(); ++i) {
      if (!validity_[i]) continue;
      const double sum = interpolate(source, i, mixed);
      auto dst = out.pixel(i);
      if (sum > 0.0) {
        for (int k = 0; k < c; ++k) dst[k] = static_cast<T>(mixed[k] / sum);
      }
    }
    return SoftmaxMap<T>::unchecked(std::move(out));
  }

  // Given dL/d(apply(source)), returns dL/d(source).
  template <typename T>
  ScoreTensor<T> backward(const SoftmaxMap<T>& source, const ScoreTensor<T>& grad_out) const {
    require_shape(source);
    const int c = source.classes();
    ScoreTensor<T> grad(height_, width_, c);
    std::vector<double> mixed(static_cast<std::size_t>(c));
    std::vector<double> dmixed(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < taps_.size(); ++i) {
      if (!validity_[i]) continue;
      const auto g = grad_out.pixel(i);
      if (std::all_of(g.begin(), g.end(), [](T v) { return v == T(0); })) continue;
      const double sum = interpolate(source, i, mixed);
      if (!(sum > 0.0)) continue;
      // out_k = mixed_k / sum  =>  dL/dmixed_k = (g_k - sum_j g_j out_j) / sum
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += static_cast<double>(g[k]) * mixed[k] / sum;
      for (int k = 0; k < c; ++k) dmixed[k] = (static_cast<double>(g[k]) - dot) / sum;
      const auto& tap = taps_[i];
      for (int n = 0; n < 4; ++n) {
        if (tap.weight[n] == 0.0) continue;
        auto dst = grad.pixel(tap.index[n]);
        for (int k = 0; k < c; ++k) dst[k] += static_cast<T>(tap.weight[n] * dmixed[k]);
      }
    }
    return grad;
  }

 private:
  template <typename T>
  void require_shape(const SoftmaxMap<T>& source) const {
    detail::require_same_size(height_, width_, source.height(), source.width(), "warp_map");
  }

  template <typename T>
  double interpolate(const SoftmaxMap<T>& source, std::size_t i, std::vector<double>& mixed) const {
    std::fill(mixed.begin(), mixed.end(), 0.0);
    const auto& tap = taps_[i];
    for (int n = 0; n < 4; ++n) {
      if (tap.weight[n] == 0.0) continue;
      const auto src = source.pixel(tap.index[n]);
      for (std::size_t k = 0; k < mixed.size(); ++k) {
        mixed[k] += tap.weight[n] * static_cast<double>(src[k]);
      }
    }
    double sum = 0.0;
    for (double m : mixed) sum += m;
    return sum;
  }

  int height_;
  int width_;
  std::vector<detail::BilinearTap> taps_;
  BinaryMask validity_ = BinaryMask::filled(1, 1, false);
};

// Resamples source at x + flow(x); returns the warped map and its validity.
template <typename T>
std::pair<SoftmaxMap<T>, BinaryMask> warp_map(const SoftmaxMap<T>& source, const FlowField& flow) {
  detail::require_same_size(source.height(), source.width(), flow.height(), flow.width(),
                            "warp_map");
  WarpPlan plan(flow);
  return {plan.apply(source), plan.validity()};
}

// Nearest-neighbour label transport along flow. Invalid pixels get label 0.
inline std::pair<LabelMap, BinaryMask> warp_labels(const LabelMap& source, const FlowField& flow) {
  detail::require_same_size(source.height(), source.width(), flow.height(), flow.width(),
                            "warp_labels");
  const int h = source.height(), w = source.width();
  std::vector<LabelMap::Label> out(source.pixels(), 0);
  std::vector<std::uint8_t> valid(source.pixels(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double tx = x + static_cast<double>(flow.u(y, x));
      const double ty = y + static_cast<double>(flow.v(y, x));
      if (!detail::in_bounds(tx, ty, w, h)) continue;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      valid[i] = 1;
      out[i] = source.at(static_cast<int>(detail::nearest_index(ty)),
                         static_cast<int>(detail::nearest_index(tx)));
    }
  }
  return {LabelMap(h, w, std::move(out)), BinaryMask(h, w, std::move(valid))};
}

// Flows and verified correspondences for one frame pair, both directions.
struct FramePairMatch {
  FlowField prev_to_next;         // on prev's grid; warps next-frame maps onto prev
  FlowField next_to_prev;         // on next's grid; warps prev-frame maps onto next
  CorrespondenceSet at_prev;      // forward-backward check of prev_to_next
  CorrespondenceSet at_next;      // forward-backward check of next_to_prev

  static FramePairMatch from_flows(FlowField prev_to_next, FlowField next_to_prev,
                                   double fb_epsilon) {
    auto at_prev = forward_backward_check(prev_to_next, next_to_prev, fb_epsilon);
    auto at_next = forward_backward_check(next_to_prev, prev_to_next, fb_epsilon);
    return {std::move(prev_to_next), std::move(next_to_prev), std::move(at_prev),
            std::move(at_next)};
  }

  static FramePairMatch identity(int height, int width) {
    return from_flows(FlowField::zeros(height, width), FlowField::zeros(height, width), 1.0);
  }

  // Same pair seen from the other frame.
  FramePairMatch swapped() const { return {next_to_prev, prev_to_next, at_next, at_prev}; }
};

inline FramePairMatch match_frames(const Image& prev, const Image& next,
                                   const FlowParams& params = {}, double fb_epsilon = 1.0) {
  return FramePairMatch::from_flows(compute_flow(prev, next, params),
                                    compute_flow(next, prev, params), fb_epsilon);
}

}  // namespace coherent
