#pragma once

// Per-pixel cross-entropy, Lovasz-Softmax, and the two temporal coherency
// terms, each returning its value together with the gradient with respect to
// the input softmax maps. Flow is treated as a fixed matching: gradients
// reach the maps through the bilinear warp weights, never through the flow.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "coherent/core.hpp"
#include "coherent/flow.hpp"
#include "coherent/metrics.hpp"

namespace coherent {

// Probabilities are clamped from below before every logarithm.
inline constexpr double kProbabilityFloor = 1e-7;

template <typename T>
struct LossTerm {
  double value = 0.0;
  ScoreTensor<T> grad;
  std::size_t active = 0;
};

template <typename T>
LossTerm<T> seg_loss(const SoftmaxMap<T>& pred, const LabelMap& gt) {
  detail::require_same_size(pred.height(), pred.width(), gt.height(), gt.width(), "seg_loss");
  gt.require_classes(pred.classes());
  const std::size_t n = pred.pixels();
  LossTerm<T> out{0.0, ScoreTensor<T>(pred.height(), pred.width(), pred.classes()), n};
  for (std::size_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(pred.pixel(i)[gt[i]]);
    out.value -= std::log(std::max(p, kProbabilityFloor));
    if (p > kProbabilityFloor) {
      out.grad.pixel(i)[gt[i]] = static_cast<T>(-1.0 / (static_cast<double>(n) * p));
    }
  }
  out.value /= static_cast<double>(n);
  return out;
}

template <typename T>
struct LovaszResult {
  double value = 0.0;
  ScoreTensor<T> grad;
  std::size_t active = 0;
  // Per-class surrogate, empty for classes absent from the active labels.
  std::vector<std::optional<double>> per_class;
};

// Lovasz-Softmax restricted to `active`, averaged over the classes present in
// the active labels. The sort permutation is treated as locally constant.
template <typename T>
LovaszResult<T> lovasz_softmax(const SoftmaxMap<T>& pred, const LabelMap& labels,
                               const BinaryMask& active) {
  detail::require_same_size(pred.height(), pred.width(), labels.height(), labels.width(),
                            "lovasz_softmax");
  detail::require_same_size(pred.height(), pred.width(), active.height(), active.width(),
                            "lovasz_softmax");
  labels.require_classes(pred.classes());

  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < active.pixels(); ++i) {
    if (active[i]) pixels.push_back(i);
  }
  if (pixels.empty()) throw PreconditionError("lovasz_softmax: empty active set");

  const int classes = pred.classes();
  LovaszResult<T> out{0.0, ScoreTensor<T>(pred.height(), pred.width(), classes), pixels.size(),
                      std::vector<std::optional<double>>(classes)};
  std::vector<std::size_t> present;
  for (int c = 0; c < classes; ++c) {
    if (std::any_of(pixels.begin(), pixels.end(),
                    [&](std::size_t i) { return labels[i] == static_cast<LabelMap::Label>(c); })) {
      present.push_back(static_cast<std::size_t>(c));
    }
  }

  const std::size_t m = pixels.size();
  std::vector<double> err(m);
  std::vector<std::uint8_t> fg(m);
  std::vector<std::size_t> order(m);
  std::vector<double> weight(m);
  for (std::size_t c : present) {
    std::size_t fg_total = 0;
    for (std::size_t k = 0; k < m; ++k) {
      fg[k] = labels[pixels[k]] == c;
      const double p = static_cast<double>(pred.pixel(pixels[k])[c]);
      err[k] = fg[k] ? 1.0 - p : p;
      fg_total += fg[k];
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });

    // Discrete gradient of the Jaccard loss along the sorted prefix.
    double fg_seen = 0.0, bg_seen = 0.0, previous = 0.0, loss = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t k = order[r];
      (fg[k] ? fg_seen : bg_seen) += 1.0;
      const double inter = static_cast<double>(fg_total) - fg_seen;
      const double uni = static_cast<double>(fg_total) + bg_seen;
      const double jaccard = 1.0 - inter / uni;
      weight[k] = jaccard - previous;
      previous = jaccard;
      loss += err[k] * weight[k];
    }
    out.per_class[c] = loss;
    out.value += loss;
    for (std::size_t k = 0; k < m; ++k) {
      const double d = fg[k] ? -weight[k] : weight[k];
      out.grad.pixel(pixels[k])[c] += static_cast<T>(d / static_cast<double>(present.size()));
    }
  }
  out.value /= static_cast<double>(present.size());
  return out;
}

// Value and gradients of a two-direction coherency term.
template <typename T>
struct PairLoss {
  double value = 0.0;
  ScoreTensor<T> grad_prev;
  ScoreTensor<T> grad_next;
  std::size_t active_forward = 0;   // on next's grid (prev warped forward)
  std::size_t active_backward = 0;  // on prev's grid (next warped backward)
  bool empty() const { return active_forward == 0 && active_backward == 0; }
};

namespace detail {

template <typename T>
struct DirectionalTerm {
  double value = 0.0;
  ScoreTensor<T> grad_source;
  std::size_t active = 0;
};

// Lovasz term of `source` warped onto the grid of `reference`, supervised by
// the argmax labels of `reference` inside its extended boundary band.
template <typename T>
DirectionalTerm<T> boundary_direction(const SoftmaxMap<T>& source, const SoftmaxMap<T>& reference,
                                      const FlowField& lookup, int theta) {
  DirectionalTerm<T> out{0.0, ScoreTensor<T>(source.height(), source.width(), source.classes()), 0};
  const LabelMap hypothetical = argmax_labels(reference);
  const BinaryMask band = extend_boundary(extract_boundary(hypothetical), theta);
  const WarpPlan plan(lookup);
  const BinaryMask active = band & plan.validity();
  out.active = active.count();
  if (out.active == 0) return out;
  const SoftmaxMap<T> warped = plan.apply(source);
  const auto ls = lovasz_softmax(warped, hypothetical, active);
  out.value = ls.value;
  out.grad_source = plan.backward(source, ls.grad);
  return out;
}

}  // namespace detail

// Boundary coherency: half the Lovasz term of prev warped onto next (band from
// next's argmax) plus half the symmetric backward term.
template <typename T>
PairLoss<T> boundary_coherency(const SoftmaxMap<T>& m_prev, const SoftmaxMap<T>& m_next,
                               const FramePairMatch& match, int theta) {
  detail::require_same_size(m_prev.height(), m_prev.width(), m_next.height(), m_next.width(),
                            "boundary_coherency");
  if (m_prev.classes() != m_next.classes()) {
    throw DimensionError("boundary_coherency: class count mismatch");
  }
  if (theta < 1) throw PreconditionError("boundary_coherency: theta must be >= 1");
  auto fwd = detail::boundary_direction(m_prev, m_next, match.next_to_prev, theta);
  auto bwd = detail::boundary_direction(m_next, m_prev, match.prev_to_next, theta);
  PairLoss<T> out;
  out.value = 0.5 * fwd.value + 0.5 * bwd.value;
  out.grad_prev = std::move(fwd.grad_source);
  out.grad_prev *= T(0.5);
  out.grad_next = std::move(bwd.grad_source);
  out.grad_next *= T(0.5);
  out.active_forward = fwd.active;
  out.active_backward = bwd.active;
  return out;
}

// D ∩ Õ on the grid of `current`: verified correspondences where the current
// map is more confident than the warped one by more than gamma.
template <typename T>
BinaryMask confident_disagreement_set(const SoftmaxMap<T>& current, const SoftmaxMap<T>& warped,
                                      double gamma, const CorrespondenceSet& corr,
                                      DisagreementMode mode = DisagreementMode::kTopOneMargin) {
  detail::require_same_size(current.height(), current.width(), warped.height(), warped.width(),
                            "confident_disagreement_set");
  detail::require_same_size(current.height(), current.width(), corr.height(), corr.width(),
                            "confident_disagreement_set");
  if (current.classes() != warped.classes()) {
    throw DimensionError("confident_disagreement_set: class count mismatch");
  }
  std::vector<std::uint8_t> bits(current.pixels(), 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!corr.dual_matched()[i]) continue;
    const auto cur = current.pixel(i);
    const auto wrp = warped.pixel(i);
    double diff = 0.0;
    if (mode == DisagreementMode::kTopOneMargin) {
      const auto top = static_cast<std::size_t>(std::max_element(cur.begin(), cur.end()) - cur.begin());
      diff = static_cast<double>(cur[top]) - static_cast<double>(wrp[top]);
    } else {
      for (std::size_t c = 0; c < cur.size(); ++c) {
        diff = std::max(diff, std::abs(static_cast<double>(cur[c]) - static_cast<double>(wrp[c])));
      }
    }
    bits[i] = diff > gamma;
  }
  return BinaryMask(current.height(), current.width(), std::move(bits));
}

namespace detail {

// Soft cross-entropy of `source` warped onto the target grid against the
// (constant) target scores, averaged over D ∩ Õ.
template <typename T>
DirectionalTerm<T> global_direction(const SoftmaxMap<T>& source, const SoftmaxMap<T>& target,
                                    const FlowField& lookup, const CorrespondenceSet& corr,
                                    double gamma, DisagreementMode mode) {
  DirectionalTerm<T> out{0.0, ScoreTensor<T>(source.height(), source.width(), source.classes()), 0};
  const WarpPlan plan(lookup);
  const SoftmaxMap<T> warped = plan.apply(source);
  const BinaryMask active =
      confident_disagreement_set(target, warped, gamma, corr, mode) & plan.validity();
  out.active = active.count();
  if (out.active == 0) return out;
  const double norm = 1.0 / static_cast<double>(out.active);
  ScoreTensor<T> grad_warped(source.height(), source.width(), source.classes());
  for (std::size_t i = 0; i < active.pixels(); ++i) {
    if (!active[i]) continue;
    const auto y = target.pixel(i);
    const auto p = warped.pixel(i);
    auto g = grad_warped.pixel(i);
    for (std::size_t c = 0; c < y.size(); ++c) {
      const double pc = static_cast<double>(p[c]);
      const double yc = static_cast<double>(y[c]);
      out.value -= norm * yc * std::log(std::max(pc, kProbabilityFloor));
      if (pc > kProbabilityFloor) g[c] = static_cast<T>(-norm * yc / pc);
    }
  }
  out.grad_source = plan.backward(source, grad_warped);
  return out;
}

}  // namespace detail

// Global coherency with explicit targets: the *_targets maps supply the
// soft labels and the confidence reference, the m_* maps are the ones being
// differentiated. The two-map overload uses the maps as their own targets.
template <typename T>
PairLoss<T> global_coherency(const SoftmaxMap<T>& m_prev, const SoftmaxMap<T>& m_next,
                             const SoftmaxMap<T>& prev_targets, const SoftmaxMap<T>& next_targets,
                             const FramePairMatch& match, double gamma,
                             DisagreementMode mode = DisagreementMode::kTopOneMargin) {
  detail::require_same_size(m_prev.height(), m_prev.width(), m_next.height(), m_next.width(),
                            "global_coherency");
  if (m_prev.classes() != m_next.classes()) {
    throw DimensionError("global_coherency: class count mismatch");
  }
  auto fwd = detail::global_direction(m_prev, next_targets, match.next_to_prev, match.at_next,
                                      gamma, mode);
  auto bwd = detail::global_direction(m_next, prev_targets, match.prev_to_next, match.at_prev,
                                      gamma, mode);
  PairLoss<T> out;
  out.value = 0.5 * fwd.value + 0.5 * bwd.value;
  out.grad_prev = std::move(fwd.grad_source);
  out.grad_prev *= T(0.5);
  out.grad_next = std::move(bwd.grad_source);
  out.grad_next *= T(0.5);
  out.active_forward = fwd.active;
  out.active_backward = bwd.active;
  return out;
}

template <typename T>
PairLoss<T> global_coherency(const SoftmaxMap<T>& m_prev, const SoftmaxMap<T>& m_next,
                             const FramePairMatch& match, double gamma,
                             DisagreementMode mode = DisagreementMode::kTopOneMargin) {
  return global_coherency(m_prev, m_next, m_prev, m_next, match, gamma, mode);
}

template <typename T>
struct LabeledInput {
  const SoftmaxMap<T>* pred;
  const LabelMap* gt;
};

template <typename T>
struct PairInput {
  const SoftmaxMap<T>* prev;
  const SoftmaxMap<T>* next;
  const FramePairMatch* match;
};

struct ActiveCounts {
  std::size_t seg = 0;
  std::size_t bc_forward = 0;
  std::size_t bc_backward = 0;
  std::size_t gc_forward = 0;
  std::size_t gc_backward = 0;
};

template <typename T>
struct LossReport {
  double l_seg = 0.0;
  double l_bc = 0.0;
  double l_gc = 0.0;
  double l_all = 0.0;
  std::optional<ScoreTensor<T>> grad_labeled;  // w.r.t. the labeled prediction
  std::optional<ScoreTensor<T>> grad_prev;     // w.r.t. M_{t-1}
  std::optional<ScoreTensor<T>> grad_next;     // w.r.t. M_t
  ActiveCounts active;
  bool bc_empty = false;
  bool gc_empty = false;

  static double combine(double seg, double bc, double gc, const LossConfig& config) {
    return seg + config.alpha * bc + config.beta * gc;
  }
};

// L_all = L_seg + alpha * L_bc + beta * L_gc; absent inputs contribute 0.
template <typename T>
LossReport<T> total_loss(std::optional<LabeledInput<T>> labeled,
                         std::optional<PairInput<T>> pair, const LossConfig& config) {
  config.validate();
  if (!labeled && !pair) throw PreconditionError("total_loss: no labeled frame and no frame pair");
  LossReport<T> report;
  if (labeled) {
    auto seg = seg_loss(*labeled->pred, *labeled->gt);
    report.l_seg = seg.value;
    report.active.seg = seg.active;
    report.grad_labeled = std::move(seg.grad);
  }
  if (pair) {
    auto bc = boundary_coherency(*pair->prev, *pair->next, *pair->match, config.theta);
    auto gc = global_coherency(*pair->prev, *pair->next, *pair->match, config.gamma,
                               config.disagreement);
    report.l_bc = bc.value;
    report.l_gc = gc.value;
    report.active.bc_forward = bc.active_forward;
    report.active.bc_backward = bc.active_backward;
    report.active.gc_forward = gc.active_forward;
    report.active.gc_backward = gc.active_backward;
    report.bc_empty = bc.empty();
    report.gc_empty = gc.empty();
    bc.grad_prev *= static_cast<T>(config.alpha);
    bc.grad_next *= static_cast<T>(config.alpha);
    gc.grad_prev *= static_cast<T>(config.beta);
    gc.grad_next *= static_cast<T>(config.beta);
    bc.grad_prev += gc.grad_prev;
    bc.grad_next += gc.grad_next;
    report.grad_prev = std::move(bc.grad_prev);
    report.grad_next = std::move(bc.grad_next);
  }
  report.l_all = LossReport<T>::combine(report.l_seg, report.l_bc, report.l_gc, config);
  return report;
}

}  // namespace coherent
