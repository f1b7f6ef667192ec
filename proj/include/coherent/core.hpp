#pragma once

// Raster value types shared by every module. All of them validate their
// invariants on construction and are immutable afterwards, except
// ScoreTensor which is the plain mutable buffer used for gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coherent/error.hpp"

namespace coherent {

namespace detail {

inline std::size_t checked_area(int height, int width, const char* what) {
  if (height < 1 || width < 1) {
    throw InvariantError(std::string(what) + ": height and width must be >= 1");
  }
  return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
}

}  // namespace detail

// Normalized intensity image, 1 or 3 channels, row-major (y, x, channel).
class Image {
 public:
  Image(int height, int width, int channels, std::vector<float> samples)
      : height_(height), width_(width), channels_(channels), samples_(std::move(samples)) {
    const std::size_t area = detail::checked_area(height, width, "Image");
    if (channels != 1 && channels != 3) throw InvariantError("Image: channels must be 1 or 3");
    if (samples_.size() != area * static_cast<std::size_t>(channels)) {
      throw InvariantError("Image: sample count does not match shape");
    }
    for (float s : samples_) {
      if (!(s >= 0.0f && s <= 1.0f)) throw InvariantError("Image: sample outside [0,1]");
    }
  }

  static Image filled(int height, int width, int channels, float value) {
    return Image(height, width, channels,
                 std::vector<float>(detail::checked_area(height, width, "Image") *
                                        static_cast<std::size_t>(std::max(channels, 0)),
                                    value));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  float at(int y, int x, int c = 0) const {
    return samples_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::span<const float> samples() const { return samples_; }

  // Rec. 601 luma for RGB; identity for gray.
  Image to_gray() const {
    if (channels_ == 1) return *this;
    std::vector<float> gray(static_cast<std::size_t>(height_) * width_);
    for (std::size_t i = 0; i < gray.size(); ++i) {
      const float* p = &samples_[i * 3];
      gray[i] = std::clamp(0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2], 0.0f, 1.0f);
    }
    return Image(height_, width_, 1, std::move(gray));
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_;
  int width_;
  int channels_;
  std::vector<float> samples_;
};

// Dense H x W x C buffer without probabilistic constraints. Used for
// gradients and for raw score maps that are not (yet) normalized.
template <typename T>
class ScoreTensor {
 public:
  ScoreTensor() = default;
  ScoreTensor(int height, int width, int classes, T fill = T(0))
      : height_(height), width_(width), classes_(classes),
        data_(detail::checked_area(height, width, "ScoreTensor") *
                  static_cast<std::size_t>(std::max(classes, 0)),
              fill) {
    if (classes < 1) throw InvariantError("ScoreTensor: classes must be >= 1");
  }
  ScoreTensor(int height, int width, int classes, std::vector<T> data)
      : height_(height), width_(width), classes_(classes), data_(std::move(data)) {
    const std::size_t area = detail::checked_area(height, width, "ScoreTensor");
    if (classes < 1) throw InvariantError("ScoreTensor: classes must be >= 1");
    if (data_.size() != area * static_cast<std::size_t>(classes)) {
      throw InvariantError("ScoreTensor: data size does not match shape");
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int classes() const { return classes_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }

  T& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  const T& at(int y, int x, int c) const { return data_[index(y, x, c)]; }
  std::span<T> pixel(std::size_t i) { return {data_.data() + i * classes_, std::size_t(classes_)}; }
  std::span<const T> pixel(std::size_t i) const {
    return {data_.data() + i * classes_, std::size_t(classes_)};
  }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  template <typename U>
  ScoreTensor<U> cast() const {
    return ScoreTensor<U>(height_, width_, classes_, std::vector<U>(data_.begin(), data_.end()));
  }

  ScoreTensor& operator+=(const ScoreTensor& other) {
    detail::require_same_size(height_, width_, other.height_, other.width_, "ScoreTensor +=");
    if (classes_ != other.classes_) throw DimensionError("ScoreTensor +=: class count mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  ScoreTensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const ScoreTensor&, const ScoreTensor&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * classes_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int classes_ = 0;
  std::vector<T> data_;
};

inline constexpr double kSoftmaxSumTolerance = 1e-5;

// Per-pixel class distribution. The checked constructor enforces scores in
// [0,1] and per-pixel sums of 1 within kSoftmaxSumTolerance.
template <typename T = float>
class SoftmaxMap {
 public:
  explicit SoftmaxMap(ScoreTensor<T> scores) : scores_(std::move(scores)) {
    if (scores_.classes() < 2) throw InvariantError("SoftmaxMap: at least 2 classes required");
    for (std::size_t i = 0; i < scores_.pixels(); ++i) {
      double sum = 0.0;
      for (T s : scores_.pixel(i)) {
        if (!(s >= T(0) && s <= T(1))) throw InvariantError("SoftmaxMap: score outside [0,1]");
        sum += static_cast<double>(s);
      }
      if (std::abs(sum - 1.0) > kSoftmaxSumTolerance) {
        throw InvariantError("SoftmaxMap: per-pixel scores do not sum to 1 at pixel " +
                             std::to_string(i));
      }
    }
  }

  // Skips the probability checks. Meant for finite-difference probes and
  // other callers that knowingly step off the simplex.
  static SoftmaxMap unchecked(ScoreTensor<T> scores) {
    SoftmaxMap m;
    m.scores_ = std::move(scores);
    return m;
  }

  int height() const { return scores_.height(); }
  int width() const { return scores_.width(); }
  int classes() const { return scores_.classes(); }
  std::size_t pixels() const { return scores_.pixels(); }
  T at(int y, int x, int c) const { return scores_.at(y, x, c); }
  std::span<const T> pixel(std::size_t i) const { return scores_.pixel(i); }
  const ScoreTensor<T>& scores() const { return scores_; }

  template <typename U>
  SoftmaxMap<U> cast() const {
    return SoftmaxMap<U>::unchecked(scores_.template cast<U>());
  }

  friend bool operator==(const SoftmaxMap&, const SoftmaxMap&) = default;

 private:
  SoftmaxMap() = default;
  ScoreTensor<T> scores_;
};

// Per-pixel class index.
class LabelMap {
 public:
  using Label = std::uint32_t;

  LabelMap(int height, int width, std::vector<Label> labels)
      : height_(height), width_(width), labels_(std::move(labels)) {
    if (labels_.size() != detail::checked_area(height, width, "LabelMap")) {
      throw InvariantError("LabelMap: label count does not match shape");
    }
  }
  static LabelMap filled(int height, int width, Label value) {
    return LabelMap(height, width,
                    std::vector<Label>(detail::checked_area(height, width, "LabelMap"), value));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixels() const { return labels_.size(); }
  Label at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  Label operator[](std::size_t i) const { return labels_[i]; }
  std::span<const Label> labels() const { return labels_; }
  Label max_label() const { return *std::max_element(labels_.begin(), labels_.end()); }

  // Throws unless every label is < classes.
  void require_classes(int classes) const {
    for (Label l : labels_) {
      if (l >= static_cast<Label>(classes)) {
        throw RangeError("LabelMap: label " + std::to_string(l) + " outside [0," +
                         std::to_string(classes) + ")");
      }
    }
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int height_;
  int width_;
  std::vector<Label> labels_;
};

class BinaryMask {
 public:
  BinaryMask(int height, int width, std::vector<std::uint8_t> bits)
      : height_(height), width_(width), bits_(std::move(bits)) {
    if (bits_.size() != detail::checked_area(height, width, "BinaryMask")) {
      throw InvariantError("BinaryMask: bit count does not match shape");
    }
    for (auto b : bits_) {
      if (b > 1) throw InvariantError("BinaryMask: values must be 0 or 1");
    }
  }
  static BinaryMask filled(int height, int width, bool value) {
    return BinaryMask(height, width,
                      std::vector<std::uint8_t>(detail::checked_area(height, width, "BinaryMask"),
                                                value ? 1 : 0));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixels() const { return bits_.size(); }
  bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  // Bitwise implication: every bit set here is also set in other.
  bool is_subset_of(const BinaryMask& other) const {
    detail::require_same_size(height_, width_, other.height_, other.width_, "BinaryMask subset");
    for (std::size_t i = 0; i < bits_.size(); ++i) {
      if (bits_[i] && !other.bits_[i]) return false;
    }
    return true;
  }

  friend BinaryMask operator&(const BinaryMask& a, const BinaryMask& b) {
    detail::require_same_size(a.height_, a.width_, b.height_, b.width_, "BinaryMask &");
    std::vector<std::uint8_t> out(a.bits_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.bits_[i] & b.bits_[i];
    return BinaryMask(a.height_, a.width_, std::move(out));
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> bits_;
};

// Dense displacement field: pixel (x, y) maps to (x + u, y + v).
class FlowField {
 public:
  // offsets are interleaved (u, v) pairs, row-major.
  FlowField(int height, int width, std::vector<float> offsets)
      : height_(height), width_(width), offsets_(std::move(offsets)) {
    if (offsets_.size() != 2 * detail::checked_area(height, width, "FlowField")) {
      throw InvariantError("FlowField: offset count does not match shape");
    }
    for (float f : offsets_) {
      if (!std::isfinite(f)) throw InvariantError("FlowField: non-finite offset");
    }
  }
  static FlowField zeros(int height, int width) {
    return FlowField(height, width,
                     std::vector<float>(2 * detail::checked_area(height, width, "FlowField"), 0.0f));
  }
  static FlowField constant(int height, int width, float u, float v) {
    std::vector<float> o(2 * detail::checked_area(height, width, "FlowField"));
    for (std::size_t i = 0; i < o.size(); i += 2) {
      o[i] = u;
      o[i + 1] = v;
    }
    return FlowField(height, width, std::move(o));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixels() const { return offsets_.size() / 2; }
  float u(int y, int x) const { return offsets_[2 * (static_cast<std::size_t>(y) * width_ + x)]; }
  float v(int y, int x) const {
    return offsets_[2 * (static_cast<std::size_t>(y) * width_ + x) + 1];
  }
  std::span<const float> offsets() const { return offsets_; }

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  int height_;
  int width_;
  std::vector<float> offsets_;
};

// Tracked set {O}, its forward-backward verified subset, and the per-pixel
// forward-backward distance.
class CorrespondenceSet {
 public:
  CorrespondenceSet(BinaryMask tracked, BinaryMask dual_matched, std::vector<float> fb_error)
      : tracked_(std::move(tracked)), dual_matched_(std::move(dual_matched)),
        fb_error_(std::move(fb_error)) {
    if (!dual_matched_.is_subset_of(tracked_)) {
      throw InvariantError("CorrespondenceSet: dual_matched is not a subset of tracked");
    }
    if (fb_error_.size() != tracked_.pixels()) {
      throw InvariantError("CorrespondenceSet: fb_error size does not match shape");
    }
    for (std::size_t i = 0; i < fb_error_.size(); ++i) {
      if (tracked_[i] && !(fb_error_[i] >= 0.0f)) {
        throw InvariantError("CorrespondenceSet: negative fb_error on a tracked pixel");
      }
    }
  }
  // Every pixel tracked and verified with zero error.
  static CorrespondenceSet all(int height, int width) {
    return CorrespondenceSet(BinaryMask::filled(height, width, true),
                             BinaryMask::filled(height, width, true),
                             std::vector<float>(static_cast<std::size_t>(height) * width, 0.0f));
  }

  int height() const { return tracked_.height(); }
  int width() const { return tracked_.width(); }
  const BinaryMask& tracked() const { return tracked_; }
  const BinaryMask& dual_matched() const { return dual_matched_; }
  std::span<const float> fb_error() const { return fb_error_; }

 private:
  BinaryMask tracked_;
  BinaryMask dual_matched_;
  std::vector<float> fb_error_;
};

// How the confident-disagreement set D is read.
enum class DisagreementMode {
  // top-1 score of the current map exceeds the warped score of that class by > gamma
  kTopOneMargin,
  // max over classes of |current - warped| > gamma
  kAbsoluteDifference,
};

struct LossConfig {
  int theta = 15;            // boundary band width, pixels
  double gamma = 0.05;       // confidence threshold
  double alpha = 1.0;        // boundary coherency weight
  double beta = 5e-5;        // global coherency weight
  double fb_epsilon = 1.0;   // forward-backward acceptance radius, pixels
  DisagreementMode disagreement = DisagreementMode::kTopOneMargin;

  void validate() const {
    if (theta < 1) throw InvariantError("LossConfig: theta must be >= 1");
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvariantError("LossConfig: gamma must be in (0,1)");
    if (!(alpha >= 0.0)) throw InvariantError("LossConfig: alpha must be >= 0");
    if (!(beta >= 0.0)) throw InvariantError("LossConfig: beta must be >= 0");
    if (!(fb_epsilon > 0.0)) throw InvariantError("LossConfig: fb_epsilon must be > 0");
  }
};

// Per-pixel index of the maximal score; ties go to the lowest class index.
template <typename T>
LabelMap argmax_labels(const SoftmaxMap<T>& map) {
  std::vector<LabelMap::Label> labels(map.pixels());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto p = map.pixel(i);
    labels[i] = static_cast<LabelMap::Label>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  return LabelMap(map.height(), map.width(), std::move(labels));
}

}  // namespace coherent
