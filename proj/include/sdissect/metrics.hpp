#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "sdissect/error.hpp"
#include "sdissect/types.hpp"

namespace sdissect {

// Standard deviations at or below this mark a map as degenerate.
inline constexpr double kConstantMapEpsilon = 1e-12;

// A map with zero mean and unit population standard deviation.
class NormalizedMap {
 public:
  const DenseMap& map() const { return map_; }
  double operator[](std::size_t i) const { return map_[i]; }
  Size size() const { return map_.size(); }
  double source_mean() const { return mean_; }
  double source_std() const { return std_; }

 private:
  friend NormalizedMap znorm(const DenseMap& m);
  NormalizedMap(DenseMap map, double mean, double stddev)
      : map_(std::move(map)), mean_(mean), std_(stddev) {}

  DenseMap map_;
  double mean_ = 0.0;
  double std_ = 1.0;
};

// (m - mean) / std with the population (divide-by-N) convention.
inline NormalizedMap znorm(const DenseMap& m) {
  const std::size_t n = m.area();
  if (n < 2) throw ConstantMap("znorm: a map needs at least 2 cells");
  double sum = 0.0;
  for (double v : m.values()) sum += v;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : m.values()) ss += (v - mean) * (v - mean);
  const double stddev = std::sqrt(ss / static_cast<double>(n));
  if (!(stddev > kConstantMapEpsilon)) {
    throw ConstantMap("znorm: map is constant (std " + std::to_string(stddev) + ")");
  }
  DenseMap out(m.size());
  for (std::size_t i = 0; i < n; ++i) out[i] = (m[i] - mean) / stddev;
  return NormalizedMap(std::move(out), mean, stddev);
}

// Row-major indices of nonzero cells.
inline std::vector<std::size_t> nonzero_cells(const DenseMap& m) {
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < m.area(); ++i) {
    if (m[i] != 0.0) cells.push_back(i);
  }
  return cells;
}

// Mean of a normalized map over the given cells. Shared by every metric so that
// fast paths and the public functions sum in the same order.
inline double mean_over(const NormalizedMap& z, std::span<const std::size_t> cells) {
  double sum = 0.0;
  for (auto i : cells) sum += z[i];
  return sum / static_cast<double>(cells.size());
}

inline double nss(const DenseMap& saliency, const DenseMap& fixations) {
  require_same_size(saliency, fixations, "nss");
  const auto cells = nonzero_cells(fixations);
  if (cells.empty()) throw EmptyFixations("nss: fixation map has no fixated cell");
  return mean_over(znorm(saliency), cells);
}

// Region-restricted association: NSS of an activation map at the fixations inside a region.
inline double assoc(const DenseMap& activation, const DenseMap& fixations, const DenseMap& mask) {
  require_same_size(activation, fixations, "assoc");
  require_same_size(activation, mask, "assoc");
  const DenseMap restricted = logical_and(fixations, mask);
  if (restricted.count_nonzero() == 0) {
    throw NoFixationsInRegion("assoc: no fixation falls inside the region");
  }
  return nss(activation, restricted);
}

// Normalized mean of a prediction under a target mask.
inline double nmm(const DenseMap& prediction, const DenseMap& mask) {
  require_same_size(prediction, mask, "nmm");
  const auto cells = nonzero_cells(mask);
  if (cells.empty()) throw EmptyMask("nmm: mask is empty");
  return mean_over(znorm(prediction), cells);
}

// Corner-aligned linear sampling along one axis: target index i reads
// source position i * (S - 1) / (T - 1); a single target sample reads the source center.
struct AxisSampling {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;

  AxisSampling(std::size_t source, std::size_t target) : lo(target), hi(target), frac(target) {
    for (std::size_t i = 0; i < target; ++i) {
      double x = target == 1 ? 0.5 * static_cast<double>(source - 1)
                             : static_cast<double>(i) * static_cast<double>(source - 1) /
                                   static_cast<double>(target - 1);
      auto l = static_cast<std::size_t>(std::floor(x));
      l = std::min(l, source - 1);
      lo[i] = l;
      hi[i] = std::min(l + 1, source - 1);
      frac[i] = hi[i] == l ? 0.0 : x - static_cast<double>(l);
    }
  }
};

// Precomputed bilinear resampling between two fixed sizes, usable forwards and transposed.
class BilinearResize {
 public:
  BilinearResize(Size source, Size target)
      : source_(source), target_(target), rows_(source.height, target.height),
        cols_(source.width, target.width) {
    if (target.height < 1 || target.width < 1) throw InvalidArgument("resize_map: empty target");
  }

  Size source() const { return source_; }
  Size target() const { return target_; }

  DenseMap apply(const DenseMap& m) const {
    require_size(m.size(), source_);
    if (source_ == target_) return m;
    DenseMap out(target_);
    for (std::size_t r = 0; r < target_.height; ++r) {
      const std::size_t r0 = rows_.lo[r], r1 = rows_.hi[r];
      const double fr = rows_.frac[r];
      for (std::size_t c = 0; c < target_.width; ++c) {
        const std::size_t c0 = cols_.lo[c], c1 = cols_.hi[c];
        const double fc = cols_.frac[c];
        const double top = m(r0, c0) + fc * (m(r0, c1) - m(r0, c0));
        const double bottom = m(r1, c0) + fc * (m(r1, c1) - m(r1, c0));
        out(r, c) = top + fr * (bottom - top);
      }
    }
    return out;
  }

  // Adjoint of apply(): distributes target-grid values back onto the source grid.
  DenseMap transpose(const DenseMap& g) const {
    require_size(g.size(), target_);
    if (source_ == target_) return g;
    DenseMap out(source_);
    for (std::size_t r = 0; r < target_.height; ++r) {
      const std::size_t r0 = rows_.lo[r], r1 = rows_.hi[r];
      const double fr = rows_.frac[r];
      for (std::size_t c = 0; c < target_.width; ++c) {
        const std::size_t c0 = cols_.lo[c], c1 = cols_.hi[c];
        const double fc = cols_.frac[c];
        const double v = g(r, c);
        out(r0, c0) += v * (1 - fr) * (1 - fc);
        out(r0, c1) += v * (1 - fr) * fc;
        out(r1, c0) += v * fr * (1 - fc);
        out(r1, c1) += v * fr * fc;
      }
    }
    return out;
  }

 private:
  static void require_size(Size got, Size want) {
    if (got != want) throw ShapeMismatch("resize: expected " + to_string(want) + ", got " + to_string(got));
  }

  Size source_;
  Size target_;
  AxisSampling rows_;
  AxisSampling cols_;
};

inline DenseMap resize_map(const DenseMap& m, Size target) {
  return BilinearResize(m.size(), target).apply(m);
}

// Fractional ranks (1-based); tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

// Spearman rank correlation: Pearson correlation of the average ranks.
inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("spearman: length mismatch");
  if (xs.size() < 3) throw InvalidArgument("spearman: needs at least 3 pairs");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mean = (n + 1) / 2;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0 || syy == 0) throw InvalidArgument("spearman: all-equal input has undefined ranks");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace sdissect
