#pragma once

// Boolean Map Saliency and the no-knowledge baselines it is compared against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sdissect/diagnostics.hpp"
#include "sdissect/error.hpp"
#include "sdissect/parallel.hpp"
#include "sdissect/types.hpp"

namespace sdissect {

enum class BmsColorspace { Opponent, Rgb };

struct BmsConfig {
  int threshold_step = 8;
  int opening_radius = 2;
  double blur_sigma = 7.0;
  bool use_both_polarities = true;
  BmsColorspace colorspace = BmsColorspace::Opponent;

  void validate() const {
    if (threshold_step < 1 || threshold_step > 128) throw InvalidArgument("threshold_step must lie in [1, 128]");
    if (opening_radius < 0) throw InvalidArgument("opening_radius must be non-negative");
    if (!(blur_sigma >= 0.0)) throw InvalidArgument("blur_sigma must be non-negative");
  }
};

// Per-channel 0-255 feature grids. Opponent channels are (R+G+B)/3, R-G and (R+G)/2-B, the
// latter two mapped affinely from [-255, 255] onto [0, 255].
inline std::vector<DenseMap> feature_channels(const RgbImage& img, BmsColorspace space) {
  std::vector<DenseMap> out(3, DenseMap(img.size));
  for (std::size_t i = 0; i < img.size.area(); ++i) {
    const double r = img.pixels[3 * i], g = img.pixels[3 * i + 1], b = img.pixels[3 * i + 2];
    if (space == BmsColorspace::Rgb) {
      out[0][i] = r;
      out[1][i] = g;
      out[2][i] = b;
    } else {
      out[0][i] = (r + g + b) / 3.0;
      out[1][i] = (r - g + 255.0) / 2.0;
      out[2][i] = ((r + g) / 2.0 - b + 255.0) / 2.0;
    }
  }
  return out;
}

// Thresholds step, 2*step, ... up to 255.
inline std::vector<int> bms_thresholds(int step) {
  std::vector<int> t;
  for (int v = step; v <= 255; v += step) t.push_back(v);
  return t;
}

// Binary maps of one feature channel: (channel > t) and, with both polarities, (channel <= t).
inline std::vector<DenseMap> boolean_maps_of_channel(const DenseMap& channel, const BmsConfig& cfg) {
  std::vector<DenseMap> out;
  for (int t : bms_thresholds(cfg.threshold_step)) {
    DenseMap above(channel.size());
    for (std::size_t i = 0; i < channel.area(); ++i) above[i] = channel[i] > t ? 1.0 : 0.0;
    if (cfg.use_both_polarities) {
      DenseMap below(channel.size());
      for (std::size_t i = 0; i < channel.area(); ++i) below[i] = 1.0 - above[i];
      out.push_back(std::move(above));
      out.push_back(std::move(below));
    } else {
      out.push_back(std::move(above));
    }
  }
  return out;
}

inline std::vector<DenseMap> boolean_maps(const RgbImage& img, const BmsConfig& cfg) {
  cfg.validate();
  std::vector<DenseMap> out;
  for (const auto& ch : feature_channels(img, cfg.colorspace)) {
    auto maps = boolean_maps_of_channel(ch, cfg);
    for (auto& m : maps) out.push_back(std::move(m));
  }
  return out;
}

// Zeroes every 4-connected foreground component that touches the image border.
inline DenseMap suppress_border_components(const DenseMap& bmap) {
  const std::size_t h = bmap.height(), w = bmap.width();
  DenseMap out = bmap;
  std::vector<std::size_t> stack;
  auto seed = [&](std::size_t r, std::size_t c) {
    if (out(r, c) != 0.0) {
      out(r, c) = 0.0;
      stack.push_back(r * w + c);
    }
  };
  for (std::size_t c = 0; c < w; ++c) {
    seed(0, c);
    seed(h - 1, c);
  }
  for (std::size_t r = 0; r < h; ++r) {
    seed(r, 0);
    seed(r, w - 1);
  }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const std::size_t r = i / w, c = i % w;
    if (r > 0) seed(r - 1, c);
    if (r + 1 < h) seed(r + 1, c);
    if (c > 0) seed(r, c - 1);
    if (c + 1 < w) seed(r, c + 1);
  }
  return out;
}

namespace bms_detail {

// Separable min (erode) or max (dilate) over a (2r+1)^2 square, ignoring out-of-bounds cells.
inline DenseMap square_filter(const DenseMap& m, int radius, bool take_max) {
  if (radius == 0) return m;
  const auto h = static_cast<long>(m.height()), w = static_cast<long>(m.width());
  auto pick = [take_max](double a, double b) { return take_max ? std::max(a, b) : std::min(a, b); };
  DenseMap tmp(m.size()), out(m.size());
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double v = m(r, c);
      for (long d = std::max(0L, c - radius); d <= std::min(w - 1, c + radius); ++d) v = pick(v, m(r, d));
      tmp(r, c) = v;
    }
  }
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double v = tmp(r, c);
      for (long d = std::max(0L, r - radius); d <= std::min(h - 1, r + radius); ++d) v = pick(v, tmp(d, c));
      out(r, c) = v;
    }
  }
  return out;
}

}  // namespace bms_detail

// Morphological opening (erosion then dilation) with a square structuring element.
inline DenseMap opening(const DenseMap& m, int radius) {
  return bms_detail::square_filter(bms_detail::square_filter(m, radius, false), radius, true);
}

// Border suppression, opening, then L2 normalization. All-zero maps stay zero.
inline DenseMap attention_map(const DenseMap& bmap, const BmsConfig& cfg) {
  DenseMap out = opening(suppress_border_components(bmap), cfg.opening_radius);
  double ss = 0.0;
  for (double v : out.values()) ss += v * v;
  if (ss > 0.0) {
    const double norm = std::sqrt(ss);
    for (auto& v : out.values()) v /= norm;
  }
  return out;
}

// Separable Gaussian blur truncated at 3 sigma; weights are renormalized at the borders.
inline DenseMap gaussian_blur(const DenseMap& m, double sigma) {
  if (sigma <= 0.0) return m;
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (long d = -radius; d <= radius; ++d) {
    kernel[static_cast<std::size_t>(d + radius)] = std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
  }
  const auto h = static_cast<long>(m.height()), w = static_cast<long>(m.width());
  DenseMap tmp(m.size()), out(m.size());
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double acc = 0.0, wsum = 0.0;
      for (long d = std::max(-radius, -c); d <= std::min(radius, w - 1 - c); ++d) {
        const double k = kernel[static_cast<std::size_t>(d + radius)];
        acc += k * m(r, c + d);
        wsum += k;
      }
      tmp(r, c) = acc / wsum;
    }
  }
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double acc = 0.0, wsum = 0.0;
      for (long d = std::max(-radius, -r); d <= std::min(radius, h - 1 - r); ++d) {
        const double k = kernel[static_cast<std::size_t>(d + radius)];
        acc += k * tmp(r + d, c);
        wsum += k;
      }
      out(r, c) = acc / wsum;
    }
  }
  return out;
}

// Mean attention map, blurred and min-max scaled to [0, 1]. A degenerate (all-zero or flat)
// result is reported to `log` and returned as a zero map.
inline DenseMap bms_saliency(const RgbImage& img, const BmsConfig& cfg, WarningLog* log = nullptr,
                             std::size_t jobs = 1) {
  cfg.validate();
  const auto channels = feature_channels(img, cfg.colorspace);
  std::vector<DenseMap> partial(channels.size(), DenseMap(img.size));
  std::vector<std::size_t> counts(channels.size(), 0);
  parallel_for(channels.size(), jobs, [&](std::size_t k) {
    for (const auto& bm : boolean_maps_of_channel(channels[k], cfg)) {
      const DenseMap att = attention_map(bm, cfg);
      for (std::size_t i = 0; i < att.area(); ++i) partial[k][i] += att[i];
      ++counts[k];
    }
  });
  DenseMap mean(img.size);
  std::size_t total = 0;
  for (std::size_t k = 0; k < channels.size(); ++k) {
    for (std::size_t i = 0; i < mean.area(); ++i) mean[i] += partial[k][i];
    total += counts[k];
  }
  bool any = false;
  for (auto& v : mean.values()) {
    v /= static_cast<double>(total);
    any = any || v != 0.0;
  }
  if (!any) {
    if (log) log->add("bms_degenerate", "every attention map is empty");
    return DenseMap(img.size);
  }
  DenseMap blurred = gaussian_blur(mean, cfg.blur_sigma);
  auto [lo_it, hi_it] = std::minmax_element(blurred.values().begin(), blurred.values().end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    if (log) log->add("bms_degenerate", "blurred saliency is flat");
    return DenseMap(img.size);
  }
  for (auto& v : blurred.values()) v = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return blurred;
}

// Isotropic Gaussian centered on the image with sigma = min(h, w) / 4.
inline DenseMap center_prior(std::size_t h, std::size_t w) {
  if (h < 1 || w < 1) throw InvalidArgument("center_prior: empty size");
  const double sigma = static_cast<double>(std::min(h, w)) / 4.0;
  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  DenseMap out(Size{h, w});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      out(r, c) = std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma));
    }
  }
  return out;
}

// Uniform i.i.d. noise: the zero-knowledge baseline.
inline DenseMap random_map(Size size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  DenseMap out(size);
  for (auto& v : out.values()) v = dist(rng);
  return out;
}

}  // namespace sdissect
