#pragma once

// Generators and brute-force reference implementations shared by the unit and acceptance
// suites. The oracles deliberately avoid the library's code paths: they recompute means and
// deviations in long double, resample by evaluating the bilinear formula per pixel, and
// aggregate by plain enumeration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "sdissect/sdissect.hpp"

namespace sdissect::testing {

namespace fs = std::filesystem;

inline DenseMap random_map(std::mt19937_64& rng, Size size, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  DenseMap m(size);
  for (auto& v : m.values()) v = d(rng);
  return m;
}

// Binary map with each cell set with probability p, and at least one cell set.
inline DenseMap random_binary(std::mt19937_64& rng, Size size, double p = 0.2) {
  std::bernoulli_distribution d(p);
  DenseMap m(size);
  for (auto& v : m.values()) v = d(rng) ? 1.0 : 0.0;
  if (m.count_nonzero() == 0) {
    m[std::uniform_int_distribution<std::size_t>(0, m.area() - 1)(rng)] = 1.0;
  }
  return m;
}

inline Size random_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  std::uniform_int_distribution<std::size_t> d(lo, hi);
  return Size{d(rng), d(rng)};
}

// ---- oracles ---------------------------------------------------------------------------------

struct Moments {
  long double mean;
  long double stddev;
};

inline Moments oracle_moments(const DenseMap& m) {
  long double sum = 0;
  for (std::size_t r = 0; r < m.height(); ++r)
    for (std::size_t c = 0; c < m.width(); ++c) sum += m(r, c);
  const long double n = static_cast<long double>(m.height() * m.width());
  const long double mean = sum / n;
  long double ss = 0;
  for (std::size_t r = 0; r < m.height(); ++r)
    for (std::size_t c = 0; c < m.width(); ++c) ss += (m(r, c) - mean) * (m(r, c) - mean);
  return {mean, std::sqrt(ss / n)};
}

// Mean of the z-scored map over cells where `where` is nonzero; nullopt if no such cell.
inline std::optional<double> oracle_masked_z_mean(const DenseMap& m, const DenseMap& where) {
  const Moments mo = oracle_moments(m);
  long double sum = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < m.height(); ++r) {
    for (std::size_t c = 0; c < m.width(); ++c) {
      if (where(r, c) != 0.0) {
        sum += (m(r, c) - mo.mean) / mo.stddev;
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(sum / n);
}

inline double oracle_nss(const DenseMap& sal, const DenseMap& fix) { return *oracle_masked_z_mean(sal, fix); }

inline std::optional<double> oracle_assoc(const DenseMap& act, const DenseMap& fix, const DenseMap& mask) {
  DenseMap both(fix.size());
  for (std::size_t r = 0; r < fix.height(); ++r)
    for (std::size_t c = 0; c < fix.width(); ++c) both(r, c) = (fix(r, c) != 0 && mask(r, c) != 0) ? 1 : 0;
  return oracle_masked_z_mean(act, both);
}

inline double oracle_nmm(const DenseMap& pred, const DenseMap& mask) { return *oracle_masked_z_mean(pred, mask); }

// Bilinear resampling evaluated pixel by pixel with corner-aligned coordinates.
inline DenseMap oracle_resize(const DenseMap& m, Size target) {
  auto coord = [](std::size_t i, std::size_t src, std::size_t dst) {
    if (dst == 1) return (static_cast<double>(src) - 1.0) / 2.0;
    return static_cast<double>(i) * (static_cast<double>(src) - 1.0) / (static_cast<double>(dst) - 1.0);
  };
  DenseMap out(target);
  for (std::size_t r = 0; r < target.height; ++r) {
    for (std::size_t c = 0; c < target.width; ++c) {
      const double y = coord(r, m.height(), target.height), x = coord(c, m.width(), target.width);
      double acc = 0.0;
      for (std::size_t sr = 0; sr < m.height(); ++sr) {
        const double wy = std::max(0.0, 1.0 - std::abs(y - static_cast<double>(sr)));
        if (wy == 0.0) continue;
        for (std::size_t sc = 0; sc < m.width(); ++sc) {
          const double wx = std::max(0.0, 1.0 - std::abs(x - static_cast<double>(sc)));
          acc += wy * wx * m(sr, sc);
        }
      }
      out(r, c) = acc;
    }
  }
  return out;
}

inline double oracle_spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        if (w < v[i]) ++less;
        if (w == v[i]) ++equal;
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto rx = ranks(xs), ry = ranks(ys);
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= rx.size();
  my /= ry.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

struct OracleCategory {
  std::vector<std::optional<double>> per_map;
  double top_k_mean = 0;
  std::size_t above = 0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

// Exhaustive dissection: every (image, channel, region) triple scored independently.
inline std::map<std::pair<std::string, Category>, OracleCategory> oracle_dissection(
    const std::vector<InMemorySample>& samples, const std::vector<std::string>& layers, std::size_t top_k,
    double threshold) {
  std::map<std::pair<std::string, Category>, OracleCategory> out;
  for (const auto& layer : layers) {
    for (Category cat : kAllCategories) {
      std::vector<long double> sum;
      std::vector<std::size_t> count;
      OracleCategory oc;
      bool seen = false;
      for (const auto& s : samples) {
        const auto& stack = s.layers.at(layer);
        sum.resize(stack.channels.size(), 0);
        count.resize(stack.channels.size(), 0);
        for (const auto& reg : s.record.regions) {
          if (reg.category != cat) continue;
          seen = true;
          if (!oracle_assoc(DenseMap(reg.mask.size(), 1.0), s.record.fixations, reg.mask).has_value()) {
            ++oc.skipped;
            continue;
          }
          ++oc.used;
          for (std::size_t j = 0; j < stack.channels.size(); ++j) {
            const DenseMap up = oracle_resize(stack.channels[j], s.record.image_size);
            if (oracle_moments(up).stddev <= 1e-12L) continue;
            sum[j] += *oracle_assoc(up, s.record.fixations, reg.mask);
            ++count[j];
          }
        }
      }
      if (!seen || oc.used == 0) continue;
      oc.per_map.resize(sum.size());
      std::vector<std::pair<double, std::size_t>> ranked;
      for (std::size_t j = 0; j < sum.size(); ++j) {
        if (count[j] == 0) continue;
        oc.per_map[j] = static_cast<double>(sum[j] / count[j]);
        ranked.push_back({*oc.per_map[j], j});
        if (*oc.per_map[j] > threshold) ++oc.above;
      }
      std::sort(ranked.begin(), ranked.end(), [](auto a, auto b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      const std::size_t k = std::min(top_k, ranked.size());
      long double t = 0;
      for (std::size_t i = 0; i < k; ++i) t += ranked[i].first;
      oc.top_k_mean = static_cast<double>(t / k);
      out[{layer, cat}] = oc;
    }
  }
  return out;
}

// ---- decoder fixtures ------------------------------------------------------------------------

// Central finite-difference gradient of the decoder loss with respect to w and b.
inline std::pair<std::vector<double>, double> finite_difference_gradient(const ActivationStack& f,
                                                                         const DecoderWeights& w,
                                                                         const DenseMap& fix, double h) {
  std::vector<double> dw(w.channels());
  for (std::size_t j = 0; j < w.channels(); ++j) {
    DecoderWeights up = w, down = w;
    up.w[j] += h;
    down.w[j] -= h;
    dw[j] = (nss_loss(f, up, fix, fix.size()) - nss_loss(f, down, fix, fix.size())) / (2 * h);
  }
  DecoderWeights up = w, down = w;
  up.b += h;
  down.b -= h;
  return {dw, (nss_loss(f, up, fix, fix.size()) - nss_loss(f, down, fix, fix.size())) / (2 * h)};
}

// Relative error with a floor on the denominator so near-zero components compare absolutely.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Dataset in which channel `planted` is a smooth bump around every fixation and the other
// channels are noise. Fixations sit at native-grid-aligned positions of the image.
inline std::vector<TrainingSample> planted_fixture(std::mt19937_64& rng, std::size_t images, std::size_t channels,
                                                   std::size_t planted, Size native = {8, 8},
                                                   Size image = {29, 29}) {
  std::vector<TrainingSample> out;
  std::uniform_int_distribution<std::size_t> nr(1, native.height - 2), nc(1, native.width - 2);
  const double sy = (static_cast<double>(image.height) - 1) / (static_cast<double>(native.height) - 1);
  const double sx = (static_cast<double>(image.width) - 1) / (static_cast<double>(native.width) - 1);
  for (std::size_t i = 0; i < images; ++i) {
    TrainingSample s;
    s.features.image_id = "p" + std::to_string(i);
    s.features.layer = "planted";
    s.fixations = DenseMap(image);
    DenseMap bump(native);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    for (std::size_t f = 0; f < k; ++f) {
      const std::size_t r = nr(rng), c = nc(rng);
      s.fixations(static_cast<std::size_t>(std::lround(r * sy)), static_cast<std::size_t>(std::lround(c * sx))) = 1.0;
      for (std::size_t y = 0; y < native.height; ++y)
        for (std::size_t x = 0; x < native.width; ++x)
          bump(y, x) += std::exp(-0.5 * ((double(y) - r) * (double(y) - r) + (double(x) - c) * (double(x) - c)));
    }
    for (std::size_t j = 0; j < channels; ++j) {
      s.features.channels.push_back(j == planted ? bump : random_map(rng, native, 0.0, 1.0));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline DecoderWeights one_hot(std::size_t channels, std::size_t j) {
  DecoderWeights w;
  w.w.assign(channels, 0.0);
  w.w[j] = 1.0;
  return w;
}

// ---- fixtures --------------------------------------------------------------------------------

// Random dissection fixture: every image has the given layers with `channels` maps at native
// size, fixations and regions drawn from `categories`.
inline std::vector<InMemorySample> random_dissection_fixture(std::mt19937_64& rng, std::size_t images,
                                                            std::size_t channels,
                                                            const std::vector<Category>& categories,
                                                            const std::vector<std::string>& layers,
                                                            Size image_size = {12, 12}, Size native = {4, 4},
                                                            std::size_t regions_per_image = 3) {
  std::vector<InMemorySample> out;
  for (std::size_t i = 0; i < images; ++i) {
    InMemorySample s;
    s.record.image_id = "img" + std::to_string(i);
    s.record.image_size = image_size;
    s.record.fixations = random_binary(rng, image_size, 0.15);
    for (std::size_t k = 0; k < regions_per_image; ++k) {
      RegionAnnotation reg;
      reg.image_id = s.record.image_id;
      reg.region_id = static_cast<int>(k);
      reg.category = categories[(i + k) % categories.size()];
      // Rectangular region.
      std::uniform_int_distribution<std::size_t> rr(0, image_size.height - 1), cc(0, image_size.width - 1);
      std::size_t r0 = rr(rng), r1 = rr(rng), c0 = cc(rng), c1 = cc(rng);
      if (r0 > r1) std::swap(r0, r1);
      if (c0 > c1) std::swap(c0, c1);
      reg.mask = DenseMap(image_size);
      for (std::size_t r = r0; r <= r1; ++r)
        for (std::size_t c = c0; c <= c1; ++c) reg.mask(r, c) = 1.0;
      s.record.regions.push_back(std::move(reg));
    }
    for (const auto& layer : layers) {
      ActivationStack st;
      st.image_id = s.record.image_id;
      st.layer = layer;
      for (std::size_t j = 0; j < channels; ++j) st.channels.push_back(random_map(rng, native, 0.0, 4.0));
      s.layers[layer] = std::move(st);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sdissect_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes an in-memory dissection fixture as a manifest with PNG images, fixation JSON,
// annotation JSON with PNG masks and .npy activation dumps.
inline fs::path write_fixture_manifest(const fs::path& dir, const std::vector<InMemorySample>& samples) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& s : samples) {
    const std::string id = s.record.image_id;
    write_rgb_png(RgbImage(s.record.image_size, {100, 100, 100}), dir / (id + ".png"));
    FixationSet fixset;
    fixset.image_id = id;
    fixset.frame = s.record.image_size;
    for (std::size_t r = 0; r < s.record.image_size.height; ++r)
      for (std::size_t c = 0; c < s.record.image_size.width; ++c)
        if (s.record.fixations(r, c) != 0) fixset.points.push_back({r, c});
    write_json_file(dir / (id + "_fix.json"), to_json(fixset));
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& reg : s.record.regions) {
      const std::string mask = id + "_mask" + std::to_string(reg.region_id) + ".png";
      write_mask_png(reg.mask, dir / mask);
      regions.push_back({{"region_id", reg.region_id}, {"category", std::string(label(reg.category))}, {"mask_png", mask}});
    }
    write_json_file(dir / (id + "_ann.json"), {{"image_id", id}, {"regions", regions}});
    nlohmann::json acts = nlohmann::json::object();
    for (const auto& [layer, stack] : s.layers) {
      const std::string file = id + "_" + layer + ".npy";
      save_tensor(stack, dir / file);
      acts[layer] = file;
    }
    manifest.push_back({{"image", id + ".png"},
                        {"fixations", id + "_fix.json"},
                        {"annotations", {id + "_ann.json"}},
                        {"activations", acts}});
  }
  write_json_file(dir / "manifest.json", manifest);
  return dir / "manifest.json";
}

// Rounds every activation to float32 so in-memory fixtures equal what a manifest reload sees.
inline void round_to_float(std::vector<InMemorySample>& samples) {
  for (auto& s : samples)
    for (auto& [layer, st] : s.layers)
      for (auto& ch : st.channels)
        for (auto& v : ch.values()) v = static_cast<float>(v);
}

}  // namespace sdissect::testing
