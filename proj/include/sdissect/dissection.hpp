#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdissect/dataset.hpp"
#include "sdissect/diagnostics.hpp"
#include "sdissect/metrics.hpp"
#include "sdissect/parallel.hpp"
#include "sdissect/types.hpp"

namespace sdissect {

struct DissectionConfig {
  std::vector<std::string> layers;
  std::size_t top_k = 10;
  double threshold = 1.5;
  std::size_t min_regions_per_category = 1;

  void validate() const {
    if (top_k < 1) throw InvalidArgument("top_k must be at least 1");
    if (std::isnan(threshold)) throw InvalidArgument("threshold must not be NaN");
    if (layers.empty()) throw InvalidArgument("no layers requested");
  }
};

struct CategoryStats {
  std::string layer;
  Category category = Category::Other;
  // Mean association of each map over the category's usable regions; empty when the map
  // could not be scored on any of them (a constant map).
  std::vector<std::optional<double>> per_map_mean_nss;
  double top_k_mean = 0.0;
  std::size_t count_above_threshold = 0;
  std::size_t regions_used = 0;
  std::size_t regions_skipped = 0;
};

// Association of every channel with every region: C x R, empty where the pair was skipped.
struct RegionScores {
  std::size_t channels = 0;
  std::size_t regions = 0;
  std::vector<std::optional<double>> values;  // row-major [channel][region]
  std::vector<bool> region_skipped;           // fixations AND mask is empty
  std::vector<bool> channel_constant;         // resized channel is degenerate

  const std::optional<double>& at(std::size_t channel, std::size_t region) const {
    return values[channel * regions + region];
  }
};

inline RegionScores per_map_region_nss(const ActivationStack& stack, const DenseMap& fixations,
                                       std::span<const RegionAnnotation> regions, Size image_size) {
  stack.validate();
  if (fixations.size() != image_size) {
    throw ShapeMismatch("fixation grid is " + to_string(fixations.size()) + ", image is " +
                        to_string(image_size));
  }
  RegionScores out;
  out.channels = stack.channel_count();
  out.regions = regions.size();
  out.values.assign(out.channels * out.regions, std::nullopt);
  out.region_skipped.assign(out.regions, false);
  out.channel_constant.assign(out.channels, false);

  std::vector<std::vector<std::size_t>> cells(regions.size());
  for (std::size_t k = 0; k < regions.size(); ++k) {
    if (regions[k].mask.size() != image_size) {
      throw ShapeMismatch("region " + std::to_string(regions[k].region_id) + " mask is " +
                          to_string(regions[k].mask.size()) + ", image is " + to_string(image_size));
    }
    cells[k] = nonzero_cells(logical_and(fixations, regions[k].mask));
    out.region_skipped[k] = cells[k].empty();
  }
  if (std::all_of(out.region_skipped.begin(), out.region_skipped.end(), [](bool s) { return s; })) {
    return out;
  }

  const BilinearResize resize(stack.native_size(), image_size);
  for (std::size_t j = 0; j < out.channels; ++j) {
    std::optional<NormalizedMap> z;
    try {
      z.emplace(znorm(resize.apply(stack.channels[j])));
    } catch (const ConstantMap&) {
      out.channel_constant[j] = true;
      continue;
    }
    for (std::size_t k = 0; k < regions.size(); ++k) {
      if (!out.region_skipped[k]) out.values[j * out.regions + k] = mean_over(*z, cells[k]);
    }
  }
  return out;
}

// Image-level access for the dissection aggregation. Implementations must be safe to call
// concurrently from several threads.
class DissectionSource {
 public:
  virtual ~DissectionSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::string image_id(std::size_t i) const = 0;
  virtual ImageRecord record(std::size_t i) const = 0;
  virtual ActivationStack activations(std::size_t i, const std::string& layer) const = 0;
};

class ManifestSource : public DissectionSource {
 public:
  explicit ManifestSource(const DatasetManifest& manifest) : manifest_(manifest) {}
  std::size_t size() const override { return manifest_.size(); }
  std::string image_id(std::size_t i) const override { return manifest_[i].image_id; }
  ImageRecord record(std::size_t i) const override { return load_record(manifest_[i]); }
  ActivationStack activations(std::size_t i, const std::string& layer) const override {
    return load_activations(manifest_[i], layer);
  }

 private:
  const DatasetManifest& manifest_;
};

struct InMemorySample {
  ImageRecord record;
  std::map<std::string, ActivationStack> layers;
};

class InMemorySource : public DissectionSource {
 public:
  explicit InMemorySource(std::span<const InMemorySample> samples) : samples_(samples) {}
  std::size_t size() const override { return samples_.size(); }
  std::string image_id(std::size_t i) const override { return samples_[i].record.image_id; }
  ImageRecord record(std::size_t i) const override { return samples_[i].record; }
  ActivationStack activations(std::size_t i, const std::string& layer) const override {
    auto it = samples_[i].layers.find(layer);
    if (it == samples_[i].layers.end()) {
      throw InvalidArgument("image \"" + samples_[i].record.image_id +
                            "\" has no activations for layer \"" + layer + "\"");
    }
    return it->second;
  }

 private:
  std::span<const InMemorySample> samples_;
};

namespace dissection_detail {

struct Accumulator {
  std::vector<double> sum;
  std::vector<std::size_t> count;
  std::size_t used = 0;
  std::size_t skipped = 0;

  void merge(const Accumulator& o) {
    if (sum.empty()) {
      sum.assign(o.sum.size(), 0.0);
      count.assign(o.count.size(), 0);
    }
    if (!o.sum.empty() && o.sum.size() != sum.size()) {
      throw ShapeMismatch("channel count differs between images of the same layer");
    }
    for (std::size_t j = 0; j < o.sum.size(); ++j) {
      sum[j] += o.sum[j];
      count[j] += o.count[j];
    }
    used += o.used;
    skipped += o.skipped;
  }
};

using Key = std::pair<std::size_t, Category>;  // (layer index, category)
using Partial = std::map<Key, Accumulator>;

inline Partial score_image(const DissectionSource& src, std::size_t i, const DissectionConfig& cfg) {
  const ImageRecord rec = src.record(i);
  Partial out;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const ActivationStack stack = src.activations(i, cfg.layers[l]);
    const RegionScores scores = per_map_region_nss(stack, rec.fixations, rec.regions, rec.image_size);
    for (std::size_t k = 0; k < rec.regions.size(); ++k) {
      Accumulator& acc = out[{l, rec.regions[k].category}];
      if (acc.sum.empty()) {
        acc.sum.assign(scores.channels, 0.0);
        acc.count.assign(scores.channels, 0);
      }
      if (scores.region_skipped[k]) {
        ++acc.skipped;
        continue;
      }
      ++acc.used;
      for (std::size_t j = 0; j < scores.channels; ++j) {
        if (const auto& v = scores.at(j, k)) {
          acc.sum[j] += *v;
          ++acc.count[j];
        }
      }
    }
  }
  return out;
}

}  // namespace dissection_detail

// Indices of the k highest scored maps, ties broken by lower channel index.
inline std::vector<std::size_t> top_k_maps(std::span<const std::optional<double>> scores, std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j]) idx.push_back(j);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return *scores[a] > *scores[b]; });
  if (idx.size() > k) idx.resize(k);
  return idx;
}

// Fills top_k_mean and count_above_threshold from per_map_mean_nss. Returns false when no map
// was scored.
inline bool summarize(CategoryStats& s, std::size_t top_k, double threshold) {
  const auto top = top_k_maps(s.per_map_mean_nss, top_k);
  if (top.empty()) return false;
  double sum = 0.0;
  for (auto j : top) sum += *s.per_map_mean_nss[j];
  s.top_k_mean = sum / static_cast<double>(top.size());
  s.count_above_threshold = static_cast<std::size_t>(std::count_if(
      s.per_map_mean_nss.begin(), s.per_map_mean_nss.end(),
      [&](const auto& v) { return v && *v > threshold; }));
  return true;
}

// Per (layer, category) statistics pooled over all usable regions of all images.
// Images are reduced in image_id order so the result does not depend on manifest order or jobs.
inline std::vector<CategoryStats> category_stats(const DissectionSource& src, const DissectionConfig& cfg,
                                                 WarningLog* log = nullptr, std::size_t jobs = 1) {
  using namespace dissection_detail;
  cfg.validate();
  if (src.size() == 0) throw InvalidArgument("category_stats: empty manifest");

  std::vector<std::size_t> order(src.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::string> ids(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) ids[i] = src.image_id(i);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });

  std::map<Key, Accumulator> total;
  const std::size_t chunk = std::max<std::size_t>(1, jobs) * 4;
  for (std::size_t start = 0; start < order.size(); start += chunk) {
    const std::size_t n = std::min(chunk, order.size() - start);
    std::vector<Partial> partials(n);
    parallel_for(n, jobs, [&](std::size_t t) { partials[t] = score_image(src, order[start + t], cfg); });
    for (const auto& p : partials) {
      for (const auto& [key, acc] : p) total[key].merge(acc);
    }
  }

  std::vector<CategoryStats> out;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    for (Category c : kAllCategories) {
      auto it = total.find({l, c});
      if (it == total.end()) continue;
      const Accumulator& acc = it->second;
      const std::string where = cfg.layers[l] + "/" + std::string(label(c));
      if (acc.used == 0 || acc.used < cfg.min_regions_per_category) {
        if (log) {
          log->add("category_omitted", where + ": " + std::to_string(acc.used) + " usable regions (" +
                                           std::to_string(acc.skipped) + " without fixations)");
        }
        continue;
      }
      CategoryStats s;
      s.layer = cfg.layers[l];
      s.category = c;
      s.regions_used = acc.used;
      s.regions_skipped = acc.skipped;
      s.per_map_mean_nss.resize(acc.sum.size());
      for (std::size_t j = 0; j < acc.sum.size(); ++j) {
        if (acc.count[j] > 0) s.per_map_mean_nss[j] = acc.sum[j] / static_cast<double>(acc.count[j]);
      }
      if (!summarize(s, cfg.top_k, cfg.threshold)) {
        if (log) log->add("category_omitted", where + ": no usable maps (all constant)");
        continue;
      }
      out.push_back(std::move(s));
    }
  }
  if (log) {
    for (const auto& [key, acc] : total) {
      if (acc.skipped > 0) {
        log->add("regions_skipped", cfg.layers[key.first] + "/" + std::string(label(key.second)) + ": " +
                                        std::to_string(acc.skipped) + " regions without fixations");
      }
    }
  }
  return out;
}

inline std::vector<CategoryStats> category_stats(const DatasetManifest& manifest, const DissectionConfig& cfg,
                                                 WarningLog* log = nullptr, std::size_t jobs = 1) {
  return category_stats(ManifestSource(manifest), cfg, log, jobs);
}

// NSS of the mean of all resized channels of a layer.
inline double layer_mean_nss(const ActivationStack& stack, const DenseMap& fixations, Size image_size) {
  stack.validate();
  const BilinearResize resize(stack.native_size(), image_size);
  DenseMap mean(image_size);
  for (const auto& ch : stack.channels) {
    const DenseMap r = resize.apply(ch);
    for (std::size_t i = 0; i < mean.area(); ++i) mean[i] += r[i];
  }
  for (std::size_t i = 0; i < mean.area(); ++i) mean[i] /= static_cast<double>(stack.channel_count());
  return nss(mean, fixations);
}

struct SyntheticLayerStats {
  std::string layer;
  std::vector<std::optional<double>> per_map_mean_nmm;
  std::optional<double> top_k_mean;  // empty: no usable maps
  std::size_t images = 0;
  std::size_t skipped_pairs = 0;  // (image, channel) pairs with a constant map
};

// Streams (stack, mask) pairs of one layer and reports the mean NMM of the top-k channels.
class SyntheticLayerAccumulator {
 public:
  explicit SyntheticLayerAccumulator(std::string layer) : layer_(std::move(layer)) {}

  void add(const ActivationStack& stack, const DenseMap& mask) {
    stack.validate();
    const auto cells = nonzero_cells(mask);
    if (cells.empty()) throw EmptyMask("synthetic stimulus mask is empty");
    if (sum_.empty()) {
      sum_.assign(stack.channel_count(), 0.0);
      count_.assign(stack.channel_count(), 0);
    } else if (sum_.size() != stack.channel_count()) {
      throw ShapeMismatch("layer " + layer_ + ": channel count differs between images");
    }
    const BilinearResize resize(stack.native_size(), mask.size());
    for (std::size_t j = 0; j < stack.channel_count(); ++j) {
      try {
        sum_[j] += mean_over(znorm(resize.apply(stack.channels[j])), cells);
        ++count_[j];
      } catch (const ConstantMap&) {
        ++skipped_;
      }
    }
    ++images_;
  }

  SyntheticLayerStats finish(std::size_t top_k) const {
    SyntheticLayerStats s;
    s.layer = layer_;
    s.images = images_;
    s.skipped_pairs = skipped_;
    s.per_map_mean_nmm.resize(sum_.size());
    for (std::size_t j = 0; j < sum_.size(); ++j) {
      if (count_[j] > 0) s.per_map_mean_nmm[j] = sum_[j] / static_cast<double>(count_[j]);
    }
    const auto top = top_k_maps(s.per_map_mean_nmm, top_k);
    if (!top.empty()) {
      double sum = 0.0;
      for (auto j : top) sum += *s.per_map_mean_nmm[j];
      s.top_k_mean = sum / static_cast<double>(top.size());
    }
    return s;
  }

 private:
  std::string layer_;
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
  std::size_t images_ = 0;
  std::size_t skipped_ = 0;
};

// One entry per layer; stacks_per_layer[l][i] belongs to masks[i].
inline std::vector<SyntheticLayerStats> synthetic_layer_stats(
    const std::vector<std::vector<ActivationStack>>& stacks_per_layer, std::span<const DenseMap> masks,
    std::size_t top_k) {
  if (top_k < 1) throw InvalidArgument("top_k must be at least 1");
  std::vector<SyntheticLayerStats> out;
  for (const auto& stacks : stacks_per_layer) {
    if (stacks.size() != masks.size()) throw InvalidArgument("synthetic_layer_stats: one mask per image required");
    SyntheticLayerAccumulator acc(stacks.empty() ? std::string{} : stacks.front().layer);
    for (std::size_t i = 0; i < stacks.size(); ++i) acc.add(stacks[i], masks[i]);
    out.push_back(acc.finish(top_k));
  }
  return out;
}

}  // namespace sdissect
