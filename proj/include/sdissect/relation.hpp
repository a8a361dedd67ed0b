#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdissect/dissection.hpp"
#include "sdissect/metrics.hpp"
#include "sdissect/types.hpp"

namespace sdissect {

// Model output and ground truth for one annotated image.
struct RelationImage {
  std::string image_id;
  DenseMap prediction;
  std::optional<DenseMap> ground_truth;  // continuous saliency map, needed for output_difference
  DenseMap fixations;                    // binary grid
  std::vector<RegionAnnotation> regions;
};

struct CategoryRelation {
  Category category = Category::Other;
  double inner_saliency = 0.0;
  double output_saliency = 0.0;
  double output_difference = 0.0;
  std::size_t regions = 0;
};

// Per-category sums over (image, region) pairs with a fixation inside the region. Images can
// be added one at a time, so a dataset never has to be held in memory at once.
class RelationAccumulator {
 public:
  void add(const RelationImage& img) {
    std::optional<NormalizedMap> pred, gt;
    for (const auto& reg : img.regions) {
      require_same_size(reg.mask, img.fixations, "region mask vs fixations");
      const auto cells = nonzero_cells(logical_and(img.fixations, reg.mask));
      if (cells.empty()) {
        ++sums_[reg.category].skipped;
        continue;
      }
      if (!pred) {
        require_same_size(img.prediction, img.fixations, "prediction vs fixations");
        pred.emplace(znorm(img.prediction));
      }
      if (!gt && img.ground_truth) {
        require_same_size(*img.ground_truth, img.fixations, "ground truth vs fixations");
        gt.emplace(znorm(*img.ground_truth));
      }
      Sums& s = sums_[reg.category];
      const double p = mean_over(*pred, cells);
      s.output += p;
      ++s.regions;
      if (gt) {
        s.difference += std::abs(p - mean_over(*gt, cells));
        ++s.with_truth;
      }
    }
  }

  std::size_t regions(Category c) const {
    auto it = sums_.find(c);
    return it == sums_.end() ? 0 : it->second.regions;
  }

  double output_saliency(Category c) const {
    const Sums& s = usable(c);
    return s.output / static_cast<double>(s.regions);
  }

  double output_difference(Category c) const {
    const Sums& s = usable(c);
    if (s.with_truth != s.regions) {
      throw InvalidArgument("category \"" + std::string(label(c)) + "\": ground-truth map missing for " +
                            std::to_string(s.regions - s.with_truth) + " regions");
    }
    return s.difference / static_cast<double>(s.regions);
  }

 private:
  struct Sums {
    double output = 0.0;
    double difference = 0.0;
    std::size_t regions = 0;
    std::size_t with_truth = 0;
    std::size_t skipped = 0;
  };

  const Sums& usable(Category c) const {
    auto it = sums_.find(c);
    if (it == sums_.end() || it->second.regions == 0) {
      throw NoFixationsInRegion("category \"" + std::string(label(c)) + "\" has no usable regions");
    }
    return it->second;
  }

  std::map<Category, Sums> sums_;
};

namespace relation_detail {

inline RelationAccumulator accumulate(std::span<const RelationImage> images) {
  RelationAccumulator acc;
  for (const auto& img : images) acc.add(img);
  return acc;
}

}  // namespace relation_detail

// Mean association of the prediction over every usable region of category c.
inline double output_saliency(std::span<const RelationImage> images, Category c) {
  return relation_detail::accumulate(images).output_saliency(c);
}

// Mean absolute difference between the prediction's and the ground truth's per-region NSS.
inline double output_difference(std::span<const RelationImage> images, Category c) {
  return relation_detail::accumulate(images).output_difference(c);
}

// Relations for every category of `inner` (one layer's dissection) that has usable regions.
inline std::vector<CategoryRelation> relate_categories(const RelationAccumulator& acc,
                                                       std::span<const CategoryStats> inner,
                                                       bool with_difference = true) {
  std::vector<CategoryRelation> out;
  for (const auto& s : inner) {
    const std::size_t regions = acc.regions(s.category);
    if (regions == 0) continue;
    CategoryRelation r;
    r.category = s.category;
    r.inner_saliency = s.top_k_mean;
    r.output_saliency = acc.output_saliency(s.category);
    if (with_difference) r.output_difference = acc.output_difference(s.category);
    r.regions = regions;
    out.push_back(r);
  }
  return out;
}

inline std::vector<CategoryRelation> relate_categories(std::span<const RelationImage> images,
                                                       std::span<const CategoryStats> inner,
                                                       bool with_difference = true) {
  return relate_categories(relation_detail::accumulate(images), inner, with_difference);
}

// Spearman correlation between inner saliency (top-k mean) and output saliency over the
// categories present in both lists.
inline double inner_output_correlation(std::span<const CategoryStats> stats,
                                       std::span<const CategoryRelation> relations) {
  std::map<Category, double> inner;
  for (const auto& s : stats) inner[s.category] = s.top_k_mean;
  std::map<Category, double> outer;
  for (const auto& r : relations) outer[r.category] = r.output_saliency;
  std::vector<double> xs, ys;
  for (const auto& [c, v] : inner) {
    if (auto it = outer.find(c); it != outer.end()) {
      xs.push_back(v);
      ys.push_back(it->second);
    }
  }
  if (xs.size() < 3) {
    throw InvalidArgument("inner_output_correlation: " + std::to_string(xs.size()) +
                          " shared categories, need at least 3");
  }
  return spearman(xs, ys);
}

}  // namespace sdissect
