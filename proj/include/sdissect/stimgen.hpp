#pragma once

// Parametric pop-out search arrays with pixel-exact target masks.
//
// Items are rasterized with hard edges: a pixel belongs to an item when its center falls
// inside the item's footprint. Every item stays inside its own grid cell (checked), so
// items never overlap and the mask covers exactly the target's painted pixels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdissect/error.hpp"
#include "sdissect/types.hpp"

namespace sdissect {

enum class ItemShape { Bar, Circle, CornerArc };
enum class PopOutKind { Color, Orientation, Curvature, Density, Size };

inline constexpr std::array<std::string_view, 3> kItemShapeNames = {"bar", "circle", "corner-arc"};
inline constexpr std::array<std::string_view, 5> kPopOutNames = {"color", "orientation", "curvature",
                                                                 "density", "size"};

inline std::string_view name(ItemShape s) { return kItemShapeNames[static_cast<std::size_t>(s)]; }
inline std::string_view name(PopOutKind k) { return kPopOutNames[static_cast<std::size_t>(k)]; }

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct ItemParams {
  Rgb color{};
  double orientation_deg = 0.0;
  double scale = 0.6;      // item length (bar, arc) or diameter (circle) as a fraction of the cell
  double curvature = 0.0;  // corner-arc only: fraction of a half turn the arc bends through
  double spacing = 1.0;    // density targets: item spacing inside the cluster relative to the grid
  friend bool operator==(const ItemParams&, const ItemParams&) = default;
};

struct StimulusSpec {
  std::size_t rows = 6;
  std::size_t cols = 6;
  Size canvas{224, 224};
  ItemShape item_shape = ItemShape::Bar;
  ItemParams distractor{};
  ItemParams target{};
  std::size_t target_row = 0;
  std::size_t target_col = 0;
  double jitter = 0.0;  // max displacement as a fraction of the cell size
  std::uint64_t seed = 0;
  Rgb background{128, 128, 128};
  double thickness = 0.25;       // stroke width relative to item length
  std::size_t cluster_size = 3;  // density targets: side of the anomalous block, in cells

  bool is_density() const { return target.spacing != 1.0; }

  void validate() const {
    if (rows < 1 || cols < 1) throw InvalidArgument("stimulus grid must be at least 1x1");
    if (canvas.height < rows || canvas.width < cols) throw InvalidArgument("canvas smaller than grid");
    if (target_row >= rows || target_col >= cols) throw InvalidArgument("target cell outside grid");
    if (target == distractor) throw InvalidArgument("target and distractor parameters are identical; no singleton");
    if (!(jitter >= 0.0 && jitter <= 0.4)) throw InvalidArgument("jitter must lie in [0, 0.4]");
    if (!(thickness > 0.0 && thickness <= 1.0)) throw InvalidArgument("thickness must lie in (0, 1]");
    if (distractor.spacing != 1.0) throw InvalidArgument("distractor spacing must be 1");
    if (!(target.spacing > 0.0)) throw InvalidArgument("target spacing must be positive");
    for (const auto* p : {&distractor, &target}) {
      if (!(p->scale > 0.0 && p->scale <= 1.0)) throw InvalidArgument("item scale must lie in (0, 1]");
      if (!(p->curvature >= 0.0 && p->curvature <= 1.0)) throw InvalidArgument("curvature must lie in [0, 1]");
    }
    if (target.color == background) throw InvalidArgument("target color equals the background");
    if (is_density() && cluster_size < 1) throw InvalidArgument("cluster_size must be at least 1");
  }
};

struct Stimulus {
  RgbImage image;
  DenseMap target_mask;
};

namespace stimgen_detail {

struct Item {
  double cy = 0, cx = 0;  // center, pixels
  ItemParams params;
  bool target = false;
};

struct Geometry {
  ItemShape shape;
  double length = 0, stroke = 0, cos_t = 1, sin_t = 0;
  double arc_radius = 0, arc_half_angle = 0, arc_offset = 0;  // corner-arc
  double radius = 0;                                          // circle
  double bound = 0;  // radius of a disc around the center containing the footprint

  Geometry(ItemShape s, const ItemParams& p, double cell, double thickness) : shape(s) {
    const double theta = p.orientation_deg * std::numbers::pi / 180.0;
    cos_t = std::cos(theta);
    sin_t = std::sin(theta);
    if (shape == ItemShape::Circle) {
      radius = 0.5 * p.scale * cell;
      bound = radius;
      return;
    }
    length = p.scale * cell;
    stroke = thickness * length;
    if (shape == ItemShape::CornerArc && p.curvature > 0.0) {
      const double sweep = p.curvature * std::numbers::pi;
      arc_radius = length / sweep;
      arc_half_angle = 0.5 * sweep;
      // Place the arc's circle so the arc's vertical extent is centered on the item center.
      arc_offset = 0.5 * arc_radius * (1.0 + std::cos(arc_half_angle));
      const double sag = arc_radius * (1.0 - std::cos(arc_half_angle));
      bound = 0.5 * length + 0.5 * sag + 0.5 * stroke;
    } else {
      bound = std::hypot(0.5 * length, 0.5 * stroke);
    }
  }

  bool contains(double dy, double dx) const {
    if (shape == ItemShape::Circle) return dy * dy + dx * dx < radius * radius;
    // Rotate into the item frame: u along the item, v across it.
    const double u = dx * cos_t - dy * sin_t;
    const double v = dx * sin_t + dy * cos_t;
    if (arc_radius == 0.0) {
      return u >= -0.5 * length && u < 0.5 * length && v >= -0.5 * stroke && v < 0.5 * stroke;
    }
    const double du = u;
    const double dv = v - arc_offset;
    const double r = std::hypot(du, dv);
    const double angle = std::atan2(du, -dv);
    return std::abs(angle) <= arc_half_angle && std::abs(r - arc_radius) < 0.5 * stroke;
  }
};

inline void paint(const Item& item, ItemShape shape, double cell, double thickness, RgbImage& img,
                  DenseMap& mask) {
  const Geometry g(shape, item.params, cell, thickness);
  const auto h = static_cast<long>(img.size.height), w = static_cast<long>(img.size.width);
  const long r0 = std::max(0L, static_cast<long>(std::floor(item.cy - g.bound)) - 1);
  const long r1 = std::min(h - 1, static_cast<long>(std::ceil(item.cy + g.bound)) + 1);
  const long c0 = std::max(0L, static_cast<long>(std::floor(item.cx - g.bound)) - 1);
  const long c1 = std::min(w - 1, static_cast<long>(std::ceil(item.cx + g.bound)) + 1);
  for (long r = r0; r <= r1; ++r) {
    for (long c = c0; c <= c1; ++c) {
      if (!g.contains(static_cast<double>(r) + 0.5 - item.cy, static_cast<double>(c) + 0.5 - item.cx)) continue;
      auto* px = img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      px[0] = item.params.color.r;
      px[1] = item.params.color.g;
      px[2] = item.params.color.b;
      if (item.target) mask(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 1.0;
    }
  }
}

}  // namespace stimgen_detail

// Renders rows x cols items; the target cell (or, for density targets, the cluster around
// it) uses the target parameters.
inline Stimulus render(const StimulusSpec& spec) {
  using namespace stimgen_detail;
  spec.validate();
  const double cell_h = static_cast<double>(spec.canvas.height) / static_cast<double>(spec.rows);
  const double cell_w = static_cast<double>(spec.canvas.width) / static_cast<double>(spec.cols);
  const double cell = std::min(cell_h, cell_w);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Item> items;
  items.reserve(spec.rows * spec.cols);
  for (std::size_t r = 0; r < spec.rows; ++r) {
    for (std::size_t c = 0; c < spec.cols; ++c) {
      Item it;
      const double jy = unit(rng), jx = unit(rng);
      it.cy = (static_cast<double>(r) + 0.5) * cell_h;
      it.cx = (static_cast<double>(c) + 0.5) * cell_w;
      it.params = spec.distractor;
      if (spec.is_density()) {
        const auto half = static_cast<long>(spec.cluster_size / 2);
        const long dr = static_cast<long>(r) - static_cast<long>(spec.target_row);
        const long dc = static_cast<long>(c) - static_cast<long>(spec.target_col);
        const long lo = -half, hi = static_cast<long>(spec.cluster_size) - 1 - half;
        if (dr >= lo && dr <= hi && dc >= lo && dc <= hi) {
          // Block center for odd and even cluster sizes alike.
          const double block_cy = (static_cast<double>(spec.target_row) + 0.5 +
                                   0.5 * static_cast<double>(lo + hi)) * cell_h;
          const double block_cx = (static_cast<double>(spec.target_col) + 0.5 +
                                   0.5 * static_cast<double>(lo + hi)) * cell_w;
          it.cy = block_cy + spec.target.spacing * (it.cy - block_cy);
          it.cx = block_cx + spec.target.spacing * (it.cx - block_cx);
          it.params = spec.target;
          it.target = true;
          it.cy += jy * spec.jitter * cell_h * std::min(1.0, spec.target.spacing);
          it.cx += jx * spec.jitter * cell_w * std::min(1.0, spec.target.spacing);
          items.push_back(it);
          continue;
        }
      } else if (r == spec.target_row && c == spec.target_col) {
        it.params = spec.target;
        it.target = true;
      }
      it.cy += jy * spec.jitter * cell_h;
      it.cx += jx * spec.jitter * cell_w;
      items.push_back(it);
    }
  }

  // Extent checks.
  const double max_jitter = spec.jitter * std::max(cell_h, cell_w);
  for (const auto& it : items) {
    const Geometry g(spec.item_shape, it.params, cell, spec.thickness);
    if (!spec.is_density() || !it.target) {
      if (g.bound + max_jitter > 0.5 * cell) {
        throw InvalidArgument("item too large for its cell (extent " + std::to_string(g.bound + max_jitter) +
                              " px, half cell " + std::to_string(0.5 * cell) + " px)");
      }
    }
  }
  if (spec.is_density()) {
    const auto half = static_cast<long>(spec.cluster_size / 2);
    const long lo = static_cast<long>(spec.target_row) - half;
    const long lo_c = static_cast<long>(spec.target_col) - half;
    const long hi = lo + static_cast<long>(spec.cluster_size) - 1;
    const long hi_c = lo_c + static_cast<long>(spec.cluster_size) - 1;
    if (lo < 0 || lo_c < 0 || hi >= static_cast<long>(spec.rows) || hi_c >= static_cast<long>(spec.cols)) {
      throw InvalidArgument("cluster overflow: the density cluster does not fit inside the grid");
    }
    const Geometry gt(spec.item_shape, spec.target, cell, spec.thickness);
    for (const auto& it : items) {
      if (!it.target) continue;
      if (it.cy - gt.bound < 0 || it.cx - gt.bound < 0 ||
          it.cy + gt.bound > static_cast<double>(spec.canvas.height) ||
          it.cx + gt.bound > static_cast<double>(spec.canvas.width)) {
        throw InvalidArgument("cluster overflow: a cluster item leaves the canvas");
      }
    }
    // Cluster items must not touch one another.
    for (std::size_t a = 0; a < items.size(); ++a) {
      for (std::size_t b = a + 1; b < items.size(); ++b) {
        if (!items[a].target || !items[b].target) continue;
        if (std::hypot(items[a].cy - items[b].cy, items[a].cx - items[b].cx) < 2 * gt.bound + 1.0) {
          throw InvalidArgument("cluster overflow: cluster items overlap at this spacing");
        }
      }
    }
    // A sparser cluster pushes into neighbouring cells; drop distractors it would collide with.
    if (spec.target.spacing > 1.0) {
      const Geometry gd(spec.item_shape, spec.distractor, cell, spec.thickness);
      std::vector<Item> kept;
      for (const auto& it : items) {
        bool collides = false;
        if (!it.target) {
          for (const auto& t : items) {
            if (t.target && std::hypot(it.cy - t.cy, it.cx - t.cx) < gt.bound + gd.bound + 1.0) collides = true;
          }
        }
        if (!collides) kept.push_back(it);
      }
      items = std::move(kept);
    }
  }

  Stimulus out;
  out.image = RgbImage(spec.canvas, {spec.background.r, spec.background.g, spec.background.b});
  out.target_mask = DenseMap(spec.canvas);
  for (const auto& it : items) paint(it, spec.item_shape, cell, spec.thickness, out.image, out.target_mask);
  if (out.target_mask.count_nonzero() == 0) throw InvalidArgument("target rasterizes to no pixels");
  return out;
}

// Density singleton: a block of items whose spacing differs from the rest of the array.
inline Stimulus density_singleton(const StimulusSpec& spec) {
  if (!spec.is_density()) {
    throw InvalidArgument("density singleton needs a target spacing factor other than 1 (uniform array)");
  }
  return render(spec);
}

struct SuiteItem {
  std::string id;
  PopOutKind kind = PopOutKind::Color;
  StimulusSpec spec;
  Stimulus stimulus;
};

// Fixed catalog of 80 arrays: 20 each of color, orientation, curvature and density singletons
// on varied grids and target positions. Deterministic for a given seed; the seed drives
// target placement and jitter.
inline std::vector<SuiteItem> standard_suite(std::uint64_t seed) {
  static constexpr std::array<std::pair<Rgb, Rgb>, 10> kColorPairs = {{
      {{220, 40, 40}, {40, 170, 40}},   {{40, 170, 40}, {220, 40, 40}},
      {{40, 80, 220}, {230, 210, 40}},  {{230, 210, 40}, {40, 80, 220}},
      {{240, 140, 20}, {120, 40, 180}}, {{120, 40, 180}, {240, 140, 20}},
      {{220, 40, 40}, {40, 80, 220}},   {{40, 80, 220}, {220, 40, 40}},
      {{40, 200, 200}, {220, 40, 160}}, {{220, 40, 160}, {40, 200, 200}},
  }};
  const Rgb ink{25, 25, 25};
  constexpr double kMinStrokePx = 6.0;
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  std::vector<SuiteItem> suite;
  suite.reserve(80);
  auto add = [&](PopOutKind kind, StimulusSpec spec) {
    SuiteItem item;
    item.id = "stim_" + std::string(3 - std::min<std::size_t>(3, std::to_string(suite.size()).size()), '0') +
              std::to_string(suite.size());
    item.kind = kind;
    // Strokes of at least 6 px survive the default 5x5 morphological opening of the classical
    // baseline, so thin items are not erased before they can pop out.
    if (spec.item_shape != ItemShape::Circle) {
      const double cell = std::min(static_cast<double>(spec.canvas.height) / static_cast<double>(spec.rows),
                                   static_cast<double>(spec.canvas.width) / static_cast<double>(spec.cols));
      const double length = std::min(spec.distractor.scale, spec.target.scale) * cell;
      spec.thickness = std::min(1.0, std::max(spec.thickness, kMinStrokePx / length));
    }
    spec.seed = rng();
    item.spec = spec;
    item.stimulus = render(spec);
    suite.push_back(std::move(item));
  };

  for (std::size_t i = 0; i < 20; ++i) {
    StimulusSpec s;
    s.rows = s.cols = 5 + i % 4;
    s.item_shape = ItemShape::Bar;
    s.jitter = 0.08;
    s.distractor.scale = s.target.scale = 0.6;
    s.distractor.orientation_deg = s.target.orientation_deg = (i % 2 == 0) ? 0.0 : 90.0;
    s.target.color = kColorPairs[i % 10].first;
    s.distractor.color = kColorPairs[i % 10].second;
    s.target_row = pick(0, s.rows - 1);
    s.target_col = pick(0, s.cols - 1);
    add(PopOutKind::Color, s);
  }
  for (std::size_t i = 0; i < 20; ++i) {
    StimulusSpec s;
    s.rows = s.cols = 5 + i % 4;
    s.item_shape = ItemShape::Bar;
    s.jitter = 0.08;
    s.distractor.color = s.target.color = ink;
    s.distractor.scale = s.target.scale = 0.6;
    s.distractor.orientation_deg = 45.0 * static_cast<double>(i % 4);
    s.target.orientation_deg = s.distractor.orientation_deg + ((i / 4) % 2 == 0 ? 90.0 : 45.0);
    s.target_row = pick(0, s.rows - 1);
    s.target_col = pick(0, s.cols - 1);
    add(PopOutKind::Orientation, s);
  }
  for (std::size_t i = 0; i < 20; ++i) {
    StimulusSpec s;
    s.rows = s.cols = 5 + i % 4;
    s.item_shape = ItemShape::CornerArc;
    s.jitter = 0.08;
    s.distractor.color = s.target.color = ink;
    s.distractor.scale = s.target.scale = 0.45;
    s.distractor.orientation_deg = s.target.orientation_deg = 90.0 * static_cast<double>(i % 4);
    s.target.curvature = 0.6 + 0.2 * static_cast<double>((i / 4) % 3);
    s.target_row = pick(0, s.rows - 1);
    s.target_col = pick(0, s.cols - 1);
    add(PopOutKind::Curvature, s);
  }
  for (std::size_t i = 0; i < 20; ++i) {
    StimulusSpec s;
    s.rows = s.cols = 7 + i % 3;
    s.item_shape = ItemShape::Circle;
    s.jitter = 0.05;
    s.distractor.color = s.target.color = ink;
    s.distractor.scale = s.target.scale = 0.35;
    s.distractor.orientation_deg = s.target.orientation_deg = 45.0 * static_cast<double>(i % 4);
    s.target.spacing = (i / 2) % 2 == 0 ? 0.5 : 0.6;
    s.cluster_size = 3;
    s.target_row = pick(1, s.rows - 2);
    s.target_col = pick(1, s.cols - 2);
    add(PopOutKind::Density, s);
  }
  return suite;
}

inline nlohmann::json to_json(const Rgb& c) { return nlohmann::json::array({c.r, c.g, c.b}); }

inline nlohmann::json to_json(const ItemParams& p) {
  return {{"color", to_json(p.color)}, {"orientation", p.orientation_deg}, {"scale", p.scale},
          {"curvature", p.curvature},  {"spacing", p.spacing}};
}

inline nlohmann::json to_json(const StimulusSpec& s) {
  return {{"grid", {s.rows, s.cols}},
          {"canvas", {s.canvas.height, s.canvas.width}},
          {"item_shape", std::string(name(s.item_shape))},
          {"distractor", to_json(s.distractor)},
          {"target", to_json(s.target)},
          {"target_cell", {s.target_row, s.target_col}},
          {"jitter", s.jitter},
          {"seed", s.seed},
          {"background", to_json(s.background)},
          {"thickness", s.thickness},
          {"cluster_size", s.cluster_size}};
}

inline Rgb rgb_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::array<int, 3>>();
  for (int c : v) {
    if (c < 0 || c > 255) throw FormatError("color component out of range");
  }
  return Rgb{static_cast<std::uint8_t>(v[0]), static_cast<std::uint8_t>(v[1]), static_cast<std::uint8_t>(v[2])};
}

inline ItemParams item_params_from_json(const nlohmann::json& j) {
  ItemParams p;
  p.color = rgb_from_json(j.at("color"));
  p.orientation_deg = j.value("orientation", 0.0);
  p.scale = j.value("scale", 0.6);
  p.curvature = j.value("curvature", 0.0);
  p.spacing = j.value("spacing", 1.0);
  return p;
}

inline StimulusSpec stimulus_spec_from_json(const nlohmann::json& j) {
  try {
    StimulusSpec s;
    const auto grid = j.at("grid").get<std::array<std::size_t, 2>>();
    s.rows = grid[0];
    s.cols = grid[1];
    const auto canvas = j.at("canvas").get<std::array<std::size_t, 2>>();
    s.canvas = Size{canvas[0], canvas[1]};
    const auto shape = j.at("item_shape").get<std::string>();
    auto it = std::find(kItemShapeNames.begin(), kItemShapeNames.end(), shape);
    if (it == kItemShapeNames.end()) throw FormatError("unknown item_shape \"" + shape + "\"");
    s.item_shape = static_cast<ItemShape>(it - kItemShapeNames.begin());
    s.distractor = item_params_from_json(j.at("distractor"));
    s.target = item_params_from_json(j.at("target"));
    const auto cell = j.at("target_cell").get<std::array<std::size_t, 2>>();
    s.target_row = cell[0];
    s.target_col = cell[1];
    s.jitter = j.value("jitter", 0.0);
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("background")) s.background = rgb_from_json(j.at("background"));
    s.thickness = j.value("thickness", 0.25);
    s.cluster_size = j.value("cluster_size", std::size_t{3});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad stimulus spec: ") + e.what());
  }
}

}  // namespace sdissect
