#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sdissect/error.hpp"

namespace sdissect {

struct Size {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t area() const { return height * width; }
  friend bool operator==(const Size&, const Size&) = default;
};

inline std::string to_string(Size s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width);
}

// Single-channel H x W grid of finite reals, row-major.
class DenseMap {
 public:
  DenseMap() = default;

  explicit DenseMap(Size size, double fill = 0.0) : size_(size), values_(size.area(), fill) {
    check_size(size);
  }

  DenseMap(Size size, std::vector<double> values) : size_(size), values_(std::move(values)) {
    check_size(size);
    if (values_.size() != size.area()) {
      throw ShapeMismatch("DenseMap: " + std::to_string(values_.size()) + " values for a " +
                          to_string(size) + " grid");
    }
    for (double v : values_) {
      if (!std::isfinite(v)) throw InvalidArgument("DenseMap: non-finite values");
    }
  }

  Size size() const { return size_; }
  std::size_t height() const { return size_.height; }
  std::size_t width() const { return size_.width; }
  std::size_t area() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * size_.width + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * size_.width + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  // Number of cells holding a nonzero value.
  std::size_t count_nonzero() const {
    return static_cast<std::size_t>(
        std::count_if(values_.begin(), values_.end(), [](double v) { return v != 0.0; }));
  }

  friend bool operator==(const DenseMap&, const DenseMap&) = default;

 private:
  static void check_size(Size s) {
    if (s.height < 1 || s.width < 1) {
      throw InvalidArgument("DenseMap: dimensions must be at least 1x1, got " + to_string(s));
    }
  }

  Size size_{};
  std::vector<double> values_;
};

inline void require_same_size(const DenseMap& a, const DenseMap& b, std::string_view what) {
  if (a.size() != b.size()) {
    throw ShapeMismatch(std::string(what) + ": " + to_string(a.size()) + " vs " +
                        to_string(b.size()));
  }
}

// Cellwise AND of two grids; output is 1 where both are nonzero.
inline DenseMap logical_and(const DenseMap& a, const DenseMap& b) {
  require_same_size(a, b, "logical_and");
  DenseMap out(a.size());
  for (std::size_t i = 0; i < a.area(); ++i) out[i] = (a[i] != 0.0 && b[i] != 0.0) ? 1.0 : 0.0;
  return out;
}

// 8-bit interleaved RGB image.
struct RgbImage {
  Size size{};
  std::vector<std::uint8_t> pixels;  // size.area() * 3

  RgbImage() = default;
  explicit RgbImage(Size s, std::array<std::uint8_t, 3> fill = {0, 0, 0})
      : size(s), pixels(s.area() * 3) {
    for (std::size_t i = 0; i < s.area(); ++i) {
      pixels[3 * i] = fill[0];
      pixels[3 * i + 1] = fill[1];
      pixels[3 * i + 2] = fill[2];
    }
  }

  std::uint8_t* at(std::size_t r, std::size_t c) { return &pixels[3 * (r * size.width + c)]; }
  const std::uint8_t* at(std::size_t r, std::size_t c) const {
    return &pixels[3 * (r * size.width + c)];
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

struct FixationPoint {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const FixationPoint&, const FixationPoint&) = default;
};

// Pooled fixation points of one image, in the coordinate frame they were recorded in.
struct FixationSet {
  std::string image_id;
  Size frame{};
  std::vector<FixationPoint> points;
};

// The twelve salient-region categories, in canonical order.
enum class Category {
  PersonHead,
  PersonPart,
  AnimalHead,
  AnimalPart,
  Object,
  Text,
  Symbol,
  Vehicle,
  Food,
  Drink,
  Plant,
  Other,
};

inline constexpr std::array<std::string_view, 12> kCategoryLabels = {
    "person head", "person part", "animal head", "animal part", "object", "text",
    "symbol",      "vehicle",     "food",        "drink",       "plant",  "other",
};

inline constexpr std::array<Category, 12> kAllCategories = {
    Category::PersonHead, Category::PersonPart, Category::AnimalHead, Category::AnimalPart,
    Category::Object,     Category::Text,       Category::Symbol,     Category::Vehicle,
    Category::Food,       Category::Drink,      Category::Plant,      Category::Other,
};

inline std::string_view label(Category c) { return kCategoryLabels[static_cast<std::size_t>(c)]; }

inline std::optional<Category> try_parse_category(std::string_view text) {
  for (std::size_t i = 0; i < kCategoryLabels.size(); ++i) {
    if (kCategoryLabels[i] == text) return kAllCategories[i];
  }
  return std::nullopt;
}

inline Category parse_category(std::string_view text) {
  if (auto c = try_parse_category(text)) return *c;
  std::string legal;
  for (auto l : kCategoryLabels) {
    if (!legal.empty()) legal += ", ";
    legal += "\"" + std::string(l) + "\"";
  }
  throw FormatError("unknown category \"" + std::string(text) + "\"; legal labels: " + legal);
}

struct RegionAnnotation {
  std::string image_id;
  int region_id = 0;
  Category category = Category::Other;
  DenseMap mask;  // binary, nonempty
};

// The C maps one layer produced for one image. Channel index is stable across images.
struct ActivationStack {
  std::string image_id;
  std::string layer;
  std::vector<DenseMap> channels;

  std::size_t channel_count() const { return channels.size(); }
  Size native_size() const { return channels.empty() ? Size{} : channels.front().size(); }

  void validate() const {
    if (channels.empty()) throw InvalidArgument("ActivationStack: no channels");
    for (const auto& ch : channels) {
      if (ch.size() != channels.front().size()) {
        throw ShapeMismatch("ActivationStack: channels differ in size");
      }
    }
  }
};

}  // namespace sdissect
