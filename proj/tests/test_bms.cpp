#include <gtest/gtest.h>

#include <deque>

#include "test_support.hpp"

using namespace sdissect;
using namespace sdissect::testing;

namespace {

// Label every 4-connected foreground component and report whether it touches the border.
std::vector<bool> border_reachable(const DenseMap& m) {
  const std::size_t h = m.height(), w = m.width();
  std::vector<int> label(m.area(), -1);
  std::vector<bool> touches;
  for (std::size_t s = 0; s < m.area(); ++s) {
    if (m[s] == 0.0 || label[s] >= 0) continue;
    const int id = static_cast<int>(touches.size());
    touches.push_back(false);
    std::deque<std::size_t> q{s};
    label[s] = id;
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop_front();
      const std::size_t r = i / w, c = i % w;
      if (r == 0 || c == 0 || r == h - 1 || c == w - 1) touches[id] = true;
      const std::pair<long, long> nb[] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
      for (auto [dr, dc] : nb) {
        const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
        if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
        const std::size_t j = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
        if (m[j] != 0.0 && label[j] < 0) {
          label[j] = id;
          q.push_back(j);
        }
      }
    }
  }
  std::vector<bool> out(m.area(), false);
  for (std::size_t i = 0; i < m.area(); ++i) out[i] = label[i] >= 0 && touches[static_cast<std::size_t>(label[i])];
  return out;
}

RgbImage random_image(std::mt19937_64& rng, Size s) {
  RgbImage img(s);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(d(rng));
  return img;
}

}  // namespace

TEST(BooleanMaps, ThresholdCounting) {
  BmsConfig cfg;
  cfg.threshold_step = 128;
  cfg.use_both_polarities = false;
  EXPECT_EQ(boolean_maps_of_channel(DenseMap(Size{3, 3}, 7.0), cfg).size(), 1u);
  EXPECT_EQ(bms_thresholds(8).size(), 31u);
  cfg = BmsConfig{};
  EXPECT_EQ(boolean_maps(RgbImage(Size{4, 4}), cfg).size(), 3u * 31u * 2u);
}

TEST(BooleanMaps, TwoLevelChannelGivesTheSameBipartitionAtEveryThreshold) {
  DenseMap ch(Size{4, 4});
  for (std::size_t i = 0; i < ch.area(); i += 3) ch[i] = 255.0;
  BmsConfig cfg;
  cfg.use_both_polarities = false;
  const auto maps = boolean_maps_of_channel(ch, cfg);
  ASSERT_EQ(maps.size(), 31u);
  for (const auto& m : maps) {
    for (std::size_t i = 0; i < ch.area(); ++i) EXPECT_EQ(m[i], ch[i] == 255.0 ? 1.0 : 0.0);
  }
}

TEST(BooleanMaps, ConstantChannelGivesAllOnesOrAllZeros) {
  for (const auto& m : boolean_maps_of_channel(DenseMap(Size{5, 5}, 100.0), BmsConfig{})) {
    const std::size_t n = m.count_nonzero();
    EXPECT_TRUE(n == 0 || n == m.area());
  }
}

TEST(AttentionMap, AllOnesVanishesAndInteriorBlobSurvivesNormalized) {
  BmsConfig cfg;
  EXPECT_EQ(attention_map(DenseMap(Size{12, 12}, 1.0), cfg).count_nonzero(), 0u);

  DenseMap blob(Size{12, 12});
  for (std::size_t r = 3; r < 9; ++r)
    for (std::size_t c = 4; c < 9; ++c) blob(r, c) = 1.0;
  const DenseMap a = attention_map(blob, cfg);
  double ss = 0;
  for (double v : a.values()) ss += v * v;
  EXPECT_NEAR(ss, 1.0, 1e-12);
  for (std::size_t i = 0; i < a.area(); ++i) EXPECT_EQ(a[i] != 0.0, blob[i] != 0.0);
}

TEST(AttentionMap, BorderBlobIsRemovedInteriorBlobKept) {
  DenseMap m(Size{16, 16});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c) m(r, c) = 1.0;  // touches the border
  for (std::size_t r = 9; r < 14; ++r)
    for (std::size_t c = 9; c < 14; ++c) m(r, c) = 1.0;  // interior
  const DenseMap a = attention_map(m, BmsConfig{});
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t c = 0; c < 16; ++c) {
      const bool interior = r >= 9 && r < 14 && c >= 9 && c < 14;
      EXPECT_EQ(a(r, c) != 0.0, interior) << r << "," << c;
    }
  }
}

TEST(AttentionMap, BorderSuppressionMatchesFloodFillOracle) {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 200; ++trial) {
    const DenseMap m = random_binary(rng, random_size(rng, 1, 20), 0.45);
    const DenseMap s = suppress_border_components(m);
    const auto reach = border_reachable(m);
    for (std::size_t i = 0; i < m.area(); ++i) ASSERT_EQ(s[i], (m[i] != 0.0 && !reach[i]) ? 1.0 : 0.0);
    // With the opening on top, nothing reachable from the border carries mass.
    BmsConfig cfg;
    cfg.opening_radius = 1;
    const DenseMap a = attention_map(m, cfg);
    for (std::size_t i = 0; i < m.area(); ++i) {
      if (reach[i] || m[i] == 0.0) {
        ASSERT_EQ(a[i], 0.0);
      }
    }
  }
}

TEST(Bms, UniformImageGivesZeroMapAndWarning) {
  WarningLog log;
  const DenseMap s = bms_saliency(RgbImage(Size{32, 32}, {90, 120, 30}), BmsConfig{}, &log);
  EXPECT_EQ(s.count_nonzero(), 0u);
  EXPECT_FALSE(log.empty());
}

TEST(Bms, OutputLiesInUnitInterval) {
  std::mt19937_64 rng(92);
  for (int trial = 0; trial < 5; ++trial) {
    RgbImage img = random_image(rng, random_size(rng, 8, 40));
    const DenseMap s = bms_saliency(img, BmsConfig{});
    for (double v : s.values()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Bms, RgbChannelPermutationInvariance) {
  std::mt19937_64 rng(93);
  BmsConfig cfg;
  cfg.colorspace = BmsColorspace::Rgb;
  cfg.use_both_polarities = true;
  for (int trial = 0; trial < 3; ++trial) {
    const RgbImage img = random_image(rng, Size{24, 30});
    RgbImage perm = img;
    for (std::size_t i = 0; i < img.size.area(); ++i) {
      perm.pixels[3 * i] = img.pixels[3 * i + 2];
      perm.pixels[3 * i + 1] = img.pixels[3 * i];
      perm.pixels[3 * i + 2] = img.pixels[3 * i + 1];
    }
    const DenseMap a = bms_saliency(img, cfg), b = bms_saliency(perm, cfg);
    for (std::size_t i = 0; i < a.area(); ++i) ASSERT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Bms, JobsDoNotChangeTheResult) {
  std::mt19937_64 rng(94);
  const RgbImage img = random_image(rng, Size{20, 20});
  EXPECT_EQ(bms_saliency(img, BmsConfig{}, nullptr, 1), bms_saliency(img, BmsConfig{}, nullptr, 3));
}

TEST(Bms, ColorSingletonPopsOut) {
  // Target-mask mean saliency exceeds the mean over distractor pixels on the color subset.
  for (const auto& item : standard_suite(0)) {
    if (item.kind != PopOutKind::Color) continue;
    const DenseMap s = bms_saliency(item.stimulus.image, BmsConfig{});
    const Rgb d = item.spec.distractor.color;
    double target = 0, distract = 0;
    std::size_t nt = 0, nd = 0;
    for (std::size_t i = 0; i < s.area(); ++i) {
      const auto* px = &item.stimulus.image.pixels[3 * i];
      if (item.stimulus.target_mask[i] != 0.0) {
        target += s[i];
        ++nt;
      } else if (px[0] == d.r && px[1] == d.g && px[2] == d.b) {
        distract += s[i];
        ++nd;
      }
    }
    EXPECT_GT(target / nt, distract / nd) << item.id;
  }
}

TEST(CenterPrior, PeaksAtCenterAndIsSymmetric) {
  const DenseMap c = center_prior(224, 224);
  EXPECT_LT(c(0, 0), c(111, 111));
  const DenseMap odd = center_prior(9, 15);
  double best = -1;
  std::size_t at = 0;
  for (std::size_t i = 0; i < odd.area(); ++i) {
    if (odd[i] > best) {
      best = odd[i];
      at = i;
    }
  }
  EXPECT_EQ(at, 4u * 15u + 7u);
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t col = 0; col < 15; ++col) EXPECT_EQ(odd(r, col), odd(r, 14 - col));
  EXPECT_THROW(center_prior(0, 3), InvalidArgument);
}

TEST(RandomBaseline, SeededAndUniform) {
  EXPECT_EQ(random_map(Size{8, 8}, 3), random_map(Size{8, 8}, 3));
  EXPECT_NE(random_map(Size{8, 8}, 3), random_map(Size{8, 8}, 4));
  const DenseMap m = random_map(Size{8, 8}, 3);
  for (double v : m.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}
