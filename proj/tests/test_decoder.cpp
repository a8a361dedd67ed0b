#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace sdissect;
using namespace sdissect::testing;

namespace {

ActivationStack random_stack(std::mt19937_64& rng, std::size_t channels, Size native) {
  ActivationStack s{"x", "l", {}};
  for (std::size_t j = 0; j < channels; ++j) s.channels.push_back(random_map(rng, native));
  return s;
}

DecoderWeights random_weights(std::mt19937_64& rng, std::size_t channels) {
  DecoderWeights w = init_weights(channels, rng());
  w.b = std::uniform_real_distribution<double>(-1, 1)(rng);
  return w;
}

}  // namespace

TEST(Decoder, OneHotReadoutIsTheResizedChannel) {
  std::mt19937_64 rng(61);
  const ActivationStack f = random_stack(rng, 3, Size{4, 5});
  const DenseMap out = forward(f, one_hot(3, 1), Size{9, 13});
  EXPECT_EQ(out, resize_map(f.channels[1], Size{9, 13}));
}

TEST(Decoder, GradientMatchesFiniteDifferencesOnSmallFixture) {
  std::mt19937_64 rng(62);
  const ActivationStack f = random_stack(rng, 3, Size{4, 4});
  const DecoderWeights w = random_weights(rng, 3);
  const DenseMap fix = random_binary(rng, Size{4, 4}, 0.3);
  const LossGradient g = loss_gradient(f, w, fix, Size{4, 4});
  const auto [dw, db] = finite_difference_gradient(f, w, fix, 1e-4);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_LT(relative_error(g.dw[j], dw[j]), 1e-4);
  EXPECT_EQ(g.db, 0.0);
  EXPECT_NEAR(db, 0.0, 1e-9);
  EXPECT_NEAR(g.loss, nss_loss(f, w, fix, Size{4, 4}), 1e-12);
}

TEST(Decoder, GradientMatchesFiniteDifferencesThroughUpsampling) {
  std::mt19937_64 rng(63);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    const Size native = random_size(rng, 2, 8), image = random_size(rng, 2, 20);
    const ActivationStack f = random_stack(rng, c, native);
    const DecoderWeights w = random_weights(rng, c);
    const DenseMap fix = random_binary(rng, image, 0.2);
    LossGradient g;
    try {
      g = loss_gradient(f, w, fix, image);
    } catch (const ConstantMap&) {
      continue;
    }
    const auto [dw, db] = finite_difference_gradient(f, w, fix, 1e-4);
    for (std::size_t j = 0; j < c; ++j) EXPECT_LT(relative_error(g.dw[j], dw[j]), 1e-4) << "trial " << trial;
    EXPECT_EQ(g.db, 0.0);
  }
}

TEST(Decoder, GradientIsOrthogonalToTheWeights) {
  // The loss is invariant to scaling w (with b = 0), so dL/dw . w = 0.
  std::mt19937_64 rng(64);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
    const ActivationStack f = random_stack(rng, c, Size{5, 5});
    DecoderWeights w = init_weights(c, rng());
    const DenseMap fix = random_binary(rng, Size{11, 11});
    const LossGradient g = loss_gradient(f, w, fix, Size{11, 11});
    double dot = 0, norm = 0;
    for (std::size_t j = 0; j < c; ++j) {
      dot += g.dw[j] * w.w[j];
      norm += g.dw[j] * g.dw[j];
    }
    EXPECT_NEAR(dot, 0.0, 1e-10 * std::max(1.0, std::sqrt(norm)));
  }
}

TEST(Decoder, ErrorsOnBadInputs) {
  std::mt19937_64 rng(65);
  const ActivationStack f = random_stack(rng, 2, Size{3, 3});
  EXPECT_THROW(loss_gradient(f, init_weights(3, 0), DenseMap(Size{3, 3}, 1.0), Size{3, 3}), ShapeMismatch);
  EXPECT_THROW(loss_gradient(f, init_weights(2, 0), DenseMap(Size{3, 3}), Size{3, 3}), EmptyFixations);
  EXPECT_THROW(loss_gradient(f, DecoderWeights{{0.0, 0.0}, 1.0}, DenseMap(Size{3, 3}, 1.0), Size{3, 3}),
               ConstantMap);
  EXPECT_THROW(init_weights(0, 1), InvalidArgument);
}

TEST(Decoder, InitWeightsAreBoundedAndSeeded) {
  for (std::size_t c : {1u, 4u, 512u}) {
    const DecoderWeights w = init_weights(c, 5);
    EXPECT_EQ(w, init_weights(c, 5));
    EXPECT_NE(w, init_weights(c, 6));
    EXPECT_EQ(w.b, 0.0);
    for (double v : w.w) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(static_cast<double>(c)));
  }
}

TEST(Training, ZeroLearningRateKeepsWeightsAndFlatLoss) {
  std::mt19937_64 rng(66);
  const auto data = planted_fixture(rng, 6, 4, 0);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 5;
  const TrainResult r = train(data, cfg);
  EXPECT_EQ(r.state.weights, init_weights(4, cfg.seed));
  ASSERT_EQ(r.loss_curve.size(), 5u);
  for (double l : r.loss_curve) EXPECT_EQ(l, r.loss_curve.front());
}

TEST(Training, IsDeterministicAndIndependentOfJobs) {
  std::mt19937_64 rng(67);
  const auto data = planted_fixture(rng, 10, 5, 2);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 3;
  const TrainResult a = train(data, cfg, std::nullopt, nullptr, 1);
  const TrainResult b = train(data, cfg, std::nullopt, nullptr, 4);
  EXPECT_EQ(a.state.weights, b.state.weights);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(Training, ResumingMatchesAnUninterruptedRun) {
  std::mt19937_64 rng(68);
  const auto data = planted_fixture(rng, 9, 4, 1);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 4;
  const TrainResult full = train(data, cfg);
  cfg.epochs = 3;
  const TrainResult first = train(data, cfg);
  const fs::path dir = fresh_dir("resume");
  save_decoder(dir / "w.npy", first.state, nlohmann::json::object());
  cfg.epochs = 5;
  const TrainResult rest = train(data, cfg, load_decoder(dir / "w.npy"));
  EXPECT_EQ(rest.state.weights, full.state.weights);
  EXPECT_EQ(rest.state.velocity, full.state.velocity);
  EXPECT_EQ(rest.state.epochs_done, 8u);
  for (std::size_t e = 0; e < 5; ++e) EXPECT_EQ(rest.loss_curve[e], full.loss_curve[3 + e]);
}

TEST(Training, PlantedChannelIsRecovered) {
  std::mt19937_64 rng(69);
  const auto data = planted_fixture(rng, 24, 8, 3);
  const double oracle = mean_nss(data, one_hot(8, 3));
  const TrainResult r = train(data, TrainConfig{});
  EXPECT_GE(mean_nss(data, r.state.weights), 0.95 * oracle);
  EXPECT_GE(mean_nss(data, r.state.weights), mean_nss(data, init_weights(8, 0)));
}

TEST(Training, DegenerateImagesAndBatchesAreSkipped) {
  std::mt19937_64 rng(70);
  auto data = planted_fixture(rng, 4, 2, 0);
  for (auto& ch : data[1].features.channels) ch = DenseMap(ch.size(), 1.0);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 1;
  WarningLog log;
  const TrainResult r = train(data, cfg, std::nullopt, &log);
  EXPECT_EQ(r.skipped_images, 2u);
  EXPECT_EQ(r.skipped_batches, 2u);
  EXPECT_FALSE(log.empty());

  for (auto& s : data)
    for (auto& ch : s.features.channels) ch = DenseMap(ch.size(), 1.0);
  EXPECT_THROW(train(data, cfg), ConstantMap);
}

TEST(Training, ConfigValidation) {
  std::mt19937_64 rng(71);
  const auto data = planted_fixture(rng, 2, 2, 0);
  TrainConfig cfg;
  cfg.momentum = 1.0;
  EXPECT_THROW(train(data, cfg), InvalidArgument);
  cfg = TrainConfig{};
  cfg.learning_rate = -1;
  EXPECT_THROW(train(data, cfg), InvalidArgument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(train(data, cfg), InvalidArgument);
  EXPECT_THROW(train(std::span<const TrainingSample>{}, TrainConfig{}), InvalidArgument);
}

TEST(DecoderFile, WeightsTensorHasShapeOneByCPlusOne) {
  const fs::path dir = fresh_dir("decoder_file");
  TrainState st;
  st.weights = DecoderWeights{{0.25, -0.5, 1.0 / 3.0}, 0.0};
  st.velocity = {0, 0, 0};
  save_decoder(dir / "w.npy", st, {{"layer", "conv5-3"}});
  const RawTensor raw = read_npy(dir / "w.npy");
  EXPECT_EQ(raw.shape, (std::vector<std::size_t>{1, 4}));
  EXPECT_EQ(load_decoder(dir / "w.npy").weights, st.weights);
  // Without the sidecar the float32 tensor is used.
  fs::remove(dir / "w.json");
  const TrainState f32 = load_decoder(dir / "w.npy");
  EXPECT_EQ(f32.weights.w[2], static_cast<double>(static_cast<float>(1.0 / 3.0)));
}
