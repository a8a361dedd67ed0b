#pragma once

// Linear saliency readout over a frozen feature stack: a 1x1 convolution followed by
// bilinear upsampling, trained to maximize NSS.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdissect/dataset.hpp"
#include "sdissect/diagnostics.hpp"
#include "sdissect/metrics.hpp"
#include "sdissect/npy.hpp"
#include "sdissect/parallel.hpp"
#include "sdissect/types.hpp"

namespace sdissect {

struct DecoderWeights {
  std::vector<double> w;
  double b = 0.0;

  std::size_t channels() const { return w.size(); }
  friend bool operator==(const DecoderWeights&, const DecoderWeights&) = default;
};

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  std::size_t batch_size = 8;

  void validate() const {
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
      throw InvalidArgument("learning_rate must be a finite non-negative number");
    }
    if (!(momentum >= 0 && momentum < 1)) throw InvalidArgument("momentum must lie in [0, 1)");
    if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  }
};

inline DecoderWeights init_weights(std::size_t channels, std::uint64_t seed) {
  if (channels < 1) throw InvalidArgument("init_weights: need at least one channel");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  std::uniform_real_distribution<double> dist(-bound, bound);
  DecoderWeights out;
  out.w.resize(channels);
  for (auto& v : out.w) v = dist(rng);
  return out;
}

// Prediction at native feature resolution: sum_j w_j f_j + b.
inline DenseMap readout(const ActivationStack& features, const DecoderWeights& weights) {
  features.validate();
  if (features.channel_count() != weights.channels()) {
    throw ShapeMismatch("decoder has " + std::to_string(weights.channels()) + " weights, features have " +
                        std::to_string(features.channel_count()) + " channels");
  }
  DenseMap out(features.native_size(), weights.b);
  for (std::size_t j = 0; j < features.channel_count(); ++j) {
    const double wj = weights.w[j];
    const auto& ch = features.channels[j];
    for (std::size_t i = 0; i < out.area(); ++i) out[i] += wj * ch[i];
  }
  return out;
}

inline DenseMap forward(const ActivationStack& features, const DecoderWeights& weights, Size image_size) {
  return resize_map(readout(features, weights), image_size);
}

inline double nss_loss(const ActivationStack& features, const DecoderWeights& weights,
                       const DenseMap& fixations, Size image_size) {
  return -nss(forward(features, weights, image_size), fixations);
}

struct LossGradient {
  double loss = 0.0;
  std::vector<double> dw;
  double db = 0.0;  // always exactly zero: a constant shift cancels in the z-normalization
};

// Gradient of -NSS with respect to the readout weights.
//
// With z = (p - mean) / std over the N output cells and F the K fixated cells,
//   dNSS/dp_n = (1[n in F] / K - 1/N - NSS * z_n / N) / std,
// which is pulled back through the (linear) resize by its transpose and then through the
// 1x1 readout. Summed over n, the expression vanishes identically, hence db = 0.
inline LossGradient loss_gradient(const ActivationStack& features, const DecoderWeights& weights,
                                  const DenseMap& fixations, Size image_size) {
  if (fixations.size() != image_size) {
    throw ShapeMismatch("loss_gradient: fixations are " + to_string(fixations.size()) + ", image is " +
                        to_string(image_size));
  }
  const auto cells = nonzero_cells(fixations);
  if (cells.empty()) throw EmptyFixations("loss_gradient: fixation map has no fixated cell");
  const BilinearResize resize(features.native_size(), image_size);
  const NormalizedMap z = znorm(resize.apply(readout(features, weights)));
  const double score = mean_over(z, cells);

  const double n = static_cast<double>(image_size.area());
  const double k = static_cast<double>(cells.size());
  const double inv_std = 1.0 / z.source_std();
  DenseMap grad_out(image_size);
  for (std::size_t i = 0; i < grad_out.area(); ++i) {
    grad_out[i] = -inv_std * (-1.0 / n - score * z[i] / n);
  }
  for (auto i : cells) grad_out[i] -= inv_std / k;
  const DenseMap grad_native = resize.transpose(grad_out);

  LossGradient g;
  g.loss = -score;
  g.dw.assign(features.channel_count(), 0.0);
  for (std::size_t j = 0; j < features.channel_count(); ++j) {
    const auto& ch = features.channels[j];
    double acc = 0.0;
    for (std::size_t i = 0; i < grad_native.area(); ++i) acc += ch[i] * grad_native[i];
    g.dw[j] = acc;
  }
  return g;
}

struct TrainingSample {
  ActivationStack features;
  DenseMap fixations;  // binary grid at the image size
};

// Optimizer state; enough to resume a run and continue it bit-identically.
struct TrainState {
  DecoderWeights weights;
  std::vector<double> velocity;
  std::size_t epochs_done = 0;
};

struct TrainResult {
  TrainState state;
  std::vector<double> loss_curve;  // mean loss over usable images, one entry per epoch
  std::size_t skipped_batches = 0;
  std::size_t skipped_images = 0;
};

// Image order for one epoch; a pure function of (seed, absolute epoch index).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Mini-batch SGD with momentum on the mean per-image -NSS. Images whose prediction is
// constant are skipped; a batch with no usable image is skipped as a whole.
inline TrainResult train(std::span<const TrainingSample> dataset, const TrainConfig& cfg,
                         std::optional<TrainState> resume = std::nullopt, WarningLog* log = nullptr,
                         std::size_t jobs = 1) {
  cfg.validate();
  if (dataset.empty()) throw InvalidArgument("train: empty dataset");
  const std::size_t channels = dataset.front().features.channel_count();
  for (const auto& s : dataset) {
    if (s.features.channel_count() != channels) throw ShapeMismatch("train: feature stacks differ in channel count");
  }

  TrainResult result;
  if (resume) {
    result.state = std::move(*resume);
    if (result.state.weights.channels() != channels) {
      throw ShapeMismatch("train: resumed weights have " + std::to_string(result.state.weights.channels()) +
                          " channels, features have " + std::to_string(channels));
    }
  } else {
    result.state.weights = init_weights(channels, cfg.seed);
  }
  result.state.velocity.resize(channels, 0.0);
  auto& w = result.state.weights.w;
  auto& v = result.state.velocity;

  std::size_t usable_batches = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::size_t epoch = result.state.epochs_done;
    const auto order = epoch_order(dataset.size(), cfg.seed, epoch);
    double epoch_loss = 0.0;
    std::size_t epoch_images = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<std::optional<LossGradient>> grads(n);
      parallel_for(n, jobs, [&](std::size_t t) {
        const auto& s = dataset[order[start + t]];
        try {
          grads[t] = loss_gradient(s.features, result.state.weights, s.fixations, s.fixations.size());
        } catch (const ConstantMap&) {
        }
      });
      std::vector<double> mean_dw(channels, 0.0);
      std::size_t used = 0;
      for (std::size_t t = 0; t < n; ++t) {
        if (!grads[t]) {
          ++result.skipped_images;
          if (log) log->add("image_skipped", "epoch " + std::to_string(epoch) + ": constant prediction for image #" +
                                                 std::to_string(order[start + t]));
          continue;
        }
        ++used;
        epoch_loss += grads[t]->loss;
        for (std::size_t j = 0; j < channels; ++j) mean_dw[j] += grads[t]->dw[j];
      }
      if (used == 0) {
        ++result.skipped_batches;
        if (log) log->add("batch_skipped", "epoch " + std::to_string(epoch) + ": every prediction in the batch is constant");
        continue;
      }
      ++usable_batches;
      epoch_images += used;
      for (std::size_t j = 0; j < channels; ++j) {
        v[j] = cfg.momentum * v[j] - cfg.learning_rate * (mean_dw[j] / static_cast<double>(used));
        w[j] += v[j];
      }
    }
    result.loss_curve.push_back(epoch_images > 0 ? epoch_loss / static_cast<double>(epoch_images)
                                                 : std::numeric_limits<double>::quiet_NaN());
    ++result.state.epochs_done;
  }
  if (usable_batches == 0) throw ConstantMap("train: every batch was degenerate");
  return result;
}

// Mean NSS of the decoder over a dataset, skipping constant predictions.
inline double mean_nss(std::span<const TrainingSample> dataset, const DecoderWeights& weights) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : dataset) {
    try {
      sum += nss(forward(s.features, weights, s.fixations.size()), s.fixations);
      ++n;
    } catch (const ConstantMap&) {
    }
  }
  if (n == 0) throw ConstantMap("mean_nss: every prediction is constant");
  return sum / static_cast<double>(n);
}

// Weights file: float32 tensor of shape (1, C + 1) holding w then b. The JSON sidecar keeps
// the exact double values and optimizer state so training can resume bit-identically.
inline void save_decoder(const std::filesystem::path& npy_path, const TrainState& state, nlohmann::json meta) {
  std::vector<double> flat = state.weights.w;
  flat.push_back(state.weights.b);
  write_npy(npy_path, {1, flat.size()}, flat);
  meta["channels"] = state.weights.channels();
  meta["weights"] = state.weights.w;
  meta["bias"] = state.weights.b;
  meta["velocity"] = state.velocity;
  meta["epochs_done"] = state.epochs_done;
  std::filesystem::path json_path = npy_path;
  json_path.replace_extension(".json");
  write_json_file(json_path, meta);
}

inline TrainState load_decoder(const std::filesystem::path& npy_path) {
  RawTensor raw = read_npy(npy_path);
  if (raw.shape.size() != 2 || raw.shape[0] != 1 || raw.shape[1] < 2) {
    throw FormatError(npy_path.string() + ": decoder weights must have shape (1, C + 1)");
  }
  TrainState state;
  state.weights.w.assign(raw.values.begin(), raw.values.end() - 1);
  state.weights.b = raw.values.back();
  std::filesystem::path json_path = npy_path;
  json_path.replace_extension(".json");
  if (std::filesystem::exists(json_path)) {
    const auto meta = read_json_file(json_path);
    if (meta.contains("weights")) {
      auto exact = meta["weights"].get<std::vector<double>>();
      if (exact.size() != state.weights.w.size()) {
        throw FormatError(json_path.string() + ": weight count disagrees with " + npy_path.string());
      }
      for (std::size_t j = 0; j < exact.size(); ++j) {
        if (static_cast<float>(exact[j]) != static_cast<float>(state.weights.w[j])) {
          throw FormatError(json_path.string() + ": weights disagree with " + npy_path.string());
        }
      }
      state.weights.w = std::move(exact);
      state.weights.b = meta.value("bias", state.weights.b);
    }
    state.velocity = meta.value("velocity", std::vector<double>{});
    state.epochs_done = meta.value("epochs_done", std::size_t{0});
  }
  state.velocity.resize(state.weights.channels(), 0.0);
  return state;
}

}  // namespace sdissect
