#pragma once

// The command implementations behind the sdissect executable. Each command reads its inputs,
// writes its outputs and returns the warnings it collected; errors are thrown.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdissect/bms.hpp"
#include "sdissect/dataset.hpp"
#include "sdissect/decoder.hpp"
#include "sdissect/diagnostics.hpp"
#include "sdissect/dissection.hpp"
#include "sdissect/metrics.hpp"
#include "sdissect/npy.hpp"
#include "sdissect/png_io.hpp"
#include "sdissect/relation.hpp"
#include "sdissect/report.hpp"
#include "sdissect/stimgen.hpp"

namespace sdissect::commands {

namespace fs = std::filesystem;
using nlohmann::json;

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

inline void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_directory(file.parent_path());
}

inline void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw IoError(what + " " + p.string() + " does not exist");
}

// Sibling path: out.csv + "_summary" -> out_summary.csv
inline fs::path with_suffix(const fs::path& p, const std::string& suffix, const std::string& ext = "") {
  fs::path out = p.parent_path() / (p.stem().string() + suffix + (ext.empty() ? p.extension().string() : ext));
  return out;
}

// ---------------------------------------------------------------------------------------------
// gen-stim

struct GenStimOptions {
  fs::path out_dir;
  std::uint64_t seed = 0;
};

inline WarningLog gen_stim(const GenStimOptions& opt) {
  ensure_directory(opt.out_dir);
  const auto suite = standard_suite(opt.seed);
  json entries = json::array();
  for (const auto& item : suite) {
    const std::string image = item.id + ".png";
    const std::string mask = item.id + "_mask.png";
    const std::string spec = item.id + ".json";
    write_rgb_png(item.stimulus.image, opt.out_dir / image);
    write_mask_png(item.stimulus.target_mask, opt.out_dir / mask);
    json spec_doc = to_json(item.spec);
    spec_doc["id"] = item.id;
    spec_doc["category"] = std::string(name(item.kind));
    write_json_file(opt.out_dir / spec, spec_doc);
    entries.push_back({{"id", item.id},
                       {"category", std::string(name(item.kind))},
                       {"image", image},
                       {"mask", mask},
                       {"spec", spec}});
  }
  write_json_file(opt.out_dir / "suite.json", {{"seed", opt.seed}, {"stimuli", entries}});
  return {};
}

// ---------------------------------------------------------------------------------------------
// dissect

struct DissectOptions {
  fs::path manifest;
  DissectionConfig config;
  fs::path out_csv;
  std::optional<fs::path> markdown;
  std::size_t jobs = 1;
};

inline void require_layers(const DatasetManifest& m, const std::vector<std::string>& layers) {
  for (const auto& e : m) {
    for (const auto& l : layers) {
      if (!e.activations.contains(l)) {
        throw InvalidArgument("layer \"" + l + "\" missing from the activation dump of image \"" + e.image_id + "\"");
      }
    }
  }
}

inline WarningLog dissect(const DissectOptions& opt) {
  opt.config.validate();
  const auto manifest = load_manifest(opt.manifest);
  if (manifest.empty()) throw InvalidArgument("dissect: empty manifest");
  require_layers(manifest, opt.config.layers);
  WarningLog log;
  const auto stats = category_stats(manifest, opt.config, &log, opt.jobs);
  ensure_parent(opt.out_csv);
  write_text_file(opt.out_csv, dissection_csv(stats));
  if (opt.markdown) {
    ensure_parent(*opt.markdown);
    write_text_file(*opt.markdown, dissection_markdown(stats));
  }
  return log;
}

// ---------------------------------------------------------------------------------------------
// train-decoder / predict

inline std::vector<TrainingSample> load_training_set(const DatasetManifest& manifest, const std::string& layer) {
  std::vector<TrainingSample> out;
  out.reserve(manifest.size());
  for (const auto& e : manifest) {
    TrainingSample s;
    s.features = load_activations(e, layer);
    s.fixations = rasterize_fixations(load_fixations(e.fixations), e.image_size);
    out.push_back(std::move(s));
  }
  return out;
}

struct TrainDecoderOptions {
  fs::path manifest;
  std::string layer;
  TrainConfig train;
  fs::path out_weights;
  std::optional<fs::path> resume;
  std::size_t jobs = 1;
};

inline WarningLog train_decoder(const TrainDecoderOptions& opt) {
  opt.train.validate();
  const auto manifest = load_manifest(opt.manifest);
  if (manifest.empty()) throw InvalidArgument("train-decoder: empty manifest");
  require_layers(manifest, {opt.layer});
  std::optional<TrainState> resume;
  std::vector<double> previous_curve;
  if (opt.resume) {
    require_exists(*opt.resume, "resume weights");
    resume = load_decoder(*opt.resume);
    fs::path meta_path = *opt.resume;
    meta_path.replace_extension(".json");
    if (fs::exists(meta_path)) {
      const auto meta = read_json_file(meta_path);
      if (meta.contains("layer") && meta["layer"].get<std::string>() != opt.layer) {
        throw InvalidArgument("resume weights were trained on layer \"" + meta["layer"].get<std::string>() +
                              "\", not \"" + opt.layer + "\"");
      }
      previous_curve = meta.value("loss_curve", std::vector<double>{});
    }
  }
  const auto data = load_training_set(manifest, opt.layer);
  WarningLog log;
  const auto result = train(data, opt.train, resume, &log, opt.jobs);

  std::vector<double> curve = previous_curve;
  curve.insert(curve.end(), result.loss_curve.begin(), result.loss_curve.end());
  json meta = {{"layer", opt.layer},
               {"config",
                {{"learning_rate", opt.train.learning_rate},
                 {"momentum", opt.train.momentum},
                 {"epochs", opt.train.epochs},
                 {"seed", opt.train.seed},
                 {"batch_size", opt.train.batch_size}}},
               {"final_loss", result.loss_curve.back()},
               {"training_nss", mean_nss(data, result.state.weights)},
               {"loss_curve", curve},
               {"skipped_batches", result.skipped_batches},
               {"skipped_images", result.skipped_images}};
  ensure_parent(opt.out_weights);
  save_decoder(opt.out_weights, result.state, meta);
  std::string loss_csv = "epoch,loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) loss_csv += std::to_string(e) + "," + format_real(curve[e]) + "\n";
  write_text_file(with_suffix(opt.out_weights, "_loss", ".csv"), loss_csv);
  return log;
}

struct PredictOptions {
  fs::path manifest;
  std::string layer;
  fs::path weights;
  fs::path out_dir;
  bool heatmaps = false;
};

inline WarningLog predict(const PredictOptions& opt) {
  const auto manifest = load_manifest(opt.manifest);
  require_layers(manifest, {opt.layer});
  require_exists(opt.weights, "weights");
  const auto state = load_decoder(opt.weights);
  ensure_directory(opt.out_dir);
  WarningLog log;
  for (const auto& e : manifest) {
    const DenseMap pred = forward(load_activations(e, opt.layer), state.weights, e.image_size);
    save_tensor(pred, opt.out_dir / (e.image_id + ".npy"));
    if (opt.heatmaps) write_heatmap_png(pred, opt.out_dir / (e.image_id + ".png"));
  }
  return log;
}

// ---------------------------------------------------------------------------------------------
// eval-synthetic

struct SuiteEntry {
  std::string id;
  std::string category;
  fs::path image;
  fs::path mask;
  std::map<std::string, fs::path> activations;
};

// Suite manifest written by gen-stim: {"seed": s, "stimuli": [{"id", "category", "image", "mask",
// "spec", optional "activations": {layer: npy}}]}.
inline std::vector<SuiteEntry> load_suite(const fs::path& path) {
  const json doc = read_json_file(path);
  if (!doc.contains("stimuli") || !doc["stimuli"].is_array()) {
    throw FormatError(path.string() + ": suite manifest needs a \"stimuli\" array");
  }
  std::vector<SuiteEntry> out;
  for (const auto& s : doc["stimuli"]) {
    try {
      SuiteEntry e;
      e.id = s.at("id").get<std::string>();
      e.category = s.value("category", std::string("unknown"));
      e.image = resolve_path(path, s.at("image").get<std::string>());
      e.mask = resolve_path(path, s.at("mask").get<std::string>());
      require_exists(e.image, "stimulus image");
      require_exists(e.mask, "stimulus mask");
      if (s.contains("activations")) {
        for (const auto& [layer, file] : s["activations"].items()) {
          e.activations[layer] = resolve_path(path, file.get<std::string>());
          require_exists(e.activations[layer], "activation dump");
        }
      }
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw FormatError(path.string() + ": bad stimulus entry: " + ex.what());
    }
  }
  return out;
}

struct EvalSyntheticOptions {
  fs::path suite;
  // "bms", "center-prior", "random", "decoder" or "preds:<dir>" (one <id>.npy per stimulus).
  std::vector<std::string> models{"bms", "center-prior", "random"};
  std::optional<fs::path> weights;
  std::string layer;
  std::vector<std::string> layer_stats;  // layers for the top-k mean NMM table
  std::size_t top_k = 10;
  std::size_t random_seeds = 10;
  std::uint64_t seed = 0;
  BmsConfig bms;
  fs::path out_csv;
  std::size_t jobs = 1;
};

inline WarningLog eval_synthetic(const EvalSyntheticOptions& opt) {
  const auto suite = load_suite(opt.suite);
  if (suite.empty()) throw InvalidArgument("eval-synthetic: empty suite");
  std::optional<TrainState> decoder;
  for (const auto& m : opt.models) {
    if (m == "decoder") {
      if (!opt.weights) throw InvalidArgument("model \"decoder\" needs --weights");
      if (opt.layer.empty()) throw InvalidArgument("model \"decoder\" needs --layer");
      require_exists(*opt.weights, "weights");
      decoder = load_decoder(*opt.weights);
      for (const auto& e : suite) {
        if (!e.activations.contains(opt.layer)) {
          throw InvalidArgument("layer \"" + opt.layer + "\" missing from the activation dump of stimulus \"" + e.id + "\"");
        }
      }
    } else if (m.rfind("preds:", 0) == 0) {
      require_exists(m.substr(6), "prediction directory");
    } else if (m != "bms" && m != "center-prior" && m != "random") {
      throw InvalidArgument("unknown model \"" + m + "\" (bms, center-prior, random, decoder, preds:<dir>)");
    }
  }

  // nmm[model][image], empty when the prediction was degenerate.
  std::vector<std::vector<std::optional<double>>> nmm(opt.models.size(),
                                                      std::vector<std::optional<double>>(suite.size()));
  std::vector<WarningLog> logs(suite.size());
  parallel_for(suite.size(), opt.jobs, [&](std::size_t i) {
    const auto& e = suite[i];
    const DenseMap mask = read_mask_png(e.mask);
    for (std::size_t m = 0; m < opt.models.size(); ++m) {
      const std::string& model = opt.models[m];
      try {
        if (model == "bms") {
          nmm[m][i] = sdissect::nmm(bms_saliency(read_rgb_png(e.image), opt.bms, &logs[i]), mask);
        } else if (model == "center-prior") {
          nmm[m][i] = sdissect::nmm(center_prior(mask.height(), mask.width()), mask);
        } else if (model == "random") {
          double sum = 0.0;
          for (std::size_t k = 0; k < opt.random_seeds; ++k) {
            sum += sdissect::nmm(random_map(mask.size(), opt.seed * 1000003 + i * 1009 + k), mask);
          }
          nmm[m][i] = sum / static_cast<double>(opt.random_seeds);
        } else if (model == "decoder") {
          const auto stack = load_stack(e.activations.at(opt.layer), e.id, opt.layer);
          nmm[m][i] = sdissect::nmm(forward(stack, decoder->weights, mask.size()), mask);
        } else {
          const fs::path file = fs::path(model.substr(6)) / (e.id + ".npy");
          if (!fs::exists(file)) throw IoError("missing prediction for stimulus \"" + e.id + "\": " + file.string());
          DenseMap pred = load_map(file);
          if (pred.size() != mask.size()) pred = resize_map(pred, mask.size());
          nmm[m][i] = sdissect::nmm(pred, mask);
        }
      } catch (const ConstantMap&) {
        logs[i].add("image_skipped", model + "/" + e.id + ": constant prediction");
      }
    }
  });
  WarningLog log;
  for (const auto& l : logs) log.append(l);

  std::string rows = "image_id,category,model,nmm\n";
  for (std::size_t i = 0; i < suite.size(); ++i) {
    for (std::size_t m = 0; m < opt.models.size(); ++m) {
      if (nmm[m][i]) rows += suite[i].id + "," + suite[i].category + "," + opt.models[m] + "," + format_real(*nmm[m][i]) + "\n";
    }
  }
  std::vector<std::string> subsets{"all"};
  for (const auto& e : suite) {
    if (std::find(subsets.begin(), subsets.end(), e.category) == subsets.end()) subsets.push_back(e.category);
  }
  std::string summary = "model,subset,mean_nmm,images\n";
  for (std::size_t m = 0; m < opt.models.size(); ++m) {
    for (const auto& subset : subsets) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < suite.size(); ++i) {
        if ((subset == "all" || suite[i].category == subset) && nmm[m][i]) {
          sum += *nmm[m][i];
          ++n;
        }
      }
      if (n > 0) summary += opt.models[m] + "," + subset + "," + format_real(sum / static_cast<double>(n)) + "," + std::to_string(n) + "\n";
    }
  }
  ensure_parent(opt.out_csv);
  write_text_file(opt.out_csv, rows);
  write_text_file(with_suffix(opt.out_csv, "_summary"), summary);

  if (!opt.layer_stats.empty()) {
    std::string table = "layer,top_k_mean,images,skipped_pairs\n";
    for (const auto& layer : opt.layer_stats) {
      SyntheticLayerAccumulator acc(layer);
      for (const auto& e : suite) {
        auto it = e.activations.find(layer);
        if (it == e.activations.end()) {
          throw InvalidArgument("layer \"" + layer + "\" missing from the activation dump of stimulus \"" + e.id + "\"");
        }
        acc.add(load_stack(it->second, e.id, layer), read_mask_png(e.mask));
      }
      const auto s = acc.finish(opt.top_k);
      if (!s.top_k_mean) log.add("no_usable_maps", layer + ": every map is constant");
      table += layer + "," + (s.top_k_mean ? format_real(*s.top_k_mean) : std::string()) + "," +
               std::to_string(s.images) + "," + std::to_string(s.skipped_pairs) + "\n";
      if (s.skipped_pairs > 0) log.add("maps_skipped", layer + ": " + std::to_string(s.skipped_pairs) + " constant (image, map) pairs");
    }
    write_text_file(with_suffix(opt.out_csv, "_layers"), table);
  }
  return log;
}

// ---------------------------------------------------------------------------------------------
// bms

struct BmsOptions {
  fs::path image;
  fs::path out;  // .npy
  std::optional<fs::path> png;
  BmsConfig config;
  std::size_t jobs = 1;
};

inline WarningLog bms(const BmsOptions& opt) {
  require_exists(opt.image, "image");
  WarningLog log;
  const DenseMap sal = bms_saliency(read_rgb_png(opt.image), opt.config, &log, opt.jobs);
  ensure_parent(opt.out);
  save_tensor(sal, opt.out);
  if (opt.png) {
    ensure_parent(*opt.png);
    write_heatmap_png(sal, *opt.png);
  }
  return log;
}

// ---------------------------------------------------------------------------------------------
// relate

struct RelateOptions {
  fs::path manifest;
  fs::path preds_dir;
  fs::path gts_dir;
  fs::path dissect_csv;
  std::string layer;  // empty: the CSV must hold exactly one layer
  fs::path out;       // writes <out>.csv and <out>.json
};

inline DenseMap load_image_map(const fs::path& dir, const std::string& image_id, Size size, const char* what) {
  const fs::path file = dir / (image_id + ".npy");
  if (!fs::exists(file)) {
    throw IoError(std::string("missing ") + what + " for image \"" + image_id + "\": " + file.string());
  }
  DenseMap m = load_map(file);
  return m.size() == size ? m : resize_map(m, size);
}

inline WarningLog relate(const RelateOptions& opt) {
  require_exists(opt.dissect_csv, "dissection CSV");
  require_exists(opt.preds_dir, "prediction directory");
  require_exists(opt.gts_dir, "ground-truth directory");
  const auto all_stats = read_dissection_csv(opt.dissect_csv);
  std::string layer = opt.layer;
  if (layer.empty()) {
    std::set<std::string> layers;
    for (const auto& s : all_stats) layers.insert(s.layer);
    if (layers.size() != 1) throw InvalidArgument("dissection CSV holds " + std::to_string(layers.size()) + " layers; pick one with --layer");
    layer = *layers.begin();
  }
  std::vector<CategoryStats> stats;
  for (const auto& s : all_stats) {
    if (s.layer == layer) stats.push_back(s);
  }
  if (stats.empty()) throw InvalidArgument("layer \"" + layer + "\" not found in " + opt.dissect_csv.string());

  const auto manifest = load_manifest(opt.manifest);
  for (const auto& e : manifest) {
    if (!fs::exists(opt.preds_dir / (e.image_id + ".npy"))) {
      throw IoError("missing prediction for image \"" + e.image_id + "\"");
    }
    if (!fs::exists(opt.gts_dir / (e.image_id + ".npy"))) {
      throw IoError("missing ground truth for image \"" + e.image_id + "\"");
    }
  }
  RelationAccumulator acc;
  for (const auto& e : manifest) {
    ImageRecord rec = load_record(e);
    RelationImage img;
    img.image_id = e.image_id;
    img.prediction = load_image_map(opt.preds_dir, e.image_id, e.image_size, "prediction");
    img.ground_truth = load_image_map(opt.gts_dir, e.image_id, e.image_size, "ground truth");
    img.fixations = std::move(rec.fixations);
    img.regions = std::move(rec.regions);
    acc.add(img);
  }
  const auto relations = relate_categories(acc, stats);
  WarningLog log;
  json summary = {{"layer", layer}, {"categories", relations.size()}};
  try {
    summary["spearman"] = inner_output_correlation(stats, relations);
  } catch (const InvalidArgument& e) {
    summary["spearman"] = nullptr;
    log.add("spearman_undefined", e.what());
  }
  fs::path csv = opt.out;
  csv += ".csv";
  fs::path js = opt.out;
  js += ".json";
  ensure_parent(csv);
  write_text_file(csv, relation_csv(relations));
  write_json_file(js, summary);
  return log;
}

// ---------------------------------------------------------------------------------------------
// report

struct ReportOptions {
  std::vector<fs::path> inputs;
  fs::path out;
};

inline WarningLog report(const ReportOptions& opt) {
  if (opt.inputs.empty()) throw InvalidArgument("report: no input CSV files");
  std::string md;
  for (const auto& in : opt.inputs) {
    require_exists(in, "input");
    const CsvTable t = read_csv(in);
    md += "## " + in.filename().string() + "\n\n";
    std::string header;
    for (std::size_t i = 0; i < t.header.size(); ++i) header += (i ? "," : "") + t.header[i];
    md += header == kDissectionHeader ? dissection_markdown(read_dissection_csv(in)) : csv_markdown(t);
    md += "\n";
  }
  ensure_parent(opt.out);
  write_text_file(opt.out, md);
  return {};
}

}  // namespace sdissect::commands
