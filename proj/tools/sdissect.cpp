// sdissect: command-line front end of the saliency dissection toolkit.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sdissect/commands.hpp"

namespace {

namespace fs = std::filesystem;
namespace cmd = sdissect::commands;
using nlohmann::json;

// Turns a per-command JSON config ({"top-k": 5, "layer": ["conv5-3"]}) into flags placed in
// front of the real arguments. Keys also given on the command line are dropped: flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::optional<std::string> config_path;
  std::set<std::string> given;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) continue;
    const std::string name = a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2);
    given.insert(name);
    if (name == "config") {
      if (a.find('=') != std::string::npos) {
        config_path = a.substr(a.find('=') + 1);
      } else if (i + 1 < args.size()) {
        config_path = args[i + 1];
      }
    }
  }
  if (!config_path) return args;
  const json doc = sdissect::read_json_file(*config_path);
  if (!doc.is_object()) throw sdissect::FormatError(*config_path + ": config must be a JSON object");
  std::vector<std::string> injected;
  for (const auto& [key, value] : doc.items()) {
    if (given.contains(key)) continue;
    auto push = [&](const json& v) {
      injected.push_back("--" + key);
      injected.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    };
    if (value.is_array()) {
      for (const auto& v : value) push(v);
    } else if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back("--" + key);
    } else {
      push(value);
    }
  }
  // args[0] is the subcommand; config flags go right after it.
  std::vector<std::string> out;
  if (!args.empty()) out.push_back(args.front());
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + (args.empty() ? 0 : 1), args.end());
  return out;
}

void emit_warnings(const sdissect::WarningLog& log, const std::string& log_path) {
  const std::string text = sdissect::warnings_jsonl(log);
  if (!log_path.empty()) {
    cmd::ensure_parent(log_path);
    sdissect::write_text_file(log_path, text);
  } else {
    std::cerr << text;
  }
}

void add_bms_flags(CLI::App* app, sdissect::BmsConfig& cfg, std::string& colorspace) {
  app->add_option("--threshold-step", cfg.threshold_step, "Boolean map threshold step on 0-255 channels")
      ->check(CLI::Range(1, 128));
  app->add_option("--opening-radius", cfg.opening_radius, "Morphological opening radius (pixels)");
  app->add_option("--blur-sigma", cfg.blur_sigma, "Gaussian blur sigma (pixels)");
  app->add_option("--both-polarities", cfg.use_both_polarities, "Also emit (channel <= t) maps");
  app->add_option("--colorspace", colorspace, "opponent or rgb")->check(CLI::IsMember({"opponent", "rgb"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dissect deep saliency models: activation-map association, decoder training, synthetic pop-out evaluation"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::size_t jobs = sdissect::default_jobs();
  std::string log_path;
  std::string config_path;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--jobs", jobs, "Worker threads (results do not depend on this)")->check(CLI::PositiveNumber);
    sub->add_option("--log", log_path, "Write warnings as JSON lines to this file (default: stderr)");
    sub->add_option("--config", config_path, "JSON file of flag values; explicit flags win");
  };

  // gen-stim
  cmd::GenStimOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-stim", "Write the 80-stimulus pop-out suite with masks and a suite manifest");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Seed for placement and jitter");
  common(gen_cmd);

  // dissect
  cmd::DissectOptions dis;
  std::string dis_md;
  auto* dis_cmd = app.add_subcommand("dissect", "Per-layer, per-category statistics of activation-map association");
  dis_cmd->add_option("--manifest", dis.manifest, "Dataset manifest JSON")->required();
  dis_cmd->add_option("--layer", dis.config.layers, "Layer to analyse (repeatable)")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  dis_cmd->add_option("--top-k", dis.config.top_k, "Number of best maps averaged")->check(CLI::PositiveNumber);
  dis_cmd->add_option("--threshold", dis.config.threshold, "Mean-NSS threshold for map counts");
  dis_cmd->add_option("--min-regions", dis.config.min_regions_per_category, "Minimum usable regions per reported category");
  dis_cmd->add_option("--out", dis.out_csv, "Output CSV")->required();
  dis_cmd->add_option("--markdown", dis_md, "Also write a Markdown table");
  common(dis_cmd);

  // train-decoder
  cmd::TrainDecoderOptions tr;
  std::string tr_resume;
  auto* tr_cmd = app.add_subcommand("train-decoder", "Train the 1x1 linear readout on fixed features with -NSS loss");
  tr_cmd->add_option("--manifest", tr.manifest, "Dataset manifest JSON")->required();
  tr_cmd->add_option("--layer", tr.layer, "Feature layer")->required();
  tr_cmd->add_option("--out", tr.out_weights, "Output weights (.npy; a .json sidecar is written next to it)")->required();
  tr_cmd->add_option("--lr", tr.train.learning_rate, "Learning rate");
  tr_cmd->add_option("--momentum", tr.train.momentum, "Momentum");
  tr_cmd->add_option("--epochs", tr.train.epochs, "Epochs to run")->check(CLI::PositiveNumber);
  tr_cmd->add_option("--batch-size", tr.train.batch_size, "Images per step")->check(CLI::PositiveNumber);
  tr_cmd->add_option("--seed", tr.train.seed, "Seed for initialization and shuffling");
  tr_cmd->add_option("--resume", tr_resume, "Continue from previously saved weights");
  common(tr_cmd);

  // predict
  cmd::PredictOptions pr;
  auto* pr_cmd = app.add_subcommand("predict", "Write decoder saliency predictions, one .npy per image");
  pr_cmd->add_option("--manifest", pr.manifest, "Dataset manifest JSON")->required();
  pr_cmd->add_option("--layer", pr.layer, "Feature layer")->required();
  pr_cmd->add_option("--weights", pr.weights, "Decoder weights (.npy)")->required();
  pr_cmd->add_option("--out", pr.out_dir, "Output directory")->required();
  pr_cmd->add_flag("--png", pr.heatmaps, "Also write grayscale heatmaps");
  common(pr_cmd);

  // eval-synthetic
  cmd::EvalSyntheticOptions ev;
  std::string ev_weights, ev_colorspace = "opponent";
  auto* ev_cmd = app.add_subcommand("eval-synthetic", "NMM of models on the pop-out suite");
  ev_cmd->add_option("--suite", ev.suite, "Suite manifest written by gen-stim")->required();
  ev_cmd->add_option("--model", ev.models, "bms, center-prior, random, decoder or preds:<dir> (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ev_cmd->add_option("--weights", ev_weights, "Decoder weights for --model decoder");
  ev_cmd->add_option("--layer", ev.layer, "Feature layer for --model decoder");
  ev_cmd->add_option("--layer-stats", ev.layer_stats, "Layer for the top-k mean NMM table (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ev_cmd->add_option("--top-k", ev.top_k, "Maps averaged in the layer table")->check(CLI::PositiveNumber);
  ev_cmd->add_option("--random-seeds", ev.random_seeds, "Random maps averaged per image")->check(CLI::PositiveNumber);
  ev_cmd->add_option("--seed", ev.seed, "Seed for the random baseline");
  ev_cmd->add_option("--out", ev.out_csv, "Per-image CSV (a _summary.csv is written next to it)")->required();
  add_bms_flags(ev_cmd, ev.bms, ev_colorspace);
  common(ev_cmd);

  // bms
  cmd::BmsOptions bm;
  std::string bm_png, bm_colorspace = "opponent";
  auto* bm_cmd = app.add_subcommand("bms", "Boolean Map Saliency of one image");
  bm_cmd->add_option("--image", bm.image, "Input PNG")->required();
  bm_cmd->add_option("--out", bm.out, "Output saliency map (.npy)")->required();
  bm_cmd->add_option("--png", bm_png, "Also write a heatmap PNG");
  add_bms_flags(bm_cmd, bm.config, bm_colorspace);
  common(bm_cmd);

  // relate
  cmd::RelateOptions rel;
  auto* rel_cmd = app.add_subcommand("relate", "Relate inner-representation saliency to output saliency");
  rel_cmd->add_option("--manifest", rel.manifest, "Dataset manifest JSON")->required();
  rel_cmd->add_option("--preds", rel.preds_dir, "Directory of <image_id>.npy predictions")->required();
  rel_cmd->add_option("--gts", rel.gts_dir, "Directory of <image_id>.npy ground-truth maps")->required();
  rel_cmd->add_option("--dissect-csv", rel.dissect_csv, "CSV written by dissect")->required();
  rel_cmd->add_option("--layer", rel.layer, "Layer of the dissection CSV to use");
  rel_cmd->add_option("--out", rel.out, "Output prefix (<out>.csv, <out>.json)")->required();
  common(rel_cmd);

  // report
  cmd::ReportOptions rep;
  auto* rep_cmd = app.add_subcommand("report", "Render result CSVs as Markdown tables");
  rep_cmd->add_option("inputs", rep.inputs, "CSV files")->required()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  rep_cmd->add_option("--out", rep.out, "Output Markdown file")->required();
  common(rep_cmd);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const sdissect::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  auto colorspace = [](const std::string& s) {
    return s == "rgb" ? sdissect::BmsColorspace::Rgb : sdissect::BmsColorspace::Opponent;
  };

  try {
    sdissect::WarningLog log;
    if (*gen_cmd) {
      log = cmd::gen_stim(gen);
    } else if (*dis_cmd) {
      dis.jobs = jobs;
      if (!dis_md.empty()) dis.markdown = dis_md;
      log = cmd::dissect(dis);
    } else if (*tr_cmd) {
      tr.jobs = jobs;
      if (!tr_resume.empty()) tr.resume = tr_resume;
      log = cmd::train_decoder(tr);
    } else if (*pr_cmd) {
      log = cmd::predict(pr);
    } else if (*ev_cmd) {
      ev.jobs = jobs;
      ev.bms.colorspace = colorspace(ev_colorspace);
      if (!ev_weights.empty()) ev.weights = ev_weights;
      log = cmd::eval_synthetic(ev);
    } else if (*bm_cmd) {
      bm.jobs = jobs;
      bm.config.colorspace = colorspace(bm_colorspace);
      if (!bm_png.empty()) bm.png = bm_png;
      log = cmd::bms(bm);
    } else if (*rel_cmd) {
      log = cmd::relate(rel);
    } else if (*rep_cmd) {
      log = cmd::report(rep);
    }
    emit_warnings(log, log_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
