#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdissect/error.hpp"
#include "sdissect/npy.hpp"
#include "sdissect/png_io.hpp"
#include "sdissect/types.hpp"

namespace sdissect {

namespace fs = std::filesystem;
using nlohmann::json;

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline void write_json_file(const fs::path& path, const json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

// Relative paths inside a document resolve against the document's directory.
inline fs::path resolve_path(const fs::path& base_file, const std::string& ref) {
  fs::path p(ref);
  return p.is_absolute() ? p : base_file.parent_path() / p;
}

namespace dataset_detail {

template <typename T>
T field(const json& doc, const char* key, const fs::path& where) {
  if (!doc.is_object() || !doc.contains(key)) {
    throw FormatError(where.string() + ": missing field \"" + key + "\"");
  }
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where.string() + ": bad field \"" + key + "\": " + e.what());
  }
}

inline Size size_field(const json& doc, const char* key, const fs::path& where) {
  auto v = field<std::vector<long long>>(doc, key, where);
  if (v.size() != 2 || v[0] < 1 || v[1] < 1) {
    throw FormatError(where.string() + ": \"" + key + "\" must be [h, w] with h, w >= 1");
  }
  return Size{static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1])};
}

}  // namespace dataset_detail

inline FixationSet parse_fixations(const json& doc, const fs::path& where = "<fixations>") {
  using dataset_detail::field;
  FixationSet fs_out;
  fs_out.image_id = field<std::string>(doc, "image_id", where);
  fs_out.frame = dataset_detail::size_field(doc, "frame", where);
  for (const auto& pt : field<json>(doc, "points", where)) {
    if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number()) {
      throw FormatError(where.string() + ": each point must be [row, col]");
    }
    const double r = std::floor(pt[0].get<double>());
    const double c = std::floor(pt[1].get<double>());
    if (r < 0 || c < 0 || r >= static_cast<double>(fs_out.frame.height) ||
        c >= static_cast<double>(fs_out.frame.width)) {
      throw FormatError(where.string() + ": point (" + pt[0].dump() + ", " + pt[1].dump() +
                        ") outside frame " + to_string(fs_out.frame));
    }
    fs_out.points.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(c)});
  }
  return fs_out;
}

inline FixationSet load_fixations(const fs::path& path) {
  return parse_fixations(read_json_file(path), path);
}

inline json to_json(const FixationSet& f) {
  json pts = json::array();
  for (const auto& p : f.points) pts.push_back({p.row, p.col});
  return {{"image_id", f.image_id}, {"frame", {f.frame.height, f.frame.width}}, {"points", pts}};
}

// Binary fixation grid at `target`; coordinates scale by floor(p * target / frame) per axis.
inline DenseMap rasterize_fixations(const FixationSet& fix, Size target) {
  DenseMap out(target);
  for (const auto& p : fix.points) {
    const std::size_t r = p.row * target.height / fix.frame.height;
    const std::size_t c = p.col * target.width / fix.frame.width;
    out(r, c) = 1.0;
  }
  return out;
}

// Loads every region of an annotation document. When `image_size` is given, masks must match it.
inline std::vector<RegionAnnotation> load_annotations(const fs::path& path,
                                                      std::optional<Size> image_size = std::nullopt) {
  using dataset_detail::field;
  const json doc = read_json_file(path);
  const auto image_id = field<std::string>(doc, "image_id", path);
  std::vector<RegionAnnotation> out;
  for (const auto& reg : field<json>(doc, "regions", path)) {
    RegionAnnotation a;
    a.image_id = image_id;
    a.region_id = field<int>(reg, "region_id", path);
    a.category = parse_category(field<std::string>(reg, "category", path));
    const fs::path mask_path = resolve_path(path, field<std::string>(reg, "mask_png", path));
    if (!fs::exists(mask_path)) throw IoError(path.string() + ": mask " + mask_path.string() + " does not exist");
    a.mask = read_mask_png(mask_path);
    if (a.mask.count_nonzero() == 0) {
      throw FormatError(path.string() + ": region " + std::to_string(a.region_id) + " has an empty mask");
    }
    if (image_size && a.mask.size() != *image_size) {
      throw ShapeMismatch(path.string() + ": region " + std::to_string(a.region_id) + " mask is " +
                          to_string(a.mask.size()) + " but image is " + to_string(*image_size));
    }
    out.push_back(std::move(a));
  }
  return out;
}

struct ManifestEntry {
  std::string image_id;
  Size image_size{};
  fs::path image;
  fs::path fixations;
  std::vector<fs::path> annotations;
  std::map<std::string, fs::path> activations;  // layer -> tensor file
};

using DatasetManifest = std::vector<ManifestEntry>;

// Reads a manifest: a JSON array of
//   {"image": png, "fixations": json, "annotations": [json...], "activations": {layer: npy}}.
// Every referenced path must exist and image ids (taken from the fixation files) must be unique.
inline DatasetManifest load_manifest(const fs::path& path) {
  using dataset_detail::field;
  const json doc = read_json_file(path);
  if (!doc.is_array()) throw FormatError(path.string() + ": manifest must be a JSON array");
  auto must_exist = [&](const fs::path& p) {
    if (!fs::exists(p)) throw IoError(path.string() + ": referenced file " + p.string() + " does not exist");
    return p;
  };
  DatasetManifest out;
  std::set<std::string> ids;
  for (const auto& e : doc) {
    ManifestEntry m;
    m.image = must_exist(resolve_path(path, field<std::string>(e, "image", path)));
    m.fixations = must_exist(resolve_path(path, field<std::string>(e, "fixations", path)));
    if (e.contains("annotations")) {
      for (const auto& a : field<std::vector<std::string>>(e, "annotations", path)) {
        m.annotations.push_back(must_exist(resolve_path(path, a)));
      }
    }
    if (e.contains("activations")) {
      for (const auto& [layer, file] : field<std::map<std::string, std::string>>(e, "activations", path)) {
        m.activations[layer] = must_exist(resolve_path(path, file));
      }
    }
    m.image_id = field<std::string>(read_json_file(m.fixations), "image_id", m.fixations);
    if (e.contains("image_id") && field<std::string>(e, "image_id", path) != m.image_id) {
      throw FormatError(path.string() + ": entry image_id \"" + e["image_id"].get<std::string>() +
                        "\" disagrees with its fixation file (\"" + m.image_id + "\")");
    }
    if (!ids.insert(m.image_id).second) {
      throw FormatError(path.string() + ": duplicate image_id \"" + m.image_id + "\"");
    }
    m.image_size = png_size(m.image);
    out.push_back(std::move(m));
  }
  return out;
}

// Everything about one image except its activations.
struct ImageRecord {
  std::string image_id;
  Size image_size{};
  DenseMap fixations;  // binary, image_size
  std::vector<RegionAnnotation> regions;
};

inline ImageRecord load_record(const ManifestEntry& e) {
  ImageRecord r;
  r.image_id = e.image_id;
  r.image_size = e.image_size;
  r.fixations = rasterize_fixations(load_fixations(e.fixations), e.image_size);
  for (const auto& a : e.annotations) {
    auto regs = load_annotations(a, e.image_size);
    for (auto& reg : regs) r.regions.push_back(std::move(reg));
  }
  return r;
}

inline ActivationStack load_activations(const ManifestEntry& e, const std::string& layer) {
  auto it = e.activations.find(layer);
  if (it == e.activations.end()) {
    throw InvalidArgument("image \"" + e.image_id + "\" has no activations for layer \"" + layer + "\"");
  }
  auto stack = load_stack(it->second, e.image_id, layer);
  stack.validate();
  return stack;
}

}  // namespace sdissect
