#pragma once

// CSV and Markdown renderings of analysis results.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sdissect/dataset.hpp"
#include "sdissect/diagnostics.hpp"
#include "sdissect/dissection.hpp"
#include "sdissect/relation.hpp"

namespace sdissect {

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError("CSV has no column \"" + name + "\"");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty CSV");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size()) {
      throw FormatError(path.string() + ": row has " + std::to_string(row.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline const std::string kDissectionHeader =
    "layer,category,top_k_mean,count_above_threshold,regions_used,regions_skipped";

inline std::string dissection_csv(const std::vector<CategoryStats>& stats) {
  std::string out = kDissectionHeader + "\n";
  for (const auto& s : stats) {
    out += s.layer + "," + std::string(label(s.category)) + "," + format_real(s.top_k_mean) + "," +
           std::to_string(s.count_above_threshold) + "," + std::to_string(s.regions_used) + "," +
           std::to_string(s.regions_skipped) + "\n";
  }
  return out;
}

// Reads the summary columns back; per-map scores are not part of the CSV.
inline std::vector<CategoryStats> read_dissection_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const auto layer = t.column("layer"), cat = t.column("category"), mean = t.column("top_k_mean"),
             above = t.column("count_above_threshold"), used = t.column("regions_used"),
             skipped = t.column("regions_skipped");
  std::vector<CategoryStats> out;
  for (const auto& row : t.rows) {
    CategoryStats s;
    s.layer = row[layer];
    s.category = parse_category(row[cat]);
    try {
      s.top_k_mean = std::stod(row[mean]);
      s.count_above_threshold = std::stoul(row[above]);
      s.regions_used = std::stoul(row[used]);
      s.regions_skipped = std::stoul(row[skipped]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed number in row for " + s.layer + "/" + row[cat]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string relation_csv(const std::vector<CategoryRelation>& rel) {
  std::string out = "category,inner_saliency,OS_c,OD_c,regions\n";
  for (const auto& r : rel) {
    out += std::string(label(r.category)) + "," + format_real(r.inner_saliency) + "," +
           format_real(r.output_saliency) + "," + format_real(r.output_difference) + "," +
           std::to_string(r.regions) + "\n";
  }
  return out;
}

inline std::string warnings_jsonl(const WarningLog& log) {
  std::string out;
  for (const auto& w : log.entries()) out += nlohmann::json{{"code", w.code}, {"detail", w.detail}}.dump() + "\n";
  return out;
}

namespace report_detail {

inline std::string md_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += " " + c + " |";
  return out + "\n";
}

inline std::string md_rule(std::size_t n) {
  std::string out = "|";
  for (std::size_t i = 0; i < n; ++i) out += "---|";
  return out + "\n";
}

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace report_detail

// Two blocks, layers as rows and categories as columns: top-k mean, then counts above threshold.
inline std::string dissection_markdown(const std::vector<CategoryStats>& stats) {
  using namespace report_detail;
  std::vector<std::string> layers;
  std::set<Category> cats;
  std::map<std::pair<std::string, Category>, const CategoryStats*> cell;
  for (const auto& s : stats) {
    if (std::find(layers.begin(), layers.end(), s.layer) == layers.end()) layers.push_back(s.layer);
    cats.insert(s.category);
    cell[{s.layer, s.category}] = &s;
  }
  std::vector<std::string> head{"layer"};
  for (auto c : cats) head.emplace_back(label(c));
  std::string out;
  for (int block = 0; block < 2; ++block) {
    out += block == 0 ? "**mean NSS of the top-k activation maps**\n\n"
                      : "\n**number of activation maps above threshold**\n\n";
    out += md_row(head) + md_rule(head.size());
    for (const auto& l : layers) {
      std::vector<std::string> row{l};
      for (auto c : cats) {
        auto it = cell.find({l, c});
        if (it == cell.end()) {
          row.emplace_back("-");
        } else {
          row.push_back(block == 0 ? fixed2(it->second->top_k_mean)
                                   : std::to_string(it->second->count_above_threshold));
        }
      }
      out += md_row(row);
    }
  }
  return out;
}

// Generic rendering of any CSV produced by the toolkit.
inline std::string csv_markdown(const CsvTable& t) {
  using namespace report_detail;
  std::string out = md_row(t.header) + md_rule(t.header.size());
  for (const auto& r : t.rows) out += md_row(r);
  return out;
}

}  // namespace sdissect
