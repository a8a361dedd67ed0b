#pragma once

#include <string>
#include <utility>
#include <vector>

namespace sdissect {

struct Warning {
  std::string code;    // stable machine-readable key, e.g. "region_skipped"
  std::string detail;
  friend bool operator==(const Warning&, const Warning&) = default;
};

// Collects non-fatal events (skipped regions, degenerate batches) for later reporting.
class WarningLog {
 public:
  void add(std::string code, std::string detail) {
    entries_.push_back({std::move(code), std::move(detail)});
  }
  void append(const WarningLog& other) {
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
  }
  const std::vector<Warning>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Warning> entries_;
};

}  // namespace sdissect
