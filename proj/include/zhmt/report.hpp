#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "zhmt/records.hpp"

namespace zhmt {

// Counters produced by a cleaning pipeline. Merging is associative and commutative, so a
// report assembled from per-worker pieces equals the single-threaded one.
struct PipelineReport {
  struct Counts {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::map<std::string, std::size_t> rejected;  // stage -> count

    bool operator==(const Counts&) const = default;
  };

  Counts totals;
  std::map<std::string, std::size_t> reasons;  // reason -> count
  std::map<std::string, Counts> pairs;         // "src-tgt" -> counts (parallel pipeline only)
  std::map<std::string, std::size_t> extra;    // auxiliary counters, e.g. paragraphs read

  // Creates zero entries for every stage so reports always list them.
  explicit PipelineReport(const std::vector<std::string>& stages = {});

  void add_input(const std::string& pair = {});
  void add_output(const std::string& pair = {});
  void add_rejection(const FilterVerdict& v, const std::string& pair = {});

  std::size_t total_rejections() const;
  std::size_t rejected(const std::string& stage) const;
  bool balanced() const;

  PipelineReport& merge(const PipelineReport& other);

  // Tab-separated `key value` lines, sorted by key within each block.
  std::string to_text() const;
  static PipelineReport parse(std::string_view text);

  bool operator==(const PipelineReport&) const = default;
};

}  // namespace zhmt
