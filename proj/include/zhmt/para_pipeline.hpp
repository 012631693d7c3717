#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "zhmt/records.hpp"
#include "zhmt/registry.hpp"
#include "zhmt/report.hpp"
#include "zhmt/tokenizer.hpp"

namespace zhmt {

// Case-folded sensitive words. Entries before any `[lang]` header apply to every language.
class SensitiveLexicon {
 public:
  SensitiveLexicon() = default;
  static SensitiveLexicon load(const std::filesystem::path& path);
  static SensitiveLexicon parse(std::string_view text);

  void add(std::string_view word, std::string_view lang = {});
  bool empty() const;
  bool contains(std::string_view folded_word, std::string_view lang) const;
  // Global entries plus the language's section, folded.
  std::vector<std::string> entries(std::string_view lang) const;
  bool operator==(const SensitiveLexicon&) const = default;

 private:
  std::set<std::string> global_;
  std::map<std::string, std::set<std::string>> per_lang_;
};

// Simple case folding over ASCII, Latin-1, Greek and basic Cyrillic.
std::string fold_case(std::string_view s);

struct ParaPipelineConfig {
  double punct_ratio_max = 0.5;
  double nonprintable_ratio_max = 0.1;
  std::size_t max_token_chars = 100;
  double script_ratio_min = 0.5;
  double length_ratio_max = 3.0;
  std::size_t min_avg_tokens = 10;
  std::size_t max_chars = 250;
  SensitiveLexicon sensitive;
  double sensitive_freq_max = 0.5;

  void validate() const;
  bool operator==(const ParaPipelineConfig&) const = default;
};

namespace para_stage {
inline constexpr const char* kIngest = "ingest";
inline constexpr const char* kPunctRatio = "punct_ratio";
inline constexpr const char* kRules = "rules";
inline constexpr const char* kScriptRatio = "script_ratio";
inline constexpr const char* kLengths = "lengths";
inline constexpr const char* kSensitive = "sensitive";
inline constexpr const char* kDedup = "dedup";
}  // namespace para_stage

const std::vector<std::string>& para_stage_names();

using FilePair = std::pair<std::filesystem::path, std::filesystem::path>;

// Files named <stem>.<src> / <stem>.<tgt> in `dir`, sorted by stem. Unpaired files are ignored;
// paired files with different line counts raise AlignmentError.
std::vector<FilePair> pair_files(const std::filesystem::path& dir, std::string_view src_lang,
                                 std::string_view tgt_lang);

// Text of both files zipped into raw records (source_id "<stem>:<line>").
std::vector<ParallelRecord> read_file_pair(const FilePair& files, std::string_view src_lang,
                                           std::string_view tgt_lang);

std::string normalize_text(std::string_view text);
ParallelRecord normalize_pair(ParallelRecord record);

FilterVerdict check_punct_ratio(const ParallelRecord& r, const ParaPipelineConfig& cfg);
FilterVerdict check_rules(const ParallelRecord& r, const ParaPipelineConfig& cfg);
FilterVerdict check_script_ratio(const ParallelRecord& r, const ParaPipelineConfig& cfg,
                                 const LanguageRegistry& reg = LanguageRegistry::shipped());
FilterVerdict check_lengths(const ParallelRecord& r, const ParaPipelineConfig& cfg, const TokenizerSpec& tok);
FilterVerdict check_sensitive(const ParallelRecord& r, const ParaPipelineConfig& cfg, const TokenizerSpec& tok);

// First-wins duplicate detection on the (src_lang, tgt_lang, src_text, tgt_text) quadruple.
class Deduplicator {
 public:
  bool first_occurrence(const ParallelRecord& r);

 private:
  std::unordered_set<std::string> seen_;
};

std::vector<ParallelRecord> dedup(const std::vector<ParallelRecord>& records);

// Parses `src_lang<TAB>tgt_lang<TAB>src_text<TAB>tgt_text[<TAB>source_id]`; returns the
// ingestion rejection instead when the line cannot become a record.
std::variant<ParallelRecord, FilterVerdict> parse_record_line(std::string_view line, std::string_view location,
                                                              const LanguageRegistry& reg = LanguageRegistry::shipped());
std::string format_record_line(const ParallelRecord& r);

struct ParaResult {
  std::vector<ParallelRecord> records;
  PipelineReport report;
};

// normalize -> punct_ratio -> rules -> script_ratio -> lengths -> sensitive -> dedup.
// Record-parallel for the first six stages, sequential dedup; output independent of `workers`.
ParaResult run_para_pipeline(const std::vector<ParallelRecord>& records, const ParaPipelineConfig& cfg,
                             const TokenizerSpec& tok, std::size_t workers = 1,
                             const LanguageRegistry& reg = LanguageRegistry::shipped());

// Streams record-per-line TSV input to TSV output.
PipelineReport run_para_pipeline(std::istream& in, std::ostream& out, const ParaPipelineConfig& cfg,
                                 const TokenizerSpec& tok, std::size_t workers = 1,
                                 std::string_view source = "input",
                                 const LanguageRegistry& reg = LanguageRegistry::shipped());

}  // namespace zhmt
