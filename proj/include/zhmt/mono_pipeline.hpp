#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "zhmt/records.hpp"
#include "zhmt/report.hpp"

namespace zhmt {

struct MonoPipelineConfig {
  std::size_t min_chars = 50;
  std::size_t max_chars = 250;
  // Punctuation kept by normalize_charset, in addition to CJK ideographs, ASCII letters,
  // ASCII digits and the space character.
  std::u32string allowed_punctuation = U"。，、！？；：“”‘’（）《》—…·.,!?;:'\"()[]-%";
  std::u32string sentence_terminators = U"。！？；!?;.";
  // Closing quotes that directly follow a terminator stay with its sentence.
  std::u32string closing_quotes = U"”’」』\"'";

  void validate() const;
  bool operator==(const MonoPipelineConfig&) const = default;
};

namespace mono_stage {
inline constexpr const char* kIngest = "ingest";
inline constexpr const char* kHasChinese = "has_chinese";
inline constexpr const char* kLength = "length";
}  // namespace mono_stage

std::vector<MonoRecord> extract_sentences(std::string_view paragraph, const MonoPipelineConfig& cfg,
                                          std::string_view source_id = {});

FilterVerdict check_length(std::string_view text, const MonoPipelineConfig& cfg);
FilterVerdict check_has_chinese(std::string_view text);
std::string normalize_charset(std::string_view text, const MonoPipelineConfig& cfg);

struct MonoResult {
  std::vector<MonoRecord> records;
  PipelineReport report;
};

// extract -> normalize -> has_chinese -> length, paragraph-parallel with ordered output.
MonoResult run_mono_pipeline(const std::vector<std::string>& paragraphs, const MonoPipelineConfig& cfg,
                             std::size_t workers = 1, std::string_view source = "input");

// Streams one paragraph per line from `in` to one sentence per line on `out`.
PipelineReport run_mono_pipeline(std::istream& in, std::ostream& out, const MonoPipelineConfig& cfg,
                                 std::size_t workers = 1, std::string_view source = "input");

}  // namespace zhmt
