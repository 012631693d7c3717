#include "zhmt/mono_pipeline.hpp"

#include <istream>
#include <ostream>

#include "zhmt/errors.hpp"
#include "zhmt/parallel.hpp"
#include "zhmt/registry.hpp"
#include "zhmt/utf8.hpp"

namespace zhmt {

namespace {

bool contains(const std::u32string& set, char32_t cp) { return set.find(cp) != std::u32string::npos; }

bool is_line_break(char32_t cp) {
  return cp == U'\n' || cp == U'\r' || cp == 0x0B || cp == 0x0C || cp == 0x85 || cp == 0x2028 ||
         cp == 0x2029;
}

std::string trim(std::string_view s) {
  auto cps = utf8::decode(s);
  std::size_t lo = 0, hi = cps.size();
  while (lo < hi && classify_char(cps[lo]) == ScriptClass::Whitespace) ++lo;
  while (hi > lo && classify_char(cps[hi - 1]) == ScriptClass::Whitespace) --hi;
  return utf8::encode(std::vector<char32_t>(cps.begin() + static_cast<std::ptrdiff_t>(lo),
                                            cps.begin() + static_cast<std::ptrdiff_t>(hi)));
}

struct ParagraphOutcome {
  std::vector<MonoRecord> kept;
  PipelineReport report;
};

ParagraphOutcome process_paragraph(const std::string& paragraph, const std::string& source_id,
                                   const MonoPipelineConfig& cfg) {
  ParagraphOutcome o;
  o.report.extra["paragraphs"] = 1;
  if (!utf8::valid(paragraph)) {
    o.report.add_input();
    o.report.add_rejection(FilterVerdict::reject(mono_stage::kIngest, "invalid_utf8"));
    return o;
  }
  for (auto& rec : extract_sentences(paragraph, cfg, source_id)) {
    o.report.add_input();
    rec.text = normalize_charset(rec.text, cfg);
    FilterVerdict v = check_has_chinese(rec.text);
    if (v.kept) v = check_length(rec.text, cfg);
    if (!v.kept) {
      o.report.add_rejection(v);
      continue;
    }
    o.report.add_output();
    o.kept.push_back(std::move(rec));
  }
  return o;
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {mono_stage::kIngest, mono_stage::kHasChinese,
                                                 mono_stage::kLength};
  return names;
}

}  // namespace

void MonoPipelineConfig::validate() const {
  if (min_chars == 0 || min_chars > max_chars)
    throw ConfigError("mono pipeline requires 0 < min_chars <= max_chars");
  if (sentence_terminators.empty()) throw ConfigError("mono pipeline needs at least one sentence terminator");
}

std::vector<MonoRecord> extract_sentences(std::string_view paragraph, const MonoPipelineConfig& cfg,
                                          std::string_view source_id) {
  std::vector<MonoRecord> out;
  const auto cps = utf8::decode(paragraph);
  std::vector<char32_t> current;
  auto flush = [&] {
    std::string text = trim(utf8::encode(current));
    current.clear();
    if (text.empty()) return;
    std::string id(source_id);
    if (!id.empty()) id += "#" + std::to_string(out.size());
    out.push_back({std::move(text), std::move(id)});
  };
  std::size_t i = 0;
  while (i < cps.size()) {
    const char32_t cp = cps[i];
    current.push_back(is_line_break(cp) ? U' ' : cp);
    ++i;
    if (!contains(cfg.sentence_terminators, cp)) continue;
    // A run of terminators ("？！", "...") ends one sentence, followed by any closing quotes.
    while (i < cps.size() && contains(cfg.sentence_terminators, cps[i])) current.push_back(cps[i++]);
    while (i < cps.size() && contains(cfg.closing_quotes, cps[i])) current.push_back(cps[i++]);
    flush();
  }
  flush();
  return out;
}

FilterVerdict check_length(std::string_view text, const MonoPipelineConfig& cfg) {
  const auto n = utf8::length(text);
  if (n < cfg.min_chars) return FilterVerdict::reject(mono_stage::kLength, "too_short", static_cast<double>(n));
  if (n > cfg.max_chars) return FilterVerdict::reject(mono_stage::kLength, "too_long", static_cast<double>(n));
  return FilterVerdict::accept();
}

FilterVerdict check_has_chinese(std::string_view text) {
  if (script_histogram(text)[ScriptClass::Cjk] >= 1) return FilterVerdict::accept();
  return FilterVerdict::reject(mono_stage::kHasChinese, "no_chinese", 0.0);
}

std::string normalize_charset(std::string_view text, const MonoPipelineConfig& cfg) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  utf8::for_each(text, [&](char32_t cp, std::size_t, std::size_t) {
    const ScriptClass cls = classify_char(cp);
    if (cls == ScriptClass::Whitespace || cp == U' ') {
      pending_space = !out.empty();
      return;
    }
    const bool ascii_alnum = (cp >= U'a' && cp <= U'z') || (cp >= U'A' && cp <= U'Z') || (cp >= U'0' && cp <= U'9');
    if (!(ascii_alnum || cls == ScriptClass::Cjk || contains(cfg.allowed_punctuation, cp))) return;
    if (pending_space) out.push_back(' ');
    pending_space = false;
    utf8::append(out, cp);
  });
  return out;
}

MonoResult run_mono_pipeline(const std::vector<std::string>& paragraphs, const MonoPipelineConfig& cfg,
                             std::size_t workers, std::string_view source) {
  cfg.validate();
  std::vector<std::pair<std::string, std::string>> items;
  items.reserve(paragraphs.size());
  for (std::size_t i = 0; i < paragraphs.size(); ++i)
    items.emplace_back(paragraphs[i], std::string(source) + ":" + std::to_string(i + 1));
  auto outcomes = ordered_map(items, workers, [&](const std::pair<std::string, std::string>& p) {
    return process_paragraph(p.first, p.second, cfg);
  });
  MonoResult result{{}, PipelineReport(stage_names())};
  result.report.extra["paragraphs"] = 0;
  for (auto& o : outcomes) {
    result.report.merge(o.report);
    for (auto& r : o.kept) result.records.push_back(std::move(r));
  }
  return result;
}

PipelineReport run_mono_pipeline(std::istream& in, std::ostream& out, const MonoPipelineConfig& cfg,
                                 std::size_t workers, std::string_view source) {
  cfg.validate();
  constexpr std::size_t kChunk = 8192;
  PipelineReport report(stage_names());
  report.extra["paragraphs"] = 0;
  std::size_t line_no = 0;
  std::vector<std::pair<std::string, std::string>> batch;
  auto drain = [&] {
    auto outcomes = ordered_map(batch, workers, [&](const std::pair<std::string, std::string>& p) {
      return process_paragraph(p.first, p.second, cfg);
    });
    for (auto& o : outcomes) {
      report.merge(o.report);
      for (auto& r : o.kept) out << r.text << '\n';
    }
    if (!out) throw IoError("write failed after input line " + std::to_string(line_no));
    batch.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    batch.emplace_back(std::move(line), std::string(source) + ":" + std::to_string(line_no));
    if (batch.size() == kChunk) drain();
  }
  if (in.bad()) throw IoError("read failed at " + std::string(source) + ":" + std::to_string(line_no + 1));
  drain();
  return report;
}

}  // namespace zhmt
