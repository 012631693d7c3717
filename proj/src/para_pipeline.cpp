#include "zhmt/para_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "zhmt/errors.hpp"
#include "zhmt/parallel.hpp"
#include "zhmt/utf8.hpp"

namespace zhmt {

namespace {

char32_t fold(char32_t cp) {
  if (cp >= U'A' && cp <= U'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  if (cp >= 0x0391 && cp <= 0x03A9 && cp != 0x03A2) return cp + 32;
  if (cp >= 0x0410 && cp <= 0x042F) return cp + 32;
  if (cp >= 0x0400 && cp <= 0x040F) return cp + 80;
  return cp;
}

struct SideStats {
  ScriptHistogram hist;
  std::size_t scalars = 0;
};

SideStats stats(std::string_view s) {
  SideStats st;
  st.hist = script_histogram(s);
  st.scalars = st.hist.total();
  return st;
}

std::size_t read_lines(const std::filesystem::path& p, std::vector<std::string>* lines) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lines) lines->push_back(std::move(line));
    ++n;
  }
  if (in.bad()) throw IoError("read failed in " + p.string() + " at line " + std::to_string(n + 1));
  return n;
}

std::string dedup_key(const ParallelRecord& r) {
  std::string k;
  k.reserve(r.src_lang.size() + r.tgt_lang.size() + r.src_text.size() + r.tgt_text.size() + 3);
  k += r.src_lang;
  k += '\x1f';
  k += r.tgt_lang;
  k += '\x1f';
  k += r.src_text;
  k += '\x1f';
  k += r.tgt_text;
  return k;
}

using StageOutcome = std::variant<ParallelRecord, FilterVerdict>;

StageOutcome run_record_stages(const ParallelRecord& raw, const ParaPipelineConfig& cfg, const TokenizerSpec& tok,
                               const LanguageRegistry& reg) {
  ParallelRecord r = normalize_pair(raw);
  FilterVerdict v = check_punct_ratio(r, cfg);
  if (v.kept) v = check_rules(r, cfg);
  if (v.kept) v = check_script_ratio(r, cfg, reg);
  if (v.kept) v = check_lengths(r, cfg, tok);
  if (v.kept) v = check_sensitive(r, cfg, tok);
  if (!v.kept) return v;
  return r;
}

// Sequential tail of the pipeline: counting and dedup over outcomes in input order.
template <class Sink>
void finish(std::vector<StageOutcome>& outcomes, std::vector<std::string>& pairs, Deduplicator& dd,
            PipelineReport& report, Sink&& sink) {
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const std::string& pair = pairs[i];
    report.add_input(pair);
    if (auto* v = std::get_if<FilterVerdict>(&outcomes[i])) {
      report.add_rejection(*v, pair);
      continue;
    }
    auto& rec = std::get<ParallelRecord>(outcomes[i]);
    if (!dd.first_occurrence(rec)) {
      report.add_rejection(FilterVerdict::reject(para_stage::kDedup, "duplicate"), pair);
      continue;
    }
    report.add_output(pair);
    sink(std::move(rec));
  }
}

}  // namespace

std::string fold_case(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  utf8::for_each(s, [&](char32_t cp, std::size_t, std::size_t) { utf8::append(out, fold(cp)); });
  return out;
}

SensitiveLexicon SensitiveLexicon::parse(std::string_view text) {
  SensitiveLexicon lex;
  std::istringstream in{std::string(text)};
  std::string line, lang;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t lo = line.find_first_not_of(" \t");
    if (lo == std::string::npos) continue;
    line = line.substr(lo);
    if (line.front() == '[' && line.back() == ']') {
      lang = line.substr(1, line.size() - 2);
      continue;
    }
    lex.add(line, lang);
  }
  return lex;
}

SensitiveLexicon SensitiveLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sensitive word list " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void SensitiveLexicon::add(std::string_view word, std::string_view lang) {
  if (word.empty()) return;
  if (lang.empty()) global_.insert(fold_case(word));
  else per_lang_[std::string(lang)].insert(fold_case(word));
}

bool SensitiveLexicon::empty() const {
  if (!global_.empty()) return false;
  return std::all_of(per_lang_.begin(), per_lang_.end(), [](const auto& kv) { return kv.second.empty(); });
}

bool SensitiveLexicon::contains(std::string_view folded_word, std::string_view lang) const {
  const std::string w(folded_word);
  if (global_.count(w)) return true;
  auto it = per_lang_.find(std::string(lang));
  return it != per_lang_.end() && it->second.count(w);
}

std::vector<std::string> SensitiveLexicon::entries(std::string_view lang) const {
  std::vector<std::string> out(global_.begin(), global_.end());
  if (auto it = per_lang_.find(std::string(lang)); it != per_lang_.end())
    out.insert(out.end(), it->second.begin(), it->second.end());
  return out;
}

void ParaPipelineConfig::validate() const {
  for (double f : {punct_ratio_max, nonprintable_ratio_max, script_ratio_min, sensitive_freq_max})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("parallel pipeline fractions must lie in [0,1]");
  if (!(length_ratio_max > 1.0)) throw ConfigError("length_ratio_max must exceed 1");
  if (max_token_chars == 0 || max_chars == 0) throw ConfigError("length limits must be positive");
}

const std::vector<std::string>& para_stage_names() {
  static const std::vector<std::string> names = {para_stage::kIngest,      para_stage::kPunctRatio,
                                                 para_stage::kRules,       para_stage::kScriptRatio,
                                                 para_stage::kLengths,     para_stage::kSensitive,
                                                 para_stage::kDedup};
  return names;
}

std::vector<FilePair> pair_files(const std::filesystem::path& dir, std::string_view src_lang,
                                 std::string_view tgt_lang) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a readable directory: " + dir.string());
  const std::string src_ext = "." + std::string(src_lang);
  const std::string tgt_ext = "." + std::string(tgt_lang);
  std::map<std::string, FilePair> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (p.extension() != src_ext) continue;
    fs::path other = p;
    other.replace_extension(tgt_ext);
    if (!fs::is_regular_file(other)) continue;
    stems[p.stem().string()] = {p, other};
  }
  std::vector<FilePair> out;
  for (const auto& [stem, files] : stems) {
    if (read_lines(files.first, nullptr) != read_lines(files.second, nullptr)) throw AlignmentError(stem);
    out.push_back(files);
  }
  return out;
}

std::vector<ParallelRecord> read_file_pair(const FilePair& files, std::string_view src_lang,
                                           std::string_view tgt_lang) {
  std::vector<std::string> src, tgt;
  read_lines(files.first, &src);
  read_lines(files.second, &tgt);
  const std::string stem = files.first.stem().string();
  if (src.size() != tgt.size()) throw AlignmentError(stem);
  std::vector<ParallelRecord> out;
  out.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i)
    out.push_back({std::string(src_lang), std::string(tgt_lang), std::move(src[i]), std::move(tgt[i]),
                   stem + ":" + std::to_string(i + 1)});
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  utf8::for_each(text, [&](char32_t cp, std::size_t, std::size_t) {
    switch (cp) {
      case 0x201C: case 0x201D: case 0x201E: case 0x201F: case 0x00AB: case 0x00BB: case 0x2033:
        cp = U'"';
        break;
      case 0x2018: case 0x2019: case 0x201A: case 0x201B: case 0x2032:
        cp = U'\'';
        break;
      default:
        if (cp >= 0xFF10 && cp <= 0xFF19) cp = U'0' + (cp - 0xFF10);
    }
    if (classify_char(cp) == ScriptClass::Whitespace) {
      pending_space = !out.empty();
      return;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    utf8::append(out, cp);
  });
  return out;
}

ParallelRecord normalize_pair(ParallelRecord record) {
  record.src_text = normalize_text(record.src_text);
  record.tgt_text = normalize_text(record.tgt_text);
  return record;
}

FilterVerdict check_punct_ratio(const ParallelRecord& r, const ParaPipelineConfig& cfg) {
  for (const std::string* side : {&r.src_text, &r.tgt_text}) {
    const SideStats st = stats(*side);
    const std::size_t visible = st.scalars - st.hist[ScriptClass::Whitespace];
    if (visible == 0) return FilterVerdict::reject(para_stage::kPunctRatio, "empty", 0.0);
    const double ratio = static_cast<double>(st.hist[ScriptClass::Punctuation]) / static_cast<double>(visible);
    if (ratio > cfg.punct_ratio_max) return FilterVerdict::reject(para_stage::kPunctRatio, "punct_ratio", ratio);
  }
  return FilterVerdict::accept();
}

FilterVerdict check_rules(const ParallelRecord& r, const ParaPipelineConfig& cfg) {
  for (const std::string* side : {&r.src_text, &r.tgt_text}) {
    const SideStats st = stats(*side);
    if (st.scalars == st.hist[ScriptClass::Whitespace])
      return FilterVerdict::reject(para_stage::kRules, "whitespace_only");
    const double np = static_cast<double>(st.hist[ScriptClass::Nonprintable]) / static_cast<double>(st.scalars);
    if (np > cfg.nonprintable_ratio_max) return FilterVerdict::reject(para_stage::kRules, "nonprintable", np);
    for (std::string_view tok : segment(*side, TokenMode::Whitespace)) {
      const std::size_t n = utf8::length(tok);
      if (n > cfg.max_token_chars)
        return FilterVerdict::reject(para_stage::kRules, "long_token", static_cast<double>(n));
    }
  }
  return FilterVerdict::accept();
}

FilterVerdict check_script_ratio(const ParallelRecord& r, const ParaPipelineConfig& cfg,
                                 const LanguageRegistry& reg) {
  const double src = primary_script_ratio(r.src_text, r.src_lang, reg);
  if (src < cfg.script_ratio_min) return FilterVerdict::reject(para_stage::kScriptRatio, "src_script", src);
  const double tgt = primary_script_ratio(r.tgt_text, r.tgt_lang, reg);
  if (tgt < cfg.script_ratio_min) return FilterVerdict::reject(para_stage::kScriptRatio, "tgt_script", tgt);
  return FilterVerdict::accept();
}

FilterVerdict check_lengths(const ParallelRecord& r, const ParaPipelineConfig& cfg, const TokenizerSpec& tok) {
  const auto src_n = token_count(r.src_text, r.src_lang, tok);
  const auto tgt_n = token_count(r.tgt_text, r.tgt_lang, tok);
  if (src_n == 0 || tgt_n == 0) return FilterVerdict::reject(para_stage::kLengths, "empty", 0.0);
  const double ratio = static_cast<double>(std::max(src_n, tgt_n)) / static_cast<double>(std::min(src_n, tgt_n));
  if (ratio > cfg.length_ratio_max) return FilterVerdict::reject(para_stage::kLengths, "length_ratio", ratio);
  const double avg = static_cast<double>(src_n + tgt_n) / 2.0;
  if (avg < static_cast<double>(cfg.min_avg_tokens)) return FilterVerdict::reject(para_stage::kLengths, "too_short", avg);
  for (const std::string* side : {&r.src_text, &r.tgt_text}) {
    const auto n = utf8::length(*side);
    if (n > cfg.max_chars) return FilterVerdict::reject(para_stage::kLengths, "too_long", static_cast<double>(n));
  }
  return FilterVerdict::accept();
}

FilterVerdict check_sensitive(const ParallelRecord& r, const ParaPipelineConfig& cfg, const TokenizerSpec& tok) {
  if (cfg.sensitive.empty()) return FilterVerdict::accept();
  auto frequency = [&](const std::string& text, const std::string& lang) -> double {
    const std::string folded = fold_case(text);
    if (tok.mode(lang) == TokenMode::Whitespace) {
      const auto words = segment(folded, TokenMode::Whitespace);
      if (words.empty()) return 0.0;
      std::size_t hits = 0;
      for (auto w : words) hits += cfg.sensitive.contains(w, lang);
      return static_cast<double>(hits) / static_cast<double>(words.size());
    }
    // Character languages: fraction of scalars covered by lexicon substrings.
    const auto pieces = segment(folded, TokenMode::Character);
    if (pieces.empty()) return 0.0;
    std::vector<bool> covered(pieces.size(), false);
    std::vector<std::size_t> offsets;
    offsets.reserve(pieces.size());
    for (auto p : pieces) offsets.push_back(static_cast<std::size_t>(p.data() - folded.data()));
    for (const std::string& word : cfg.sensitive.entries(lang)) {
      for (std::size_t pos = folded.find(word); pos != std::string::npos; pos = folded.find(word, pos + 1)) {
        auto first = std::lower_bound(offsets.begin(), offsets.end(), pos);
        for (auto it = first; it != offsets.end() && *it < pos + word.size(); ++it)
          covered[static_cast<std::size_t>(it - offsets.begin())] = true;
      }
    }
    const auto hits = static_cast<std::size_t>(std::count(covered.begin(), covered.end(), true));
    return static_cast<double>(hits) / static_cast<double>(pieces.size());
  };
  const double src = frequency(r.src_text, r.src_lang);
  if (src > cfg.sensitive_freq_max) return FilterVerdict::reject(para_stage::kSensitive, "sensitive", src);
  const double tgt = frequency(r.tgt_text, r.tgt_lang);
  if (tgt > cfg.sensitive_freq_max) return FilterVerdict::reject(para_stage::kSensitive, "sensitive", tgt);
  return FilterVerdict::accept();
}

bool Deduplicator::first_occurrence(const ParallelRecord& r) { return seen_.insert(dedup_key(r)).second; }

std::vector<ParallelRecord> dedup(const std::vector<ParallelRecord>& records) {
  Deduplicator dd;
  std::vector<ParallelRecord> out;
  for (const auto& r : records)
    if (dd.first_occurrence(normalize_pair(r))) out.push_back(r);
  return out;
}

std::variant<ParallelRecord, FilterVerdict> parse_record_line(std::string_view line, std::string_view location,
                                                              const LanguageRegistry& reg) {
  if (!utf8::valid(line)) return FilterVerdict::reject(para_stage::kIngest, "invalid_utf8");
  std::vector<std::string_view> f;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    f.push_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  if (f.size() != 4 && f.size() != 5) return FilterVerdict::reject(para_stage::kIngest, "malformed");
  if (!reg.contains(f[0]) || !reg.contains(f[1]))
    return FilterVerdict::reject(para_stage::kIngest, "unknown_language");
  if (f[0] == f[1]) return FilterVerdict::reject(para_stage::kIngest, "same_language");
  ParallelRecord r{std::string(f[0]), std::string(f[1]), std::string(f[2]), std::string(f[3]),
                   f.size() == 5 ? std::string(f[4]) : std::string(location)};
  return r;
}

std::string format_record_line(const ParallelRecord& r) {
  return r.src_lang + "\t" + r.tgt_lang + "\t" + r.src_text + "\t" + r.tgt_text + "\t" + r.source_id;
}

ParaResult run_para_pipeline(const std::vector<ParallelRecord>& records, const ParaPipelineConfig& cfg,
                             const TokenizerSpec& tok, std::size_t workers, const LanguageRegistry& reg) {
  cfg.validate();
  auto outcomes = ordered_map(records, workers,
                              [&](const ParallelRecord& r) { return run_record_stages(r, cfg, tok, reg); });
  std::vector<std::string> pairs;
  pairs.reserve(records.size());
  for (const auto& r : records) pairs.push_back(r.pair().str());
  ParaResult result{{}, PipelineReport(para_stage_names())};
  Deduplicator dd;
  finish(outcomes, pairs, dd, result.report, [&](ParallelRecord&& r) { result.records.push_back(std::move(r)); });
  return result;
}

PipelineReport run_para_pipeline(std::istream& in, std::ostream& out, const ParaPipelineConfig& cfg,
                                 const TokenizerSpec& tok, std::size_t workers, std::string_view source,
                                 const LanguageRegistry& reg) {
  cfg.validate();
  constexpr std::size_t kChunk = 16384;
  PipelineReport report(para_stage_names());
  Deduplicator dd;
  std::size_t line_no = 0;
  std::vector<std::string> lines;
  std::vector<std::string> locations;
  auto drain = [&] {
    std::vector<std::size_t> idx(lines.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<std::string> pairs(lines.size());
    auto outcomes = ordered_map(idx, workers, [&](std::size_t i) -> StageOutcome {
      auto parsed = parse_record_line(lines[i], locations[i], reg);
      if (auto* v = std::get_if<FilterVerdict>(&parsed)) return *v;
      const auto& rec = std::get<ParallelRecord>(parsed);
      pairs[i] = rec.pair().str();
      return run_record_stages(rec, cfg, tok, reg);
    });
    finish(outcomes, pairs, dd, report, [&](ParallelRecord&& r) { out << format_record_line(r) << '\n'; });
    if (!out) throw IoError("write failed after " + std::string(source) + ":" + std::to_string(line_no));
    lines.clear();
    locations.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    locations.push_back(std::string(source) + ":" + std::to_string(line_no));
    if (lines.size() == kChunk) drain();
  }
  if (in.bad()) throw IoError("read failed at " + std::string(source) + ":" + std::to_string(line_no + 1));
  drain();
  return report;
}

}  // namespace zhmt
