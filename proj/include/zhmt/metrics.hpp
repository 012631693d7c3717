#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zhmt/records.hpp"
#include "zhmt/registry.hpp"

namespace zhmt {

struct EvalPair {
  std::string hypothesis;
  std::string reference;
  LanguagePair pair;
};

// Tokens BLEU counts for `lang`: whitespace words, or characters without whitespace
// for languages scored at character level.
std::vector<std::string> metric_tokens(std::string_view text, std::string_view lang);

struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(const EvalPair& p);
// 0-100. Orders with zero matches use (0+1)/(total+1); brevity penalty exp(1-r/c) when c < r.
double bleu_score(const BleuStats& s);
double bleu(const std::vector<EvalPair>& corpus);

struct ChrfStats {
  static constexpr std::size_t kOrder = 6;
  std::array<std::size_t, kOrder> matches{};
  std::array<std::size_t, kOrder> hyp_totals{};
  std::array<std::size_t, kOrder> ref_totals{};

  ChrfStats& operator+=(const ChrfStats& o);
};

ChrfStats chrf_stats(std::string_view hypothesis, std::string_view reference);
// 0-100, beta 2. Per-order F over corpus-summed counts, averaged over orders where both sides have n-grams.
double chrf_score(const ChrfStats& s, double beta = 2.0);
double chrf(const std::vector<EvalPair>& corpus);

struct PairScore {
  LanguagePair pair;
  double bleu = 0.0;
  double chrf = 0.0;
  std::size_t segments = 0;
};

// One corpus-level score per language pair, pairs in sorted order.
std::vector<PairScore> score_pairs(const std::vector<EvalPair>& corpus, std::size_t workers = 1);

struct TierSummary {
  std::optional<double> bleu;
  std::optional<double> chrf;
  std::size_t pairs = 0;
};

struct EvalReport {
  std::vector<PairScore> pairs;
  std::array<TierSummary, 4> tiers;  // xx->zh pairs grouped by the tier of xx
  std::optional<double> overall_bleu;
  std::optional<double> overall_chrf;

  // Header plus one row: label, then High/Medium/Low/VeryLow means with 4 decimals ("-" when empty).
  std::string tier_table(std::string_view label, bool chrf_scores = false) const;
  // One row per pair: source language, BLEU, chrF.
  std::string long_table() const;
  // Machine-readable: kind<TAB>key<TAB>bleu<TAB>chrf<TAB>count.
  std::string to_tsv() const;
};

EvalReport build_report(const std::vector<PairScore>& scores, const LanguageRegistry& reg = LanguageRegistry::shipped());

// "label v1 v2 v3 v4" with 4 decimals; "-" for missing values.
std::string render_tier_row(std::string_view label, const std::array<std::optional<double>, 4>& values);

// `src_lang<TAB>tgt_lang<TAB>hypothesis<TAB>reference` lines.
std::vector<EvalPair> parse_eval_pairs(std::string_view text);
std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& path);

}  // namespace zhmt
