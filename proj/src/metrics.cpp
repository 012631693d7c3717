#include "zhmt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "zhmt/errors.hpp"
#include "zhmt/parallel.hpp"
#include "zhmt/tokenizer.hpp"
#include "zhmt/utf8.hpp"

namespace zhmt {

namespace {

bool is_space_cp(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' || c == 0x85 || c == 0xA0 ||
         c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
         c == 0x3000;
}

std::vector<std::u32string> chars_no_space(std::string_view text) {
  std::vector<std::u32string> out;
  for (char32_t c : utf8::decode(text))
    if (!is_space_cp(c)) out.emplace_back(1, c);
  return out;
}

template <class Tok>
std::map<std::vector<Tok>, std::size_t> ngrams(const std::vector<Tok>& toks, std::size_t n) {
  std::map<std::vector<Tok>, std::size_t> m;
  if (toks.size() < n) return m;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++m[std::vector<Tok>(toks.begin() + i, toks.begin() + i + n)];
  return m;
}

template <class Tok>
std::size_t clipped_matches(const std::map<std::vector<Tok>, std::size_t>& h,
                            const std::map<std::vector<Tok>, std::size_t>& r) {
  std::size_t m = 0;
  for (const auto& [g, c] : h)
    if (auto it = r.find(g); it != r.end()) m += std::min(c, it->second);
  return m;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void check_reference(const EvalPair& p) {
  if (p.reference.empty()) throw Error("empty reference for pair " + p.pair.str());
}

}  // namespace

std::vector<std::string> metric_tokens(std::string_view text, std::string_view lang) {
  std::vector<std::string> out;
  const TokenMode mode = default_token_mode(lang) == TokenMode::Character ? TokenMode::Character : TokenMode::Whitespace;
  if (mode == TokenMode::Character) {
    utf8::for_each(text, [&](char32_t cp, std::size_t off, std::size_t n) {
      if (!is_space_cp(cp)) out.emplace_back(text.substr(off, n));
    });
  } else {
    for (auto piece : segment(text, TokenMode::Whitespace)) out.emplace_back(piece);
  }
  return out;
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

BleuStats bleu_stats(const EvalPair& p) {
  check_reference(p);
  const auto h = metric_tokens(p.hypothesis, p.pair.tgt);
  const auto r = metric_tokens(p.reference, p.pair.tgt);
  BleuStats s;
  s.hyp_len = h.size();
  s.ref_len = r.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    s.totals[n - 1] = h.size() >= n ? h.size() - n + 1 : 0;
    s.matches[n - 1] = clipped_matches(ngrams(h, n), ngrams(r, n));
  }
  return s;
}

double bleu_score(const BleuStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = s.matches[n] > 0 ? static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n])
                                      : 1.0 / (static_cast<double>(s.totals[n]) + 1.0);
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(s.hyp_len), r = static_cast<double>(s.ref_len);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

double bleu(const std::vector<EvalPair>& corpus) {
  if (corpus.empty()) throw Error("BLEU of an empty corpus");
  BleuStats total;
  for (const auto& p : corpus) total += bleu_stats(p);
  return bleu_score(total);
}

ChrfStats& ChrfStats::operator+=(const ChrfStats& o) {
  for (std::size_t n = 0; n < kOrder; ++n) {
    matches[n] += o.matches[n];
    hyp_totals[n] += o.hyp_totals[n];
    ref_totals[n] += o.ref_totals[n];
  }
  return *this;
}

ChrfStats chrf_stats(std::string_view hypothesis, std::string_view reference) {
  const auto h = chars_no_space(hypothesis);
  const auto r = chars_no_space(reference);
  ChrfStats s;
  for (std::size_t n = 1; n <= ChrfStats::kOrder; ++n) {
    s.hyp_totals[n - 1] = h.size() >= n ? h.size() - n + 1 : 0;
    s.ref_totals[n - 1] = r.size() >= n ? r.size() - n + 1 : 0;
    s.matches[n - 1] = clipped_matches(ngrams(h, n), ngrams(r, n));
  }
  return s;
}

double chrf_score(const ChrfStats& s, double beta) {
  const double b2 = beta * beta;
  double sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < ChrfStats::kOrder; ++n) {
    if (s.hyp_totals[n] == 0 || s.ref_totals[n] == 0) continue;
    ++orders;
    const double m = static_cast<double>(s.matches[n]);
    if (m == 0.0) continue;
    const double p = m / static_cast<double>(s.hyp_totals[n]);
    const double r = m / static_cast<double>(s.ref_totals[n]);
    sum += (1.0 + b2) * p * r / (b2 * p + r);
  }
  return orders ? 100.0 * sum / static_cast<double>(orders) : 0.0;
}

double chrf(const std::vector<EvalPair>& corpus) {
  if (corpus.empty()) throw Error("chrF of an empty corpus");
  ChrfStats total;
  for (const auto& p : corpus) {
    check_reference(p);
    total += chrf_stats(p.hypothesis, p.reference);
  }
  return chrf_score(total);
}

std::vector<PairScore> score_pairs(const std::vector<EvalPair>& corpus, std::size_t workers) {
  if (corpus.empty()) throw Error("cannot score an empty corpus");
  const auto stats = ordered_map(corpus, workers, [](const EvalPair& p) {
    check_reference(p);
    return std::make_pair(bleu_stats(p), chrf_stats(p.hypothesis, p.reference));
  });
  std::map<LanguagePair, std::tuple<BleuStats, ChrfStats, std::size_t>> by_pair;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto& [b, c, n] = by_pair[corpus[i].pair];
    b += stats[i].first;
    c += stats[i].second;
    ++n;
  }
  std::vector<PairScore> out;
  for (const auto& [pair, v] : by_pair) {
    const auto& [b, c, n] = v;
    out.push_back({pair, bleu_score(b), chrf_score(c), n});
  }
  return out;
}

EvalReport build_report(const std::vector<PairScore>& scores, const LanguageRegistry& reg) {
  EvalReport rep;
  rep.pairs = scores;
  std::array<double, 4> bsum{}, csum{};
  double ball = 0.0, call = 0.0;
  for (const auto& s : scores) {
    reg.at(s.pair.src);
    reg.at(s.pair.tgt);
    ball += s.bleu;
    call += s.chrf;
    if (s.pair.tgt != "zh") continue;
    const auto t = static_cast<std::size_t>(reg.tier(s.pair.src));
    bsum[t] += s.bleu;
    csum[t] += s.chrf;
    ++rep.tiers[t].pairs;
  }
  for (std::size_t t = 0; t < 4; ++t) {
    if (!rep.tiers[t].pairs) continue;
    rep.tiers[t].bleu = bsum[t] / static_cast<double>(rep.tiers[t].pairs);
    rep.tiers[t].chrf = csum[t] / static_cast<double>(rep.tiers[t].pairs);
  }
  if (!scores.empty()) {
    rep.overall_bleu = ball / static_cast<double>(scores.size());
    rep.overall_chrf = call / static_cast<double>(scores.size());
  }
  return rep;
}

std::string render_tier_row(std::string_view label, const std::array<std::optional<double>, 4>& values) {
  std::string row(label);
  for (const auto& v : values) row += " " + (v ? fmt4(*v) : std::string("-"));
  return row;
}

std::string EvalReport::tier_table(std::string_view label, bool chrf_scores) const {
  std::array<std::optional<double>, 4> v;
  for (std::size_t t = 0; t < 4; ++t) v[t] = chrf_scores ? tiers[t].chrf : tiers[t].bleu;
  return "Model | High Resource | Medium Resource | Low Resource | Very Low Resource\n" + render_tier_row(label, v) + "\n";
}

std::string EvalReport::long_table() const {
  std::string out = "pair\tBLEU\tchrF\n";
  for (const auto& p : pairs) out += p.pair.str() + "\t" + fmt4(p.bleu) + "\t" + fmt4(p.chrf) + "\n";
  return out;
}

std::string EvalReport::to_tsv() const {
  std::string out = "kind\tkey\tbleu\tchrf\tcount\n";
  for (const auto& p : pairs)
    out += "pair\t" + p.pair.str() + "\t" + fmt4(p.bleu) + "\t" + fmt4(p.chrf) + "\t" + std::to_string(p.segments) + "\n";
  for (ResourceTier t : kAllTiers) {
    const TierSummary& s = tiers[static_cast<std::size_t>(t)];
    out += "tier\t" + std::string(to_string(t)) + "\t" + (s.bleu ? fmt4(*s.bleu) : "-") + "\t" +
           (s.chrf ? fmt4(*s.chrf) : "-") + "\t" + std::to_string(s.pairs) + "\n";
  }
  out += "overall\tall\t" + (overall_bleu ? fmt4(*overall_bleu) : "-") + "\t" +
         (overall_chrf ? fmt4(*overall_chrf) : "-") + "\t" + std::to_string(pairs.size()) + "\n";
  return out;
}

std::vector<EvalPair> parse_eval_pairs(std::string_view text) {
  std::vector<EvalPair> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 4) throw Error("score line " + std::to_string(n) + ": expected 4 tab-separated fields");
    for (int i = 0; i < 2; ++i)
      if (!is_language_code(f[i])) throw UnknownLanguage(f[i]);
    out.push_back({f[2], f[3], {f[0], f[1]}});
  }
  return out;
}

std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_eval_pairs(ss.str());
}

}  // namespace zhmt
