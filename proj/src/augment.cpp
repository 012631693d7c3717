#include "zhmt/augment.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>

#include "zhmt/errors.hpp"
#include "zhmt/parallel.hpp"
#include "zhmt/tokenizer.hpp"
#include "zhmt/utf8.hpp"

namespace zhmt {

namespace {

std::string join(const std::vector<std::string>& pieces, TokenMode mode) {
  std::string out;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (i && mode != TokenMode::Character) out += ' ';
    out += pieces[i];
  }
  return out;
}

using Key = std::tuple<std::string, std::string, std::string, std::string>;

Key key_of(const ParallelRecord& r) { return {r.src_lang, r.tgt_lang, r.src_text, r.tgt_text}; }

}  // namespace

std::string WordReverseTranslator::translate(const std::string& text, const std::string& from_lang,
                                             const std::string& to_lang) const {
  std::vector<std::string> pieces;
  const TokenMode from_mode = default_token_mode(from_lang);
  for (auto p : segment(text, from_mode)) {
    if (from_mode == TokenMode::Character && p == " ") continue;
    pieces.emplace_back(p);
  }
  std::reverse(pieces.begin(), pieces.end());
  return join(pieces, default_token_mode(to_lang));
}

void DictionaryTranslator::add(const std::string& from_lang, const std::string& to_lang, Table table) {
  auto& t = tables_[{from_lang, to_lang}];
  for (auto& [k, v] : table) t[k] = std::move(v);
}

DictionaryTranslator::Table DictionaryTranslator::parse_table(std::string_view text) {
  Table t;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || line.find('\t', tab + 1) != std::string::npos)
      throw ConfigError("dictionary line " + std::to_string(n) + ": expected from<TAB>to");
    t[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return t;
}

void DictionaryTranslator::load(const std::filesystem::path& path, const std::string& from_lang,
                                const std::string& to_lang) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dictionary file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  add(from_lang, to_lang, parse_table(ss.str()));
}

bool DictionaryTranslator::supports(const std::string& from_lang, const std::string& to_lang) const {
  return tables_.count({from_lang, to_lang}) > 0;
}

std::string DictionaryTranslator::translate(const std::string& text, const std::string& from_lang,
                                            const std::string& to_lang) const {
  auto it = tables_.find({from_lang, to_lang});
  if (it == tables_.end()) throw Error("no dictionary for " + from_lang + "->" + to_lang);
  const Table& table = it->second;
  const TokenMode from_mode = default_token_mode(from_lang);
  std::vector<std::string> out;
  if (from_mode == TokenMode::Character) {
    std::size_t longest = 0;
    for (const auto& [k, _] : table) longest = std::max(longest, utf8::length(k));
    const std::vector<std::string_view> chars = segment(text, TokenMode::Character);
    std::size_t i = 0;
    while (i < chars.size()) {
      if (chars[i] == " ") {
        ++i;
        continue;
      }
      std::size_t matched = 0;
      std::string best;
      std::string cand;
      for (std::size_t n = 1; n <= longest && i + n <= chars.size(); ++n) {
        cand += chars[i + n - 1];
        auto hit = table.find(cand);
        if (hit != table.end()) {
          matched = n;
          best = hit->second;
        }
      }
      if (matched == 0) {
        out.emplace_back(chars[i]);
        ++i;
      } else {
        out.push_back(best);
        i += matched;
      }
    }
  } else {
    for (auto w : segment(text, from_mode)) {
      auto hit = table.find(std::string(w));
      out.push_back(hit == table.end() ? std::string(w) : hit->second);
    }
  }
  return join(out, default_token_mode(to_lang));
}

std::vector<std::shared_ptr<Translator>> builtin_translators() {
  return {std::make_shared<IdentityTranslator>(), std::make_shared<WordReverseTranslator>(),
          std::make_shared<DictionaryTranslator>()};
}

std::shared_ptr<Translator> make_translator(
    const std::string& name,
    const std::vector<std::tuple<std::string, std::string, std::filesystem::path>>& dictionary_files) {
  if (name == "identity") return std::make_shared<IdentityTranslator>();
  if (name == "word-reverse") return std::make_shared<WordReverseTranslator>();
  if (name == "dictionary") {
    auto d = std::make_shared<DictionaryTranslator>();
    for (const auto& [from, to, path] : dictionary_files) d->load(path, from, to);
    return d;
  }
  throw ConfigError("unknown translator '" + name + "'");
}

std::size_t AugmentedDataset::count(Origin o) const {
  return static_cast<std::size_t>(std::count(origins.begin(), origins.end(), o));
}

PairFilter low_resource_filter(const LanguageRegistry& reg) {
  return [&reg](const LanguagePair& p) {
    const ResourceTier t = reg.pair_tier(p.src, p.tgt);
    return t == ResourceTier::Low || t == ResourceTier::VeryLow;
  };
}

PairFilter all_pairs_filter() {
  return [](const LanguagePair&) { return true; };
}

AugmentedDataset augment(const AugmentedDataset& data, const Translator& translator, const PairFilter& filter,
                         std::size_t workers) {
  AugmentedDataset out;
  out.records = data.records;
  out.origins = data.origins;
  out.origins.resize(out.records.size(), Origin::Original);

  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < data.records.size(); ++i)
    if (out.origins[i] == Origin::Original && filter(data.records[i].pair())) selected.push_back(i);

  const auto translated = ordered_map(selected, workers, [&](std::size_t i) -> std::optional<std::string> {
    const ParallelRecord& r = data.records[i];
    try {
      return translator.translate(r.tgt_text, r.tgt_lang, r.src_lang);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  });

  std::set<Key> seen;
  for (const auto& r : out.records) seen.insert(key_of(r));
  for (std::size_t k = 0; k < selected.size(); ++k) {
    if (!translated[k]) {
      ++out.failures;
      continue;
    }
    const ParallelRecord& orig = data.records[selected[k]];
    ParallelRecord syn{orig.src_lang, orig.tgt_lang, *translated[k], orig.tgt_text, orig.source_id + std::string(kSyntheticSuffix)};
    if (!seen.insert(key_of(syn)).second) {
      ++out.duplicates_dropped;
      continue;
    }
    out.records.push_back(std::move(syn));
    out.origins.push_back(Origin::Synthetic);
  }
  return out;
}

AugmentedDataset augment(const std::vector<ParallelRecord>& data, const Translator& translator,
                         const PairFilter& filter, std::size_t workers) {
  AugmentedDataset d;
  d.records = data;
  d.origins.assign(data.size(), Origin::Original);
  return augment(d, translator, filter, workers);
}

}  // namespace zhmt
