#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "zhmt/records.hpp"
#include "zhmt/registry.hpp"

namespace zhmt {

class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string name() const = 0;
  // Throws on unsupported directions or other failures; augment() skips and counts those.
  virtual std::string translate(const std::string& text, const std::string& from_lang,
                                const std::string& to_lang) const = 0;
};

class IdentityTranslator : public Translator {
 public:
  std::string name() const override { return "identity"; }
  std::string translate(const std::string& text, const std::string&, const std::string&) const override {
    return text;
  }
};

// Reverses token order, segmenting with the source language's token mode.
class WordReverseTranslator : public Translator {
 public:
  std::string name() const override { return "word-reverse"; }
  std::string translate(const std::string& text, const std::string& from_lang,
                        const std::string& to_lang) const override;
};

// Word table per direction. Unmapped tokens pass through. Character-mode sources are
// segmented greedily by the longest matching table key.
class DictionaryTranslator : public Translator {
 public:
  using Table = std::map<std::string, std::string>;

  std::string name() const override { return "dictionary"; }
  std::string translate(const std::string& text, const std::string& from_lang,
                        const std::string& to_lang) const override;

  void add(const std::string& from_lang, const std::string& to_lang, Table table);
  // `from<TAB>to` per line; blank lines and lines starting with '#' are skipped.
  void load(const std::filesystem::path& path, const std::string& from_lang, const std::string& to_lang);
  static Table parse_table(std::string_view text);
  bool supports(const std::string& from_lang, const std::string& to_lang) const;

 private:
  std::map<std::pair<std::string, std::string>, Table> tables_;
};

// identity, word-reverse and an empty dictionary translator.
std::vector<std::shared_ptr<Translator>> builtin_translators();
// Looks a builtin up by name; a dictionary needs `dictionary_files` entries as
// (from_lang, to_lang, path).
std::shared_ptr<Translator> make_translator(
    const std::string& name,
    const std::vector<std::tuple<std::string, std::string, std::filesystem::path>>& dictionary_files = {});

enum class Origin { Original, Synthetic };

// Suffix appended to the source id of synthetic records.
inline constexpr std::string_view kSyntheticSuffix = "#bt";
// Origin column value in record files written by the augment command.
inline constexpr std::string_view kSyntheticTag = "synthetic";
inline constexpr std::string_view kOriginalTag = "original";

inline bool is_synthetic(const ParallelRecord& r) {
  if (r.source_id == kSyntheticTag) return true;
  return r.source_id.size() >= kSyntheticSuffix.size() &&
         r.source_id.compare(r.source_id.size() - kSyntheticSuffix.size(), kSyntheticSuffix.size(), kSyntheticSuffix) == 0;
}

struct AugmentedDataset {
  std::vector<ParallelRecord> records;
  std::vector<Origin> origins;
  std::size_t failures = 0;
  std::size_t duplicates_dropped = 0;

  std::size_t size() const { return records.size(); }
  std::size_t count(Origin o) const;
};

using PairFilter = std::function<bool(const LanguagePair&)>;

// Keeps pairs whose tier is Low or VeryLow.
PairFilter low_resource_filter(const LanguageRegistry& reg = LanguageRegistry::shipped());
PairFilter all_pairs_filter();

// Originals in input order, then one synthetic per selected record: the target sentence
// back-translated into the source language becomes the new source side.
AugmentedDataset augment(const std::vector<ParallelRecord>& data, const Translator& translator,
                         const PairFilter& filter, std::size_t workers = 1);
// Only original-tagged records are back-translated.
AugmentedDataset augment(const AugmentedDataset& data, const Translator& translator,
                         const PairFilter& filter, std::size_t workers = 1);

}  // namespace zhmt
