#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace zhmt {

enum class ResourceTier { High = 0, Medium = 1, Low = 2, VeryLow = 3 };

inline constexpr std::array<ResourceTier, 4> kAllTiers = {
    ResourceTier::High, ResourceTier::Medium, ResourceTier::Low, ResourceTier::VeryLow};

std::string_view to_string(ResourceTier tier);
// Accepts "high", "medium", "low", "verylow" (case-insensitive, '-'/'_' ignored).
ResourceTier parse_tier(std::string_view s);
// Lower-resource of the two tiers.
inline ResourceTier lower_tier(ResourceTier a, ResourceTier b) {
  return static_cast<int>(a) > static_cast<int>(b) ? a : b;
}

// Lowercase ISO-639 style tag, 2-4 letters.
bool is_language_code(std::string_view code) noexcept;

enum class ScriptClass {
  Cjk,
  Latin,
  Arabic,
  Cyrillic,
  Devanagari,
  OtherLetter,
  Digit,
  Punctuation,
  Whitespace,
  Nonprintable,
  Other,
};
inline constexpr std::size_t kScriptClassCount = 11;

std::string_view to_string(ScriptClass c);

// Fixed code-point range tables, see SCRIPTS.md.
ScriptClass classify_char(char32_t cp) noexcept;

struct ScriptHistogram {
  std::array<std::size_t, kScriptClassCount> counts{};

  std::size_t operator[](ScriptClass c) const { return counts[static_cast<std::size_t>(c)]; }
  std::size_t& operator[](ScriptClass c) { return counts[static_cast<std::size_t>(c)]; }
  std::size_t total() const;
  ScriptHistogram& operator+=(const ScriptHistogram& o);
  friend ScriptHistogram operator+(ScriptHistogram a, const ScriptHistogram& b) { return a += b; }
  bool operator==(const ScriptHistogram&) const = default;
};

ScriptHistogram script_histogram(std::string_view text);

struct LanguageInfo {
  std::string code;
  std::string name;
  std::string family;
  ResourceTier tier;
  // Expected script classes; empty means the language is exempt from script-ratio checks.
  std::vector<ScriptClass> scripts;
};

class LanguageRegistry {
 public:
  // Parses a languages.tsv file (code, name, family, tier).
  static LanguageRegistry load(const std::filesystem::path& path);
  // The registry built from the shipped data/languages.tsv, loaded once.
  static const LanguageRegistry& shipped();

  void add(LanguageInfo info);

  bool contains(std::string_view code) const;
  const LanguageInfo& at(std::string_view code) const;
  ResourceTier tier(std::string_view code) const { return at(code).tier; }
  const std::string& name(std::string_view code) const { return at(code).name; }
  std::vector<std::string> codes() const;
  std::size_t size() const { return languages_.size(); }

  // Tier used to schedule a pair: the non-Chinese side for zh pairs, else the lower tier.
  ResourceTier pair_tier(std::string_view src, std::string_view tgt) const;

 private:
  std::map<std::string, LanguageInfo, std::less<>> languages_;
};

// Default expected scripts for a code (empty for uncovered scripts).
std::vector<ScriptClass> default_scripts(std::string_view code);

ResourceTier classify_tier(std::string_view code, const LanguageRegistry& reg = LanguageRegistry::shipped());

// Fraction of letters that fall in the language's expected scripts. Whitespace, punctuation
// and digits are ignored; returns 1.0 when nothing is left or the language is exempt.
double primary_script_ratio(std::string_view text, std::string_view lang,
                            const LanguageRegistry& reg = LanguageRegistry::shipped());

std::filesystem::path data_dir();

}  // namespace zhmt
