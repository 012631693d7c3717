#include "zhmt/registry.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>

#include "zhmt/errors.hpp"
#include "zhmt/utf8.hpp"

namespace zhmt {

namespace {

struct Range {
  char32_t lo;
  char32_t hi;
};

template <std::size_t N>
bool in(const Range (&table)[N], char32_t cp) {
  for (const auto& r : table)
    if (cp >= r.lo && cp <= r.hi) return true;
  return false;
}

// Checked in this order; the first table that matches wins.
constexpr Range kWhitespace[] = {
    {0x0009, 0x000D}, {0x0020, 0x0020}, {0x0085, 0x0085}, {0x00A0, 0x00A0}, {0x1680, 0x1680},
    {0x2000, 0x200A}, {0x2028, 0x2029}, {0x202F, 0x202F}, {0x205F, 0x205F},
};
constexpr Range kNonprintable[] = {
    {0x0000, 0x0008}, {0x000E, 0x001F}, {0x007F, 0x009F}, {0x00AD, 0x00AD}, {0x200B, 0x200F},
    {0x202A, 0x202E}, {0x2060, 0x206F}, {0xD800, 0xDFFF}, {0xE000, 0xF8FF}, {0xFEFF, 0xFEFF},
    {0xFFF0, 0xFFFB}, {0xFFFE, 0xFFFF}, {0xF0000, 0x10FFFF},
};
constexpr Range kDigit[] = {
    {0x0030, 0x0039}, {0x0660, 0x0669}, {0x06F0, 0x06F9}, {0x0966, 0x096F}, {0xFF10, 0xFF19},
};
constexpr Range kPunctuation[] = {
    {0x0021, 0x002F}, {0x003A, 0x0040}, {0x005B, 0x0060}, {0x007B, 0x007E},
    {0x00A1, 0x00AC}, {0x00AE, 0x00BF}, {0x00D7, 0x00D7}, {0x00F7, 0x00F7},
    {0x060C, 0x060C}, {0x061B, 0x061B}, {0x061E, 0x061F}, {0x066A, 0x066D}, {0x06D4, 0x06D4},
    {0x0964, 0x0965}, {0x2010, 0x2027}, {0x2030, 0x205E}, {0x20A0, 0x20CF}, {0x2100, 0x214F},
    {0x2190, 0x23FF}, {0x2500, 0x27BF}, {0x3000, 0x303F}, {0xFE10, 0xFE1F}, {0xFE30, 0xFE6F},
    {0xFF01, 0xFF0F}, {0xFF1A, 0xFF20}, {0xFF3B, 0xFF40}, {0xFF5B, 0xFF65}, {0xFFE0, 0xFFEE},
};
constexpr Range kCjk[] = {
    {0x4E00, 0x9FFF}, {0x3400, 0x4DBF}, {0xF900, 0xFAFF}, {0x20000, 0x2FA1F}, {0x30000, 0x3134F},
};
constexpr Range kLatin[] = {
    {0x0041, 0x005A}, {0x0061, 0x007A}, {0x00C0, 0x00FF}, {0x0100, 0x024F}, {0x0250, 0x02AF},
    {0x1E00, 0x1EFF}, {0x2C60, 0x2C7F}, {0xA720, 0xA7FF}, {0xFF21, 0xFF3A}, {0xFF41, 0xFF5A},
};
constexpr Range kArabic[] = {
    {0x0600, 0x06FF}, {0x0750, 0x077F}, {0x08A0, 0x08FF}, {0xFB50, 0xFDFF}, {0xFE70, 0xFEFC},
};
constexpr Range kCyrillic[] = {
    {0x0400, 0x04FF}, {0x0500, 0x052F}, {0x1C80, 0x1C8F}, {0x2DE0, 0x2DFF}, {0xA640, 0xA69F},
};
constexpr Range kDevanagari[] = {
    {0x0900, 0x097F}, {0xA8E0, 0xA8FF},
};
constexpr Range kOtherLetter[] = {
    {0x0370, 0x03FF}, {0x1F00, 0x1FFF},                    // Greek
    {0x0530, 0x058F},                                      // Armenian
    {0x0590, 0x05FF},                                      // Hebrew
    {0x0700, 0x074F},                                      // Syriac
    {0x0780, 0x07BF},                                      // Thaana
    {0x0980, 0x0DFF},                                      // Bengali .. Sinhala
    {0x0E00, 0x0EFF},                                      // Thai, Lao
    {0x0F00, 0x0FFF},                                      // Tibetan
    {0x1000, 0x109F},                                      // Myanmar
    {0x10A0, 0x10FF}, {0x2D00, 0x2D2F},                    // Georgian
    {0x1100, 0x11FF}, {0x3130, 0x318F}, {0xAC00, 0xD7AF},  // Hangul
    {0x1200, 0x139F}, {0x2D80, 0x2DDF},                    // Ethiopic
    {0x1780, 0x17FF}, {0x19E0, 0x19FF},                    // Khmer
    {0x1800, 0x18AF},                                      // Mongolian
    {0x3040, 0x30FF}, {0x31F0, 0x31FF}, {0xFF66, 0xFF9F},  // Kana
    {0x3100, 0x312F},                                      // Bopomofo
};

}  // namespace

std::string_view to_string(ResourceTier tier) {
  switch (tier) {
    case ResourceTier::High: return "high";
    case ResourceTier::Medium: return "medium";
    case ResourceTier::Low: return "low";
    case ResourceTier::VeryLow: return "verylow";
  }
  return "?";
}

ResourceTier parse_tier(std::string_view s) {
  std::string k;
  for (char c : s)
    if (c != '-' && c != '_' && c != ' ') k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (k == "high") return ResourceTier::High;
  if (k == "medium") return ResourceTier::Medium;
  if (k == "low") return ResourceTier::Low;
  if (k == "verylow") return ResourceTier::VeryLow;
  throw ConfigError("unknown resource tier '" + std::string(s) + "'");
}

bool is_language_code(std::string_view code) noexcept {
  if (code.size() < 2 || code.size() > 4) return false;
  return std::all_of(code.begin(), code.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

std::string_view to_string(ScriptClass c) {
  static constexpr std::string_view names[] = {"cjk",   "latin",       "arabic",     "cyrillic",
                                               "devanagari", "other_letter", "digit", "punctuation",
                                               "whitespace", "nonprintable", "other"};
  return names[static_cast<std::size_t>(c)];
}

ScriptClass classify_char(char32_t cp) noexcept {
  if (in(kWhitespace, cp)) return ScriptClass::Whitespace;
  if (in(kNonprintable, cp)) return ScriptClass::Nonprintable;
  if (in(kDigit, cp)) return ScriptClass::Digit;
  if (in(kPunctuation, cp)) return ScriptClass::Punctuation;
  if (in(kCjk, cp)) return ScriptClass::Cjk;
  if (in(kLatin, cp)) return ScriptClass::Latin;
  if (in(kArabic, cp)) return ScriptClass::Arabic;
  if (in(kCyrillic, cp)) return ScriptClass::Cyrillic;
  if (in(kDevanagari, cp)) return ScriptClass::Devanagari;
  if (in(kOtherLetter, cp)) return ScriptClass::OtherLetter;
  return ScriptClass::Other;
}

std::size_t ScriptHistogram::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

ScriptHistogram& ScriptHistogram::operator+=(const ScriptHistogram& o) {
  for (std::size_t i = 0; i < kScriptClassCount; ++i) counts[i] += o.counts[i];
  return *this;
}

ScriptHistogram script_histogram(std::string_view text) {
  ScriptHistogram h;
  utf8::for_each(text, [&](char32_t cp, std::size_t, std::size_t) { ++h[classify_char(cp)]; });
  return h;
}

std::vector<ScriptClass> default_scripts(std::string_view code) {
  using S = ScriptClass;
  static const std::map<std::string, std::vector<S>, std::less<>> table = [] {
    std::map<std::string, std::vector<S>, std::less<>> t;
    for (const char* c : {"en", "es", "fr", "de", "pt", "it", "pl", "cs", "hu", "ro", "sk", "tr",
                          "sl", "lt", "et", "id", "lv", "vi", "hr", "sq", "ms", "bs", "sw", "az",
                          "mg", "so", "ha", "rw", "mi", "tk", "pis"})
      t[c] = {S::Latin};
    for (const char* c : {"ru", "uk", "bg", "be", "mk", "kk", "ky", "mn"}) t[c] = {S::Cyrillic};
    t["sr"] = {S::Cyrillic, S::Latin};
    for (const char* c : {"ar", "fa", "ur", "ps", "prs", "ug"}) t[c] = {S::Arabic};
    for (const char* c : {"hi", "ne"}) t[c] = {S::Devanagari};
    t["zh"] = {S::Cjk};
    return t;
  }();
  auto it = table.find(code);
  return it == table.end() ? std::vector<S>{} : it->second;
}

LanguageRegistry LanguageRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open language table " + path.string());
  LanguageRegistry reg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 4)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    if (!is_language_code(f[0]))
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad language code '" + f[0] + "'");
    if (reg.contains(f[0]))
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": duplicate code '" + f[0] + "'");
    reg.add({f[0], f[1], f[2], parse_tier(f[3]), default_scripts(f[0])});
  }
  return reg;
}

const LanguageRegistry& LanguageRegistry::shipped() {
  static const LanguageRegistry reg = load(data_dir() / "languages.tsv");
  return reg;
}

void LanguageRegistry::add(LanguageInfo info) {
  if (!is_language_code(info.code)) throw ConfigError("bad language code '" + info.code + "'");
  std::string code = info.code;
  languages_.insert_or_assign(std::move(code), std::move(info));
}

bool LanguageRegistry::contains(std::string_view code) const {
  return languages_.find(code) != languages_.end();
}

const LanguageInfo& LanguageRegistry::at(std::string_view code) const {
  auto it = languages_.find(code);
  if (it == languages_.end()) throw UnknownLanguage(std::string(code));
  return it->second;
}

std::vector<std::string> LanguageRegistry::codes() const {
  std::vector<std::string> out;
  out.reserve(languages_.size());
  for (const auto& [code, _] : languages_) out.push_back(code);
  return out;
}

ResourceTier LanguageRegistry::pair_tier(std::string_view src, std::string_view tgt) const {
  if (tgt == "zh" && src != "zh") return tier(src);
  if (src == "zh" && tgt != "zh") return tier(tgt);
  return lower_tier(tier(src), tier(tgt));
}

ResourceTier classify_tier(std::string_view code, const LanguageRegistry& reg) { return reg.tier(code); }

double primary_script_ratio(std::string_view text, std::string_view lang, const LanguageRegistry& reg) {
  const auto& scripts = reg.at(lang).scripts;
  if (scripts.empty()) return 1.0;
  const ScriptHistogram h = script_histogram(text);
  const std::size_t denom = h.total() - h[ScriptClass::Whitespace] - h[ScriptClass::Punctuation] -
                            h[ScriptClass::Digit];
  if (denom == 0) return 1.0;
  std::size_t num = 0;
  for (ScriptClass s : scripts) num += h[s];
  return static_cast<double>(num) / static_cast<double>(denom);
}

std::filesystem::path data_dir() {
#ifdef ZHMT_DATA_DIR
  return std::filesystem::path(ZHMT_DATA_DIR);
#else
  return std::filesystem::path("data");
#endif
}

}  // namespace zhmt
