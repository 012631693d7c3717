#pragma once

#include <compare>
#include <optional>
#include <string>

namespace zhmt {

struct MonoRecord {
  std::string text;
  std::string source_id;

  bool operator==(const MonoRecord&) const = default;
};

// Directed language pair, e.g. en->zh.
struct LanguagePair {
  std::string src;
  std::string tgt;

  auto operator<=>(const LanguagePair&) const = default;
  std::string str() const { return src + "-" + tgt; }
};

struct ParallelRecord {
  std::string src_lang;
  std::string tgt_lang;
  std::string src_text;
  std::string tgt_text;
  std::string source_id;

  LanguagePair pair() const { return {src_lang, tgt_lang}; }
  bool operator==(const ParallelRecord&) const = default;
};

struct FilterVerdict {
  static constexpr const char* kAccepted = "accepted";

  bool kept = true;
  std::string stage = kAccepted;
  std::string reason = kAccepted;
  std::optional<double> measured;

  static FilterVerdict accept() { return {}; }
  static FilterVerdict reject(std::string stage, std::string reason,
                              std::optional<double> measured = std::nullopt) {
    return {false, std::move(stage), std::move(reason), measured};
  }
};

}  // namespace zhmt
