#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "zhmt/records.hpp"
#include "zhmt/registry.hpp"
#include "zhmt/rng.hpp"

namespace zhmt {

struct InstructionTemplate {
  std::size_t id = 0;
  std::string pattern;  // placeholders: {src_lang} {tgt_lang} {src_text}
};

struct InstructionExample {
  std::string prompt;
  std::string target;
  std::string src_lang;
  std::string tgt_lang;
  std::size_t template_id = 0;
};

// Throws TemplateError (with `line`) on unknown placeholders, unbalanced braces,
// or a missing or repeated {src_text}. Language placeholders may repeat.
InstructionTemplate parse_template(std::string_view pattern, std::size_t id, std::size_t line = 0);

std::vector<InstructionTemplate> parse_templates(std::string_view text);
std::vector<InstructionTemplate> load_templates(const std::filesystem::path& path);
std::vector<InstructionTemplate> load_shipped_templates();

// Number of templates in the shipped table.
inline constexpr std::size_t kShippedTemplateCount = 39;

// Single-pass substitution with English language names; braces inside src_text are kept.
InstructionExample render(const InstructionTemplate& tpl, const ParallelRecord& record,
                          const LanguageRegistry& reg = LanguageRegistry::shipped());

const InstructionTemplate& pick_template(Rng& rng, const std::vector<InstructionTemplate>& templates);

}  // namespace zhmt
