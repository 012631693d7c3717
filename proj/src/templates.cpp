#include "zhmt/templates.hpp"

#include <fstream>
#include <sstream>

#include "zhmt/errors.hpp"

namespace zhmt {

namespace {

enum class Slot { SrcLang, TgtLang, SrcText };

struct Piece {
  bool literal;
  std::string text;
  Slot slot;
};

std::vector<Piece> split_pattern(std::string_view pattern, std::size_t line) {
  std::vector<Piece> out;
  std::string lit;
  bool seen[3] = {false, false, false};
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '}') throw TemplateError("unbalanced '}'", line);
    if (pattern[i] != '{') {
      lit.push_back(pattern[i]);
      continue;
    }
    const auto close = pattern.find('}', i);
    if (close == std::string_view::npos) throw TemplateError("unterminated placeholder", line);
    const std::string_view name = pattern.substr(i + 1, close - i - 1);
    Slot slot;
    if (name == "src_lang") slot = Slot::SrcLang;
    else if (name == "tgt_lang") slot = Slot::TgtLang;
    else if (name == "src_text") slot = Slot::SrcText;
    else throw TemplateError("unknown placeholder {" + std::string(name) + "}", line);
    // {src_lang}/{tgt_lang} may recur (several shipped rows name the language twice);
    // {src_text} must appear exactly once.
    if (slot == Slot::SrcText && seen[2]) throw TemplateError("{src_text} appears more than once", line);
    seen[static_cast<int>(slot)] = true;
    if (!lit.empty()) out.push_back({true, std::move(lit), Slot::SrcText});
    lit.clear();
    out.push_back({false, {}, slot});
    i = close;
  }
  if (!lit.empty()) out.push_back({true, std::move(lit), Slot::SrcText});
  if (!seen[2]) throw TemplateError("missing {src_text}", line);
  return out;
}

}  // namespace

InstructionTemplate parse_template(std::string_view pattern, std::size_t id, std::size_t line) {
  split_pattern(pattern, line);
  return {id, std::string(pattern)};
}

std::vector<InstructionTemplate> parse_templates(std::string_view text) {
  std::vector<InstructionTemplate> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_template(line, out.size(), lineno));
  }
  return out;
}

std::vector<InstructionTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open template file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_templates(ss.str());
}

std::vector<InstructionTemplate> load_shipped_templates() {
  auto t = load_templates(data_dir() / "templates.txt");
  if (t.size() != kShippedTemplateCount)
    throw TemplateError("shipped template table has " + std::to_string(t.size()) + " rows, expected " +
                            std::to_string(kShippedTemplateCount),
                        0);
  return t;
}

InstructionExample render(const InstructionTemplate& tpl, const ParallelRecord& record,
                          const LanguageRegistry& reg) {
  InstructionExample ex;
  ex.src_lang = record.src_lang;
  ex.tgt_lang = record.tgt_lang;
  ex.template_id = tpl.id;
  ex.target = record.tgt_text;
  for (const Piece& p : split_pattern(tpl.pattern, 0)) {
    if (p.literal) {
      ex.prompt += p.text;
      continue;
    }
    switch (p.slot) {
      case Slot::SrcLang: ex.prompt += reg.name(record.src_lang); break;
      case Slot::TgtLang: ex.prompt += reg.name(record.tgt_lang); break;
      case Slot::SrcText: ex.prompt += record.src_text; break;
    }
  }
  return ex;
}

const InstructionTemplate& pick_template(Rng& rng, const std::vector<InstructionTemplate>& templates) {
  if (templates.empty()) throw TemplateError("no templates to choose from", 0);
  return templates[rng.uniform_index(templates.size())];
}

}  // namespace zhmt
