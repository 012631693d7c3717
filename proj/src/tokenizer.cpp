#include "zhmt/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "zhmt/errors.hpp"
#include "zhmt/registry.hpp"
#include "zhmt/utf8.hpp"

namespace zhmt {

namespace {

bool is_space(char32_t cp) { return classify_char(cp) == ScriptClass::Whitespace; }

std::string byte_surface(unsigned char b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "<0x%02X>", b);
  return buf;
}

std::optional<unsigned char> parse_byte_surface(std::string_view s) {
  if (s.size() != 6 || s.substr(0, 3) != "<0x" || s[5] != '>') return std::nullopt;
  unsigned value = 0;
  for (char c : s.substr(3, 2)) {
    value <<= 4;
    if (c >= '0' && c <= '9') value |= static_cast<unsigned>(c - '0');
    else if (c >= 'A' && c <= 'F') value |= static_cast<unsigned>(c - 'A' + 10);
    else return std::nullopt;
  }
  return static_cast<unsigned char>(value);
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out.push_back(s[i]);
      continue;
    }
    switch (s[++i]) {
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 't': out.push_back('\t'); break;
      default: out.push_back(s[i]);
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(TokenMode m) {
  switch (m) {
    case TokenMode::Whitespace: return "whitespace";
    case TokenMode::Character: return "character";
    case TokenMode::Byte: return "byte";
  }
  return "?";
}

TokenMode parse_token_mode(std::string_view s) {
  if (s == "whitespace") return TokenMode::Whitespace;
  if (s == "character") return TokenMode::Character;
  if (s == "byte") return TokenMode::Byte;
  throw ConfigError("unknown token mode '" + std::string(s) + "'");
}

TokenMode default_token_mode(std::string_view lang) {
  static const std::set<std::string, std::less<>> character = {"zh", "ja", "th", "lo", "my", "km", "bo"};
  return character.count(lang) ? TokenMode::Character : TokenMode::Whitespace;
}

TokenizerSpec::TokenizerSpec(TokenMode default_mode, std::map<std::string, TokenMode> modes,
                             std::vector<std::string> vocab, ReservedIds reserved, std::string unk_marker)
    : default_mode_(default_mode),
      modes_(std::move(modes)),
      vocab_(std::move(vocab)),
      reserved_(reserved),
      unk_marker_(std::move(unk_marker)) {
  const TokenId ids[] = {reserved_.pad, reserved_.unk, reserved_.bos, reserved_.eos};
  for (int i = 0; i < 4; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_.size())
      throw ConfigError("reserved token id out of vocabulary range");
    for (int j = 0; j < i; ++j)
      if (ids[i] == ids[j]) throw ConfigError("reserved token ids must be distinct");
  }
  byte_ids_.fill(-1);
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (vocab_[i].empty()) throw ConfigError("empty vocabulary entry at id " + std::to_string(i));
    auto [it, inserted] = index_.emplace(vocab_[i], static_cast<TokenId>(i));
    if (!inserted) throw ConfigError("duplicate vocabulary entry '" + vocab_[i] + "'");
    if (!is_reserved(static_cast<TokenId>(i)))
      if (auto b = parse_byte_surface(vocab_[i])) byte_ids_[*b] = static_cast<TokenId>(i);
  }
  const bool some = std::any_of(byte_ids_.begin(), byte_ids_.end(), [](TokenId t) { return t >= 0; });
  const bool all = std::all_of(byte_ids_.begin(), byte_ids_.end(), [](TokenId t) { return t >= 0; });
  if (some && !all) throw ConfigError("vocabulary has a partial byte table");
  bool needs_bytes = default_mode_ == TokenMode::Byte;
  for (const auto& [_, m] : modes_) needs_bytes |= m == TokenMode::Byte;
  if (needs_bytes && !all) throw ConfigError("byte mode requires all 256 byte tokens in the vocabulary");
}

TokenizerSpec TokenizerSpec::byte_level() {
  std::vector<std::string> vocab = {"<pad>", "<unk>", "<s>", "</s>"};
  for (int b = 0; b < 256; ++b) vocab.push_back(byte_surface(static_cast<unsigned char>(b)));
  return TokenizerSpec(TokenMode::Byte, {}, std::move(vocab));
}

TokenizerSpec TokenizerSpec::counting() {
  std::map<std::string, TokenMode> modes;
  for (const auto& code : LanguageRegistry::shipped().codes()) modes[code] = default_token_mode(code);
  return TokenizerSpec(TokenMode::Whitespace, std::move(modes), {"<pad>", "<unk>", "<s>", "</s>"});
}

TokenMode TokenizerSpec::mode(std::string_view lang) const {
  auto it = modes_.find(std::string(lang));
  return it == modes_.end() ? default_mode_ : it->second;
}

std::optional<TokenId> TokenizerSpec::lookup(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& TokenizerSpec::surface(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size())
    throw InvalidToken("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab_.size()));
  return vocab_[static_cast<std::size_t>(id)];
}

bool TokenizerSpec::is_reserved(TokenId id) const {
  return id == reserved_.pad || id == reserved_.unk || id == reserved_.bos || id == reserved_.eos;
}

std::string TokenizerSpec::serialize() const {
  std::ostringstream out;
  out << "# zhmt tokenizer v1\n";
  out << "default_mode " << to_string(default_mode_) << "\n";
  for (const auto& [lang, m] : modes_) out << "mode " << lang << " " << to_string(m) << "\n";
  out << "unk_marker " << escape(unk_marker_) << "\n";
  out << "pad " << reserved_.pad << "\nunk " << reserved_.unk << "\nbos " << reserved_.bos << "\neos "
      << reserved_.eos << "\n";
  out << "vocab " << vocab_.size() << "\n";
  for (const auto& v : vocab_) out << escape(v) << "\n";
  return out.str();
}

TokenizerSpec TokenizerSpec::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  TokenMode def = TokenMode::Whitespace;
  std::map<std::string, TokenMode> modes;
  ReservedIds reserved;
  std::string unk_marker = "<unk>";
  std::vector<std::string> vocab;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError("tokenizer line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "default_mode") {
      std::string m;
      fields >> m;
      def = parse_token_mode(m);
    } else if (key == "mode") {
      std::string lang, m;
      if (!(fields >> lang >> m)) fail("expected 'mode <lang> <mode>'");
      modes[lang] = parse_token_mode(m);
    } else if (key == "unk_marker") {
      unk_marker = unescape(line.substr(11));
    } else if (key == "pad" || key == "unk" || key == "bos" || key == "eos") {
      TokenId id;
      if (!(fields >> id)) fail("expected an id after '" + key + "'");
      (key == "pad" ? reserved.pad : key == "unk" ? reserved.unk : key == "bos" ? reserved.bos : reserved.eos) = id;
    } else if (key == "vocab") {
      std::size_t n;
      if (!(fields >> n)) fail("expected a count after 'vocab'");
      vocab.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) fail("vocabulary truncated");
        ++lineno;
        vocab.push_back(unescape(line));
      }
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  return TokenizerSpec(def, std::move(modes), std::move(vocab), reserved, std::move(unk_marker));
}

TokenizerSpec TokenizerSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tokenizer file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void TokenizerSpec::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write tokenizer file " + path.string());
  out << serialize();
}

std::vector<std::string_view> segment(std::string_view text, TokenMode mode) {
  std::vector<std::string_view> out;
  switch (mode) {
    case TokenMode::Byte:
      out.reserve(text.size());
      for (std::size_t i = 0; i < text.size(); ++i) out.push_back(text.substr(i, 1));
      break;
    case TokenMode::Character:
      utf8::for_each(text, [&](char32_t, std::size_t off, std::size_t n) { out.push_back(text.substr(off, n)); });
      break;
    case TokenMode::Whitespace: {
      std::size_t start = std::string_view::npos;
      utf8::for_each(text, [&](char32_t cp, std::size_t off, std::size_t) {
        if (is_space(cp)) {
          if (start != std::string_view::npos) out.push_back(text.substr(start, off - start));
          start = std::string_view::npos;
        } else if (start == std::string_view::npos) {
          start = off;
        }
      });
      if (start != std::string_view::npos) out.push_back(text.substr(start));
      break;
    }
  }
  return out;
}

TokenSequence tokenize(std::string_view text, std::string_view lang, const TokenizerSpec& spec) {
  TokenSequence seq;
  seq.lang = std::string(lang);
  const TokenMode mode = spec.mode(lang);
  if (mode == TokenMode::Byte) {
    seq.tokens.reserve(text.size());
    for (unsigned char b : text) seq.tokens.push_back(spec.byte_id(b));
    return seq;
  }
  for (std::string_view piece : segment(text, mode)) {
    auto id = spec.lookup(piece);
    seq.tokens.push_back(id && !spec.is_reserved(*id) ? *id : spec.reserved().unk);
  }
  return seq;
}

std::string detokenize(const TokenSequence& seq, const TokenizerSpec& spec) {
  const TokenMode mode = spec.mode(seq.lang);
  const ReservedIds& r = spec.reserved();
  std::string out;
  bool first = true;
  for (TokenId id : seq.tokens) {
    const std::string& s = spec.surface(id);  // validates the id
    if (id == r.pad || id == r.bos || id == r.eos) continue;
    std::string piece;
    if (id == r.unk) {
      piece = spec.unk_marker();
    } else if (auto b = parse_byte_surface(s); b && spec.byte_id(*b) == id) {
      piece.assign(1, static_cast<char>(*b));
    } else {
      piece = s;
    }
    if (mode == TokenMode::Whitespace && !first) out.push_back(' ');
    out += piece;
    first = false;
  }
  return out;
}

std::size_t token_count(std::string_view text, std::string_view lang, const TokenizerSpec& spec) {
  switch (spec.mode(lang)) {
    case TokenMode::Byte: return text.size();
    case TokenMode::Character: return utf8::length(text);
    case TokenMode::Whitespace: return segment(text, TokenMode::Whitespace).size();
  }
  return 0;
}

}  // namespace zhmt
