#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace zhmt {

enum class TokenMode { Whitespace, Character, Byte };

std::string_view to_string(TokenMode m);
TokenMode parse_token_mode(std::string_view s);

// Character mode for scripts written without spaces, whitespace mode otherwise.
TokenMode default_token_mode(std::string_view lang);

using TokenId = std::int32_t;

struct ReservedIds {
  TokenId pad = 0;
  TokenId unk = 1;
  TokenId bos = 2;
  TokenId eos = 3;
};

struct TokenSequence {
  std::vector<TokenId> tokens;
  std::string lang;
};

class TokenizerSpec {
 public:
  // Reserved ids 0..3 followed by one entry per byte: 260 ids, byte mode for every language.
  static TokenizerSpec byte_level();
  // Reserved ids only, per-language default modes. Enough for counting and segmentation.
  static TokenizerSpec counting();

  TokenizerSpec(TokenMode default_mode, std::map<std::string, TokenMode> modes,
                std::vector<std::string> vocab, ReservedIds reserved = {},
                std::string unk_marker = "<unk>");

  static TokenizerSpec load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  static TokenizerSpec parse(std::string_view text);

  TokenMode mode(std::string_view lang) const;
  std::size_t vocab_size() const { return vocab_.size(); }
  const ReservedIds& reserved() const { return reserved_; }
  const std::string& unk_marker() const { return unk_marker_; }
  std::optional<TokenId> lookup(std::string_view surface) const;
  const std::string& surface(TokenId id) const;
  // Id of the byte token for `b`, or -1 if the vocab has no byte entries.
  TokenId byte_id(unsigned char b) const { return byte_ids_[b]; }
  bool has_bytes() const { return byte_ids_[0] >= 0; }
  bool is_reserved(TokenId id) const;

  bool operator==(const TokenizerSpec& o) const {
    return default_mode_ == o.default_mode_ && modes_ == o.modes_ && vocab_ == o.vocab_ &&
           unk_marker_ == o.unk_marker_ && reserved_.pad == o.reserved_.pad &&
           reserved_.unk == o.reserved_.unk && reserved_.bos == o.reserved_.bos &&
           reserved_.eos == o.reserved_.eos;
  }

 private:
  TokenMode default_mode_;
  std::map<std::string, TokenMode> modes_;
  std::vector<std::string> vocab_;
  ReservedIds reserved_;
  std::string unk_marker_;
  std::unordered_map<std::string, TokenId> index_;
  std::array<TokenId, 256> byte_ids_{};
};

// Surface pieces: whitespace-delimited words, scalar values, or single bytes.
std::vector<std::string_view> segment(std::string_view text, TokenMode mode);

TokenSequence tokenize(std::string_view text, std::string_view lang, const TokenizerSpec& spec);
std::string detokenize(const TokenSequence& seq, const TokenizerSpec& spec);
std::size_t token_count(std::string_view text, std::string_view lang, const TokenizerSpec& spec);

}  // namespace zhmt
