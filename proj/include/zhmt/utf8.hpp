#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace zhmt::utf8 {

// True iff `s` is well-formed UTF-8 (no overlongs, surrogates or values past U+10FFFF).
bool valid(std::string_view s) noexcept;

// Decodes valid UTF-8. Malformed sequences decode to U+FFFD one byte at a time.
std::vector<char32_t> decode(std::string_view s);

void append(std::string& out, char32_t cp);
std::string encode(const std::vector<char32_t>& cps);

// Number of Unicode scalar values.
std::size_t length(std::string_view s) noexcept;

// Iterates scalar values of `s`, calling fn(cp, byte_offset, byte_length).
template <class Fn>
void for_each(std::string_view s, Fn&& fn);

namespace detail {
// Returns the byte length of the sequence starting at s[i] and writes its value;
// returns 1 with U+FFFD on malformed input.
std::size_t next(std::string_view s, std::size_t i, char32_t& cp) noexcept;
}  // namespace detail

template <class Fn>
void for_each(std::string_view s, Fn&& fn) {
  std::size_t i = 0;
  while (i < s.size()) {
    char32_t cp;
    std::size_t n = detail::next(s, i, cp);
    fn(cp, i, n);
    i += n;
  }
}

}  // namespace zhmt::utf8
