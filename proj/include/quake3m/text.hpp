#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Small UTF-8 / script helpers shared by the corpus filter, tokenizer and
// city-name normalizer. Invalid byte sequences decode to U+FFFD and never
// throw.

namespace quake3m::text {

// Decodes UTF-8 bytes into codepoints. Malformed sequences yield U+FFFD per
// offending byte.
std::vector<char32_t> decode_utf8(std::string_view s);

// Appends the UTF-8 encoding of cp to out.
void append_utf8(std::string& out, char32_t cp);

std::string encode_utf8(const std::vector<char32_t>& cps);

// CJK Unified Ideographs, Hiragana or Katakana.
bool is_cjk(char32_t cp);

// Latin letter (ASCII, Latin-1 supplement, Latin Extended-A/B).
bool is_latin_letter(char32_t cp);

// Word-forming codepoint for boundary checks: letters (Latin, Greek,
// Cyrillic), ASCII digits, underscore and combining marks. CJK codepoints are
// deliberately not word-forming, so a Latin term adjacent to CJK text sits at
// a word boundary.
bool is_word_cp(char32_t cp);

// Simple case fold covering ASCII and Latin-1/Extended-A ranges.
char32_t fold_cp(char32_t cp);

bool contains_cjk(std::string_view s);

// Case-insensitive needle search with word boundaries on both sides.
// Boundaries are positions where the neighbour is absent or not word-forming.
bool contains_word(std::string_view haystack, std::string_view needle);

// Raw byte substring search (exact; used for CJK terms).
bool contains_substring(std::string_view haystack, std::string_view needle);

// Lowercased unigram tokens: maximal runs of word-forming codepoints become
// one token each; every CJK codepoint is its own token.
std::vector<std::string> tokenize(std::string_view s);

std::string trim(std::string_view s);
std::string collapse_whitespace(std::string_view s);

// Title-cases Latin words ("el monte" -> "El Monte"); non-Latin text is left
// untouched.
std::string title_case_latin(std::string_view s);

// Lowercases and collapses whitespace; used as a lookup key.
std::string fold_key(std::string_view s);

}  // namespace quake3m::text
