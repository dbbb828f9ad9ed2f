#include "quake3m/text.hpp"

#include <algorithm>
#include <cctype>

namespace quake3m::text {

namespace {

constexpr char32_t kReplacement = 0xFFFD;

}  // namespace

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
      out.push_back(b0);
      ++i;
      continue;
    }
    int len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    bool ok = true;
    for (int k = 1; k < len; ++k) {
      unsigned char bk = static_cast<unsigned char>(s[i + k]);
      if ((bk & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (bk & 0x3F);
    }
    if (!ok || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF) ||
        (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode_utf8(const std::vector<char32_t>& cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) append_utf8(out, cp);
  return out;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) ||   // CJK Unified Ideographs
         (cp >= 0x3040 && cp <= 0x309F) ||   // Hiragana
         (cp >= 0x30A0 && cp <= 0x30FF);     // Katakana
}

bool is_latin_letter(char32_t cp) {
  if ((cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z')) return true;
  if (cp >= 0xC0 && cp <= 0xFF && cp != 0xD7 && cp != 0xF7) return true;  // Latin-1 letters
  if (cp >= 0x0100 && cp <= 0x024F) return true;                         // Latin Extended-A/B
  return false;
}

bool is_word_cp(char32_t cp) {
  if (cp >= '0' && cp <= '9') return true;
  if (cp == '_') return true;
  if (is_latin_letter(cp)) return true;
  if (cp >= 0x0300 && cp <= 0x036F) return true;  // combining marks join words
  if (cp >= 0x0370 && cp <= 0x03FF) return true;  // Greek
  if (cp >= 0x0400 && cp <= 0x04FF) return true;  // Cyrillic
  return false;
}

char32_t fold_cp(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;  // Latin-1 uppercase
  // Latin Extended-A upper/lower pairs (parity flips around U+0138 and U+0149)
  if (cp >= 0x0100 && cp <= 0x0137 && (cp % 2) == 0) return cp + 1;
  if (cp >= 0x0139 && cp <= 0x0148 && (cp % 2) == 1) return cp + 1;
  if (cp >= 0x014A && cp <= 0x0177 && (cp % 2) == 0) return cp + 1;
  if (cp >= 0x0179 && cp <= 0x017E && (cp % 2) == 1) return cp + 1;
  return cp;
}

bool contains_cjk(std::string_view s) {
  for (char32_t cp : decode_utf8(s)) {
    if (is_cjk(cp)) return true;
  }
  return false;
}

bool contains_word(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  std::vector<char32_t> hay = decode_utf8(haystack);
  std::vector<char32_t> pat = decode_utf8(needle);
  for (char32_t& cp : hay) cp = fold_cp(cp);
  for (char32_t& cp : pat) cp = fold_cp(cp);
  if (pat.size() > hay.size()) return false;
  for (std::size_t start = 0; start + pat.size() <= hay.size(); ++start) {
    if (!std::equal(pat.begin(), pat.end(), hay.begin() + start)) continue;
    std::size_t end = start + pat.size();
    bool left_ok = start == 0 || !is_word_cp(hay[start - 1]);
    bool right_ok = end == hay.size() || !is_word_cp(hay[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

bool contains_substring(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  return haystack.find(needle) != std::string_view::npos;
}

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::vector<char32_t> cps = decode_utf8(s);
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  };
  for (char32_t cp : cps) {
    if (is_cjk(cp)) {
      flush();
      std::string one;
      append_utf8(one, cp);
      tokens.push_back(one);
    } else if (is_word_cp(cp)) {
      append_utf8(current, fold_cp(cp));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = false;
  for (char c : trim(s)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      in_space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::string title_case_latin(std::string_view s) {
  std::vector<char32_t> cps = decode_utf8(s);
  bool at_word_start = true;
  for (char32_t& cp : cps) {
    if (is_latin_letter(cp)) {
      if (at_word_start) {
        char32_t folded = fold_cp(cp);
        if (folded >= 'a' && folded <= 'z') {
          cp = folded - 0x20;
        } else if (folded >= 0xE0 && folded <= 0xFE && folded != 0xF7) {
          cp = folded - 0x20;
        } else {
          cp = folded;
        }
      } else {
        cp = fold_cp(cp);
      }
      at_word_start = false;
    } else if (cp >= '0' && cp <= '9') {
      at_word_start = false;
    } else {
      at_word_start = true;
    }
  }
  return encode_utf8(cps);
}

std::string fold_key(std::string_view s) {
  std::vector<char32_t> cps = decode_utf8(collapse_whitespace(s));
  for (char32_t& cp : cps) cp = fold_cp(cp);
  return encode_utf8(cps);
}

}  // namespace quake3m::text
