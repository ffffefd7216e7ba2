#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace arbsteer::synthkb {

/// Word-level tokenisation shared by the generators and the model vocabulary:
/// lowercase, whitespace split, trailing punctuation and the possessive "'s"
/// peeled into their own tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    std::vector<std::string> tail;
    while (!word.empty()) {
      const char c = word.back();
      if (c == '.' || c == ',' || c == '?' || c == '!' || c == ';') {
        tail.emplace_back(1, c);
        word.pop_back();
      } else if (word.size() > 2 && word.ends_with("'s")) {
        tail.emplace_back("'s");
        word.resize(word.size() - 2);
      } else {
        break;
      }
    }
    if (!word.empty()) out.push_back(word);
    out.insert(out.end(), tail.rbegin(), tail.rend());
    word.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

/// Whitespace-delimited word count of a surface sentence.
inline std::size_t word_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool sp = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!sp && !in_word) ++n;
    in_word = !sp;
  }
  return n;
}

/// Number of (possibly overlapping) occurrences of `needle` in `hay`.
inline std::size_t count_occurrences(const std::vector<std::string>& hay,
                                     const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(i))) ++n;
  }
  return n;
}

/// Replaces every "{key}" in `tmpl` with `value`.
inline std::string fill(std::string tmpl, std::string_view key, std::string_view value) {
  const std::string pat = "{" + std::string(key) + "}";
  for (std::size_t pos = tmpl.find(pat); pos != std::string::npos;
       pos = tmpl.find(pat, pos + value.size())) {
    tmpl.replace(pos, pat.size(), value);
  }
  return tmpl;
}

inline std::string join(const std::vector<std::string>& words, std::string_view sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += sep;
    s += words[i];
  }
  return s;
}

}  // namespace arbsteer::synthkb
