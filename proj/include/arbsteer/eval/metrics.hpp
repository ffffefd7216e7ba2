#pragma once

#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace arbsteer::eval {

/// Lowercase, strip punctuation, drop articles, split on whitespace.
inline std::vector<std::string> normalize(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    clean.push_back(static_cast<char>(std::tolower(c)));
  }
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && cur != "a" && cur != "an" && cur != "the") out.push_back(cur);
    cur.clear();
  };
  for (char c : clean) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

inline int em(std::string_view pred, std::string_view gold) {
  return normalize(pred) == normalize(gold) ? 1 : 0;
}

/// Token-multiset F1.
inline double f1(std::string_view pred, std::string_view gold) {
  const auto p = normalize(pred);
  const auto g = normalize(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  int common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double prec = static_cast<double>(common) / static_cast<double>(p.size());
  const double rec = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * prec * rec / (prec + rec);
}

}  // namespace arbsteer::eval
