#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "arbsteer/synthkb/kb.hpp"
#include "json.hpp"

namespace arbsteer::model {

using TokenId = std::int32_t;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kEoaToken = "<eoa>";
inline constexpr std::string_view kAnswerCue = "ans:";
inline constexpr std::string_view kQuestionMarker = "question:";
inline constexpr std::string_view kContextMarker = "context:";
inline constexpr std::string_view kSystemPrompt = "You are a context-grounded QA model.";

/// Word-level vocabulary: special tokens, template words, then KB entities.
class Vocab {
 public:
  Vocab() = default;

  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
        throw ContractError("duplicate vocabulary token '" + tokens_[i] + "'");
      }
    }
  }

  static Vocab build(const std::vector<synthkb::FactRecord>& kb) {
    std::vector<std::string> toks{std::string(kPadToken), std::string(kEoaToken),
                                  std::string(kAnswerCue), std::string(kQuestionMarker),
                                  std::string(kContextMarker)};
    auto words = synthkb::template_words();
    for (auto& w : synthkb::tokenize(kSystemPrompt)) words.insert(w);
    for (const auto& w : words) {
      if (std::find(toks.begin(), toks.end(), w) == toks.end()) toks.push_back(w);
    }
    std::vector<synthkb::Entity> ents;
    for (const auto& f : kb) {
      ents.push_back(f.subject);
      ents.push_back(f.object);
    }
    std::sort(ents.begin(), ents.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    ents.erase(std::unique(ents.begin(), ents.end()), ents.end());
    for (const auto& e : ents) {
      for (auto& t : synthkb::tokenize(e.surface)) {
        if (std::find(toks.begin() + 5, toks.end(), t) == toks.end()) toks.push_back(t);
      }
    }
    return Vocab(std::move(toks));
  }

  std::size_t size() const noexcept { return tokens_.size(); }

  bool contains(std::string_view tok) const { return index_.count(std::string(tok)) != 0; }

  TokenId id(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    if (it == index_.end()) throw ContractError("token '" + std::string(tok) + "' not in vocabulary");
    return it->second;
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw ContractError("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::vector<TokenId> encode(const std::vector<std::string>& toks) const {
    std::vector<TokenId> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  std::vector<TokenId> encode_text(std::string_view text) const {
    return encode(synthkb::tokenize(text));
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) s += ' ';
      s += token(ids[i]);
    }
    return s;
  }

  TokenId eoa() const { return id(kEoaToken); }
  TokenId answer_cue() const { return id(kAnswerCue); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tokens"] = tokens_;
    return j;
  }
  static Vocab from_json(const nlohmann::json& j) {
    return Vocab(j.at("tokens").get<std::vector<std::string>>());
  }

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace arbsteer::model
