#pragma once

#include <map>
#include <optional>
#include <vector>

#include "arbsteer/model/vocab.hpp"
#include "arbsteer/synthkb/datasets.hpp"

namespace arbsteer::model {

using Span = std::vector<std::size_t>;

/// An assembled prompt: token ids plus the positions of each steering
/// location. A location missing from `spans` is unavailable for this prompt.
struct PromptSpec {
  std::vector<TokenId> tokens;
  Topology topology = Topology::QueryFirst;
  std::size_t query_begin = 0, query_end = 0;      // [begin, end) incl. marker
  std::size_t context_begin = 0, context_end = 0;  // empty range when no context
  std::map<Location, Span> spans;
  Span query_subject;  // subject occurrence inside the query segment

  bool available(Location l) const { return spans.count(l) != 0; }
};

/// How the subject location is resolved when the context lacks the subject.
enum class SubjectSpan {
  ContextOnly,       // strict: unavailable when absent from the context
  ContextThenQuery,  // fall back to the subject mention in the question
};

namespace detail {

inline std::optional<Span> find_first(const std::vector<TokenId>& toks, std::size_t begin,
                                      std::size_t end, const std::vector<TokenId>& needle) {
  if (needle.empty() || end < begin || end - begin < needle.size()) return std::nullopt;
  for (std::size_t i = begin; i + needle.size() <= end; ++i) {
    bool ok = true;
    for (std::size_t k = 0; k < needle.size() && ok; ++k) ok = toks[i + k] == needle[k];
    if (ok) {
      Span s;
      for (std::size_t k = 0; k < needle.size(); ++k) s.push_back(i + k);
      return s;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Builds [system, question, context, cue] (QueryFirst) or
/// [system, context, question, cue] (ContextFirst). An empty context
/// omits the context segment entirely.
inline PromptSpec assemble_prompt(const Vocab& vocab, const std::vector<std::string>& query,
                                  const std::vector<std::string>& context, Topology topology,
                                  const synthkb::Entity& subject, const synthkb::Entity& cf) {
  PromptSpec p;
  p.topology = topology;
  p.tokens = vocab.encode_text(kSystemPrompt);

  auto put_query = [&] {
    p.query_begin = p.tokens.size();
    p.tokens.push_back(vocab.id(kQuestionMarker));
    for (auto id : vocab.encode(query)) p.tokens.push_back(id);
    p.query_end = p.tokens.size();
  };
  auto put_context = [&] {
    p.context_begin = p.context_end = p.tokens.size();
    if (context.empty()) return;
    p.tokens.push_back(vocab.id(kContextMarker));
    for (auto id : vocab.encode(context)) p.tokens.push_back(id);
    p.context_end = p.tokens.size();
  };
  if (topology == Topology::QueryFirst) {
    put_query();
    put_context();
  } else {
    put_context();
    put_query();
  }
  p.tokens.push_back(vocab.answer_cue());

  const auto subj_ids = vocab.encode(synthkb::tokenize(subject.surface));
  const auto cf_ids = vocab.encode(synthkb::tokenize(cf.surface));
  if (auto s = detail::find_first(p.tokens, p.context_begin, p.context_end, subj_ids)) {
    p.spans[Location::Subj] = *s;
  }
  if (auto s = detail::find_first(p.tokens, p.context_begin, p.context_end, cf_ids)) {
    p.spans[Location::ObjCf] = *s;
  }
  p.spans[Location::Last] = {p.tokens.size() - 1};
  if (auto s = detail::find_first(p.tokens, p.query_begin, p.query_end, subj_ids)) {
    p.query_subject = *s;
  }
  return p;
}

inline PromptSpec assemble_prompt(const Vocab& vocab, const synthkb::ArbitrationExample& ex,
                                  Topology topology) {
  return assemble_prompt(vocab, ex.query, ex.sentence, topology, ex.record.base.subject,
                         ex.record.cf_object);
}

inline PromptSpec assemble_prompt(const Vocab& vocab, const synthkb::ArbitrationExample& ex) {
  return assemble_prompt(vocab, ex, ex.topology);
}

inline PromptSpec assemble_prompt(const Vocab& vocab, const synthkb::EvalScenario& sc,
                                  Topology topology) {
  return assemble_prompt(vocab, sc.query, sc.context, topology, sc.record.base.subject,
                         sc.record.cf_object);
}

inline PromptSpec assemble_prompt(const Vocab& vocab, const synthkb::EvalScenario& sc) {
  return assemble_prompt(vocab, sc, sc.topology);
}

/// Token positions for `loc`, or nullopt when unavailable under `policy`.
inline std::optional<Span> resolve_span(const PromptSpec& p, Location loc,
                                        SubjectSpan policy = SubjectSpan::ContextThenQuery) {
  if (auto it = p.spans.find(loc); it != p.spans.end()) return it->second;
  if (loc == Location::Subj && policy == SubjectSpan::ContextThenQuery && !p.query_subject.empty()) {
    return p.query_subject;
  }
  return std::nullopt;
}

}  // namespace arbsteer::model
