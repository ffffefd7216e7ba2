#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "arbsteer/model/prompt.hpp"
#include "arbsteer/model/transformer.hpp"

namespace arbsteer::model {

struct StepRecord {
  TokenId token = 0;
  double prob = 0.0;  // probability of `token` under the generating model
};

template <class T>
struct Decoded {
  std::vector<TokenId> answer;   // generated tokens, end-of-answer excluded
  std::vector<StepRecord> steps; // one per generated token, end-of-answer included
  std::vector<double> step0_probs;   // full next-token distribution at the first step
  bool stopped = false;          // true when end-of-answer was emitted
};

/// Index of the largest value; ties resolve to the lowest index.
template <class T>
std::size_t argmax_lowest(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// Softmax computed in double for probability bookkeeping.
template <class T>
std::vector<double> probabilities(std::span<const T> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  numerics::softmax_inplace(std::span<double>(p));
  return p;
}

/// Greedy decoding. The whole sequence is re-run at every step, so edit hooks
/// at prompt positions are applied on every step.
template <class T>
Decoded<T> greedy_decode(const Transformer<T>& model, std::span<const TokenId> prompt, TokenId eoa,
                         std::size_t max_new, const Hooks<T>* hooks = nullptr) {
  if (max_new == 0) throw ContractError("greedy_decode: max_new must be >= 1");
  Decoded<T> out;
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  for (std::size_t step = 0; step < max_new; ++step) {
    if (seq.size() > model.config().max_seq) break;
    const std::vector<T> logits = model.last_logits(seq, hooks);
    const auto tok = static_cast<TokenId>(argmax_lowest(std::span<const T>(logits)));
    const auto p = probabilities(std::span<const T>(logits));
    if (step == 0) out.step0_probs.assign(p.begin(), p.end());
    out.steps.push_back({tok, p[static_cast<std::size_t>(tok)]});
    if (tok == eoa) {
      out.stopped = true;
      break;
    }
    out.answer.push_back(tok);
    seq.push_back(tok);
  }
  return out;
}

template <class T>
Decoded<T> greedy_decode(const Transformer<T>& model, const Vocab& vocab, const PromptSpec& prompt,
                         std::size_t max_new, const Hooks<T>* hooks = nullptr) {
  return greedy_decode(model, std::span<const TokenId>(prompt.tokens), vocab.eoa(), max_new, hooks);
}

}  // namespace arbsteer::model
