#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "arbsteer/model/decode.hpp"
#include "arbsteer/model/prompt.hpp"
#include "arbsteer/model/transformer.hpp"
#include "arbsteer/numerics/adam.hpp"
#include "arbsteer/synthkb/datasets.hpp"

namespace arbsteer::model {

/// Mixture of training items. Recall items are bare questions answered by the
/// true object. Copy items carry a context asserting a random object, which is
/// the target; a fraction of copy items instead use an irrelevant context and
/// keep the true object as the target. Irrelevant contexts are off-topic
/// sentences or, for the scrambled share, a shuffled bag of frame and tail
/// words around the object.
struct Curriculum {
  double copy_fraction = 0.5;
  double irrelevant_fraction = 0.4;  // share of copy items with irrelevant contexts
  double same_pool_fraction = 0.5;   // random object from the fact's own relation pool
  double scrambled_fraction = 0.5;   // share of irrelevant items built from shuffled filler words

  static Curriculum recall_only() { return {0.0, 0.0, 0.5, 0.0}; }
};

struct TrainConfig {
  std::size_t max_epochs = 100;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double min_lr_fraction = 0.1;
  std::size_t warmup_steps = 100;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  double gate_recall = 0.95;
  double gate_copy = 0.95;
  std::size_t gate_probe = 200;  // held-out facts scored each epoch before a full gate check
  std::size_t min_epochs = 1;
  bool require_gate = true;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const Curriculum& c) {
  j = {{"copy_fraction", c.copy_fraction},
       {"irrelevant_fraction", c.irrelevant_fraction},
       {"same_pool_fraction", c.same_pool_fraction},
       {"scrambled_fraction", c.scrambled_fraction}};
}
inline void from_json(const nlohmann::json& j, Curriculum& c) {
  c.copy_fraction = j.value("copy_fraction", c.copy_fraction);
  c.irrelevant_fraction = j.value("irrelevant_fraction", c.irrelevant_fraction);
  c.same_pool_fraction = j.value("same_pool_fraction", c.same_pool_fraction);
  c.scrambled_fraction = j.value("scrambled_fraction", c.scrambled_fraction);
}
inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"max_epochs", c.max_epochs},     {"batch_size", c.batch_size},
       {"lr", c.lr},                     {"min_lr_fraction", c.min_lr_fraction},
       {"warmup_steps", c.warmup_steps}, {"weight_decay", c.weight_decay},
       {"clip_norm", c.clip_norm},       {"gate_recall", c.gate_recall},
       {"gate_copy", c.gate_copy},       {"gate_probe", c.gate_probe},
       {"min_epochs", c.min_epochs},     {"require_gate", c.require_gate},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.min_lr_fraction = j.value("min_lr_fraction", c.min_lr_fraction);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.gate_recall = j.value("gate_recall", c.gate_recall);
  c.gate_copy = j.value("gate_copy", c.gate_copy);
  c.gate_probe = j.value("gate_probe", c.gate_probe);
  c.min_epochs = j.value("min_epochs", c.min_epochs);
  c.require_gate = j.value("require_gate", c.require_gate);
  c.seed = j.value("seed", c.seed);
}

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double recall_em = -1.0;  // -1 when not measured this epoch
  double copy_em = -1.0;
  bool full_gate = false;   // metrics cover every held-out fact
  double seconds = 0.0;
};

inline void to_json(nlohmann::json& j, const EpochLog& e) {
  j = {{"epoch", e.epoch},     {"mean_loss", e.mean_loss}, {"recall_em", e.recall_em},
       {"copy_em", e.copy_em}, {"full_gate", e.full_gate}, {"seconds", e.seconds}};
}

struct GateMetrics {
  double recall_em = 0.0;
  double copy_em = 0.0;
  std::size_t n = 0;
};

class GateNotReached : public std::runtime_error {
 public:
  GateNotReached(const std::string& what, std::vector<EpochLog> log)
      : std::runtime_error(what), log_(std::move(log)) {}
  const std::vector<EpochLog>& log() const noexcept { return log_; }

 private:
  std::vector<EpochLog> log_;
};

/// One supervised sequence: prompt plus answer, with loss on the answer rows.
struct TrainItem {
  std::vector<TokenId> tokens;
  std::vector<std::size_t> rows;
  std::vector<TokenId> targets;
};

inline TrainItem make_item(const Vocab& vocab, const PromptSpec& prompt, const synthkb::Entity& answer) {
  TrainItem it;
  it.tokens = prompt.tokens;
  const auto ans = vocab.encode(synthkb::tokenize(answer.surface));
  std::size_t row = it.tokens.size() - 1;
  for (TokenId a : ans) {
    it.rows.push_back(row++);
    it.targets.push_back(a);
    it.tokens.push_back(a);
  }
  it.rows.push_back(row);
  it.targets.push_back(vocab.eoa());
  return it;
}

/// Recall prompt: question without context.
inline PromptSpec recall_prompt(const Vocab& vocab, const synthkb::FactRecord& f, Topology topo) {
  const auto q = synthkb::tokenize(synthkb::query_text(f));
  return assemble_prompt(vocab, q, {}, topo, f.subject, f.object);
}

/// Copy prompt: a context asserting `obj` for the fact's subject.
inline PromptSpec copy_prompt(const Vocab& vocab, const synthkb::FactRecord& f,
                              const synthkb::Entity& obj, std::size_t tmpl, Topology topo) {
  const auto q = synthkb::tokenize(synthkb::query_text(f));
  const auto ctx = synthkb::tokenize(synthkb::authoritative_context(f, obj, tmpl));
  return assemble_prompt(vocab, q, ctx, topo, f.subject, obj);
}

namespace detail {

inline synthkb::Entity random_object(const synthkb::FactRecord& f,
                                     const std::map<std::string, std::vector<synthkb::Entity>>& pools,
                                     double same_pool_fraction, std::mt19937_64& rng) {
  std::bernoulli_distribution same(same_pool_fraction);
  const auto dom = same(rng) ? Domain::Same : Domain::Different;
  if (auto e = synthkb::choose_counterfactual(f, dom, pools, rng)) return *e;
  if (auto e = synthkb::choose_counterfactual(f, Domain::Same, pools, rng)) return *e;
  return f.object;
}

/// Filler words of the off-topic frames and the relevant-context tails.
inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w;
    auto add = [&](std::string_view t) {
      for (auto& tok : synthkb::tokenize(synthkb::fill(std::string(t), "cf", ""))) {
        if (tok != "." && tok != ",") w.push_back(tok);
      }
    };
    for (auto t : synthkb::kIrrelevantFrames) add(t);
    for (auto t : synthkb::kRelevantTails) add(t);
    return w;
  }();
  return words;
}

/// 3-14 filler words with the object at a random position. The tail words
/// also pad relevant contexts, and the wide length range covers the short
/// authoritative contexts, so neither vocabulary nor length cues copying.
inline std::vector<std::string> scrambled_context(const synthkb::Entity& obj, std::mt19937_64& rng) {
  const auto& pool = filler_words();
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(3, 14)(rng);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(pool[pick(rng)]);
  const auto at = static_cast<std::ptrdiff_t>(std::uniform_int_distribution<std::size_t>(0, n)(rng));
  const auto o = synthkb::tokenize(obj.surface);
  out.insert(out.begin() + at, o.begin(), o.end());
  out.push_back(".");
  return out;
}

}  // namespace detail

/// Training items for one epoch. Every fact contributes one item; whether it
/// is a recall or a copy item is drawn from the curriculum.
inline std::vector<TrainItem> epoch_items(const std::vector<synthkb::FactRecord>& kb, const Vocab& vocab,
                                          const Curriculum& cur, std::uint64_t seed, std::size_t epoch) {
  const auto pools = synthkb::object_pools(kb);
  std::mt19937_64 rng(synthkb::splitmix64(seed ^ (0x7A1Aull + epoch)));
  std::bernoulli_distribution is_copy(cur.copy_fraction);
  std::bernoulli_distribution is_irrelevant(cur.irrelevant_fraction);
  std::bernoulli_distribution is_scrambled(cur.scrambled_fraction);
  std::bernoulli_distribution flip(0.5);
  std::uniform_int_distribution<std::size_t> pick_auth(0, 5);
  std::uniform_int_distribution<std::size_t> pick_frame(0, synthkb::kIrrelevantFrames.size() - 1);

  std::vector<TrainItem> items;
  items.reserve(kb.size());
  for (const auto& f : kb) {
    const Topology topo = flip(rng) ? Topology::ContextFirst : Topology::QueryFirst;
    if (!is_copy(rng)) {
      items.push_back(make_item(vocab, recall_prompt(vocab, f, topo), f.object));
      continue;
    }
    const synthkb::Entity obj = detail::random_object(f, pools, cur.same_pool_fraction, rng);
    const auto q = synthkb::tokenize(synthkb::query_text(f));
    if (is_irrelevant(rng)) {
      const auto ctx = is_scrambled(rng) ? detail::scrambled_context(obj, rng)
                                         : synthkb::tokenize(synthkb::irrelevant_sentence(obj, pick_frame(rng)));
      items.push_back(make_item(vocab, assemble_prompt(vocab, q, ctx, topo, f.subject, obj), f.object));
      continue;
    }
    // Relation assertions: the authoritative bank, or the plain assertion with a tail.
    std::vector<std::string> ctx;
    if (flip(rng)) {
      ctx = synthkb::tokenize(synthkb::authoritative_context(f, obj, pick_auth(rng)));
    } else if (auto s = synthkb::relevant_sentence(f, obj, rng)) {
      ctx = synthkb::tokenize(*s);
    } else {
      ctx = synthkb::tokenize(synthkb::authoritative_context(f, obj, pick_auth(rng)));
    }
    items.push_back(make_item(vocab, assemble_prompt(vocab, q, ctx, topo, f.subject, obj), obj));
  }
  std::shuffle(items.begin(), items.end(), rng);
  return items;
}

/// Recall EM without context and copy EM under a random-object authoritative
/// context, over the given facts.
template <class T>
GateMetrics gate_metrics(const Transformer<T>& m, const Vocab& vocab,
                         const std::vector<synthkb::FactRecord>& kb,
                         const std::vector<std::size_t>& facts, std::uint64_t seed) {
  const auto pools = synthkb::object_pools(kb);
  std::mt19937_64 rng(synthkb::splitmix64(seed ^ 0x6A7Eull));
  std::uniform_int_distribution<std::size_t> pick_auth(0, 5);
  GateMetrics g;
  std::size_t rec = 0, cop = 0;
  for (std::size_t k = 0; k < facts.size(); ++k) {
    const auto& f = kb[facts[k]];
    const Topology topo = (k % 2) ? Topology::ContextFirst : Topology::QueryFirst;
    const auto want = vocab.encode(synthkb::tokenize(f.object.surface));
    auto r = greedy_decode(m, vocab, recall_prompt(vocab, f, topo), want.size() + 1);
    rec += r.answer == want;
    const synthkb::Entity obj = detail::random_object(f, pools, 0.5, rng);
    const auto want_c = vocab.encode(synthkb::tokenize(obj.surface));
    auto c = greedy_decode(m, vocab, copy_prompt(vocab, f, obj, pick_auth(rng), topo), want_c.size() + 1);
    cop += c.answer == want_c;
  }
  g.n = facts.size();
  if (g.n) {
    g.recall_em = static_cast<double>(rec) / static_cast<double>(g.n);
    g.copy_em = static_cast<double>(cop) / static_cast<double>(g.n);
  }
  return g;
}

template <class T>
struct TrainResult {
  Transformer<T> model;
  std::vector<EpochLog> log;
  std::vector<double> loss_curve;  // per optimizer step
  GateMetrics gate;
  bool gate_reached = false;
};

using ProgressFn = std::function<void(const EpochLog&)>;

/// Trains until the behavior gate holds on the held-out facts or max_epochs
/// is exhausted. Throws GateNotReached (with the log) when require_gate is set
/// and the gate was never met.
template <class T>
TrainResult<T> train(const std::vector<synthkb::FactRecord>& kb, const Vocab& vocab,
                     const ModelConfig& mcfg, const Curriculum& cur, const TrainConfig& cfg,
                     const ProgressFn& progress = {}) {
  if (kb.empty()) throw ContractError("train: empty knowledge base");
  if (cfg.batch_size == 0) throw ContractError("train: batch_size must be >= 1");
  TrainResult<T> res{Transformer<T>(mcfg), {}, {}, {}, false};
  Transformer<T>& m = res.model;
  numerics::AdamOptions ao;
  ao.lr = cfg.lr;
  ao.weight_decay = cfg.weight_decay;
  ao.clip_norm = cfg.clip_norm;
  numerics::Adam<T> opt(m.params().all(), ao);

  const auto held = synthkb::split_kb(kb).evaluation;
  std::vector<std::size_t> probe(held.begin(),
                                 held.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.gate_probe, held.size())));
  const std::size_t steps_per_epoch = (kb.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, steps_per_epoch * cfg.max_epochs);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto items = epoch_items(kb, vocab, cur, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t nsteps = 0;
    for (std::size_t b0 = 0; b0 < items.size(); b0 += cfg.batch_size) {
      Batch batch;
      for (std::size_t i = b0; i < std::min(items.size(), b0 + cfg.batch_size); ++i) {
        batch.add(items[i].tokens, items[i].rows, items[i].targets);
      }
      numerics::Tape<T> tape;
      Var<T> loss = m.loss(tape, batch);
      tape.backward(loss);
      std::vector<Tensor<T>> grads;
      for (const auto* p : m.params().all()) grads.push_back(tape.grad_of(*p));
      std::vector<const Tensor<T>*> gp;
      for (const auto& g : grads) gp.push_back(&g);
      const std::size_t step = opt.steps();
      double scale;
      if (step < cfg.warmup_steps) {
        scale = static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
      } else {
        const double prog = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(std::max<std::size_t>(1, total_steps - cfg.warmup_steps));
        scale = cfg.min_lr_fraction +
                (1.0 - cfg.min_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, prog)));
      }
      opt.step(gp, scale);
      const double l = static_cast<double>(loss.value()[0]);
      res.loss_curve.push_back(l);
      loss_sum += l;
      ++nsteps;
    }

    EpochLog e;
    e.epoch = epoch;
    e.mean_loss = nsteps ? loss_sum / static_cast<double>(nsteps) : 0.0;
    if (epoch + 1 >= cfg.min_epochs && !held.empty()) {
      auto g = gate_metrics(m, vocab, kb, probe, cfg.seed);
      e.recall_em = g.recall_em;
      e.copy_em = g.copy_em;
      if (g.recall_em >= cfg.gate_recall && g.copy_em >= cfg.gate_copy && probe.size() < held.size()) {
        g = gate_metrics(m, vocab, kb, held, cfg.seed);
        e.recall_em = g.recall_em;
        e.copy_em = g.copy_em;
        e.full_gate = true;
      } else {
        e.full_gate = probe.size() == held.size();
      }
      if (e.full_gate) res.gate = g;
      if (e.full_gate && g.recall_em >= cfg.gate_recall && g.copy_em >= cfg.gate_copy) {
        res.gate_reached = true;
      }
    }
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(e);
    if (progress) progress(e);
    if (res.gate_reached) break;
  }
  if (!res.gate_reached && cfg.require_gate) {
    throw GateNotReached("behavior gate not reached within " + std::to_string(cfg.max_epochs) +
                             " epochs",
                         res.log);
  }
  return res;
}

}  // namespace arbsteer::model
