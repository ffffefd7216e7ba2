#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "arbsteer/model/checkpoint.hpp"
#include "arbsteer/model/decode.hpp"
#include "arbsteer/model/train.hpp"
#include "arbsteer/numerics/tape.hpp"

using namespace arbsteer;
using namespace arbsteer::model;
using numerics::Tensor;

namespace {

struct Fixture {
  std::vector<synthkb::FactRecord> kb = synthkb::generate_kb(2, 3, 12);
  Vocab vocab = Vocab::build(kb);
  synthkb::ArbitrationSet arb = synthkb::make_arbitration_pairs(kb, 2);
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

ModelConfig tiny(std::size_t vocab, std::size_t d = 16, std::size_t layers = 2) {
  return {d, layers, 2, 2 * d, vocab, 64, 3};
}

const synthkb::ArbitrationExample& first_of(Mode mode) {
  for (const auto& ex : fx().arb.examples)
    if (ex.mode == mode) return ex;
  throw std::logic_error("no example");
}

}  // namespace

TEST(Vocab, SpecialsFirstAndEntitiesSingleTokens) {
  const auto& v = fx().vocab;
  EXPECT_EQ(v.id(kPadToken), 0);
  EXPECT_EQ(v.id(kEoaToken), 1);
  EXPECT_EQ(v.id(kAnswerCue), 2);
  for (const auto& f : fx().kb) {
    ASSERT_EQ(synthkb::tokenize(f.subject.surface).size(), 1u);
    EXPECT_TRUE(v.contains(synthkb::tokenize(f.subject.surface)[0]));
  }
  EXPECT_THROW(v.id("definitely-not-a-token"), ContractError);
  EXPECT_EQ(Vocab::from_json(v.to_json()).tokens(), v.tokens());
}

TEST(Prompt, RcContextFirstHasAllLocations) {
  const auto& ex = first_of(Mode::RC);
  const auto p = assemble_prompt(fx().vocab, ex, Topology::ContextFirst);
  ASSERT_TRUE(p.available(Location::Subj));
  ASSERT_TRUE(p.available(Location::ObjCf));
  ASSERT_EQ(p.spans.at(Location::Last).size(), 1u);
  EXPECT_EQ(p.spans.at(Location::Last)[0], p.tokens.size() - 1);
  EXPECT_EQ(p.tokens.back(), fx().vocab.answer_cue());
  for (Location l : {Location::Subj, Location::ObjCf}) {
    for (auto i : p.spans.at(l)) {
      EXPECT_GE(i, p.context_begin);
      EXPECT_LT(i, p.context_end);
    }
  }
  EXPECT_LT(p.context_end, p.query_end);  // context precedes the question
}

TEST(Prompt, IcHasNoContextSubject) {
  const auto& ex = first_of(Mode::IC);
  const auto p = assemble_prompt(fx().vocab, ex, Topology::QueryFirst);
  EXPECT_FALSE(resolve_span(p, Location::Subj, SubjectSpan::ContextOnly).has_value());
  EXPECT_TRUE(p.available(Location::ObjCf));
  // The fallback policy points at the subject inside the question.
  const auto s = resolve_span(p, Location::Subj, SubjectSpan::ContextThenQuery);
  ASSERT_TRUE(s.has_value());
  EXPECT_GE(s->front(), p.query_begin);
  EXPECT_LT(s->back(), p.query_end);
  EXPECT_LT(p.query_end, p.context_end);
}

TEST(Prompt, EmptyContextOnlyHasLast) {
  const auto& f = fx().kb[0];
  const auto p = recall_prompt(fx().vocab, f, Topology::QueryFirst);
  EXPECT_FALSE(p.available(Location::Subj));
  EXPECT_FALSE(p.available(Location::ObjCf));
  EXPECT_TRUE(p.available(Location::Last));
  EXPECT_EQ(p.context_begin, p.context_end);
  // Without context the two topologies coincide.
  EXPECT_EQ(p.tokens, recall_prompt(fx().vocab, f, Topology::ContextFirst).tokens);
}

TEST(Forward, PassThroughEditHooksAreBitwiseIdentity) {
  Transformer<float> m(tiny(fx().vocab.size()));
  const auto p = assemble_prompt(fx().vocab, first_of(Mode::RC));
  Hooks<float> h;
  h.edits.push_back([](std::size_t, Tensor<float>&) {});
  const auto a = m.forward(p.tokens);
  const auto b = m.forward(p.tokens, &h);
  EXPECT_TRUE(numerics::bitwise_equal(a, b));
}

TEST(Forward, AttentionCaptureIsCausalAndNormalized) {
  Transformer<double> m(tiny(fx().vocab.size()));
  const auto p = assemble_prompt(fx().vocab, first_of(Mode::RC));
  Hooks<double> h;
  std::size_t calls = 0;
  h.on_attention = [&](std::size_t layer, const Tensor<double>& a) {
    EXPECT_EQ(layer, calls++);
    const std::size_t H = a.dim(0), T = a.dim(1);
    for (std::size_t hh = 0; hh < H; ++hh) {
      for (std::size_t i = 0; i < T; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < T; ++j) {
          const double x = a[(hh * T + i) * T + j];
          if (j > i) EXPECT_EQ(x, 0.0);
          s += x;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  };
  m.forward(p.tokens, &h);
  EXPECT_EQ(calls, 2u);
}

TEST(Forward, ZeroingLayerZeroMatchesZeroEmbeddings) {
  // A zero residual is a fixed point of a pre-norm block (every projection of
  // zero is zero), so zeroing the output of block 0 must equal running the
  // model on zeroed embedding tables.
  Transformer<double> m(tiny(fx().vocab.size()));
  const auto p = assemble_prompt(fx().vocab, first_of(Mode::RC));
  Hooks<double> h;
  h.edits.push_back([](std::size_t layer, Tensor<double>& x) {
    if (layer == 0) x.fill(0.0);
  });
  const auto edited = m.forward(p.tokens, &h);
  Parameters<double> zeroed = m.params();
  zeroed.tok_emb.fill(0.0);
  zeroed.pos_emb.fill(0.0);
  Transformer<double> z(m.config(), zeroed);
  const auto ref = z.forward(p.tokens);
  ASSERT_EQ(edited.shape(), ref.shape());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(edited[i], ref[i], 1e-12);
}

TEST(Forward, CausalityIsExact) {
  Transformer<float> m(tiny(fx().vocab.size()));
  auto toks = assemble_prompt(fx().vocab, first_of(Mode::RC)).tokens;
  const std::size_t p = toks.size() / 2;
  const auto a = m.forward(toks);
  for (std::size_t i = p + 1; i < toks.size(); ++i) toks[i] = static_cast<TokenId>((toks[i] + 7) % fx().vocab.size());
  const auto b = m.forward(toks);
  for (std::size_t r = 0; r <= p; ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) ASSERT_EQ(a.at(r, c), b.at(r, c)) << r;
  }
}

TEST(Forward, RejectsBadInput) {
  Transformer<float> m(tiny(fx().vocab.size()));
  EXPECT_THROW(m.forward(std::vector<TokenId>{}), ContractError);
  EXPECT_THROW(m.forward(std::vector<TokenId>{static_cast<TokenId>(fx().vocab.size())}), ContractError);
  EXPECT_THROW(m.forward(std::vector<TokenId>(65, 3)), ContractError);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny(10);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Decode, ArgmaxTiesGoToLowestId) {
  const std::vector<float> v{1, 3, 3, 2};
  EXPECT_EQ(argmax_lowest(std::span<const float>(v)), 1u);
}

TEST(Decode, ArgmaxInvariantToConstantShift) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(20), s(20);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = nd(rng);
    for (std::size_t i = 0; i < v.size(); ++i) s[i] = v[i] + 37.5;
    EXPECT_EQ(argmax_lowest(std::span<const double>(v)), argmax_lowest(std::span<const double>(s)));
  }
}

TEST(Decode, ForcedLogitWins) {
  Transformer<double> m(tiny(fx().vocab.size()));
  auto& P = m.params();
  P.final_gain.fill(1.0);
  P.unembed.fill(0.0);
  const std::size_t d = m.config().d_model;
  for (std::size_t j = 0; j < d; ++j) P.unembed.at(7, j) = 1e4 / static_cast<double>(d);
  // Pin the final residual to all ones so logit 7 is 1e4 (up to the norm eps) and all
  // others are 0.
  Hooks<double> h;
  h.edits.push_back([&](std::size_t layer, Tensor<double>& x) {
    if (layer + 1 == m.config().n_layers) x.fill(1.0);
  });
  const auto p = assemble_prompt(fx().vocab, first_of(Mode::RC));
  const auto logits = m.last_logits(p.tokens, &h);
  // The final norm divides by sqrt(1 + eps).
  EXPECT_NEAR(logits[7], 1e4 / std::sqrt(1.0 + 1e-6), 1e-6);
  const auto dec = greedy_decode(m, std::span<const TokenId>(p.tokens), fx().vocab.eoa(), 3, &h);
  ASSERT_FALSE(dec.answer.empty());
  for (auto t : dec.answer) EXPECT_EQ(t, 7);
}

TEST(Decode, DeterministicAndRecordsEveryStep) {
  Transformer<float> m(tiny(fx().vocab.size()));
  const auto p = assemble_prompt(fx().vocab, first_of(Mode::RC));
  const auto a = greedy_decode(m, fx().vocab, p, 4);
  const auto b = greedy_decode(m, fx().vocab, p, 4);
  EXPECT_EQ(a.answer, b.answer);
  EXPECT_EQ(a.steps.size(), a.answer.size() + (a.stopped ? 1 : 0));
  EXPECT_EQ(a.step0_probs.size(), fx().vocab.size());
  EXPECT_THROW(greedy_decode(m, fx().vocab, p, 0), ContractError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  Transformer<float> m(tiny(fx().vocab.size()));
  const auto bytes = serialize_checkpoint(m);
  const auto back = deserialize_checkpoint<float>(bytes);
  EXPECT_EQ(back.config(), m.config());
  const auto a = m.params().all();
  const auto b = back.params().all();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(numerics::bitwise_equal(*a[i], *b[i]));
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, RejectsCorruption) {
  Transformer<float> m(tiny(fx().vocab.size()));
  auto bytes = serialize_checkpoint(m);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes + "x"), ContractError);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes.substr(0, bytes.size() - 1)), ContractError);
  bytes[0] ^= 1;
  EXPECT_THROW(deserialize_checkpoint<float>(bytes), ContractError);
}

TEST(Train, ItemsSuperviseOnlyTheAnswer) {
  const auto& f = fx().kb[0];
  const auto p = recall_prompt(fx().vocab, f, Topology::QueryFirst);
  const auto it = make_item(fx().vocab, p, f.object);
  ASSERT_EQ(it.rows.size(), 2u);
  EXPECT_EQ(it.rows[0], p.tokens.size() - 1);  // the cue predicts the object
  EXPECT_EQ(it.targets[0], fx().vocab.id(synthkb::tokenize(f.object.surface)[0]));
  EXPECT_EQ(it.targets[1], fx().vocab.eoa());
}

TEST(Train, CurriculumMix) {
  Curriculum c;
  const auto items = epoch_items(fx().kb, fx().vocab, c, 1, 0);
  EXPECT_EQ(items.size(), fx().kb.size());
  std::size_t with_ctx = 0;
  const auto ctx_marker = fx().vocab.id(kContextMarker);
  for (const auto& it : items) with_ctx += std::count(it.tokens.begin(), it.tokens.end(), ctx_marker) > 0;
  EXPECT_GT(with_ctx, items.size() / 4);
  EXPECT_LT(with_ctx, 3 * items.size() / 4);
  for (const auto& it : epoch_items(fx().kb, fx().vocab, Curriculum::recall_only(), 1, 0)) {
    EXPECT_EQ(std::count(it.tokens.begin(), it.tokens.end(), ctx_marker), 0);
  }
}

TEST(Train, ScrambledContextsHoldTheObjectAndKnownWords) {
  std::mt19937_64 rng(4);
  const auto& f = fx().kb[0];
  const auto obj = synthkb::tokenize(f.object.surface);
  std::size_t shortest = 100, longest = 0;
  for (int i = 0; i < 400; ++i) {
    const auto ctx = detail::scrambled_context(f.object, rng);
    EXPECT_EQ(synthkb::count_occurrences(ctx, obj), 1u);
    EXPECT_EQ(ctx.back(), ".");
    for (const auto& w : ctx) EXPECT_TRUE(fx().vocab.contains(w)) << w;
    const std::size_t filler = ctx.size() - 1 - obj.size();
    shortest = std::min(shortest, filler);
    longest = std::max(longest, filler);
  }
  EXPECT_EQ(shortest, 3u);
  EXPECT_EQ(longest, 14u);
}

TEST(Train, IrrelevantItemsTargetTheTrueObject) {
  Curriculum c;
  c.copy_fraction = 1.0;
  c.irrelevant_fraction = 1.0;
  c.scrambled_fraction = 0.5;
  const auto items = epoch_items(fx().kb, fx().vocab, c, 3, 0);
  std::set<TokenId> true_first;
  for (const auto& f : fx().kb) true_first.insert(fx().vocab.id(synthkb::tokenize(f.object.surface)[0]));
  for (const auto& it : items) EXPECT_TRUE(true_first.count(it.targets[0]));
}

TEST(Train, SameSeedSameFinalLoss) {
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.batch_size = 8;
  tc.require_gate = false;
  tc.gate_probe = 4;
  const auto a = train<float>(fx().kb, fx().vocab, tiny(fx().vocab.size()), {}, tc);
  const auto b = train<float>(fx().kb, fx().vocab, tiny(fx().vocab.size()), {}, tc);
  ASSERT_FALSE(a.loss_curve.empty());
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(Train, GateFailureCarriesTheLog) {
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.batch_size = 8;
  tc.gate_probe = 4;
  try {
    train<float>(fx().kb, fx().vocab, tiny(fx().vocab.size()), {}, tc);
    FAIL() << "expected GateNotReached";
  } catch (const GateNotReached& e) {
    EXPECT_EQ(e.log().size(), 1u);
  }
}

TEST(Train, RecallOnlyCurriculumDoesNotCopy) {
  // Ablation: without copy items the model learns the facts but does not
  // learn to read the answer off an authoritative context.
  const auto kb = synthkb::generate_kb(4, 2, 16);
  const auto vocab = Vocab::build(kb);
  TrainConfig tc;
  tc.max_epochs = 60;
  tc.batch_size = 8;
  tc.lr = 3e-3;
  tc.warmup_steps = 10;
  tc.require_gate = false;
  tc.gate_copy = 2.0;  // unreachable, so every epoch runs
  const auto res = train<float>(kb, vocab, tiny(vocab.size(), 32, 2), Curriculum::recall_only(), tc);
  std::vector<std::size_t> all(kb.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto g = gate_metrics(res.model, vocab, kb, all, 0);
  EXPECT_GT(g.recall_em, 0.8);
  EXPECT_LT(g.copy_em, 0.3);
}
