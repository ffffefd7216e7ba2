#include <gtest/gtest.h>

#include <random>

#include "arbsteer/arbitration.hpp"
#include "arbsteer/model/decode.hpp"
#include "arbsteer/synthkb/datasets.hpp"
#include "arbsteer/synthkb/kb.hpp"

using namespace arbsteer;
using namespace arbsteer::arbitration;
using capture::PooledActivation;
using numerics::Tensor;

namespace {

PooledActivation act(Mode mode, std::uint32_t layer, Location loc, std::vector<float> v) {
  PooledActivation a;
  a.mode = mode;
  a.layer = layer;
  a.location = loc;
  a.vector = std::move(v);
  a.span_size = 1;
  return a;
}

std::vector<PooledActivation> random_acts(std::uint64_t seed, std::size_t n, std::size_t d) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  std::vector<PooledActivation> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(d);
    for (auto& x : v) x = nd(rng);
    out.push_back(act(i % 2 ? Mode::RC : Mode::IC, 0, Location::Last, v));
  }
  return out;
}

}  // namespace

TEST(Centroids, HandExample) {
  const std::vector<PooledActivation> acts{
      act(Mode::IC, 3, Location::Last, {1, 2}), act(Mode::IC, 3, Location::Last, {3, 4}),
      act(Mode::RC, 3, Location::Last, {0, 0}), act(Mode::RC, 3, Location::Last, {0, 2}),
      act(Mode::IC, 2, Location::Last, {100, 100})};  // other layer, ignored
  const auto v = extract_vector(acts, 3, Location::Last, "h");
  EXPECT_EQ(v.vector, (std::vector<double>{2, 2}));
  EXPECT_EQ(v.n_ic, 2u);
  EXPECT_EQ(v.n_rc, 2u);
  EXPECT_EQ(v.source_hash, "h");
}

TEST(Centroids, MatchIndependentMeans) {
  const auto acts = random_acts(1, 40, 5);
  const auto c = compute_centroids(acts, 0, Location::Last);
  for (std::size_t j = 0; j < 5; ++j) {
    double ic = 0, rc = 0;
    for (std::size_t i = 0; i < acts.size(); i += 2) ic += acts[i].vector[j];
    for (std::size_t i = 1; i < acts.size(); i += 2) rc += acts[i].vector[j];
    EXPECT_NEAR(c.mu_ic[j], ic / 20.0, 1e-9);
    EXPECT_NEAR(c.mu_rc[j], rc / 20.0, 1e-9);
  }
}

TEST(BuildVector, Antisymmetric) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto acts = random_acts(s, 10, 6);
    const auto c = compute_centroids(acts, 0, Location::Last);
    const auto a = build_vector(c.mu_ic, c.mu_rc, {});
    const auto b = build_vector(c.mu_rc, c.mu_ic, {});
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(a.vector[j], -b.vector[j]);
  }
}

TEST(BuildVector, Errors) {
  const std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(build_vector(a, b, {}), ContractError);
  EXPECT_THROW(build_vector(a, a, {0, Location::Last, 0, 1, ""}), ContractError);
  const std::vector<PooledActivation> only_ic{act(Mode::IC, 0, Location::Subj, {1})};
  try {
    compute_centroids(only_ic, 0, Location::Subj);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("RC"), std::string::npos);
  }
}

TEST(VectorJson, RoundTrip) {
  const std::vector<double> a{0.5, -1.25, 3}, b{0, 0, 0};
  const auto v = build_vector(a, b, {4, Location::ObjCf, 7, 8, "abc"});
  const nlohmann::json j = v;
  const auto back = j.get<ArbitrationVector>();
  EXPECT_EQ(back.vector, v.vector);
  EXPECT_EQ(back.layer, 4u);
  EXPECT_EQ(back.location, Location::ObjCf);
  EXPECT_EQ(back.n_ic, 7u);
  EXPECT_EQ(back.source_hash, "abc");
}

TEST(Steering, RegimeSignValidation) {
  EXPECT_NO_THROW((SteeringConfig{0, Location::Last, 3, Regime::CopyToRecall}.validate()));
  EXPECT_NO_THROW((SteeringConfig{0, Location::Last, -3, Regime::RecallToCopy}.validate()));
  EXPECT_NO_THROW((SteeringConfig{0, Location::Last, 0, Regime::RecallToCopy}.validate()));
  EXPECT_THROW((SteeringConfig{0, Location::Last, -1, Regime::CopyToRecall}.validate()), ContractError);
  EXPECT_THROW((SteeringConfig{0, Location::Last, 1, Regime::RecallToCopy}.validate()), ContractError);
}

TEST(Steering, OnlySpanRowsChange) {
  auto h = Tensor<double>::matrix(4, 2, {1, 1, 2, 2, 3, 3, 4, 4});
  const auto before = h;
  ArbitrationVector v{1, Location::Subj, {1, -1}, 1, 1, ""};
  const std::vector<std::size_t> span{1, 2};
  apply_steering(h, {1, Location::Subj, 3, Regime::CopyToRecall}, v, span);
  EXPECT_EQ(h.at(1, 0), 5);
  EXPECT_EQ(h.at(1, 1), -1);
  EXPECT_EQ(h.at(2, 0), 6);
  for (std::size_t r : {0u, 3u}) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(h.at(r, c), before.at(r, c));
  }
  EXPECT_THROW(apply_steering(h, {0, Location::Subj, 3, Regime::CopyToRecall}, v, span), ContractError);
  EXPECT_THROW(apply_steering(h, {1, Location::Subj, 3, Regime::CopyToRecall}, v, {}), ContractError);
}

TEST(Steering, LocalToLayerAndCausal) {
  const auto kb = synthkb::generate_kb(4, 3, 12);
  const auto vocab = model::Vocab::build(kb);
  const auto arb = synthkb::make_arbitration_pairs(kb, 4);
  model::Transformer<float> m({16, 3, 2, 32, vocab.size(), 64, 5});
  const auto& ex = arb.examples[1];
  const auto p = model::assemble_prompt(vocab, ex);
  const auto span = *model::resolve_span(p, Location::ObjCf, model::SubjectSpan::ContextOnly);
  std::vector<double> dir(16);
  for (std::size_t j = 0; j < dir.size(); ++j) dir[j] = std::sin(static_cast<double>(j));
  const ArbitrationVector v{1, Location::ObjCf, dir, 1, 1, ""};

  auto residuals = [&](const model::Hooks<float>* steer) {
    std::vector<Tensor<float>> out(3);
    model::Hooks<float> h = steer ? *steer : model::Hooks<float>{};
    h.on_residual = [&](std::size_t l, const Tensor<float>& x) { out[l] = x; };
    m.forward(p.tokens, &h);
    return out;
  };
  const auto clean = residuals(nullptr);
  const auto hooks = steering_hooks<float>({1, Location::ObjCf, 30, Regime::CopyToRecall}, v, span);
  const auto steered = residuals(&hooks);
  // Layers before the injection point are bitwise untouched.
  EXPECT_TRUE(numerics::bitwise_equal(clean[0], steered[0]));
  // Rows before the first steered position cannot see the edit.
  for (std::size_t l = 1; l < 3; ++l) {
    for (std::size_t r = 0; r < span.front(); ++r) {
      for (std::size_t c = 0; c < 16; ++c) ASSERT_EQ(clean[l].at(r, c), steered[l].at(r, c));
    }
  }
  EXPECT_FALSE(numerics::bitwise_equal(clean[2], steered[2]));
}

TEST(Steering, ZeroAlphaIsIdentity) {
  const auto kb = synthkb::generate_kb(4, 3, 12);
  const auto vocab = model::Vocab::build(kb);
  const auto arb = synthkb::make_arbitration_pairs(kb, 4);
  model::Transformer<float> m({16, 2, 2, 32, vocab.size(), 64, 5});
  const auto p = model::assemble_prompt(vocab, arb.examples[1]);
  const ArbitrationVector v{0, Location::Last, std::vector<double>(16, 1.0), 1, 1, ""};
  const auto hooks = steering_hooks<float>({0, Location::Last, 0, Regime::CopyToRecall}, v,
                                           p.spans.at(Location::Last));
  EXPECT_TRUE(numerics::bitwise_equal(m.forward(p.tokens), m.forward(p.tokens, &hooks)));
  const auto a = model::greedy_decode(m, vocab, p, 4);
  const auto b = model::greedy_decode(m, vocab, p, 4, &hooks);
  EXPECT_EQ(a.answer, b.answer);
}
