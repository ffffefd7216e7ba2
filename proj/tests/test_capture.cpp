#include <gtest/gtest.h>

#include <random>

#include "arbsteer/capture.hpp"
#include "arbsteer/io.hpp"
#include "arbsteer/synthkb/datasets.hpp"
#include "arbsteer/synthkb/kb.hpp"

using namespace arbsteer;
using namespace arbsteer::capture;
using numerics::Tensor;

namespace {

struct Fixture {
  std::vector<synthkb::FactRecord> kb = synthkb::generate_kb(4, 3, 12);
  model::Vocab vocab = model::Vocab::build(kb);
  synthkb::ArbitrationSet arb = synthkb::make_arbitration_pairs(kb, 4);
  model::Transformer<float> m{model::ModelConfig{16, 2, 2, 32, vocab.size(), 64, 9}};
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

std::vector<synthkb::ArbitrationExample> first_n(std::size_t n, std::optional<Mode> mode = {}) {
  std::vector<synthkb::ArbitrationExample> out;
  for (const auto& ex : fx().arb.examples) {
    if (out.size() == n) break;
    if (!mode || ex.mode == *mode) out.push_back(ex);
  }
  return out;
}

}  // namespace

TEST(PoolSpan, SingleIndexIsTheRow) {
  const auto h = Tensor<double>::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> s{1};
  EXPECT_EQ(pool_span(h, std::span<const std::size_t>(s)), (std::vector<double>{3, 4}));
}

TEST(PoolSpan, MeanOfTwoRows) {
  const auto h = Tensor<double>::matrix(2, 2, {1, 3, 3, 5});
  const std::vector<std::size_t> s{0, 1};
  EXPECT_EQ(pool_span(h, std::span<const std::size_t>(s)), (std::vector<double>{2, 4}));
}

TEST(PoolSpan, MatchesIndependentMean) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> data(24);
  for (auto& x : data) x = u(rng);
  const auto h = Tensor<double>::matrix(6, 4, data);
  const std::vector<std::size_t> s{0, 2, 5};
  const auto got = pool_span(h, std::span<const std::size_t>(s));
  for (std::size_t j = 0; j < 4; ++j) {
    const double want = (data[0 * 4 + j] + data[2 * 4 + j] + data[5 * 4 + j]) / 3.0;
    EXPECT_NEAR(got[j], want, 1e-7);
  }
}

TEST(PoolSpan, RejectsEmptyAndOutOfRange) {
  const auto h = Tensor<double>::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_THROW(pool_span(h, std::span<const std::size_t>()), ContractError);
  const std::vector<std::size_t> s{2};
  EXPECT_THROW(pool_span(h, std::span<const std::size_t>(s)), ContractError);
}

TEST(Capture, OneRecordPerLayerAndLocation) {
  const auto ex = first_n(1, Mode::RC);
  const auto res = capture_dataset(ex, fx().m, fx().vocab, {0, 1}, {Location::ObjCf, Location::Last});
  ASSERT_EQ(res.records.size(), 4u);
  EXPECT_EQ(res.unavailable, 0u);
  for (const auto& r : res.records) {
    EXPECT_EQ(r.example_id, ex[0].id);
    EXPECT_EQ(r.vector.size(), 16u);
  }
  EXPECT_EQ(res.records[0].layer, 0u);
  EXPECT_EQ(res.records[3].layer, 1u);
}

TEST(Capture, IcSubjectIsUnavailableUnderContextOnly) {
  const auto ex = first_n(5, Mode::IC);
  const auto res = capture_dataset(ex, fx().m, fx().vocab, {0}, {Location::Subj});
  EXPECT_TRUE(res.records.empty());
  EXPECT_EQ(res.unavailable, ex.size());
  // With the question fallback every IC example has a subject span.
  const auto fb = capture_dataset(ex, fx().m, fx().vocab, {0}, {Location::Subj},
                                  {model::SubjectSpan::ContextThenQuery});
  EXPECT_EQ(fb.records.size(), ex.size());
}

TEST(Capture, BadLayerIsAnError) {
  EXPECT_THROW(capture_dataset(first_n(1), fx().m, fx().vocab, {2}, {Location::Last}), ContractError);
}

TEST(Capture, MatchesDirectForwardPool) {
  const auto ex = first_n(1, Mode::RC);
  const auto res = capture_dataset(ex, fx().m, fx().vocab, {1}, {Location::ObjCf});
  ASSERT_EQ(res.records.size(), 1u);
  const auto p = model::assemble_prompt(fx().vocab, ex[0]);
  const auto span = *model::resolve_span(p, Location::ObjCf, model::SubjectSpan::ContextOnly);
  std::vector<float> want;
  model::Hooks<float> h;
  h.on_residual = [&](std::size_t l, const Tensor<float>& x) {
    if (l == 1) want = pool_span(x, std::span<const std::size_t>(span));
  };
  fx().m.forward(p.tokens, &h);
  EXPECT_EQ(res.records[0].vector, want);
  EXPECT_EQ(res.records[0].span_size, span.size());
}

TEST(Capture, LastPositionIgnoresTokensAfterThePrompt) {
  // Pooled rows come from a causal pass, so appending tokens after the prompt
  // cannot change them beyond float reassociation in the longer matmuls.
  const auto ex = first_n(1, Mode::RC)[0];
  const auto p = model::assemble_prompt(fx().vocab, ex);
  auto extended = p.tokens;
  extended.push_back(3);
  extended.push_back(4);
  std::vector<float> a, b;
  const std::size_t last = p.tokens.size() - 1;
  model::Hooks<float> ha, hb;
  ha.on_residual = [&](std::size_t l, const Tensor<float>& x) {
    if (l == 1) a.assign(x.row(last).begin(), x.row(last).end());
  };
  hb.on_residual = [&](std::size_t l, const Tensor<float>& x) {
    if (l == 1) b.assign(x.row(last).begin(), x.row(last).end());
  };
  fx().m.forward(p.tokens, &ha);
  fx().m.forward(extended, &hb);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-6);
}

TEST(ActivationFile, DeterministicRoundTrip) {
  const auto ex = first_n(6);
  const auto locs = std::vector<Location>{Location::Subj, Location::ObjCf, Location::Last};
  const auto r1 = capture_dataset(ex, fx().m, fx().vocab, {0, 1}, locs);
  const auto r2 = capture_dataset(ex, fx().m, fx().vocab, {0, 1}, locs);
  const auto b1 = serialize_activations(r1.records, 16);
  EXPECT_EQ(b1, serialize_activations(r2.records, 16));
  EXPECT_EQ(io::sha256_hex(b1), io::sha256_hex(serialize_activations(r2.records, 16)));
  const auto back = deserialize_activations(b1);
  EXPECT_EQ(back.d, 16u);
  ASSERT_EQ(back.records.size(), r1.records.size());
  for (std::size_t i = 0; i < back.records.size(); ++i) {
    EXPECT_EQ(back.records[i].example_id, r1.records[i].example_id);
    EXPECT_EQ(back.records[i].layer, r1.records[i].layer);
    EXPECT_EQ(back.records[i].location, r1.records[i].location);
    EXPECT_EQ(back.records[i].mode, r1.records[i].mode);
    EXPECT_EQ(back.records[i].vector, r1.records[i].vector);
  }
}

TEST(ActivationFile, RejectsCorruption) {
  const auto res = capture_dataset(first_n(1), fx().m, fx().vocab, {0}, {Location::Last});
  auto buf = serialize_activations(res.records, 16);
  EXPECT_THROW(deserialize_activations(buf + "x"), ContractError);
  buf[0] ^= 1;
  EXPECT_THROW(deserialize_activations(buf), ContractError);
  EXPECT_THROW(serialize_activations(res.records, 8), ContractError);
}
