// Measures training-step throughput of the desk model configuration.
#include <chrono>
#include <cstdio>
#include <random>

#include "arbsteer/model/transformer.hpp"
#include "arbsteer/numerics/adam.hpp"

using namespace arbsteer;

int main(int argc, char** argv) {
  model::ModelConfig cfg;
  cfg.vocab_size = 5000;
  cfg.seed = 1;
  const std::size_t batch = argc > 1 ? std::stoul(argv[1]) : 32;
  const std::size_t seq = argc > 2 ? std::stoul(argv[2]) : 36;
  model::Transformer<float> m(cfg);
  numerics::Adam<float> opt(m.params().all(), {});
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> tok(0, 4999);
  const int iters = argc > 3 ? std::stoi(argv[3]) : 6;
  for (int it = 0; it < iters; ++it) {
    model::Batch b;
    for (std::size_t s = 0; s < batch; ++s) {
      std::vector<model::TokenId> t(seq);
      for (auto& x : t) x = tok(rng);
      std::vector<std::size_t> rows{seq - 2, seq - 1};
      std::vector<model::TokenId> tg{tok(rng), tok(rng)};
      b.add(t, rows, tg);
    }
    const auto t0 = std::chrono::steady_clock::now();
    numerics::Tape<float> tape;
    auto loss = m.loss(tape, b);
    const auto t1 = std::chrono::steady_clock::now();
    tape.backward(loss);
    const auto t2 = std::chrono::steady_clock::now();
    std::vector<numerics::Tensor<float>> gs;
    for (auto* p : m.params().all()) gs.push_back(tape.grad_of(*p));
    std::vector<const numerics::Tensor<float>*> grads;
    for (auto& g : gs) grads.push_back(&g);
    const auto t3 = std::chrono::steady_clock::now();
    opt.step(grads);
    const auto t4 = std::chrono::steady_clock::now();
    auto ms_of = [](auto a, auto b) { return std::chrono::duration<double, std::milli>(b - a).count(); };
    std::printf("fwd %.1f bwd %.1f grads %.1f adam %.1f\n", ms_of(t0, t1), ms_of(t1, t2),
                ms_of(t2, t3), ms_of(t3, t4));
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::printf("step %d loss %.4f  %.1f ms  (%.1f seq/s)\n", it, loss.value()[0], ms,
                1000.0 * batch / ms);
  }
}
