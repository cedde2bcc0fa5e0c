#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <thread>

#include "subjectlab/autodiff.hpp"
#include "subjectlab/checkpoint.hpp"
#include "subjectlab/error.hpp"
#include "subjectlab/model.hpp"
#include "subjectlab/optimizer.hpp"
#include "subjectlab/rng.hpp"
#include "test_nets.hpp"

using namespace subjectlab;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST(Matmul, MatchesNaiveLoop) {
  Rng rng(1);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {5, 70, 130}, {33, 65, 67}, {32, 256, 768}}) {
    const Tensor a = random_tensor(rng, {std::size_t(m), std::size_t(k)});
    const Tensor b = random_tensor(rng, {std::size_t(k), std::size_t(n)});
    const Tensor c = matmul(a, b);
    double worst = 0.0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0, mag = 0.0;
        for (int q = 0; q < k; ++q) {
          s += double(a[i * k + q]) * b[q * n + j];
          mag += std::abs(double(a[i * k + q]) * b[q * n + j]);
        }
        // Sequential float accumulation: error <= k * 2^-24 * sum |a b|.
        worst = std::max(worst, std::abs(s - c[i * n + j]) / (k * std::ldexp(1.0, -24) * mag + 1e-30));
      }
    EXPECT_LE(worst, 1.0) << m << "x" << k << "x" << n;
  }
}

TEST(Matmul, RowIndependentOfBatch) {
  Rng rng(2);
  const Tensor a = random_tensor(rng, {9, 40});
  const Tensor b = random_tensor(rng, {40, 70});
  const Tensor full = matmul(a, b);
  for (std::size_t r = 0; r < 9; ++r) {
    Tensor one({1, 40});
    std::copy(a.row(r).begin(), a.row(r).end(), one.raw());
    const Tensor c = matmul(one, b);
    for (std::size_t j = 0; j < 70; ++j) ASSERT_EQ(c[j], full[r * 70 + j]);
  }
}

TEST(Autodiff, IdentityPassesUpstream) {
  Tape tape;
  Rng rng(3);
  const Tensor x = random_tensor(rng, {2, 5});
  const Tensor u = random_tensor(rng, {2, 5});
  const Var v = tape.input(x);
  tape.backward(v, u);
  EXPECT_EQ(tape.grad(v), u);
}

TEST(Autodiff, AffineLayerClosedForm) {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {1, 3});
  const Tensor w = random_tensor(rng, {3, 2});
  const Tensor b = random_tensor(rng, {2});
  const Tensor u = random_tensor(rng, {1, 2});
  Tape tape;
  const Var vw = tape.input(w), vb = tape.input(b);
  const Var y = ops::linear(tape, tape.constant(x), vw, vb);
  tape.backward(y, u);
  const Tensor gw = tape.grad(vw), gb = tape.grad(vb);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(gw[i * 2 + j], x[i] * u[j], 1e-6);
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(gb[j], u[j], 1e-7);
}

TEST(Autodiff, TwoLayerNetworkMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    testnets::Mlp2 net(6, 12, 4);
    const ParameterSet params = net.init(seed);
    Rng rng(derive_seed(seed, "inputs"));
    const Tensor x = random_tensor(rng, {3, 6});
    const Tensor u = random_tensor(rng, {3, 4});
    const Tensor in[] = {x}, up[] = {u};
    const auto ev = evaluate_with_gradients(net, params, in, up);
    const auto fd = finite_difference_grad(net, params, in, up, 1e-3f);
    EXPECT_TRUE(fd.non_finite.empty());
    EXPECT_LT(relative_error(ev.param_grads, fd.grads), 1e-3) << "seed " << seed;
  }
}

TEST(Autodiff, ConstantNetworkHasZeroGradient) {
  testnets::Mlp2 net(3, 4, 2);
  ParameterSet params = net.init(1);
  for (auto& v : params.at("l3.w").data()) v = 0.0f;
  Rng rng(5);
  const Tensor in[] = {random_tensor(rng, {2, 3})}, up[] = {random_tensor(rng, {2, 2})};
  const auto fd = finite_difference_grad(net, params, in, up, 1e-3f);
  for (const char* name : {"l1.w", "l1.b", "l2.w", "l2.b"})
    for (float g : fd.grads.at(name).data()) EXPECT_EQ(g, 0.0f) << name;
}

TEST(Autodiff, PerturbationRangeChecked) {
  testnets::Mlp2 net(2, 2, 2);
  const ParameterSet params = net.init(0);
  const Tensor in[] = {Tensor({1, 2})}, up[] = {Tensor({1, 2})};
  EXPECT_THROW(finite_difference_grad(net, params, in, up, 0.1f), ValueError);
  EXPECT_THROW(finite_difference_grad(net, params, in, up, 1e-6f), ValueError);
}

TEST(Autodiff, EveryNetworkFamilyMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed)
    for (const auto& c : testnets::gradient_cases(seed)) {
      const auto ev = evaluate_with_gradients(*c.net, c.params, c.inputs, c.upstream);
      const auto fd = finite_difference_grad(*c.net, c.params, c.inputs, c.upstream, 1e-2f);
      EXPECT_LT(relative_error(ev.param_grads, fd.grads), 1e-3) << c.name << " seed " << seed;
    }
}

TEST(Autodiff, InputGradientOfLayerNorm) {
  // d/dx of sum(u * LN(x)) against central differences in double.
  Rng rng(6);
  const Tensor x = random_tensor(rng, {1, 7});
  const Tensor u = random_tensor(rng, {1, 7});
  Tape tape;
  const Var vx = tape.input(x);
  const Var y = ops::layer_norm(tape, vx, tape.constant(Tensor({7}, 1.0f)),
                                tape.constant(Tensor({7})), 0.0f);
  tape.backward(y, u);
  const Tensor g = tape.grad(vx);
  auto f = [&](const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double a : v) m += a / 7;
    for (double a : v) s += (a - m) * (a - m) / 7;
    double out = 0;
    for (int i = 0; i < 7; ++i) out += u[i] * (v[i] - m) / std::sqrt(s);
    return out;
  };
  for (int i = 0; i < 7; ++i) {
    std::vector<double> p(x.data().begin(), x.data().end()), q = p;
    p[i] += 1e-6;
    q[i] -= 1e-6;
    EXPECT_NEAR(g[i], (f(p) - f(q)) / 2e-6, 1e-4);
  }
}

TEST(Optimizer, AdamByHand) {
  ParameterSet p;
  p.add("w", Tensor({2}, std::vector<float>{1.0f, -2.0f}));
  ParameterSet g = p.zeros_like();
  OptimizerState state = OptimizerState::for_parameters(p);
  double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -2.0};
  const double grads[3][2] = {{0.5, -1.0}, {0.25, 2.0}, {-0.1, 0.0}};
  for (int step = 0; step < 3; ++step) {
    g.at("w")[0] = float(grads[step][0]);
    g.at("w")[1] = float(grads[step][1]);
    ASSERT_TRUE(optimizer_step(p, g, state, 0.01).applied);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grads[step][i];
      v[i] = 0.999 * v[i] + 0.001 * grads[step][i] * grads[step][i];
      const double mh = m[i] / (1 - std::pow(0.9, step + 1));
      const double vh = v[i] / (1 - std::pow(0.999, step + 1));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.at("w")[i], w[i], 1e-6);
    }
  }
  EXPECT_EQ(state.step, 3u);
}

TEST(Optimizer, RejectsNonFiniteGradient) {
  ParameterSet p;
  p.add("w", Tensor({1}, 1.0f));
  ParameterSet g = p.zeros_like();
  g.at("w")[0] = std::nanf("");
  OptimizerState state = OptimizerState::for_parameters(p);
  const auto r = optimizer_step(p, g, state, 0.1);
  EXPECT_FALSE(r.applied);
  EXPECT_EQ(p.at("w")[0], 1.0f);
  EXPECT_THROW(optimizer_step(p, p.zeros_like(), state, 0.0), ValueError);
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, std::uint64_t{3}), derive_seed(7, std::uint64_t{3}));
  EXPECT_NE(derive_seed(7, std::uint64_t{3}), derive_seed(7, std::uint64_t{4}));
  EXPECT_NE(derive_seed(7, "a"), derive_seed(8, "a"));
  // First output of the reference splitmix64 generator seeded with 0.
  EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFULL);
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(12);
  Checkpoint ck;
  ck.meta = {{"kind", "test"}, {"note", "two words"}};
  ck.params.add("a", random_tensor(rng, {3, 4}));
  ck.params.add("b.c", random_tensor(rng, {5}));
  ck.params.at("b.c")[0] = -0.0f;
  const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(ck));
  EXPECT_EQ(back.meta, ck.meta);
  ASSERT_EQ(back.params.size(), 2u);
  for (std::size_t p = 0; p < 2; ++p)
    EXPECT_EQ(std::memcmp(back.params[p].raw(), ck.params[p].raw(), ck.params[p].size() * 4), 0);
}

TEST(Checkpoint, MissingFileNamesCheckpoint) {
  try {
    load_checkpoint("/nonexistent/x.ckpt");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("checkpoint not found"), std::string::npos);
  }
}

TEST(Checkpoint, TruncatedBlobRejected) {
  Checkpoint ck;
  ck.params.add("a", Tensor({4}, 1.0f));
  std::string bytes = serialize_checkpoint(ck);
  bytes.pop_back();
  EXPECT_THROW(deserialize_checkpoint(bytes), Error);
}
