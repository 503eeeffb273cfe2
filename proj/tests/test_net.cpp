#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <random>
#include <sstream>

#include "support.hpp"
#include "symrl/ensemble.hpp"
#include "symrl/kernels.hpp"
#include "symrl/net.hpp"
#include "symrl/optim.hpp"

using namespace symrl;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  CHECK(worst <= 1e-12);
}

Observation random_obs(const ParamNet& net, std::mt19937_64& rng) {
  auto map = test::shipped_map("micro6");
  ScenarioConfig cfg;
  cfg.battery_capacity = 20;
  EnvState s = test::random_state(map, cfg, rng);
  (void)net;
  return observe(s, cfg);
}

}  // namespace

TEST_CASE("serial and parallel kernels agree") {
  std::mt19937_64 rng(4);
  for (auto [n, c, hw, f, k, st, pad] : std::vector<std::array<int, 7>>{
           {3, 5, 12, 8, 3, 2, 1}, {2, 2, 7, 3, 3, 1, 1}, {1, 4, 6, 2, 1, 1, 0}, {5, 3, 9, 4, 5, 2, 2}}) {
    kernels::ConvShape s{n, c, hw, hw, f, k, st, pad};
    const auto x = random_vec(s.input_size(), rng);
    const auto w = random_vec(s.weight_size(), rng);
    const auto b = random_vec(f, rng);
    const auto dy = random_vec(s.output_size(), rng);
    std::vector<double> y1(s.output_size()), y2(s.output_size());
    kernels::serial::conv2d_forward(s, x, w, b, y1);
    kernels::parallel::conv2d_forward(s, x, w, b, y2);
    check_close(y1, y2);
    std::vector<double> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size()), db1(f), db2(f);
    kernels::serial::conv2d_backward(s, x, w, dy, dx1, dw1, db1);
    kernels::parallel::conv2d_backward(s, x, w, dy, dx2, dw2, db2);
    check_close(dx1, dx2);
    check_close(dw1, dw2);
    check_close(db1, db2);
  }
  for (auto [n, in, out] : std::vector<std::array<int, 3>>{{7, 146, 32}, {1, 3, 5}, {64, 17, 9}}) {
    kernels::AffineShape s{n, in, out};
    const auto x = random_vec(static_cast<std::size_t>(n) * in, rng);
    const auto w = random_vec(static_cast<std::size_t>(out) * in, rng);
    const auto b = random_vec(out, rng);
    const auto dy = random_vec(static_cast<std::size_t>(n) * out, rng);
    std::vector<double> y1(dy.size()), y2(dy.size());
    kernels::serial::affine_forward(s, x, w, b, y1);
    kernels::parallel::affine_forward(s, x, w, b, y2);
    check_close(y1, y2);
    std::vector<double> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size()), db1(out), db2(out);
    kernels::serial::affine_backward(s, x, w, dy, dx1, dw1, db1);
    kernels::parallel::affine_backward(s, x, w, dy, dx2, dw2, db2);
    check_close(dx1, dx2);
    check_close(dw1, dw2);
    check_close(db1, db2);
  }
}

TEST_CASE("parallel kernels do not depend on the thread count") {
  std::mt19937_64 rng(8);
  kernels::ConvShape s{16, 5, 12, 12, 8, 3, 2, 1};
  const auto x = random_vec(s.input_size(), rng);
  const auto w = random_vec(s.weight_size(), rng);
  const auto b = random_vec(8, rng);
  const auto dy = random_vec(s.output_size(), rng);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<double> y(s.output_size()), dx(x.size()), dw(w.size()), db(8);
    kernels::parallel::conv2d_forward(s, x, w, b, y);
    kernels::parallel::conv2d_backward(s, x, w, dy, dx, dw, db);
    y.insert(y.end(), dx.begin(), dx.end());
    y.insert(y.end(), dw.begin(), dw.end());
    y.insert(y.end(), db.begin(), db.end());
    return y;
  };
  const auto one = run(1);
  const auto four = run(4);
  omp_set_num_threads(kernels::max_threads());
  CHECK(one == four);
}

TEST_CASE("architecture descriptor") {
  const Architecture a = Architecture::parse("m=12;conv=8x3s2,16x3s2;fc=64,64;act=relu");
  CHECK(a.side == 12);
  CHECK(a.convs.size() == 2);
  CHECK(a.hidden == std::vector<int>{64, 64});
  CHECK(Architecture::parse(a.to_string()) == a);
  CHECK_THROWS_AS(Architecture::parse("m=12;conv=8x3s2;fc=64;act=softsign"), std::invalid_argument);
  CHECK_THROWS_AS(Architecture::parse("conv=8x3s2;fc=64"), std::invalid_argument);
}

TEST_CASE("forward") {
  std::mt19937_64 rng(1);
  const ParamNet zero = ParamNet::zeros(test::tiny_arch(6));
  const Observation obs = random_obs(zero, rng);
  const NetEvaluation z = zero.evaluate(ObservationBatch::from(std::span(&obs, 1)));
  for (int a = 1; a < kNumActions; ++a) CHECK(z.logits[a] == z.logits[0]);

  const ParamNet net(test::tiny_arch(6), 3);
  const auto batch = ObservationBatch::from(std::span(&obs, 1));
  const NetEvaluation e1 = net.evaluate(batch);
  const NetEvaluation e2 = net.evaluate(batch);
  CHECK(e1.logits == e2.logits);
  CHECK(e1.values == e2.values);
  CHECK(e1.logits.size() == 7);
  CHECK(e1.values.size() == 1);

  Observation wrong = obs;
  wrong.m = 5;
  wrong.maps.resize(5 * 25);
  CHECK_THROWS_AS(net.evaluate(ObservationBatch::from(std::span(&wrong, 1))), std::invalid_argument);
}

TEST_CASE("masked policy") {
  const std::vector<double> equal(7, 0.3);
  ActionMask four{};
  four[0] = four[1] = four[4] = four[6] = true;
  const Distribution p = masked_policy(equal, four);
  for (int a = 0; a < 7; ++a) CHECK(p[a] == (four[a] ? doctest::Approx(0.25) : doctest::Approx(0.0)));

  ActionMask single{};
  single[kLand] = true;
  CHECK(masked_policy(equal, single)[kLand] == 1.0);
  CHECK_THROWS_AS(masked_policy(equal, ActionMask{}), std::invalid_argument);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(7);
    for (double& l : logits) l = d(rng);
    ActionMask m{};
    for (auto&& v : m) v = rng() % 2;
    m[rng() % 7] = true;
    const Distribution q = masked_policy(logits, m);
    double full = 0.0, kept = 0.0, sum = 0.0;
    for (int a = 0; a < 7; ++a) {
      full += std::exp(logits[a]);
      if (m[a]) kept += std::exp(logits[a]);
    }
    for (int a = 0; a < 7; ++a) {
      if (!m[a]) {
        CHECK(q[a] == 0.0);
        continue;
      }
      CHECK(q[a] == doctest::Approx((std::exp(logits[a]) / full) / (kept / full)).epsilon(1e-12));
      sum += q[a];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("backward on the value output") {
  std::mt19937_64 rng(6);
  const ParamNet net(test::tiny_arch(6), 12);
  CHECK(net.parameter_count() <= 5000);
  std::vector<Observation> obs;
  for (int i = 0; i < 3; ++i) obs.push_back(random_obs(net, rng));
  const ObservationBatch batch = ObservationBatch::from(obs);
  const LossBuilder value_loss = [&](NetGraph& g) {
    return ad::sum(g.tape(), g.forward(batch).value);
  };
  const GradientTape tape = backward(net, value_loss);
  CHECK(tape.gradient.size() == net.parameter_count());
  CHECK(test::gradient_mismatch(tape.gradient, test::numeric_gradient(net, value_loss, 1e-4)) <= 1.0);

  const LossBuilder constant = [](NetGraph& g) { return g.tape().constant(ad::Tensor({1}, 2.5)); };
  const GradientTape zero = backward(net, constant);
  for (double v : zero.gradient) CHECK(v == 0.0);

  const LossBuilder logit_loss = [&](NetGraph& g) {
    return ad::mean(g.tape(), ad::square(g.tape(), g.forward(batch).logits));
  };
  const LossBuilder both = [&](NetGraph& g) {
    return ad::add(g.tape(), value_loss(g), logit_loss(g));
  };
  const auto ga = backward(net, value_loss).gradient;
  const auto gb = backward(net, logit_loss).gradient;
  const auto gs = backward(net, both).gradient;
  for (std::size_t i = 0; i < gs.size(); ++i) CHECK(gs[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-12));

  const LossBuilder bad = [](NetGraph& g) { return ad::log(g.tape(), g.tape().constant(ad::Tensor({1}, -1.0))); };
  CHECK_THROWS_AS(backward(net, bad), std::runtime_error);
}

TEST_CASE("adam") {
  std::mt19937_64 rng(9);
  ParamNet net(test::tiny_arch(6), 5);
  const Observation obs = random_obs(net, rng);
  const ObservationBatch batch = ObservationBatch::from(std::span(&obs, 1));
  const LossBuilder quad = [&](NetGraph& g) {
    ad::Tape& t = g.tape();
    return ad::sum(t, ad::square(t, ad::sub(t, g.forward(batch).value, t.constant(ad::Tensor({1}, 3.0)))));
  };

  {
    ParamNet copy = net;
    Adam adam(net.parameter_count());
    adam.step(copy, std::vector<double>(net.parameter_count(), 0.0), 1e-3);
    CHECK(copy == net);
  }

  auto run = [&](int steps) {
    ParamNet n = net;
    Adam adam(n.parameter_count());
    for (int i = 0; i < steps; ++i) adam.step(n, backward(n, quad).gradient, 1e-3);
    return std::pair{n, adam};
  };
  const auto [after, opt] = run(1);
  CHECK(evaluate_loss(after, quad) < evaluate_loss(net, quad));
  const auto [a5, o5] = run(5);
  const auto [b5, p5] = run(5);
  CHECK(a5 == b5);
  CHECK(o5 == p5);

  std::stringstream ss;
  o5.write(ss);
  Adam back;
  back.read(ss);
  CHECK(back == o5);

  std::vector<double> g{3.0, 4.0};
  CHECK(clip_gradient_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
}

TEST_CASE("checkpoint round trip") {
  const ParamNet net(Architecture::parse("m=12;conv=8x3s2,16x3s2;fc=32;act=relu"), 77);
  std::stringstream ss;
  write_checkpoint(ss, net);
  CHECK(ss.str().rfind("SYMRL-CKPT v1\n", 0) == 0);
  const ParamNet back = read_checkpoint(ss);
  CHECK(back == net);

  std::stringstream truncated(ss.str().substr(0, ss.str().size() - 3));
  CHECK_THROWS(read_checkpoint(truncated));
  std::stringstream wrong("NOT-A-CKPT\n");
  CHECK_THROWS(read_checkpoint(wrong));
}
