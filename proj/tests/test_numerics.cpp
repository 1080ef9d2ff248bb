#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "mimlab/gradcheck.hpp"
#include "mimlab/ops.hpp"
#include "mimlab/optim.hpp"
#include "mimlab/rng.hpp"
#include "mimlab/schedule.hpp"
#include "support/primitive_cases.hpp"

using namespace mimlab;
using cases::contract;
using cases::primitive_cases;
using cases::random_tensor;

TEST_SUITE("tensor") {
  TEST_CASE("data length must match the shape") {
    CHECK_THROWS_AS(Tensor<float>({2, 3}, Vector<float>::Zero(5)), ShapeError);
    Tensor<float> t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(Tensor<float>::scalar(2.0f).rows() == 1);
  }
}

TEST_SUITE("primitives") {
  TEST_CASE("matmul of 2x3 and 3x4 is 2x4") {
    Tape<double> tape;
    auto a = tape.leaf(random_tensor({2, 3}, 1));
    auto b = tape.leaf(random_tensor({3, 4}, 2));
    CHECK(matmul(a, b).shape() == Shape{2, 4});
  }

  TEST_CASE("shape mismatch names the primitive and both shapes") {
    Tape<double> tape;
    auto a = tape.leaf(random_tensor({2, 3}, 1));
    auto b = tape.leaf(random_tensor({2, 3}, 2));
    try {
      matmul(a, b);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("matmul") != std::string::npos);
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, tape.leaf(random_tensor({3, 2}, 3))), ShapeError);
  }

  TEST_CASE("softmax of equal logits is uniform") {
    Tape<double> tape;
    auto y = softmax(tape.leaf(Tensor<double>::zeros({1, 3})));
    for (Index i = 0; i < 3; ++i) CHECK(y.value()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("layernorm of [1,2,3]") {
    Tape<double> tape;
    auto y = layernorm(tape.leaf(Tensor<double>::from({1, 3}, {1, 2, 3})), 1e-5);
    // Hand evaluation: (x - 2) / sqrt(2/3 + eps).
    const double denom = std::sqrt(2.0 / 3.0 + 1e-5);
    CHECK(y.value()[0] == doctest::Approx(-1.0 / denom).epsilon(1e-12));
    CHECK(y.value()[1] == doctest::Approx(0.0));
    CHECK(y.value()[2] == doctest::Approx(1.0 / denom).epsilon(1e-12));
    const double m = (y.value()[0] + y.value()[1] + y.value()[2]) / 3.0;
    double var = 0;
    for (Index i = 0; i < 3; ++i) var += (y.value()[i] - m) * (y.value()[i] - m) / 3.0;
    CHECK(std::abs(m) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }

  TEST_CASE("float layernorm is deterministic across repeats") {
    Rng rng(5);
    Tensor<float> x({4, 64});
    for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.normal());
    Tape<float> t1, t2;
    CHECK(layernorm(t1.leaf(x)).value() == layernorm(t2.leaf(x)).value());
  }
}

TEST_SUITE("backward") {
  TEST_CASE("grad of sum is all ones") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({2, 2}, 1));
    auto g = tape.backward(sum(x));
    CHECK(g[x] == Tensor<double>::ones({2, 2}));
  }

  TEST_CASE("grad of mean(x*x) at [1,2] is [1,2]") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::from({2}, {1, 2}));
    auto g = tape.backward(mean(mul(x, x)));
    CHECK(g[x][0] == doctest::Approx(1.0));
    CHECK(g[x][1] == doctest::Approx(2.0));
  }

  TEST_CASE("detached input gets a zero gradient") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({3}, 1));
    auto y = tape.leaf(random_tensor({3}, 2));
    auto g = tape.backward(sum(mul(y, y)));
    CHECK(g[x] == Tensor<double>::zeros({3}));
    CHECK(g[x].shape() == Shape{3});
  }

  TEST_CASE("fan-out accumulates") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({2, 3}, 1));
    auto g = tape.backward(add(sum(x), sum(x)));
    CHECK(g[x] == Tensor<double>::full({2, 3}, 2.0));
    Tape<double> tape2;
    auto z = tape2.leaf(random_tensor({4}, 3));
    auto g2 = tape2.backward(sum(add(z, z)));
    CHECK(g2[z] == Tensor<double>::full({4}, 2.0));
  }

  TEST_CASE("values stay readable while the tape grows") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::from({2}, {1.0, 2.0}));
    const Tensor<double>& held = x.value();
    for (int i = 0; i < 1000; ++i) scale(x, 2.0);
    CHECK(held[1] == 2.0);
  }

  TEST_CASE("non-scalar loss is rejected") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({2, 2}, 1));
    CHECK_THROWS_AS(tape.backward(mul(x, x)), ShapeError);
  }

  TEST_CASE("gradients have the shapes of their tensors") {
    Tape<float> tape;
    auto w = tape.leaf(Tensor<float>::ones({3, 2}));
    auto x = tape.constant(Tensor<float>::ones({4, 3}));
    auto g = tape.backward(sum(matmul(x, w)));
    CHECK(g[w].shape() == Shape{3, 2});
    CHECK(g[x].shape() == Shape{4, 3});
    CHECK(g[x] == Tensor<float>::zeros({4, 3}));
  }
}

TEST_SUITE("finite differences") {
  TEST_CASE("linear function has zero error") {
    auto report = finite_diff_check([](Tape<double>&, const Var<double>& x) { return sum(x); }, random_tensor({3, 3}, 4));
    CHECK(report.max_error < 1e-10);
  }

  TEST_CASE("sum(gelu(x)) on [-2,2]^4") {
    auto report = finite_diff_check([](Tape<double>&, const Var<double>& x) { return sum(gelu(x)); },
                                    random_tensor({4}, 9, -2, 2));
    CHECK(report.max_error < 1e-4);
  }

  TEST_CASE("non-finite output is an error") {
    CHECK_THROWS_AS(finite_diff_check([](Tape<double>&, const Var<double>& x) { return sum(log(x)); },
                                      Tensor<double>::from({2}, {-1.0, 1.0})),
                    NumericalError);
  }

  TEST_CASE("every primitive matches central differences at random points") {
    for (const auto& pc : primitive_cases()) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CAPTURE(pc.name);
        CAPTURE(seed);
        auto x = random_tensor(pc.shape, 100 + seed, pc.lo, pc.hi);
        auto body = pc.body;
        auto report = finite_diff_check(
            [body, seed](Tape<double>& t, const Var<double>& v) { return contract(body(t, v), seed); }, x);
        CHECK(report.max_error < 1e-4);
      }
    }
  }
}

TEST_SUITE("adamw") {
  // One step with p = 1, g = 1: m = 0.1, v = 0.001, bias-corrected m_hat =
  // v_hat = 1, so the update is lr / (1 + eps).
  TEST_CASE("hand-evaluated step without weight decay") {
    Tensor<double> p = Tensor<double>::ones({1});
    auto state = AdamWState<double>::like(p);
    adamw_step(p, Tensor<double>::ones({1}), state, {0.1, 0.9, 0.999, 1e-8, 0.0});
    CHECK(std::abs(p[0] - 0.9) < 1e-7);
    CHECK(std::abs(p[0] - (1.0 - 0.1 / (1.0 + 1e-8))) < 1e-12);
    CHECK(state.t == 1);
  }

  TEST_CASE("hand-evaluated step with weight decay 0.05") {
    Tensor<double> p = Tensor<double>::ones({1});
    auto state = AdamWState<double>::like(p);
    adamw_step(p, Tensor<double>::ones({1}), state, {0.1, 0.9, 0.999, 1e-8, 0.05});
    CHECK(std::abs(p[0] - 0.895) < 1e-7);
    CHECK(std::abs(p[0] - (1.0 - 0.005 - 0.1 / (1.0 + 1e-8))) < 1e-12);
  }

  TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
    Tensor<float> p = Tensor<float>::from({3}, {0.5f, -2.0f, 7.0f});
    const Tensor<float> before = p;
    auto state = AdamWState<float>::like(p);
    for (int i = 0; i < 5; ++i) adamw_step(p, Tensor<float>::zeros({3}), state, {0.1, 0.9, 0.999, 1e-8, 0.0});
    CHECK(p == before);
    CHECK(state.t == 5);
  }

  TEST_CASE("second moment stays non-negative and step count increments") {
    Rng rng(3);
    Tensor<double> p = random_tensor({8}, 1);
    auto state = AdamWState<double>::like(p);
    for (int i = 1; i <= 20; ++i) {
      adamw_step(p, random_tensor({8}, 50 + static_cast<std::uint64_t>(i)), state, {});
      CHECK(state.t == i);
      CHECK((state.v.data().array() >= 0.0).all());
    }
  }

  TEST_CASE("non-finite gradient aborts without touching state") {
    Tensor<double> p = Tensor<double>::ones({2});
    auto state = AdamWState<double>::like(p);
    Tensor<double> g = Tensor<double>::from({2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(adamw_step(p, g, state, {}), NumericalError);
    CHECK(state.t == 0);
    CHECK(p == Tensor<double>::ones({2}));
  }
}

TEST_SUITE("schedule") {
  ScheduleSpec cosine(std::int64_t warmup, std::int64_t total) {
    ScheduleSpec s;
    s.kind = ScheduleKind::cosine;
    s.base_lr = 8e-4;
    s.warmup_steps = warmup;
    s.total_steps = total;
    return s;
  }

  TEST_CASE("warmup ends at exactly base_lr") {
    const auto s = cosine(10, 110);
    CHECK(lr_at(s, 0) == 0.0);
    CHECK(lr_at(s, 5) == doctest::Approx(4e-4));
    CHECK(lr_at(s, 10) == 8e-4);
  }

  TEST_CASE("cosine midpoint is half the base rate") {
    const auto s = cosine(10, 110);
    CHECK(lr_at(s, 60) == 4e-4);
    CHECK(lr_at(s, 110) == doctest::Approx(0.0));
  }

  TEST_CASE("step schedule decays by 10x at 90% and 95%") {
    ScheduleSpec s = cosine(0, 1000);
    s.kind = ScheduleKind::step;
    CHECK(lr_at(s, 899) == 8e-4);
    CHECK(lr_at(s, 900) == doctest::Approx(8e-5));
    CHECK(lr_at(s, 949) == doctest::Approx(8e-5));
    CHECK(lr_at(s, 951) == doctest::Approx(8e-6));
  }

  TEST_CASE("non-increasing after warmup for both kinds") {
    for (auto kind : {ScheduleKind::cosine, ScheduleKind::step}) {
      ScheduleSpec s = cosine(17, 403);
      s.kind = kind;
      for (std::int64_t t = s.warmup_steps + 1; t <= s.total_steps; ++t) CHECK(lr_at(s, t) <= lr_at(s, t - 1));
      for (std::int64_t t = 1; t < s.total_steps; ++t) CHECK(lr_at(s, t) > 0.0);
    }
  }

  TEST_CASE("out of range step is an error") {
    const auto s = cosine(10, 100);
    CHECK_THROWS_AS(lr_at(s, -1), ConfigError);
    CHECK_THROWS_AS(lr_at(s, 101), ConfigError);
  }
}
