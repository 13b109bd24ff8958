#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vana/attention.hpp"
#include "vana/gradcheck.hpp"
#include "vana/gradsuite.hpp"
#include "vana/rng.hpp"

using vana::Tensor;
using T64 = Tensor<double>;

TEST_CASE("finite differences on polynomial cases") {
  const T64 x({2}, {1, 2});
  const T64 quad = vana::finite_diff_grad(
      [](const T64& t) {
        double s = 0;
        for (std::int64_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
        return s;
      },
      x);
  CHECK(quad[0] == doctest::Approx(2).epsilon(1e-8));
  CHECK(quad[1] == doctest::Approx(4).epsilon(1e-8));

  const T64 lin = vana::finite_diff_grad(
      [](const T64& t) {
        double s = 0;
        for (std::int64_t i = 0; i < t.size(); ++i) s += t[i];
        return s;
      },
      x);
  CHECK(lin[0] == doctest::Approx(1).epsilon(1e-10));
  CHECK(lin[1] == doctest::Approx(1).epsilon(1e-10));
}

TEST_CASE("central differences are exact on quadratics across the eps range") {
  vana::Rng rng(1);
  const T64 x = vana::rand_uniform<double>({6}, rng, -2, 2);
  const T64 a = vana::rand_uniform<double>({6}, rng, -1, 1);
  const T64 b = vana::rand_uniform<double>({6}, rng, -1, 1);
  auto f = [&](const T64& t) {
    double s = 0;
    for (std::int64_t i = 0; i < t.size(); ++i) s += a[i] * t[i] * t[i] + b[i] * t[i];
    return s;
  };
  T64 expect({6});
  for (std::int64_t i = 0; i < 6; ++i) expect[i] = 2 * a[i] * x[i] + b[i];
  for (double eps : {1e-6, 1e-5, 1e-4, 1e-3})
    CHECK(vana::rel_error(vana::finite_diff_grad(f, x, eps), expect) < 1e-8);
}

TEST_CASE("finite_diff_grad validates its inputs") {
  CHECK_THROWS_AS(vana::finite_diff_grad([](const T64&) { return 0.0; }, T64({1}), 0.0),
                  vana::ValueError);
  CHECK_THROWS_AS(vana::finite_diff_grad(
                      [](const T64&) { return std::numeric_limits<double>::infinity(); },
                      T64({1})),
                  vana::ValueError);
}

TEST_CASE("rel_error definition") {
  const T64 a({2}, {1, 2});
  CHECK(vana::rel_error(a, a) == 0.0);
  const T64 b({1}, {1.0});
  const T64 c({1}, {1.0001});
  CHECK(vana::rel_error(b, c) == doctest::Approx(1e-4).epsilon(1e-2));
  const T64 z({3});
  CHECK(vana::rel_error(z, z) == 0.0);  // guarded denominator
  CHECK_THROWS_AS(vana::rel_error(a, z), vana::ShapeError);
}

TEST_CASE("grad_report locates the worst coordinate") {
  T64 analytic({2, 3}, {1, 2, 3, 4, 5, 6});
  T64 numeric = analytic;
  numeric(1, 2) += 0.5;
  const auto report = vana::grad_report(analytic, numeric, 1e-5);
  CHECK_FALSE(report.passed);
  CHECK(report.worst_index == std::vector<std::int64_t>{1, 2});
  CHECK(report.max_rel_error == doctest::Approx(0.5 / 6.5).epsilon(1e-6));

  const auto ok = vana::grad_report(analytic, analytic, 1e-5);
  CHECK(ok.passed);
  CHECK(ok.max_rel_error == 0.0);
}

TEST_CASE("finite differences certify the attention backward directly") {
  vana::Rng rng(2);
  const vana::NeighborhoodSpec spec{3, 1};
  const vana::HydraConfig cfg{{{1, spec}}};
  vana::AttentionParams<double> p;
  p.wq = vana::rand_uniform<double>({4, 4}, rng, -0.25, 0.25);
  p.wk = vana::rand_uniform<double>({4, 4}, rng, -0.25, 0.25);
  p.wv = vana::rand_uniform<double>({4, 4}, rng, -0.25, 0.25);
  p.wo = vana::rand_uniform<double>({4, 4}, rng, -0.25, 0.25);
  p.bias.push_back(vana::rand_uniform<double>({5, 5}, rng, -0.2, 0.2));
  const T64 x = vana::rand_uniform<double>({4, 4, 4}, rng, -0.5, 0.5);

  // f = sum of outputs, so dY = ones.
  const auto out = vana::na_forward_2d(x, p, 1, spec);
  const auto grads = vana::na_vjp(x, p, 1, spec, out.probs, T64::full(x.shape(), 1.0));
  const T64 fd = vana::finite_diff_grad(
      [&](const T64& t) { return vana::sum(vana::na_forward_2d(t, p, 1, spec).y); }, x);
  CHECK(vana::rel_error(grads.dx, fd) < 1e-5);
}

TEST_CASE("randomized suite passes and the sabotage hook trips it") {
  vana::GradSuiteOptions options;
  options.seed = 7;
  options.cases = 3;  // the full 20-case sweep runs in the acceptance gate
  const auto reports = vana::run_gradcheck_suite(options);
  REQUIRE_FALSE(reports.empty());
  for (const auto& r : reports) {
    INFO(r.op, " max_rel_error=", r.report.max_rel_error);
    CHECK(r.report.passed);
  }
  CHECK(vana::all_passed(reports));

  options.sabotage = true;
  CHECK_FALSE(vana::all_passed(vana::run_gradcheck_suite(options)));

  options.sabotage = false;
  options.cases = 0;
  CHECK(vana::all_passed(vana::run_gradcheck_suite(options)));  // vacuously
}
