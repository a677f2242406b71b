#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mad/match.hpp"
#include "mad/optics.hpp"
#include "rings.hpp"

using namespace mad;

namespace {

struct Lin {
  Eigen::VectorXd c;
};

// c(v) = A v - b on plain doubles
struct LinearFixture {
  Eigen::MatrixXd A{{2, 1, 0}, {1, 3, -1}, {0, -1, 4}, {1, 1, 1}};
  Eigen::VectorXd b{{1, -2, 3, 0.5}};
  std::vector<double> v{0, 0, 0};
  std::vector<Eigen::VectorXd> seen;

  MatchProblem<Lin> problem(bool exact) {
    MatchProblem<Lin> p;
    p.command = [this] {
      Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(v.data(), 3);
      seen.push_back(x);
      return Lin{A * x - b};
    };
    for (int k = 0; k < 3; ++k)
      p.variables.push_back({"v" + std::to_string(k), [this, k] { return v[k]; }, [this, k](double x) { v[k] = x; }});
    for (int i = 0; i < 4; ++i)
      p.equalities.push_back({"c" + std::to_string(i), [i](const Lin& l) { return l.c[i]; }});
    if (exact) p.jacobian = [this](const Lin&, Eigen::MatrixXd& J) { J = A; };
    return p;
  }
};

}  // namespace

TEST(Match, LinearExactOneIteration) {
  LinearFixture f;
  auto p = f.problem(true);
  // consistent system, Newton lands on it
  f.b = f.A * Eigen::Vector3d(0.3, -0.7, 1.1);
  auto r = match(p);
  EXPECT_EQ(r.status, "SUCCESS");
  EXPECT_EQ(r.iterations, 1);
  EXPECT_EQ(r.calls, 2);
  EXPECT_NEAR(r.values[0], 0.3, 1e-12);
  EXPECT_NEAR(r.values[1], -0.7, 1e-12);
  EXPECT_NEAR(r.values[2], 1.1, 1e-12);
}

TEST(Match, LinearFiniteDifferenceCalls) {
  LinearFixture f;
  f.b = f.A * Eigen::Vector3d(0.3, -0.7, 1.1);
  auto p = f.problem(false);
  p.variables[0].rtol = p.variables[1].rtol = p.variables[2].rtol = 1e-7;
  auto r = match(p);
  EXPECT_EQ(r.status, "SUCCESS");
  // one reference, then per iteration nvars probes and one accepted trial
  EXPECT_EQ(r.calls, 1 + r.iterations * (3 + 1));
  EXPECT_NEAR(r.values[2], 1.1, 1e-9);
}

TEST(Match, BoundsNeverLeft) {
  LinearFixture f;
  f.b = f.A * Eigen::Vector3d(0.3, -0.7, 1.1);
  auto p = f.problem(false);
  for (auto& v : p.variables) {
    v.min = -0.5;
    v.max = 0.5;
  }
  p.maxcall = 60;
  auto r = match(p);
  for (const auto& x : f.seen)
    for (int k = 0; k < 3; ++k) {
      EXPECT_GE(x[k], -0.5);
      EXPECT_LE(x[k], 0.5);
    }
  EXPECT_NE(r.status, "SUCCESS");
}

TEST(Match, MaxcallKeepsBest) {
  // Rosenbrock residuals, too few calls to finish
  double a = -1.2, b = 1;
  MatchProblem<Eigen::Vector2d> p;
  p.command = [&] { return Eigen::Vector2d(10 * (b - a * a), 1 - a); };
  p.variables = {{"a", [&] { return a; }, [&](double x) { a = x; }}, {"b", [&] { return b; }, [&](double x) { b = x; }}};
  p.equalities = {{"r1", [](const Eigen::Vector2d& c) { return c[0]; }},
                  {"r2", [](const Eigen::Vector2d& c) { return c[1]; }}};
  p.maxcall = 7;
  auto r = match(p);
  EXPECT_EQ(r.status, "FMIN not reached");
  EXPECT_LE(r.calls, 7);
  EXPECT_DOUBLE_EQ(r.penalty, r.history.back());
  EXPECT_DOUBLE_EQ(a, r.values[0]);
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LT(r.history[i], r.history[i - 1]);
  p.maxcall = 200;
  a = -1.2, b = 1;
  r = match(p);
  EXPECT_EQ(r.status, "SUCCESS");
  EXPECT_NEAR(a, 1, 1e-9);
  EXPECT_NEAR(b, 1, 1e-9);
}

TEST(Match, SingularJacobianDamped) {
  // only the sum of the two variables matters
  double x = 0, y = 0;
  MatchProblem<double> p;
  p.command = [&] { return x + y - 2; };
  p.variables = {{"x", [&] { return x; }, [&](double v) { x = v; }}, {"y", [&] { return y; }, [&](double v) { y = v; }}};
  p.equalities = {{"s", [](const double& c) { return c; }}, {"s2", [](const double& c) { return 2 * c; }}};
  p.jacobian = [](const double&, Eigen::MatrixXd& J) { J << 1, 1, 2, 2; };
  auto r = match(p);
  EXPECT_EQ(r.status, "SUCCESS");
  EXPECT_NEAR(x + y, 2, 1e-10);
}

TEST(Match, NanNamesConstraint) {
  double x = 1;
  MatchProblem<double> p;
  p.command = [&] { return x; };
  p.variables = {{"x", [&] { return x; }, [&](double v) { x = v; }}};
  p.equalities = {{"ok", [](const double& c) { return c; }}, {"bad", [](const double& c) { return std::log(-c); }}};
  try {
    match(p);
    FAIL();
  } catch (const CommandError& e) {
    EXPECT_NE(std::string(e.what()).find("'bad'"), std::string::npos);
  }
}

TEST(Match, SummaryLayout) {
  LinearFixture f;
  f.b = f.A * Eigen::Vector3d(0.3, -0.7, 1.1);
  auto p = f.problem(true);
  std::ostringstream os;
  p.out = &os;
  p.info = 2;
  auto r = match(p);
  EXPECT_NE(r.summary.find("Constraints  Type         Kind         Weight     Penalty Value\n"
                           "---------------------------------------------------------------\n"
                           "c0           equality     .            1          "),
            std::string::npos);
  EXPECT_NE(r.summary.find("Variables    Final Value  Init. Value  Lower Limit  Upper Limit\n"
                           "---------------------------------------------------------------\n"
                           "v0           3.00000e-01  0.00000e+00  -inf"),
            std::string::npos);
  EXPECT_NE(os.str().find("iter   0"), std::string::npos);
  EXPECT_NE(os.str().find("iter   1"), std::string::npos);
}

TEST(Match, InvalidProblem) {
  MatchProblem<double> p;
  p.command = [] { return 0.0; };
  EXPECT_THROW(match(p), CommandError);
  double x = 0;
  p.variables = {{"x", [&] { return x; }, [&](double v) { x = v; }, 1e-8, 1, 0}};
  p.equalities = {{"c", [](const double& c) { return c; }}};
  EXPECT_THROW(match(p), CommandError);
}

namespace {

struct TuneMatch {
  Env env;
  SequencePtr seq = rings::fodo(env);
  double q1t = 0, q2t = 0;
  int calls = 0;

  TuneMatch() {
    auto t = twiss(*seq, {}, &env).table;
    q1t = std::floor(t.header_num("q1")) + 0.31;
    q2t = std::floor(t.header_num("q2")) + 0.32;
  }
  MatchProblem<TwissResult> problem(bool exact) {
    MatchProblem<TwissResult> p;
    TwissOptions o;
    if (exact) {
      o.order = 2;
      o.knobs = {"kqf", "kqd"};
    }
    p.command = [this, o] {
      ++calls;
      return twiss(*seq, o, &env);
    };
    p.variables = {env_variable(env, "kqf", 1e-6), env_variable(env, "kqd", 1e-6)};
    p.equalities = {{"q1", [this](const TwissResult& t) { return t.table.header_num("q1") - q1t; }, 2.5e-3},
                    {"q2", [this](const TwissResult& t) { return t.table.header_num("q2") - q2t; }, 2.5e-3}};
    if (exact)
      p.jacobian = [](const TwissResult& t, Eigen::MatrixXd& J) {
        for (int k = 1; k <= 2; ++k) {
          J(0, k - 1) = t.nf->q(0, k);
          J(1, k - 1) = t.nf->q(1, k);
        }
      };
    p.fmin = 2e-3;
    p.maxcall = 100;
    return p;
  }
};

}  // namespace

TEST(MatchTwiss, FodoTunesFiniteDifference) {
  TuneMatch m;
  auto r = match(m.problem(false));
  EXPECT_EQ(r.status, "SUCCESS");
  EXPECT_LE(r.calls, 100);
  EXPECT_EQ(r.calls, m.calls);
  auto t = twiss(*m.seq, {}, &m.env).table;
  EXPECT_LT(std::abs(t.header_num("q1") - m.q1t), 2.5e-3);
  EXPECT_LT(std::abs(t.header_num("q2") - m.q2t), 2.5e-3);
  EXPECT_EQ(r.calls, 1 + r.iterations * 3);
}

TEST(MatchTwiss, FodoTunesParametricAgrees) {
  TuneMatch fd, ex;
  auto p1 = fd.problem(false);
  auto p2 = ex.problem(true);
  // tighter targets so both paths land on the same point
  p1.fmin = p2.fmin = 1e-11;
  for (auto* p : {&p1, &p2})
    for (auto& e : p->equalities) e.tol = 0;
  auto r1 = match(p1);
  auto r2 = match(p2);
  EXPECT_EQ(r1.status, "SUCCESS");
  EXPECT_EQ(r2.status, "SUCCESS");
  EXPECT_EQ(r2.calls, 1 + r2.iterations);
  EXPECT_NEAR(r1.values[0], r2.values[0], 1e-8);
  EXPECT_NEAR(r1.values[1], r2.values[1], 1e-8);
  // knobs restored to plain numbers after the parametric runs
  EXPECT_NEAR(ex.env.num("kqf").num(), r2.values[0], 0);
}
