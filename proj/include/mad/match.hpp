#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "mad/error.hpp"
#include "mad/lattice.hpp"

namespace mad {

struct MatchVariable {
  std::string name;
  std::function<double()> get;
  std::function<void(double)> set;
  double rtol = 1e-8;
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();
};

// variable bound to a scalar of an environment
inline MatchVariable env_variable(Env& env, const std::string& name, double rtol = 1e-8,
                                  double min = -std::numeric_limits<double>::infinity(),
                                  double max = std::numeric_limits<double>::infinity()) {
  MatchVariable v;
  v.name = name;
  v.get = [&env, name] { return env.num(name).num(); };
  v.set = [&env, name](double x) { env.set(name, x); };
  v.rtol = rtol;
  v.min = min;
  v.max = max;
  return v;
}

template <class Ctx>
struct MatchEquality {
  std::string name;
  std::function<double(const Ctx&)> expr;
  double tol = 0;  // 0: only fmin decides
  double weight = 1;
  std::string kind = ".";
};

template <class Ctx>
struct MatchProblem {
  std::function<Ctx()> command;
  std::vector<MatchVariable> variables;
  std::vector<MatchEquality<Ctx>> equalities;
  // fills J(i,k) = d c_i / d v_k, unweighted
  std::function<void(const Ctx&, Eigen::MatrixXd&)> jacobian;
  double fmin = 1e-10;
  int bisec = 3;
  int maxcall = 100;
  int info = 0;
  std::ostream* out = &std::cout;
};

struct MatchResult {
  std::string status;
  int iterations = 0;
  int calls = 0;
  double penalty = 0;
  std::vector<double> values, initial, residuals;
  std::vector<double> history;  // penalty of each accepted point
  std::string summary;
};

namespace detail {

inline std::string match_summary(const std::vector<std::string>& cn, const std::vector<double>& w,
                                 const std::vector<std::string>& kind, const std::vector<double>& c,
                                 const std::vector<MatchVariable>& vs, const std::vector<double>& v,
                                 const std::vector<double>& v0) {
  std::string s;
  char buf[160];
  const std::string rule(63, '-');
  s += "Constraints  Type         Kind         Weight     Penalty Value\n" + rule + "\n";
  for (std::size_t i = 0; i < cn.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-12s %-12s %-12s %-10g %.5e\n", cn[i].c_str(), "equality", kind[i].c_str(), w[i],
                  std::abs(w[i] * c[i]));
    s += buf;
  }
  s += "\nVariables    Final Value  Init. Value  Lower Limit  Upper Limit\n" + rule + "\n";
  for (std::size_t k = 0; k < vs.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%-12s %-12.5e %-12.5e %-12.5e %.5e\n", vs[k].name.c_str(), v[k], v0[k], vs[k].min,
                  vs[k].max);
    s += buf;
  }
  return s;
}

}  // namespace detail

// Damped Gauss-Newton with a halving line search. The variables are left at
// the best point found.
template <class Ctx>
MatchResult match(const MatchProblem<Ctx>& p) {
  const auto& V = p.variables;
  const auto& E = p.equalities;
  if (V.empty()) throw CommandError("match: no variables");
  if (E.empty()) throw CommandError("match: no equalities");
  if (!p.command) throw CommandError("match: no command");
  for (const auto& v : V)
    if (v.min >= v.max) throw CommandError("match: variable '" + v.name + "' has min >= max");
  const int n = static_cast<int>(V.size()), m = static_cast<int>(E.size());

  MatchResult r;
  Eigen::VectorXd x(n);
  for (int k = 0; k < n; ++k) {
    x[k] = std::clamp(V[k].get(), V[k].min, V[k].max);
    r.initial.push_back(x[k]);
  }
  auto apply = [&](const Eigen::VectorXd& v) {
    for (int k = 0; k < n; ++k) V[k].set(v[k]);
  };
  // weighted residuals; unweighted kept for the tolerance check
  auto eval = [&](const Eigen::VectorXd& v, Eigen::VectorXd& c, Ctx* keep) {
    apply(v);
    ++r.calls;
    Ctx ctx = p.command();
    c.resize(m);
    for (int i = 0; i < m; ++i) {
      const double ci = E[i].expr(ctx);
      if (!std::isfinite(ci)) throw CommandError("match: constraint '" + E[i].name + "' is not finite");
      c[i] = ci;
    }
    if (keep) *keep = std::move(ctx);
  };
  Eigen::VectorXd w(m);
  for (int i = 0; i < m; ++i) w[i] = E[i].weight;
  auto pen = [&](const Eigen::VectorXd& c) { return c.cwiseProduct(w).norm(); };
  auto done = [&](const Eigen::VectorXd& c) {
    if (pen(c) < p.fmin) return true;
    for (int i = 0; i < m; ++i)
      if (!(std::abs(c[i]) < E[i].tol)) return false;
    return true;
  };

  Eigen::VectorXd c;
  Ctx ctx{};
  eval(x, c, &ctx);
  double f = pen(c);
  r.history.push_back(f);
  double lambda = 0;
  r.status = "FMIN not reached";

  while (true) {
    if (p.info >= 2) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "iter %3d  calls %4d  penalty %.6e\n", r.iterations, r.calls, f);
      *p.out << buf;
    }
    if (done(c)) {
      r.status = "SUCCESS";
      break;
    }
    if (r.calls >= p.maxcall) break;

    Eigen::MatrixXd J(m, n);
    if (p.jacobian) {
      J.setZero();
      p.jacobian(ctx, J);
    } else {
      if (r.calls + n > p.maxcall) break;
      Eigen::VectorXd ch;
      for (int k = 0; k < n; ++k) {
        double h = std::max(V[k].rtol * std::abs(x[k]), V[k].rtol);
        if (x[k] + h > V[k].max) h = -h;
        Eigen::VectorXd xh = x;
        xh[k] += h;
        eval(xh, ch, nullptr);
        J.col(k) = (ch - c) / h;
      }
      apply(x);
    }
    for (int i = 0; i < m; ++i) J.row(i) *= w[i];
    const Eigen::VectorXd cw = c.cwiseProduct(w);
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(J);
    qr.setThreshold(1e-12);
    if (qr.rank() < std::min(m, n) && lambda == 0) lambda = 1e-8;
    ++r.iterations;

    bool accepted = false;
    while (!accepted) {
      Eigen::VectorXd dx;
      if (lambda == 0) {
        dx = -J.completeOrthogonalDecomposition().solve(cw);
      } else {
        const double scale = std::max(JtJ.diagonal().maxCoeff(), 1.0);
        Eigen::MatrixXd A = JtJ + lambda * scale * Eigen::MatrixXd::Identity(n, n);
        dx = -A.ldlt().solve(J.transpose() * cw);
      }
      double a = 1;
      for (int h = 0; h <= p.bisec && r.calls < p.maxcall; ++h, a /= 2) {
        Eigen::VectorXd xt = x + a * dx;
        for (int k = 0; k < n; ++k) xt[k] = std::clamp(xt[k], V[k].min, V[k].max);
        Eigen::VectorXd ct;
        Ctx kt{};
        eval(xt, ct, &kt);
        const double ft = pen(ct);
        if (p.info >= 3) {
          char buf[96];
          std::snprintf(buf, sizeof buf, "  trial step %g  penalty %.6e\n", a, ft);
          *p.out << buf;
        }
        if (ft < f) {
          x = xt;
          c = ct;
          ctx = std::move(kt);
          f = ft;
          accepted = true;
          break;
        }
      }
      if (accepted) {
        lambda = lambda > 1e-8 ? lambda / 10 : 0;
        break;
      }
      if (r.calls >= p.maxcall) break;
      lambda = lambda == 0 ? 1e-8 : lambda * 10;
      if (lambda > 1e8) break;
    }
    if (!accepted) {
      apply(x);
      if (r.calls < p.maxcall) r.status = "no progress";
      break;
    }
    r.history.push_back(f);
  }
  apply(x);
  r.penalty = f;
  r.values.assign(x.data(), x.data() + n);
  r.residuals.assign(c.data(), c.data() + m);
  std::vector<std::string> cn, kind;
  std::vector<double> wv(w.data(), w.data() + m);
  for (const auto& e : E) {
    cn.push_back(e.name);
    kind.push_back(e.kind);
  }
  r.summary = detail::match_summary(cn, wv, kind, r.residuals, V, r.values, r.initial);
  if (p.info >= 1) *p.out << r.summary;
  return r;
}

}  // namespace mad
