#pragma once

// Closed orbit, normal forms and twiss.

#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "mad/damap.hpp"
#include "mad/engine.hpp"

namespace mad {

using cplx = std::complex<double>;
using CTpsa = Tpsa<cplx>;

inline double frac(double q) { return q - std::floor(q); }

// closed orbit ---------------------------------------------------------------

struct Orbit {
  State<double> x{};
  RDaMap map;  // one-turn map expanded about x
  int iterations = 0;
  double residual = 0;
};

inline RDaMap one_turn(const Sequence& seq, const State<double>& x0, const DescPtr& d) {
  if (!seq.beam) throw CommandError("sequence '" + seq.name + "' has no beam");
  RDaMap id = RDaMap::identity(d);
  for (int i = 0; i < 6; ++i) id[i].set0(x0[i]);
  auto flow = map_flow(*seq.beam, id);
  TrackOptions o;
  o.observe = Observe::none;
  track(seq, flow, o);
  return to_map(flow.z[0]);
}

// Newton search of the fixed point; codim 4 and 5 keep pt from the guess.
inline Orbit cofind(const Sequence& seq, const State<double>& guess = {}, int codim = 4, DescPtr d = nullptr) {
  if (codim != 4 && codim != 5 && codim != 6) throw CommandError("cofind: codim must be 4, 5 or 6");
  if (!d) d = Descriptor::make(6, 1);
  if (d->nv() != 6 || d->mo() < 1) throw CommandError("cofind: needs a 6-variable descriptor of order >= 1");
  if (codim == 6) {
    bool rf = false;
    for (const auto& e : seq.entries) rf = rf || (e.elem->kind == "rfcavity" && e.elem->num("volt") != 0);
    if (!rf) throw CommandError("cofind: codim 6 needs an active rfcavity");
  }
  const int n = codim == 6 ? 6 : 4;
  Orbit co;
  co.x = guess;
  for (int it = 0; it <= 20; ++it) {
    co.map = one_turn(seq, co.x, d);
    const auto E = co.map.orbit();
    const auto R = co.map.linear();
    Eigen::VectorXd res(n);
    for (int i = 0; i < n; ++i) res[i] = E[i] - co.x[i];
    co.residual = res.cwiseAbs().maxCoeff();
    co.iterations = it;
    Eigen::MatrixXd A = R.topLeftCorner(n, n) - Eigen::MatrixXd::Identity(n, n);
    if (std::abs(A.determinant()) < 1e-12)
      throw Error("cofind: singular R-I, tune too close to an integer");
    if (co.residual < 1e-10) return co;
    if (it == 20) break;
    const Eigen::VectorXd dx = A.fullPivLu().solve(-res);
    for (int i = 0; i < n; ++i) co.x[i] += dx[i];
  }
  throw Error("cofind: no convergence in 20 iterations (residual " + fmt_double(co.residual) + ")");
}

// normal form ----------------------------------------------------------------

namespace nf {

// x, px, y, py as variables; pt and the knobs as parameters.
inline DescPtr reduced_desc(const DescPtr& d6) {
  std::vector<std::string> pn{"pt"};
  for (const auto& n : d6->param_names()) pn.push_back(n);
  return Descriptor::make(4, d6->mo(), 1 + d6->np(), d6->mo(), pn, {"x", "px", "y", "py"});
}

inline RDaMap reduce(const RDaMap& m6, const DescPtr& d4) {
  const Descriptor& s = *m6.desc();
  RDaMap r(d4);
  std::vector<int> e4(d4->nn());
  for (int i = 0; i < 4; ++i) {
    const RTpsa& src = m6[i];
    for (std::size_t idx = 0; idx < src.end(); ++idx) {
      const double c = src[idx];
      if (c == 0) continue;
      const auto e = s.exps(idx);
      if (e[4] != 0) {
        if (std::abs(c) > 1e-10) throw Error("normal form: transverse motion depends on t, 6D analysis is not supported");
        continue;
      }
      for (int k = 0; k < 4; ++k) e4[k] = e[k];
      e4[4] = e[5];
      for (int k = 0; k < s.np(); ++k) e4[5 + k] = e[6 + k];
      r[i].setm(e4, c);
    }
  }
  return r;
}

// Inverse of reduce for x..py; t and pt rows are the identity. Terms beyond
// the parameter order of d6 are dropped.
inline RDaMap expand(const RDaMap& a4, const DescPtr& d6, const State<double>& orbit) {
  const Descriptor& s = *a4.desc();
  RDaMap r = RDaMap::identity(d6);
  std::vector<int> e6(d6->nn());
  for (int i = 0; i < 4; ++i) {
    RTpsa row(d6);
    for (std::size_t idx = 0; idx < a4[i].end(); ++idx) {
      const double c = a4[i][idx];
      if (c == 0) continue;
      const auto e = s.exps(idx);
      int po = 0;
      for (int k = 0; k < d6->np(); ++k) po += e[5 + k];
      if (po > d6->po()) continue;
      for (int k = 0; k < 4; ++k) e6[k] = e[k];
      e6[4] = 0;
      e6[5] = e[4];
      for (int k = 0; k < d6->np(); ++k) e6[6 + k] = e[5 + k];
      row.setm(e6, c);
    }
    r[i] = std::move(row);
  }
  for (int i = 0; i < 6; ++i) r[i].set0(r[i].get0() + orbit[i]);
  return r;
}

// Coupled linear normalization R = A Rot A^-1 with A(0,1) = A(2,3) = 0.
struct Linear {
  Eigen::Matrix4d A;
  double mu[2];  // radians in [0, 2pi)
};

inline Linear linear_normal(const Eigen::Matrix4d& R) {
  for (int p = 0; p < 2; ++p) {
    const double tr = R(2 * p, 2 * p) + R(2 * p + 1, 2 * p + 1);
    if (std::abs(tr) >= 2) throw Error(std::string("unstable linear motion in plane ") + (p ? "y" : "x") +
                                       " (|trace| = " + fmt_double(std::abs(tr)) + ")");
  }
  Eigen::EigenSolver<Eigen::Matrix4d> es(R);
  if (es.info() != Eigen::Success) throw Error("normal form: eigen decomposition failed");
  Linear out;
  bool have[2] = {false, false};
  for (int k = 0; k < 4; ++k) {
    const cplx lam = es.eigenvalues()[k];
    if (std::abs(std::abs(lam) - 1) > 1e-6) throw Error("unstable linear motion (|eigenvalue| = " + fmt_double(std::abs(lam)) + ")");
    if (lam.imag() <= 0) continue;
    Eigen::Vector4cd v = es.eigenvectors().col(k);
    const int p = (std::norm(v[0]) + std::norm(v[1]) >= std::norm(v[2]) + std::norm(v[3])) ? 0 : 1;
    if (have[p]) throw Error("normal form: cannot separate the transverse planes");
    have[p] = true;
    Eigen::Vector4d a = v.real(), b = v.imag();
    const double sp = a[0] * b[1] - a[1] * b[0] + a[2] * b[3] - a[3] * b[2];
    double mu = std::arg(lam);
    if (sp < 0) {
      b = -b;
      mu = -mu;
    }
    a /= std::sqrt(std::abs(sp));
    b /= std::sqrt(std::abs(sp));
    const double phi = std::atan2(b[2 * p], a[2 * p]);
    const double c = std::cos(phi), s = std::sin(phi);
    out.A.col(2 * p) = c * a + s * b;
    out.A.col(2 * p + 1) = -s * a + c * b;
    out.mu[p] = mu - 2 * std::numbers::pi * std::floor(mu / (2 * std::numbers::pi));
  }
  if (!have[0] || !have[1]) throw Error("normal form: linear motion on the stability boundary");
  return out;
}

inline Eigen::Matrix4cd phasor() {
  const cplx i(0, 1);
  Eigen::Matrix4cd C = Eigen::Matrix4cd::Zero();
  C(0, 0) = 1, C(0, 1) = -i;
  C(1, 0) = 1, C(1, 1) = i;
  C(2, 2) = 1, C(2, 3) = -i;
  C(3, 2) = 1, C(3, 3) = i;
  return C;
}

inline Matrix<cplx> dyn(const Eigen::Matrix4cd& m) { return m; }
inline Matrix<double> dyn(const Eigen::Matrix4d& m) { return m; }

// Frequency offsets (nx, ny) of a monomial in the phasor basis.
inline std::pair<int, int> harmonic(std::span<const std::uint8_t> e) { return {int(e[0]) - e[1], int(e[2]) - e[3]}; }

inline std::pair<int, int> row_harmonic(int j) {
  static const std::pair<int, int> h[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  return h[j];
}

// z -> C m(C^-1 z)
inline CDaMap to_phasor(const RDaMap& m) {
  const auto C = phasor();
  return apply_matrix(dyn(C), compose(to_complex(m), linear_map(m.desc(), dyn(Eigen::Matrix4cd(C.inverse())))));
}

inline RDaMap from_phasor(const CDaMap& m, double* imag = nullptr) {
  const auto C = phasor();
  return real_part(apply_matrix(dyn(Eigen::Matrix4cd(C.inverse())), compose(m, linear_map(m.desc(), dyn(C)))), imag);
}

using Generator = std::map<std::vector<int>, cplx>;

// Factor a near-identity phasor map as (id+a2)(id+a3)... and read each
// factor as the Lie generator whose leading action it is.
inline Generator generators(CDaMap N) {
  const auto d = N.desc();
  const cplx I(0, 1);
  Generator g;
  for (int k = 2; k <= d->mo(); ++k) {
    CDaMap Ak = CDaMap::identity(d);
    bool any = false;
    for (int j = 0; j < 4; ++j) {
      if (N[j].hi() < k) continue;
      for (auto idx = d->order_offset(k); idx < d->order_offset(k + 1); ++idx) {
        const cplx c = N[j][idx];
        if (c == cplx(0)) continue;
        Ak[j][idx] = c;
        Ak[j].touch(k);
        any = true;
        const auto e = d->exps(idx);
        std::vector<int> G(e.begin(), e.end());
        cplx F;
        switch (j) {
          case 0: G[1] += 1; F = I * c / (2.0 * G[1]); break;
          case 2:
            if (e[1]) continue;
            G[3] += 1;
            F = I * c / (2.0 * G[3]);
            break;
          case 1:
            if (e[1] || e[3]) continue;
            G[0] += 1;
            F = -I * c / (2.0 * G[0]);
            break;
          default:
            if (e[0] || e[1] || e[3]) continue;
            G[2] += 1;
            F = -I * c / (2.0 * G[2]);
        }
        g[G] += F;
      }
    }
    if (any) N = compose(invert(Ak), N);
  }
  return g;
}

// Near-identity nonlinear part of a normalizing map given in real
// coordinates: parametric orbit removed, linear part rephased.
struct Local {
  Eigen::Matrix4d A;        // rephased linear part
  Eigen::Vector4d orbit_pt;  // d(orbit)/d(pt)
  double phase[2];          // rephasing angles, radians
  CDaMap N;
};

inline Local local(const RDaMap& a4) {
  const auto d = a4.desc();
  Local L;
  RDaMap rest = a4;
  for (int i = 0; i < 4; ++i) {
    L.orbit_pt[i] = d->mo() >= 1 ? a4[i][5] : 0;  // pt is slot 4
    RTpsa& r = rest[i];
    for (std::size_t idx = 0; idx < r.end(); ++idx)
      if (d->param_order_of(idx) == d->order_of(idx)) r[idx] = 0;
  }
  Eigen::Matrix4d M = rest.linear();
  Eigen::Matrix4d Q = Eigen::Matrix4d::Identity();
  for (int p = 0; p < 2; ++p) {
    const double phi = std::atan2(M(2 * p, 2 * p + 1), M(2 * p, 2 * p));
    const double c = std::cos(phi), s = std::sin(phi);
    Q(2 * p, 2 * p) = c, Q(2 * p, 2 * p + 1) = -s;
    Q(2 * p + 1, 2 * p) = s, Q(2 * p + 1, 2 * p + 1) = c;
    L.phase[p] = phi;
  }
  L.A = M * Q;
  const Eigen::Matrix4d Ai = L.A.inverse();
  L.N = to_phasor(apply_matrix(dyn(Ai), compose(rest, linear_map(d, dyn(Q)))));
  return L;
}

// "4000", "f4000" -> exponents of the phasor variables
inline std::array<int, 4> parse_label(const std::string& label) {
  std::string s = label;
  if (!s.empty() && (s[0] == 'f' || s[0] == 'F')) s.erase(0, 1);
  if (s.size() != 4) throw CommandError("malformed label '" + label + "' (expected f + 4 digits)");
  std::array<int, 4> e{};
  for (int i = 0; i < 4; ++i) {
    if (s[i] < '0' || s[i] > '9') throw CommandError("malformed label '" + label + "'");
    e[i] = s[i] - '0';
  }
  return e;
}

// Part of a phasor map linear in the variables, at any parameter order.
inline CDaMap var_linear(const CDaMap& m) {
  const Descriptor& dd = *m.desc();
  CDaMap r(m.desc());
  for (int i = 0; i < 4; ++i) {
    for (std::size_t idx = 1; idx < m[i].end(); ++idx) {
      if (m[i][idx] == cplx(0)) continue;
      const auto e = dd.exps(idx);
      if (e[0] + e[1] + e[2] + e[3] == 1) r[i][idx] = m[i][idx];
    }
    r[i].touch(m[i].hi());
  }
  return r;
}

// Rotation by phi_p(params) in each plane so that (A0 lin)(2p, 2p+1) = 0 at
// every parameter value, in phasor form.
inline CDaMap cs_rotation(const CDaMap& lin, const Eigen::Matrix4d& A0) {
  const auto d = lin.desc();
  const Descriptor& dd = *d;
  const RDaMap a = apply_matrix(dyn(A0), from_phasor(lin));
  RTpsa L[4][4];
  for (auto& row : L)
    for (auto& v : row) v = RTpsa(d);
  std::vector<int> m(dd.nn());
  for (int i = 0; i < 4; ++i)
    for (std::size_t idx = 1; idx < a[i].end(); ++idx) {
      const double c = a[i][idx];
      if (c == 0) continue;
      const auto e = dd.exps(idx);
      int j = -1, nvar = 0;
      for (int v = 0; v < 4; ++v)
        if (e[v]) nvar += e[v], j = v;
      if (nvar != 1) continue;
      for (int s = 0; s < dd.nn(); ++s) m[s] = s < 4 ? 0 : e[s];
      L[i][j].setm(m, c);
    }
  RDaMap Q(d);
  for (int p = 0; p < 2; ++p) {
    const RTpsa phi = atan(mul(L[2 * p][2 * p + 1], inv(L[2 * p][2 * p])));
    const RTpsa c = cos(phi), s = sin(phi);
    const RTpsa u = RTpsa::variable(d, 2 * p), v = RTpsa::variable(d, 2 * p + 1);
    Q[2 * p] = mul(c, u) - mul(s, v);
    Q[2 * p + 1] = mul(s, u) + mul(c, v);
  }
  return to_phasor(Q);
}

inline cplx generator_coef(const Generator& g, const std::array<int, 4>& e, int np, int knob) {
  std::vector<int> key(4 + np, 0);
  for (int i = 0; i < 4; ++i) key[i] = e[i];
  if (knob > 0) key[4 + knob] = 1;
  auto it = g.find(key);
  return it == g.end() ? cplx(0) : it->second;
}

}  // namespace nf

class NormalForm {
 public:
  RDaMap m;  // reduced one-turn map about the closed orbit
  RDaMap a, r;
  CDaMap ac, rc;  // nonlinear part of a and the normalized map, phasor basis
  Eigen::Matrix4d A0;
  Eigen::Vector4d disp;  // d(orbit)/d(pt)
  double mu[2] = {0, 0};
  double residual = 0;   // largest non-resonant coefficient left in rc
  nf::Generator gen;
  RTpsa nu[2];  // tunes as series in (h+ h-) products and parameters

  int order() const { return m.desc()->mo(); }
  int nknobs() const { return m.desc()->np() - 1; }

  double q(int plane) const { return frac(mu[plane] / (2 * std::numbers::pi)); }
  // derivative of the tune over knob k (1-based)
  double q(int plane, int k) const {
    if (k == 0) return q(plane);
    check_knob(k);
    require(2, "tune knob derivative");
    return nu[plane][1 + 4 + k];
  }
  double dq(int plane) const {
    require(2, "chromaticity");
    return nu[plane][1 + 4];
  }
  // d^(jx+jy+pto) Q / dJx^jx dJy^jy dpt^pto, optionally over knob k
  double anh(int plane, int jx, int jy, int pto = 0, int k = 0) const {
    if (jx < 0 || jy < 0 || pto < 0) throw CommandError("anh: negative order");
    if (k) check_knob(k);
    const int need = (jx + jy > 0 ? 2 * (jx + jy) + 2 : 1) + pto + (k > 0);
    require(need, "anh{" + std::to_string(jx) + "," + std::to_string(jy) + "}");
    const Descriptor& d = *m.desc();
    std::vector<int> e(d.nn(), 0);
    e[0] = e[1] = jx;
    e[2] = e[3] = jy;
    e[4] = pto;
    if (k) e[4 + k] = 1;
    int tot = 0;
    for (int v : e) tot += v;
    if (tot > d.mo()) return 0;
    double f = std::ldexp(1.0, jx + jy) * std::tgamma(jx + 1) * std::tgamma(jy + 1) * std::tgamma(pto + 1);
    return f * nu[plane].getm(e);
  }
  cplx gnfu(const std::string& label, int k = 0) const {
    const auto e = nf::parse_label(label);
    if (k) check_knob(k);
    const int n = e[0] + e[1] + e[2] + e[3];
    if (n < 2) throw CommandError("gnfu: label '" + label + "' has order below 2");
    require(n - 1 + (k > 0), "gnfu " + label);
    return nf::generator_coef(gen, e, nknobs() + 1, k);
  }

 private:
  void require(int o, const std::string& what) const {
    if (order() < o)
      throw CommandError(what + " needs map order " + std::to_string(o) + ", have " + std::to_string(order()));
  }
  void check_knob(int k) const {
    if (k < 1 || k > nknobs()) throw CommandError("knob index " + std::to_string(k) + " out of range");
  }
};

// Normal form of a 6D one-turn map about its closed orbit; pt enters as a
// parameter. preserve keeps near-resonant terms instead of failing.
inline NormalForm normal(const RDaMap& m6, bool preserve = false) {
  if (m6.nv() != 6) throw CommandError("normal: expects a 6-variable map");
  const auto d = nf::reduced_desc(m6.desc());
  const int mo = d->mo();
  NormalForm out;
  out.m = nf::reduce(m6, d);
  for (int i = 0; i < 4; ++i) out.m[i].set0(0);

  // parametric fixed point z*(p)
  const Eigen::Matrix4d Rl = out.m.linear();
  const Eigen::Matrix4d K = (Eigen::Matrix4d::Identity() - Rl);
  if (std::abs(K.determinant()) < 1e-12) throw Error("normal: singular I-R, tune too close to an integer");
  const Eigen::Matrix4d Ki = K.inverse();
  RDaMap Z(d);
  for (int it = 0; it <= mo; ++it) {
    RDaMap G = compose(out.m, Z);
    std::array<RTpsa, 4> res;
    for (int i = 0; i < 4; ++i) res[i] = G[i] - Z[i];
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) Z[i].axpy(Ki(i, j), res[j]);
  }
  RDaMap Tm = RDaMap::identity(d);
  for (int i = 0; i < 4; ++i) Tm[i] += Z[i];
  RDaMap m1 = compose(out.m, Tm);
  for (int i = 0; i < 4; ++i) m1[i] -= Z[i];
  for (int i = 0; i < 4; ++i) out.disp[i] = mo >= 1 ? Z[i][5] : 0;

  const auto lin = nf::linear_normal(Rl);
  out.A0 = lin.A;
  out.mu[0] = lin.mu[0];
  out.mu[1] = lin.mu[1];
  const Eigen::Matrix4d A0i = lin.A.inverse();
  const RDaMap m2 = apply_matrix(nf::dyn(A0i), compose(m1, linear_map(d, nf::dyn(lin.A))));

  CDaMap N = nf::to_phasor(m2);
  CDaMap Acc = CDaMap::identity(d);
  const cplx I(0, 1);
  // diagonal of the linear part, as computed
  cplx lam[4];
  for (int j = 0; j < 4; ++j) {
    lam[j] = N[j][j + 1];
    for (int i = 0; i < 4; ++i) N[j][i + 1] = i == j ? lam[j] : cplx(0);
  }
  auto divisor = [&](int j, std::span<const std::uint8_t> e, bool& resonant) {
    const auto [nx, ny] = nf::harmonic(e);
    resonant = std::make_pair(nx, ny) == nf::row_harmonic(j);
    cplx lm = 1;
    for (int i = 0; i < 4; ++i)
      for (int p = 0; p < e[i]; ++p) lm *= lam[i];
    return lm - lam[j];
  };
  for (int k = 2; k <= mo; ++k) {
    CDaMap Ak = CDaMap::identity(d);
    bool any = false;
    for (int j = 0; j < 4; ++j) {
      for (auto idx = d->order_offset(k); idx < d->order_offset(k + 1); ++idx) {
        const cplx c = N[j][idx];
        if (c == cplx(0)) continue;
        bool res;
        const auto e = d->exps(idx);
        const cplx den = divisor(j, e, res);
        if (res) continue;
        if (std::abs(den) < 1e-9) {
          if (preserve) continue;
          const auto [nx, ny] = nf::harmonic(e);
          const auto [rx, ry] = nf::row_harmonic(j);
          throw Error("normal: small divisor for resonance (" + std::to_string(nx - rx) + ", " +
                      std::to_string(ny - ry) + ")");
        }
        Ak[j][idx] = c / den;
        Ak[j].touch(k);
        any = true;
      }
    }
    if (!any) continue;
    N = compose(invert(Ak), compose(N, Ak));
    Acc = compose(Acc, Ak);
  }
  for (int j = 0; j < 4; ++j)
    for (std::size_t idx = d->order_offset(2); idx < N[j].end(); ++idx) {
      bool res;
      divisor(j, d->exps(idx), res);
      if (!res) out.residual = std::max(out.residual, std::abs(N[j][idx]));
    }
  // split off the parametric linear part and fix its phase as the scalar
  // linear normal form does; N is diagonal and commutes with the rotation
  const CDaMap Ll = nf::var_linear(Acc);
  const CDaMap Qc = nf::cs_rotation(Ll, lin.A);
  const CDaMap Lq = compose(Ll, Qc);
  const CDaMap Nl = compose(invert(Qc), compose(compose(invert(Ll), Acc), Qc));
  out.gen = nf::generators(Lq);
  for (const auto& [k, v] : nf::generators(Nl)) out.gen[k] += v;
  Acc = compose(Lq, Nl);
  out.ac = Acc;
  out.rc = N;

  RDaMap anl = nf::from_phasor(Acc);
  out.a = compose(Tm, apply_matrix(nf::dyn(lin.A), anl));
  out.r = nf::from_phasor(N);

  // nu = arg(r_j / h_j) / 2pi
  for (int p = 0; p < 2; ++p) {
    const int j = 2 * p;
    CTpsa g(d);
    for (std::size_t idx = 1; idx < N[j].end(); ++idx) {
      const auto lo = d->lower(j, idx);
      if (lo == Descriptor::npos || N[j][idx] == cplx(0)) continue;
      g[lo] += N[j][idx];
    }
    g.touch(std::max(0, N[j].hi() - 1));
    const CTpsa L = log(g);
    RTpsa nu(d);
    for (std::size_t idx = 1; idx < L.end(); ++idx) nu[idx] = L[idx].imag() / (2 * std::numbers::pi);
    nu.touch(L.hi());
    nu.set0(out.q(p));
    out.nu[p] = std::move(nu);
  }
  return out;
}

// twiss ----------------------------------------------------------------------

struct TwissOptions {
  int order = 1;  // map order, 2 adds chromaticity
  int codim = 4;
  State<double> guess{};
  std::vector<std::string> knobs;
  int po = 1;
  std::vector<std::string> rdts;
  bool preserve = false;
  // open line when ring is false
  bool ring = true;
  double beta11 = 1, beta22 = 1, alfa11 = 0, alfa22 = 0, dx = 0, dpx = 0, dy = 0, dpy = 0;
};

struct TwissResult {
  MTable table;
  std::optional<NormalForm> nf;
  Orbit orbit;
};

inline TwissResult twiss(const Sequence& seq, const TwissOptions& o = {}, Env* env = nullptr) {
  if (!seq.beam) throw CommandError("twiss: sequence '" + seq.name + "' has no beam");
  if (o.order < 1) throw CommandError("twiss: map order must be >= 1");
  if (o.codim == 6) throw CommandError("twiss: 6D optics is not supported, use codim 4 or 5");
  const int nk = static_cast<int>(o.knobs.size());
  if (nk && !env) throw CommandError("twiss: knobs need an environment");
  const auto d6 = Descriptor::make(6, o.order, nk, nk ? o.po : -1, o.knobs);
  struct Restore {
    Env* env;
    const std::vector<std::string>& k;
    ~Restore() {
      if (env && !k.empty()) env_restore_knobs(*env, k);
    }
  } restore{nk ? env : nullptr, o.knobs};
  if (nk) env_bind_knobs(*env, o.knobs, d6);

  TwissResult res;
  RDaMap a6;
  if (o.ring) {
    res.orbit = cofind(seq, o.guess, o.codim, d6);
    res.nf = normal(res.orbit.map, o.preserve);
    a6 = nf::expand(res.nf->a, d6, res.orbit.x);
  } else {
    for (double b : {o.beta11, o.beta22})
      if (!(b > 0)) throw CommandError("twiss: initial beta must be positive");
    a6 = RDaMap::identity(d6);
    const double b1 = std::sqrt(o.beta11), b2 = std::sqrt(o.beta22);
    for (int i = 0; i < 4; ++i) a6[i] = RTpsa(d6);
    a6[0] = RTpsa::variable(d6, 0) * b1 + RTpsa::variable(d6, 5) * o.dx;
    a6[1] = RTpsa::variable(d6, 0) * (-o.alfa11 / b1) + RTpsa::variable(d6, 1) * (1 / b1) + RTpsa::variable(d6, 5) * o.dpx;
    a6[2] = RTpsa::variable(d6, 2) * b2 + RTpsa::variable(d6, 5) * o.dy;
    a6[3] = RTpsa::variable(d6, 2) * (-o.alfa22 / b2) + RTpsa::variable(d6, 3) * (1 / b2) + RTpsa::variable(d6, 5) * o.dpy;
    for (int i = 0; i < 6; ++i) a6[i].set0(o.guess[i]);
    res.orbit.x = o.guess;
  }
  const auto d4 = nf::reduced_desc(d6);
  for (const auto& l : o.rdts) {
    const auto e = nf::parse_label(l);
    if (e[0] + e[1] + e[2] + e[3] - 1 > o.order) throw CommandError("twiss: rdt " + l + " exceeds the map order");
  }

  StrCol name, kind;
  RealCol s, l, b11, b22, a11, a22, mu1, mu2, dx, dpx, dy, dpy;
  std::array<RealCol, 6> orb;
  std::vector<CplxCol> rdt(o.rdts.size());
  double ph[2] = {0, 0}, acc[2] = {0, 0};

  auto flow = map_flow(*seq.beam, a6);
  flow.atexit = [&](const ElemData& e, MFlow<RTpsa>& f) {
    const auto& z = f.z[0];
    name.push_back(e.name);
    kind.push_back(e.kind);
    s.push_back(e.s + e.l);
    l.push_back(e.l);
    Eigen::Matrix4d L;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) L(i, j) = z[i][j + 1];
    RealCol* bc[2] = {&b11, &b22};
    RealCol* ac[2] = {&a11, &a22};
    RealCol* mc[2] = {&mu1, &mu2};
    for (int p = 0; p < 2; ++p) {
      const int i = 2 * p;
      bc[p]->push_back(L(i, i) * L(i, i) + L(i, i + 1) * L(i, i + 1));
      ac[p]->push_back(-(L(i, i) * L(i + 1, i) + L(i, i + 1) * L(i + 1, i + 1)));
      const double phi = std::atan2(L(i, i + 1), L(i, i));
      double dphi = std::remainder(phi - ph[p], 2 * std::numbers::pi);
      if (dphi < -1e-9) dphi += 2 * std::numbers::pi;
      acc[p] += dphi;
      ph[p] = phi;
      mc[p]->push_back(acc[p] / (2 * std::numbers::pi));
    }
    dx.push_back(z[0][6]);
    dpx.push_back(z[1][6]);
    dy.push_back(z[2][6]);
    dpy.push_back(z[3][6]);
    for (int c = 0; c < 6; ++c) orb[c].push_back(z[c].get0());
    if (!o.rdts.empty()) {
      RDaMap m6(d6);
      for (int c = 0; c < 6; ++c) m6[c] = z[c];
      const auto loc = nf::local(nf::reduce(m6, d4));
      const auto g = nf::generators(loc.N);
      for (std::size_t r = 0; r < o.rdts.size(); ++r)
        rdt[r].push_back(nf::generator_coef(g, nf::parse_label(o.rdts[r]), nk + 1, 0));
    }
  };
  TrackOptions to;
  to.observe = Observe::none;
  track(seq, flow, to);

  MTable& t = res.table;
  t = MTable("twiss", "twiss");
  t.add_column("name", std::move(name));
  t.add_column("kind", std::move(kind));
  t.add_column("s", std::move(s));
  t.add_column("l", std::move(l));
  t.add_column("beta11", std::move(b11));
  t.add_column("beta22", std::move(b22));
  t.add_column("alfa11", std::move(a11));
  t.add_column("alfa22", std::move(a22));
  t.add_column("mu1", std::move(mu1));
  t.add_column("mu2", std::move(mu2));
  t.add_column("dx", std::move(dx));
  t.add_column("dpx", std::move(dpx));
  t.add_column("dy", std::move(dy));
  t.add_column("dpy", std::move(dpy));
  const char* cn[] = {"x", "px", "y", "py", "t", "pt"};
  for (int c = 0; c < 6; ++c) t.add_column(cn[c], std::move(orb[c]));
  for (std::size_t r = 0; r < o.rdts.size(); ++r) {
    std::string n = o.rdts[r];
    if (n[0] != 'f') n = "f" + n;
    t.add_column(n, std::move(rdt[r]));
  }
  t.set_header("length", seq.length);
  t.set_header("energy", seq.beam->energy);
  const double turns[2] = {acc[0] / (2 * std::numbers::pi), acc[1] / (2 * std::numbers::pi)};
  if (res.nf) {
    for (int p = 0; p < 2; ++p) {
      const double qf = res.nf->q(p);
      t.set_header(p ? "q2" : "q1", qf + std::round(turns[p] - qf));
    }
    if (o.order >= 2) {
      t.set_header("dq1", res.nf->dq(0));
      t.set_header("dq2", res.nf->dq(1));
    }
  } else {
    t.set_header("q1", turns[0]);
    t.set_header("q2", turns[1]);
  }
  return res;
}

}  // namespace mad
