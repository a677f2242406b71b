#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mad/optics.hpp"
#include "rings.hpp"

using namespace mad;

namespace {

constexpr double twopi = 2 * std::numbers::pi;

// Courant-Snyder parameters of a 2x2 one-turn block
struct CS {
  double beta, alfa, mu;
};
CS cs_of(const Eigen::MatrixXd& M, int p) {
  const int i = 2 * p;
  const double c = (M(i, i) + M(i + 1, i + 1)) / 2;
  const double s = std::copysign(std::sqrt(1 - c * c), M(i, i + 1));
  double mu = std::atan2(s, c);
  if (mu < 0) mu += twopi;
  return {M(i, i + 1) / s, (M(i, i) - M(i + 1, i + 1)) / (2 * s), mu};
}

// transfer maps to every element exit, order 1, no knobs
std::vector<Eigen::MatrixXd> transfers(const Sequence& seq, const State<double>& x0) {
  auto d = Descriptor::make(6, 1);
  RDaMap id = RDaMap::identity(d);
  for (int i = 0; i < 6; ++i) id[i].set0(x0[i]);
  auto flow = map_flow(*seq.beam, id);
  std::vector<Eigen::MatrixXd> out;
  flow.atexit = [&](const ElemData&, MFlow<RTpsa>& f) { out.push_back(to_map(f.z[0]).linear()); };
  TrackOptions o;
  o.observe = Observe::none;
  track(seq, flow, o);
  return out;
}

State<double> turn(const Sequence& seq, State<double> z) {
  auto f = particle_flow(*seq.beam, {z});
  TrackOptions o;
  o.observe = Observe::none;
  track(seq, f, o);
  if (f.lost[0]) throw std::runtime_error("lost");
  return f.z[0];
}

// Newton with a finite-difference Jacobian of particle tracking
State<double> brute_orbit(const Sequence& seq) {
  State<double> x{};
  for (int it = 0; it < 30; ++it) {
    const auto fx = turn(seq, x);
    Eigen::Vector4d r;
    for (int i = 0; i < 4; ++i) r[i] = fx[i] - x[i];
    if (r.cwiseAbs().maxCoeff() < 1e-13) break;
    Eigen::Matrix4d J;
    for (int j = 0; j < 4; ++j) {
      State<double> a = x, b = x;
      a[j] += 1e-7;
      b[j] -= 1e-7;
      const auto fa = turn(seq, a), fb = turn(seq, b);
      for (int i = 0; i < 4; ++i) J(i, j) = (fa[i] - a[i] - fb[i] + b[i]) / 2e-7;
    }
    const Eigen::Vector4d dx = J.lu().solve(-r);
    for (int i = 0; i < 4; ++i) x[i] += dx[i];
  }
  return x;
}

double max_abs_diff(const RDaMap& a, const RDaMap& b) {
  double m = 0;
  for (int i = 0; i < a.nv(); ++i) {
    const auto ca = a[i].coefs(), cb = b[i].coefs();
    for (std::size_t k = 0; k < ca.size(); ++k) m = std::max(m, std::abs(ca[k] - cb[k]));
  }
  return m;
}

RDaMap matrix_map(const Eigen::MatrixXd& M, int mo = 4) {
  auto d = Descriptor::make(6, mo);
  return linear_map(d, Matrix<double>(M));
}

Eigen::MatrixXd rotation6(double mx, double my) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(6, 6);
  M(0, 0) = M(1, 1) = std::cos(mx);
  M(0, 1) = std::sin(mx);
  M(1, 0) = -std::sin(mx);
  M(2, 2) = M(3, 3) = std::cos(my);
  M(2, 3) = std::sin(my);
  M(3, 2) = -std::sin(my);
  return M;
}

}  // namespace

TEST(Cofind, IdealRingHasZeroOrbit) {
  Env env;
  auto seq = rings::fodo(env);
  auto co = cofind(*seq);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(co.x[i], 0.0);
  EXPECT_LT(co.residual, 1e-10);
}

TEST(Cofind, KickedRingMatchesBruteForce) {
  Env env;
  auto seq = rings::fodo(env, 25, true);
  auto k = Element::make("kicker", "kick", {{"hkick", 2e-4}, {"vkick", -1e-4}});
  seq->entries.insert(seq->entries.begin() + 3, SeqEntry{k, seq->entries[3].s, 0, false});
  auto co = cofind(*seq);
  const auto ref = brute_orbit(*seq);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(co.x[i], ref[i], 1e-9) << i;
  EXPECT_GT(std::abs(co.x[0]), 1e-5);
  EXPECT_LE(co.iterations, 6);
}

TEST(Cofind, IntegerTuneIsSingular) {
  // one turn of pure drift: R - I is nilpotent
  auto d = Element::make("drift", "d", {{"l", 1}});
  auto line = BLine::make("l", {{d}});
  auto seq = build_sequence("s", *line);
  seq->beam = std::make_shared<Beam>();
  EXPECT_THROW(cofind(*seq), Error);
}

TEST(Normal, PureRotationIsAlreadyNormal) {
  auto m = matrix_map(rotation6(0.7, 1.9));
  auto nf = normal(m);
  EXPECT_NEAR(nf.q(0), 0.7 / twopi, 1e-15);
  EXPECT_NEAR(nf.q(1), 1.9 / twopi, 1e-15);
  EXPECT_LT((nf.A0 - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(nf.anh(0, 1, 0), 0.0);
}

TEST(Normal, LinearBlockIsCourantSnyder) {
  const double beta = 7.5, alfa = -1.3, mu = 2.1;
  Eigen::Matrix2d A;
  A << std::sqrt(beta), 0, -alfa / std::sqrt(beta), 1 / std::sqrt(beta);
  Eigen::Matrix2d Rt;
  Rt << std::cos(mu), std::sin(mu), -std::sin(mu), std::cos(mu);
  Eigen::MatrixXd M = rotation6(mu, 0.4);
  M.topLeftCorner(2, 2) = A * Rt * A.inverse();
  auto nf = normal(matrix_map(M));
  EXPECT_NEAR(nf.A0(0, 0) * nf.A0(0, 0), beta, 1e-12);
  EXPECT_NEAR(-nf.A0(0, 0) * nf.A0(1, 0), alfa, 1e-12);
  EXPECT_NEAR(nf.A0(0, 1), 0, 1e-15);
  EXPECT_NEAR(nf.q(0), mu / twopi, 1e-14);
}

TEST(Normal, UnstableMotionNamesPlane) {
  Eigen::MatrixXd M = rotation6(0.3, 0.4);
  M(2, 2) = 2.0, M(2, 3) = 1.0, M(3, 2) = 1.0, M(3, 3) = 1.0;
  try {
    normal(matrix_map(M));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("plane y"), std::string::npos) << e.what();
  }
}

TEST(Normal, ReassemblesNonlinearRing) {
  Env env;
  auto seq = rings::fodo(env, 25, true);
  auto co = cofind(*seq, {}, 4, Descriptor::make(6, 4));
  auto nf = normal(co.map);
  auto back = compose(nf.a, compose(nf.r, invert(nf.a)));
  EXPECT_LT(max_abs_diff(back, nf.m), 1e-9);
  EXPECT_LT(nf.residual, 1e-10);
  // linear part of r is a rotation
  const Eigen::Matrix4d L = nf.r.linear();
  EXPECT_NEAR(L(0, 0), std::cos(nf.mu[0]), 1e-12);
  EXPECT_NEAR(L(0, 1), std::sin(nf.mu[0]), 1e-12);
  EXPECT_NEAR(L(0, 2), 0, 1e-12);
  EXPECT_NE(nf.anh(0, 1, 0), 0.0);
  EXPECT_NE(std::abs(nf.gnfu("f3000")), 0.0);
  EXPECT_THROW(nf.gnfu("f30x0"), CommandError);
  EXPECT_THROW(nf.anh(0, 2, 0), CommandError);  // needs order 6
}

TEST(Normal, NoSextupolesNoOddTerms) {
  Env env;
  env.set("ksf", 0.0);
  env.set("ksd", 0.0);
  auto seq = rings::fodo(env, 25, true, false);
  auto co = cofind(*seq, {}, 4, Descriptor::make(6, 4));
  auto nf = normal(co.map);
  EXPECT_EQ(nf.gnfu("3000"), cplx(0));
  EXPECT_EQ(nf.gnfu("1200"), cplx(0));
  EXPECT_NE(nf.anh(0, 1, 0), 0.0);
}

TEST(Normal, TunesInvariantUnderCycle) {
  Env env;
  auto seq = rings::fodo(env, 25, true);
  auto a = normal(cofind(*seq, {}, 4, Descriptor::make(6, 2)).map);
  auto b = normal(cofind(*cycle(*seq, "qd[7]"), {}, 4, Descriptor::make(6, 2)).map);
  EXPECT_NEAR(a.q(0), b.q(0), 1e-10);
  EXPECT_NEAR(a.q(1), b.q(1), 1e-10);
  EXPECT_NEAR(a.dq(0), b.dq(0), 1e-8);
}

TEST(Normal, KnobDerivativesMatchFiniteDifferences) {
  Env env;
  auto seq = rings::fodo(env, 25, true);
  const std::vector<std::string> knobs{"kqf", "kqd", "ksf"};
  const auto d = Descriptor::make(6, 3, 3, 1, knobs);
  env_bind_knobs(env, knobs, d);
  auto nf = normal(cofind(*seq, {}, 4, d).map);
  env_restore_knobs(env, knobs);
  const double h = 1e-6;
  for (int k = 1; k <= 3; ++k) {
    const std::string& kn = knobs[k - 1];
    const double v = env.num(kn).num();
    auto at = [&](double x) {
      env.set(kn, x);
      auto r = normal(cofind(*seq, {}, 4, Descriptor::make(6, 2)).map);
      env.set(kn, v);
      return r;
    };
    auto p = at(v + h), m = at(v - h);
    for (int pl = 0; pl < 2; ++pl) {
      const double fd = (p.q(pl) - m.q(pl)) / (2 * h);
      EXPECT_NEAR(nf.q(pl, k), fd, 1e-5 * std::abs(fd) + 1e-9) << kn << " plane " << pl;
    }
    for (const char* lb : {"f2001", "f3000", "f1020", "f2100"}) {
      const cplx fd = (p.gnfu(lb) - m.gnfu(lb)) / (2 * h);
      EXPECT_NEAR(std::abs(nf.gnfu(lb, k) - fd), 0, 1e-5 * std::abs(fd) + 1e-9) << kn << " " << lb;
    }
  }
  EXPECT_THROW(nf.q(0, 4), CommandError);
}

TEST(Twiss, FodoMatchesEigenAnalysis) {
  Env env;
  auto seq = rings::fodo(env);
  auto tw = twiss(*seq);
  const auto& t = tw.table;
  ASSERT_EQ(t.nrow(), seq->size());
  const auto Ts = transfers(*seq, {});
  const Eigen::MatrixXd M = Ts.back();
  const CS c0[2] = {cs_of(M, 0), cs_of(M, 1)};
  double acc[2] = {0, 0}, prev[2] = {0, 0};
  for (std::size_t r = 0; r < t.nrow(); ++r) {
    const Eigen::MatrixXd Ms = Ts[r] * M * Ts[r].inverse();
    for (int p = 0; p < 2; ++p) {
      const CS c = cs_of(Ms, p);
      const std::string b = p ? "beta22" : "beta11", a = p ? "alfa22" : "alfa11";
      EXPECT_NEAR(t.col(b)[r], c.beta, 1e-8 * c.beta) << r;
      EXPECT_NEAR(t.col(a)[r], c.alfa, 1e-8 * std::max(1.0, std::abs(c.alfa))) << r;
      const int i = 2 * p;
      double ph = std::atan2(Ts[r](i, i + 1), c0[p].beta * Ts[r](i, i) - c0[p].alfa * Ts[r](i, i + 1));
      double dph = std::remainder(ph - prev[p], twopi);
      if (dph < -1e-9) dph += twopi;
      acc[p] += dph;
      prev[p] = ph;
      EXPECT_NEAR(t.col(p ? "mu2" : "mu1")[r], acc[p] / twopi, 1e-9) << r;
    }
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(M.topLeftCorner(4, 4));
  std::vector<double> tunes;
  for (int k = 0; k < 4; ++k)
    if (es.eigenvalues()[k].imag() > 0) tunes.push_back(std::arg(es.eigenvalues()[k]) / twopi);
  std::sort(tunes.begin(), tunes.end());
  std::vector<double> ours{frac(t.header_num("q1")), frac(t.header_num("q2"))};
  std::sort(ours.begin(), ours.end());
  // tunes above one half show up as 1 - q in the eigenvalue arguments
  for (int p = 0; p < 2; ++p) {
    const double q = ours[p] > 0.5 ? 1 - ours[p] : ours[p];
    EXPECT_NEAR(q, tunes[0] == q ? tunes[0] : (std::abs(tunes[0] - q) < std::abs(tunes[1] - q) ? tunes[0] : tunes[1]), 1e-10);
  }
  EXPECT_NEAR(t.header_num("q1"), t.col("mu1").back(), 1e-9);
  EXPECT_NEAR(t.header_num("q2"), t.col("mu2").back(), 1e-9);
}

TEST(Twiss, ChromaticityMatchesFiniteDifference) {
  Env env;
  auto seq = rings::fodo(env, 25, true);
  TwissOptions o;
  o.order = 2;
  auto tw = twiss(*seq, o);
  const double h = 1e-6;
  auto q_at = [&](double pt) {
    TwissOptions oo;
    oo.guess[PT] = pt;
    auto r = twiss(*seq, oo);
    return std::array<double, 2>{r.nf->q(0), r.nf->q(1)};
  };
  const auto p = q_at(h), m = q_at(-h);
  EXPECT_NEAR(tw.table.header_num("dq1"), (p[0] - m[0]) / (2 * h), 1e-4);
  EXPECT_NEAR(tw.table.header_num("dq2"), (p[1] - m[1]) / (2 * h), 1e-4);
}

TEST(Twiss, DispersionIsPeriodicAndOpticsSane) {
  Env env;
  auto seq = rings::fodo(env);
  auto t = twiss(*seq).table;
  const auto& mu = t.col("mu1");
  for (std::size_t r = 0; r < t.nrow(); ++r) {
    EXPECT_GT(t.col("beta11")[r], 0);
    EXPECT_GT(t.col("beta22")[r], 0);
    if (r) EXPECT_GE(mu[r], mu[r - 1]);
  }
  EXPECT_GT(t.col("dx")[0], 0);
  EXPECT_NEAR(t.col("dx").back(), t.col("dx")[seq->size() / 25 - 1], 1e-10);
  EXPECT_EQ(t.header_num("length"), 225);
}

TEST(Twiss, OpenLineFromRingValuesReproducesRing) {
  Env env;
  auto seq = rings::fodo(env);
  auto ring = twiss(*seq).table;
  const std::size_t last = ring.nrow() - 1;
  TwissOptions o;
  o.ring = false;
  o.beta11 = ring.col("beta11")[last];
  o.beta22 = ring.col("beta22")[last];
  o.alfa11 = ring.col("alfa11")[last];
  o.alfa22 = ring.col("alfa22")[last];
  o.dx = ring.col("dx")[last];
  o.dpx = ring.col("dpx")[last];
  auto line = twiss(*seq, o).table;
  for (std::size_t r = 0; r < ring.nrow(); r += 17) {
    EXPECT_NEAR(line.col("beta11")[r], ring.col("beta11")[r], 1e-8);
    EXPECT_NEAR(line.col("dx")[r], ring.col("dx")[r], 1e-8);
  }
}

TEST(Twiss, RdtsVanishForLinearRing) {
  // straight ring, the exact drifts only drive even orders
  Env env;
  auto seq = rings::fodo(env, 25, true, false);
  env.set("ksf", 0.0);
  env.set("ksd", 0.0);
  env.set("koc", 0.0);
  TwissOptions o;
  o.order = 3;
  o.rdts = {"f3000", "f1200", "f2001"};
  auto t = twiss(*seq, o).table;
  for (const auto& n : o.rdts)
    for (const auto& c : t.cplxcol(n)) EXPECT_LT(std::abs(c), 1e-12);
}

TEST(Twiss, OctupoleRdtAlongRing) {
  // one thin octupole in a straight ring; the exact drifts add a small
  // distributed fourth order term
  Env env;
  auto seq = rings::fodo(env, 5, false, false);
  auto oc = Element::make("multipole", "oc");
  oc->set_list("knl", {0.0, 0.0, 0.0, 50.0});
  seq->entries.insert(seq->entries.begin() + 3, SeqEntry{oc, seq->entries[3].s, 0, false});
  TwissOptions o;
  o.order = 3;
  o.rdts = {"f4000", "f3100"};
  auto tw = twiss(*seq, o);
  const auto& t = tw.table;
  const auto& f = t.cplxcol("f4000");
  ASSERT_GT(std::abs(f[0]), 1e-3);
  // sources add at this order: doubling the octupole isolates its share,
  // constant along the ring and given by the single-kick closed form
  oc->set_list("knl", {0.0, 0.0, 0.0, 100.0});
  const auto f2 = twiss(*seq, o).table.cplxcol("f4000");
  oc->set_list("knl", {0.0, 0.0, 0.0, 50.0});
  const double b = t.col("beta11")[3], q = t.header_num("q1");
  const double single = 50.0 / 24 * b * b / 16 / std::abs(1.0 - std::exp(cplx(0, 8 * std::numbers::pi * q)));
  for (std::size_t r = 0; r < f.size(); ++r) {
    EXPECT_NEAR(std::abs(f2[r] - f[r]), single, 1e-9 * single) << r;
    EXPECT_NEAR(std::abs(f[r]), std::abs(f[0]), 1e-2 * std::abs(f[0]));
  }
  // propagated values equal a normal form computed at two azimuths
  for (const char* at : {"qd[2]", "mb2[4]"}) {
    auto cyc = cycle(*seq, at);
    auto nf = normal(cofind(*cyc, {}, 4, Descriptor::make(6, 3)).map);
    const std::size_t r = t.row_of(at) - 1;
    for (const char* l : {"f4000", "f3100"}) {
      const cplx v = t.cplxcol(l)[r], w = nf.gnfu(l);
      EXPECT_NEAR(std::abs(v - w), 0, 1e-9 * std::abs(w)) << at << " " << l;
    }
  }
}

TEST(Normal, DetuningMatchesTracking) {
  Env env;
  auto seq = rings::fodo(env, 25, true);
  auto co = cofind(*seq, {}, 4, Descriptor::make(6, 4));
  auto nf = normal(co.map);
  const double anh = nf.anh(0, 1, 0);
  const Eigen::Matrix4d A = nf.A0, Ai = A.inverse();
  // Hann-weighted mean of the per-turn advance of the linear normalized
  // phase over 512 turns; plain averaging leaves an O(1/N) end effect
  std::vector<double> J, Q;
  for (double j0 : {2e-7, 4e-7, 6e-7}) {
    Eigen::Vector4d zh(std::sqrt(2 * j0), 0, 0, 0);
    Eigen::Vector4d z = A * zh;
    State<double> p{z[0], z[1], z[2], z[3], 0, 0};
    double ph = 0, jsum = 0, wsum = 0;
    double prev = 0, jprev = j0;
    const int nt = 512;
    for (int n = 0; n < nt; ++n) {
      p = turn(*seq, p);
      const Eigen::Vector4d w = Ai * Eigen::Vector4d(p[0], p[1], p[2], p[3]);
      const double a = std::atan2(-w[1], w[0]);
      const double jn = (w[0] * w[0] + w[1] * w[1]) / 2;
      double d = std::remainder(a - prev, twopi);
      if (d < 0) d += twopi;
      const double wt = std::pow(std::sin(std::numbers::pi * (n + 0.5) / nt), 2);
      ph += wt * d;
      jsum += wt * (jn + jprev) / 2;
      wsum += wt;
      prev = a;
      jprev = jn;
    }
    J.push_back(jsum / wsum);
    Q.push_back(ph / wsum / twopi);
  }
  // least-squares slope
  const double mj = (J[0] + J[1] + J[2]) / 3, mq = (Q[0] + Q[1] + Q[2]) / 3;
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 3; ++i) {
    sxy += (J[i] - mj) * (Q[i] - mq);
    sxx += (J[i] - mj) * (J[i] - mj);
  }
  const double slope = sxy / sxx;
  EXPECT_NEAR(slope, anh, 0.05 * std::abs(anh)) << "tracking " << slope << " normal form " << anh;
}
