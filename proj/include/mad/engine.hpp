#pragma once

// Survey and track engines with the generic element tracker.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "mad/damap.hpp"
#include "mad/geom.hpp"
#include "mad/lattice.hpp"
#include "mad/maps.hpp"
#include "mad/mtable.hpp"

namespace mad {

// Element attributes evaluated once per command run.
struct ElemData {
  std::string name, kind;
  std::size_t index = 0;
  double s = 0, l = 0;
  bool implicit = false;
  double angle = 0, tilt = 0;
  Param k0, k1;  // body field of bends, oscillator strength of quadrupoles
  bool tkt = false;
  std::vector<Param> knl, ksl;  // integrated over the element
  Param hkick, vkick, volt;
  double freq = 0, lag = 0;
  Misalignment mis;
  int nst = 1, order = 2;

  bool is_bend() const { return kind == "sbend" || kind == "rbend"; }
  bool is_patch() const { return kind == "translate" || kind == "rotate"; }
  // chord to arc for true rbends
  double arc() const {
    if (kind != "rbend" || angle == 0) return l;
    return l * (angle / 2) / std::sin(angle / 2);
  }
};

struct Ctx {
  double beta0 = 1;
  double q_over_pc = 1;  // charge / (p0 c) in 1/GeV

  static Ctx of(const Beam& b) { return {b.beta(), b.charge / b.pc()}; }
};

namespace detail {

inline void add_strength(std::vector<Param>& v, std::size_t n, const Param& p) {
  if (p.is_zero()) return;
  if (v.size() <= n) v.resize(n + 1);
  v[n] = v[n] + p;
}

inline bool is_thick_magnet(const std::string& k) {
  return k == "sbend" || k == "rbend" || k == "quadrupole" || k == "sextupole" || k == "octupole";
}

}  // namespace detail

inline ElemData resolve(const SeqEntry& se, std::size_t index, double seq_length, double beta0) {
  const Element& e = *se.elem;
  ElemData d;
  d.name = e.name;
  d.kind = e.kind;
  d.index = index;
  d.s = se.s;
  d.l = se.l;
  d.implicit = se.implicit;
  d.tilt = e.num("tilt");
  const Value f = Value(1.0) + e.value("ktap");
  const Value L(d.l);
  auto integ = [&](const char* k) { return Param(e.value(k) * L * f); };

  if (d.is_patch()) {
    d.mis = {e.num("dx"), e.num("dy"), e.num("ds"), e.num("dtheta"), e.num("dphi"), e.num("dpsi")};
    return d;
  }
  d.mis = {e.num("dx"), e.num("dy"), e.num("ds"), e.num("dtheta"), e.num("dphi"), e.num("dpsi")};

  const std::string& k = d.kind;
  if (k == "sbend" || k == "rbend") {
    d.angle = e.num("angle");
    if (e.has("k0"))
      d.k0 = Param(e.value("k0"));
    else if (k == "sbend")
      d.k0 = Param(d.l > 0 ? d.angle / d.l : 0.0);
    else
      d.k0 = Param(d.l > 0 ? 2 * std::sin(d.angle / 2) / d.l : 0.0);
    if (d.l == 0) throw CommandError("bend '" + d.name + "' has zero length");
    detail::add_strength(d.knl, 1, integ("k1"));
    detail::add_strength(d.knl, 2, integ("k2"));
    detail::add_strength(d.knl, 3, integ("k3"));
  } else if (k == "quadrupole") {
    d.k1 = Param(e.value("k1") * f);
    d.tkt = !d.k1.is_zero();
    detail::add_strength(d.ksl, 1, integ("k1s"));
  } else if (k == "sextupole") {
    detail::add_strength(d.knl, 2, integ("k2"));
    detail::add_strength(d.ksl, 2, integ("k2s"));
  } else if (k == "octupole") {
    detail::add_strength(d.knl, 3, integ("k3"));
    detail::add_strength(d.ksl, 3, integ("k3s"));
  } else if (k == "hkicker") {
    d.hkick = Param(e.has("kick") ? e.value("kick") : e.value("hkick"));
  } else if (k == "vkicker") {
    d.vkick = Param(e.has("kick") ? e.value("kick") : e.value("vkick"));
  } else if (k == "kicker") {
    d.hkick = Param(e.value("hkick"));
    d.vkick = Param(e.value("vkick"));
  } else if (k == "rfcavity") {
    d.volt = Param(e.value("volt"));
    d.freq = e.num("freq");
    d.lag = e.num("lag");
    const double harmon = e.num("harmon");
    if (d.freq == 0 && harmon > 0) {
      if (seq_length <= 0) throw CommandError("cavity '" + d.name + "': harmon needs a sequence length");
      d.freq = harmon * beta0 * 299792458.0 / seq_length / 1e6;
    }
  }
  // extra multipole components on any magnet, already integrated
  if (k != "drift" && k != "marker" && k != "monitor") {
    auto knl = e.list("knl"), ksl = e.list("ksl");
    for (std::size_t n = 0; n < knl.size(); ++n) detail::add_strength(d.knl, n, Param(knl[n] * f));
    for (std::size_t n = 0; n < ksl.size(); ++n) detail::add_strength(d.ksl, n, Param(ksl[n] * f));
  }
  const bool thick = detail::is_thick_magnet(k) && d.l > 0;
  d.nst = static_cast<int>(e.num("nst", thick ? 8 : 1));
  if (d.nst < 1) throw CommandError("element '" + d.name + "': nst must be >= 1");
  d.order = static_cast<int>(e.num("order", 2));
  if (d.order != 2 && d.order != 4) throw CommandError("element '" + d.name + "': integration order must be 2 or 4");
  return d;
}

inline std::vector<ElemData> resolve_all(const Sequence& seq, double beta0) {
  std::vector<ElemData> out;
  out.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) out.push_back(resolve(seq.entries[i], i, seq.length, beta0));
  return out;
}

namespace detail {

inline std::vector<Param> scaled(const std::vector<Param>& v, double f) {
  std::vector<Param> r;
  r.reserve(v.size());
  for (const auto& p : v) r.push_back(p.scaled(f));
  return r;
}

// Thick part of one integration step of length a (signed).
template <class N>
void thick_step(const ElemData& e, State<N>& z, const Ctx& c, double a) {
  const std::string& k = e.kind;
  if (k == "sbend" && e.angle != 0) {
    const double h = e.angle / e.l;
    if (e.k0.is_zero()) {
      const double th = h * a, rho = 1 / h;
      maps::change_frame(z, rot_y(-th), Vec3(rho * (std::cos(th) - 1), 0, rho * std::sin(th)), c.beta0);
      z[T] -= a / c.beta0;
    } else {
      maps::sbend_body(z, a, h, e.k0, c.beta0);
    }
  } else if (e.is_bend() && !e.k0.is_zero()) {
    maps::dipole_body(z, a, e.k0, a * e.arc() / e.l, c.beta0);
  } else if (e.tkt) {
    maps::harmonic(z, e.k1, a);
  } else {
    maps::drift(z, a, c.beta0);
  }
}

template <class N>
void kick_step(const ElemData& e, State<N>& z, const Ctx& c, double a) {
  const double f = a / e.l;
  const double h = (e.kind == "sbend" && e.angle != 0) ? e.angle / e.l : 0;
  if (e.tkt) {
    maps::drift_nonparaxial(z, a / 2, c.beta0);
    maps::kick(z, scaled(e.knl, f), scaled(e.ksl, f), h);
    maps::drift_nonparaxial(z, a / 2, c.beta0);
  } else {
    maps::kick(z, scaled(e.knl, f), scaled(e.ksl, f), h);
  }
}

template <class N>
void step2(const ElemData& e, State<N>& z, const Ctx& c, double a) {
  thick_step(e, z, c, a / 2);
  kick_step(e, z, c, a);
  thick_step(e, z, c, a / 2);
}

}  // namespace detail

// Symplectic integration of the element body over sdir * l.
template <class N>
void integrate(const ElemData& e, State<N>& z, const Ctx& c, int sdir) {
  const double hs = sdir * e.l / e.nst;
  static const double w1 = 1 / (2 - std::cbrt(2.0)), w0 = -std::cbrt(2.0) * w1;
  for (int i = 0; i < e.nst; ++i) {
    if (e.order == 4) {
      detail::step2(e, z, c, w1 * hs);
      detail::step2(e, z, c, w0 * hs);
      detail::step2(e, z, c, w1 * hs);
    } else {
      detail::step2(e, z, c, hs);
    }
  }
}

// Body of the element between its tilt rotations.
template <class N>
void body(const ElemData& e, State<N>& z, const Ctx& c, int sdir) {
  const double L = sdir * e.l;
  const std::string& k = e.kind;
  if (k == "multipole") {
    maps::kick(z, detail::scaled(e.knl, sdir), detail::scaled(e.ksl, sdir));
  } else if (k == "hkicker" || k == "vkicker" || k == "kicker") {
    maps::drift(z, L / 2, c.beta0);
    z[PX] = detail::padd(z[PX], e.hkick, sdir);
    z[PY] = detail::padd(z[PY], e.vkick, sdir);
    maps::drift(z, L / 2, c.beta0);
  } else if (k == "rfcavity") {
    maps::drift(z, L / 2, c.beta0);
    maps::cavity(z, e.volt.scaled(sdir), e.freq, e.lag, c.q_over_pc);
    maps::drift(z, L / 2, c.beta0);
  } else if (detail::is_thick_magnet(k) && e.l > 0) {
    const bool rb = k == "rbend" && e.angle != 0;
    if (rb) maps::change_frame(z, rot_y(sdir * -e.angle / 2), Vec3::Zero(), c.beta0);
    integrate(e, z, c, sdir);
    if (rb) maps::change_frame(z, rot_y(sdir * -e.angle / 2), Vec3::Zero(), c.beta0);
  } else if (detail::is_thick_magnet(k)) {
    maps::kick(z, detail::scaled(e.knl, sdir), detail::scaled(e.ksl, sdir));
  } else {
    maps::drift(z, L, c.beta0);
  }
}

// Exit patch restoring the design frame after a misaligned body.
inline Patch misalignment_exit(const ElemData& e) {
  const Patch b = body_transform(e.kind == "rbend" ? e.arc() : e.l, e.is_bend() ? e.angle : 0, e.tilt);
  const Patch p = patch_restore(b.R, e.mis.rotation(), b.T, e.mis.translation());
  return {-p.R.transpose() * p.T, p.R.transpose()};
}

// atentry, misalign, tilt, fringe, integrate, fringe, tilt, misalign, atexit;
// sdir = -1 runs the inverse pipeline.
template <class N>
void track_element(const ElemData& e, State<N>& z, const Ctx& c, int sdir = 1) {
  if (e.kind == "translate" || e.kind == "rotate") {
    const Patch p = e.kind == "translate" ? Patch{e.mis.translation(), Mat3::Identity()} : Patch{Vec3::Zero(), e.mis.rotation()};
    if (sdir > 0)
      maps::change_frame(z, p.R, p.T, c.beta0);
    else
      maps::change_frame(z, p.R.transpose(), Vec3(-p.R.transpose() * p.T), c.beta0);
    return;
  }
  const bool mis = !e.mis.is_zero();
  if (sdir > 0) {
    if (mis) maps::change_frame(z, e.mis.rotation(), e.mis.translation(), c.beta0);
    maps::srot(z, e.tilt);
    body(e, z, c, 1);
    maps::srot(z, -e.tilt);
    if (mis) {
      const Patch x = misalignment_exit(e);
      maps::change_frame(z, x.R, x.T, c.beta0);
    }
  } else {
    if (mis) {
      const Patch x = misalignment_exit(e);
      maps::change_frame(z, x.R.transpose(), Vec3(-x.R.transpose() * x.T), c.beta0);
    }
    maps::srot(z, e.tilt);
    body(e, z, c, -1);
    maps::srot(z, -e.tilt);
    if (mis) {
      const Mat3 R = e.mis.rotation();
      maps::change_frame(z, R.transpose(), Vec3(-R.transpose() * e.mis.translation()), c.beta0);
    }
  }
}

// tracking ------------------------------------------------------------------

enum class Observe { all, last, none };

struct TrackOptions {
  int nturn = 1;
  int dir = 1;  // combined with the sequence direction
  std::string range;
  Observe observe = Observe::all;
};

template <class N>
struct MFlow {
  std::vector<State<N>> z;
  std::vector<int> lost;  // 0 alive, else 1
  std::vector<std::string> lost_elem;
  std::vector<double> lost_s;
  std::vector<int> lost_turn;
  Ctx ctx;
  int turn = 0;
  int sdir = 1;
  std::function<void(const ElemData&, MFlow&)> atentry, atexit;

  void reset_status() {
    lost.assign(z.size(), 0);
    lost_elem.assign(z.size(), "");
    lost_s.assign(z.size(), 0);
    lost_turn.assign(z.size(), 0);
  }
  std::size_t nalive() const {
    std::size_t n = 0;
    for (int l : lost) n += l == 0;
    return n;
  }
};

// Element indices of a range "A/B" (wrapping), full sequence if empty.
inline std::vector<std::size_t> range_indices(const Sequence& seq, const std::string& range) {
  std::vector<std::size_t> idx;
  const std::size_t n = seq.size();
  if (n == 0) return idx;
  std::size_t a = 0, b = n - 1;
  if (!range.empty()) {
    const auto slash = range.find('/');
    a = seq.index_of(range.substr(0, slash));
    b = slash == std::string::npos ? a : seq.index_of(range.substr(slash + 1));
  }
  for (std::size_t i = a;; i = (i + 1) % n) {
    idx.push_back(i);
    if (i == b) break;
  }
  return idx;
}

template <class N>
State<N> state_value(const State<N>& z) {
  return z;
}

// Track every object of the flow; returns the observation table.
template <class N>
MTable track(const Sequence& seq, MFlow<N>& flow, const TrackOptions& opt = {}) {
  if (!seq.beam) throw CommandError("sequence '" + seq.name + "' has no beam");
  if (flow.lost.size() != flow.z.size()) flow.reset_status();
  const std::vector<ElemData> elems = resolve_all(seq, flow.ctx.beta0);
  std::vector<std::size_t> order = range_indices(seq, opt.range);
  const int sdir = (seq.dir * opt.dir) < 0 ? -1 : 1;
  if (sdir < 0) std::reverse(order.begin(), order.end());
  flow.sdir = sdir;

  StrCol name, kind;
  RealCol s, l, id, turn;
  std::array<RealCol, 6> zc;
  auto record = [&](const ElemData& e) {
    for (std::size_t p = 0; p < flow.z.size(); ++p) {
      if (flow.lost[p]) continue;
      name.push_back(e.name);
      kind.push_back(e.kind);
      s.push_back(sdir > 0 ? e.s + e.l : e.s);
      l.push_back(e.l);
      id.push_back(double(p + 1));
      turn.push_back(flow.turn);
      for (int c = 0; c < 6; ++c) zc[c].push_back(detail::lead(flow.z[p][c]));
    }
  };

  for (int tn = 1; tn <= opt.nturn; ++tn) {
    flow.turn = tn;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const ElemData& e = elems[order[k]];
      if (flow.atentry) flow.atentry(e, flow);
      for (std::size_t p = 0; p < flow.z.size(); ++p) {
        if (flow.lost[p]) continue;
        if constexpr (is_series_v<N>) {
          try {
            track_element(e, flow.z[p], flow.ctx, sdir);
          } catch (const LostError& err) {
            throw LostError(std::string("map lost in '") + e.name + "' at s=" + fmt_double(e.s) + ": " + err.what());
          }
        } else {
          State<N> keep = flow.z[p];
          bool bad = false;
          try {
            track_element(e, flow.z[p], flow.ctx, sdir);
            for (double v : flow.z[p]) bad = bad || !std::isfinite(v);
          } catch (const LostError&) {
            bad = true;
          }
          if (bad) {
            flow.z[p] = keep;
            flow.lost[p] = 1;
            flow.lost_elem[p] = e.name;
            flow.lost_s[p] = e.s;
            flow.lost_turn[p] = tn;
          }
        }
      }
      if (flow.atexit) flow.atexit(e, flow);
      if (opt.observe == Observe::all || (opt.observe == Observe::last && k + 1 == order.size())) record(e);
    }
    if (flow.nalive() == 0) break;
  }

  MTable t("track", "track");
  t.add_column("name", std::move(name));
  t.add_column("kind", std::move(kind));
  t.add_column("s", std::move(s));
  t.add_column("l", std::move(l));
  t.add_column("id", std::move(id));
  t.add_column("turn", std::move(turn));
  const char* cn[] = {"x", "px", "y", "py", "t", "pt"};
  for (int c = 0; c < 6; ++c) t.add_column(cn[c], std::move(zc[c]));
  t.set_header("nturn", double(opt.nturn));
  t.set_header("nlost", double(flow.z.size() - flow.nalive()));
  t.set_header("length", seq.length);
  return t;
}

// Particles from initial coordinates; maps from a DaMap.
inline MFlow<double> particle_flow(const Beam& b, std::vector<State<double>> z0) {
  MFlow<double> f;
  f.z = std::move(z0);
  f.ctx = Ctx::of(b);
  f.reset_status();
  return f;
}

inline MFlow<RTpsa> map_flow(const Beam& b, const RDaMap& m) {
  if (m.nv() != 6) throw CommandError("map tracking needs 6 variables");
  MFlow<RTpsa> f;
  State<RTpsa> z;
  for (int i = 0; i < 6; ++i) z[i] = m[i];
  f.z.push_back(std::move(z));
  f.ctx = Ctx::of(b);
  f.reset_status();
  return f;
}

inline RDaMap to_map(const State<RTpsa>& z) {
  RDaMap m(z[0].desc());
  for (int i = 0; i < 6; ++i) m[i] = z[i];
  return m;
}

// survey ---------------------------------------------------------------------

struct SurveyOptions {
  std::string range;
  bool mapsave = false;
  Frame start;
};

struct SurveyResult {
  MTable table;
  std::vector<Mat3> W;
  Frame end;
};

inline SurveyResult survey(const Sequence& seq, const SurveyOptions& opt = {}) {
  Frame f = opt.start;
  StrCol name, kind;
  RealCol s, l, angle, tilt, x, y, zc, theta, phi, psi;
  std::vector<Mat3> Ws;
  for (std::size_t i : range_indices(seq, opt.range)) {
    const SeqEntry& se = seq.entries[i];
    const Element& e = *se.elem;
    double ang = 0, tl = 0;
    if (e.kind == "translate") {
      f.apply({Vec3(e.num("dx"), e.num("dy"), e.num("ds")), Mat3::Identity()});
    } else if (e.kind == "rotate") {
      f.apply({Vec3::Zero(), rot_from_angles(e.num("dtheta"), e.num("dphi"), e.num("dpsi"))});
    } else {
      tl = e.num("tilt");
      double len = se.l;
      if (e.kind == "sbend" || e.kind == "rbend") {
        ang = e.num("angle");
        if (e.kind == "rbend" && ang != 0) len = se.l * (ang / 2) / std::sin(ang / 2);
      }
      f = survey_advance(f, len, ang, tl);
    }
    name.push_back(e.name);
    kind.push_back(e.kind);
    s.push_back(se.s + se.l);
    l.push_back(se.l);
    angle.push_back(ang);
    tilt.push_back(tl);
    x.push_back(f.V.x());
    y.push_back(f.V.y());
    zc.push_back(f.V.z());
    const Angles a = angles_from_rot(f.W);
    theta.push_back(a.theta);
    phi.push_back(a.phi);
    psi.push_back(a.psi);
    Ws.push_back(f.W);
  }
  SurveyResult r;
  MTable& t = r.table;
  t = MTable("survey", "survey");
  t.add_column("name", std::move(name));
  t.add_column("kind", std::move(kind));
  t.add_column("s", std::move(s));
  t.add_column("l", std::move(l));
  t.add_column("angle", std::move(angle));
  t.add_column("tilt", std::move(tilt));
  t.add_column("x", std::move(x));
  t.add_column("y", std::move(y));
  t.add_column("z", std::move(zc));
  t.add_column("theta", std::move(theta));
  t.add_column("phi", std::move(phi));
  t.add_column("psi", std::move(psi));
  if (opt.mapsave) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        RealCol w(Ws.size());
        for (std::size_t k = 0; k < Ws.size(); ++k) w[k] = Ws[k](i, j);
        t.add_column("w" + std::to_string(i + 1) + std::to_string(j + 1), std::move(w));
      }
    r.W = Ws;
  }
  t.set_header("length", seq.length);
  r.end = f;
  return r;
}

}  // namespace mad
