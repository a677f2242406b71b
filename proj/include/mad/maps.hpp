#pragma once

// Elementary maps acting on (x, px, y, py, t, pt), for plain numbers or series.

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <memory>
#include <numbers>
#include <type_traits>
#include <vector>

#include "mad/error.hpp"
#include "mad/geom.hpp"
#include "mad/tpsa.hpp"
#include "mad/value.hpp"

namespace mad {

enum Coord { X = 0, PX = 1, Y = 2, PY = 3, T = 4, PT = 5 };

template <class N>
using State = std::array<N, 6>;

template <class N>
inline constexpr bool is_series_v = std::is_same_v<N, RTpsa>;

// A strength: plain value, or a series when a knob is bound to it.
struct Param {
  double v = 0;
  std::shared_ptr<const RTpsa> t;

  Param() = default;
  Param(double d) : v(d) {}
  explicit Param(const Value& x) : v(x.num()) {
    if (x.is_tpsa()) t = std::make_shared<RTpsa>(x.tpsa());
  }
  bool is_zero() const { return !t && v == 0; }
  Param scaled(double f) const {
    Param p(v * f);
    if (t) p.t = std::make_shared<RTpsa>(*t * f);
    return p;
  }
  friend Param operator+(const Param& a, const Param& b) {
    Param p(a.v + b.v);
    if (a.t && b.t)
      p.t = std::make_shared<RTpsa>(*a.t + *b.t);
    else if (a.t)
      p.t = std::make_shared<RTpsa>(*a.t + b.v);
    else if (b.t)
      p.t = std::make_shared<RTpsa>(*b.t + a.v);
    return p;
  }
};

namespace detail {

inline std::string fmt_num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.6g", v);
  return b;
}

template <class N>
double lead(const N& x) {
  if constexpr (is_series_v<N>)
    return x.get0();
  else
    return x;
}

template <class N>
N like(const N& ref, double v) {
  if constexpr (is_series_v<N>)
    return N(ref.desc(), v);
  else
    return v;
}

// k * x with k possibly a series
template <class N>
N pmul(const Param& k, const N& x) {
  if constexpr (is_series_v<N>) {
    if (k.t) return *k.t * x;
  }
  return x * k.v;
}

template <class N>
N pval(const Param& k, const N& ref) {
  if constexpr (is_series_v<N>) {
    if (k.t) return *k.t;
  }
  return like(ref, k.v);
}

// x + k f
template <class N>
N padd(N x, const Param& k, double f) {
  if constexpr (is_series_v<N>) {
    if (k.t) {
      x.axpy(f, *k.t);
      return x;
    }
  }
  return x + k.v * f;
}

template <class N>
N gsqrt(const N& a) {
  using std::sqrt;
  return sqrt(a);
}
template <class N>
N gsin(const N& a) {
  using std::sin;
  return sin(a);
}
template <class N>
N gcos(const N& a) {
  using std::cos;
  return cos(a);
}
template <class N>
N gasin(const N& a) {
  using std::asin;
  return asin(a);
}

// sqrt of a longitudinal momentum square, losing the particle when <= 0
template <class N>
N pz_of(const N& arg) {
  const double a = lead(arg);
  if (!(a > 0)) throw LostError("longitudinal momentum not real (pz^2 = " + fmt_num(a) + ")");
  return gsqrt(arg);
}

}  // namespace detail

namespace maps {

using detail::lead;

template <class N>
N pz(const State<N>& z, double beta0) {
  const N arg = 1.0 + z[PT] * (2.0 / beta0) + z[PT] * z[PT] - z[PX] * z[PX] - z[PY] * z[PY];
  return detail::pz_of(arg);
}

// exact drift
template <class N>
void drift(State<N>& z, double l, double beta0) {
  if (l == 0) return;
  const N ipz = 1.0 / pz(z, beta0);
  z[X] += z[PX] * ipz * l;
  z[Y] += z[PY] * ipz * l;
  z[T] += (z[PT] + 1.0 / beta0) * ipz * l - l / beta0;
}

// Momentum-only part of the drift with the paraxial term removed; together
// with the harmonic flow below it splits the exact quadrupole.
template <class N>
void drift_nonparaxial(State<N>& z, double l, double beta0) {
  if (l == 0) return;
  const N ipz = 1.0 / pz(z, beta0);
  z[X] += (z[PX] * ipz - z[PX]) * l;
  z[Y] += (z[PY] * ipz - z[PY]) * l;
  z[T] += (z[PT] + 1.0 / beta0) * ipz * l - l / beta0;
}

// cos/sin-like entire functions of K for the oscillator x'' = -K x:
// c = cos(sqrt(K) s), sn = sin(sqrt(K) s)/sqrt(K)
inline void cs_scalar(double K, double s, double& c, double& sn) {
  if (K > 0) {
    const double w = std::sqrt(K);
    c = std::cos(w * s);
    sn = std::sin(w * s) / w;
  } else if (K < 0) {
    const double w = std::sqrt(-K);
    c = std::cosh(w * s);
    sn = std::sinh(w * s) / w;
  } else {
    c = 1;
    sn = s;
  }
}

inline void cs_series(const RTpsa& K, double s, RTpsa& c, RTpsa& sn) {
  const RTpsa q = K * (-s * s);
  RTpsa tc(K.desc(), 1.0), ts(K.desc(), s);
  c = tc;
  sn = ts;
  for (int n = 1; n < 200; ++n) {
    tc = tc * q * (1.0 / ((2.0 * n - 1) * (2.0 * n)));
    ts = ts * q * (1.0 / ((2.0 * n) * (2.0 * n + 1)));
    c += tc;
    sn += ts;
    double m = 0;
    for (double v : tc.coefs()) m = std::max(m, std::abs(v));
    for (double v : ts.coefs()) m = std::max(m, std::abs(v));
    if (m < 1e-18 && n > 2) break;
  }
}

// Flow of (px^2 + py^2)/2 + k1 (x^2 - y^2)/2 over length s.
template <class N>
void harmonic(State<N>& z, const Param& k1, double s) {
  if (s == 0) return;
  auto apply = [&](int q, int p, const auto& c, const auto& sn, const auto& ksn) {
    N q0 = z[q];
    z[q] = q0 * c + z[p] * sn;
    z[p] = z[p] * c - q0 * ksn;
  };
  if constexpr (is_series_v<N>) {
    if (k1.t) {
      RTpsa cx, sx, cy, sy;
      cs_series(*k1.t, s, cx, sx);
      cs_series(-*k1.t, s, cy, sy);
      apply(X, PX, cx, sx, *k1.t * sx);
      apply(Y, PY, cy, sy, -*k1.t * sy);
      return;
    }
  }
  double cx, sx, cy, sy;
  cs_scalar(k1.v, s, cx, sx);
  cs_scalar(-k1.v, s, cy, sy);
  apply(X, PX, cx, sx, k1.v * sx);
  apply(Y, PY, cy, sy, -k1.v * sy);
}

// Thin multipole kick with integrated strengths; with curvature h the
// potential is (1 + h x) times the straight one.
template <class N>
void kick(State<N>& z, const std::vector<Param>& knl, const std::vector<Param>& ksl, double h = 0) {
  const std::size_t n = std::max(knl.size(), ksl.size());
  if (n == 0) return;
  bool any = false;
  for (std::size_t i = 0; i < n; ++i)
    any = any || (i < knl.size() && !knl[i].is_zero()) || (i < ksl.size() && !ksl[i].is_zero());
  if (!any) return;
  // F = sum (kn + i ksn) w^j / j!, G = sum (kn + i ksn) w^(j+1) / (j+1)!, w = x + i y
  N fr = detail::like(z[X], 0.0), fi = fr, gr = fr, gi = fr;
  for (std::size_t j = n; j-- > 0;) {
    double fact = 1;
    for (std::size_t q = 2; q <= j; ++q) fact *= q;
    const Param kn = j < knl.size() ? knl[j] : Param{};
    const Param ks = j < ksl.size() ? ksl[j] : Param{};
    // horner on w: (fr + i fi) <- (fr + i fi) w + c_j / j!
    N r = fr * z[X] - fi * z[Y];
    N i = fr * z[Y] + fi * z[X];
    fr = detail::padd(std::move(r), kn, 1.0 / fact);
    fi = detail::padd(std::move(i), ks, 1.0 / fact);
  }
  if (h != 0) {
    for (std::size_t j = n; j-- > 0;) {
      double fact = 1;
      for (std::size_t q = 2; q <= j + 1; ++q) fact *= q;
      const Param kn = j < knl.size() ? knl[j] : Param{};
      const Param ks = j < ksl.size() ? ksl[j] : Param{};
      N r = gr * z[X] - gi * z[Y];
      N i = gr * z[Y] + gi * z[X];
      gr = detail::padd(std::move(r), kn, 1.0 / fact);
      gi = detail::padd(std::move(i), ks, 1.0 / fact);
    }
    // G so far is sum c_j w^j/(j+1)!; one more factor of w
    N r = gr * z[X] - gi * z[Y];
    gr = r;
    const N hx = 1.0 + z[X] * h;
    z[PX] -= fr * hx + gr * h;
    z[PY] += fi * hx;
    return;
  }
  z[PX] -= fr;
  z[PY] += fi;
}

// Exact sector bend body with field b over the arc of curvature h and
// length l (angle h l); l may be negative to run backwards.
template <class N>
void sbend_body(State<N>& z, double l, double h, const Param& b0, double beta0) {
  if (l == 0) return;
  const double th = h * l, rho = 1 / h;
  const double c = std::cos(th), s = std::sin(th);
  const N b = detail::pval(b0, z[X]);
  const N dp2 = 1.0 + z[PT] * (2.0 / beta0) + z[PT] * z[PT];
  const N pp2 = dp2 - z[PY] * z[PY];
  const N pz0 = detail::pz_of(pp2 - z[PX] * z[PX]);
  const N r = z[X] + rho;
  const N px1 = z[PX] * c + (pz0 - b * r) * s;
  const N pz1 = detail::pz_of(pp2 - px1 * px1);
  const N ib = 1.0 / b;
  const N r1 = (b * r * c + pz1 - pz0 * c + z[PX] * s) * ib;
  const N pp = detail::gsqrt(pp2);
  const N ipp = 1.0 / pp;
  const N a = detail::gasin(z[PX] * ipp) - detail::gasin(px1 * ipp) + th;
  z[X] = r1 - rho;
  z[PX] = px1;
  z[Y] += z[PY] * a * ib;
  z[T] += (z[PT] + 1.0 / beta0) * a * ib - l / beta0;
}

// Uniform vertical field b in a straight frame over length l; lref is the
// reference path length used for the time offset.
template <class N>
void dipole_body(State<N>& z, double l, const Param& b0, double lref, double beta0) {
  if (l == 0) return;
  const N b = detail::pval(b0, z[X]);
  const N dp2 = 1.0 + z[PT] * (2.0 / beta0) + z[PT] * z[PT];
  const N pp2 = dp2 - z[PY] * z[PY];
  const N pz0 = detail::pz_of(pp2 - z[PX] * z[PX]);
  const N px1 = z[PX] - b * l;
  const N pz1 = detail::pz_of(pp2 - px1 * px1);
  const N ib = 1.0 / b;
  const N ipp = 1.0 / detail::gsqrt(pp2);
  const N a = detail::gasin(z[PX] * ipp) - detail::gasin(px1 * ipp);
  z[X] += (pz1 - pz0) * ib;
  z[PX] = px1;
  z[Y] += z[PY] * a * ib;
  z[T] += (z[PT] + 1.0 / beta0) * a * ib - lref / beta0;
}

// Move to the frame (R, T) given in current coordinates, projecting the
// particle on its z' = 0 plane along a straight line.
template <class N>
void change_frame(State<N>& z, const Mat3& R, const Vec3& Tv, double beta0) {
  const bool rot = !(R - Mat3::Identity()).isZero(0);
  if (!rot && Tv.isZero(0)) return;
  const Mat3 Rt = R.transpose();
  const N p0 = pz(z, beta0);
  const N P0 = z[X] - Tv[0], P1 = z[Y] - Tv[1];
  const double P2 = -Tv[2];
  // rotated position and momentum
  N qx = P0 * Rt(0, 0) + P1 * Rt(0, 1) + P2 * Rt(0, 2);
  N qy = P0 * Rt(1, 0) + P1 * Rt(1, 1) + P2 * Rt(1, 2);
  N qz = P0 * Rt(2, 0) + P1 * Rt(2, 1) + P2 * Rt(2, 2);
  N px = z[PX] * Rt(0, 0) + z[PY] * Rt(0, 1) + p0 * Rt(0, 2);
  N py = z[PX] * Rt(1, 0) + z[PY] * Rt(1, 1) + p0 * Rt(1, 2);
  N pzn = z[PX] * Rt(2, 0) + z[PY] * Rt(2, 1) + p0 * Rt(2, 2);
  if (!(lead(pzn) > 0)) throw LostError("particle moves backwards after frame change");
  const N lam = -qz / pzn;
  z[X] = qx + lam * px;
  z[Y] = qy + lam * py;
  z[PX] = px;
  z[PY] = py;
  z[T] += lam * (z[PT] + 1.0 / beta0);
}

// Rotation of the transverse axes by psi about the longitudinal axis.
template <class N>
void srot(State<N>& z, double psi) {
  if (psi == 0) return;
  const double c = std::cos(psi), s = std::sin(psi);
  N x = z[X] * c + z[Y] * s, y = z[Y] * c - z[X] * s;
  N px = z[PX] * c + z[PY] * s, py = z[PY] * c - z[PX] * s;
  z[X] = x;
  z[Y] = y;
  z[PX] = px;
  z[PY] = py;
}

// Thin RF kick: q V / pc sin(2 pi (lag - f t / c)); volt in MV, freq in MHz.
template <class N>
void cavity(State<N>& z, const Param& volt, double freq_mhz, double lag, double q_over_pc) {
  if (volt.is_zero()) return;
  const double w = 2 * std::numbers::pi * freq_mhz * 1e6 / 299792458.0;
  const N ph = (z[T] * w - 2 * std::numbers::pi * lag) * -1.0;
  z[PT] += detail::pmul(volt, detail::gsin(ph)) * (1e-3 * q_over_pc);
}

}  // namespace maps
}  // namespace mad
