#pragma once

// Global frames, rotations and misalignment patches.

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

#include "mad/error.hpp"

namespace mad {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}
inline Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}
// rotation about the longitudinal axis
inline Mat3 rot_s(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

inline Mat3 rot_from_angles(double dtheta, double dphi, double dpsi) {
  return rot_y(dtheta) * rot_x(-dphi) * rot_s(dpsi);
}

struct Angles {
  double theta = 0, phi = 0, psi = 0;
};

inline Angles angles_from_rot(const Mat3& w) {
  Angles a;
  a.theta = std::atan2(w(0, 2), w(2, 2));
  a.phi = std::atan2(w(1, 2), std::hypot(w(0, 2), w(2, 2)));
  a.psi = std::atan2(w(1, 0), w(1, 1));
  return a;
}

inline double orthonormality_error(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
}

inline void require_orthonormal(const Mat3& m, const char* who) {
  const double e = orthonormality_error(m);
  if (!(e <= 1e-9)) {
    std::ostringstream os;
    os << who << ": matrix is not orthonormal (|MtM - I| = " << e << ")";
    throw Error(os.str());
  }
}

// Gram-Schmidt on the columns, keeping the third axis as the reference.
inline Mat3 orthonormalize(const Mat3& m) {
  Vec3 z = m.col(2).normalized();
  Vec3 x = (m.col(0) - z.dot(m.col(0)) * z).normalized();
  Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

struct Misalignment {
  double dx = 0, dy = 0, ds = 0;
  double dtheta = 0, dphi = 0, dpsi = 0;

  bool is_zero() const { return dx == 0 && dy == 0 && ds == 0 && dtheta == 0 && dphi == 0 && dpsi == 0; }
  Vec3 translation() const { return {dx, dy, ds}; }
  Mat3 rotation() const { return rot_from_angles(dtheta, dphi, dpsi); }
};

struct Patch {
  Vec3 T = Vec3::Zero();
  Mat3 R = Mat3::Identity();
};

// Exit patch of a misaligned element whose body maps its entry frame to
// (V, W); the misalignment is (T, R) at the entry.
inline Patch patch_restore(const Mat3& W, const Mat3& R, const Vec3& V, const Vec3& T) {
  require_orthonormal(W, "patch_restore(W)");
  require_orthonormal(R, "patch_restore(R)");
  Patch p;
  p.T = W.transpose() * (R * V + T - V);
  p.R = W.transpose() * R * W;
  return p;
}

// Local displacement and rotation across a body of length l bending by angle
// in the plane rotated by tilt.
inline Patch body_transform(double l, double angle, double tilt = 0) {
  Patch p;
  if (angle == 0) {
    p.T = Vec3(0, 0, l);
    return p;
  }
  const double rho = l / angle;
  p.T = Vec3(rho * (std::cos(angle) - 1), 0, rho * std::sin(angle));
  p.R = rot_y(-angle);
  if (tilt != 0) {
    const Mat3 t = rot_s(tilt);
    p.T = t * p.T;
    p.R = t * p.R * t.transpose();
  }
  return p;
}

struct Frame {
  Vec3 V = Vec3::Zero();
  Mat3 W = Mat3::Identity();
  long steps = 0;

  void apply(const Patch& p) {
    V += W * p.T;
    W = W * p.R;
  }
};

inline constexpr long kReorthonormalizeEvery = 1024;

inline Frame survey_advance(Frame f, double l, double angle, double tilt = 0) {
  if (l < 0) throw Error("survey_advance: negative length");
  f.apply(body_transform(l, angle, tilt));
  if (++f.steps % kReorthonormalizeEvery == 0) f.W = orthonormalize(f.W);
  return f;
}

}  // namespace mad
