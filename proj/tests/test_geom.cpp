#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "mad/geom.hpp"

using namespace mad;

namespace {

Mat3 random_rot(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  return rot_from_angles(u(rng), u(rng) / 2, u(rng));
}

Vec3 random_vec(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST(Geom, RotationConventions) {
  EXPECT_EQ((rot_from_angles(0, 0, 0) - Mat3::Identity()).norm(), 0.0);
  Vec3 z = rot_from_angles(std::numbers::pi / 2, 0, 0) * Vec3(0, 0, 1);
  EXPECT_NEAR((z - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
  // positive phi pitches the longitudinal axis upwards
  Vec3 up = rot_from_angles(0, 0.1, 0) * Vec3(0, 0, 1);
  EXPECT_GT(up.y(), 0);
  std::mt19937 rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_LT(orthonormality_error(random_rot(rng)), 1e-12);
}

TEST(Geom, AnglesRoundTrip) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int i = 0; i < 100; ++i) {
    const double th = u(rng), ph = u(rng), ps = u(rng);
    auto a = angles_from_rot(rot_from_angles(th, ph, ps));
    EXPECT_NEAR(a.theta, th, 1e-13);
    EXPECT_NEAR(a.phi, ph, 1e-13);
    EXPECT_NEAR(a.psi, ps, 1e-13);
  }
}

TEST(Geom, PatchRestoreTrivialCases) {
  std::mt19937 rng(3);
  const Mat3 w = random_rot(rng);
  auto p = patch_restore(w, Mat3::Identity(), random_vec(rng), Vec3::Zero());
  EXPECT_LT(p.T.norm(), 1e-15);
  EXPECT_LT((p.R - Mat3::Identity()).norm(), 1e-15);
  const Vec3 t(0.1, -0.2, 0.3);
  p = patch_restore(Mat3::Identity(), Mat3::Identity(), Vec3(1, 2, 3), t);
  EXPECT_LT((p.T - t).norm(), 1e-15);
}

TEST(Geom, PatchRestoreRejectsNonOrthonormal) {
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = 1.01;
  EXPECT_THROW(patch_restore(bad, Mat3::Identity(), Vec3::Zero(), Vec3::Zero()), Error);
  EXPECT_THROW(patch_restore(Mat3::Identity(), bad, Vec3::Zero(), Vec3::Zero()), Error);
}

TEST(Geom, PatchRestoreClosesFrameChain) {
  // entry misalignment, body, then the restoring exit patch must land on the
  // unmisaligned exit frame
  std::mt19937 rng(4);
  for (int i = 0; i < 50; ++i) {
    const Mat3 W = random_rot(rng), R = random_rot(rng);
    const Vec3 V = random_vec(rng), T = random_vec(rng);
    Frame probe;
    probe.V = random_vec(rng);
    probe.W = random_rot(rng);

    Frame ideal = probe;
    ideal.apply({V, W});

    Frame mis = probe;
    mis.apply({T, R});
    mis.apply({V, W});
    const Patch p = patch_restore(W, R, V, T);
    // inverse of the patch
    mis.apply({-p.R.transpose() * p.T, p.R.transpose()});

    EXPECT_LT((mis.V - ideal.V).norm(), 1e-10);
    EXPECT_LT((mis.W - ideal.W).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT(orthonormality_error(p.R), 1e-12);
  }
}

TEST(Geom, SurveyStraightAndArc) {
  Frame f = survey_advance(Frame{}, 1.0, 0.0);
  EXPECT_LT((f.V - Vec3(0, 0, 1)).norm(), 1e-15);

  const double l = 2, ang = std::numbers::pi / 25, rho = l / ang;
  Frame g = survey_advance(Frame{}, l, ang);
  const double chord = 2 * rho * std::sin(ang / 2);
  EXPECT_NEAR(g.V.norm(), chord, 1e-14);
  // chord leaves at half the bending angle, bending towards -x
  EXPECT_NEAR(std::atan2(-g.V.x(), g.V.z()), ang / 2, 1e-14);
  EXPECT_NEAR(angles_from_rot(g.W).theta, -ang, 1e-14);

  // a vertical bend is a horizontal one tilted by pi/2
  Frame v = survey_advance(Frame{}, l, ang, std::numbers::pi / 2);
  EXPECT_NEAR(v.V.x(), 0.0, 1e-14);
  EXPECT_NEAR(v.V.y(), -rho * (1 - std::cos(ang)), 1e-14);
}

TEST(Geom, RingClosureAndLongChains) {
  const int n = 50;
  const double ang = 2 * std::numbers::pi / n;
  Frame f;
  for (int i = 0; i < n; ++i) {
    f = survey_advance(f, 2.0, ang);
    f = survey_advance(f, 1.5, 0);
  }
  EXPECT_LT(f.V.norm(), 1e-12);
  EXPECT_LT((f.W - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);

  Frame h;
  for (int i = 0; i < 10000; ++i) h = survey_advance(h, 0.1, 1e-3 * std::sin(i), 0.3 * std::cos(i));
  EXPECT_LT(orthonormality_error(h.W), 1e-10);
}
