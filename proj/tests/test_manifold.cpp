#include <gtest/gtest.h>

#include "dalio/manifold.hpp"
#include "oracles.hpp"

using namespace dalio;

TEST(Manifold, ExpMatchesPowerSeries) {
  const Vec3 phi(0.1, 0.2, 0.3);
  EXPECT_LT((rot_exp(phi).matrix() - oracle::series_exp(phi, 20)).cwiseAbs().maxCoeff(), 1e-12);
  oracle::Random rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p = rng.vec3(1.0);
    EXPECT_LT((rot_exp(p).matrix() - oracle::series_exp(p)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Manifold, ExpOfZeroAndSmallAngles) {
  EXPECT_TRUE(rot_exp(Vec3::Zero()).matrix().isIdentity(0.0));
  const Vec3 tiny(1e-9, -2e-9, 3e-9);
  EXPECT_LT((rot_exp(tiny).matrix() - oracle::series_exp(tiny)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((rot_log(rot_exp(tiny)) - tiny).norm(), 1e-18);
}

TEST(Manifold, LogInvertsExpUpToPi) {
  oracle::Random rng(2);
  for (int i = 0; i < 500; ++i) {
    Vec3 axis = rng.vec3();
    axis.normalize();
    const Vec3 phi = axis * rng.uniform(0.0, M_PI - 1e-6);
    EXPECT_LT((rot_log(rot_exp(phi)) - phi).norm(), 1e-9);
  }
}

TEST(Manifold, LogNearPiReturnsRotationOfMagnitudePi) {
  const Vec3 phi = Vec3(1, 1, 0).normalized() * M_PI;
  const Vec3 back = rot_log(rot_exp(phi));
  EXPECT_NEAR(back.norm(), M_PI, 1e-9);
  EXPECT_LT((rot_exp(back).matrix() - rot_exp(phi).matrix()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Manifold, FromMatrixRejectsNonRotation) {
  Mat3 m = Mat3::Identity();
  m(0, 0) = -1.0;  // reflection
  EXPECT_THROW(Rotation::from_matrix(m), std::invalid_argument);
  EXPECT_THROW(Rotation::from_matrix(Mat3::Identity() * 1.1), std::invalid_argument);
  EXPECT_NO_THROW(Rotation::from_matrix(rot_exp(Vec3(0.3, -0.2, 0.1)).matrix()));
}

TEST(Manifold, SkewIsCrossProduct) {
  const Vec3 a(1, -2, 3), b(0.5, 4, -1);
  EXPECT_LT((skew(a) * b - a.cross(b)).norm(), 1e-15);
}

TEST(Manifold, RightJacobianMatchesFiniteDifferences) {
  oracle::Random rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vec3 phi = rng.vec3(0.8);
    const Eigen::MatrixXd fd = oracle::central_difference(
        [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
          return rot_log(rot_exp(phi).inverse() * rot_exp(phi + Vec3(d)));
        },
        3);
    EXPECT_LT(oracle::relative_error(right_jacobian(phi), fd), 1e-8);
    EXPECT_LT((right_jacobian(phi) * right_jacobian_inverse(phi) - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((left_jacobian(phi) - right_jacobian(-phi)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Manifold, BoxplusBoxminusRoundTrip) {
  oracle::Random rng(4);
  for (int i = 0; i < 1000; ++i) {
    State x;
    x.rotation = rng.rotation();
    x.position = rng.vec3(10);
    x.velocity = rng.vec3(2);
    ErrorState dx;
    for (int k = 0; k < es::kDim; ++k) dx(k) = rng.normal();
    Vec3 r = rng.vec3();
    dx.head<3>() = r.normalized() * rng.uniform(0.0, 1.0);
    const ErrorState back = boxminus(boxplus(x, dx), x);
    EXPECT_LT((back - dx).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Manifold, BoxplusTranslationShiftsPosition) {
  State x;
  x.rotation = rot_exp(Vec3(0.4, 0.1, -0.3));
  ErrorState dx = ErrorState::Zero();
  dx(es::kPos) = 1.0;
  const State y = boxplus(x, dx);
  EXPECT_DOUBLE_EQ(y.position.x(), x.position.x() + 1.0);
  EXPECT_DOUBLE_EQ(y.position.y(), x.position.y());
}

TEST(Manifold, PoseComposition) {
  oracle::Random rng(5);
  const Pose a{rng.rotation(), rng.vec3()}, b{rng.rotation(), rng.vec3()};
  const Vec3 p = rng.vec3();
  EXPECT_LT(((a * b) * p - a * (b * p)).norm(), 1e-12);
  EXPECT_LT(((a.inverse() * a) * p - p).norm(), 1e-12);
}

TEST(Manifold, GravityPlausibility) {
  State x;
  EXPECT_TRUE(gravity_plausible(x));
  x.gravity = Vec3(0, 0, -12);
  EXPECT_FALSE(gravity_plausible(x));
}
