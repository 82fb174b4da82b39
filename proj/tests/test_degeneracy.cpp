#include <gtest/gtest.h>

#include "dalio/degeneracy.hpp"
#include "oracles.hpp"

using namespace dalio;

namespace {

using Cat = LocalizabilityCategory;

std::vector<InfoPair> random_scene(oracle::Random& rng, int n) {
  std::vector<InfoPair> pairs;
  for (int i = 0; i < n; ++i) pairs.push_back({rng.vec3(5.0), rng.vec3().normalized()});
  return pairs;
}

}  // namespace

TEST(EigenBlocks, DiagonalBlock) {
  Mat6 h = Mat6::Zero();
  h.bottomRightCorner<3, 3>() = Vec3(4, 1, 0).asDiagonal();
  h.topLeftCorner<3, 3>() = Vec3(0, 2, 7).asDiagonal();
  const EigenBlocks e = eigen_blocks(h);
  EXPECT_LT((e.translation_values - Vec3(4, 1, 0)).norm(), 1e-12);
  EXPECT_LT((e.translation_vectors.cwiseAbs() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((e.rotation_values - Vec3(7, 2, 0)).norm(), 1e-12);
}

TEST(EigenBlocks, OrthonormalAndReconstructs) {
  oracle::Random rng(31);
  for (int i = 0; i < 100; ++i) {
    const Mat6 h = assemble_hessian(random_scene(rng, 30));
    const EigenBlocks e = eigen_blocks(h);
    for (const auto& [v, s, block] :
         {std::tuple{e.translation_vectors, e.translation_values, Mat3(h.bottomRightCorner<3, 3>())},
          std::tuple{e.rotation_vectors, e.rotation_values, Mat3(h.topLeftCorner<3, 3>())}}) {
      EXPECT_LT((v * v.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LT((v * s.asDiagonal() * v.transpose() - block).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, block.norm()));
      EXPECT_GE(s(0), s(1));
      EXPECT_GE(s(1), s(2));
      for (int c = 0; c < 3; ++c) {
        Eigen::Index k;
        v.col(c).cwiseAbs().maxCoeff(&k);
        EXPECT_GT(v(k, c), 0.0);
      }
    }
  }
}

TEST(Strengths, FloorNormalsOnly) {
  std::vector<InfoPair> pairs;
  for (int i = 0; i < 10; ++i) pairs.push_back({Vec3(i, 1, 0), Vec3::UnitZ()});
  EigenBlocks e;  // identity directions
  const DirectionStrengths s = direction_strengths(pairs, e, 0.0);
  EXPECT_EQ(s(3), 0.0);
  EXPECT_EQ(s(4), 0.0);
  EXPECT_DOUBLE_EQ(s(5), 10.0);
  EXPECT_GE(s.minCoeff(), 0.0);
}

TEST(Categorize, ClosedLowerBounds) {
  LocalizabilityThresholds t;
  t.normalized = false;
  DirectionStrengths s;
  s << t.full, t.partial, t.partial - 1e-12, 10.0, 0.0, t.full - 1e-12;
  const Categories c = categorize(s, t);
  EXPECT_EQ(c[0], Cat::Full);
  EXPECT_EQ(c[1], Cat::Partial);
  EXPECT_EQ(c[2], Cat::None);
  EXPECT_EQ(c[3], Cat::Full);
  EXPECT_EQ(c[4], Cat::None);
  EXPECT_EQ(c[5], Cat::Partial);
}

TEST(Categorize, SinglePlaneScene) {
  std::vector<InfoPair> pairs;
  for (double x = -3; x <= 3; x += 0.5)
    for (double y = -3; y <= 3; y += 0.5) pairs.push_back({Vec3(x, y, -1.5), Vec3::UnitZ()});
  const LocalizabilityReport r = analyze_localizability(pairs, LocalizabilityThresholds{});
  int full_t = 0, none_t = 0;
  for (int k = 3; k < 6; ++k) {
    full_t += r.categories[k] == Cat::Full;
    none_t += r.categories[k] == Cat::None;
  }
  EXPECT_EQ(full_t, 1);
  EXPECT_EQ(none_t, 2);
  // The Full translation direction is the plane normal.
  for (int k = 0; k < 3; ++k) {
    if (r.categories[3 + k] == Cat::Full) EXPECT_NEAR(std::abs(r.eigen.translation_vectors.col(k).z()), 1.0, 1e-9);
  }
  // Rotation about the normal slides points in-plane and is unobservable.
  for (int k = 0; k < 3; ++k) {
    if (std::abs(r.eigen.rotation_vectors.col(k).z()) > 0.99) EXPECT_EQ(r.categories[k], Cat::None);
  }
}

TEST(BuildConstraints, Examples) {
  const EigenBlocks e;
  Categories all_full;
  all_full.fill(Cat::Full);
  const ConstraintSystem empty = build_constraints(all_full, e, Vec3::Zero(), Vec3::Zero());
  EXPECT_TRUE(empty.empty());
  EXPECT_EQ(empty.values.size(), 0);

  Categories tx = all_full;
  tx[3] = Cat::None;
  const ConstraintSystem a = build_constraints(tx, e, Vec3::Zero(), Vec3::Zero());
  ASSERT_EQ(a.matrix.rows(), 1);
  Vec6 row;
  row << 0, 0, 0, 1, 0, 0;
  EXPECT_EQ(Vec6(a.matrix.row(0).transpose()), row);
  EXPECT_EQ(a.values(0), 0.0);
  EXPECT_EQ(a.translation_rows, 1);

  const ConstraintSystem b = build_constraints(tx, e, Vec3::Zero(), Vec3(0.2, 0, 0));
  EXPECT_DOUBLE_EQ(b.values(0), 0.2);
}

TEST(BuildConstraints, PartialModes) {
  const EigenBlocks e;
  Categories c;
  c.fill(Cat::Full);
  c[1] = Cat::Partial;
  c[5] = Cat::None;
  EXPECT_EQ(build_constraints(c, e, Vec3::Zero(), Vec3::Zero(), PartialMode::Constrain).matrix.rows(), 2);
  EXPECT_EQ(build_constraints(c, e, Vec3::Zero(), Vec3::Zero(), PartialMode::Free).matrix.rows(), 1);
}

TEST(Localizability, RowCountAndStructure) {
  oracle::Random rng(32);
  for (int i = 0; i < 200; ++i) {
    std::vector<InfoPair> pairs;
    // Mix of a few planes so categories vary across draws.
    const int planes = 1 + i % 4;
    for (int p = 0; p < planes; ++p) {
      const Vec3 n = rng.vec3().normalized();
      for (int k = 0; k < 40; ++k) pairs.push_back({rng.vec3(4.0), n});
    }
    const LocalizabilityReport r = analyze_localizability(pairs, LocalizabilityThresholds{});
    EXPECT_EQ(r.constraints.matrix.rows(), 6 - r.full_count());
    for (int k = 0; k < r.constraints.matrix.rows(); ++k) {
      const auto row = r.constraints.matrix.row(k);
      const bool rot = k < r.constraints.rotation_rows;
      EXPECT_NEAR(row.norm(), 1.0, 1e-12);
      EXPECT_EQ((rot ? row.tail<3>() : row.head<3>()).norm(), 0.0);
    }
  }
}

TEST(Localizability, DuplicationInvariance) {
  oracle::Random rng(33);
  for (int i = 0; i < 50; ++i) {
    auto pairs = random_scene(rng, 20);
    const Vec3 n = rng.vec3().normalized();
    for (int k = 0; k < 60; ++k) pairs.push_back({rng.vec3(3.0), n});
    auto doubled = pairs;
    doubled.insert(doubled.end(), pairs.begin(), pairs.end());
    LocalizabilityThresholds raw;
    raw.normalized = false;
    const EigenBlocks e = eigen_blocks(assemble_hessian(pairs));
    const DirectionStrengths s1 = direction_strengths(pairs, e, raw.contribution_floor);
    const DirectionStrengths s2 = direction_strengths(doubled, e, raw.contribution_floor);
    EXPECT_LT((s2 - 2.0 * s1).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, s1.maxCoeff()));
    EXPECT_EQ(analyze_localizability(pairs, {}).categories, analyze_localizability(doubled, {}).categories);
  }
}

TEST(Localizability, RotationInvariance) {
  oracle::Random rng(34);
  for (int i = 0; i < 50; ++i) {
    std::vector<InfoPair> pairs;
    for (int p = 0; p < 1 + i % 3; ++p) {
      const Vec3 n = rng.vec3().normalized();
      for (int k = 0; k < 50; ++k) pairs.push_back({rng.vec3(4.0), n});
    }
    const Rotation q = rng.rotation();
    std::vector<InfoPair> turned;
    for (const InfoPair& p : pairs) turned.push_back({q * p.point, q * p.normal});
    const LocalizabilityReport a = analyze_localizability(pairs, {});
    const LocalizabilityReport b = analyze_localizability(turned, {});
    EXPECT_LT((a.strengths - b.strengths).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(a.categories, b.categories);
    // Conjugated eigenvectors agree up to sign for well-separated eigenvalues.
    const Mat3 rv = q.matrix() * a.eigen.translation_vectors;
    for (int c = 0; c < 3; ++c) {
      const bool separated = (c == 0 || a.eigen.translation_values(c - 1) - a.eigen.translation_values(c) > 1e-6) &&
                             (c == 2 || a.eigen.translation_values(c) - a.eigen.translation_values(c + 1) > 1e-6);
      if (separated) EXPECT_NEAR(std::abs(rv.col(c).dot(b.eigen.translation_vectors.col(c))), 1.0, 1e-6);
    }
  }
}

TEST(Localizability, NoPairsIsTotalDegeneration) {
  const LocalizabilityReport r = total_degeneration_report();
  for (Cat c : r.categories) EXPECT_EQ(c, Cat::None);
  EXPECT_TRUE(r.constraints.empty());
  EXPECT_TRUE(r.degenerate());
}
