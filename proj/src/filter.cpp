#include "dalio/filter.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace dalio {

namespace {
using Mat6x18 = Eigen::Matrix<double, 6, es::kDim>;
}

Cov18 sanitize_covariance(const Cov18& p) {
  Cov18 s = 0.5 * (p + p.transpose());
  const double floor = -1e-12 * std::abs(s.trace());
  Eigen::SelfAdjointEigenSolver<Cov18> eig(s);
  if (eig.eigenvalues().minCoeff() >= floor) return s;
  const ErrorState ev = eig.eigenvalues().cwiseMax(0.0);
  s = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (s + s.transpose());
}

Vec6 backend_pose_residual(const State& x, const BackendPoseMeasurement& z) {
  Vec6 e;
  e.head<3>() = rot_log(x.rotation.inverse() * z.rotation);
  e.tail<3>() = z.translation - x.position;
  return e;
}

Mat6x18 backend_pose_jacobian(const State& x, const BackendPoseMeasurement& z) {
  const Vec3 er = rot_log(x.rotation.inverse() * z.rotation);
  Mat6x18 h = Mat6x18::Zero();
  h.block<3, 3>(0, es::kRot) = right_jacobian_inverse(-er);  // Jl^-1(er)
  h.block<3, 3>(3, es::kPos) = Mat3::Identity();
  return h;
}

FuseResult fuse_backend_pose(const Belief& b, const BackendPoseMeasurement& z, double gate, double max_time_offset) {
  if (std::abs(z.timestamp - b.timestamp) > max_time_offset) {
    throw std::invalid_argument("backend pose is not aligned with the filter belief");
  }
  FuseResult out{b, false, 0.0};
  const Vec6 e = backend_pose_residual(b.state, z);
  const Mat6x18 h = backend_pose_jacobian(b.state, z);
  Mat6 noise = Mat6::Zero();
  noise.block<3, 3>(0, 0) = z.rotation_covariance;
  noise.block<3, 3>(3, 3) = z.translation_covariance;

  const Eigen::Matrix<double, es::kDim, 6> ph = b.covariance * h.transpose();
  const Mat6 s = h * ph + noise;
  const Eigen::LDLT<Mat6> s_fact(s);
  out.mahalanobis_squared = e.dot(s_fact.solve(e));
  if (!std::isfinite(out.mahalanobis_squared) || out.mahalanobis_squared > gate) return out;

  const Eigen::Matrix<double, es::kDim, 6> k = s_fact.solve(ph.transpose()).transpose();
  const ErrorState dx = k * e;
  const Cov18 ikh = Cov18::Identity() - k * h;
  out.belief.state = boxplus(b.state, dx);
  out.belief.covariance = sanitize_covariance(ikh * b.covariance * ikh.transpose() + k * noise * k.transpose());
  out.accepted = true;
  return out;
}

Vec6 constrained_project(const Vec6& increment, const Mat6& pose_covariance, const ConstraintSystem& constraints) {
  if (constraints.empty()) return increment;
  const auto& c = constraints.matrix;
  const Eigen::Matrix<double, 6, Eigen::Dynamic> sct = pose_covariance * c.transpose();
  Eigen::MatrixXd csc = c * sct;
  csc = 0.5 * (csc + csc.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(csc);
  const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double min_ev = eig.eigenvalues().minCoeff();
  if (!(min_ev > max_ev * 1e-12)) {
    csc += Eigen::MatrixXd::Identity(csc.rows(), csc.cols()) * std::max(max_ev * 1e-12, 1e-300);
  }
  const Eigen::VectorXd violation = c * increment - constraints.values;
  return increment - sct * csc.ldlt().solve(violation);
}

namespace {

ConstraintSystem to_update_frame(const ConstraintSystem& body, const Rotation& prior_rotation) {
  ConstraintSystem out = body;
  for (int r = 0; r < out.matrix.rows(); ++r) {
    if (r >= out.rotation_rows) {
      const Vec3 v = body.matrix.block<1, 3>(r, 3).transpose();
      out.matrix.block<1, 3>(r, 3) = (prior_rotation * v).transpose();
    }
  }
  return out;
}

// Posterior with the registration information removed along constrained directions, so those
// directions keep the prior's uncertainty and all of its correlations.
Cov18 constrained_posterior(const Cov18& prior_info, const Mat6& hessian, const ConstraintSystem& cs) {
  const Mat6 perp = Mat6::Identity() - cs.matrix.transpose() * cs.matrix;
  Cov18 info = prior_info;
  info.topLeftCorner<6, 6>() += perp * hessian * perp;
  return Eigen::LLT<Cov18>(info).solve(Cov18::Identity());
}

}  // namespace

UpdateResult iterated_update(const Belief& prior, const Scan& scan, const PointMap& map, const Pose& imu_from_lidar,
                             const FilterConfig& config) {
  UpdateResult out;
  out.belief = prior;
  out.report = total_degeneration_report();
  if (scan.points.empty() || map.empty()) return out;

  const Eigen::LLT<Cov18> prior_fact(prior.covariance);
  const Cov18 prior_info = prior_fact.solve(Cov18::Identity());
  const double inv_var = 1.0 / (config.point_noise * config.point_noise);

  State x = prior.state;
  Cov18 posterior = prior.covariance;
  ConstraintSystem constraints;
  Mat6 last_hessian = Mat6::Zero();
  bool have_report = false;

  for (int it = 0; it < config.max_iterations; ++it) {
    const std::vector<PlaneCorrespondence> corrs = associate(scan, x.pose(), map, imu_from_lidar, config.association);
    const NormalEquations ne = normal_equations(corrs, x.pose());
    if (ne.count == 0) {
      if (it == 0) return out;
      break;
    }
    if (!have_report || config.redetect_each_iteration) {
      const std::vector<InfoPair> pairs = info_pairs(corrs, x.pose());
      out.report = analyze_localizability(pairs, config.thresholds);
      constraints = to_update_frame(out.report.constraints, prior.state.rotation);
      out.report.constraints = constraints;
      have_report = true;
    }

    const ErrorState from_prior = boxminus(x, prior.state);
    Cov18 info = prior_info;
    last_hessian = ne.hessian * inv_var;
    info.topLeftCorner<6, 6>() += last_hessian;
    ErrorState rhs = -(prior_info * from_prior);
    rhs.head<6>() -= ne.gradient * inv_var;
    const Eigen::LLT<Cov18> info_fact(info);
    const ErrorState dx = info_fact.solve(rhs);
    posterior = info_fact.solve(Cov18::Identity());

    State next = boxplus(x, dx);
    if (config.constraints_enabled && !constraints.empty()) {
      ErrorState total = boxminus(next, prior.state);
      const Mat6 pose_cov = 0.5 * (posterior.topLeftCorner<6, 6>() + posterior.topLeftCorner<6, 6>().transpose());
      total.head<6>() = constrained_project(total.head<6>(), pose_cov, constraints);
      next = boxplus(prior.state, total);
    }
    const double step = boxminus(next, x).norm();
    x = next;
    out.iterations = it + 1;
    out.correspondences = ne.count;
    if (step < config.step_tolerance) {
      out.converged = true;
      break;
    }
  }

  if (config.constraints_enabled && config.inflate_constrained_covariance && !constraints.empty()) {
    posterior = constrained_posterior(prior_info, last_hessian, constraints);
  }
  out.belief.state = x;
  out.belief.covariance = sanitize_covariance(posterior);
  return out;
}

}  // namespace dalio
