#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "dalio/graph.hpp"

namespace dalio {

NavState nav_plus(const NavState& x, const NavVec& d) {
  NavState out = x;
  out.rotation = x.rotation * rot_exp(d.segment<3>(ns::kRot));
  out.position += d.segment<3>(ns::kPos);
  out.velocity += d.segment<3>(ns::kVel);
  out.gyro_bias += d.segment<3>(ns::kBg);
  out.accel_bias += d.segment<3>(ns::kBa);
  return out;
}

NavVec nav_minus(const NavState& a, const NavState& b) {
  NavVec d;
  d.segment<3>(ns::kRot) = rot_log(b.rotation.inverse() * a.rotation);
  d.segment<3>(ns::kPos) = a.position - b.position;
  d.segment<3>(ns::kVel) = a.velocity - b.velocity;
  d.segment<3>(ns::kBg) = a.gyro_bias - b.gyro_bias;
  d.segment<3>(ns::kBa) = a.accel_bias - b.accel_bias;
  return d;
}

NavState to_nav_state(const State& s) {
  return {s.rotation, s.position, s.velocity, s.gyro_bias, s.accel_bias};
}

std::string_view to_string(FactorKind k) {
  switch (k) {
    case FactorKind::ImuPreint: return "imu_preint";
    case FactorKind::RelativePose: return "relative_pose";
    case FactorKind::Prior: return "prior";
    case FactorKind::MarginalPrior: return "marginal_prior";
    case FactorKind::Custom: return "custom";
  }
  return "unknown";
}

double gnc_weight(double r2, double mu, double c) {
  const double s = mu * c * c;
  const double w = s / (r2 + s);
  return w * w;
}

Factor::Factor(FactorKind kind, std::vector<std::uint64_t> keys, const Eigen::MatrixXd& information)
    : kind_(kind), keys_(std::move(keys)), information_(0.5 * (information + information.transpose())) {
  Eigen::LLT<Eigen::MatrixXd> llt(information_);
  if (information_.rows() != information_.cols() || llt.info() != Eigen::Success) {
    throw std::invalid_argument("factor information must be symmetric positive definite");
  }
  sqrt_info_ = llt.matrixU();
}

void Factor::set_guarded(bool g) {
  guarded_ = g;
  if (!g) set_gnc_state(1.0, 1.0);
}

void Factor::set_gnc_state(double mu, double weight) {
  mu_ = mu;
  weight_ = guarded_ ? weight : 1.0;
}

void Factor::evaluate(std::span<const NavState* const> states, Eigen::VectorXd& residual,
                      std::vector<NavJacobian>* jacobians) const {
  Eigen::VectorXd e;
  if (jacobians == nullptr) {
    raw(states, e, nullptr);
    residual = sqrt_info_ * e;
    return;
  }
  jacobians->assign(keys_.size(), NavJacobian::Zero(dim(), ns::kDim));
  if (!raw(states, e, jacobians)) {
    constexpr double h = 1e-6;
    std::vector<NavState> copy;
    copy.reserve(states.size());
    for (const NavState* s : states) copy.push_back(*s);
    std::vector<const NavState*> ptrs(copy.size());
    for (std::size_t k = 0; k < copy.size(); ++k) ptrs[k] = &copy[k];
    Eigen::VectorXd ep, em;
    for (std::size_t k = 0; k < copy.size(); ++k) {
      for (int c = 0; c < ns::kDim; ++c) {
        NavVec d = NavVec::Zero();
        d(c) = h;
        copy[k] = nav_plus(*states[k], d);
        raw(ptrs, ep, nullptr);
        copy[k] = nav_plus(*states[k], -d);
        raw(ptrs, em, nullptr);
        (*jacobians)[k].col(c) = (ep - em) / (2.0 * h);
      }
      copy[k] = *states[k];
    }
  }
  residual = sqrt_info_ * e;
  for (auto& j : *jacobians) j = sqrt_info_ * j;
}

double Factor::whitened_squared(std::span<const NavState* const> states) const {
  Eigen::VectorXd r;
  evaluate(states, r, nullptr);
  return r.squaredNorm();
}

namespace {

Eigen::MatrixXd imu_information(const Preintegrated& p, const NoiseParams& noise) {
  // Preintegration covariance is ordered [phi v p]; the residual is [R p v bg ba].
  Eigen::Matrix<double, 15, 15> cov = Eigen::Matrix<double, 15, 15>::Zero();
  const int map[3] = {0, 6, 3};
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) cov.block<3, 3>(map[a], map[b]) = p.covariance.block<3, 3>(3 * a, 3 * b);
  }
  cov.block<3, 3>(9, 9).diagonal().setConstant(noise.gyro_bias_walk * noise.gyro_bias_walk * p.delta_time);
  cov.block<3, 3>(12, 12).diagonal().setConstant(noise.accel_bias_walk * noise.accel_bias_walk * p.delta_time);
  Eigen::MatrixXd info = cov.inverse();
  return 0.5 * (info + info.transpose());
}

}  // namespace

ImuFactor::ImuFactor(std::uint64_t i, std::uint64_t j, const Preintegrated& preint, const Vec3& gravity,
                     const NoiseParams& noise)
    : Factor(FactorKind::ImuPreint, {i, j}, imu_information(preint, noise)), preint_(preint), gravity_(gravity) {}

bool ImuFactor::raw(std::span<const NavState* const> states, Eigen::VectorXd& e,
                    std::vector<NavJacobian>* jacobians) const {
  const NavState& xi = *states[0];
  const NavState& xj = *states[1];
  const double dt = preint_.delta_time;
  const ImuBias bias = xi.bias();
  const Rotation dr = preint_.corrected_rotation(bias);
  const Mat3 rit = xi.rotation.matrix().transpose();
  const Vec3 dv_world = xj.velocity - xi.velocity - gravity_ * dt;
  const Vec3 dp_world = xj.position - xi.position - xi.velocity * dt - 0.5 * gravity_ * dt * dt;

  const Vec3 e_r = rot_log(dr.inverse() * xi.rotation.inverse() * xj.rotation);
  e.resize(15);
  e.segment<3>(0) = e_r;
  e.segment<3>(3) = rit * dp_world - preint_.corrected_position(bias);
  e.segment<3>(6) = rit * dv_world - preint_.corrected_velocity(bias);
  e.segment<3>(9) = xj.gyro_bias - xi.gyro_bias;
  e.segment<3>(12) = xj.accel_bias - xi.accel_bias;
  if (jacobians == nullptr) return true;

  const Mat3 jr_inv = right_jacobian_inverse(e_r);
  const Vec3 dbg = bias.gyro - preint_.linearization_bias.gyro;
  auto& ji = (*jacobians)[0];
  auto& jj = (*jacobians)[1];
  ji.setZero();
  jj.setZero();

  ji.block<3, 3>(0, ns::kRot) = -jr_inv * xj.rotation.matrix().transpose() * xi.rotation.matrix();
  ji.block<3, 3>(0, ns::kBg) = -jr_inv * rot_exp(e_r).matrix().transpose() *
                               right_jacobian(preint_.d_rotation_d_bg * dbg) * preint_.d_rotation_d_bg;
  jj.block<3, 3>(0, ns::kRot) = jr_inv;

  ji.block<3, 3>(3, ns::kRot) = skew(rit * dp_world);
  ji.block<3, 3>(3, ns::kPos) = -rit;
  ji.block<3, 3>(3, ns::kVel) = -rit * dt;
  ji.block<3, 3>(3, ns::kBg) = -preint_.d_position_d_bg;
  ji.block<3, 3>(3, ns::kBa) = -preint_.d_position_d_ba;
  jj.block<3, 3>(3, ns::kPos) = rit;

  ji.block<3, 3>(6, ns::kRot) = skew(rit * dv_world);
  ji.block<3, 3>(6, ns::kVel) = -rit;
  ji.block<3, 3>(6, ns::kBg) = -preint_.d_velocity_d_bg;
  ji.block<3, 3>(6, ns::kBa) = -preint_.d_velocity_d_ba;
  jj.block<3, 3>(6, ns::kVel) = rit;

  ji.block<3, 3>(9, ns::kBg) = -Mat3::Identity();
  jj.block<3, 3>(9, ns::kBg) = Mat3::Identity();
  ji.block<3, 3>(12, ns::kBa) = -Mat3::Identity();
  jj.block<3, 3>(12, ns::kBa) = Mat3::Identity();
  return true;
}

RelativePoseFactor::RelativePoseFactor(std::uint64_t a, std::uint64_t b, const Pose& measured,
                                       const Mat6& covariance)
    : Factor(FactorKind::RelativePose, {a, b}, Eigen::MatrixXd(covariance.inverse())), measured_(measured) {}

bool RelativePoseFactor::raw(std::span<const NavState* const> states, Eigen::VectorXd& e,
                             std::vector<NavJacobian>* jacobians) const {
  const NavState& xa = *states[0];
  const NavState& xb = *states[1];
  const Mat3 rat = xa.rotation.matrix().transpose();
  const Vec3 local = rat * (xb.position - xa.position);
  const Vec3 e_r = rot_log(measured_.rotation.inverse() * xa.rotation.inverse() * xb.rotation);
  e.resize(6);
  e.head<3>() = e_r;
  e.tail<3>() = local - measured_.translation;
  if (jacobians == nullptr) return true;

  const Mat3 jr_inv = right_jacobian_inverse(e_r);
  auto& ja = (*jacobians)[0];
  auto& jb = (*jacobians)[1];
  ja.setZero();
  jb.setZero();
  ja.block<3, 3>(0, ns::kRot) = -jr_inv * xb.rotation.matrix().transpose() * xa.rotation.matrix();
  jb.block<3, 3>(0, ns::kRot) = jr_inv;
  ja.block<3, 3>(3, ns::kRot) = skew(local);
  ja.block<3, 3>(3, ns::kPos) = -rat;
  jb.block<3, 3>(3, ns::kPos) = rat;
  return true;
}

PriorFactor::PriorFactor(std::uint64_t key, const NavState& mean, const NavMat& covariance)
    : Factor(FactorKind::Prior, {key}, Eigen::MatrixXd(covariance.inverse())), mean_(mean) {}

bool PriorFactor::raw(std::span<const NavState* const> states, Eigen::VectorXd& e,
                      std::vector<NavJacobian>* jacobians) const {
  const NavVec d = nav_minus(*states[0], mean_);
  e = d;
  if (jacobians == nullptr) return true;
  auto& j = (*jacobians)[0];
  j.setIdentity();
  j.block<3, 3>(0, 0) = right_jacobian_inverse(d.head<3>());
  return true;
}

Eigen::MatrixXd MarginalPriorFactor::identity_information(const Eigen::MatrixXd& hessian) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (hessian + hessian.transpose()));
  const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  int rank = 0;
  for (int k = 0; k < eig.eigenvalues().size(); ++k) rank += eig.eigenvalues()(k) > 1e-14 * top ? 1 : 0;
  return Eigen::MatrixXd::Identity(std::max(rank, 1), std::max(rank, 1));
}

MarginalPriorFactor::MarginalPriorFactor(std::vector<std::uint64_t> keys, std::vector<NavState> linearization,
                                         const Eigen::MatrixXd& hessian, const Eigen::VectorXd& gradient)
    : Factor(FactorKind::MarginalPrior, std::move(keys), identity_information(hessian)),
      linearization_(std::move(linearization)) {
  const Eigen::MatrixXd h = 0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
  const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  const int n = static_cast<int>(h.rows());
  sqrt_hessian_t_ = Eigen::MatrixXd::Zero(dim(), n);
  offset_ = Eigen::VectorXd::Zero(dim());
  int row = 0;
  for (int k = n - 1; k >= 0 && row < dim(); --k) {
    const double lambda = eig.eigenvalues()(k);
    if (!(lambda > 1e-14 * top)) continue;
    const Eigen::VectorXd v = eig.eigenvectors().col(k);
    const double s = std::sqrt(lambda);
    sqrt_hessian_t_.row(row) = s * v.transpose();
    offset_(row) = v.dot(gradient) / s;
    ++row;
  }
}

bool MarginalPriorFactor::raw(std::span<const NavState* const> states, Eigen::VectorXd& e,
                              std::vector<NavJacobian>* jacobians) const {
  const std::size_t n = states.size();
  Eigen::VectorXd d(ns::kDim * n);
  for (std::size_t k = 0; k < n; ++k) d.segment<ns::kDim>(ns::kDim * k) = nav_minus(*states[k], linearization_[k]);
  e = sqrt_hessian_t_ * d + offset_;
  if (jacobians == nullptr) return true;
  for (std::size_t k = 0; k < n; ++k) {
    NavMat dd = NavMat::Identity();
    dd.block<3, 3>(0, 0) = right_jacobian_inverse(d.segment<3>(ns::kDim * k));
    (*jacobians)[k] = sqrt_hessian_t_.middleCols(ns::kDim * k, ns::kDim) * dd;
  }
  return true;
}

}  // namespace dalio
