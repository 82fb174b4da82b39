#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dalio/filter.hpp"
#include "dalio/inertial.hpp"
#include "dalio/manifold.hpp"

namespace dalio {

/// Smoother variable: pose, velocity and IMU biases. Tangent ordering [dr dp dv dbg dba].
struct NavState {
  Rotation rotation;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();

  Pose pose() const { return {rotation, position}; }
  ImuBias bias() const { return {gyro_bias, accel_bias}; }
};

namespace ns {
inline constexpr int kRot = 0;
inline constexpr int kPos = 3;
inline constexpr int kVel = 6;
inline constexpr int kBg = 9;
inline constexpr int kBa = 12;
inline constexpr int kDim = 15;
}  // namespace ns

using NavVec = Eigen::Matrix<double, ns::kDim, 1>;
using NavMat = Eigen::Matrix<double, ns::kDim, ns::kDim>;
using NavJacobian = Eigen::Matrix<double, Eigen::Dynamic, ns::kDim>;

NavState nav_plus(const NavState& x, const NavVec& d);
NavVec nav_minus(const NavState& a, const NavState& b);

NavState to_nav_state(const State& s);

struct NodeKey {
  std::uint64_t id = 0;
  double timestamp = 0.0;
};

enum class FactorKind { ImuPreint, RelativePose, Prior, MarginalPrior, Custom };

std::string_view to_string(FactorKind k);

/// w = (mu c^2 / (r2 + mu c^2))^2.
double gnc_weight(double r2, double mu, double c);

/// Residual block over a few nodes. Subclasses provide the raw residual e and optionally its
/// Jacobians; the base whitens with the upper Cholesky factor of the information matrix.
class Factor {
 public:
  Factor(FactorKind kind, std::vector<std::uint64_t> keys, const Eigen::MatrixXd& information);
  virtual ~Factor() = default;

  FactorKind kind() const { return kind_; }
  const std::vector<std::uint64_t>& keys() const { return keys_; }
  int dim() const { return static_cast<int>(sqrt_info_.rows()); }
  const Eigen::MatrixXd& information() const { return information_; }

  /// Whitened residual, and whitened Jacobians per key when `jacobians` is non-null.
  void evaluate(std::span<const NavState* const> states, Eigen::VectorXd& residual,
                std::vector<NavJacobian>* jacobians) const;

  /// Squared whitened residual norm.
  double whitened_squared(std::span<const NavState* const> states) const;

  bool guarded() const { return guarded_; }
  void set_guarded(bool g);
  double mu() const { return mu_; }
  double weight() const { return weight_; }
  void set_gnc_state(double mu, double weight);

 protected:
  /// Raw residual; fills analytic Jacobians when `jacobians` is non-null and returns true,
  /// or returns false to request central differences.
  virtual bool raw(std::span<const NavState* const> states, Eigen::VectorXd& e,
                   std::vector<NavJacobian>* jacobians) const = 0;

 private:
  FactorKind kind_;
  std::vector<std::uint64_t> keys_;
  Eigen::MatrixXd information_;
  Eigen::MatrixXd sqrt_info_;
  bool guarded_ = false;
  double mu_ = 1.0;
  double weight_ = 1.0;
};

/// Preintegrated IMU factor between nodes i and j. Residual [e_R e_p e_v e_bg e_ba]:
/// e_R = Log(dR(b_i)^T R_i^T R_j), e_p = R_i^T (p_j - p_i - v_i dt - g dt^2 / 2) - dp(b_i),
/// e_v = R_i^T (v_j - v_i - g dt) - dv(b_i), bias rows b_j - b_i.
class ImuFactor : public Factor {
 public:
  ImuFactor(std::uint64_t i, std::uint64_t j, const Preintegrated& preint, const Vec3& gravity,
            const NoiseParams& noise);
  const Preintegrated& preintegrated() const { return preint_; }

 protected:
  bool raw(std::span<const NavState* const> states, Eigen::VectorXd& e,
           std::vector<NavJacobian>* jacobians) const override;

 private:
  Preintegrated preint_;
  Vec3 gravity_;
};

/// Relative body motion T_a^-1 T_b. Residual [Log(dR^T R_a^T R_b); R_a^T (t_b - t_a) - dt].
class RelativePoseFactor : public Factor {
 public:
  RelativePoseFactor(std::uint64_t a, std::uint64_t b, const Pose& measured, const Mat6& covariance);
  const Pose& measured() const { return measured_; }

 protected:
  bool raw(std::span<const NavState* const> states, Eigen::VectorXd& e,
           std::vector<NavJacobian>* jacobians) const override;

 private:
  Pose measured_;
};

/// Residual x (-) x0 on a single node.
class PriorFactor : public Factor {
 public:
  PriorFactor(std::uint64_t key, const NavState& mean, const NavMat& covariance);

 protected:
  bool raw(std::span<const NavState* const> states, Eigen::VectorXd& e,
           std::vector<NavJacobian>* jacobians) const override;

 private:
  NavState mean_;
};

/// Gaussian summary of eliminated nodes: cost d^T H d / 2 + g^T d with d the stacked
/// (x (-) x0) over `keys`, encoded as the whitened residual L^T d + L^+ g.
class MarginalPriorFactor : public Factor {
 public:
  MarginalPriorFactor(std::vector<std::uint64_t> keys, std::vector<NavState> linearization,
                      const Eigen::MatrixXd& hessian, const Eigen::VectorXd& gradient);

 protected:
  bool raw(std::span<const NavState* const> states, Eigen::VectorXd& e,
           std::vector<NavJacobian>* jacobians) const override;

 private:
  static Eigen::MatrixXd identity_information(const Eigen::MatrixXd& hessian);

  std::vector<NavState> linearization_;
  Eigen::MatrixXd sqrt_hessian_t_;  // rank x n
  Eigen::VectorXd offset_;          // rank
};

class StaleMeasurementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SmootherConfig {
  double window = 1.0;       // s
  double imu_rate = 200.0;   // Hz, sets the anchoring tolerance
  NoiseParams imu_noise;
  Vec3 gravity{0.0, 0.0, -9.81};
  double kernel_scale = 18.0;     // c, in whitened units
  bool gnc_enabled = true;
  double quiescence_ratio = 0.5;  // GNC skipped when every guarded residual is below this times c
  double mu_divisor = 1.4;
  int max_outer_iterations = 50;
  int max_inner_iterations = 30;
  double relative_cost_tolerance = 1e-6;
  double step_tolerance = 1e-10;
  /// Jacobians are reused until a variable moves more than this; 0 relinearizes every step.
  double relinearize_threshold = 0.0;

  void validate() const;
};

struct OptimizeResult {
  int inner_iterations = 0;
  int outer_iterations = 0;
  bool gnc_ran = false;
  bool converged = true;
  bool diverged = false;
  double cost = 0.0;
};

/// Fixed-lag smoother with one node per IMU sample. Only nodes that carry non-IMU factors (plus
/// the newest node at optimize time and the window boundary) are optimization variables; the IMU
/// factors between them are re-preintegrated from the stored samples.
class FixedLagSmoother {
 public:
  explicit FixedLagSmoother(SmootherConfig config);
  ~FixedLagSmoother();
  FixedLagSmoother(FixedLagSmoother&&) noexcept;
  FixedLagSmoother& operator=(FixedLagSmoother&&) noexcept;

  /// First IMU node with a prior. Preintegration uses the prior's bias as reference.
  NodeKey initialize(const ImuSample& first, const NavState& mean, const NavMat& covariance);

  /// New node at sample.timestamp; the previous node's sample covers the gap.
  NodeKey add_imu_node(const ImuSample& sample);

  /// Node without IMU data (independent-variable use); always an optimization variable.
  NodeKey add_node(double timestamp, const NavState& initial);

  /// RelativePose factor between the nodes nearest t_a and t_b (within one IMU period).
  /// Throws StaleMeasurementError if t_a precedes the window, std::invalid_argument if no node is near.
  std::size_t attach_odometry(const Pose& relative, double t_a, double t_b, const Mat6& covariance, bool guarded);

  /// Generic factor; every key must be an active node, which then becomes a variable.
  std::size_t add_factor(std::unique_ptr<Factor> factor);

  OptimizeResult optimize();

  /// Eliminates every node older than t_now - window into a single marginal prior.
  void slide(double t_now);

  /// Newest variable with its marginal rotation and translation covariance.
  std::optional<BackendPoseMeasurement> latest_pose() const;

  /// 15x15 marginal covariance of one variable at the current estimate.
  NavMat marginal_covariance(std::uint64_t id) const;

  std::optional<NodeKey> nearest_node(double t) const;
  NavState estimate(std::uint64_t id) const;
  std::size_t node_count() const;
  std::size_t variable_count() const;
  std::size_t factor_count() const;
  std::size_t factor_count(FactorKind kind) const;
  std::vector<NodeKey> variables() const;
  const Factor& factor(std::size_t id) const;
  std::vector<std::size_t> factor_ids() const;

  /// Marginalized variables at their final estimate followed by the active ones, in time order.
  std::vector<std::pair<double, NavState>> smoothed_trajectory() const;

  void write_json(std::ostream& out) const;
  const SmootherConfig& config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dalio
