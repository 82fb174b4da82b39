#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <set>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "dalio/graph.hpp"
#include "json.hpp"

namespace dalio {

void SmootherConfig::validate() const {
  imu_noise.validate();
  if (!(window > 0.0)) throw std::invalid_argument("smoother window must be positive");
  if (!(imu_rate > 0.0)) throw std::invalid_argument("IMU rate must be positive");
  if (!(kernel_scale > 0.0)) throw std::invalid_argument("kernel scale must be positive");
  if (!(mu_divisor > 1.0)) throw std::invalid_argument("GNC mu divisor must exceed 1");
  if (max_outer_iterations < 1 || max_inner_iterations < 1) {
    throw std::invalid_argument("iteration limits must be positive");
  }
  if (relinearize_threshold < 0.0) throw std::invalid_argument("relinearize threshold must be non-negative");
}

namespace {

struct Node {
  NodeKey key;
  bool has_sample = false;
  ImuSample sample;
  bool variable = false;
  NavState estimate;
};

struct Linearization {
  std::vector<NavState> at;
  std::vector<NavJacobian> jacobians;
};

NavState predict(const NavState& xi, const Preintegrated& p, const Vec3& gravity) {
  const ImuBias b = xi.bias();
  const double dt = p.delta_time;
  NavState xj = xi;
  xj.rotation = xi.rotation * p.corrected_rotation(b);
  xj.position = xi.position + xi.velocity * dt + 0.5 * gravity * dt * dt + xi.rotation * p.corrected_position(b);
  xj.velocity = xi.velocity + gravity * dt + xi.rotation * p.corrected_velocity(b);
  return xj;
}

}  // namespace

struct FixedLagSmoother::Impl {
  SmootherConfig cfg;
  std::deque<Node> nodes;
  std::uint64_t next_id = 0;
  std::map<std::size_t, std::unique_ptr<Factor>> factors;
  std::size_t next_factor = 0;
  std::map<std::uint64_t, std::size_t> imu_out;  // variable id -> IMU factor leaving it
  std::optional<std::size_t> marginal;
  ImuBias reference_bias;
  std::vector<std::pair<double, NavState>> history;
  std::map<std::size_t, Linearization> cache;
  bool optimized = false;

  Node* find(std::uint64_t id) {
    if (nodes.empty() || id < nodes.front().key.id || id > nodes.back().key.id) return nullptr;
    return &nodes[id - nodes.front().key.id];
  }
  const Node* find(std::uint64_t id) const { return const_cast<Impl*>(this)->find(id); }

  std::size_t insert(std::unique_ptr<Factor> f) {
    const std::size_t id = next_factor++;
    factors.emplace(id, std::move(f));
    return id;
  }

  void erase_factor(std::size_t id) {
    factors.erase(id);
    cache.erase(id);
  }

  Preintegrated preintegrate_between(std::uint64_t i, std::uint64_t j) const {
    std::vector<ImuSample> samples;
    for (std::uint64_t k = i; k < j; ++k) {
      const Node* n = find(k);
      if (n == nullptr || !n->has_sample) throw std::logic_error("IMU chain has a gap");
      samples.push_back(n->sample);
    }
    return preintegrate(samples, find(j)->key.timestamp, reference_bias, cfg.imu_noise);
  }

  std::size_t add_imu_factor(std::uint64_t i, std::uint64_t j) {
    const std::size_t id = insert(std::make_unique<ImuFactor>(i, j, preintegrate_between(i, j), cfg.gravity, cfg.imu_noise));
    imu_out[i] = id;
    return id;
  }

  void make_variable(std::uint64_t id) {
    Node* n = find(id);
    if (n == nullptr) throw std::invalid_argument("unknown node");
    if (n->variable) return;
    const std::uint64_t front = nodes.front().key.id;
    std::optional<std::uint64_t> prev;
    for (std::uint64_t k = id; k > front;) {
      --k;
      if (find(k)->variable) {
        prev = k;
        break;
      }
    }
    if (!prev) throw std::logic_error("node has no preceding variable");
    n->variable = true;
    const auto out = imu_out.find(*prev);
    if (out != imu_out.end()) {
      const std::uint64_t next = factors.at(out->second)->keys()[1];
      erase_factor(out->second);
      imu_out.erase(out);
      add_imu_factor(*prev, id);
      add_imu_factor(id, next);
    } else {
      add_imu_factor(*prev, id);
    }
    const auto& f = static_cast<const ImuFactor&>(*factors.at(imu_out.at(*prev)));
    n->estimate = predict(find(*prev)->estimate, f.preintegrated(), cfg.gravity);
  }

  std::vector<std::uint64_t> variable_ids() const {
    std::vector<std::uint64_t> out;
    for (const Node& n : nodes) {
      if (n.variable) out.push_back(n.key.id);
    }
    return out;
  }

  std::vector<const NavState*> states_of(const Factor& f) const {
    std::vector<const NavState*> s;
    s.reserve(f.keys().size());
    for (std::uint64_t k : f.keys()) s.push_back(&find(k)->estimate);
    return s;
  }

  void linearize(std::size_t fid, const Factor& f, Eigen::VectorXd& r, const std::vector<NavJacobian>*& jac) {
    const auto states = states_of(f);
    Linearization& lin = cache[fid];
    bool fresh = lin.jacobians.empty() || cfg.relinearize_threshold <= 0.0;
    if (!fresh) {
      for (std::size_t k = 0; k < states.size() && !fresh; ++k) {
        fresh = nav_minus(*states[k], lin.at[k]).cwiseAbs().maxCoeff() > cfg.relinearize_threshold;
      }
    }
    if (fresh) {
      f.evaluate(states, r, &lin.jacobians);
      lin.at.clear();
      for (const NavState* s : states) lin.at.push_back(*s);
    } else {
      f.evaluate(states, r, nullptr);
    }
    jac = &lin.jacobians;
  }

  double cost() const {
    double c = 0.0;
    for (const auto& [id, f] : factors) c += 0.5 * f->weight() * f->whitened_squared(states_of(*f));
    return c;
  }

  Eigen::SparseMatrix<double> assemble(const std::map<std::uint64_t, int>& index, Eigen::VectorXd* gradient,
                                       bool use_cache) {
    const int n = static_cast<int>(index.size()) * ns::kDim;
    std::vector<Eigen::Triplet<double>> trip;
    if (gradient != nullptr) gradient->setZero(n);
    Eigen::VectorXd r;
    std::vector<NavJacobian> local;
    for (const auto& [fid, f] : factors) {
      const std::vector<NavJacobian>* jac = nullptr;
      if (use_cache) {
        linearize(fid, *f, r, jac);
      } else {
        f->evaluate(states_of(*f), r, &local);
        jac = &local;
      }
      const double w = f->weight();
      const auto& keys = f->keys();
      for (std::size_t a = 0; a < keys.size(); ++a) {
        const int ia = index.at(keys[a]) * ns::kDim;
        if (gradient != nullptr) gradient->segment(ia, ns::kDim) += w * (*jac)[a].transpose() * r;
        for (std::size_t b = 0; b < keys.size(); ++b) {
          const int ib = index.at(keys[b]) * ns::kDim;
          const NavMat blk = w * (*jac)[a].transpose() * (*jac)[b];
          for (int c = 0; c < ns::kDim; ++c) {
            for (int rr = 0; rr < ns::kDim; ++rr) {
              if (blk(rr, c) != 0.0) trip.emplace_back(ia + rr, ib + c, blk(rr, c));
            }
          }
        }
      }
    }
    Eigen::SparseMatrix<double> h(n, n);
    h.setFromTriplets(trip.begin(), trip.end());
    return h;
  }

  std::map<std::uint64_t, int> make_index() const {
    std::map<std::uint64_t, int> index;
    int k = 0;
    for (std::uint64_t id : variable_ids()) index[id] = k++;
    return index;
  }

  /// Damped Gauss-Newton on the current weights. Returns iterations used.
  int solve_weighted() {
    const auto index = make_index();
    const int n = static_cast<int>(index.size()) * ns::kDim;
    double current = cost();
    double lambda = 0.0;
    int it = 0;
    Eigen::VectorXd g;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    bool rebuild = true;
    Eigen::SparseMatrix<double> h;
    while (it < cfg.max_inner_iterations) {
      ++it;
      if (rebuild) h = assemble(index, &g, true);
      Eigen::SparseMatrix<double> damped = h;
      if (lambda > 0.0) {
        for (int k = 0; k < n; ++k) damped.coeffRef(k, k) += lambda * (h.coeff(k, k) + 1e-9);
      }
      ldlt.compute(damped);
      Eigen::VectorXd dx;
      if (ldlt.info() == Eigen::Success) dx = ldlt.solve(-g);
      if (ldlt.info() != Eigen::Success || !dx.allFinite()) {
        lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
        rebuild = false;
        if (lambda > 1e12) break;
        continue;
      }
      std::vector<NavState> saved;
      saved.reserve(index.size());
      for (const auto& [id, k] : index) {
        Node* node = find(id);
        saved.push_back(node->estimate);
        node->estimate = nav_plus(node->estimate, dx.segment<ns::kDim>(k * ns::kDim));
      }
      const double next = cost();
      if (std::isfinite(next) && next <= current + 1e-12 * std::max(current, 1.0)) {
        current = next;
        lambda = lambda > 0.0 ? lambda / 10.0 : 0.0;
        if (lambda < 1e-9) lambda = 0.0;
        rebuild = true;
        if (dx.cwiseAbs().maxCoeff() < cfg.step_tolerance) break;
      } else {
        std::size_t s = 0;
        for (const auto& [id, k] : index) find(id)->estimate = saved[s++];
        lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
        rebuild = false;
        if (lambda > 1e12) break;
      }
    }
    return it;
  }

  OptimizeResult run_optimize() {
    OptimizeResult res;
    std::vector<Factor*> guarded;
    for (auto& [id, f] : factors) {
      if (f->guarded()) {
        guarded.push_back(f.get());
        f->set_gnc_state(1.0, 1.0);
      }
    }
    res.inner_iterations += solve_weighted();
    res.cost = cost();
    if (!cfg.gnc_enabled || guarded.empty()) return res;

    const double c = cfg.kernel_scale;
    std::vector<double> r2(guarded.size());
    bool quiet = true;
    for (std::size_t k = 0; k < guarded.size(); ++k) {
      r2[k] = guarded[k]->whitened_squared(states_of(*guarded[k]));
      quiet = quiet && std::sqrt(r2[k]) < cfg.quiescence_ratio * c;
    }
    if (quiet) return res;

    res.gnc_ran = true;
    std::vector<double> mu(guarded.size());
    for (std::size_t k = 0; k < guarded.size(); ++k) mu[k] = 2.0 * std::max(r2[k] / (c * c), 1.0);
    double previous = std::numeric_limits<double>::infinity();
    res.converged = false;
    for (int outer = 0; outer < cfg.max_outer_iterations; ++outer) {
      res.outer_iterations = outer + 1;
      for (std::size_t k = 0; k < guarded.size(); ++k) guarded[k]->set_gnc_state(mu[k], gnc_weight(r2[k], mu[k], c));
      res.inner_iterations += solve_weighted();
      const double current = cost();
      for (std::size_t k = 0; k < guarded.size(); ++k) r2[k] = guarded[k]->whitened_squared(states_of(*guarded[k]));
      const bool at_one = std::all_of(mu.begin(), mu.end(), [](double m) { return m == 1.0; });
      if (at_one && std::abs(previous - current) <= cfg.relative_cost_tolerance * std::max(current, 1e-300)) {
        res.converged = true;
        res.cost = current;
        break;
      }
      previous = current;
      res.cost = current;
      for (double& m : mu) m = std::max(1.0, m / cfg.mu_divisor);
    }
    res.diverged = !res.converged;
    return res;
  }

  NavMat marginal_cov(std::uint64_t id) {
    const auto index = make_index();
    if (!index.count(id)) throw std::invalid_argument("node is not an optimization variable");
    const Eigen::SparseMatrix<double> h = assemble(index, nullptr, false);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(h);
    if (ldlt.info() != Eigen::Success) throw std::runtime_error("smoother information matrix is singular");
    const int n = static_cast<int>(h.rows());
    const int off = index.at(id) * ns::kDim;
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, ns::kDim);
    e.middleRows(off, ns::kDim).setIdentity();
    const Eigen::MatrixXd x = ldlt.solve(e);
    NavMat cov = x.middleRows(off, ns::kDim);
    return 0.5 * (cov + cov.transpose());
  }

  void slide(double t_now) {
    const double t_cut = t_now - cfg.window;
    const double eps = 1e-9;
    if (nodes.empty() || nodes.front().key.timestamp >= t_cut - eps) return;
    std::size_t b = 0;
    while (b + 1 < nodes.size() && nodes[b].key.timestamp < t_cut - eps) ++b;
    const std::uint64_t boundary = nodes[b].key.id;
    if (!nodes[b].variable) {
      make_variable(boundary);
      solve_weighted();
    }

    std::set<std::uint64_t> removed;
    for (std::size_t k = 0; k < b; ++k) {
      if (nodes[k].variable) removed.insert(nodes[k].key.id);
    }
    std::vector<std::size_t> elim;
    for (const auto& [fid, f] : factors) {
      const bool touches = std::any_of(f->keys().begin(), f->keys().end(),
                                       [&](std::uint64_t k) { return removed.count(k) > 0; });
      if (touches || (marginal && fid == *marginal)) elim.push_back(fid);
    }

    if (!elim.empty()) {
      std::vector<std::uint64_t> blanket;
      for (std::size_t fid : elim) {
        for (std::uint64_t k : factors.at(fid)->keys()) {
          if (!removed.count(k) && std::find(blanket.begin(), blanket.end(), k) == blanket.end()) blanket.push_back(k);
        }
      }
      std::sort(blanket.begin(), blanket.end());
      std::map<std::uint64_t, int> index;
      int next = 0;
      for (std::uint64_t k : removed) index[k] = next++;
      const int nm = next * ns::kDim;
      for (std::uint64_t k : blanket) index[k] = next++;
      const int n = next * ns::kDim;
      const int nb = n - nm;

      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
      Eigen::VectorXd r;
      std::vector<NavJacobian> jac;
      for (std::size_t fid : elim) {
        const Factor& f = *factors.at(fid);
        f.evaluate(states_of(f), r, &jac);
        const double w = f.weight();
        for (std::size_t a = 0; a < f.keys().size(); ++a) {
          const int ia = index.at(f.keys()[a]) * ns::kDim;
          g.segment(ia, ns::kDim) += w * jac[a].transpose() * r;
          for (std::size_t c = 0; c < f.keys().size(); ++c) {
            const int ic = index.at(f.keys()[c]) * ns::kDim;
            h.block(ia, ic, ns::kDim, ns::kDim) += w * jac[a].transpose() * jac[c];
          }
        }
      }
      Eigen::MatrixXd hs = h.bottomRightCorner(nb, nb);
      Eigen::VectorXd gs = g.tail(nb);
      if (nm > 0) {
        const Eigen::LDLT<Eigen::MatrixXd> hmm(h.topLeftCorner(nm, nm));
        const Eigen::MatrixXd x = hmm.solve(h.topRightCorner(nm, nb));
        hs -= h.bottomLeftCorner(nb, nm) * x;
        gs -= x.transpose() * g.head(nm);
      }
      for (std::size_t fid : elim) {
        const auto imu = std::find_if(imu_out.begin(), imu_out.end(), [&](const auto& kv) { return kv.second == fid; });
        if (imu != imu_out.end()) imu_out.erase(imu);
        erase_factor(fid);
      }
      std::vector<NavState> lin;
      for (std::uint64_t k : blanket) lin.push_back(find(k)->estimate);
      marginal = insert(std::make_unique<MarginalPriorFactor>(blanket, std::move(lin), hs, gs));
    }

    for (std::uint64_t k : removed) history.emplace_back(find(k)->key.timestamp, find(k)->estimate);
    nodes.erase(nodes.begin(), nodes.begin() + static_cast<std::ptrdiff_t>(b));
  }
};

FixedLagSmoother::FixedLagSmoother(SmootherConfig config) : impl_(std::make_unique<Impl>()) {
  config.validate();
  impl_->cfg = std::move(config);
}

FixedLagSmoother::~FixedLagSmoother() = default;
FixedLagSmoother::FixedLagSmoother(FixedLagSmoother&&) noexcept = default;
FixedLagSmoother& FixedLagSmoother::operator=(FixedLagSmoother&&) noexcept = default;

NodeKey FixedLagSmoother::initialize(const ImuSample& first, const NavState& mean, const NavMat& covariance) {
  if (!impl_->nodes.empty()) throw std::logic_error("smoother already initialized");
  Node n;
  n.key = {impl_->next_id++, first.timestamp};
  n.has_sample = true;
  n.sample = first;
  n.variable = true;
  n.estimate = mean;
  impl_->nodes.push_back(n);
  impl_->reference_bias = mean.bias();
  impl_->insert(std::make_unique<PriorFactor>(n.key.id, mean, covariance));
  return n.key;
}

NodeKey FixedLagSmoother::add_imu_node(const ImuSample& sample) {
  auto& nodes = impl_->nodes;
  if (nodes.empty()) throw std::logic_error("smoother is not initialized");
  if (!(sample.timestamp > nodes.back().key.timestamp)) {
    throw std::invalid_argument("IMU node timestamps must increase");
  }
  if (!nodes.back().has_sample) throw std::logic_error("cannot mix IMU nodes with plain nodes");
  Node n;
  n.key = {impl_->next_id++, sample.timestamp};
  n.has_sample = true;
  n.sample = sample;
  nodes.push_back(n);
  return n.key;
}

NodeKey FixedLagSmoother::add_node(double timestamp, const NavState& initial) {
  auto& nodes = impl_->nodes;
  if (!nodes.empty() && !(timestamp > nodes.back().key.timestamp)) {
    throw std::invalid_argument("node timestamps must increase");
  }
  Node n;
  n.key = {impl_->next_id++, timestamp};
  n.variable = true;
  n.estimate = initial;
  nodes.push_back(n);
  return n.key;
}

std::optional<NodeKey> FixedLagSmoother::nearest_node(double t) const {
  const auto& nodes = impl_->nodes;
  if (nodes.empty()) return std::nullopt;
  const auto it = std::lower_bound(nodes.begin(), nodes.end(), t,
                                   [](const Node& n, double v) { return n.key.timestamp < v; });
  if (it == nodes.end()) return nodes.back().key;
  if (it == nodes.begin()) return it->key;
  const auto prev = std::prev(it);
  return (t - prev->key.timestamp) <= (it->key.timestamp - t) ? prev->key : it->key;
}

std::size_t FixedLagSmoother::attach_odometry(const Pose& relative, double t_a, double t_b, const Mat6& covariance,
                                              bool guarded) {
  const double tol = 1.0 / impl_->cfg.imu_rate;
  if (impl_->nodes.empty()) throw std::invalid_argument("smoother has no nodes");
  if (t_a < impl_->nodes.front().key.timestamp - tol) {
    throw StaleMeasurementError("odometry anchor at t=" + std::to_string(t_a) + " is older than the window");
  }
  const auto a = nearest_node(t_a);
  const auto b = nearest_node(t_b);
  if (std::abs(a->timestamp - t_a) > tol || std::abs(b->timestamp - t_b) > tol) {
    throw std::invalid_argument("odometry anchor has no node within one IMU period");
  }
  if (a->id == b->id) throw std::invalid_argument("odometry anchors resolve to the same node");
  auto f = std::make_unique<RelativePoseFactor>(a->id, b->id, relative, covariance);
  f->set_guarded(guarded);
  return add_factor(std::move(f));
}

std::size_t FixedLagSmoother::add_factor(std::unique_ptr<Factor> factor) {
  for (std::uint64_t k : factor->keys()) {
    if (impl_->find(k) == nullptr) {
      if (!impl_->nodes.empty() && k < impl_->nodes.front().key.id) {
        throw StaleMeasurementError("factor references marginalized node " + std::to_string(k));
      }
      throw std::invalid_argument("factor references unknown node " + std::to_string(k));
    }
  }
  for (std::uint64_t k : factor->keys()) impl_->make_variable(k);
  return impl_->insert(std::move(factor));
}

OptimizeResult FixedLagSmoother::optimize() {
  if (impl_->nodes.empty()) throw std::logic_error("smoother is not initialized");
  impl_->make_variable(impl_->nodes.back().key.id);
  OptimizeResult res = impl_->run_optimize();
  impl_->optimized = true;
  return res;
}

void FixedLagSmoother::slide(double t_now) { impl_->slide(t_now); }

std::optional<BackendPoseMeasurement> FixedLagSmoother::latest_pose() const {
  if (!impl_->optimized) return std::nullopt;
  const auto vars = impl_->variable_ids();
  if (vars.empty()) return std::nullopt;
  const Node* n = impl_->find(vars.back());
  const NavMat cov = marginal_covariance(vars.back());
  BackendPoseMeasurement z;
  z.rotation = n->estimate.rotation;
  z.translation = n->estimate.position;
  z.rotation_covariance = cov.block<3, 3>(ns::kRot, ns::kRot);
  z.translation_covariance = cov.block<3, 3>(ns::kPos, ns::kPos);
  z.timestamp = n->key.timestamp;
  return z;
}

NavMat FixedLagSmoother::marginal_covariance(std::uint64_t id) const { return impl_->marginal_cov(id); }

NavState FixedLagSmoother::estimate(std::uint64_t id) const {
  const Node* n = impl_->find(id);
  if (n == nullptr) throw std::invalid_argument("unknown node " + std::to_string(id));
  if (!n->variable) throw std::invalid_argument("node " + std::to_string(id) + " is not an optimization variable");
  return n->estimate;
}

std::size_t FixedLagSmoother::node_count() const { return impl_->nodes.size(); }
std::size_t FixedLagSmoother::variable_count() const { return impl_->variable_ids().size(); }
std::size_t FixedLagSmoother::factor_count() const { return impl_->factors.size(); }

std::size_t FixedLagSmoother::factor_count(FactorKind kind) const {
  return static_cast<std::size_t>(std::count_if(impl_->factors.begin(), impl_->factors.end(),
                                                [&](const auto& kv) { return kv.second->kind() == kind; }));
}

std::vector<NodeKey> FixedLagSmoother::variables() const {
  std::vector<NodeKey> out;
  for (const Node& n : impl_->nodes) {
    if (n.variable) out.push_back(n.key);
  }
  return out;
}

const Factor& FixedLagSmoother::factor(std::size_t id) const { return *impl_->factors.at(id); }

std::vector<std::size_t> FixedLagSmoother::factor_ids() const {
  std::vector<std::size_t> out;
  for (const auto& kv : impl_->factors) out.push_back(kv.first);
  return out;
}

std::vector<std::pair<double, NavState>> FixedLagSmoother::smoothed_trajectory() const {
  auto out = impl_->history;
  for (const Node& n : impl_->nodes) {
    if (n.variable) out.emplace_back(n.key.timestamp, n.estimate);
  }
  return out;
}

const SmootherConfig& FixedLagSmoother::config() const { return impl_->cfg; }

void FixedLagSmoother::write_json(std::ostream& out) const {
  using nlohmann::json;
  json doc;
  doc["nodes"] = json::array();
  for (const Node& n : impl_->nodes) {
    if (!n.variable) continue;
    const auto q = n.estimate.rotation.quaternion();
    doc["nodes"].push_back({{"id", n.key.id},
                            {"t", n.key.timestamp},
                            {"p", {n.estimate.position.x(), n.estimate.position.y(), n.estimate.position.z()}},
                            {"q", {q.x(), q.y(), q.z(), q.w()}}});
  }
  doc["raw_nodes"] = impl_->nodes.size();
  doc["factors"] = json::array();
  for (const auto& [id, f] : impl_->factors) {
    doc["factors"].push_back({{"id", id},
                              {"kind", std::string(to_string(f->kind()))},
                              {"keys", f->keys()},
                              {"guarded", f->guarded()},
                              {"mu", f->mu()},
                              {"weight", f->weight()},
                              {"r2", f->whitened_squared(impl_->states_of(*f))}});
  }
  out << doc.dump(2) << '\n';
}

}  // namespace dalio
