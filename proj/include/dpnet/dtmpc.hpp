#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dpnet/geom2d.hpp"

namespace dpnet {

struct RobotState {
  double x{0.0};
  double y{0.0};
  double theta{0.0};
};

struct ControlAction {
  double v{0.0};
  double psi{0.0};
};

struct AdmmConfig {
  double rho{1.0};  // initial penalty; rescaled by residual balancing
  int max_iter{200};
  double primal_tol{1e-3};
  double dual_tol{1e-3};
  bool adaptive_rho{true};
};

struct PlannerConfig {
  int horizon{15};
  double dt{0.12};
  ControlAction w_min{-2.0, -2.0};
  ControlAction w_max{8.0, 2.0};
  std::pair<double, double> robot_dims{1.6, 0.9};  // length, width
  double gamma{1000.0};
  AdmmConfig admm;
  int sqp_outer_iters{5};
};

struct TuningConfig {
  double d0{0.8};          // Doppler-inferred collision threshold
  double d1{0.3};          // compulsory minimum distance
  double d2{0.4};          // adaptive distance
  double alpha{0.2};       // priority decay rate
  double beta{0.1};        // horizon decay rate
  double tau1_min{0.2};
  double tau2_min{0.3};
  double kappa_init{1.0};
  double delta_kappa{1.0};
};

/// H x N matrix of per-step, per-obstacle safety margins.
struct SafetyMargins {
  Eigen::MatrixXd phi;
};

struct SolverDiagnostics {
  int iterations{0};
  double primal_residual{0.0};
  double dual_residual{0.0};
  double tracking_cost{0.0};
  double collision_loss{0.0};
  bool converged{false};
  std::vector<double> outer_objectives;  // exact penalized objective per pass
};

// Carried ADMM internals for receding-horizon warm starts.
struct AdmmWarmState {
  bool valid{false};
  double rho{0.0};
  Eigen::MatrixXd z, u;                 // H x N slacks and scaled duals
  std::vector<ControlAction> vcopy;     // action consensus copies
  std::vector<ControlAction> lambda;    // action scaled duals
};

struct HorizonSolution {
  std::vector<ControlAction> actions;  // length H
  std::vector<RobotState> states;      // length H, exact rollout
  SolverDiagnostics diagnostics;
  AdmmWarmState admm_state;

  std::vector<RobotState> tail_states() const {
    return states.size() > 1
               ? std::vector<RobotState>(states.begin() + 1, states.end())
               : std::vector<RobotState>{};
  }
  std::vector<ControlAction> tail_actions() const {
    return actions.size() > 1
               ? std::vector<ControlAction>(actions.begin() + 1, actions.end())
               : std::vector<ControlAction>{};
  }
};

/// Unicycle Euler step of Eq-16b form; heading wrapped to (-pi, pi].
inline RobotState kinematic_step(const RobotState& s, const ControlAction& w,
                                 double dt) {
  if (!(dt > 0.0)) {
    throw std::invalid_argument("kinematic_step: dt must be positive");
  }
  RobotState out;
  out.x = s.x + w.v * std::cos(s.theta) * dt;
  out.y = s.y + w.v * std::sin(s.theta) * dt;
  out.theta = wrap_angle(s.theta + w.psi * dt);
  return out;
}

inline std::vector<RobotState> rollout(const RobotState& s0,
                                       const std::vector<ControlAction>& ws,
                                       double dt) {
  std::vector<RobotState> states;
  states.reserve(ws.size());
  RobotState s = s0;
  for (const ControlAction& w : ws) {
    s = kinematic_step(s, w, dt);
    states.push_back(s);
  }
  return states;
}

/// Sum of squared state deviations; the angular residual is wrapped before
/// squaring.
inline double tracking_cost(const std::vector<RobotState>& states,
                            const std::vector<RobotState>& waypoints) {
  if (states.size() != waypoints.size()) {
    throw std::invalid_argument("tracking_cost: length mismatch");
  }
  double c = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double dx = states[i].x - waypoints[i].x;
    const double dy = states[i].y - waypoints[i].y;
    const double dth = wrap_angle(states[i].theta - waypoints[i].theta);
    c += dx * dx + dy * dy + dth * dth;
  }
  return c;
}

/// Quadratic hinge collision penalty over the horizon.
inline double collision_loss(
    const SafetyMargins& phi, const std::vector<OrientedBox>& robot_boxes,
    const std::vector<std::vector<OrientedBox>>& obstacle_preds) {
  const int h_len = static_cast<int>(robot_boxes.size());
  const int n_obs = static_cast<int>(obstacle_preds.size());
  if (phi.phi.rows() < h_len || phi.phi.cols() < n_obs) {
    throw std::invalid_argument("collision_loss: margin matrix too small");
  }
  double loss = 0.0;
  for (int h = 0; h < h_len; ++h) {
    for (int n = 0; n < n_obs; ++n) {
      const double d = min_distance(robot_boxes[h], obstacle_preds[n][h]);
      const double viol = std::min(d - phi.phi(h, n), 0.0);
      loss += viol * viol;
    }
  }
  return loss;
}

inline constexpr double kInfPriority = std::numeric_limits<double>::infinity();

/// Algorithm-2 Doppler collision check: walks the previous solution's
/// non-executed tail against fresh obstacle predictions (truncated to the
/// same length) and assigns each obstacle the accumulator value kappa of the
/// first step whose distance drops to d0.
inline std::vector<double> doppler_collision_check(
    const std::vector<OrientedBox>& prev_tail_boxes,
    const std::vector<std::vector<OrientedBox>>& obstacle_preds,
    const TuningConfig& cfg) {
  const int n_obs = static_cast<int>(obstacle_preds.size());
  std::vector<double> priorities(n_obs, kInfPriority);
  if (prev_tail_boxes.empty()) return priorities;
  const int steps = static_cast<int>(prev_tail_boxes.size());
  double kappa = cfg.kappa_init;
  for (int h = 0; h < steps; ++h) {
    for (int n = 0; n < n_obs; ++n) {
      if (priorities[n] == kInfPriority &&
          h < static_cast<int>(obstacle_preds[n].size()) &&
          min_distance(prev_tail_boxes[h], obstacle_preds[n][h]) <= cfg.d0) {
        priorities[n] = kappa;
      }
    }
    kappa += cfg.delta_kappa;
  }
  return priorities;
}

/// Spatial/temporal margin decomposition: phi = d1 + tau1(n) tau2(h) d2.
/// An infinite priority maps tau1 to its lower bound.
inline SafetyMargins tune_margins(const std::vector<double>& priorities,
                                  const TuningConfig& cfg, int horizon,
                                  int n_obs) {
  SafetyMargins out;
  out.phi = Eigen::MatrixXd::Zero(horizon, n_obs);
  for (int n = 0; n < n_obs; ++n) {
    const double rho_n = n < static_cast<int>(priorities.size())
                             ? priorities[n]
                             : kInfPriority;
    const double tau1 =
        std::max(1.0 - cfg.alpha * (rho_n - cfg.kappa_init), cfg.tau1_min);
    for (int h = 0; h < horizon; ++h) {
      const double tau2 = std::max(1.0 - cfg.beta * h, cfg.tau2_min);
      out.phi(h, n) = cfg.d1 + tau1 * tau2 * cfg.d2;
    }
  }
  return out;
}

inline SafetyMargins constant_margins(double value, int horizon, int n_obs) {
  SafetyMargins out;
  out.phi = Eigen::MatrixXd::Constant(horizon, n_obs, value);
  return out;
}

namespace detail {

inline ControlAction clamp_action(const ControlAction& w,
                                  const PlannerConfig& cfg) {
  return {std::clamp(w.v, cfg.w_min.v, cfg.w_max.v),
          std::clamp(w.psi, cfg.w_min.psi, cfg.w_max.psi)};
}

// Rollout without heading wrap; keeps the linearization continuous across
// the +-pi boundary. Positions agree with the wrapped rollout.
inline std::vector<Eigen::Vector3d> rollout_unwrapped(
    const RobotState& s0, const std::vector<ControlAction>& ws, double dt) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(ws.size() + 1);
  Eigen::Vector3d s(s0.x, s0.y, s0.theta);
  out.push_back(s);
  for (const ControlAction& w : ws) {
    s = Eigen::Vector3d(s.x() + w.v * std::cos(s.z()) * dt,
                        s.y() + w.v * std::sin(s.z()) * dt,
                        s.z() + w.psi * dt);
    out.push_back(s);
  }
  return out;
}

struct DistanceModel {
  double base{0.0};       // signed distance at the linearization point
  Eigen::Vector3d grad{0, 0, 0};  // d(dist)/d(x, y, theta)
  double offset{0.0};     // base - grad . s_bar, so dhat = grad.s + offset
};

inline DistanceModel linearize_distance(const Eigen::Vector3d& s_bar,
                                        const OrientedBox& obstacle,
                                        const PlannerConfig& cfg) {
  const OrientedBox robot = box_from_state(
      s_bar.x(), s_bar.y(), wrap_angle(s_bar.z()), cfg.robot_dims.first,
      cfg.robot_dims.second);
  const Separation sep = signed_separation(robot, obstacle);
  DistanceModel m;
  m.base = sep.dist;
  const Vec2 arm(sep.point_a.x() - s_bar.x(), sep.point_a.y() - s_bar.y());
  m.grad = Eigen::Vector3d(sep.normal.x(), sep.normal.y(),
                           sep.normal.dot(perp(arm)));
  m.offset = m.base - m.grad.dot(s_bar);
  return m;
}

}  // namespace detail

/// Solves the explicit horizon problem: reference tracking plus the hinge
/// collision penalty under exact rollout dynamics and action bounds.
///
/// Structure: an outer sequential-convexification loop linearizes the
/// dynamics around the incumbent rollout and each (step, obstacle) distance
/// around its closest-point pair; the resulting subproblem splits into a
/// trajectory block (equality-constrained QP, solved through one sparse
/// factorization of its banded KKT system per linearization) and a collision
/// block (per-pair slack prox and action box projection, both closed form)
/// coupled by scaled duals. Candidate steps are accepted only if the exact
/// penalized objective does not increase.
inline HorizonSolution solve_horizon(
    const RobotState& current, const std::vector<RobotState>& waypoints,
    const std::vector<std::vector<OrientedBox>>& obstacle_preds,
    const SafetyMargins& phi, const PlannerConfig& cfg,
    const HorizonSolution* warm = nullptr, bool allow_reseed = true) {
  const int H = cfg.horizon;
  const int N = static_cast<int>(obstacle_preds.size());
  if (static_cast<int>(waypoints.size()) != H) {
    throw std::invalid_argument("solve_horizon: waypoints length != horizon");
  }
  for (const auto& preds : obstacle_preds) {
    if (static_cast<int>(preds.size()) < H) {
      throw std::invalid_argument("solve_horizon: predictions shorter than H");
    }
  }
  if (N > 0 && (phi.phi.rows() < H || phi.phi.cols() < N)) {
    throw std::invalid_argument("solve_horizon: margin matrix too small");
  }
  if (!std::isfinite(current.x) || !std::isfinite(current.y) ||
      !std::isfinite(current.theta)) {
    throw std::invalid_argument("solve_horizon: non-finite state");
  }
  for (const auto& wp : waypoints) {
    if (!std::isfinite(wp.x) || !std::isfinite(wp.y) ||
        !std::isfinite(wp.theta)) {
      throw std::invalid_argument("solve_horizon: non-finite waypoint");
    }
  }
  const double dt = cfg.dt;
  // The slack prox has curvature 2*gamma, so consensus needs a penalty on
  // the same scale; below it the dual wall force builds up too slowly to
  // converge within the iteration cap.
  double rho = N > 0 ? std::max(cfg.admm.rho, 0.5 * cfg.gamma) : cfg.admm.rho;

  std::vector<ControlAction> inc(H, ControlAction{0.0, 0.0});
  if (warm && static_cast<int>(warm->actions.size()) == H) {
    for (int h = 0; h < H; ++h) inc[h] = detail::clamp_action(warm->actions[h], cfg);
  }

  const auto robot_boxes = [&](const std::vector<RobotState>& states) {
    std::vector<OrientedBox> boxes;
    boxes.reserve(states.size());
    for (const RobotState& s : states) {
      boxes.push_back(box_from_state(s.x, s.y, s.theta, cfg.robot_dims.first,
                                     cfg.robot_dims.second));
    }
    return boxes;
  };
  const auto exact_objective = [&](const std::vector<ControlAction>& ws,
                                   double* track_out, double* coll_out) {
    const std::vector<RobotState> states = rollout(current, ws, dt);
    const double track = tracking_cost(states, waypoints);
    double coll = 0.0;
    if (N > 0) {
      coll = collision_loss(phi, robot_boxes(states), obstacle_preds);
    }
    if (track_out) *track_out = track;
    if (coll_out) *coll_out = coll;
    return track + cfg.gamma * coll;
  };

  double inc_obj = exact_objective(inc, nullptr, nullptr);

  // ADMM state kept across outer passes, optionally seeded from a shifted
  // previous solution.
  Eigen::MatrixXd z(H, std::max(N, 1)), udual(H, std::max(N, 1));
  udual.setZero();
  z.setZero();
  std::vector<ControlAction> vcopy = inc;
  std::vector<ControlAction> lambda(H, ControlAction{0.0, 0.0});
  bool z_initialized = false;
  if (warm && warm->admm_state.valid && warm->admm_state.z.rows() == H &&
      warm->admm_state.z.cols() == std::max(N, 1) &&
      static_cast<int>(warm->admm_state.lambda.size()) == H) {
    z = warm->admm_state.z;
    udual = warm->admm_state.u;
    vcopy = warm->admm_state.vcopy;
    lambda = warm->admm_state.lambda;
    rho = warm->admm_state.rho;
    z_initialized = true;
  }

  SolverDiagnostics diag;
  const int nvar = 5 * H;
  const int ncon = 3 * H;
  const auto widx = [&](int h, int k) { return 5 * h + k; };        // action
  const auto sidx = [&](int h, int k) { return 5 * h + 2 + k; };    // state h+1

  for (int outer = 0; outer < cfg.sqp_outer_iters; ++outer) {
    const auto sbar = detail::rollout_unwrapped(current, inc, dt);

    // Distance linearizations at the incumbent states.
    std::vector<std::vector<detail::DistanceModel>> dist(H);
    for (int h = 0; h < H; ++h) {
      dist[h].resize(N);
      for (int n = 0; n < N; ++n) {
        dist[h][n] =
            detail::linearize_distance(sbar[h + 1], obstacle_preds[n][h], cfg);
      }
    }
    if (!z_initialized) {
      for (int h = 0; h < H; ++h) {
        for (int n = 0; n < N; ++n) z(h, n) = dist[h][n].base;
      }
      z_initialized = true;
    }

    // Waypoint targets with the angular component unwrapped near the
    // incumbent so (theta - target) equals the wrapped residual.
    std::vector<Eigen::Vector3d> target(H);
    for (int h = 0; h < H; ++h) {
      const double th_bar = sbar[h + 1].z();
      target[h] = Eigen::Vector3d(
          waypoints[h].x, waypoints[h].y,
          th_bar - wrap_angle(th_bar - waypoints[h].theta));
    }

    // KKT system: variables [w_0, s_1, w_1, s_2, ...], equality rows from the
    // linearized dynamics. The quadratic block is fixed for this
    // linearization; slack and dual updates only move the right-hand side.
    Eigen::MatrixXd amat = Eigen::MatrixXd::Zero(ncon, nvar);
    Eigen::VectorXd rhs_con(ncon);
    std::vector<Eigen::Matrix3d> a_h(H);
    std::vector<Eigen::Matrix<double, 3, 2>> b_h(H);
    for (int h = 0; h < H; ++h) {
      const double th = sbar[h].z();
      const double vb = inc[h].v;
      Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
      a(0, 2) = -vb * std::sin(th) * dt;
      a(1, 2) = vb * std::cos(th) * dt;
      Eigen::Matrix<double, 3, 2> b;
      b << std::cos(th) * dt, 0.0, std::sin(th) * dt, 0.0, 0.0, dt;
      a_h[h] = a;
      b_h[h] = b;
      const Eigen::Vector3d c =
          sbar[h + 1] - a * sbar[h] -
          b * Eigen::Vector2d(inc[h].v, inc[h].psi);
      for (int r = 0; r < 3; ++r) {
        amat(3 * h + r, sidx(h, r)) = 1.0;
        amat(3 * h + r, widx(h, 0)) = -b(r, 0);
        amat(3 * h + r, widx(h, 1)) = -b(r, 1);
        if (h > 0) {
          for (int k = 0; k < 3; ++k) {
            amat(3 * h + r, sidx(h - 1, k)) = -a(r, k);
          }
        }
      }
      rhs_con.segment<3>(3 * h) =
          h == 0 ? Eigen::Vector3d(c + a * sbar[0]) : c;
    }

    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    Eigen::SparseMatrix<double> kkt(nvar + ncon, nvar + ncon);
    const auto factorize = [&](double rho_now) {
      Eigen::MatrixXd hmat = Eigen::MatrixXd::Zero(nvar, nvar);
      for (int h = 0; h < H; ++h) {
        for (int k = 0; k < 3; ++k) hmat(sidx(h, k), sidx(h, k)) += 2.0;
        hmat(widx(h, 0), widx(h, 0)) += rho_now;
        hmat(widx(h, 1), widx(h, 1)) += rho_now;
        for (int n = 0; n < N; ++n) {
          const Eigen::Vector3d& g = dist[h][n].grad;
          for (int r = 0; r < 3; ++r) {
            for (int c2 = 0; c2 < 3; ++c2) {
              hmat(sidx(h, r), sidx(h, c2)) += rho_now * g(r) * g(c2);
            }
          }
        }
      }
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(16 * H + 30 * H);
      for (int i = 0; i < nvar; ++i) {
        for (int j = 0; j < nvar; ++j) {
          if (hmat(i, j) != 0.0) trip.emplace_back(i, j, hmat(i, j));
        }
      }
      for (int i = 0; i < ncon; ++i) {
        for (int j = 0; j < nvar; ++j) {
          if (amat(i, j) != 0.0) {
            trip.emplace_back(nvar + i, j, amat(i, j));
            trip.emplace_back(j, nvar + i, amat(i, j));
          }
        }
      }
      kkt.setFromTriplets(trip.begin(), trip.end());
      lu.compute(kkt);
      return lu.info() == Eigen::Success;
    };
    if (!factorize(rho)) break;

    Eigen::VectorXd x(nvar);
    for (int h = 0; h < H; ++h) {
      x(widx(h, 0)) = inc[h].v;
      x(widx(h, 1)) = inc[h].psi;
      for (int k = 0; k < 3; ++k) x(sidx(h, k)) = sbar[h + 1](k);
    }

    double prim_res = 0.0, dual_res = 0.0;
    bool converged = false;
    int iter = 0;
    for (; iter < cfg.admm.max_iter; ++iter) {
      // Block A: trajectory QP for fixed slacks and duals.
      Eigen::VectorXd q = Eigen::VectorXd::Zero(nvar);
      for (int h = 0; h < H; ++h) {
        for (int k = 0; k < 3; ++k) q(sidx(h, k)) -= 2.0 * target[h](k);
        q(widx(h, 0)) -= rho * (vcopy[h].v - lambda[h].v);
        q(widx(h, 1)) -= rho * (vcopy[h].psi - lambda[h].psi);
        for (int n = 0; n < N; ++n) {
          const auto& m = dist[h][n];
          const double b = z(h, n) - udual(h, n) - m.offset;
          for (int k = 0; k < 3; ++k) q(sidx(h, k)) -= rho * b * m.grad(k);
        }
      }
      Eigen::VectorXd full(nvar + ncon);
      full.head(nvar) = -q;
      full.tail(ncon) = rhs_con;
      const Eigen::VectorXd sol = lu.solve(full);
      x = sol.head(nvar);

      // Block B: slack prox (hinge) and action box projection, closed form.
      double pr = 0.0, dr = 0.0;
      for (int h = 0; h < H; ++h) {
        for (int n = 0; n < N; ++n) {
          const auto& m = dist[h][n];
          double dhat = m.offset;
          for (int k = 0; k < 3; ++k) dhat += m.grad(k) * x(sidx(h, k));
          const double w_t = dhat + udual(h, n);
          const double ph = phi.phi(h, n);
          const double z_new =
              w_t >= ph ? w_t
                        : (rho * w_t + 2.0 * cfg.gamma * ph) /
                              (rho + 2.0 * cfg.gamma);
          dr += (z_new - z(h, n)) * (z_new - z(h, n));
          z(h, n) = z_new;
          udual(h, n) += dhat - z_new;
          pr += (dhat - z_new) * (dhat - z_new);
        }
        const ControlAction w{x(widx(h, 0)), x(widx(h, 1))};
        const ControlAction v_new = detail::clamp_action(
            {w.v + lambda[h].v, w.psi + lambda[h].psi}, cfg);
        dr += (v_new.v - vcopy[h].v) * (v_new.v - vcopy[h].v) +
              (v_new.psi - vcopy[h].psi) * (v_new.psi - vcopy[h].psi);
        vcopy[h] = v_new;
        lambda[h].v += w.v - v_new.v;
        lambda[h].psi += w.psi - v_new.psi;
        pr += (w.v - v_new.v) * (w.v - v_new.v) +
              (w.psi - v_new.psi) * (w.psi - v_new.psi);
      }
      // Both residuals are kept in physical units (m, m/s): the primal is
      // the consensus gap, the dual the iterate movement of the z/V block.
      prim_res = std::sqrt(pr);
      dual_res = std::sqrt(dr);
      ++diag.iterations;
      if (prim_res <= cfg.admm.primal_tol && dual_res <= cfg.admm.dual_tol) {
        converged = true;
        ++iter;
        break;
      }
      // Residual balancing. Increases fire when the primal gap dominates
      // (the consensus wall is too soft). Decreases are restricted to the
      // obstacle-free case: with hinge terms the penalty must stay on the
      // 2*gamma prox scale, and the slack-seeded start (pr = 0) would
      // otherwise be misread as a dual-dominant steady state.
      if (cfg.admm.adaptive_rho && (iter + 1) % 10 == 0) {
        double factor = 1.0;
        if (prim_res > 10.0 * dual_res && rho < 1e4) {
          factor = 2.0;
        } else if (N == 0 && dual_res > 10.0 * prim_res && rho > 1e-6) {
          factor = 0.5;
        }
        if (factor != 1.0) {
          rho *= factor;
          udual /= factor;
          for (ControlAction& l : lambda) {
            l.v /= factor;
            l.psi /= factor;
          }
          if (!factorize(rho)) break;
        }
      }
    }
    diag.primal_residual = prim_res;
    diag.dual_residual = dual_res;
    diag.converged = converged;

    // Candidate step with exact-objective backtracking.
    std::vector<ControlAction> cand(H);
    for (int h = 0; h < H; ++h) {
      cand[h] = detail::clamp_action({x(widx(h, 0)), x(widx(h, 1))}, cfg);
    }
    bool accepted = false;
    double step_norm = 0.0;
    const double prev_obj = inc_obj;
    for (double alpha : {1.0, 0.5, 0.25, 0.125}) {
      std::vector<ControlAction> blend(H);
      double sn = 0.0;
      for (int h = 0; h < H; ++h) {
        blend[h].v = inc[h].v + alpha * (cand[h].v - inc[h].v);
        blend[h].psi = inc[h].psi + alpha * (cand[h].psi - inc[h].psi);
        sn += std::abs(blend[h].v - inc[h].v) +
              std::abs(blend[h].psi - inc[h].psi);
      }
      const double obj = exact_objective(blend, nullptr, nullptr);
      if (obj <= inc_obj + 1e-12) {
        inc = blend;
        inc_obj = obj;
        accepted = true;
        step_norm = sn;
        break;
      }
    }
    diag.outer_objectives.push_back(inc_obj);
    // A rejected candidate from an unconverged inner pass is not a reason to
    // stop: the duals keep maturing across passes. Stop only once the
    // subproblem has converged and the exact objective has stalled.
    if (converged &&
        (!accepted || step_norm < 1e-10 ||
         prev_obj - inc_obj <= 1e-4 * std::max(1.0, inc_obj))) {
      break;
    }
  }

  HorizonSolution out;
  out.actions = inc;
  out.states = rollout(current, inc, dt);
  diag.tracking_cost = tracking_cost(out.states, waypoints);
  diag.collision_loss =
      N > 0 ? collision_loss(phi, robot_boxes(out.states), obstacle_preds)
            : 0.0;
  out.diagnostics = diag;
  out.admm_state.valid = true;
  out.admm_state.rho = rho;
  out.admm_state.z = z;
  out.admm_state.u = udual;
  out.admm_state.vcopy = vcopy;
  out.admm_state.lambda = lambda;

  // Closest-point linearization cannot see around a blocking obstacle: a
  // solve making little forward progress toward the reference is retried
  // from deterministic left/right swing seeds, keeping the best exact
  // penalized objective.
  if (allow_reseed && N > 0 && !waypoints.empty()) {
    const double gx = waypoints.back().x - current.x;
    const double gy = waypoints.back().y - current.y;
    const double gn2 = gx * gx + gy * gy;
    const double progress =
        gn2 < 1e-18 ? 1.0
                    : ((out.states.back().x - current.x) * gx +
                       (out.states.back().y - current.y) * gy) /
                          gn2;
    if (progress < 0.35) {
      const double cruise = std::clamp(
          std::hypot(waypoints.front().x - current.x,
                     waypoints.front().y - current.y) /
              dt,
          cfg.w_min.v, cfg.w_max.v);
      const auto total = [&](const HorizonSolution& s) {
        return s.diagnostics.tracking_cost +
               cfg.gamma * s.diagnostics.collision_loss;
      };
      const int turn_steps = (H + 2) / 3;
      for (double sign : {1.0, -1.0}) {
        HorizonSolution seed;
        seed.actions.assign(H, ControlAction{cruise, 0.0});
        for (int h = 0; h < turn_steps; ++h) {
          seed.actions[h].psi = sign * cfg.w_max.psi;
        }
        const HorizonSolution alt =
            solve_horizon(current, waypoints, obstacle_preds, phi, cfg, &seed,
                          /*allow_reseed=*/false);
        if (total(alt) < total(out)) out = alt;
      }
    }
  }
  return out;
}

struct PlanStepResult {
  ControlAction action;
  HorizonSolution solution;
  SafetyMargins margins;
  std::vector<double> priorities;
};

/// One receding-horizon planning cycle. With Doppler tuning enabled, the
/// previous solution's tail is checked against the fresh predictions and the
/// margins retuned when any collision is inferred; otherwise (and in the
/// ablation) the margins stay at the constant d1 + d2.
inline PlanStepResult plan_step(
    const RobotState& ego, const std::vector<RobotState>& waypoints,
    const std::vector<std::vector<OrientedBox>>& obstacle_preds,
    const HorizonSolution* previous, const TuningConfig& tcfg,
    const PlannerConfig& pcfg, bool dt_enabled) {
  const int H = pcfg.horizon;
  const int N = static_cast<int>(obstacle_preds.size());
  PlanStepResult out;
  out.priorities.assign(N, kInfPriority);
  out.margins = constant_margins(tcfg.d1 + tcfg.d2, H, std::max(N, 1));

  if (dt_enabled && previous != nullptr && N > 0) {
    std::vector<OrientedBox> tail;
    for (const RobotState& s : previous->tail_states()) {
      tail.push_back(box_from_state(s.x, s.y, s.theta, pcfg.robot_dims.first,
                                    pcfg.robot_dims.second));
    }
    out.priorities = doppler_collision_check(tail, obstacle_preds, tcfg);
    bool any = false;
    for (double p : out.priorities) any = any || p != kInfPriority;
    if (any) out.margins = tune_margins(out.priorities, tcfg, H, N);
  }

  HorizonSolution warm;
  const HorizonSolution* warm_ptr = nullptr;
  if (previous != nullptr &&
      static_cast<int>(previous->actions.size()) == H) {
    warm.actions.assign(previous->actions.begin() + 1,
                        previous->actions.end());
    warm.actions.push_back(previous->actions.back());
    // Only the action sequence is carried between cycles. Re-seeding the
    // ADMM duals from the previous cycle traps the incumbent in the previous
    // compromise; fresh duals let the re-linearization explore.
    warm_ptr = &warm;
  }
  out.solution = solve_horizon(ego, waypoints, obstacle_preds, out.margins,
                               pcfg, warm_ptr);
  out.action = out.solution.actions.empty() ? ControlAction{}
                                            : out.solution.actions.front();
  return out;
}

}  // namespace dpnet
