#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dpnet/gss.hpp"
#include "dpnet/rng.hpp"

namespace dpnet {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kFeatureScaleFloor = 1e-6;
// Decay of the running L2 feature scales (per filter step).
inline constexpr double kFeatureScaleDecay = 0.95;
inline constexpr int kGainNetFormatVersion = 1;

/// Learned Kalman gain: one gated recurrent cell plus a linear head emitting
/// a 6 x obs_dim gain matrix. Weights are 64-bit floats throughout.
struct GainNet {
  int input_dim{0};
  int hidden_dim{0};
  int obs_dim{0};

  MatrixXd w_update_in, w_update_rec;
  MatrixXd w_reset_in, w_reset_rec;
  MatrixXd w_cand_in, w_cand_rec;
  VectorXd b_update, b_reset, b_cand;
  MatrixXd w_head;
  VectorXd b_head;

  GainNet() = default;
  GainNet(int input_dim_, int hidden_dim_, int obs_dim_)
      : input_dim(input_dim_), hidden_dim(hidden_dim_), obs_dim(obs_dim_) {
    w_update_in = MatrixXd::Zero(hidden_dim, input_dim);
    w_reset_in = MatrixXd::Zero(hidden_dim, input_dim);
    w_cand_in = MatrixXd::Zero(hidden_dim, input_dim);
    w_update_rec = MatrixXd::Zero(hidden_dim, hidden_dim);
    w_reset_rec = MatrixXd::Zero(hidden_dim, hidden_dim);
    w_cand_rec = MatrixXd::Zero(hidden_dim, hidden_dim);
    b_update = VectorXd::Zero(hidden_dim);
    b_reset = VectorXd::Zero(hidden_dim);
    b_cand = VectorXd::Zero(hidden_dim);
    w_head = MatrixXd::Zero(6 * obs_dim, hidden_dim);
    b_head = VectorXd::Zero(6 * obs_dim);
  }

  // Per-parameter traversal in a fixed, documented order (also the weights
  // file order): update/reset/candidate gates (input, recurrent, bias), then
  // the head matrix and bias.
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn("w_update_in", w_update_in);
    fn("w_update_rec", w_update_rec);
    fn("b_update", b_update);
    fn("w_reset_in", w_reset_in);
    fn("w_reset_rec", w_reset_rec);
    fn("b_reset", b_reset);
    fn("w_cand_in", w_cand_in);
    fn("w_cand_rec", w_cand_rec);
    fn("b_cand", b_cand);
    fn("w_head", w_head);
    fn("b_head", b_head);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<GainNet*>(this)->for_each(
        [&](const char* n, auto& m) { fn(n, std::as_const(m)); });
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const char*, const auto& m) { ok = ok && m.allFinite(); });
    return ok;
  }
};

/// Seeded initialization: matrices uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)),
/// biases zero.
inline GainNet init_gainnet(int obs_dim_, int hidden_dim,
                            std::uint64_t seed) {
  GainNet net(obs_dim_ + 6, hidden_dim, obs_dim_);
  auto rng = make_engine(mix64(seed, 0xA11CE));
  const auto fill = [&](MatrixXd& m) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = u(rng);
    }
  };
  fill(net.w_update_in);
  fill(net.w_update_rec);
  fill(net.w_reset_in);
  fill(net.w_reset_rec);
  fill(net.w_cand_in);
  fill(net.w_cand_rec);
  fill(net.w_head);
  return net;
}

/// Feature vector of the filter quantities: the innovation and the state
/// increment, each normalized by its running L2 scale (an exponential
/// average of past norms carried in the filter state) clamped below at 1e-6.
inline VectorXd gain_features(const TrackState& x_post_prev,
                              const TrackState& x_prior, const VectorXd& y_pred,
                              const VectorXd& y, double innov_scale = 1.0,
                              double incr_scale = 1.0) {
  const VectorXd innov = y - y_pred;
  const Vector6d incr = x_prior - x_post_prev;
  const double c1 = std::max(innov_scale, kFeatureScaleFloor);
  const double c2 = std::max(incr_scale, kFeatureScaleFloor);
  VectorXd f(innov.size() + 6);
  f.head(innov.size()) = innov / c1;
  f.tail(6) = incr / c2;
  return f;
}

struct GainForward {
  MatrixXd gain;    // 6 x obs_dim
  VectorXd hidden;  // updated hidden state
};

namespace detail {

inline VectorXd sigmoid(const VectorXd& x) {
  return ((-x.array()).exp() + 1.0).inverse().matrix();
}

// Full per-step record kept for backpropagation.
struct CellTape {
  VectorXd f, h_prev, z, r, g, h;
  VectorXd innov;
  Vector6d incr;
  double innov_norm, incr_norm;
  double innov_scale, incr_scale;  // running scales entering the step
  MatrixXd gain;
  TrackState prior, post;
  VectorXd y;
  TrackState truth;
};

inline void cell_forward(const GainNet& net, const VectorXd& f,
                         const VectorXd& h_prev, CellTape& t) {
  t.f = f;
  t.h_prev = h_prev;
  t.z = sigmoid(net.w_update_in * f + net.w_update_rec * h_prev +
                net.b_update);
  t.r = sigmoid(net.w_reset_in * f + net.w_reset_rec * h_prev + net.b_reset);
  t.g = (net.w_cand_in * f +
         net.w_cand_rec * (t.r.array() * h_prev.array()).matrix() +
         net.b_cand)
            .array()
            .tanh()
            .matrix();
  t.h = ((1.0 - t.z.array()) * h_prev.array() + t.z.array() * t.g.array())
            .matrix();
  const VectorXd k = net.w_head * t.h + net.b_head;
  t.gain = MatrixXd(6, net.obs_dim);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < net.obs_dim; ++j) t.gain(i, j) = k(i * net.obs_dim + j);
  }
}

}  // namespace detail

/// One recurrent step: gain matrix and updated hidden state.
inline GainForward gain_forward(const GainNet& net, const VectorXd& f,
                                const VectorXd& hidden) {
  if (f.size() != net.input_dim || hidden.size() != net.hidden_dim) {
    throw std::invalid_argument("gain_forward: dimension mismatch");
  }
  detail::CellTape t;
  detail::cell_forward(net, f, hidden, t);
  return {t.gain, t.h};
}

struct Gradients {
  GainNet g;  // same shapes as the net, zero-initialized
  explicit Gradients(const GainNet& net)
      : g(net.input_dim, net.hidden_dim, net.obs_dim) {}
  double global_norm() const {
    double ss = 0.0;
    g.for_each([&](const char*, const auto& m) { ss += m.squaredNorm(); });
    return std::sqrt(ss);
  }
};

/// One observed trajectory: per-step observation vectors and ground-truth
/// states (equal lengths).
struct Trajectory {
  std::vector<VectorXd> observations;
  std::vector<TrackState> truths;
};

struct FilterCarry {
  TrackState post;     // x_{t-1}
  TrackState prior;    // x_{t|t-1}
  VectorXd pred_obs;   // y_{t|t-1}
  VectorXd hidden;
  double innov_scale{1.0};
  double incr_scale{1.0};
};

inline FilterCarry cold_start_carry(const GainNet& net, const VectorXd& y0,
                                    ObservationKind kind,
                                    const Matrix6d& trans) {
  const Eigen::MatrixXd u = observation_matrix(kind);
  FilterCarry c;
  c.post = u.transpose() * y0;
  c.prior = trans * c.post;
  c.pred_obs = u * c.prior;
  c.hidden = VectorXd::Zero(net.hidden_dim);
  return c;
}

/// Runs the learned-gain filter over one window of a trajectory, accumulating
/// the squared posterior error on position and velocity components. When
/// grads is non-null, exact BPTT gradients are added into it. loss_weight
/// pre-multiplies the per-step loss (callers use 1/steps for a mean).
/// Returns the accumulated (weighted) loss; carry is advanced to window end.
inline double run_gain_window(const GainNet& net,
                              const std::vector<VectorXd>& ys,
                              const std::vector<TrackState>& truths,
                              ObservationKind kind, const Matrix6d& trans,
                              FilterCarry& carry, double loss_weight,
                              Gradients* grads) {
  const int m = obs_dim(kind);
  const Eigen::MatrixXd u_mat = observation_matrix(kind);
  const int steps = static_cast<int>(ys.size());
  if (steps == 0) return 0.0;

  std::vector<detail::CellTape> tape(steps);
  double loss = 0.0;
  const double w = loss_weight / (4.0);  // mean over the 4 supervised rows

  for (int t = 0; t < steps; ++t) {
    detail::CellTape& tp = tape[t];
    tp.y = ys[t];
    tp.truth = truths[t];
    tp.prior = carry.prior;
    tp.innov = ys[t] - carry.pred_obs;
    tp.incr = carry.prior - carry.post;
    tp.innov_norm = tp.innov.norm();
    tp.incr_norm = tp.incr.norm();
    tp.innov_scale = carry.innov_scale;
    tp.incr_scale = carry.incr_scale;
    const double c1 = std::max(tp.innov_scale, kFeatureScaleFloor);
    const double c2 = std::max(tp.incr_scale, kFeatureScaleFloor);
    VectorXd f(m + 6);
    f.head(m) = tp.innov / c1;
    f.tail(6) = tp.incr / c2;
    detail::cell_forward(net, f, carry.hidden, tp);
    tp.post = carry.prior + tp.gain * tp.innov;
    // supervised rows: position and velocity of both axes
    static constexpr int supervised[4] = {0, 1, 3, 4};
    for (int idx : supervised) {
      const double e = tp.post(idx) - truths[t](idx);
      loss += w * e * e;
    }
    carry.post = tp.post;
    carry.prior = trans * tp.post;
    carry.pred_obs = u_mat * carry.prior;
    carry.hidden = tp.h;
    carry.innov_scale = kFeatureScaleDecay * carry.innov_scale +
                        (1.0 - kFeatureScaleDecay) * tp.innov_norm;
    carry.incr_scale = kFeatureScaleDecay * carry.incr_scale +
                       (1.0 - kFeatureScaleDecay) * tp.incr_norm;
  }
  if (!grads) return loss;

  GainNet& gd = grads->g;
  VectorXd hbar = VectorXd::Zero(net.hidden_dim);
  Vector6d pbar = Vector6d::Zero();
  static constexpr int supervised[4] = {0, 1, 3, 4};
  for (int t = steps - 1; t >= 0; --t) {
    const detail::CellTape& tp = tape[t];
    for (int idx : supervised) {
      pbar(idx) += 2.0 * w * (tp.post(idx) - tp.truth(idx));
    }
    // post = prior + gain * innov
    Vector6d abar = pbar;
    const MatrixXd kbar = pbar * tp.innov.transpose();
    VectorXd innovbar = tp.gain.transpose() * pbar;
    // head
    VectorXd kvec_bar(6 * m);
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < m; ++j) kvec_bar(i * m + j) = kbar(i, j);
    }
    gd.w_head += kvec_bar * tp.h.transpose();
    gd.b_head += kvec_bar;
    hbar += net.w_head.transpose() * kvec_bar;
    // cell: h = (1-z) h_prev + z g
    const VectorXd zbar =
        (hbar.array() * (tp.g.array() - tp.h_prev.array())).matrix();
    const VectorXd gbar = (hbar.array() * tp.z.array()).matrix();
    VectorXd hprev_bar = (hbar.array() * (1.0 - tp.z.array())).matrix();
    const VectorXd gpre = (gbar.array() * (1.0 - tp.g.array().square())).matrix();
    gd.w_cand_in += gpre * tp.f.transpose();
    gd.w_cand_rec +=
        gpre * (tp.r.array() * tp.h_prev.array()).matrix().transpose();
    gd.b_cand += gpre;
    VectorXd fbar = net.w_cand_in.transpose() * gpre;
    const VectorXd rhbar = net.w_cand_rec.transpose() * gpre;
    const VectorXd rbar = (rhbar.array() * tp.h_prev.array()).matrix();
    hprev_bar += (rhbar.array() * tp.r.array()).matrix();
    const VectorXd rpre =
        (rbar.array() * tp.r.array() * (1.0 - tp.r.array())).matrix();
    gd.w_reset_in += rpre * tp.f.transpose();
    gd.w_reset_rec += rpre * tp.h_prev.transpose();
    gd.b_reset += rpre;
    fbar += net.w_reset_in.transpose() * rpre;
    hprev_bar += net.w_reset_rec.transpose() * rpre;
    const VectorXd zpre =
        (zbar.array() * tp.z.array() * (1.0 - tp.z.array())).matrix();
    gd.w_update_in += zpre * tp.f.transpose();
    gd.w_update_rec += zpre * tp.h_prev.transpose();
    gd.b_update += zpre;
    fbar += net.w_update_in.transpose() * zpre;
    hprev_bar += net.w_update_rec.transpose() * zpre;
    // features
    innovbar += detail::normalized_backward(tp.innov, tp.innov_norm,
                                            fbar.head(m));
    const Vector6d incrbar =
        detail::normalized_backward(tp.incr, tp.incr_norm, fbar.tail(6));
    // innov = y - U a; incr = a - p_prev; a = T p_prev
    abar -= u_mat.transpose() * innovbar;
    abar += incrbar;
    pbar = trans.transpose() * abar - incrbar;
    hbar = hprev_bar;
  }
  return loss;
}

struct BpttResult {
  Gradients grads;
  double loss{0.0};
};

/// Exact gradients of the mean posterior-error loss over one trajectory via
/// backpropagation through time (single window; trajectory length must not
/// exceed the intended TBPTT window). loss_scale multiplies the loss.
inline BpttResult bptt(const GainNet& net, const Trajectory& traj,
                       ObservationKind kind, double dt,
                       double loss_scale = 1.0) {
  BpttResult out{Gradients(net), 0.0};
  const int total = static_cast<int>(traj.observations.size());
  if (total <= 1) return out;
  const Matrix6d trans = transition_matrix(dt);
  FilterCarry carry =
      cold_start_carry(net, traj.observations[0], kind, trans);
  const std::vector<VectorXd> ys(traj.observations.begin() + 1,
                                 traj.observations.end());
  const std::vector<TrackState> truths(traj.truths.begin() + 1,
                                       traj.truths.end());
  out.loss = run_gain_window(net, ys, truths, kind, trans, carry,
                             loss_scale / ys.size(), &out.grads);
  return out;
}

struct TrainConfig {
  int epochs{2000};
  double learning_rate{3e-3};
  int tbptt_window{20};
  int batch_size{8};
  std::uint64_t seed{0};
  double grad_clip{10.0};
};

struct TrainResult {
  GainNet net;
  std::vector<double> loss_curve;
  bool diverged{false};
};

namespace detail {

struct AdamState {
  GainNet m, v;
  long step{0};
  explicit AdamState(const GainNet& net)
      : m(net.input_dim, net.hidden_dim, net.obs_dim),
        v(net.input_dim, net.hidden_dim, net.obs_dim) {}
};

inline void adam_step(GainNet& net, const Gradients& grads, AdamState& st,
                      double lr, double clip) {
  double scale = 1.0;
  const double norm = grads.global_norm();
  if (clip > 0.0 && norm > clip) scale = clip / norm;
  ++st.step;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  // Walk all parameter blocks in lockstep.
  std::vector<Eigen::Map<Eigen::ArrayXd>> ws, gs, ms, vs;
  const auto collect = [](GainNet& n, std::vector<Eigen::Map<Eigen::ArrayXd>>& out) {
    n.for_each([&](const char*, auto& mat) {
      out.emplace_back(mat.data(), mat.size());
    });
  };
  GainNet& gnet = const_cast<Gradients&>(grads).g;
  collect(net, ws);
  collect(gnet, gs);
  collect(st.m, ms);
  collect(st.v, vs);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    const Eigen::ArrayXd g = gs[i] * scale;
    ms[i] = b1 * ms[i] + (1.0 - b1) * g;
    vs[i] = b2 * vs[i] + (1.0 - b2) * g.square();
    ws[i] -= lr * (ms[i] / bc1) / ((vs[i] / bc2).sqrt() + eps);
  }
}

}  // namespace detail

/// First-order adaptive training of the gain network on observed
/// trajectories, with truncated BPTT and gradient-norm clipping.
/// Deterministic given cfg.seed.
inline TrainResult train_gainnet(GainNet net,
                                 const std::vector<Trajectory>& dataset,
                                 ObservationKind kind, double dt,
                                 const TrainConfig& cfg) {
  if (dataset.empty()) {
    throw std::invalid_argument("train_gainnet: empty dataset");
  }
  TrainResult out;
  out.loss_curve.reserve(cfg.epochs);
  detail::AdamState adam(net);
  auto rng = make_engine(mix64(cfg.seed, 0x7124));
  std::vector<int> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  const Matrix6d trans = transition_matrix(dt);
  GainNet last_finite = net;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int epoch_count = 0;
    for (std::size_t bstart = 0; bstart < order.size();
         bstart += cfg.batch_size) {
      const std::size_t bend =
          std::min(order.size(), bstart + cfg.batch_size);
      Gradients grads(net);
      double batch_loss = 0.0;
      int batch_count = 0;
      for (std::size_t bi = bstart; bi < bend; ++bi) {
        const Trajectory& traj = dataset[order[bi]];
        const int total = static_cast<int>(traj.observations.size());
        if (total <= 1) continue;
        FilterCarry carry =
            cold_start_carry(net, traj.observations[0], kind, trans);
        const int updates = total - 1;
        double tl = 0.0;
        for (int start = 1; start < total; start += cfg.tbptt_window) {
          const int stop = std::min(total, start + cfg.tbptt_window);
          const std::vector<VectorXd> ys(traj.observations.begin() + start,
                                         traj.observations.begin() + stop);
          const std::vector<TrackState> truths(traj.truths.begin() + start,
                                               traj.truths.begin() + stop);
          tl += run_gain_window(net, ys, truths, kind, trans, carry,
                                1.0 / updates, &grads);
        }
        batch_loss += tl;
        ++batch_count;
      }
      if (batch_count == 0) continue;
      // mean over trajectories in the batch
      grads.g.for_each([&](const char*, auto& m) { m /= batch_count; });
      detail::adam_step(net, grads, adam, cfg.learning_rate, cfg.grad_clip);
      epoch_loss += batch_loss;
      epoch_count += batch_count;
      if (!net.all_finite()) {
        out.net = last_finite;
        out.diverged = true;
        return out;
      }
      last_finite = net;
    }
    const double mean_loss =
        epoch_count > 0 ? epoch_loss / epoch_count
                        : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(mean_loss)) {
      out.net = last_finite;
      out.diverged = true;
      return out;
    }
    out.loss_curve.push_back(mean_loss);
  }
  out.net = std::move(net);
  return out;
}

// ---------------------------------------------------------------------------
// Weights file: versioned text container, documented field order.
// ---------------------------------------------------------------------------

inline void save_weights(const GainNet& net, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_weights: cannot open " + path);
  os << "dpnet-gainnet " << kGainNetFormatVersion << "\n";
  os << net.input_dim << ' ' << net.hidden_dim << ' ' << net.obs_dim << "\n";
  os << std::setprecision(17);
  net.for_each([&](const char* name, const auto& m) {
    os << name << ' ' << m.size();
    const double* data = m.data();
    // Matrices are column-major in memory; emit row-major as documented.
    if (m.cols() == 1) {
      for (Eigen::Index i = 0; i < m.size(); ++i) os << ' ' << data[i];
    } else {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) os << ' ' << m(r, c);
      }
    }
    os << "\n";
  });
  if (!os) throw std::runtime_error("save_weights: write failed: " + path);
}

inline GainNet load_weights(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_weights: cannot open " + path);
  std::string magic;
  int version = -1;
  is >> magic >> version;
  if (magic != "dpnet-gainnet" || version != kGainNetFormatVersion) {
    throw std::runtime_error(
        "load_weights: unsupported format (file version " +
        std::to_string(version) + ", supported version " +
        std::to_string(kGainNetFormatVersion) + ")");
  }
  int input_dim = 0, hidden_dim = 0, odim = 0;
  if (!(is >> input_dim >> hidden_dim >> odim) || input_dim != odim + 6 ||
      hidden_dim <= 0 || (odim != 2 && odim != 4)) {
    throw std::runtime_error("load_weights: bad dimension header");
  }
  GainNet net(input_dim, hidden_dim, odim);
  bool ok = true;
  net.for_each([&](const char* name, auto& m) {
    std::string n;
    long count = -1;
    if (!(is >> n >> count) || n != name || count != m.size()) {
      ok = false;
      return;
    }
    if (m.cols() == 1) {
      for (Eigen::Index i = 0; i < m.size(); ++i) ok = ok && bool(is >> m(i));
    } else {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) ok = ok && bool(is >> m(r, c));
      }
    }
  });
  if (!ok) throw std::runtime_error("load_weights: truncated or malformed file");
  return net;
}

}  // namespace dpnet
