#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpnet/geom2d.hpp"
#include "dpnet/rng.hpp"

namespace dpnet {

using Vec3 = Eigen::Vector3d;

// Obstacles are extruded to this height; elevation beams hit the side walls.
inline constexpr double kObstacleHeight = 2.0;

/// One Doppler LiDAR return. doppler_speed is signed: positive means the
/// range along the beam is closing.
struct DopplerPoint {
  Vec3 coord{0, 0, 0};
  double doppler_speed{0.0};
  double elevation{0.0};
  double azimuth{0.0};
};

struct DopplerScan {
  double time{0.0};
  Vec3 sensor_pos{0, 0, 0};
  std::vector<DopplerPoint> points;
  // Ground-truth association (obstacle id per point), for evaluation only.
  std::vector<int> truth_assoc;
};

struct SensorConfig {
  int beam_count_azimuth{360};
  std::vector<double> elevation_angles{0.0};
  double max_range{60.0};
  double noise_sigma{0.1};        // m/s, Doppler speed noise
  double range_noise_sigma{0.02}; // m, along-beam range noise
  double mount_height{1.0};
  std::uint64_t seed{0};
};

struct WorldObstacle {
  OrientedBox box;
  Vec2 velocity{0.0, 0.0};  // planar, pure translation
  int id{0};
};

namespace detail {

// Planar ray vs. vertical wall (box edge extruded over [0, height]).
// Returns the ray parameter t (range along the unit direction) or nullopt.
inline std::optional<double> ray_wall_hit(const Vec3& origin, const Vec3& dir,
                                          const Vec2& a, const Vec2& b,
                                          double height) {
  const double ex = b.x() - a.x();
  const double ey = b.y() - a.y();
  const double det = dir.x() * (-ey) - dir.y() * (-ex);
  if (std::abs(det) < 1e-15) return std::nullopt;
  const double rx = a.x() - origin.x();
  const double ry = a.y() - origin.y();
  const double t = (rx * (-ey) - ry * (-ex)) / det;
  const double u = (dir.x() * ry - dir.y() * rx) / det;
  if (t <= 1e-9 || u < 0.0 || u > 1.0) return std::nullopt;
  const double z = origin.z() + t * dir.z();
  if (z < 0.0 || z > height) return std::nullopt;
  return t;
}

}  // namespace detail

/// Casts one frame of Doppler LiDAR beams against extruded box obstacles.
/// The nearest unoccluded wall hit per beam becomes a point; range and
/// Doppler speed carry seeded Gaussian noise. Deterministic per (seed, time).
inline DopplerScan scan(const std::vector<WorldObstacle>& world,
                        const Vec3& sensor_pos, const SensorConfig& cfg,
                        double time = 0.0,
                        const Vec3& sensor_velocity = Vec3::Zero()) {
  DopplerScan out;
  out.time = time;
  out.sensor_pos = sensor_pos;
  auto rng = make_engine(mix64_tag(cfg.seed, time));
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (double el : cfg.elevation_angles) {
    const double ce = std::cos(el), se = std::sin(el);
    for (int k = 0; k < cfg.beam_count_azimuth; ++k) {
      const double az = 2.0 * M_PI * k / cfg.beam_count_azimuth;
      const Vec3 dir(ce * std::cos(az), ce * std::sin(az), se);
      double best_t = cfg.max_range;
      const WorldObstacle* best = nullptr;
      for (const WorldObstacle& ob : world) {
        const auto corners = ob.box.corners();
        for (int e = 0; e < 4; ++e) {
          const auto t = detail::ray_wall_hit(sensor_pos, dir, corners[e],
                                              corners[(e + 1) % 4],
                                              kObstacleHeight);
          if (t && *t < best_t) {
            best_t = *t;
            best = &ob;
          }
        }
      }
      if (!best) continue;
      const double range =
          best_t + (cfg.range_noise_sigma > 0.0
                        ? cfg.range_noise_sigma * gauss(rng)
                        : 0.0);
      const Vec3 v_rel(best->velocity.x() - sensor_velocity.x(),
                       best->velocity.y() - sensor_velocity.y(),
                       -sensor_velocity.z());
      double speed = -v_rel.dot(dir);  // positive = closing range
      if (cfg.noise_sigma > 0.0) speed += cfg.noise_sigma * gauss(rng);
      DopplerPoint p;
      p.coord = sensor_pos + range * dir;
      p.doppler_speed = speed;
      p.elevation = el;
      p.azimuth = az;
      out.points.push_back(p);
      out.truth_assoc.push_back(best->id);
    }
  }
  return out;
}

/// Planar projection of the radial velocity vector: the signed Doppler speed
/// scaled by cos(elevation), directed from the hit point toward the sensor.
inline Vec2 project_doppler(const DopplerPoint& p, const Vec3& sensor_pos) {
  const Vec2 planar(sensor_pos.x() - p.coord.x(),
                    sensor_pos.y() - p.coord.y());
  const double n = planar.norm();
  if (n <= 1e-9) {
    throw std::domain_error(
        "project_doppler: point directly above/below sensor");
  }
  return p.doppler_speed * std::cos(p.elevation) * (planar / n);
}

/// Assigns each point to every box whose planar footprint contains it;
/// unassigned points are dropped.
inline std::map<int, std::vector<DopplerPoint>> group_points(
    const DopplerScan& s,
    const std::vector<std::pair<int, OrientedBox>>& boxes) {
  std::map<int, std::vector<DopplerPoint>> groups;
  for (const DopplerPoint& p : s.points) {
    const Vec2 xy(p.coord.x(), p.coord.y());
    for (const auto& [id, box] : boxes) {
      if (contains(box, xy)) groups[id].push_back(p);
    }
  }
  return groups;
}

enum class FusionMode { kLeastSquares, kLiteral };

struct FusedVelocity {
  Vec2 velocity{0.0, 0.0};
  double residual_rms{0.0};
  bool rank_deficient{false};
};

/// Fuses per-point radial speeds of one rigid group into a planar velocity.
///
/// Least-squares mode solves { r_i . v = m_i } where r_i is the planar unit
/// beam direction and m_i the exact planar radial speed (the projected speed
/// corrected by 1/cos^2(elevation), receding positive). Literal mode averages
/// the projected vectors rescaled against a prior direction.
inline FusedVelocity fuse_velocity(
    const std::vector<DopplerPoint>& group, const Vec3& sensor_pos,
    const std::optional<Vec2>& prior_direction = std::nullopt,
    FusionMode mode = FusionMode::kLeastSquares) {
  if (group.empty()) {
    throw std::invalid_argument("fuse_velocity: empty group");
  }
  struct Ray {
    Vec2 dir;   // planar unit, sensor -> point
    double m;   // planar radial speed along dir (receding positive)
  };
  std::vector<Ray> rays;
  rays.reserve(group.size());
  for (const DopplerPoint& p : group) {
    const Vec2 planar(p.coord.x() - sensor_pos.x(),
                      p.coord.y() - sensor_pos.y());
    const double n = planar.norm();
    const double c = std::cos(p.elevation);
    if (n <= 1e-9 || c <= 1e-6) continue;
    rays.push_back({planar / n, -p.doppler_speed / c});
  }
  if (rays.empty()) {
    throw std::invalid_argument("fuse_velocity: no usable points");
  }

  FusedVelocity out;
  if (mode == FusionMode::kLiteral) {
    if (!prior_direction) {
      throw std::invalid_argument(
          "fuse_velocity: literal mode needs prior_direction");
    }
    const Vec2 d = prior_direction->normalized();
    Vec2 acc(0.0, 0.0);
    for (const DopplerPoint& p : group) {
      const Vec2 proj = project_doppler(p, sensor_pos);
      const double n = proj.norm();
      if (n <= 1e-12) continue;
      double ci = d.dot(proj / n);
      const double sign = ci >= 0.0 ? 1.0 : -1.0;
      ci = sign * std::max(std::abs(ci), 1e-3);
      acc += proj / ci;
    }
    out.velocity = acc / static_cast<double>(group.size());
  } else {
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    Vec2 b(0.0, 0.0);
    for (const Ray& r : rays) {
      a += r.dir * r.dir.transpose();
      b += r.m * r.dir;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(a);
    const double lo = eig.eigenvalues()(0);
    const double hi = eig.eigenvalues()(1);
    if (lo <= hi * 1e-8) {
      // All beams (nearly) parallel: report the 1D radial solution.
      out.rank_deficient = true;
      const Vec2 e = eig.eigenvectors().col(1);
      out.velocity = (e.dot(b) / hi) * e;
    } else {
      out.velocity = eig.eigenvectors() *
                     (eig.eigenvalues().cwiseInverse().asDiagonal() *
                      (eig.eigenvectors().transpose() * b));
    }
  }
  double ss = 0.0;
  for (const Ray& r : rays) {
    const double res = r.dir.dot(out.velocity) - r.m;
    ss += res * res;
  }
  out.residual_rms = std::sqrt(ss / rays.size());
  return out;
}

// ---------------------------------------------------------------------------
// Scan-trace replay files: one frame per line,
//   time sx sy sz n {x y z doppler elevation azimuth obstacle_id} * n
// ---------------------------------------------------------------------------

inline void write_scan_trace(std::ostream& os, const DopplerScan& s) {
  os.precision(17);
  os << s.time << ' ' << s.sensor_pos.x() << ' ' << s.sensor_pos.y() << ' '
     << s.sensor_pos.z() << ' ' << s.points.size();
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const DopplerPoint& p = s.points[i];
    const int id = i < s.truth_assoc.size() ? s.truth_assoc[i] : -1;
    os << ' ' << p.coord.x() << ' ' << p.coord.y() << ' ' << p.coord.z()
       << ' ' << p.doppler_speed << ' ' << p.elevation << ' ' << p.azimuth
       << ' ' << id;
  }
  os << '\n';
}

inline std::vector<DopplerScan> read_scan_trace(std::istream& is) {
  std::vector<DopplerScan> frames;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    DopplerScan s;
    std::size_t n = 0;
    if (!(ss >> s.time >> s.sensor_pos.x() >> s.sensor_pos.y() >>
          s.sensor_pos.z() >> n)) {
      throw std::runtime_error("scan trace: malformed frame header");
    }
    s.points.resize(n);
    s.truth_assoc.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      DopplerPoint& p = s.points[i];
      if (!(ss >> p.coord.x() >> p.coord.y() >> p.coord.z() >>
            p.doppler_speed >> p.elevation >> p.azimuth >> s.truth_assoc[i])) {
        throw std::runtime_error("scan trace: malformed point record");
      }
    }
    frames.push_back(std::move(s));
  }
  return frames;
}

}  // namespace dpnet
