#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tedge/random.hpp"

namespace tedge {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

double squared_distance(Point a, Point b) noexcept;

struct Area {
  double width = 0.0;
  double height = 0.0;

  double size() const noexcept { return width * height; }
  bool contains(Point p) const noexcept {
    return p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height;
  }
};

struct UserPosition {
  std::int64_t user_id = 0;
  Point position;
};

/// Network layout: terrestrial FAPs and aerial UAVs (together the hgNBs)
/// serving a population of UEs. Node ids are 1-based: FAPs first, then UAVs.
struct Topology {
  std::vector<Point> faps;
  std::vector<Point> uavs;
  std::vector<UserPosition> ues;
  double fap_range = 0.0;
  double uav_range = 0.0;
  Area area;

  int node_count() const noexcept { return static_cast<int>(faps.size() + uavs.size()); }
  Point node_position(int node_id) const;
  double node_range(int node_id) const;

  /// Throws if a point lies outside the area or a range is non-positive.
  void validate() const;
};

std::string topology_to_json(const Topology& topo);
Topology topology_from_json(const std::string& text);

/// Mandelbrot-Zipf popularity law over ranks 1..n.
struct ZipfModel {
  int n_contents = 0;
  double gamma = 0.0;
  double zeta = 0.0;
  std::vector<double> pmf;
};

std::vector<double> mzipf_pmf(int n_contents, double gamma, double zeta);
ZipfModel make_zipf(int n_contents, double gamma, double zeta);

/// Homogeneous PPP on the area: Poisson(intensity * |area|) points, uniform scatter.
std::vector<Point> sample_faps_ppp(double intensity, Area area, std::uint64_t seed);

/// Binomial point process: exactly `count` uniform points (a PPP conditioned on its count).
std::vector<Point> sample_uniform_points(int count, Area area, std::uint64_t seed);

struct GaussianComponent {
  double weight = 1.0;
  Point mean;
  double var_x = 0.0;
  double cov_xy = 0.0;
  double var_y = 0.0;
};

/// Draws `n_users` UE positions (ids 1..n_users) from the mixture, resampling
/// draws that fall outside the area.
std::vector<UserPosition> sample_ues_gmm(std::span<const GaussianComponent> components,
                                         int n_users, Area area, std::uint64_t seed);

struct KMeansResult {
  std::vector<Point> centroids;
  std::vector<int> assignment;
  /// Within-cluster sum of squares after each assignment step.
  std::vector<double> sse_history;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding; stops when no centroid moves more
/// than 1e-9 m or after `max_iters` iterations.
KMeansResult place_uavs_kmeans(std::span<const Point> positions, int n_uavs, int max_iters,
                               std::uint64_t seed);

struct ScenarioOptions {
  Area area{1000.0, 1000.0};
  /// FAPs per m^2; the default gives E[N_f] = 5 on the default area.
  double fap_intensity = 5.0e-6;
  /// When >= 0 the FAP count is fixed (uniform scatter) instead of Poisson.
  int fixed_fap_count = -1;
  int n_uavs = 1;
  int n_users = 600;
  double fap_range = 300.0;
  double uav_range = 1500.0;
  std::vector<GaussianComponent> ue_mixture;
  int kmeans_max_iters = 100;
};

/// Default three-hotspot UE mixture scaled to `area`.
std::vector<GaussianComponent> default_ue_mixture(Area area);

/// FAPs by PPP, UEs by Gaussian mixture, UAVs at k-means centroids of the UEs.
Topology generate_topology(const ScenarioOptions& options, std::uint64_t seed);

}  // namespace tedge
