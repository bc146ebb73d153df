#include "tedge/topology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace tedge {

double squared_distance(Point a, Point b) noexcept {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

Point Topology::node_position(int node_id) const {
  const int n_faps = static_cast<int>(faps.size());
  if (node_id >= 1 && node_id <= n_faps) return faps[node_id - 1];
  if (node_id > n_faps && node_id <= node_count()) return uavs[node_id - n_faps - 1];
  throw std::out_of_range("no hgNB with id " + std::to_string(node_id));
}

double Topology::node_range(int node_id) const {
  const int n_faps = static_cast<int>(faps.size());
  if (node_id >= 1 && node_id <= n_faps) return fap_range;
  if (node_id > n_faps && node_id <= node_count()) return uav_range;
  throw std::out_of_range("no hgNB with id " + std::to_string(node_id));
}

void Topology::validate() const {
  if (!(fap_range > 0.0) || !(uav_range > 0.0)) {
    throw std::invalid_argument("topology: transmission ranges must be positive");
  }
  auto check = [&](Point p, const char* what) {
    if (!area.contains(p)) {
      throw std::invalid_argument(std::string("topology: ") + what + " at (" +
                                  std::to_string(p.x) + ", " + std::to_string(p.y) +
                                  ") lies outside the area");
    }
  };
  for (const auto& p : faps) check(p, "FAP");
  for (const auto& p : uavs) check(p, "UAV");
  for (const auto& u : ues) check(u.position, "UE");
}

std::string topology_to_json(const Topology& topo) {
  nlohmann::ordered_json j;
  auto points = [](const std::vector<Point>& ps) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : ps) arr.push_back({p.x, p.y});
    return arr;
  };
  j["faps"] = points(topo.faps);
  j["uavs"] = points(topo.uavs);
  nlohmann::json ues = nlohmann::json::array();
  for (const auto& u : topo.ues) ues.push_back({u.user_id, u.position.x, u.position.y});
  j["ues"] = std::move(ues);
  j["tx_range"] = {{"fap", topo.fap_range}, {"uav", topo.uav_range}};
  j["area"] = {topo.area.width, topo.area.height};
  return j.dump(1);
}

Topology topology_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Topology topo;
  for (const auto& p : j.at("faps")) topo.faps.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  for (const auto& p : j.at("uavs")) topo.uavs.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  for (const auto& u : j.at("ues")) {
    topo.ues.push_back({u.at(0).get<std::int64_t>(), {u.at(1).get<double>(), u.at(2).get<double>()}});
  }
  const auto& range = j.at("tx_range");
  if (range.is_number()) {
    topo.fap_range = topo.uav_range = range.get<double>();
  } else {
    topo.fap_range = range.at("fap").get<double>();
    topo.uav_range = range.at("uav").get<double>();
  }
  topo.area = {j.at("area").at(0).get<double>(), j.at("area").at(1).get<double>()};
  topo.validate();
  return topo;
}

std::vector<double> mzipf_pmf(int n_contents, double gamma, double zeta) {
  if (n_contents < 1) throw std::invalid_argument("mzipf_pmf: n_contents must be >= 1");
  if (gamma < 0.0 || zeta < 0.0) throw std::invalid_argument("mzipf_pmf: gamma and zeta must be >= 0");
  std::vector<double> pmf(static_cast<std::size_t>(n_contents));
  for (int l = 1; l <= n_contents; ++l) pmf[l - 1] = std::pow(l + zeta, -gamma);
  // Summing smallest terms first keeps the normalizer accurate for long tails.
  double total = 0.0;
  for (auto it = pmf.rbegin(); it != pmf.rend(); ++it) total += *it;
  for (auto& p : pmf) p /= total;
  return pmf;
}

ZipfModel make_zipf(int n_contents, double gamma, double zeta) {
  return {n_contents, gamma, zeta, mzipf_pmf(n_contents, gamma, zeta)};
}

std::vector<Point> sample_uniform_points(int count, Area area, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const double x = rng.uniform(0.0, area.width);
    const double y = rng.uniform(0.0, area.height);
    pts.push_back({x, y});
  }
  return pts;
}

std::vector<Point> sample_faps_ppp(double intensity, Area area, std::uint64_t seed) {
  if (intensity < 0.0) throw std::invalid_argument("sample_faps_ppp: intensity must be >= 0");
  Rng rng(seed);
  const long long count = rng.poisson(intensity * area.size());
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    const double x = rng.uniform(0.0, area.width);
    const double y = rng.uniform(0.0, area.height);
    pts.push_back({x, y});
  }
  return pts;
}

namespace {

struct Factor2 {
  double l11, l21, l22;
};

// Cholesky-style factor of a positive semi-definite 2x2 covariance.
Factor2 factor_covariance(const GaussianComponent& c) {
  constexpr double tol = 1e-12;
  const double det = c.var_x * c.var_y - c.cov_xy * c.cov_xy;
  if (c.var_x < 0.0 || c.var_y < 0.0 || det < -tol * std::max(1.0, c.var_x * c.var_y)) {
    throw std::invalid_argument("sample_ues_gmm: covariance is not positive semi-definite");
  }
  Factor2 f{};
  f.l11 = std::sqrt(c.var_x);
  f.l21 = f.l11 > 0.0 ? c.cov_xy / f.l11 : 0.0;
  if (f.l11 == 0.0 && std::abs(c.cov_xy) > tol) {
    throw std::invalid_argument("sample_ues_gmm: covariance is not positive semi-definite");
  }
  f.l22 = std::sqrt(std::max(c.var_y - f.l21 * f.l21, 0.0));
  return f;
}

}  // namespace

std::vector<UserPosition> sample_ues_gmm(std::span<const GaussianComponent> components, int n_users,
                                         Area area, std::uint64_t seed) {
  if (n_users < 0) throw std::invalid_argument("sample_ues_gmm: n_users must be >= 0");
  if (components.empty()) throw std::invalid_argument("sample_ues_gmm: empty mixture");
  double weight_sum = 0.0;
  std::vector<Factor2> factors;
  for (const auto& c : components) {
    if (c.weight < 0.0) throw std::invalid_argument("sample_ues_gmm: negative weight");
    weight_sum += c.weight;
    factors.push_back(factor_covariance(c));
  }
  if (std::abs(weight_sum - 1.0) > 1e-9) {
    throw std::invalid_argument("sample_ues_gmm: weights must sum to 1");
  }

  constexpr int max_attempts = 100000;
  Rng rng(seed);
  std::vector<UserPosition> users;
  users.reserve(static_cast<std::size_t>(n_users));
  for (int i = 0; i < n_users; ++i) {
    int attempts = 0;
    for (;;) {
      double u = rng.uniform();
      std::size_t k = 0;
      while (k + 1 < components.size() && u >= components[k].weight) {
        u -= components[k].weight;
        ++k;
      }
      const double z1 = rng.normal();
      const double z2 = rng.normal();
      const auto& f = factors[k];
      const Point p{components[k].mean.x + f.l11 * z1,
                    components[k].mean.y + f.l21 * z1 + f.l22 * z2};
      if (area.contains(p)) {
        users.push_back({i + 1, p});
        break;
      }
      if (++attempts >= max_attempts) {
        throw std::invalid_argument("sample_ues_gmm: mixture places no mass inside the area");
      }
    }
  }
  return users;
}

namespace {

double assign_points(std::span<const Point> pts, const std::vector<Point>& centroids,
                     std::vector<int>& assignment) {
  double sse = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double d = squared_distance(pts[i], centroids[c]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    assignment[i] = best;
    sse += best_d;
  }
  return sse;
}

}  // namespace

KMeansResult place_uavs_kmeans(std::span<const Point> positions, int n_uavs, int max_iters,
                               std::uint64_t seed) {
  if (n_uavs < 1) throw std::invalid_argument("place_uavs_kmeans: n_uavs must be >= 1");
  if (positions.empty()) throw std::invalid_argument("place_uavs_kmeans: no UE positions");
  {
    std::vector<Point> distinct(positions.begin(), positions.end());
    std::sort(distinct.begin(), distinct.end(),
              [](Point a, Point b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (static_cast<std::size_t>(n_uavs) > distinct.size()) {
      throw std::invalid_argument("place_uavs_kmeans: n_uavs (" + std::to_string(n_uavs) +
                                  ") exceeds the number of distinct positions (" +
                                  std::to_string(distinct.size()) + ")");
    }
  }

  Rng rng(seed);
  const std::size_t n = positions.size();

  // k-means++ seeding: next centre drawn with probability proportional to D^2.
  std::vector<Point> centroids;
  centroids.push_back(positions[rng.below(n)]);
  std::vector<double> d2(n);
  while (centroids.size() < static_cast<std::size_t>(n_uavs)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, squared_distance(positions[i], c));
      d2[i] = best;
      total += best;
    }
    double target = rng.uniform() * total;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      pick = i;
      if (target < d2[i]) break;
      target -= d2[i];
    }
    centroids.push_back(positions[pick]);
  }

  KMeansResult result;
  result.assignment.assign(n, 0);
  result.sse_history.push_back(assign_points(positions, centroids, result.assignment));
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<Point> sums(centroids.size());
    std::vector<std::size_t> counts(centroids.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = result.assignment[i];
      sums[c].x += positions[i].x;
      sums[c].y += positions[i].y;
      ++counts[c];
    }
    double max_shift = 0.0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centre
      const Point next{sums[c].x / static_cast<double>(counts[c]),
                       sums[c].y / static_cast<double>(counts[c])};
      max_shift = std::max(max_shift, std::sqrt(squared_distance(next, centroids[c])));
      centroids[c] = next;
    }
    result.iterations = iter + 1;
    result.sse_history.push_back(assign_points(positions, centroids, result.assignment));
    if (max_shift < 1e-9) break;
  }
  result.centroids = std::move(centroids);
  return result;
}

std::vector<GaussianComponent> default_ue_mixture(Area area) {
  const double w = area.width;
  const double h = area.height;
  const double s = 0.08 * std::min(w, h);
  return {
      {0.4, {0.25 * w, 0.30 * h}, s * s, 0.0, s * s},
      {0.35, {0.70 * w, 0.65 * h}, s * s, 0.3 * s * s, s * s},
      {0.25, {0.35 * w, 0.80 * h}, 1.5 * s * s, 0.0, 0.8 * s * s},
  };
}

Topology generate_topology(const ScenarioOptions& options, std::uint64_t seed) {
  Topology topo;
  topo.area = options.area;
  topo.fap_range = options.fap_range;
  topo.uav_range = options.uav_range;
  // Independent streams per layer so changing one count does not reshuffle the others.
  topo.faps = options.fixed_fap_count >= 0
                  ? sample_uniform_points(options.fixed_fap_count, options.area, seed * 4 + 1)
                  : sample_faps_ppp(options.fap_intensity, options.area, seed * 4 + 1);
  const auto mixture =
      options.ue_mixture.empty() ? default_ue_mixture(options.area) : options.ue_mixture;
  topo.ues = sample_ues_gmm(mixture, options.n_users, options.area, seed * 4 + 2);
  if (options.n_uavs > 0 && !topo.ues.empty()) {
    std::vector<Point> pts;
    pts.reserve(topo.ues.size());
    for (const auto& u : topo.ues) pts.push_back(u.position);
    topo.uavs = place_uavs_kmeans(pts, options.n_uavs, options.kmeans_max_iters, seed * 4 + 3).centroids;
  }
  topo.validate();
  return topo;
}

}  // namespace tedge
