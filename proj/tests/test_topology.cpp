#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "tedge/topology.hpp"
#include "tedge/workload.hpp"

using namespace tedge;

TEST_CASE("mzipf pmf examples") {
  CHECK(mzipf_pmf(1, 1.7, 3.0) == std::vector<double>{1.0});
  for (double p : mzipf_pmf(4, 0.0, 0.0)) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
  const auto two = mzipf_pmf(2, 1.0, 0.0);
  CHECK(two[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(two[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS(mzipf_pmf(0, 1.0, 0.0));
}

TEST_CASE("mzipf pmf sums to one and never increases with rank") {
  for (double gamma : {0.0, 0.3, 0.8, 1.0, 2.5}) {
    for (double zeta : {0.0, 1.0, 10.0}) {
      for (int n : {1, 7, 100, 5000}) {
        const auto p = mzipf_pmf(n, gamma, zeta);
        const double total = std::accumulate(p.begin(), p.end(), 0.0);
        CHECK(std::abs(total - 1.0) <= 1e-12);
        for (std::size_t i = 1; i < p.size(); ++i) CHECK(p[i] <= p[i - 1]);
      }
    }
  }
}

TEST_CASE("ppp: zero intensity, determinism, Poisson mean") {
  const Area area{100.0, 50.0};
  CHECK(sample_faps_ppp(0.0, area, 1).empty());
  CHECK(sample_faps_ppp(0.01, area, 9) == sample_faps_ppp(0.01, area, 9));
  const double mean = 50.0;
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto pts = sample_faps_ppp(mean / area.size(), area, s);
    for (const auto& p : pts) CHECK(area.contains(p));
    sum += static_cast<double>(pts.size());
  }
  const double sigma = std::sqrt(mean / 1000.0);
  CHECK(std::abs(sum / 1000.0 - mean) < 3.0 * sigma);
}

TEST_CASE("gmm: degenerate component, empty draw, two-component balance") {
  const Area area{1000.0, 1000.0};
  const GaussianComponent point{1.0, {300.0, 700.0}, 0.0, 0.0, 0.0};
  for (const auto& u : sample_ues_gmm(std::span(&point, 1), 20, area, 4)) CHECK(u.position == Point{300.0, 700.0});
  CHECK(sample_ues_gmm(std::span(&point, 1), 0, area, 4).empty());

  const std::vector<GaussianComponent> two{{0.5, {100, 100}, 100, 0, 100}, {0.5, {900, 900}, 100, 0, 100}};
  const auto ues = sample_ues_gmm(two, 1000, area, 12);
  int left = 0;
  for (const auto& u : ues) left += u.position.x < 500.0 ? 1 : 0;
  CHECK(std::abs(left - 500) < 3.0 * std::sqrt(250.0));

  const GaussianComponent bad{1.0, {0, 0}, 1.0, 2.0, 1.0};
  CHECK_THROWS(sample_ues_gmm(std::span(&bad, 1), 5, area, 1));
}

TEST_CASE("gmm draws stay inside the area") {
  const Area area{200.0, 200.0};
  const GaussianComponent wide{1.0, {0, 0}, 1e4, 0, 1e4};
  for (const auto& u : sample_ues_gmm(std::span(&wide, 1), 300, area, 2)) CHECK(area.contains(u.position));
}

TEST_CASE("k-means: one cluster, two tight clusters, determinism, monotone SSE") {
  std::vector<Point> pts{{0, 0}, {2, 0}, {0, 2}, {2, 2}};
  const auto one = place_uavs_kmeans(pts, 1, 50, 3);
  CHECK(one.centroids[0].x == doctest::Approx(1.0));
  CHECK(one.centroids[0].y == doctest::Approx(1.0));

  std::vector<Point> clusters{{10, 10}, {10.1, 10}, {10, 10.2}, {500, 500}, {500.3, 500}, {500, 499.9}};
  const auto two = place_uavs_kmeans(clusters, 2, 100, 5);
  std::vector<Point> c = two.centroids;
  std::sort(c.begin(), c.end(), [](Point a, Point b) { return a.x < b.x; });
  CHECK(std::abs(c[0].x - 10.1 / 3.0 - 20.0 / 3.0) < 1e-6);
  CHECK(std::abs(c[0].y - 30.2 / 3.0) < 1e-6);
  CHECK(std::abs(c[1].x - 1500.3 / 3.0) < 1e-6);
  CHECK(std::abs(c[1].y - 1499.9 / 3.0) < 1e-6);

  CHECK_THROWS(place_uavs_kmeans(std::vector<Point>{{1, 1}, {1, 1}}, 2, 10, 1));

  Rng rng(77);
  std::vector<Point> cloud;
  for (int i = 0; i < 400; ++i) cloud.push_back({rng.uniform(0, 100), rng.uniform(0, 100)});
  const auto a = place_uavs_kmeans(cloud, 5, 100, 8);
  const auto b = place_uavs_kmeans(cloud, 5, 100, 8);
  CHECK(a.centroids == b.centroids);
  for (std::size_t i = 1; i < a.sse_history.size(); ++i) CHECK(a.sse_history[i] <= a.sse_history[i - 1] + 1e-9);
}

TEST_CASE("scenario generation is reproducible and serializes losslessly") {
  ScenarioOptions o;
  o.fixed_fap_count = 5;
  const Topology t = generate_topology(o, 42);
  CHECK(t.faps.size() == 5);
  CHECK(t.uavs.size() == 1);
  CHECK(t.node_count() == 6);
  CHECK(topology_to_json(t) == topology_to_json(generate_topology(o, 42)));
  const Topology back = topology_from_json(topology_to_json(t));
  CHECK(back.faps == t.faps);
  CHECK(back.uavs == t.uavs);
  CHECK(back.ues.size() == t.ues.size());
  CHECK_NOTHROW(back.validate());
}

TEST_CASE("synthetic trace: empty, degenerate pmf, determinism") {
  SyntheticTraceOptions o;
  o.n_slots = 10;
  o.requests_per_slot = 0;
  CHECK(generate_synthetic_trace(make_zipf(5, 0.8, 0.0), o, 1).events.empty());

  ZipfModel degenerate{2, 0.0, 0.0, {1.0, 0.0}};
  o.requests_per_slot = 30;
  for (const auto& e : generate_synthetic_trace(degenerate, o, 5).events) CHECK(e.content_id == 1);

  o.drift = Drift::rank_shuffle(3);
  const auto a = generate_synthetic_trace(make_zipf(20, 0.8, 0.0), o, 9);
  const auto b = generate_synthetic_trace(make_zipf(20, 0.8, 0.0), o, 9);
  CHECK(a.events == b.events);
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("synthetic trace follows the Zipf law") {
  const auto zipf = make_zipf(100, 0.8, 0.0);
  SyntheticTraceOptions o;
  o.n_slots = 100;
  o.requests_per_slot = 1000;
  const auto log = generate_synthetic_trace(zipf, o, 2024);
  REQUIRE(log.events.size() == 100000);
  std::vector<double> counts(100, 0.0);
  for (const auto& e : log.events) counts[static_cast<std::size_t>(e.content_id - 1)] += 1.0;

  const double n = 1e5;
  const double p1 = zipf.pmf[0];
  CHECK(std::abs(counts[0] - n * p1) < 3.0 * std::sqrt(n * p1 * (1.0 - p1)));

  double chi2 = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double expected = n * zipf.pmf[i];
    chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
  }
  const boost::math::chi_squared dist(99.0);
  CHECK(boost::math::cdf(boost::math::complement(dist, chi2)) > 0.01);
}

TEST_CASE("rank shuffle moves the most popular content") {
  SyntheticTraceOptions o;
  o.n_slots = 40;
  o.requests_per_slot = 200;
  o.drift = Drift::rank_shuffle(20);
  const auto log = generate_synthetic_trace(make_zipf(50, 1.2, 0.0), o, 13);
  std::vector<int> first(50, 0), second(50, 0);
  const auto half = log.horizon / 2;
  for (const auto& e : log.events) (e.timestamp < half ? first : second)[static_cast<std::size_t>(e.content_id - 1)]++;
  const auto top = [](const std::vector<int>& v) { return std::max_element(v.begin(), v.end()) - v.begin(); };
  CHECK(top(first) == 0);
  CHECK(top(second) != 0);
}
