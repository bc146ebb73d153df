#include <sstream>

#include "doctest.h"
#include "tedge/random.hpp"
#include "tedge/trace.hpp"

using namespace tedge;

namespace {

RequestLog parse_tsv(const std::string& text, std::int64_t slot) {
  std::istringstream in(text);
  return parse_trace(in, TraceFormat::movielens_tsv, slot);
}

Topology line_topology(std::vector<Point> faps, double range) {
  Topology t;
  t.area = {100.0, 100.0};
  t.faps = std::move(faps);
  t.fap_range = range;
  t.uav_range = range;
  return t;
}

}  // namespace

TEST_CASE("movielens rows become a sorted log with catalog and horizon") {
  const auto log = parse_tsv("1\t5\t4\t100\n2\t5\t3\t150\n1\t2\t5\t200\n", 100);
  CHECK(log.events.size() == 3);
  CHECK(log.catalog_size == 5);
  CHECK(log.horizon == 2);
  CHECK(log.events[2].content_id == 2);
  CHECK(log.events[2].timestamp == 200);
}

TEST_CASE("single row and empty input") {
  const auto log = parse_tsv("1\t1\t1\t0\n", 1);
  CHECK(log.catalog_size == 1);
  CHECK(log.horizon == 1);
  CHECK(log.events.size() == 1);
  CHECK_THROWS(parse_tsv("", 1));
}

TEST_CASE("malformed line reports its number") {
  try {
    parse_tsv("1\t1\t1\t0\n2\tx\t1\t5\n", 1);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("rows arrive unsorted and the log is sorted") {
  const auto log = parse_tsv("1\t3\t4\t50\n2\t1\t3\t10\n", 1);
  CHECK(log.events.front().timestamp == 10);
  CHECK(log.horizon == 41);
}

TEST_CASE("repeat requests of one user inside a slot are dropped and counted") {
  const auto log = parse_tsv("1\t1\t4\t0\n1\t2\t4\t5\n1\t3\t4\t10\n", 10);
  CHECK(log.events.size() == 2);
  CHECK(log.dropped_duplicates == 1);
}

TEST_CASE("events csv round trip") {
  Rng rng(3);
  RequestLog log;
  log.catalog_size = 9;
  for (int i = 0; i < 50; ++i) {
    log.events.push_back({i * 2, static_cast<std::int64_t>(i), 1 + static_cast<int>(rng.below(9)), 0});
  }
  log.horizon = 99;
  std::ostringstream out;
  write_events_csv(out, log);
  std::istringstream in(out.str());
  const auto back = parse_trace(in, TraceFormat::events_csv, 1);
  CHECK(back.events == log.events);
  std::ostringstream again;
  write_events_csv(again, back);
  CHECK(again.str() == out.str());
}

TEST_CASE("request matrix uses indicator semantics") {
  RequestLog log;
  log.catalog_size = 2;
  log.horizon = 2;
  log.events = {{0, 1, 1, 0}, {0, 2, 1, 0}, {1, 3, 2, 0}};
  const auto m = build_request_matrix(log);
  CHECK(m.data.rows() == 2);
  CHECK(m.data(0, 0) == 1);
  CHECK(m.data(0, 1) == 0);
  CHECK(m.data(1, 0) == 0);
  CHECK(m.data(1, 1) == 1);

  RequestLog empty;
  empty.catalog_size = 3;
  empty.horizon = 4;
  const auto zero = build_request_matrix(empty);
  for (auto v : zero.data.values()) CHECK(v == 0);

  RequestLog full;
  full.catalog_size = 3;
  full.horizon = 2;
  for (int t = 0; t < 2; ++t)
    for (int c = 1; c <= 3; ++c) full.events.push_back({t, 10 * t + c, c, 0});
  const auto ones = build_request_matrix(full);
  for (auto v : ones.data.values()) CHECK(v == 1);
}

TEST_CASE("duplicating events leaves the request matrix unchanged") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    RequestLog log;
    log.catalog_size = 6;
    log.horizon = 30;
    for (int t = 0; t < 30; ++t)
      if (rng.uniform() < 0.7) log.events.push_back({t, t, 1 + static_cast<int>(rng.below(6)), 0});
    RequestLog doubled = log;
    doubled.events.clear();
    for (const auto& e : log.events) {
      doubled.events.push_back(e);
      doubled.events.push_back(e);
    }
    CHECK(build_request_matrix(doubled).data == build_request_matrix(log).data);
  }
}

TEST_CASE("one node covering everything keeps the log") {
  RequestLog log;
  log.catalog_size = 2;
  log.horizon = 3;
  log.events = {{0, 1, 1, 0}, {1, 2, 2, 0}, {2, 1, 2, 0}};
  Topology t = line_topology({{50, 50}}, 500);
  t.ues = {{1, {10, 10}}, {2, {90, 90}}};
  const auto a = assign_requests_to_nodes(log, t);
  REQUIRE(a.per_node.size() == 1);
  CHECK(a.dropped.empty());
  REQUIRE(a.per_node[0].events.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.per_node[0].events[i].timestamp == log.events[i].timestamp);
    CHECK(a.per_node[0].events[i].content_id == log.events[i].content_id);
    CHECK(a.per_node[0].events[i].node_id == 1);
  }
}

TEST_CASE("equidistant user goes to the lower node id, uncovered user is dropped") {
  RequestLog log;
  log.catalog_size = 1;
  log.horizon = 2;
  log.events = {{0, 1, 1, 0}, {1, 2, 1, 0}};
  Topology t = line_topology({{40, 50}, {60, 50}}, 15);
  t.ues = {{1, {50, 50}}, {2, {0, 0}}};
  const auto a = assign_requests_to_nodes(log, t);
  CHECK(a.per_node[0].events.size() == 1);
  CHECK(a.per_node[1].events.empty());
  CHECK(a.dropped.size() == 1);
  CHECK(a.dropped[0].user_id == 2);
}

TEST_CASE("user without a position is named in the error") {
  RequestLog log;
  log.catalog_size = 1;
  log.horizon = 1;
  log.events = {{0, 77, 1, 0}};
  Topology t = line_topology({{50, 50}}, 100);
  try {
    assign_requests_to_nodes(log, t);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("77") != std::string::npos);
  }
}

TEST_CASE("node assignment partitions events") {
  Rng rng(21);
  Topology t = line_topology({{20, 20}, {80, 80}, {20, 80}}, 40);
  for (int u = 1; u <= 30; ++u) t.ues.push_back({u, {rng.uniform(0, 100), rng.uniform(0, 100)}});
  RequestLog log;
  log.catalog_size = 5;
  log.horizon = 200;
  for (int i = 0; i < 200; ++i) log.events.push_back({i, 1 + static_cast<int>(rng.below(30)), 1 + static_cast<int>(rng.below(5)), 0});
  const auto a = assign_requests_to_nodes(log, t);
  std::size_t total = a.dropped.size();
  for (const auto& n : a.per_node) total += n.events.size();
  CHECK(total == log.events.size());

  const auto whole = build_request_matrix(log).data;
  Matrix<int> summed(whole.rows(), whole.cols(), 0);
  for (const auto& n : a.per_node) {
    const auto m = build_request_matrix(n).data;
    for (std::size_t i = 0; i < m.size(); ++i) summed.values()[i] += m.values()[i];
  }
  for (const auto& e : a.dropped) summed(static_cast<std::size_t>(e.timestamp), static_cast<std::size_t>(e.content_id - 1)) += 1;
  for (std::size_t i = 0; i < whole.size(); ++i) CHECK(summed.values()[i] >= whole.values()[i]);
}
