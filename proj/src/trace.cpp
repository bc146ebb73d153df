#include "tedge/trace.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <unordered_map>
#include <string_view>
#include <utility>

namespace tedge {

void RequestLog::validate() const {
  if (slot_seconds < 1) throw std::invalid_argument("request log: slot_seconds must be >= 1");
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (i > 0 && e.timestamp < events[i - 1].timestamp) {
      throw std::invalid_argument("request log: events are not time-ordered");
    }
    if (e.timestamp < 0) throw std::invalid_argument("request log: negative timestamp");
    if (e.content_id < 1 || e.content_id > catalog_size) {
      throw std::invalid_argument("request log: content id " + std::to_string(e.content_id) +
                                  " outside catalog [1, " + std::to_string(catalog_size) + "]");
    }
    const auto slot = slot_of(e);
    if (slot < 0 || slot >= horizon) {
      throw std::invalid_argument("request log: event slot " + std::to_string(slot) +
                                  " outside horizon " + std::to_string(horizon));
    }
  }
}

TraceFormat parse_trace_format(const std::string& name) {
  if (name == "movielens_tsv" || name == "movielens") return TraceFormat::movielens_tsv;
  if (name == "events_csv" || name == "csv") return TraceFormat::events_csv;
  throw std::invalid_argument("unknown trace format '" + name + "'");
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

std::vector<std::int64_t> split_integers(std::string_view line, char sep, std::size_t expected,
                                         std::size_t line_no) {
  std::vector<std::int64_t> out;
  out.reserve(expected);
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    const auto field = trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start));
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
      throw ParseError(line_no, "expected an integer, got '" + std::string(field) + "'");
    }
    out.push_back(value);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (out.size() != expected) {
    throw ParseError(line_no, "expected " + std::to_string(expected) + " fields, got " +
                                  std::to_string(out.size()));
  }
  return out;
}

}  // namespace

RequestLog parse_trace(std::istream& in, TraceFormat format, std::int64_t slot_seconds) {
  if (slot_seconds < 1) throw std::invalid_argument("parse_trace: slot_seconds must be >= 1");

  std::vector<RequestEvent> raw;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    RequestEvent e;
    if (format == TraceFormat::movielens_tsv) {
      const auto f = split_integers(text, '\t', 4, line_no);
      e.user_id = f[0];
      e.content_id = static_cast<int>(f[1]);
      e.timestamp = f[3];
      if (f[1] < 1 || f[1] > std::numeric_limits<int>::max()) {
        throw ParseError(line_no, "item id must be a positive integer");
      }
    } else {
      if (!header_seen) {
        header_seen = true;
        if (text != "timestamp,user_id,content_id") {
          throw ParseError(line_no, "expected header 'timestamp,user_id,content_id'");
        }
        continue;
      }
      const auto f = split_integers(text, ',', 3, line_no);
      e.timestamp = f[0];
      e.user_id = f[1];
      if (f[2] < 1 || f[2] > std::numeric_limits<int>::max()) {
        throw ParseError(line_no, "content id must be a positive integer");
      }
      e.content_id = static_cast<int>(f[2]);
    }
    if (e.timestamp < 0) throw ParseError(line_no, "timestamp must be >= 0");
    raw.push_back(e);
  }
  if (raw.empty()) throw std::invalid_argument("parse_trace: stream contains no requests");

  std::stable_sort(raw.begin(), raw.end(),
                   [](const RequestEvent& a, const RequestEvent& b) { return a.timestamp < b.timestamp; });

  RequestLog log;
  log.slot_seconds = slot_seconds;
  log.origin = raw.front().timestamp;
  const std::int64_t span = raw.back().timestamp - log.origin + 1;
  log.horizon = (span + slot_seconds - 1) / slot_seconds;

  std::set<std::pair<std::int64_t, std::int64_t>> seen;  // (user, slot)
  log.events.reserve(raw.size());
  for (const auto& e : raw) {
    if (!seen.emplace(e.user_id, log.slot_of(e)).second) {
      ++log.dropped_duplicates;
      continue;
    }
    log.catalog_size = std::max(log.catalog_size, e.content_id);
    log.events.push_back(e);
  }
  return log;
}

void write_events_csv(std::ostream& out, const RequestLog& log) {
  out << "timestamp,user_id,content_id\n";
  for (const auto& e : log.events) out << e.timestamp << ',' << e.user_id << ',' << e.content_id << '\n';
}

RequestLog widen_catalog(RequestLog log, int n_contents) {
  log.catalog_size = std::max(log.catalog_size, n_contents);
  return log;
}

NodeAssignment assign_requests_to_nodes(const RequestLog& log, const Topology& topo) {
  std::unordered_map<std::int64_t, Point> where;
  where.reserve(topo.ues.size());
  for (const auto& u : topo.ues) where[u.user_id] = u.position;

  NodeAssignment out;
  const int n_nodes = topo.node_count();
  out.per_node.resize(static_cast<std::size_t>(n_nodes));
  for (int b = 0; b < n_nodes; ++b) {
    auto& node_log = out.per_node[b];
    node_log.catalog_size = log.catalog_size;
    node_log.horizon = log.horizon;
    node_log.slot_seconds = log.slot_seconds;
    node_log.origin = log.origin;
  }

  // Users are static, so the serving node is resolved once per user.
  std::unordered_map<std::int64_t, int> serving;
  for (const auto& e : log.events) {
    auto cached = serving.find(e.user_id);
    int node = 0;
    if (cached != serving.end()) {
      node = cached->second;
    } else {
      const auto pos = where.find(e.user_id);
      if (pos == where.end()) {
        throw std::invalid_argument("assign_requests_to_nodes: user " + std::to_string(e.user_id) +
                                    " has no position in the topology");
      }
      double best = std::numeric_limits<double>::infinity();
      for (int b = 1; b <= n_nodes; ++b) {
        const double d2 = squared_distance(pos->second, topo.node_position(b));
        const double range = topo.node_range(b);
        if (d2 <= range * range && d2 < best) {  // strict: ties keep the lower id
          best = d2;
          node = b;
        }
      }
      serving.emplace(e.user_id, node);
    }
    RequestEvent routed = e;
    routed.node_id = node;
    if (node == 0) {
      out.dropped.push_back(routed);
    } else {
      out.per_node[node - 1].events.push_back(routed);
    }
  }
  return out;
}

RequestMatrix build_request_matrix(const RequestLog& log) {
  log.validate();
  RequestMatrix m;
  m.node_id = log.events.empty() ? 0 : log.events.front().node_id;
  m.data = Matrix<std::uint8_t>(static_cast<std::size_t>(log.horizon),
                                static_cast<std::size_t>(log.catalog_size), 0);
  for (const auto& e : log.events) {
    m.data(static_cast<std::size_t>(log.slot_of(e)), static_cast<std::size_t>(e.content_id - 1)) = 1;
  }
  return m;
}

}  // namespace tedge
