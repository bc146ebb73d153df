#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "tedge/matrix.hpp"
#include "tedge/topology.hpp"

namespace tedge {

struct RequestEvent {
  std::int64_t timestamp = 0;
  std::int64_t user_id = 0;
  int content_id = 1;
  /// hgNB serving the request; 0 until assigned.
  int node_id = 0;

  friend bool operator==(const RequestEvent&, const RequestEvent&) = default;
};

/// Time-ordered request events of one workload (or one hgNB's share of it).
struct RequestLog {
  std::vector<RequestEvent> events;
  int catalog_size = 0;
  /// Number of time slots T.
  std::int64_t horizon = 0;
  std::int64_t slot_seconds = 1;
  /// Timestamp of the start of slot 0.
  std::int64_t origin = 0;
  /// Events dropped at ingestion because the user already requested in that slot.
  std::size_t dropped_duplicates = 0;

  std::int64_t slot_of(const RequestEvent& e) const noexcept {
    return (e.timestamp - origin) / slot_seconds;
  }

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

enum class TraceFormat { movielens_tsv, events_csv };

TraceFormat parse_trace_format(const std::string& name);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Reads a request trace. Every row counts as one request; MovieLens ratings
/// are discarded. Repeat requests by a user within one slot are dropped and
/// counted in `dropped_duplicates`.
RequestLog parse_trace(std::istream& in, TraceFormat format, std::int64_t slot_seconds);

/// Writes the `timestamp,user_id,content_id` form read back by parse_trace.
void write_events_csv(std::ostream& out, const RequestLog& log);

/// Returns `log` with the catalog widened to at least `n_contents`.
RequestLog widen_catalog(RequestLog log, int n_contents);

struct NodeAssignment {
  /// One log per hgNB, index = node_id - 1.
  std::vector<RequestLog> per_node;
  std::vector<RequestEvent> dropped;
};

/// Routes each event to the nearest in-range hgNB (ties to the lower node id).
NodeAssignment assign_requests_to_nodes(const RequestLog& log, const Topology& topo);

/// Binary T × N_c indicator matrix of one hgNB.
struct RequestMatrix {
  int node_id = 0;
  Matrix<std::uint8_t> data;
};

RequestMatrix build_request_matrix(const RequestLog& log);

}  // namespace tedge
