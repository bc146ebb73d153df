#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tedge/matrix.hpp"
#include "tedge/trace.hpp"

namespace tedge {

enum class ReactivePolicy { fifo, lru, lfu };

ReactivePolicy parse_reactive_policy(const std::string& name);
std::string to_string(ReactivePolicy policy);

struct IntervalStats {
  long long requests = 0;
  long long hits = 0;

  double hit_ratio() const noexcept { return requests > 0 ? static_cast<double>(hits) / requests : 0.0; }
};

struct PolicyResult {
  std::string policy;
  int capacity = 0;
  long long hits = 0;
  long long misses = 0;
  double hit_ratio = 0.0;
  int window_len = 1;
  int first_window = 0;                 // intervals[i] is update interval first_window + i
  std::vector<IntervalStats> intervals;

  long long events() const noexcept { return hits + misses; }
};

/// Which events are scored. Earlier events still drive the policy (warm
/// caches) but are not counted.
struct SimulationWindow {
  int window_len = 1;         // update interval length in log slots
  int count_from_window = 0;  // first scored update interval
};

/// Cold-start FIFO/LRU/LFU cache with insertion on every miss.
PolicyResult simulate_reactive(const RequestLog& log, ReactivePolicy policy, int capacity,
                               const SimulationWindow& window = {});

/// Receives the l × N_c window-count history preceding update interval t_u
/// and returns K column indices (content_id - 1).
using Predictor = std::function<std::vector<int>(const CountMatrix& history, int t_u)>;

/// Proactive cache: replaced by the predictor's set at every update time with
/// at least `history_len` full windows behind it, empty before that, no
/// insertion on miss.
PolicyResult simulate_predictive(const RequestLog& log, const Predictor& predictor, int history_len, int capacity,
                                 const SimulationWindow& window, const std::string& name = "tedge");

/// Per interval, caches that interval's K most requested contents (ties to the
/// lower id).
PolicyResult simulate_optimal(const RequestLog& log, int capacity, const SimulationWindow& window);

/// Every request served: the unattainable "serve everything" line.
PolicyResult serve_all(const RequestLog& log, const SimulationWindow& window);

/// Per-interval event counts (not indicators) of every content over all
/// update intervals, the trailing partial one included.
CountMatrix interval_event_counts(const RequestLog& log, int window_len);

/// `policy,K,events,hits,misses,hit_ratio`, one row per result.
void write_results_csv(std::ostream& out, std::span<const PolicyResult> results);
/// `policy,interval,requests,hits,hit_ratio`.
void write_interval_csv(std::ostream& out, std::span<const PolicyResult> results);
std::string hit_ratio_report_json(std::span<const PolicyResult> results);

}  // namespace tedge
