#include "tedge/cachesim.hpp"

#include <algorithm>
#include <deque>
#include <list>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "tedge/pipeline.hpp"

namespace tedge {

ReactivePolicy parse_reactive_policy(const std::string& name) {
  if (name == "fifo") return ReactivePolicy::fifo;
  if (name == "lru") return ReactivePolicy::lru;
  if (name == "lfu") return ReactivePolicy::lfu;
  throw std::invalid_argument("unknown cache policy '" + name + "' (expected fifo, lru or lfu)");
}

std::string to_string(ReactivePolicy policy) {
  switch (policy) {
    case ReactivePolicy::fifo: return "fifo";
    case ReactivePolicy::lru: return "lru";
    case ReactivePolicy::lfu: return "lfu";
  }
  return "?";
}

namespace {

int interval_count(const RequestLog& log, int window_len) {
  return static_cast<int>((log.horizon + window_len - 1) / window_len);
}

// Accumulates hits per update interval, skipping intervals before the scored range.
class Scorer {
 public:
  Scorer(const RequestLog& log, const SimulationWindow& window, std::string name, int capacity)
      : log_(log), window_(window) {
    if (window.window_len < 1) throw std::invalid_argument("window_len must be >= 1");
    if (window.count_from_window < 0) throw std::invalid_argument("count_from_window must be >= 0");
    result_.policy = std::move(name);
    result_.capacity = capacity;
    result_.window_len = window.window_len;
    result_.first_window = window.count_from_window;
    const int n = interval_count(log, window.window_len);
    result_.intervals.resize(static_cast<std::size_t>(std::max(0, n - window.count_from_window)));
  }

  int interval_of(const RequestEvent& e) const {
    return static_cast<int>(log_.slot_of(e) / window_.window_len);
  }

  void record(const RequestEvent& e, bool hit) {
    const int w = interval_of(e);
    if (w < window_.count_from_window) return;
    auto& iv = result_.intervals[static_cast<std::size_t>(w - window_.count_from_window)];
    ++iv.requests;
    if (hit) {
      ++iv.hits;
      ++result_.hits;
    } else {
      ++result_.misses;
    }
  }

  PolicyResult finish() {
    const auto total = result_.hits + result_.misses;
    result_.hit_ratio = total > 0 ? static_cast<double>(result_.hits) / static_cast<double>(total) : 0.0;
    return std::move(result_);
  }

 private:
  const RequestLog& log_;
  SimulationWindow window_;
  PolicyResult result_;
};

void check_capacity(int capacity) {
  if (capacity < 1) throw std::invalid_argument("cache capacity must be >= 1, got " + std::to_string(capacity));
}

}  // namespace

PolicyResult simulate_reactive(const RequestLog& log, ReactivePolicy policy, int capacity,
                               const SimulationWindow& window) {
  check_capacity(capacity);
  Scorer scorer(log, window, to_string(policy), capacity);
  const auto cap = static_cast<std::size_t>(capacity);

  switch (policy) {
    case ReactivePolicy::fifo: {
      std::deque<int> queue;
      std::unordered_set<int> resident;
      for (const auto& e : log.events) {
        const bool hit = resident.contains(e.content_id);
        if (!hit) {
          if (resident.size() == cap) {
            resident.erase(queue.front());
            queue.pop_front();
          }
          queue.push_back(e.content_id);
          resident.insert(e.content_id);
        }
        scorer.record(e, hit);
      }
      break;
    }
    case ReactivePolicy::lru: {
      std::list<int> recency;  // front = most recent
      std::unordered_map<int, std::list<int>::iterator> where;
      for (const auto& e : log.events) {
        auto it = where.find(e.content_id);
        const bool hit = it != where.end();
        if (hit) {
          recency.splice(recency.begin(), recency, it->second);
        } else {
          if (where.size() == cap) {
            where.erase(recency.back());
            recency.pop_back();
          }
          recency.push_front(e.content_id);
          where[e.content_id] = recency.begin();
        }
        scorer.record(e, hit);
      }
      break;
    }
    case ReactivePolicy::lfu: {
      using Key = std::tuple<long long, long long, int>;  // (count, last access, id)
      std::set<Key> order;
      std::unordered_map<int, long long> count;
      std::unordered_map<int, long long> last;
      std::unordered_set<int> resident;
      long long clock = 0;
      for (const auto& e : log.events) {
        ++clock;
        const int c = e.content_id;
        const bool hit = resident.contains(c);
        if (hit) order.erase({count[c], last[c], c});
        ++count[c];
        last[c] = clock;
        if (!hit) {
          if (resident.size() == cap) {
            const int victim = std::get<2>(*order.begin());
            order.erase(order.begin());
            resident.erase(victim);
          }
          resident.insert(c);
        }
        order.insert({count[c], last[c], c});
        scorer.record(e, hit);
      }
      break;
    }
  }
  return scorer.finish();
}

CountMatrix interval_event_counts(const RequestLog& log, int window_len) {
  if (window_len < 1) throw std::invalid_argument("window_len must be >= 1");
  CountMatrix counts(static_cast<std::size_t>(interval_count(log, window_len)),
                     static_cast<std::size_t>(log.catalog_size), 0);
  for (const auto& e : log.events) {
    counts(static_cast<std::size_t>(log.slot_of(e) / window_len), static_cast<std::size_t>(e.content_id - 1)) += 1;
  }
  return counts;
}

PolicyResult simulate_predictive(const RequestLog& log, const Predictor& predictor, int history_len, int capacity,
                                 const SimulationWindow& window, const std::string& name) {
  check_capacity(capacity);
  if (history_len < 1) throw std::invalid_argument("history_len must be >= 1");
  if (!predictor) throw std::invalid_argument("simulate_predictive: no predictor");
  Scorer scorer(log, window, name, capacity);
  const WindowMatrix windows = window_counts(log, window.window_len);
  const std::size_t n_contents = static_cast<std::size_t>(log.catalog_size);

  std::vector<std::uint8_t> cached(n_contents + 1, 0);
  int current = -1;
  auto refresh = [&](int w) {
    std::fill(cached.begin(), cached.end(), 0);
    // Unscored intervals never reach the counters; the proactive cache carries no state.
    if (w < history_len || w < window.count_from_window) return;
    CountMatrix history(static_cast<std::size_t>(history_len), n_contents);
    for (int r = 0; r < history_len; ++r) {
      const auto src = windows.counts.row(static_cast<std::size_t>(w - history_len + r));
      std::copy(src.begin(), src.end(), history.row(static_cast<std::size_t>(r)).begin());
    }
    const std::vector<int> chosen = predictor(history, w);
    if (chosen.size() != static_cast<std::size_t>(capacity)) {
      throw std::runtime_error("predictor returned " + std::to_string(chosen.size()) + " contents at t_u=" +
                               std::to_string(w) + ", expected K=" + std::to_string(capacity));
    }
    for (int c : chosen) {
      if (c < 0 || static_cast<std::size_t>(c) >= n_contents) {
        throw std::runtime_error("predictor returned content index " + std::to_string(c) + " outside the catalog");
      }
      if (cached[static_cast<std::size_t>(c) + 1]) {
        throw std::runtime_error("predictor returned duplicate content index " + std::to_string(c));
      }
      cached[static_cast<std::size_t>(c) + 1] = 1;
    }
  };
  // Every interval boundary is an update time, including intervals without requests.
  for (const auto& e : log.events) {
    const int w = scorer.interval_of(e);
    while (current < w) refresh(++current);
    scorer.record(e, cached[static_cast<std::size_t>(e.content_id)] != 0);
  }
  return scorer.finish();
}

PolicyResult simulate_optimal(const RequestLog& log, int capacity, const SimulationWindow& window) {
  check_capacity(capacity);
  Scorer scorer(log, window, "optimal", capacity);
  const CountMatrix counts = interval_event_counts(log, window.window_len);
  const std::size_t n_contents = counts.cols();
  std::vector<std::vector<std::uint8_t>> cached(counts.rows());
  std::vector<int> idx(n_contents);
  for (std::size_t w = 0; w < counts.rows(); ++w) {
    const auto row = counts.row(w);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return row[a] > row[b]; });
    cached[w].assign(n_contents, 0);
    for (std::size_t i = 0; i < std::min<std::size_t>(n_contents, static_cast<std::size_t>(capacity)); ++i) {
      cached[w][static_cast<std::size_t>(idx[i])] = 1;
    }
  }
  for (const auto& e : log.events) {
    const auto w = static_cast<std::size_t>(scorer.interval_of(e));
    scorer.record(e, cached[w][static_cast<std::size_t>(e.content_id - 1)] != 0);
  }
  return scorer.finish();
}

PolicyResult serve_all(const RequestLog& log, const SimulationWindow& window) {
  Scorer scorer(log, window, "serve_all", log.catalog_size);
  for (const auto& e : log.events) scorer.record(e, true);
  return scorer.finish();
}

void write_results_csv(std::ostream& out, std::span<const PolicyResult> results) {
  if (results.empty()) throw std::invalid_argument("hit-ratio report needs at least one result");
  out << "policy,K,events,hits,misses,hit_ratio\n";
  for (const auto& r : results) {
    out << r.policy << ',' << r.capacity << ',' << r.events() << ',' << r.hits << ',' << r.misses << ','
        << nlohmann::json(r.hit_ratio).dump() << '\n';
  }
}

void write_interval_csv(std::ostream& out, std::span<const PolicyResult> results) {
  out << "policy,interval,requests,hits,hit_ratio\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.intervals.size(); ++i) {
      const auto& iv = r.intervals[i];
      out << r.policy << ',' << r.first_window + static_cast<int>(i) << ',' << iv.requests << ',' << iv.hits << ','
          << nlohmann::json(iv.hit_ratio()).dump() << '\n';
    }
  }
}

std::string hit_ratio_report_json(std::span<const PolicyResult> results) {
  if (results.empty()) throw std::invalid_argument("hit-ratio report needs at least one result");
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    nlohmann::ordered_json series = nlohmann::ordered_json::array();
    for (const auto& iv : r.intervals) series.push_back(iv.hit_ratio());
    doc.push_back({{"policy", r.policy},
                   {"K", r.capacity},
                   {"events", r.events()},
                   {"hits", r.hits},
                   {"misses", r.misses},
                   {"hit_ratio", r.hit_ratio},
                   {"first_interval", r.first_window},
                   {"interval_hit_ratio", series}});
  }
  return doc.dump(2);
}

}  // namespace tedge
