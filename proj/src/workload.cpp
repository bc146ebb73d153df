#include "tedge/workload.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "tedge/random.hpp"

namespace tedge {

RequestLog generate_synthetic_trace(const ZipfModel& zipf, const SyntheticTraceOptions& options,
                                    std::uint64_t seed) {
  if (options.n_slots < 1) throw std::invalid_argument("generate_synthetic_trace: n_slots must be >= 1");
  if (options.requests_per_slot < 0) {
    throw std::invalid_argument("generate_synthetic_trace: requests_per_slot must be >= 0");
  }
  if (zipf.pmf.size() != static_cast<std::size_t>(zipf.n_contents) || zipf.n_contents < 1) {
    throw std::invalid_argument("generate_synthetic_trace: malformed Zipf model");
  }
  if (options.drift.kind == Drift::Kind::rank_shuffle && options.drift.period < 1) {
    throw std::invalid_argument("generate_synthetic_trace: shuffle period must be >= 1");
  }
  const int n_users = options.n_users > 0 ? options.n_users : std::max(options.requests_per_slot, 1);
  if (n_users < options.requests_per_slot) {
    throw std::invalid_argument("generate_synthetic_trace: n_users must be >= requests_per_slot");
  }

  std::vector<double> cdf(zipf.pmf.size());
  std::partial_sum(zipf.pmf.begin(), zipf.pmf.end(), cdf.begin());

  std::vector<int> rank_to_content(static_cast<std::size_t>(zipf.n_contents));
  std::iota(rank_to_content.begin(), rank_to_content.end(), 1);

  Rng rng(seed);
  const std::int64_t slot_len =
      options.slot_seconds > 0 ? options.slot_seconds : std::max(options.requests_per_slot, 1);

  RequestLog log;
  log.catalog_size = zipf.n_contents;
  log.horizon = static_cast<std::int64_t>(options.n_slots) * slot_len;
  log.slot_seconds = 1;
  log.origin = 0;
  log.events.reserve(static_cast<std::size_t>(options.n_slots) *
                     static_cast<std::size_t>(options.requests_per_slot));

  for (int slot = 0; slot < options.n_slots; ++slot) {
    if (options.drift.kind == Drift::Kind::rank_shuffle && slot > 0 &&
        slot % options.drift.period == 0) {
      rng.shuffle(rank_to_content);
    }
    const auto user_offset = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n_users)));
    for (int i = 0; i < options.requests_per_slot; ++i) {
      const double u = rng.uniform();
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      // Guard against the cdf ending a hair below 1, and skip zero-mass ranks.
      std::size_t rank = std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1);
      while (rank > 0 && zipf.pmf[rank] == 0.0) --rank;
      RequestEvent e;
      e.timestamp = static_cast<std::int64_t>(slot) * slot_len + i * slot_len / options.requests_per_slot;
      e.user_id = 1 + (user_offset + i) % n_users;
      e.content_id = rank_to_content[rank];
      log.events.push_back(e);
    }
  }
  return log;
}

}  // namespace tedge
