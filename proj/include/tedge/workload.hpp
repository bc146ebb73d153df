#pragma once

#include <cstdint>

#include "tedge/topology.hpp"
#include "tedge/trace.hpp"

namespace tedge {

struct Drift {
  enum class Kind { none, rank_shuffle };
  Kind kind = Kind::none;
  /// Slots between re-draws of the rank -> content permutation.
  int period = 0;

  static Drift none() { return {}; }
  static Drift rank_shuffle(int period) { return {Kind::rank_shuffle, period}; }
};

struct SyntheticTraceOptions {
  int n_slots = 1;
  int requests_per_slot = 0;
  Drift drift;
  /// Requesting population; each slot uses requests_per_slot distinct users.
  /// 0 means "same as requests_per_slot".
  int n_users = 0;
  /// Length of one generator slot in seconds; 0 means requests_per_slot, so
  /// that every request gets its own one-second timestamp.
  std::int64_t slot_seconds = 0;
};

/// i.i.d. content draws from the Zipf law, slot by slot. Content id = rank
/// until the first shuffle; with rank_shuffle drift a fresh random
/// permutation maps ranks to contents every `period` slots.
///
/// Requests of a slot are spread evenly over its `slot_seconds` seconds. The
/// returned log has one-second resolution (slot_seconds = 1, horizon =
/// n_slots * slot_seconds), so the indicator request matrix keeps individual
/// requests apart instead of collapsing a slot's burst into one entry.
RequestLog generate_synthetic_trace(const ZipfModel& zipf, const SyntheticTraceOptions& options,
                                    std::uint64_t seed);

}  // namespace tedge
