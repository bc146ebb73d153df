#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tedge/matrix.hpp"
#include "tedge/trace.hpp"

namespace tedge {

/// Request counts per update interval: row t_u holds the counts of each
/// content over slots [t_u*W, (t_u+1)*W).
struct WindowMatrix {
  CountMatrix counts;
  int window_len = 1;

  int n_windows() const noexcept { return static_cast<int>(counts.rows()); }
  int n_contents() const noexcept { return static_cast<int>(counts.cols()); }
};

WindowMatrix window_aggregate(const RequestMatrix& requests, int window_len);

/// Same result as window_aggregate(build_request_matrix(log), window_len),
/// computed from the events without materializing the T × N_c matrix.
WindowMatrix window_counts(const RequestLog& log, int window_len);

struct Segment {
  CountMatrix history;  // l × N_c
  int target = 0;       // update-time index t_u
};

/// Stride-1 segmentation: segment u covers rows [u, u+l) and targets row u+l.
std::vector<Segment> segment_windows(const WindowMatrix& windows, int history_len);

std::vector<double> request_probabilities(std::span<const long long> row);

/// Fisher-Pearson g1 of the values; 0 for a (near) constant series.
double sample_skewness(std::span<const double> series);

/// Fisher-Pearson g1 of the request-time distribution: time index i carries
/// weight series[i]. Negative when requests concentrate late, i.e. grow.
double temporal_skewness(std::span<const double> series);

enum class SkewnessKind { temporal, value };

SkewnessKind parse_skewness_kind(const std::string& name);
std::string to_string(SkewnessKind kind);

/// Top-K popularity label for the last row of `history`. Contents with
/// negative skew are ranked first by probability, remaining slots are filled
/// by probability; ties go to the lower content id. Exactly k ones.
std::vector<std::uint8_t> label_top_k(const CountMatrix& history, int k,
                                      SkewnessKind kind = SkewnessKind::temporal);

struct GafImage {
  Tensor pixels;
};

/// Gramian angular summation field of the series min-max rescaled to [-1, 1].
GafImage gaf_encode(std::span<const double> series);

/// GASF of values already in [-1, 1] (clamped): pixel(i,j) = cos(acos x_i + acos x_j).
GafImage gaf_from_normalized(std::span<const double> values);

enum class ImageScaling {
  /// log1p counts over the sample-wide log1p max, in [0, 1].
  sample_log,
  /// counts over the sample-wide max, in [0, 1].
  sample_linear,
  /// per-content min-max to [-1, 1] (gaf_encode).
  per_series,
};

ImageScaling parse_image_scaling(const std::string& name);
std::string to_string(ImageScaling scaling);

/// One l × l GASF image per content of an l × N_c history.
std::vector<GafImage> encode_content_images(const CountMatrix& history, ImageScaling scaling);

/// The image of a single content column, identical to
/// encode_content_images(history, scaling)[content].
GafImage encode_content_image(const CountMatrix& history, std::size_t content, ImageScaling scaling);

/// Whole-history image: the l × N_c count matrix (log-scaled to [0, 1]) zero
/// padded to a square whose side is a multiple of `patch_size`.
Tensor encode_count_matrix_image(const CountMatrix& history, int patch_size);

struct Sample {
  CountMatrix history;
  std::vector<std::uint8_t> label;
  int target = 0;
  int node_id = 0;
};

struct DatasetOptions {
  int history_len = 25;
  int k = 1;
  SkewnessKind skewness = SkewnessKind::temporal;
};

struct Dataset {
  int history_len = 0;
  int n_contents = 0;
  int k = 0;
  std::vector<Sample> samples;
};

/// Pairs every segment with the label of its target window (computed over the
/// l rows ending at the target).
Dataset build_dataset(const WindowMatrix& windows, const DatasetOptions& options, int node_id = 0);

/// Appends `other`'s samples; geometry must match.
void append_dataset(Dataset& into, const Dataset& other);

/// Binary layout (little-endian): "TDDS", u32 version, i32 l, i32 N_c, i32 K,
/// i64 M, then per sample i32 node_id, i32 target, l*N_c i32 counts, N_c u8 label.
void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);

}  // namespace tedge
