#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tedge/pipeline.hpp"
#include "tedge/vit.hpp"

namespace tedge {

/// How a sample's l × N_c history becomes model input.
enum class InputMode {
  /// One GAF image per content through the shared model, one logit each.
  per_content_gaf,
  /// The whole history as one padded image, n_classes = N_c logits.
  count_matrix,
};

InputMode parse_input_mode(const std::string& name);
std::string to_string(InputMode mode);

/// Sets image_size and n_classes of `base` to fit the dataset geometry.
ViTConfig fit_config(const ViTConfig& base, int history_len, int n_contents, InputMode mode);

struct TrainOptions {
  int epochs = 10;
  int batch_size = 256;
  AdamOptions adam;
  std::uint64_t seed = 0;
  double validation_fraction = 0.3;
  double init_std = kInitStd;
  InputMode mode = InputMode::per_content_gaf;
  ImageScaling scaling = ImageScaling::sample_log;
};

struct EvalMetrics {
  double accuracy = 0.0;      // per-class binary accuracy at 0.5
  double loss = 0.0;          // mean BCE
  double topk_jaccard = 0.0;  // |pred Top-K ∩ true Top-K| / K, averaged
  std::size_t samples = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  EvalMetrics validation;
};

/// Samples ordered by (target, node): the first n_train form the training
/// split, the rest the held-out split.
struct TimeSplit {
  std::vector<std::size_t> order;
  std::size_t n_train = 0;
};

TimeSplit split_by_time(const Dataset& dataset, double validation_fraction);

struct TrainResult {
  ViTModel model;
  std::vector<EpochMetrics> history;
  TimeSplit split;
};

/// Mini-batch BCE + Adam over the training split. Batches shuffle training
/// units only; the batch gradient is summed in a fixed order.
TrainResult train(const Dataset& dataset, const ViTConfig& config, const TrainOptions& options);

/// Per-content scores (sigmoid probabilities) for one history.
std::vector<double> score_contents(const ViTModel& model, const CountMatrix& history, InputMode mode,
                                   ImageScaling scaling);

/// Indices of the k largest scores; ties go to the lower index.
std::vector<int> top_k_indices(std::span<const double> scores, int k);

EvalMetrics evaluate(const ViTModel& model, const Dataset& dataset, std::span<const std::size_t> indices, int k,
                     InputMode mode, ImageScaling scaling);
EvalMetrics evaluate(const ViTModel& model, const Dataset& dataset, int k, InputMode mode, ImageScaling scaling);

}  // namespace tedge
