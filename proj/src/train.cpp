#include "tedge/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tedge/random.hpp"

namespace tedge {

InputMode parse_input_mode(const std::string& name) {
  if (name == "per_content_gaf") return InputMode::per_content_gaf;
  if (name == "count_matrix") return InputMode::count_matrix;
  throw std::invalid_argument("unknown input mode '" + name + "' (expected per_content_gaf or count_matrix)");
}

std::string to_string(InputMode mode) {
  return mode == InputMode::per_content_gaf ? "per_content_gaf" : "count_matrix";
}

ViTConfig fit_config(const ViTConfig& base, int history_len, int n_contents, InputMode mode) {
  ViTConfig config = base;
  if (mode == InputMode::per_content_gaf) {
    config.image_size = history_len;
    config.n_classes = 1;
  } else {
    const int need = std::max(history_len, n_contents);
    config.image_size = (need + config.patch_size - 1) / config.patch_size * config.patch_size;
    config.n_classes = n_contents;
  }
  config.validate();
  return config;
}

TimeSplit split_by_time(const Dataset& dataset, double validation_fraction) {
  if (dataset.samples.empty()) throw std::invalid_argument("empty dataset");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation_fraction must be in [0, 1)");
  }
  TimeSplit split;
  split.order.resize(dataset.samples.size());
  std::iota(split.order.begin(), split.order.end(), std::size_t{0});
  std::stable_sort(split.order.begin(), split.order.end(), [&](std::size_t a, std::size_t b) {
    const auto& sa = dataset.samples[a];
    const auto& sb = dataset.samples[b];
    return sa.target != sb.target ? sa.target < sb.target : sa.node_id < sb.node_id;
  });
  const auto m = split.order.size();
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(m) * validation_fraction));
  split.n_train = std::max<std::size_t>(1, m - n_val);
  return split;
}

namespace {

Tensor content_input(const Sample& sample, std::size_t content, ImageScaling scaling) {
  return encode_content_image(sample.history, content, scaling).pixels;
}

void check_geometry(const ViTModel& model, const Dataset& dataset, InputMode mode) {
  const auto& c = model.config;
  const ViTConfig want = fit_config(c, dataset.history_len, dataset.n_contents, mode);
  if (want.image_size != c.image_size || want.n_classes != c.n_classes) {
    throw std::invalid_argument("model geometry (image " + std::to_string(c.image_size) + ", classes " +
                                std::to_string(c.n_classes) + ") does not fit dataset (l=" +
                                std::to_string(dataset.history_len) + ", N_c=" +
                                std::to_string(dataset.n_contents) + ") in " + to_string(mode) + " mode");
  }
}

struct Unit {
  std::size_t sample;
  std::size_t content;  // unused in count_matrix mode
};

}  // namespace

std::vector<int> top_k_indices(std::span<const double> scores, int k) {
  if (k < 0 || static_cast<std::size_t>(k) > scores.size()) {
    throw std::invalid_argument("top_k_indices: k=" + std::to_string(k) + " outside [0, " +
                                std::to_string(scores.size()) + "]");
  }
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<double> score_contents(const ViTModel& model, const CountMatrix& history, InputMode mode,
                                   ImageScaling scaling) {
  std::vector<double> scores;
  if (mode == InputMode::count_matrix) {
    for (double z : forward(encode_count_matrix_image(history, model.config.patch_size), model)) {
      scores.push_back(sigmoid(z));
    }
    return scores;
  }
  scores.reserve(history.cols());
  for (std::size_t c = 0; c < history.cols(); ++c) {
    scores.push_back(sigmoid(forward(encode_content_image(history, c, scaling).pixels, model)[0]));
  }
  return scores;
}

EvalMetrics evaluate(const ViTModel& model, const Dataset& dataset, std::span<const std::size_t> indices, int k,
                     InputMode mode, ImageScaling scaling) {
  EvalMetrics m;
  if (indices.empty()) return m;
  check_geometry(model, dataset, mode);
  double loss = 0.0, correct = 0.0, jaccard = 0.0;
  std::size_t labels = 0;
  for (std::size_t i : indices) {
    const Sample& s = dataset.samples.at(i);
    std::vector<double> logits;
    if (mode == InputMode::count_matrix) {
      logits = forward(encode_count_matrix_image(s.history, model.config.patch_size), model);
    } else {
      logits.reserve(s.label.size());
      for (std::size_t c = 0; c < s.label.size(); ++c) logits.push_back(forward(content_input(s, c, scaling), model)[0]);
    }
    loss += bce_loss(logits, s.label).loss * static_cast<double>(logits.size());
    std::vector<double> scores(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c) {
      scores[c] = sigmoid(logits[c]);
      correct += ((scores[c] >= 0.5) == (s.label[c] != 0)) ? 1.0 : 0.0;
    }
    labels += logits.size();
    if (k > 0) {
      int inter = 0;
      for (int c : top_k_indices(scores, k)) inter += s.label[static_cast<std::size_t>(c)] ? 1 : 0;
      jaccard += static_cast<double>(inter) / k;
    }
  }
  m.samples = indices.size();
  m.loss = loss / static_cast<double>(labels);
  m.accuracy = correct / static_cast<double>(labels);
  m.topk_jaccard = jaccard / static_cast<double>(indices.size());
  return m;
}

EvalMetrics evaluate(const ViTModel& model, const Dataset& dataset, int k, InputMode mode, ImageScaling scaling) {
  std::vector<std::size_t> all(dataset.samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (all.empty()) throw std::invalid_argument("evaluate: empty dataset");
  return evaluate(model, dataset, all, k, mode, scaling);
}

TrainResult train(const Dataset& dataset, const ViTConfig& config, const TrainOptions& options) {
  if (dataset.samples.empty()) throw std::invalid_argument("train: empty dataset");
  if (options.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (options.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");

  TrainResult result;
  result.model = init_model(fit_config(config, dataset.history_len, dataset.n_contents, options.mode), options.seed,
                            options.init_std);
  result.split = split_by_time(dataset, options.validation_fraction);
  ViTModel& model = result.model;
  const auto& order = result.split.order;
  const std::span<const std::size_t> train_idx(order.data(), result.split.n_train);
  const std::span<const std::size_t> val_idx(order.data() + result.split.n_train, order.size() - result.split.n_train);

  std::vector<Unit> units;
  for (std::size_t i : train_idx) {
    if (options.mode == InputMode::count_matrix) {
      units.push_back({i, 0});
    } else {
      for (std::size_t c = 0; c < static_cast<std::size_t>(dataset.n_contents); ++c) units.push_back({i, c});
    }
  }

  Rng shuffle_rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam;
  ViTParams grads = zero_params(model.config);
  ForwardCache cache;
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle_rng.shuffle(units);
    double loss_sum = 0.0, correct = 0.0, labels = 0.0;
    for (std::size_t begin = 0; begin < units.size(); begin += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(units.size(), begin + static_cast<std::size_t>(options.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - begin);
      for (Tensor* t : grads.tensors()) t->fill(0.0);
      for (std::size_t u = begin; u < end; ++u) {
        const Sample& s = dataset.samples[units[u].sample];
        std::vector<double> logits;
        LossResult lr;
        if (options.mode == InputMode::count_matrix) {
          logits = forward(encode_count_matrix_image(s.history, model.config.patch_size), model, &cache);
          lr = bce_loss(logits, s.label);
          for (std::size_t c = 0; c < logits.size(); ++c) {
            correct += ((logits[c] >= 0.0) == (s.label[c] != 0)) ? 1.0 : 0.0;
          }
        } else {
          logits = forward(content_input(s, units[u].content, options.scaling), model, &cache);
          const std::uint8_t y = s.label[units[u].content];
          lr = bce_loss(logits, std::span<const std::uint8_t>(&y, 1));
          correct += ((logits[0] >= 0.0) == (y != 0)) ? 1.0 : 0.0;
        }
        labels += static_cast<double>(logits.size());
        loss_sum += lr.loss;
        for (double& g : lr.grad) g *= inv_batch;
        backward(model, cache, lr.grad, grads);
      }
      adam_step(model.params, grads, adam, options.adam);
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(units.size());
    em.train_accuracy = correct / labels;
    em.validation = evaluate(model, dataset, val_idx, dataset.k, options.mode, options.scaling);
    result.history.push_back(em);
  }
  return result;
}

}  // namespace tedge
