#include "tedge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "binary_io.hpp"

namespace tedge {

WindowMatrix window_aggregate(const RequestMatrix& requests, int window_len) {
  const auto T = requests.data.rows();
  const auto n_contents = requests.data.cols();
  if (window_len < 1) throw std::invalid_argument("window_aggregate: window length must be >= 1");
  if (static_cast<std::size_t>(window_len) > T) {
    throw std::invalid_argument("window_aggregate: window length " + std::to_string(window_len) +
                                " exceeds horizon " + std::to_string(T));
  }
  const std::size_t n_windows = T / static_cast<std::size_t>(window_len);
  WindowMatrix out{CountMatrix(n_windows, n_contents, 0), window_len};
  for (std::size_t t = 0; t < n_windows * window_len; ++t) {
    auto dst = out.counts.row(t / window_len);
    const auto src = requests.data.row(t);
    for (std::size_t c = 0; c < n_contents; ++c) dst[c] += src[c];
  }
  return out;
}

WindowMatrix window_counts(const RequestLog& log, int window_len) {
  log.validate();
  if (window_len < 1) throw std::invalid_argument("window_counts: window length must be >= 1");
  if (window_len > log.horizon) {
    throw std::invalid_argument("window_counts: window length " + std::to_string(window_len) +
                                " exceeds horizon " + std::to_string(log.horizon));
  }
  const auto n_windows = static_cast<std::size_t>(log.horizon / window_len);
  WindowMatrix out{CountMatrix(n_windows, static_cast<std::size_t>(log.catalog_size), 0), window_len};
  // Indicator semantics: a content counts once per slot.
  std::vector<std::int64_t> last_slot(static_cast<std::size_t>(log.catalog_size), -1);
  for (const auto& e : log.events) {
    const auto slot = log.slot_of(e);
    const auto w = static_cast<std::size_t>(slot / window_len);
    if (w >= n_windows) break;
    auto& last = last_slot[e.content_id - 1];
    if (last == slot) continue;
    last = slot;
    ++out.counts(w, static_cast<std::size_t>(e.content_id - 1));
  }
  return out;
}

std::vector<Segment> segment_windows(const WindowMatrix& windows, int history_len) {
  if (history_len < 1) throw std::invalid_argument("segment_windows: history length must be >= 1");
  const int n_windows = windows.n_windows();
  if (n_windows <= history_len) {
    throw std::invalid_argument("segment_windows: need more than " + std::to_string(history_len) +
                                " windows, have " + std::to_string(n_windows));
  }
  const auto n_contents = static_cast<std::size_t>(windows.n_contents());
  std::vector<Segment> out;
  out.reserve(static_cast<std::size_t>(n_windows - history_len));
  for (int u = 0; u + history_len < n_windows; ++u) {
    Segment s{CountMatrix(static_cast<std::size_t>(history_len), n_contents), u + history_len};
    for (int r = 0; r < history_len; ++r) {
      const auto src = windows.counts.row(static_cast<std::size_t>(u + r));
      std::copy(src.begin(), src.end(), s.history.row(static_cast<std::size_t>(r)).begin());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> request_probabilities(std::span<const long long> row) {
  long long total = 0;
  for (auto v : row) {
    if (v < 0) throw std::invalid_argument("request_probabilities: negative count");
    total += v;
  }
  std::vector<double> p(row.size(), 0.0);
  if (total == 0) return p;
  for (std::size_t i = 0; i < row.size(); ++i) {
    p[i] = static_cast<double>(row[i]) / static_cast<double>(total);
  }
  return p;
}

double sample_skewness(std::span<const double> series) {
  if (series.empty()) throw std::invalid_argument("sample_skewness: empty series");
  const double n = static_cast<double>(series.size());
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / n;
  double m2 = 0.0;
  double m3 = 0.0;
  for (double x : series) {
    const double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (m2 < 1e-12) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

double temporal_skewness(std::span<const double> series) {
  if (series.empty()) throw std::invalid_argument("temporal_skewness: empty series");
  double mass = 0.0;
  double first = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i] < 0.0) throw std::invalid_argument("temporal_skewness: negative weight");
    mass += series[i];
    first += series[i] * static_cast<double>(i);
  }
  if (mass <= 0.0) return 0.0;
  const double mean = first / mass;
  double m2 = 0.0;
  double m3 = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double d = static_cast<double>(i) - mean;
    m2 += series[i] * d * d;
    m3 += series[i] * d * d * d;
  }
  m2 /= mass;
  m3 /= mass;
  if (m2 < 1e-12) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

SkewnessKind parse_skewness_kind(const std::string& name) {
  if (name == "temporal") return SkewnessKind::temporal;
  if (name == "value") return SkewnessKind::value;
  throw std::invalid_argument("unknown skewness kind '" + name + "' (expected temporal|value)");
}

std::string to_string(SkewnessKind kind) {
  return kind == SkewnessKind::temporal ? "temporal" : "value";
}

std::vector<std::uint8_t> label_top_k(const CountMatrix& history, int k, SkewnessKind kind) {
  const auto n_contents = static_cast<int>(history.cols());
  if (history.rows() == 0) throw std::invalid_argument("label_top_k: empty history");
  if (k < 1 || k > n_contents) {
    throw std::invalid_argument("label_top_k: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(n_contents) + "]");
  }
  const auto prob = request_probabilities(history.row(history.rows() - 1));

  std::vector<char> rising(static_cast<std::size_t>(n_contents));
  std::vector<double> series(history.rows());
  for (int c = 0; c < n_contents; ++c) {
    for (std::size_t r = 0; r < history.rows(); ++r) series[r] = static_cast<double>(history(r, c));
    const double skew = kind == SkewnessKind::temporal ? temporal_skewness(series) : sample_skewness(series);
    rising[c] = skew < 0.0;
  }

  std::vector<int> order(static_cast<std::size_t>(n_contents));
  std::iota(order.begin(), order.end(), 0);
  // Negative-skew contents first, then probability descending, then lower id.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (rising[a] != rising[b]) return rising[a] > rising[b];
    return prob[a] > prob[b];
  });
  std::vector<std::uint8_t> label(static_cast<std::size_t>(n_contents), 0);
  for (int i = 0; i < k; ++i) label[order[i]] = 1;
  return label;
}

GafImage gaf_from_normalized(std::span<const double> values) {
  const std::size_t l = values.size();
  std::vector<double> phi(l);
  for (std::size_t i = 0; i < l; ++i) phi[i] = std::acos(std::clamp(values[i], -1.0, 1.0));
  GafImage img{Tensor(l, l)};
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = i; j < l; ++j) {
      const double v = std::cos(phi[i] + phi[j]);
      img.pixels(i, j) = v;
      img.pixels(j, i) = v;
    }
  }
  return img;
}

GafImage gaf_encode(std::span<const double> series) {
  if (series.empty()) throw std::invalid_argument("gaf_encode: empty series");
  const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  const double range = *hi - *lo;
  std::vector<double> x(series.size(), 0.0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < series.size(); ++i) x[i] = 2.0 * (series[i] - *lo) / range - 1.0;
  }
  return gaf_from_normalized(x);
}

ImageScaling parse_image_scaling(const std::string& name) {
  if (name == "sample_log") return ImageScaling::sample_log;
  if (name == "sample_linear") return ImageScaling::sample_linear;
  if (name == "per_series") return ImageScaling::per_series;
  throw std::invalid_argument("unknown image scaling '" + name +
                              "' (expected sample_log|sample_linear|per_series)");
}

std::string to_string(ImageScaling scaling) {
  switch (scaling) {
    case ImageScaling::sample_log: return "sample_log";
    case ImageScaling::sample_linear: return "sample_linear";
    case ImageScaling::per_series: return "per_series";
  }
  return "?";
}

std::vector<GafImage> encode_content_images(const CountMatrix& history, ImageScaling scaling) {
  const std::size_t l = history.rows();
  const std::size_t n_contents = history.cols();
  std::vector<GafImage> images;
  images.reserve(n_contents);
  std::vector<double> series(l);
  if (scaling == ImageScaling::per_series) {
    for (std::size_t c = 0; c < n_contents; ++c) {
      for (std::size_t r = 0; r < l; ++r) series[r] = static_cast<double>(history(r, c));
      images.push_back(gaf_encode(series));
    }
    return images;
  }
  const long long peak = history.empty() ? 0 : *std::max_element(history.values().begin(), history.values().end());
  const bool log_scale = scaling == ImageScaling::sample_log;
  const double denom = log_scale ? std::log1p(static_cast<double>(peak)) : static_cast<double>(peak);
  for (std::size_t c = 0; c < n_contents; ++c) {
    for (std::size_t r = 0; r < l; ++r) {
      const double v = static_cast<double>(history(r, c));
      series[r] = denom > 0.0 ? (log_scale ? std::log1p(v) : v) / denom : 0.0;
    }
    images.push_back(gaf_from_normalized(series));
  }
  return images;
}

GafImage encode_content_image(const CountMatrix& history, std::size_t content, ImageScaling scaling) {
  if (content >= history.cols()) {
    throw std::out_of_range("encode_content_image: content index " + std::to_string(content) +
                            " outside catalog of " + std::to_string(history.cols()));
  }
  const std::size_t l = history.rows();
  std::vector<double> series(l);
  for (std::size_t r = 0; r < l; ++r) series[r] = static_cast<double>(history(r, content));
  if (scaling == ImageScaling::per_series) return gaf_encode(series);
  const long long peak = history.empty() ? 0 : *std::max_element(history.values().begin(), history.values().end());
  const bool log_scale = scaling == ImageScaling::sample_log;
  const double denom = log_scale ? std::log1p(static_cast<double>(peak)) : static_cast<double>(peak);
  for (double& v : series) v = denom > 0.0 ? (log_scale ? std::log1p(v) : v) / denom : 0.0;
  return gaf_from_normalized(series);
}

Tensor encode_count_matrix_image(const CountMatrix& history, int patch_size) {
  if (patch_size < 1) throw std::invalid_argument("encode_count_matrix_image: patch size must be >= 1");
  const std::size_t S = static_cast<std::size_t>(patch_size);
  const std::size_t need = std::max(history.rows(), history.cols());
  const std::size_t side = (need + S - 1) / S * S;
  Tensor img(side, side, 0.0);
  const long long peak = history.empty() ? 0 : *std::max_element(history.values().begin(), history.values().end());
  const double denom = std::log1p(static_cast<double>(std::max(peak, 0LL)));
  if (denom <= 0.0) return img;
  for (std::size_t r = 0; r < history.rows(); ++r) {
    for (std::size_t c = 0; c < history.cols(); ++c) {
      img(r, c) = std::log1p(static_cast<double>(history(r, c))) / denom;
    }
  }
  return img;
}

Dataset build_dataset(const WindowMatrix& windows, const DatasetOptions& options, int node_id) {
  const int l = options.history_len;
  auto segments = segment_windows(windows, l);
  if (options.k < 1 || options.k > windows.n_contents()) {
    throw std::invalid_argument("build_dataset: k=" + std::to_string(options.k) + " outside [1, " +
                                std::to_string(windows.n_contents()) + "]");
  }
  Dataset ds;
  ds.history_len = l;
  ds.n_contents = windows.n_contents();
  ds.k = options.k;
  ds.samples.reserve(segments.size());
  const auto n_contents = static_cast<std::size_t>(ds.n_contents);
  CountMatrix label_window(static_cast<std::size_t>(l), n_contents);
  for (auto& seg : segments) {
    // Label rows end at the target update time: [target - l + 1, target].
    for (int r = 0; r < l; ++r) {
      const auto src = windows.counts.row(static_cast<std::size_t>(seg.target - l + 1 + r));
      std::copy(src.begin(), src.end(), label_window.row(static_cast<std::size_t>(r)).begin());
    }
    Sample s;
    s.label = label_top_k(label_window, options.k, options.skewness);
    s.history = std::move(seg.history);
    s.target = seg.target;
    s.node_id = node_id;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void append_dataset(Dataset& into, const Dataset& other) {
  if (into.samples.empty() && into.history_len == 0) {
    into = other;
    return;
  }
  if (into.history_len != other.history_len || into.n_contents != other.n_contents || into.k != other.k) {
    throw std::invalid_argument("append_dataset: dataset geometry mismatch");
  }
  into.samples.insert(into.samples.end(), other.samples.begin(), other.samples.end());
}

namespace {
constexpr std::uint32_t kDatasetVersion = 1;
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  io::put_magic(out, "TDDS");
  io::put<std::uint32_t>(out, kDatasetVersion);
  io::put<std::int32_t>(out, dataset.history_len);
  io::put<std::int32_t>(out, dataset.n_contents);
  io::put<std::int32_t>(out, dataset.k);
  io::put<std::int64_t>(out, static_cast<std::int64_t>(dataset.samples.size()));
  for (const auto& s : dataset.samples) {
    io::put<std::int32_t>(out, s.node_id);
    io::put<std::int32_t>(out, s.target);
    for (long long v : s.history.values()) io::put<std::int32_t>(out, static_cast<std::int32_t>(v));
    for (auto b : s.label) io::put<std::uint8_t>(out, b);
  }
  if (!out) throw std::runtime_error("write_dataset: write failed");
}

Dataset read_dataset(std::istream& in) {
  io::expect_magic(in, "TDDS");
  const auto version = io::get<std::uint32_t>(in, "version");
  if (version != kDatasetVersion) {
    throw std::runtime_error("read_dataset: unsupported version " + std::to_string(version));
  }
  Dataset ds;
  ds.history_len = io::get<std::int32_t>(in, "history length");
  ds.n_contents = io::get<std::int32_t>(in, "catalog size");
  ds.k = io::get<std::int32_t>(in, "k");
  const auto m = io::get<std::int64_t>(in, "sample count");
  if (ds.history_len < 1 || ds.n_contents < 1 || ds.k < 1 || ds.k > ds.n_contents || m < 0) {
    throw std::runtime_error("read_dataset: corrupt header");
  }
  const auto l = static_cast<std::size_t>(ds.history_len);
  const auto n = static_cast<std::size_t>(ds.n_contents);
  ds.samples.resize(static_cast<std::size_t>(m));
  for (auto& s : ds.samples) {
    s.node_id = io::get<std::int32_t>(in, "node id");
    s.target = io::get<std::int32_t>(in, "target");
    s.history = CountMatrix(l, n);
    for (auto& v : s.history.values()) v = io::get<std::int32_t>(in, "history");
    s.label.resize(n);
    for (auto& b : s.label) b = io::get<std::uint8_t>(in, "label");
  }
  return ds;
}

}  // namespace tedge
