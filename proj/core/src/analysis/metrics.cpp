#include "stylespace/analysis/metrics.hpp"

#include <fstream>
#include <map>

#include "stylespace/error.hpp"

namespace stylespace {
namespace {

template <typename T>
void check_codes(const Tensor<T>& codes, std::size_t d, const char* who) {
  if (codes.rank() != 2) throw ShapeError(std::string(who) + ": codes must be [N, D]");
  if (d == 0 || d > codes.dim(1)) {
    throw ConfigError(std::string(who) + ": prefix " + std::to_string(d) + " outside [1, " +
                      std::to_string(codes.dim(1)) + "]");
  }
}

}  // namespace

template <typename T>
std::size_t nearest_centroid(const T* code, const Tensor<T>& centroids, std::size_t d) {
  const std::size_t A = centroids.dim(0), D = centroids.dim(1);
  std::size_t best = 0;
  double best_dist = 0;
  for (std::size_t a = 0; a < A; ++a) {
    double dist = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = static_cast<double>(code[k]) - static_cast<double>(centroids[a * D + k]);
      dist += diff * diff;
    }
    if (a == 0 || dist < best_dist) {
      best = a;
      best_dist = dist;
    }
  }
  return best;
}

template <typename T>
std::vector<std::size_t> nearest_centroid_classify(const Tensor<T>& codes, const Tensor<T>& centroids,
                                                   std::size_t d) {
  check_codes(codes, d, "classify");
  if (centroids.rank() != 2 || centroids.dim(1) < d || centroids.dim(0) == 0) {
    throw ShapeError("classify: centroids must be [A, >= d]");
  }
  std::vector<std::size_t> out(codes.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = nearest_centroid(codes.raw() + i * codes.dim(1), centroids, d);
  }
  return out;
}

template <typename T>
double classification_accuracy(const Tensor<T>& codes, const Tensor<T>& centroids,
                               const std::vector<std::size_t>& labels, std::size_t d) {
  if (labels.size() != codes.dim(0)) throw ShapeError("accuracy: one label per code required");
  if (labels.empty()) return 0.0;
  const auto pred = nearest_centroid_classify(codes, centroids, d);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

template <typename T>
std::vector<EvalResult> accuracy_vs_dims(const Tensor<T>& codes, const Tensor<T>& centroids,
                                         const std::vector<std::size_t>& labels,
                                         const std::vector<std::size_t>& dims,
                                         const std::string& method) {
  std::vector<EvalResult> out;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i > 0 && dims[i] <= dims[i - 1]) throw ConfigError("accuracy_vs_dims: dims must ascend");
    out.push_back({method, dims[i], classification_accuracy(codes, centroids, labels, dims[i]), 0.0});
  }
  return out;
}

template <typename T>
Tensor<T> class_means(const Tensor<T>& codes, const std::vector<std::size_t>& labels,
                      std::size_t num_classes) {
  const std::size_t N = codes.dim(0), D = codes.dim(1);
  if (labels.size() != N) throw ShapeError("class_means: one label per code required");
  std::vector<double> acc(num_classes * D, 0.0);
  std::vector<std::size_t> count(num_classes, 0);
  for (std::size_t i = 0; i < N; ++i) {
    if (labels[i] >= num_classes) throw ConfigError("class_means: label out of range");
    ++count[labels[i]];
    for (std::size_t k = 0; k < D; ++k) acc[labels[i] * D + k] += codes[i * D + k];
  }
  Tensor<T> out(Shape{num_classes, D});
  for (std::size_t a = 0; a < num_classes; ++a) {
    if (count[a] == 0) continue;
    for (std::size_t k = 0; k < D; ++k) {
      out[a * D + k] = static_cast<T>(acc[a * D + k] / static_cast<double>(count[a]));
    }
  }
  return out;
}

template <typename T>
double variance_ratio(const Tensor<T>& codes, const std::vector<std::size_t>& labels, std::size_t d) {
  check_codes(codes, d, "variance_ratio");
  const std::size_t N = codes.dim(0), D = codes.dim(1);
  if (labels.size() != N) throw ShapeError("variance_ratio: one label per code required");
  // Per-class sums of x and ||x||^2 over the prefix.
  std::map<std::size_t, std::pair<std::vector<double>, double>> groups;
  std::map<std::size_t, std::size_t> counts;
  std::vector<double> total_sum(d, 0.0);
  double total_sq = 0;
  for (std::size_t i = 0; i < N; ++i) {
    auto& g = groups[labels[i]];
    if (g.first.empty()) g.first.assign(d, 0.0);
    ++counts[labels[i]];
    for (std::size_t k = 0; k < d; ++k) {
      const double x = codes[i * D + k];
      g.first[k] += x;
      g.second += x * x;
      total_sum[k] += x;
      total_sq += x * x;
    }
  }
  if (groups.size() < 2) throw ConfigError("variance_ratio: need at least two artists");
  auto sq_norm = [](const std::vector<double>& v) {
    double s = 0;
    for (const double x : v) s += x * x;
    return s;
  };
  const double n_total = static_cast<double>(N);
  double within = 0, within_pairs_sum = 0, within_pairs = 0;
  for (const auto& [label, g] : groups) {
    const double n = static_cast<double>(counts[label]);
    // sum ||x - mean||^2 = sum ||x||^2 - ||sum x||^2 / n
    within += g.second - sq_norm(g.first) / n;
    within_pairs_sum += 2 * n * g.second - 2 * sq_norm(g.first);
    within_pairs += n * n;
  }
  const double all_pairs_sum = 2 * n_total * total_sq - 2 * sq_norm(total_sum);
  const double cross = (all_pairs_sum - within_pairs_sum) / (n_total * n_total - within_pairs);
  const double numerator = std::max(0.0, within) / n_total;
  if (!(cross > 0)) throw NumericError("variance_ratio: all codes coincide across artists");
  return numerator / cross;
}

void write_eval_csv(const std::string& path, const std::vector<EvalResult>& rows, bool ratio) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << (ratio ? "method,dims,ratio\n" : "method,dims,accuracy\n");
  out.precision(10);
  for (const auto& r : rows) out << r.method << ',' << r.dims << ',' << (ratio ? r.ratio : r.accuracy) << '\n';
}

#define STYLESPACE_INSTANTIATE(T)                                                                   \
  template std::size_t nearest_centroid(const T*, const Tensor<T>&, std::size_t);                   \
  template std::vector<std::size_t> nearest_centroid_classify(const Tensor<T>&, const Tensor<T>&,   \
                                                              std::size_t);                         \
  template double classification_accuracy(const Tensor<T>&, const Tensor<T>&,                       \
                                          const std::vector<std::size_t>&, std::size_t);            \
  template std::vector<EvalResult> accuracy_vs_dims(const Tensor<T>&, const Tensor<T>&,             \
                                                    const std::vector<std::size_t>&,                \
                                                    const std::vector<std::size_t>&,                \
                                                    const std::string&);                            \
  template double variance_ratio(const Tensor<T>&, const std::vector<std::size_t>&, std::size_t);   \
  template Tensor<T> class_means(const Tensor<T>&, const std::vector<std::size_t>&, std::size_t);

STYLESPACE_INSTANTIATE(float)
STYLESPACE_INSTANTIATE(double)

}  // namespace stylespace
