#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stylespace/tensor/tensor.hpp"

namespace stylespace {

/// Index of the centroid [A, D] nearest to `code` over the first d entries;
/// ties go to the lowest index.
template <typename T>
std::size_t nearest_centroid(const T* code, const Tensor<T>& centroids, std::size_t d);

/// Nearest-centroid labels for every row of codes [N, >= d].
template <typename T>
std::vector<std::size_t> nearest_centroid_classify(const Tensor<T>& codes, const Tensor<T>& centroids,
                                                   std::size_t d);

template <typename T>
double classification_accuracy(const Tensor<T>& codes, const Tensor<T>& centroids,
                               const std::vector<std::size_t>& labels, std::size_t d);

struct EvalResult {
  std::string method;
  std::size_t dims = 0;
  double accuracy = 0;
  double ratio = 0;
};

/// Accuracy per prefix length; `dims` must be ascending.
template <typename T>
std::vector<EvalResult> accuracy_vs_dims(const Tensor<T>& codes, const Tensor<T>& centroids,
                                         const std::vector<std::size_t>& labels,
                                         const std::vector<std::size_t>& dims,
                                         const std::string& method);

/// Mean squared distance of codes to their artist's mean code, divided by the
/// mean squared distance over ordered cross-artist pairs, using the first d entries.
template <typename T>
double variance_ratio(const Tensor<T>& codes, const std::vector<std::size_t>& labels, std::size_t d);

/// Per-class mean codes [A, D]; classes without samples get zero rows.
template <typename T>
Tensor<T> class_means(const Tensor<T>& codes, const std::vector<std::size_t>& labels,
                      std::size_t num_classes);

/// Writes method,dims,accuracy rows, or method,dims,ratio when `ratio` is set.
void write_eval_csv(const std::string& path, const std::vector<EvalResult>& rows, bool ratio);

}  // namespace stylespace
