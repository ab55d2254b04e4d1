#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace tkf {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr int kFusedDim = 512;
inline constexpr Eigen::Index kConcatDim = 778 + 2048 + 768;
static_assert(kConcatDim == 3594);

class FusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-column (x - mean) / population stddev. Constant columns become zero.
Matrix zscore_columns(const Matrix& data);

/// Row-wise [color | structural | semantic].
Matrix concat_modalities(const Matrix& color, const Matrix& structural, const Matrix& semantic);

struct PcaModel {
  Vector mean;
  /// k x d, orthonormal rows.
  Matrix components;
  /// Sample variance (divide by n - 1) along each component, non-increasing.
  Vector explained_variance;

  Eigen::Index k() const noexcept { return components.rows(); }
  Eigen::Index dim() const noexcept { return mean.size(); }
};

/// Top right singular vectors of the centered data. The retained count is
/// min(k, n - 1, d). Each component is sign-normalized so that its entry of
/// largest magnitude is positive. Requires n >= 2.
PcaModel pca_fit(const Matrix& data, int k = kFusedDim);

/// (data - mean) * components^T.
Matrix pca_transform(const PcaModel& model, const Matrix& data);

struct ModalFeatures {
  std::vector<std::int64_t> sample_indices;
  Matrix color;       // n x 778
  Matrix structural;  // n x 2048
  Matrix semantic;    // n x 768
};

struct FusedEmbedding {
  std::int64_t sample_index = 0;
  std::vector<double> vector;
};

struct FusionResult {
  std::vector<FusedEmbedding> embeddings;
  Matrix embedding_matrix;  // n x effective_k
  int effective_k = 0;
  PcaModel model;
};

/// z-score per modality, concatenate, fit PCA on this video's frames and
/// project. A single-frame video has no variance to fit and yields
/// zero-length embeddings (effective_k = 0).
FusionResult fuse(const ModalFeatures& features, int k = kFusedDim);

}  // namespace tkf
