#include <random>

#include <gtest/gtest.h>

#include "tkf/fusion.hpp"

namespace tkf {
namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

TEST(ZScore, MeanZeroUnitVarianceConstantZero) {
  std::mt19937 rng(1);
  Matrix x = random_matrix(37, 6, rng, 5.0);
  x.col(2).setConstant(4.2);
  x.col(4) = x.col(4).array() * 1e3 + 7.0;
  const Matrix z = zscore_columns(x);
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double mean = z.col(c).mean();
    const double var = (z.col(c).array() - mean).square().mean();
    if (c == 2) {
      EXPECT_TRUE(z.col(c).isZero(0.0));
      continue;
    }
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(Concat, OrderAndMismatch) {
  Matrix a = Matrix::Constant(2, 1, 1.0), b = Matrix::Constant(2, 2, 2.0), c = Matrix::Constant(2, 1, 3.0);
  const Matrix m = concat_modalities(a, b, c);
  ASSERT_EQ(m.cols(), 4);
  EXPECT_EQ(m(1, 0), 1.0);
  EXPECT_EQ(m(1, 2), 2.0);
  EXPECT_EQ(m(1, 3), 3.0);
  EXPECT_THROW(concat_modalities(a, Matrix::Zero(3, 2), c), FusionError);
}

TEST(Pca, ComponentsOrthonormal) {
  std::mt19937 rng(2);
  const Matrix x = random_matrix(40, 25, rng);
  const PcaModel m = pca_fit(x, 10);
  ASSERT_EQ(m.k(), 10);
  const Matrix gram = m.components * m.components.transpose();
  EXPECT_LT((gram - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-6);
  for (Eigen::Index i = 1; i < m.k(); ++i) EXPECT_GE(m.explained_variance(i - 1), m.explained_variance(i));
}

TEST(Pca, PreservesDistancesOnLowRankData) {
  std::mt19937 rng(3);
  const Matrix x = random_matrix(30, 4, rng) * random_matrix(4, 50, rng);  // rank 4
  const PcaModel m = pca_fit(x, 8);
  const Matrix y = pca_transform(m, x);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j)
      worst = std::max(worst, std::abs((x.row(i) - x.row(j)).norm() - (y.row(i) - y.row(j)).norm()));
  EXPECT_LT(worst, 1e-6);
}

TEST(Pca, ReconstructionErrorNonIncreasingInK) {
  std::mt19937 rng(4);
  const Matrix x = random_matrix(25, 12, rng);
  double previous = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 12; ++k) {
    const PcaModel m = pca_fit(x, k);
    const Matrix y = pca_transform(m, x);
    Matrix recon = y * m.components;
    recon.rowwise() += m.mean.transpose();
    const double err = (recon - x).squaredNorm();
    EXPECT_LE(err, previous + 1e-9) << "k = " << k;
    previous = err;
  }
}

TEST(Pca, RetainedCountAndSignConvention) {
  std::mt19937 rng(5);
  const Matrix x = random_matrix(6, 20, rng);
  const PcaModel m = pca_fit(x, 512);
  EXPECT_EQ(m.k(), 5);  // n - 1
  for (Eigen::Index r = 0; r < m.k(); ++r) {
    Eigen::Index idx;
    m.components.row(r).cwiseAbs().maxCoeff(&idx);
    EXPECT_GT(m.components(r, idx), 0.0);
  }
  EXPECT_THROW(pca_fit(x.topRows(1), 3), FusionError);
  EXPECT_THROW(pca_transform(m, Matrix::Zero(2, 3)), FusionError);
}

ModalFeatures random_features(Eigen::Index n, std::mt19937& rng) {
  ModalFeatures f;
  for (Eigen::Index i = 0; i < n; ++i) f.sample_indices.push_back(i);
  f.color = random_matrix(n, 778, rng);
  f.structural = random_matrix(n, 2048, rng);
  f.semantic = random_matrix(n, 768, rng);
  return f;
}

TEST(Fuse, DimensionContract) {
  std::mt19937 rng(6);
  for (Eigen::Index n : {2, 5, 40}) {
    const FusionResult r = fuse(random_features(n, rng));
    EXPECT_EQ(r.model.dim(), kConcatDim);
    EXPECT_EQ(r.effective_k, std::min<int>(512, static_cast<int>(n) - 1));
    ASSERT_EQ(r.embeddings.size(), static_cast<std::size_t>(n));
    for (const auto& e : r.embeddings) EXPECT_EQ(e.vector.size(), static_cast<std::size_t>(r.effective_k));
    EXPECT_EQ(r.embedding_matrix.rows(), n);
    EXPECT_EQ(r.embedding_matrix.cols(), r.effective_k);
  }
}

TEST(Fuse, SingleFrameAndValidation) {
  std::mt19937 rng(7);
  const FusionResult one = fuse(random_features(1, rng));
  EXPECT_EQ(one.effective_k, 0);
  ASSERT_EQ(one.embeddings.size(), 1u);
  EXPECT_TRUE(one.embeddings[0].vector.empty());

  ModalFeatures bad = random_features(3, rng);
  bad.semantic = random_matrix(3, 767, rng);
  EXPECT_THROW(fuse(bad), FusionError);
  EXPECT_THROW(fuse(ModalFeatures{}), FusionError);
}

TEST(Fuse, ModalityScaleDoesNotLeak) {
  // z-scoring per modality makes the result invariant to per-column affine rescaling.
  std::mt19937 rng(8);
  ModalFeatures f = random_features(12, rng);
  const FusionResult a = fuse(f, 6);
  f.structural = f.structural.array() * 1000.0 + 3.0;
  const FusionResult b = fuse(f, 6);
  EXPECT_LT((a.embedding_matrix - b.embedding_matrix).cwiseAbs().maxCoeff(), 1e-8);
}

}  // namespace
}  // namespace tkf
