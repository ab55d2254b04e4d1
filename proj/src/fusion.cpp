#include "tkf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

namespace tkf {

Matrix zscore_columns(const Matrix& data) {
  const Eigen::Index n = data.rows();
  Matrix out = Matrix::Zero(n, data.cols());
  if (n == 0) return out;
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const auto col = data.col(j);
    if (col.maxCoeff() == col.minCoeff()) continue;
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(n);
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) continue;
    out.col(j) = (col.array() - mean) / sd;
  }
  return out;
}

Matrix concat_modalities(const Matrix& color, const Matrix& structural, const Matrix& semantic) {
  if (color.rows() != structural.rows() || color.rows() != semantic.rows())
    throw FusionError("row count mismatch: " + std::to_string(color.rows()) + "/" +
                      std::to_string(structural.rows()) + "/" + std::to_string(semantic.rows()));
  Matrix out(color.rows(), color.cols() + structural.cols() + semantic.cols());
  out << color, structural, semantic;
  return out;
}

PcaModel pca_fit(const Matrix& data, int k) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (n < 2) throw FusionError("PCA needs at least 2 rows, got " + std::to_string(n));
  if (k < 1) throw FusionError("PCA component count must be positive");

  PcaModel model;
  model.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::Index keep = std::min<Eigen::Index>({static_cast<Eigen::Index>(k), n - 1, d});
  const Eigen::VectorXd& sv = svd.singularValues();
  const Eigen::MatrixXd& v = svd.matrixV();

  model.components.resize(keep, d);
  model.explained_variance.resize(keep);
  for (Eigen::Index c = 0; c < keep; ++c) {
    Eigen::VectorXd comp = v.col(c);
    Eigen::Index arg = 0;
    comp.cwiseAbs().maxCoeff(&arg);
    if (comp(arg) < 0.0) comp = -comp;
    model.components.row(c) = comp.transpose();
    const double s = c < sv.size() ? sv(c) : 0.0;
    model.explained_variance(c) = s * s / static_cast<double>(n - 1);
  }
  return model;
}

Matrix pca_transform(const PcaModel& model, const Matrix& data) {
  if (data.cols() != model.dim())
    throw FusionError("dimension mismatch: data has " + std::to_string(data.cols()) +
                      " columns, model expects " + std::to_string(model.dim()));
  // Row at a time so equal input rows project to bit-identical outputs.
  Matrix out(data.rows(), model.k());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const Eigen::RowVectorXd centered = data.row(i) - model.mean.transpose();
    for (Eigen::Index c = 0; c < model.k(); ++c) out(i, c) = centered.dot(model.components.row(c));
  }
  return out;
}

FusionResult fuse(const ModalFeatures& features, int k) {
  const Eigen::Index n = features.color.rows();
  if (features.color.cols() != 778 || features.structural.cols() != 2048 ||
      features.semantic.cols() != 768)
    throw FusionError("modal widths must be 778/2048/768, got " +
                      std::to_string(features.color.cols()) + "/" +
                      std::to_string(features.structural.cols()) + "/" +
                      std::to_string(features.semantic.cols()));
  if (static_cast<Eigen::Index>(features.sample_indices.size()) != n)
    throw FusionError("sample index count does not match feature rows");
  if (n == 0) throw FusionError("no frames to fuse");

  const Matrix fused = concat_modalities(zscore_columns(features.color),
                                         zscore_columns(features.structural),
                                         zscore_columns(features.semantic));
  FusionResult result;
  if (n == 1) {
    result.embedding_matrix = Matrix(1, 0);
    result.embeddings.push_back({features.sample_indices[0], {}});
    result.model.mean = fused.row(0).transpose();
    result.model.components = Matrix(0, fused.cols());
    result.model.explained_variance = Vector(0);
    return result;
  }

  result.model = pca_fit(fused, k);
  result.embedding_matrix = pca_transform(result.model, fused);
  result.effective_k = static_cast<int>(result.model.k());
  result.embeddings.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = result.embedding_matrix.row(i);
    result.embeddings.push_back(
        {features.sample_indices[static_cast<std::size_t>(i)], std::vector<double>(row.begin(), row.end())});
  }
  return result;
}

}  // namespace tkf
