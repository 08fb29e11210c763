#pragma once

#include <Eigen/Core>

namespace sf3d::detail {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline MatrixMap as_matrix(float* data, Eigen::Index rows, Eigen::Index cols) { return {data, rows, cols}; }
inline ConstMatrixMap as_matrix(const float* data, Eigen::Index rows, Eigen::Index cols) { return {data, rows, cols}; }
inline Eigen::Map<const Eigen::RowVectorXf> as_row(const float* data, Eigen::Index n) { return {data, n}; }
inline Eigen::Map<Eigen::RowVectorXf> as_row(float* data, Eigen::Index n) { return {data, n}; }

}  // namespace sf3d::detail
