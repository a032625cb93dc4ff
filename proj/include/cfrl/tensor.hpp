#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace cfrl {

// Row-major 64-bit matrix used for every activation, parameter and batch.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using ColVector = Eigen::VectorXd;

// Flat named tensor, the unit stored in checkpoint containers.
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

using TensorMap = std::map<std::string, NamedTensor>;

NamedTensor tensor_from(const std::string& name, const Matrix& m);
NamedTensor tensor_from(const std::string& name, const RowVector& v);
NamedTensor scalar_tensor(const std::string& name, std::vector<double> values);

// Lookup helpers; throw DataError when the tensor is missing or misshapen.
const NamedTensor& require_tensor(const TensorMap& tensors, const std::string& name);
Matrix matrix_from(const NamedTensor& t);
RowVector row_vector_from(const NamedTensor& t);

}  // namespace cfrl
