#include "cfrl/tensor.hpp"

#include "cfrl/errors.hpp"

namespace cfrl {

NamedTensor tensor_from(const std::string& name, const Matrix& m) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

NamedTensor tensor_from(const std::string& name, const RowVector& v) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<std::size_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

NamedTensor scalar_tensor(const std::string& name, std::vector<double> values) {
  NamedTensor t;
  t.name = name;
  t.dims = {values.size()};
  t.data = std::move(values);
  return t;
}

const NamedTensor& require_tensor(const TensorMap& tensors, const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
  if (it->second.element_count() != it->second.data.size())
    throw DataError("tensor '" + name + "' has inconsistent dims");
  return it->second;
}

Matrix matrix_from(const NamedTensor& t) {
  if (t.dims.size() != 2) throw DataError("tensor '" + t.name + "' is not rank 2");
  Matrix m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::copy(t.data.begin(), t.data.end(), m.data());
  return m;
}

RowVector row_vector_from(const NamedTensor& t) {
  if (t.dims.size() != 1) throw DataError("tensor '" + t.name + "' is not rank 1");
  RowVector v(static_cast<Eigen::Index>(t.dims[0]));
  std::copy(t.data.begin(), t.data.end(), v.data());
  return v;
}

}  // namespace cfrl
