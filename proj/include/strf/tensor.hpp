// Dense row-major tensors templated on scalar type.
#ifndef STRF_TENSOR_HPP
#define STRF_TENSOR_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace strf {

// Error taxonomy shared by every module.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct EvaluationError : Error {
  using Error::Error;
};
struct StorageError : Error {
  using Error::Error;
};
struct LoadError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

using Dims = std::vector<std::size_t>;

inline std::size_t element_count(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ')';
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Dims dims, Scalar fill = Scalar(0))
      : dims_(std::move(dims)), data_(element_count(dims_), fill) {
    check_extents();
  }

  Tensor(Dims dims, std::vector<Scalar> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != element_count(dims_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + to_string(dims_));
  }

  static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }
  static Tensor ones(Dims dims) { return Tensor(std::move(dims), Scalar(1)); }

  // Row-major matrix literal, mostly for tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<Scalar> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
      if (row.size() != n) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({m, n}, std::move(data));
  }

  const Dims& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  std::vector<Scalar>& storage() { return data_; }
  const std::vector<Scalar>& storage() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  template <typename... Index>
  Scalar& operator()(Index... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Index>
  const Scalar& operator()(Index... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != dims_.size())
      throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor dims " +
                       to_string(dims_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= dims_[axis])
        throw ShapeError("index out of range on axis " + std::to_string(axis) + " of " +
                         to_string(dims_));
      off = off * dims_[axis] + i;
      ++axis;
    }
    return off;
  }

  Tensor reshaped(Dims dims) const {
    if (element_count(dims) != size())
      throw ShapeError("cannot reshape " + to_string(dims_) + " to " + to_string(dims));
    return Tensor(std::move(dims), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(dims_, std::move(out));
  }

  // Rank-2 view as an Eigen row-major matrix.
  MatrixMap<Scalar> as_matrix() {
    require_rank(2);
    return MatrixMap<Scalar>(data_.data(), Eigen::Index(dims_[0]), Eigen::Index(dims_[1]));
  }
  ConstMatrixMap<Scalar> as_matrix() const {
    require_rank(2);
    return ConstMatrixMap<Scalar>(data_.data(), Eigen::Index(dims_[0]), Eigen::Index(dims_[1]));
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_dims(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& other) {
    require_same_dims(other, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }
  Tensor& operator*=(Scalar s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, Scalar s) { return a *= s; }
  friend Tensor operator*(Scalar s, Tensor a) { return a *= s; }

  bool operator==(const Tensor& other) const = default;

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  void require_rank(std::size_t r) const {
    if (dims_.size() != r)
      throw ShapeError("expected rank " + std::to_string(r) + ", got dims " + to_string(dims_));
  }

  void require_same_dims(const Tensor& other, const char* what) const {
    if (dims_ != other.dims_)
      throw ShapeError(std::string(what) + ": dims " + to_string(dims_) + " vs " +
                       to_string(other.dims_));
  }

 private:
  void check_extents() const {
    for (std::size_t d : dims_)
      if (d == 0) throw ShapeError("tensor extents must be positive, got " + to_string(dims_));
  }

  Dims dims_;
  std::vector<Scalar> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  a.require_same_dims(b, "max_abs_diff");
  Scalar m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace strf

#endif  // STRF_TENSOR_HPP
