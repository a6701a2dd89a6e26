#include "lwfs/tensor.hpp"

#include <cmath>
#include <sstream>

namespace lwfs {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match buffer of " +
                         std::to_string(data_.size()) + " scalars");
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& t, std::size_t begin, std::size_t end) {
  if (t.rank() != 2 || begin >= end || end > t.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_str(t.shape()));
  }
  const std::size_t c = t.cols();
  std::vector<T> out(t.data().begin() + begin * c, t.data().begin() + end * c);
  return Tensor<T>({end - begin, c}, std::move(out));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& t, std::span<const std::size_t> index) {
  if (t.rank() != 2 || index.empty()) throw DimensionError("gather_rows on " + shape_str(t.shape()));
  const std::size_t c = t.cols();
  std::vector<T> out;
  out.reserve(index.size() * c);
  for (auto r : index) {
    if (r >= t.rows()) throw DimensionError("gather_rows index " + std::to_string(r) + " out of range");
    auto row = t.data().subspan(r * c, c);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor<T>({index.size(), c}, std::move(out));
}

template <typename T>
T sum_of_squares(const Tensor<T>& t) {
  T acc = 0;
  for (T v : t.data()) acc += v * v;
  return acc;
}

template <typename T>
double distance(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

#define LWFS_INSTANTIATE(T)                                                                 \
  template class Tensor<T>;                                                                 \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);           \
  template T sum_of_squares(const Tensor<T>&);                                              \
  template double distance(const Tensor<T>&, const Tensor<T>&);

LWFS_INSTANTIATE(float)
LWFS_INSTANTIATE(double)

}  // namespace lwfs
