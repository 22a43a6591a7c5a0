#include "mem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace mem {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() : shape_{1}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(d));
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("from_rows needs at least one row");
  std::vector<double> d;
  for (const auto& r : rows) {
    if (r.size() != rows[0].size()) throw ShapeError("ragged rows");
    d.insert(d.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows[0].size()}, std::move(d));
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size()) throw ShapeError("dimension index out of range");
  return shape_[i];
}

std::size_t Tensor::cols() const { return shape_.back(); }
std::size_t Tensor::rows() const { return numel() / cols(); }

double Tensor::at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::requiring_grad() const {
  Tensor t = detached();
  t.node_ = std::make_shared<detail::Node>();
  t.node_->op = "leaf";
  t.node_->numel = numel();
  return t;
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

Tensor Tensor::with_element(std::size_t i, double value) const {
  std::vector<double> d = *data_;
  d.at(i) = value;
  return Tensor(shape_, std::move(d));
}

Tensor Tensor::record(Tensor value, std::string_view op, const std::vector<Tensor>& inputs,
                      detail::BackwardFn backward) {
  for (double v : *value.data_) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + std::string(op));
  }
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return value;
  auto node = std::make_shared<detail::Node>();
  node->op = op;
  node->numel = value.numel();
  node->backward = std::move(backward);
  node->parents.reserve(inputs.size());
  for (const auto& in : inputs) node->parents.push_back(in.node_);
  value.node_ = std::move(node);
  return value;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape_ != b.shape_) return false;
  return std::memcmp(a.data_->data(), b.data_->data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.numel() != b.numel()) throw ShapeError("max_relative_error size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    m = std::max(m, std::abs(a[i] - b[i]) / denom);
  }
  return m;
}

Tensor sinusoidal_embedding(int t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ShapeError("sinusoidal_embedding needs a positive even dim, got " + std::to_string(dim));
  }
  if (t > 0) throw std::invalid_argument("sinusoidal_embedding expects t <= 0");
  const double pos = static_cast<double>(-t);
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    double freq = std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(dim));
    out[2 * i] = std::sin(freq * pos);
    out[2 * i + 1] = std::cos(freq * pos) - 1.0;
  }
  return Tensor({dim}, std::move(out));
}

}  // namespace mem
