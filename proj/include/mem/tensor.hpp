#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mem {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op would produce NaN or Inf from finite inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

using BackwardFn =
    std::function<std::vector<std::vector<double>>(const std::vector<double>& grad_out)>;

struct Node {
  std::string_view op;
  std::vector<std::shared_ptr<Node>> parents;  // null entries for inputs without grad
  BackwardFn backward;                         // empty for leaves
  std::size_t numel = 0;
};

}  // namespace detail

/// Dense row-major tensor of doubles. Values are immutable once constructed;
/// a tensor that requires grad carries a node in the dynamic graph.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return data_->size(); }
  /// Size of the last dimension; rows() * cols() == numel().
  std::size_t cols() const;
  std::size_t rows() const;

  std::span<const double> data() const { return *data_; }
  const std::vector<double>& vec() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const { return node_ != nullptr; }
  /// Fresh leaf sharing this tensor's storage.
  Tensor requiring_grad() const;
  Tensor detached() const;

  /// Copy with a single element replaced; used by gradient probes.
  Tensor with_element(std::size_t i, double value) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Attach an op result to the graph when any input requires grad.
  static Tensor record(Tensor value, std::string_view op, const std::vector<Tensor>& inputs,
                       detail::BackwardFn backward);

  friend bool bit_equal(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::shared_ptr<detail::Node> node_;
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Exact equality of shape and every stored double.
bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Forward ops. All are pure; results are recorded on the graph when an input
// requires grad. Reductions accumulate left to right.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x[rows x k] + b[k] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& b);
/// x·wᵀ (+ b): x[m x k], w[n x k], b[n].
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
inline constexpr double kRmsNormEps = 1e-6;
Tensor rms_norm(const Tensor& x, const Tensor& scale);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Rows [begin, begin+count) of a matrix view (rows x cols).
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Concatenate along the last dimension; every part has the same row count.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Average of the selected rows, shape [1 x cols].
Tensor mean_rows(const Tensor& x);
/// Mean over rows of -log softmax(logits)[target]; rows with target < 0 are skipped.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

class Gradients {
 public:
  /// Gradient with respect to t; zeros when t was not reached.
  Tensor of(const Tensor& t) const;
  std::size_t ops_replayed() const { return ops_replayed_; }

 private:
  friend class GradTape;
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
  std::size_t ops_replayed_ = 0;
};

/// Topologically ordered record of the ops that produced a scalar loss.
class GradTape {
 public:
  explicit GradTape(const Tensor& loss);
  std::size_t size() const { return order_.size(); }
  Gradients backward() const;

 private:
  Tensor loss_;
  std::vector<std::shared_ptr<detail::Node>> order_;  // inputs before consumers
};

Gradients backward(const Tensor& loss);

using ScalarFn = std::function<double(const Tensor&)>;
/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double step);

/// |a-b| / max(|a|, |b|, floor), maximised over elements.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6);

/// Sinusoidal encoding of |t| shifted so that t = 0 maps to the zero vector:
/// even slots sin(w_i |t|), odd slots cos(w_i |t|) - 1, w_i = 10000^(-2i/dim).
Tensor sinusoidal_embedding(int t, std::size_t dim);

}  // namespace mem
