#pragma once

// Dense numerical core. Every forward op used by the model ships with an
// exact analytical backward; finite_diff_check verifies them.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgnn::diff {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-owning row-major matrix view.
struct MatrixView {
  std::span<const double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double operator()(std::size_t r, std::size_t c) const {
    return values[r * cols + c];
  }
  std::span<const double> row(std::size_t r) const {
    return values.subspan(r * cols, cols);
  }
};

/// Owning row-major matrix of 64-bit floats.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) {
    return values_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return std::span<double>(values_).subspan(r * cols_, cols_);
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols_, cols_);
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  MatrixView view() const { return {values_, rows_, cols_}; }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Kernels used in hot loops. No shape checks; callers guarantee conformity.

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// y += scale * A x
inline void matvec_accumulate(MatrixView a, std::span<const double> x,
                              double scale, std::span<double> y) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* row = a.values.data() + i * a.cols;
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols; ++k) s += row[k] * x[k];
    y[i] += scale * s;
  }
}

/// dx += scale * A^T g
inline void matvec_transposed_accumulate(MatrixView a, std::span<const double> g,
                                         double scale, std::span<double> dx) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double gi = scale * g[i];
    if (gi == 0.0) continue;
    const double* row = a.values.data() + i * a.cols;
    for (std::size_t k = 0; k < a.cols; ++k) dx[k] += row[k] * gi;
  }
}

/// dA += scale * g x^T, with dA row-major (g.size() x x.size()).
inline void outer_accumulate(std::span<const double> g, std::span<const double> x,
                             double scale, std::span<double> da) {
  const std::size_t cols = x.size();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = scale * g[i];
    if (gi == 0.0) continue;
    double* row = da.data() + i * cols;
    for (std::size_t k = 0; k < cols; ++k) row[k] += gi * x[k];
  }
}

// ---------------------------------------------------------------------------
// matvec

std::vector<double> matvec(MatrixView a, std::span<const double> x);

struct MatvecGrad {
  DenseMatrix d_matrix;         // g x^T
  std::vector<double> d_input;  // A^T g
};

MatvecGrad matvec_backward(MatrixView a, std::span<const double> x,
                           std::span<const double> upstream);

// ---------------------------------------------------------------------------
// leaky ReLU: max(x, alpha x). Derivative at exactly 0 is taken as 1.

inline double leaky_relu(double x, double alpha) {
  return x >= 0.0 ? x : alpha * x;
}
inline double leaky_relu_derivative(double x, double alpha) {
  return x >= 0.0 ? 1.0 : alpha;
}

std::vector<double> leaky_relu(std::span<const double> x, double alpha);
std::vector<double> leaky_relu_backward(std::span<const double> x,
                                        std::span<const double> upstream,
                                        double alpha);

// ---------------------------------------------------------------------------
// Logistic functions, stable for large |x|.

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double sigmoid_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}
/// log(1 + e^x)
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
/// log sigmoid(x) = -softplus(-x)
inline double log_sigmoid(double x) { return -softplus(-x); }

// ---------------------------------------------------------------------------
// Layer normalization: scale * (x - mean) / sqrt(var + eps) + shift, with the
// population variance of x.

struct LayerNormStats {
  double mean = 0.0;
  double inv_std = 0.0;
};

/// Writes the normalized (pre-scale) vector into `normalized` and the affine
/// output into `out`. Either output may alias the other but not `x`.
LayerNormStats layer_normalize(std::span<const double> x,
                               std::span<const double> scale,
                               std::span<const double> shift, double eps,
                               std::span<double> normalized,
                               std::span<double> out);

std::vector<double> layer_normalize(std::span<const double> x,
                                    std::span<const double> scale,
                                    std::span<const double> shift, double eps);

/// Accumulates into d_input, d_scale, d_shift. d_scale/d_shift may be empty
/// when the affine parameters are fixed.
void layer_normalize_backward(std::span<const double> normalized,
                              const LayerNormStats& stats,
                              std::span<const double> scale,
                              std::span<const double> upstream,
                              std::span<double> d_input,
                              std::span<double> d_scale,
                              std::span<double> d_shift);

// ---------------------------------------------------------------------------
// Finite differences

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  double worst_analytical = 0.0;
  double worst_numerical = 0.0;
  bool passed = false;
  std::vector<double> numerical;
};

/// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kFiniteDiffAbsFloor = 1e-6;

/// Central differences of f at params along every coordinate (or the given
/// subset), compared against `analytical` (same length as params).
FiniteDiffReport finite_diff_check(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, std::span<const double> analytical,
    double h, double tol, std::span<const std::size_t> coordinates = {});

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n)
      : first_moment(n, 0.0), second_moment(n, 0.0) {}

  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update in place. Throws NumericError on a
/// non-finite gradient (params and state are left untouched).
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, double lr);

}  // namespace dgnn::diff
