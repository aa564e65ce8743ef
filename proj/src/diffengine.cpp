#include "dgnn/diffengine.hpp"

#include <algorithm>
#include <sstream>

namespace dgnn::diff {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols,
                         std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw ShapeError("DenseMatrix: value count does not match rows*cols");
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::vector<double> matvec(MatrixView a, std::span<const double> x) {
  if (a.cols != x.size() || a.values.size() != a.rows * a.cols) {
    throw ShapeError("matvec: shape mismatch");
  }
  std::vector<double> y(a.rows, 0.0);
  matvec_accumulate(a, x, 1.0, y);
  return y;
}

MatvecGrad matvec_backward(MatrixView a, std::span<const double> x,
                           std::span<const double> upstream) {
  if (a.cols != x.size() || a.rows != upstream.size()) {
    throw ShapeError("matvec_backward: shape mismatch");
  }
  MatvecGrad grad{DenseMatrix(a.rows, a.cols),
                  std::vector<double>(a.cols, 0.0)};
  outer_accumulate(upstream, x, 1.0, grad.d_matrix.values());
  matvec_transposed_accumulate(a, upstream, 1.0, grad.d_input);
  return grad;
}

std::vector<double> leaky_relu(std::span<const double> x, double alpha) {
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(),
                 [alpha](double v) { return leaky_relu(v, alpha); });
  return y;
}

std::vector<double> leaky_relu_backward(std::span<const double> x,
                                        std::span<const double> upstream,
                                        double alpha) {
  if (x.size() != upstream.size()) {
    throw ShapeError("leaky_relu_backward: shape mismatch");
  }
  std::vector<double> dx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx[i] = upstream[i] * leaky_relu_derivative(x[i], alpha);
  }
  return dx;
}

LayerNormStats layer_normalize(std::span<const double> x,
                               std::span<const double> scale,
                               std::span<const double> shift, double eps,
                               std::span<double> normalized,
                               std::span<double> out) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < n; ++i) {
    normalized[i] = (x[i] - mean) * inv_std;
  }
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = scale[i] * normalized[i] + shift[i];
  }
  return {mean, inv_std};
}

std::vector<double> layer_normalize(std::span<const double> x,
                                    std::span<const double> scale,
                                    std::span<const double> shift, double eps) {
  if (scale.size() != x.size() || shift.size() != x.size() || x.empty()) {
    throw ShapeError("layer_normalize: shape mismatch");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layer_normalize: eps <= 0");
  std::vector<double> normalized(x.size());
  std::vector<double> out(x.size());
  layer_normalize(x, scale, shift, eps, normalized, out);
  return out;
}

void layer_normalize_backward(std::span<const double> normalized,
                              const LayerNormStats& stats,
                              std::span<const double> scale,
                              std::span<const double> upstream,
                              std::span<double> d_input,
                              std::span<double> d_scale,
                              std::span<double> d_shift) {
  const std::size_t n = normalized.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  double mean_g = 0.0;
  double mean_gx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = upstream[i] * scale[i];
    mean_g += g;
    mean_gx += g * normalized[i];
  }
  mean_g *= inv_n;
  mean_gx *= inv_n;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = upstream[i] * scale[i];
    d_input[i] += stats.inv_std * (g - mean_g - normalized[i] * mean_gx);
  }
  if (!d_scale.empty()) {
    for (std::size_t i = 0; i < n; ++i) d_scale[i] += upstream[i] * normalized[i];
  }
  if (!d_shift.empty()) {
    for (std::size_t i = 0; i < n; ++i) d_shift[i] += upstream[i];
  }
}

FiniteDiffReport finite_diff_check(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, std::span<const double> analytical,
    double h, double tol, std::span<const std::size_t> coordinates) {
  if (analytical.size() != params.size()) {
    throw ShapeError("finite_diff_check: gradient size mismatch");
  }
  std::vector<std::size_t> coords(coordinates.begin(), coordinates.end());
  if (coords.empty()) {
    coords.resize(params.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  }

  FiniteDiffReport report;
  report.numerical.assign(params.size(), 0.0);
  std::vector<double> probe(params.begin(), params.end());
  for (std::size_t c : coords) {
    const double saved = probe[c];
    probe[c] = saved + h;
    const double up = f(probe);
    probe[c] = saved - h;
    const double down = f(probe);
    probe[c] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      std::ostringstream msg;
      msg << "finite_diff_check: non-finite evaluation at coordinate " << c;
      throw NumericError(msg.str());
    }
    const double numerical = (up - down) / (2.0 * h);
    report.numerical[c] = numerical;
    const double a = analytical[c];
    const double denom =
        std::max({std::abs(a), std::abs(numerical), kFiniteDiffAbsFloor});
    const double rel = std::abs(a - numerical) / denom;
    if (rel > report.max_rel_error || c == coords.front()) {
      report.max_rel_error = std::max(rel, report.max_rel_error);
      report.worst_coordinate = c;
      report.worst_analytical = a;
      report.worst_numerical = numerical;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, double lr) {
  if (params.size() != grads.size() ||
      state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: shape mismatch");
  }
  if (!(lr >= 0.0)) throw std::invalid_argument("adam_step: negative lr");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::ostringstream msg;
      msg << "adam_step: non-finite gradient at index " << i;
      throw NumericError(msg.str());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

}  // namespace dgnn::diff
