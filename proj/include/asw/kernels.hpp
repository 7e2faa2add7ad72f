#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>

// Scalar float64 building blocks shared by the forward and backward passes.
// Loop order is fixed so every output element is accumulated in the same
// order no matter how many rows are processed together.
namespace asw::kernels {

inline constexpr double kLayerNormEps = 1e-5;

// y = x * W (+ bias), W row-major in x out.
inline void vec_mat(std::span<const double> x, const double* w, std::size_t in, std::size_t out,
                    const double* bias, std::span<double> y) noexcept {
  for (std::size_t j = 0; j < out; ++j) {
    y[j] = bias != nullptr ? bias[j] : 0.0;
  }
  for (std::size_t k = 0; k < in; ++k) {
    const double xk = x[k];
    const double* wk = w + k * out;
    for (std::size_t j = 0; j < out; ++j) {
      y[j] += xk * wk[j];
    }
  }
}

// dx += dy * W^T
inline void vec_mat_t_acc(std::span<const double> dy, const double* w, std::size_t in,
                          std::size_t out, std::span<double> dx) noexcept {
  for (std::size_t k = 0; k < in; ++k) {
    const double* wk = w + k * out;
    double s = 0.0;
    for (std::size_t j = 0; j < out; ++j) {
      s += dy[j] * wk[j];
    }
    dx[k] += s;
  }
}

// dW += x^T dy
inline void outer_acc(std::span<const double> x, std::span<const double> dy, std::size_t in,
                      std::size_t out, double* dw) noexcept {
  for (std::size_t k = 0; k < in; ++k) {
    const double xk = x[k];
    double* row = dw + k * out;
    for (std::size_t j = 0; j < out; ++j) {
      row[j] += xk * dy[j];
    }
  }
}

// Returns 1/sqrt(var + eps); writes the normalized input and the affine output.
inline double layer_norm(std::span<const double> x, std::span<const double> gain,
                         std::span<const double> bias, std::span<double> xhat,
                         std::span<double> y) noexcept {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean += x[i];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < n; ++i) {
    xhat[i] = (x[i] - mean) * rstd;
    y[i] = xhat[i] * gain[i] + bias[i];
  }
  return rstd;
}

// Given dy for y = LN(x), accumulates dx and (optionally) gain/bias grads.
inline void layer_norm_backward(std::span<const double> dy, std::span<const double> xhat,
                                double rstd, std::span<const double> gain, std::span<double> dx,
                                double* dgain, double* dbias) noexcept {
  const std::size_t n = dy.size();
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dxh = dy[i] * gain[i];
    mean_dxhat += dxh;
    mean_dxhat_xhat += dxh * xhat[i];
  }
  mean_dxhat /= static_cast<double>(n);
  mean_dxhat_xhat /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dxh = dy[i] * gain[i];
    dx[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
  }
  if (dgain != nullptr) {
    for (std::size_t i = 0; i < n; ++i) {
      dgain[i] += dy[i] * xhat[i];
      dbias[i] += dy[i];
    }
  }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double u) noexcept {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u)));
}

inline double gelu_grad(double u) noexcept {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

}  // namespace asw::kernels
