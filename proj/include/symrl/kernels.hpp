#pragma once

#include <span>

// Dense layer kernels in two flavours: `serial` is the straightforward
// reference kept for testing, `parallel` is the OpenMP production path.
// Both produce results that are independent of the thread count; they agree
// with each other up to floating-point summation order.
//
// Layouts (row-major):
//   conv input  [N][C][H][W], weights [F][C][K][K], bias [F], output [N][F][OH][OW]
//   affine input [N][I], weights [O][I], bias [O], output [N][O]
// Backward routines accumulate (+=) into dx, dw and db; dx may be empty when
// the input gradient is not needed.
namespace symrl::kernels {

struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int height = 1;
  int width = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const {
    return static_cast<std::size_t>(batch) * in_channels * height * width;
  }
  std::size_t output_size() const {
    return static_cast<std::size_t>(batch) * out_channels * out_height() * out_width();
  }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

struct AffineShape {
  int batch = 1;
  int in = 1;
  int out = 1;
};

namespace serial {

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);
void affine_forward(const AffineShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void affine_backward(const AffineShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);
void affine_forward(const AffineShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void affine_backward(const AffineShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

}  // namespace parallel

// Caps the OpenMP pool at SYMRL_THREADS when that variable is set.
void configure_threads_from_env();
int max_threads();

}  // namespace symrl::kernels
