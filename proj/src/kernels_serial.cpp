#include "symrl/kernels.hpp"

namespace symrl::kernels::serial {

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int n = 0; n < s.batch; ++n) {
    for (int f = 0; f < s.out_channels; ++f) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b[f];
          for (int c = 0; c < s.in_channels; ++c) {
            for (int ky = 0; ky < s.kernel; ++ky) {
              const int iy = oy * s.stride - s.pad + ky;
              if (iy < 0 || iy >= s.height) continue;
              for (int kx = 0; kx < s.kernel; ++kx) {
                const int ix = ox * s.stride - s.pad + kx;
                if (ix < 0 || ix >= s.width) continue;
                acc += w[((f * s.in_channels + c) * s.kernel + ky) * s.kernel + kx] *
                       x[((static_cast<std::size_t>(n) * s.in_channels + c) * s.height + iy) *
                             s.width +
                         ix];
              }
            }
          }
          y[((static_cast<std::size_t>(n) * s.out_channels + f) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int n = 0; n < s.batch; ++n) {
    for (int f = 0; f < s.out_channels; ++f) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const double g =
              dy[((static_cast<std::size_t>(n) * s.out_channels + f) * oh + oy) * ow + ox];
          db[f] += g;
          for (int c = 0; c < s.in_channels; ++c) {
            for (int ky = 0; ky < s.kernel; ++ky) {
              const int iy = oy * s.stride - s.pad + ky;
              if (iy < 0 || iy >= s.height) continue;
              for (int kx = 0; kx < s.kernel; ++kx) {
                const int ix = ox * s.stride - s.pad + kx;
                if (ix < 0 || ix >= s.width) continue;
                const std::size_t wi = ((f * s.in_channels + c) * s.kernel + ky) * s.kernel + kx;
                const std::size_t xi =
                    ((static_cast<std::size_t>(n) * s.in_channels + c) * s.height + iy) * s.width +
                    ix;
                dw[wi] += g * x[xi];
                if (!dx.empty()) dx[xi] += g * w[wi];
              }
            }
          }
        }
      }
    }
  }
}

void affine_forward(const AffineShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  for (int n = 0; n < s.batch; ++n) {
    for (int o = 0; o < s.out; ++o) {
      double acc = b[o];
      for (int i = 0; i < s.in; ++i)
        acc += w[static_cast<std::size_t>(o) * s.in + i] * x[static_cast<std::size_t>(n) * s.in + i];
      y[static_cast<std::size_t>(n) * s.out + o] = acc;
    }
  }
}

void affine_backward(const AffineShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  for (int n = 0; n < s.batch; ++n) {
    for (int o = 0; o < s.out; ++o) {
      const double g = dy[static_cast<std::size_t>(n) * s.out + o];
      db[o] += g;
      for (int i = 0; i < s.in; ++i) {
        dw[static_cast<std::size_t>(o) * s.in + i] += g * x[static_cast<std::size_t>(n) * s.in + i];
        if (!dx.empty())
          dx[static_cast<std::size_t>(n) * s.in + i] += g * w[static_cast<std::size_t>(o) * s.in + i];
      }
    }
  }
}

}  // namespace symrl::kernels::serial
