#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#include "symrl/kernels.hpp"

namespace symrl::kernels {

namespace {

// Unrolled dot product with four independent accumulators; the summation
// order is fixed, so results do not depend on scheduling.
inline double dot(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// cols[(c*K + ky)*K + kx][oy*OW + ox] for one sample.
void im2col(const ConvShape& s, const double* x, double* cols) {
  const int oh = s.out_height(), ow = s.out_width();
  const int p_count = oh * ow;
  for (int c = 0; c < s.in_channels; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * s.height * s.width;
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        double* row = cols + static_cast<std::size_t>((c * s.kernel + ky) * s.kernel + kx) * p_count;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            row[oy * ow + ox] = (iy < 0 || iy >= s.height || ix < 0 || ix >= s.width)
                                    ? 0.0
                                    : plane[iy * s.width + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvShape& s, const double* cols, double* dx) {
  const int oh = s.out_height(), ow = s.out_width();
  const int p_count = oh * ow;
  for (int c = 0; c < s.in_channels; ++c) {
    double* plane = dx + static_cast<std::size_t>(c) * s.height * s.width;
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        const double* row =
            cols + static_cast<std::size_t>((c * s.kernel + ky) * s.kernel + kx) * p_count;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix < 0 || ix >= s.width) continue;
            plane[iy * s.width + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

namespace parallel {

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const int p_count = s.out_height() * s.out_width();
  const int k_count = s.in_channels * s.kernel * s.kernel;
  const std::size_t in_stride = static_cast<std::size_t>(s.in_channels) * s.height * s.width;
  const std::size_t out_stride = static_cast<std::size_t>(s.out_channels) * p_count;
#pragma omp parallel
  {
    std::vector<double> cols(static_cast<std::size_t>(k_count) * p_count);
#pragma omp for schedule(static)
    for (int n = 0; n < s.batch; ++n) {
      im2col(s, x.data() + n * in_stride, cols.data());
      double* out = y.data() + n * out_stride;
      for (int f = 0; f < s.out_channels; ++f) {
        double* row = out + static_cast<std::size_t>(f) * p_count;
        std::fill(row, row + p_count, b[f]);
        const double* wf = w.data() + static_cast<std::size_t>(f) * k_count;
        for (int k = 0; k < k_count; ++k)
          axpy(wf[k], cols.data() + static_cast<std::size_t>(k) * p_count, row, p_count);
      }
    }
  }
}

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  const int p_count = s.out_height() * s.out_width();
  const int k_count = s.in_channels * s.kernel * s.kernel;
  const std::size_t in_stride = static_cast<std::size_t>(s.in_channels) * s.height * s.width;
  const std::size_t out_stride = static_cast<std::size_t>(s.out_channels) * p_count;
  const std::size_t col_stride = static_cast<std::size_t>(k_count) * p_count;
  std::vector<double> cols(col_stride * s.batch);

#pragma omp parallel for schedule(static)
  for (int n = 0; n < s.batch; ++n) im2col(s, x.data() + n * in_stride, cols.data() + n * col_stride);

#pragma omp parallel for schedule(static)
  for (int f = 0; f < s.out_channels; ++f) {
    double* dwf = dw.data() + static_cast<std::size_t>(f) * k_count;
    double bias_acc = 0.0;
    for (int n = 0; n < s.batch; ++n) {
      const double* g = dy.data() + n * out_stride + static_cast<std::size_t>(f) * p_count;
      const double* cn = cols.data() + n * col_stride;
      for (int p = 0; p < p_count; ++p) bias_acc += g[p];
      for (int k = 0; k < k_count; ++k)
        dwf[k] += dot(g, cn + static_cast<std::size_t>(k) * p_count, p_count);
    }
    db[f] += bias_acc;
  }

  if (dx.empty()) return;
#pragma omp parallel
  {
    std::vector<double> dcols(col_stride);
#pragma omp for schedule(static)
    for (int n = 0; n < s.batch; ++n) {
      std::fill(dcols.begin(), dcols.end(), 0.0);
      const double* g = dy.data() + n * out_stride;
      for (int f = 0; f < s.out_channels; ++f) {
        const double* wf = w.data() + static_cast<std::size_t>(f) * k_count;
        const double* gf = g + static_cast<std::size_t>(f) * p_count;
        for (int k = 0; k < k_count; ++k)
          axpy(wf[k], gf, dcols.data() + static_cast<std::size_t>(k) * p_count, p_count);
      }
      col2im_add(s, dcols.data(), dx.data() + n * in_stride);
    }
  }
}

void affine_forward(const AffineShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  // Transposed weights turn the inner loop into a contiguous axpy.
  std::vector<double> wt(static_cast<std::size_t>(s.in) * s.out);
  for (int o = 0; o < s.out; ++o)
    for (int i = 0; i < s.in; ++i)
      wt[static_cast<std::size_t>(i) * s.out + o] = w[static_cast<std::size_t>(o) * s.in + i];
#pragma omp parallel for schedule(static)
  for (int n = 0; n < s.batch; ++n) {
    double* yn = y.data() + static_cast<std::size_t>(n) * s.out;
    const double* xn = x.data() + static_cast<std::size_t>(n) * s.in;
    std::copy(b.begin(), b.begin() + s.out, yn);
    for (int i = 0; i < s.in; ++i) {
      if (xn[i] == 0.0) continue;
      axpy(xn[i], wt.data() + static_cast<std::size_t>(i) * s.out, yn, s.out);
    }
  }
}

void affine_backward(const AffineShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
#pragma omp parallel for schedule(static)
  for (int o = 0; o < s.out; ++o) {
    double* dwo = dw.data() + static_cast<std::size_t>(o) * s.in;
    double bias_acc = 0.0;
    for (int n = 0; n < s.batch; ++n) {
      const double g = dy[static_cast<std::size_t>(n) * s.out + o];
      bias_acc += g;
      if (g == 0.0) continue;
      axpy(g, x.data() + static_cast<std::size_t>(n) * s.in, dwo, s.in);
    }
    db[o] += bias_acc;
  }
  if (dx.empty()) return;
#pragma omp parallel for schedule(static)
  for (int n = 0; n < s.batch; ++n) {
    double* dxn = dx.data() + static_cast<std::size_t>(n) * s.in;
    const double* gn = dy.data() + static_cast<std::size_t>(n) * s.out;
    for (int o = 0; o < s.out; ++o) {
      if (gn[o] == 0.0) continue;
      axpy(gn[o], w.data() + static_cast<std::size_t>(o) * s.in, dxn, s.in);
    }
  }
}

}  // namespace parallel

void configure_threads_from_env() {
  if (const char* env = std::getenv("SYMRL_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace symrl::kernels
