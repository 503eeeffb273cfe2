#include "symrl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "symrl/kernels.hpp"

namespace symrl::ad {

namespace {

std::size_t product(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

void require_same_size(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(op) + ": size mismatch");
}

}  // namespace

Tensor::Tensor(std::vector<int> shape_, double fill)
    : shape(std::move(shape_)), data(product(shape), fill) {}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (data.size() != product(shape)) throw std::invalid_argument("tensor data does not match shape");
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, -1, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Tensor value, std::size_t offset) {
  nodes_.push_back(Node{std::move(value), {}, true, static_cast<std::ptrdiff_t>(offset), {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
  Node node{std::move(value), {}, needs, -1, {}};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

std::vector<double>& Tape::grad(int node) {
  Node& n = nodes_[node];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss, std::span<double> param_grad) {
  if (value(loss).size() != 1) throw std::invalid_argument("backward needs a scalar loss");
  if (!std::isfinite(scalar(loss))) throw std::runtime_error("non-finite loss in backward");
  for (auto& n : nodes_) n.grad.clear();
  grad(loss.id)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param_offset >= 0) {
      if (static_cast<std::size_t>(n.param_offset) + n.grad.size() > param_grad.size())
        throw std::out_of_range("parameter gradient buffer too small");
      for (std::size_t k = 0; k < n.grad.size(); ++k) param_grad[n.param_offset + k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (xv.shape.size() != 4 || wv.shape.size() != 4 || wv.shape[1] != xv.shape[1] ||
      wv.shape[2] != wv.shape[3] || t.value(b).size() != static_cast<std::size_t>(wv.shape[0]))
    throw std::invalid_argument("conv2d: incompatible shapes");
  kernels::ConvShape s{xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3],
                       wv.shape[0], wv.shape[2], stride,      pad};
  Tensor out({s.batch, s.out_channels, s.out_height(), s.out_width()});
  kernels::parallel::conv2d_forward(s, xv.data, wv.data, t.value(b).data, out.data);
  return t.record(std::move(out), {x, w, b}, [x, w, b, s](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    std::span<double> dx;
    if (tp.requires_grad(x)) dx = tp.grad(x);
    kernels::parallel::conv2d_backward(s, tp.value(x).data, tp.value(w).data, g, dx, tp.grad(w),
                                       tp.grad(b));
  });
}

Var affine(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (wv.shape.size() != 2 || xv.row_size() != wv.shape[1] ||
      t.value(b).size() != static_cast<std::size_t>(wv.shape[0]))
    throw std::invalid_argument("affine: incompatible shapes");
  kernels::AffineShape s{xv.rows(), wv.shape[1], wv.shape[0]};
  Tensor out({s.batch, s.out});
  kernels::parallel::affine_forward(s, xv.data, wv.data, t.value(b).data, out.data);
  return t.record(std::move(out), {x, w, b}, [x, w, b, s](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    std::span<double> dx;
    if (tp.requires_grad(x)) dx = tp.grad(x);
    kernels::parallel::affine_backward(s, tp.value(x).data, tp.value(w).data, g, dx, tp.grad(w),
                                       tp.grad(b));
  });
}

Var relu(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {x}, [x](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& xv = tp.value(x).data;
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) dx[i] += g[i];
  });
}

Var tanh(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.data) v = std::tanh(v);
  return t.record(std::move(out), {x}, [x](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& y = tp.value(Var{self}).data;
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var flatten(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out({xv.rows(), xv.row_size()}, xv.data);
  return t.record(std::move(out), {x}, [x](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rows() != bv.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  const int n = av.rows(), p = av.row_size(), q = bv.row_size();
  Tensor out({n, p + q});
  for (int r = 0; r < n; ++r) {
    std::copy_n(av.data.begin() + static_cast<std::size_t>(r) * p, p,
                out.data.begin() + static_cast<std::size_t>(r) * (p + q));
    std::copy_n(bv.data.begin() + static_cast<std::size_t>(r) * q, q,
                out.data.begin() + static_cast<std::size_t>(r) * (p + q) + p);
  }
  return t.record(std::move(out), {a, b}, [a, b, n, p, q](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    if (tp.requires_grad(a)) {
      auto& da = tp.grad(a);
      for (int r = 0; r < n; ++r)
        for (int k = 0; k < p; ++k)
          da[static_cast<std::size_t>(r) * p + k] += g[static_cast<std::size_t>(r) * (p + q) + k];
    }
    if (tp.requires_grad(b)) {
      auto& db = tp.grad(b);
      for (int r = 0; r < n; ++r)
        for (int k = 0; k < q; ++k)
          db[static_cast<std::size_t>(r) * q + k] +=
              g[static_cast<std::size_t>(r) * (p + q) + p + k];
    }
  });
}

Var slice_cols(Tape& t, Var x, int begin, int end) {
  const Tensor& xv = t.value(x);
  const int n = xv.rows(), w = xv.row_size();
  if (begin < 0 || end > w || begin >= end) throw std::invalid_argument("slice_cols: bad range");
  const int k = end - begin;
  Tensor out({n, k});
  for (int r = 0; r < n; ++r)
    std::copy_n(xv.data.begin() + static_cast<std::size_t>(r) * w + begin, k,
                out.data.begin() + static_cast<std::size_t>(r) * k);
  return t.record(std::move(out), {x}, [x, n, w, k, begin](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& dx = tp.grad(x);
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < k; ++j)
        dx[static_cast<std::size_t>(r) * w + begin + j] += g[static_cast<std::size_t>(r) * k + j];
  });
}

Var masked_softmax(Tape& t, Var x, std::span<const std::uint8_t> mask) {
  const Tensor& xv = t.value(x);
  if (mask.size() != xv.size()) throw std::invalid_argument("masked_softmax: mask size mismatch");
  const int n = xv.rows(), k = xv.row_size();
  Tensor out(xv.shape);
  for (int r = 0; r < n; ++r) {
    const double* xr = xv.data.data() + static_cast<std::size_t>(r) * k;
    const std::uint8_t* mr = mask.data() + static_cast<std::size_t>(r) * k;
    double* pr = out.data.data() + static_cast<std::size_t>(r) * k;
    double hi = -INFINITY;
    for (int j = 0; j < k; ++j)
      if (mr[j]) hi = std::max(hi, xr[j]);
    if (hi == -INFINITY) throw std::invalid_argument("masked_softmax: empty action mask");
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      pr[j] = mr[j] ? std::exp(xr[j] - hi) : 0.0;
      total += pr[j];
    }
    for (int j = 0; j < k; ++j) pr[j] /= total;
  }
  return t.record(std::move(out), {x}, [x, n, k](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& p = tp.value(Var{self}).data;
    auto& dx = tp.grad(x);
    for (int r = 0; r < n; ++r) {
      const std::size_t o = static_cast<std::size_t>(r) * k;
      double dotg = 0.0;
      for (int j = 0; j < k; ++j) dotg += p[o + j] * g[o + j];
      for (int j = 0; j < k; ++j) dx[o + j] += p[o + j] * (g[o + j] - dotg);
    }
  });
}

Var masked_log_softmax(Tape& t, Var x, std::span<const std::uint8_t> mask) {
  const Tensor& xv = t.value(x);
  if (mask.size() != xv.size())
    throw std::invalid_argument("masked_log_softmax: mask size mismatch");
  const int n = xv.rows(), k = xv.row_size();
  Tensor out(xv.shape);
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  for (int r = 0; r < n; ++r) {
    const double* xr = xv.data.data() + static_cast<std::size_t>(r) * k;
    const std::uint8_t* mr = mask.data() + static_cast<std::size_t>(r) * k;
    double* lr = out.data.data() + static_cast<std::size_t>(r) * k;
    double hi = -INFINITY;
    for (int j = 0; j < k; ++j)
      if (mr[j]) hi = std::max(hi, xr[j]);
    if (hi == -INFINITY) throw std::invalid_argument("masked_log_softmax: empty action mask");
    double total = 0.0;
    for (int j = 0; j < k; ++j)
      if (mr[j]) total += std::exp(xr[j] - hi);
    const double lse = hi + std::log(total);
    for (int j = 0; j < k; ++j) lr[j] = mr[j] ? xr[j] - lse : 0.0;
  }
  return t.record(std::move(out), {x}, [x, n, k, m = std::move(m)](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& lp = tp.value(Var{self}).data;
    auto& dx = tp.grad(x);
    for (int r = 0; r < n; ++r) {
      const std::size_t o = static_cast<std::size_t>(r) * k;
      double gsum = 0.0;
      for (int j = 0; j < k; ++j)
        if (m[o + j]) gsum += g[o + j];
      for (int j = 0; j < k; ++j)
        if (m[o + j]) dx[o + j] += g[o + j] - std::exp(lp[o + j]) * gsum;
    }
  });
}

Var pick(Tape& t, Var x, std::span<const int> index) {
  const Tensor& xv = t.value(x);
  const int n = xv.rows(), k = xv.row_size();
  if (index.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("pick: index size");
  Tensor out({n});
  std::vector<int> idx(index.begin(), index.end());
  for (int r = 0; r < n; ++r) {
    if (idx[r] < 0 || idx[r] >= k) throw std::out_of_range("pick: index out of range");
    out.data[r] = xv.data[static_cast<std::size_t>(r) * k + idx[r]];
  }
  return t.record(std::move(out), {x}, [x, k, idx = std::move(idx)](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& dx = tp.grad(x);
    for (std::size_t r = 0; r < idx.size(); ++r) dx[r * k + idx[r]] += g[r];
  });
}

Var take(Tape& t, Var x, std::span<const std::size_t> index, std::vector<int> shape) {
  const auto& xv = t.value(x).data;
  if (shape.empty()) shape = {static_cast<int>(index.size())};
  Tensor out(std::move(shape));
  if (out.size() != index.size()) throw std::invalid_argument("take: shape does not match index count");
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.size()) throw std::out_of_range("take: index out of range");
    out.data[i] = xv[idx[i]];
  }
  return t.record(std::move(out), {x}, [x, idx = std::move(idx)](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& dx = tp.grad(x);
    for (std::size_t i = 0; i < idx.size(); ++i) dx[idx[i]] += g[i];
  });
}

Var add(Tape& t, Var a, Var b) {
  require_same_size(t.value(a), t.value(b), "add");
  Tensor out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto& d = tp.grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_size(t.value(a), t.value(b), "sub");
  Tensor out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    if (tp.requires_grad(a)) {
      auto& d = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      auto& d = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same_size(t.value(a), t.value(b), "mul");
  Tensor out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    if (tp.requires_grad(a)) {
      const auto& bv2 = tp.value(b).data;
      auto& d = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv2[i];
    }
    if (tp.requires_grad(b)) {
      const auto& av = tp.value(a).data;
      auto& d = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(Tape& t, Var x, double c) {
  Tensor out = t.value(x);
  for (double& v : out.data) v *= c;
  return t.record(std::move(out), {x}, [x, c](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    auto& d = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
  });
}

Var log(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.data) v = std::log(v);
  return t.record(std::move(out), {x}, [x](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& xv = tp.value(x).data;
    auto& d = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / xv[i];
  });
}

Var exp(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.data) v = std::exp(v);
  return t.record(std::move(out), {x}, [x](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& y = tp.value(Var{self}).data;
    auto& d = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
  });
}

Var square(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.data) v *= v;
  return t.record(std::move(out), {x}, [x](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& xv = tp.value(x).data;
    auto& d = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += 2.0 * xv[i] * g[i];
  });
}

Var clamp(Tape& t, Var x, double lo, double hi) {
  Tensor out = t.value(x);
  for (double& v : out.data) v = std::clamp(v, lo, hi);
  return t.record(std::move(out), {x}, [x, lo, hi](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& xv = tp.value(x).data;
    auto& d = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] >= lo && xv[i] <= hi) d[i] += g[i];
  });
}

Var minimum(Tape& t, Var a, Var b) {
  require_same_size(t.value(a), t.value(b), "minimum");
  Tensor out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::min(out.data[i], bv[i]);
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& av = tp.value(a).data;
    const auto& bv2 = tp.value(b).data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool take_a = av[i] <= bv2[i];
      Var v = take_a ? a : b;
      if (tp.requires_grad(v)) tp.grad(v)[i] += g[i];
    }
  });
}

Var sum(Tape& t, Var x) {
  const auto& xv = t.value(x).data;
  Tensor out({1}, {std::accumulate(xv.begin(), xv.end(), 0.0)});
  return t.record(std::move(out), {x}, [x](Tape& tp, int self) {
    const double g = tp.grad_of(self)[0];
    for (double& d : tp.grad(x)) d += g;
  });
}

Var mean(Tape& t, Var x) {
  const auto& xv = t.value(x).data;
  if (xv.empty()) throw std::invalid_argument("mean of an empty tensor");
  const double inv = 1.0 / static_cast<double>(xv.size());
  Tensor out({1}, {std::accumulate(xv.begin(), xv.end(), 0.0) * inv});
  return t.record(std::move(out), {x}, [x, inv](Tape& tp, int self) {
    const double g = tp.grad_of(self)[0] * inv;
    for (double& d : tp.grad(x)) d += g;
  });
}

Var kl_rows(Tape& t, Var p, Var q) {
  const Tensor& pv = t.value(p);
  const Tensor& qv = t.value(q);
  require_same_size(pv, qv, "kl_rows");
  const int n = pv.rows(), k = pv.row_size();
  Tensor out({n});
  for (int r = 0; r < n; ++r) {
    double acc = 0.0;
    for (int j = 0; j < k; ++j) {
      const double pj = pv.data[static_cast<std::size_t>(r) * k + j];
      if (pj > 0.0) acc += pj * (std::log(pj) - std::log(qv.data[static_cast<std::size_t>(r) * k + j]));
    }
    out.data[r] = acc;
  }
  return t.record(std::move(out), {p, q}, [p, q, n, k](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& pv2 = tp.value(p).data;
    const auto& qv2 = tp.value(q).data;
    const bool dp = tp.requires_grad(p), dq = tp.requires_grad(q);
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < k; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * k + j;
        if (!(pv2[i] > 0.0)) continue;
        if (dp) tp.grad(p)[i] += g[r] * (std::log(pv2[i]) - std::log(qv2[i]) + 1.0);
        if (dq) tp.grad(q)[i] -= g[r] * pv2[i] / qv2[i];
      }
    }
  });
}

Var entropy_rows(Tape& t, Var p) {
  const Tensor& pv = t.value(p);
  const int n = pv.rows(), k = pv.row_size();
  Tensor out({n});
  for (int r = 0; r < n; ++r) {
    double acc = 0.0;
    for (int j = 0; j < k; ++j) {
      const double pj = pv.data[static_cast<std::size_t>(r) * k + j];
      if (pj > 0.0) acc -= pj * std::log(pj);
    }
    out.data[r] = acc;
  }
  return t.record(std::move(out), {p}, [p, n, k](Tape& tp, int self) {
    const auto& g = tp.grad_of(self);
    const auto& pv2 = tp.value(p).data;
    auto& d = tp.grad(p);
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < k; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * k + j;
        if (pv2[i] > 0.0) d[i] -= g[r] * (std::log(pv2[i]) + 1.0);
      }
    }
  });
}

Var detach(Tape& t, Var x) { return t.constant(t.value(x)); }

}  // namespace symrl::ad
