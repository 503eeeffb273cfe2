#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

// Minimal tensor-level reverse-mode differentiation. A Tape records the
// operations applied to its variables; backward() walks the record in reverse
// and accumulates gradients, writing parameter gradients into a flat vector.
namespace symrl::ad {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_, double fill = 0.0);
  Tensor(std::vector<int> shape_, std::vector<double> data_);

  std::size_t size() const { return data.size(); }
  // Leading dimension and product of the rest.
  int rows() const { return shape.empty() ? 1 : shape.front(); }
  int row_size() const { return rows() == 0 ? 0 : static_cast<int>(size() / rows()); }
};

struct Var {
  int id = -1;
};

class Tape;
using BackwardFn = std::function<void(Tape&, int node)>;

class Tape {
 public:
  Var constant(Tensor value);
  // Leaf whose gradient lands in param_grad[offset, offset + size).
  Var parameter(Tensor value, std::size_t offset);

  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const { return nodes_[v.id].value.data.at(0); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient buffer of a node, allocated on first use.
  std::vector<double>& grad(int node);
  std::vector<double>& grad(Var v) { return grad(v.id); }
  const std::vector<double>& grad_of(int node) const { return nodes_[node].grad; }

  // Seeds d(loss)/d(loss) = 1 and accumulates parameter gradients (+=).
  void backward(Var loss, std::span<double> param_grad);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::ptrdiff_t param_offset = -1;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Layers. x: [N,C,H,W], w: [F,C,K,K], b: [F].
Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad);
// x: [N,I], w: [O,I], b: [O].
Var affine(Tape& t, Var x, Var w, Var b);
Var relu(Tape& t, Var x);
Var tanh(Tape& t, Var x);

// Shape manipulation on the leading dimension.
Var flatten(Tape& t, Var x);
Var concat_cols(Tape& t, Var a, Var b);
Var slice_cols(Tape& t, Var x, int begin, int end);

// Row-wise softmax over permitted entries; masked entries are exactly 0.
// mask has one byte per element of x.
Var masked_softmax(Tape& t, Var x, std::span<const std::uint8_t> mask);
// Row-wise log-softmax over permitted entries; masked entries hold 0 and get
// no gradient.
Var masked_log_softmax(Tape& t, Var x, std::span<const std::uint8_t> mask);
// out[n] = x[n, index[n]].
Var pick(Tape& t, Var x, std::span<const int> index);
// out.data[i] = x.data[index[i]]; shape defaults to [index.size()].
Var take(Tape& t, Var x, std::span<const std::size_t> index, std::vector<int> shape = {});

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double c);
Var log(Tape& t, Var x);
Var exp(Tape& t, Var x);
Var square(Tape& t, Var x);
Var clamp(Tape& t, Var x, double lo, double hi);
Var minimum(Tape& t, Var a, Var b);

Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);

// Row-wise KL(p || q) summed over entries with p > 0. p, q: [N,K] -> [N].
Var kl_rows(Tape& t, Var p, Var q);
// Row-wise entropy -sum p log p over entries with p > 0.
Var entropy_rows(Tape& t, Var p);

// Copies the value with no gradient path.
Var detach(Tape& t, Var x);

}  // namespace symrl::ad
