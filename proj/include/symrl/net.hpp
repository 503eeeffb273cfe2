#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "symrl/autodiff.hpp"
#include "symrl/env.hpp"

namespace symrl {

enum class Activation { kRelu, kTanh };

struct ConvSpec {
  int filters = 8;
  int kernel = 3;
  int stride = 2;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Network layout: convolution stages over the stacked map channels, flatten,
/// concatenation with the scalar features, a fully connected trunk, then a
/// 7-logit policy head and a scalar value head. Serialized as e.g.
/// "m=12;conv=8x3s2,16x3s2;fc=128,128;act=relu".
struct Architecture {
  int side = 12;
  std::vector<ConvSpec> convs{{8, 3, 2}, {16, 3, 2}};
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::kRelu;

  std::string to_string() const;
  static Architecture parse(std::string_view text);

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct ParamSlice {
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Observations packed for a batched forward pass.
struct ObservationBatch {
  int count = 0;
  int side = 0;
  std::vector<double> maps;     // [N][5][m][m]
  std::vector<double> scalars;  // [N][2]

  void push(const Observation& obs);
  static ObservationBatch from(std::span<const Observation> obs);
};

struct NetOutputs {
  ad::Var logits;  // [N,7]
  ad::Var value;   // [N,1]
};

class ParamNet;

// A network bound to a tape: parameters are registered once as leaves and
// forward() may be called any number of times on different inputs.
class NetGraph {
 public:
  NetGraph(const ParamNet& net, ad::Tape& tape, bool track_gradients = true);

  NetOutputs forward(const ObservationBatch& batch);
  ad::Tape& tape() { return tape_; }
  const ParamNet& net() const { return net_; }

 private:
  const ParamNet& net_;
  ad::Tape& tape_;
  std::vector<ad::Var> weights_;
  std::vector<ad::Var> biases_;
};

struct NetEvaluation {
  int count = 0;
  std::vector<double> logits;  // [N*7]
  std::vector<double> values;  // [N]
};

class ParamNet {
 public:
  // Random initialization, deterministic in the seed. Parameters are always
  // representable as 32-bit floats so checkpoints round-trip exactly.
  ParamNet(Architecture arch, std::uint64_t seed);
  static ParamNet zeros(Architecture arch);

  const Architecture& architecture() const { return arch_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }
  void set_parameters(std::span<const double> values);

  // Layer i occupies weight_slice(i) then bias_slice(i); the final two layers
  // are the policy and value heads.
  std::size_t layer_count() const { return weight_slices_.size(); }
  ParamSlice weight_slice(std::size_t layer) const { return weight_slices_[layer]; }
  ParamSlice bias_slice(std::size_t layer) const { return bias_slices_[layer]; }
  const std::vector<int>& weight_shape(std::size_t layer) const { return weight_shapes_[layer]; }
  ParamSlice policy_head() const;
  ParamSlice value_head() const;

  NetEvaluation evaluate(const ObservationBatch& batch) const;

  friend bool operator==(const ParamNet& a, const ParamNet& b) {
    return a.arch_ == b.arch_ && a.params_ == b.params_;
  }

 private:
  explicit ParamNet(Architecture arch);

  Architecture arch_;
  std::vector<double> params_;
  std::vector<ParamSlice> weight_slices_, bias_slices_;
  std::vector<std::vector<int>> weight_shapes_;
};

struct GradientTape {
  double loss = 0.0;
  std::vector<double> gradient;  // aligned with ParamNet::parameters()
};

using LossBuilder = std::function<ad::Var(NetGraph&)>;

// Builds the loss on a fresh tape and returns its exact reverse-mode gradient.
// Throws std::runtime_error when the loss is not finite.
GradientTape backward(const ParamNet& net, const LossBuilder& loss);

// Scalar value of a loss without gradient bookkeeping.
double evaluate_loss(const ParamNet& net, const LossBuilder& loss);

/// Checkpoint layout: "SYMRL-CKPT v1\n", architecture descriptor line,
/// parameter count line, then the parameters as little-endian float32.
void write_checkpoint(std::ostream& out, const ParamNet& net);
ParamNet read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ParamNet& net);
ParamNet load_checkpoint(const std::string& path);

}  // namespace symrl
