#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "symrl/net.hpp"

namespace symrl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

// Adaptive-moment optimizer. Updated parameters are rounded to float32 so a
// checkpointed network reloads bit-identically.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t parameter_count, AdamConfig cfg = {});

  void step(ParamNet& net, std::span<const double> gradient, double lr);

  std::int64_t steps() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

  // Text serialization with hex floats; exact round trip.
  void write(std::ostream& out) const;
  void read(std::istream& in);

  friend bool operator==(const Adam&, const Adam&) = default;

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

// Scales the gradient in place so its L2 norm is at most max_norm; returns the
// norm before scaling.
double clip_gradient_norm(std::span<double> gradient, double max_norm);

}  // namespace symrl
