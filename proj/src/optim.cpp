#include "symrl/optim.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace symrl {

Adam::Adam(std::size_t parameter_count, AdamConfig cfg)
    : cfg_(cfg), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

void Adam::step(ParamNet& net, std::span<const double> gradient, double lr) {
  if (gradient.size() != m_.size() || net.parameter_count() != m_.size())
    throw std::invalid_argument("Adam: gradient length does not match parameters");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto params = net.mutable_parameters();
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const double g = gradient[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    if (lr == 0.0 || (g == 0.0 && m_[i] == 0.0)) continue;
    const double update = lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.epsilon);
    params[i] = static_cast<double>(static_cast<float>(params[i] - update));
  }
}

void Adam::write(std::ostream& out) const {
  out << "adam " << t_ << ' ' << m_.size() << '\n' << std::hexfloat;
  for (std::size_t i = 0; i < m_.size(); ++i) out << m_[i] << ' ' << v_[i] << '\n';
  out << std::defaultfloat;
}

void Adam::read(std::istream& in) {
  std::string tag;
  std::size_t n = 0;
  if (!(in >> tag >> t_ >> n) || tag != "adam") throw std::runtime_error("bad optimizer state");
  m_.assign(n, 0.0);
  v_.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::string a, b;
    if (!(in >> a >> b)) throw std::runtime_error("truncated optimizer state");
    m_[i] = std::strtod(a.c_str(), nullptr);
    v_[i] = std::strtod(b.c_str(), nullptr);
  }
}

double clip_gradient_norm(std::span<double> gradient, double max_norm) {
  double sq = 0.0;
  for (double g : gradient) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : gradient) g *= s;
  }
  return norm;
}

}  // namespace symrl
