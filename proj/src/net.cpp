#include "symrl/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace symrl {

namespace {

constexpr std::string_view kCheckpointHeader = "SYMRL-CKPT v1";

int conv_out_side(int side, const ConvSpec& c) {
  const int pad = c.kernel / 2;
  return (side + 2 * pad - c.kernel) / c.stride + 1;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  return parts;
}

int parse_int(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("architecture: bad ") + what + " '" + s + "'");
  }
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

std::string Architecture::to_string() const {
  std::ostringstream out;
  out << "m=" << side << ";conv=";
  for (std::size_t i = 0; i < convs.size(); ++i) {
    if (i) out << ',';
    out << convs[i].filters << 'x' << convs[i].kernel << 's' << convs[i].stride;
  }
  out << ";fc=";
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i) out << ',';
    out << hidden[i];
  }
  out << ";act=" << (activation == Activation::kRelu ? "relu" : "tanh");
  return out.str();
}

Architecture Architecture::parse(std::string_view text) {
  Architecture arch;
  arch.convs.clear();
  arch.hidden.clear();
  bool have_side = false;
  for (const auto& field : split(text, ';')) {
    if (field.empty()) continue;
    auto eq = field.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("architecture: field '" + field + "' lacks '='");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "m") {
      arch.side = parse_int(value, "side");
      have_side = true;
    } else if (key == "conv") {
      if (value.empty()) continue;
      for (const auto& c : split(value, ',')) {
        auto x = c.find('x');
        auto s = c.find('s');
        if (x == std::string::npos || s == std::string::npos || s < x)
          throw std::invalid_argument("architecture: conv stage '" + c + "' is not FxKsS");
        arch.convs.push_back({parse_int(c.substr(0, x), "filters"),
                              parse_int(c.substr(x + 1, s - x - 1), "kernel"),
                              parse_int(c.substr(s + 1), "stride")});
      }
    } else if (key == "fc") {
      if (value.empty()) continue;
      for (const auto& h : split(value, ',')) arch.hidden.push_back(parse_int(h, "width"));
    } else if (key == "act") {
      if (value == "relu") arch.activation = Activation::kRelu;
      else if (value == "tanh") arch.activation = Activation::kTanh;
      else throw std::invalid_argument("architecture: unknown activation '" + value + "'");
    } else {
      throw std::invalid_argument("architecture: unknown field '" + key + "'");
    }
  }
  if (!have_side || arch.side < 1) throw std::invalid_argument("architecture: missing side 'm'");
  for (const auto& c : arch.convs)
    if (c.filters < 1 || c.kernel < 1 || c.kernel % 2 == 0 || c.stride < 1)
      throw std::invalid_argument("architecture: conv stages need odd kernels and positive sizes");
  for (int h : arch.hidden)
    if (h < 1) throw std::invalid_argument("architecture: hidden widths must be positive");
  return arch;
}

void ObservationBatch::push(const Observation& obs) {
  if (count == 0) side = obs.m;
  if (obs.m != side) throw std::invalid_argument("observation batch mixes map sizes");
  maps.insert(maps.end(), obs.maps.begin(), obs.maps.end());
  scalars.insert(scalars.end(), obs.scalars.begin(), obs.scalars.end());
  ++count;
}

ObservationBatch ObservationBatch::from(std::span<const Observation> obs) {
  ObservationBatch batch;
  if (!obs.empty()) {
    batch.maps.reserve(obs.size() * obs.front().maps.size());
    batch.scalars.reserve(obs.size() * kScalarFeatures);
  }
  for (const auto& o : obs) batch.push(o);
  return batch;
}

ParamNet::ParamNet(Architecture arch) : arch_(std::move(arch)) {
  std::size_t offset = 0;
  auto add_layer = [&](std::vector<int> wshape) {
    std::size_t wsize = 1;
    for (int d : wshape) wsize *= static_cast<std::size_t>(d);
    weight_slices_.push_back({offset, wsize});
    offset += wsize;
    bias_slices_.push_back({offset, static_cast<std::size_t>(wshape.front())});
    offset += static_cast<std::size_t>(wshape.front());
    weight_shapes_.push_back(std::move(wshape));
  };
  int channels = kMapChannels;
  int side = arch_.side;
  for (const auto& c : arch_.convs) {
    add_layer({c.filters, channels, c.kernel, c.kernel});
    channels = c.filters;
    side = conv_out_side(side, c);
    if (side < 1) throw std::invalid_argument("architecture: convolutions shrink the map to nothing");
  }
  int width = channels * side * side + kScalarFeatures;
  for (int h : arch_.hidden) {
    add_layer({h, width});
    width = h;
  }
  add_layer({kNumActions, width});
  add_layer({1, width});
  params_.assign(offset, 0.0);
}

ParamNet ParamNet::zeros(Architecture arch) { return ParamNet(std::move(arch)); }

ParamNet::ParamNet(Architecture arch, std::uint64_t seed) : ParamNet(std::move(arch)) {
  std::mt19937_64 rng(seed);
  const std::size_t layers = weight_slices_.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& shape = weight_shapes_[l];
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < shape.size(); ++d) fan_in *= static_cast<std::size_t>(shape[d]);
    double limit = arch_.activation == Activation::kRelu ? std::sqrt(6.0 / fan_in)
                                                         : std::sqrt(3.0 / fan_in);
    if (l == layers - 2) limit = 0.01 * std::sqrt(3.0 / fan_in);  // policy head starts near uniform
    if (l == layers - 1) limit = std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    const ParamSlice ws = weight_slices_[l];
    for (std::size_t i = 0; i < ws.size; ++i) params_[ws.offset + i] = round_to_float(dist(rng));
  }
}

void ParamNet::set_parameters(std::span<const double> values) {
  if (values.size() != params_.size())
    throw std::invalid_argument("parameter vector has length " + std::to_string(values.size()) +
                                ", expected " + std::to_string(params_.size()));
  std::copy(values.begin(), values.end(), params_.begin());
}

ParamSlice ParamNet::policy_head() const {
  const std::size_t l = weight_slices_.size() - 2;
  return {weight_slices_[l].offset, weight_slices_[l].size + bias_slices_[l].size};
}

ParamSlice ParamNet::value_head() const {
  const std::size_t l = weight_slices_.size() - 1;
  return {weight_slices_[l].offset, weight_slices_[l].size + bias_slices_[l].size};
}

NetGraph::NetGraph(const ParamNet& net, ad::Tape& tape, bool track_gradients)
    : net_(net), tape_(tape) {
  const auto params = net.parameters();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const ParamSlice ws = net.weight_slice(l);
    const ParamSlice bs = net.bias_slice(l);
    ad::Tensor w(net.weight_shape(l),
                 std::vector<double>(params.begin() + ws.offset, params.begin() + ws.offset + ws.size));
    ad::Tensor b({static_cast<int>(bs.size)},
                 std::vector<double>(params.begin() + bs.offset, params.begin() + bs.offset + bs.size));
    if (track_gradients) {
      weights_.push_back(tape.parameter(std::move(w), ws.offset));
      biases_.push_back(tape.parameter(std::move(b), bs.offset));
    } else {
      weights_.push_back(tape.constant(std::move(w)));
      biases_.push_back(tape.constant(std::move(b)));
    }
  }
}

NetOutputs NetGraph::forward(const ObservationBatch& batch) {
  const Architecture& arch = net_.architecture();
  if (batch.count > 0 && batch.side != arch.side)
    throw std::invalid_argument("observation side " + std::to_string(batch.side) +
                                " does not match network side " + std::to_string(arch.side));
  if (batch.maps.size() != static_cast<std::size_t>(batch.count) * kMapChannels * arch.side * arch.side ||
      batch.scalars.size() != static_cast<std::size_t>(batch.count) * kScalarFeatures)
    throw std::invalid_argument("observation batch has inconsistent buffers");
  auto activate = [&](ad::Var v) {
    return arch.activation == Activation::kRelu ? ad::relu(tape_, v) : ad::tanh(tape_, v);
  };
  ad::Var x = tape_.constant(ad::Tensor({batch.count, kMapChannels, arch.side, arch.side}, batch.maps));
  std::size_t layer = 0;
  for (const auto& c : arch.convs) {
    x = activate(ad::conv2d(tape_, x, weights_[layer], biases_[layer], c.stride, c.kernel / 2));
    ++layer;
  }
  x = ad::flatten(tape_, x);
  x = ad::concat_cols(tape_, x,
                      tape_.constant(ad::Tensor({batch.count, kScalarFeatures}, batch.scalars)));
  for (std::size_t h = 0; h < arch.hidden.size(); ++h, ++layer)
    x = activate(ad::affine(tape_, x, weights_[layer], biases_[layer]));
  NetOutputs out;
  out.logits = ad::affine(tape_, x, weights_[layer], biases_[layer]);
  out.value = ad::affine(tape_, x, weights_[layer + 1], biases_[layer + 1]);
  return out;
}

NetEvaluation ParamNet::evaluate(const ObservationBatch& batch) const {
  ad::Tape tape;
  NetGraph graph(*this, tape, false);
  NetOutputs out = graph.forward(batch);
  NetEvaluation eval;
  eval.count = batch.count;
  eval.logits = tape.value(out.logits).data;
  eval.values = tape.value(out.value).data;
  return eval;
}

GradientTape backward(const ParamNet& net, const LossBuilder& loss) {
  ad::Tape tape;
  NetGraph graph(net, tape, true);
  ad::Var l = loss(graph);
  GradientTape result;
  result.loss = tape.scalar(l);
  result.gradient.assign(net.parameter_count(), 0.0);
  if (!std::isfinite(result.loss)) throw std::runtime_error("loss is not finite");
  tape.backward(l, result.gradient);
  return result;
}

double evaluate_loss(const ParamNet& net, const LossBuilder& loss) {
  ad::Tape tape;
  NetGraph graph(net, tape, false);
  return tape.scalar(loss(graph));
}

void write_checkpoint(std::ostream& out, const ParamNet& net) {
  out << kCheckpointHeader << '\n' << net.architecture().to_string() << '\n'
      << net.parameter_count() << '\n';
  std::vector<char> bytes(net.parameter_count() * 4);
  std::size_t i = 0;
  for (double v : net.parameters()) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    bytes[i++] = static_cast<char>(u & 0xff);
    bytes[i++] = static_cast<char>((u >> 8) & 0xff);
    bytes[i++] = static_cast<char>((u >> 16) & 0xff);
    bytes[i++] = static_cast<char>((u >> 24) & 0xff);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed to write checkpoint");
}

ParamNet read_checkpoint(std::istream& in) {
  std::string header, descriptor, count_line;
  if (!std::getline(in, header) || header != kCheckpointHeader)
    throw std::runtime_error("not a SYMRL-CKPT v1 checkpoint");
  if (!std::getline(in, descriptor) || !std::getline(in, count_line))
    throw std::runtime_error("truncated checkpoint header");
  ParamNet net = ParamNet::zeros(Architecture::parse(descriptor));
  const std::size_t count = std::stoull(count_line);
  if (count != net.parameter_count())
    throw std::runtime_error("checkpoint parameter count " + count_line +
                             " does not match architecture (" +
                             std::to_string(net.parameter_count()) + ")");
  std::vector<unsigned char> bytes(count * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw std::runtime_error("truncated checkpoint parameters");
  auto params = net.mutable_parameters();
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    params[i] = static_cast<double>(std::bit_cast<float>(u));
  }
  return net;
}

void save_checkpoint(const std::string& path, const ParamNet& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(out, net);
}

ParamNet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace symrl
