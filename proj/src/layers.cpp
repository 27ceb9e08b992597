#include "du2/layers.hpp"

#include <cmath>

#include "du2/errors.hpp"

namespace du2 {

namespace {

// splitmix64
std::uint64_t mix(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : state_(seed) {}

std::uint64_t Rng::next() { return mix(state_); }

double Rng::uniform(double lo, double hi) {
  const double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

std::int64_t Rng::integer(std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(next() % span);
}

Rng Rng::fork(std::uint64_t salt) {
  std::uint64_t s = state_ ^ (salt * 0xD1B54A32D192ED03ULL);
  return Rng(mix(s));
}

// ---------------------------------------------------------------------------

void ParameterSet::add(std::string name, Tensor t) {
  for (const auto& [n, _] : entries_) {
    if (n == name) throw ConfigError("duplicate parameter name " + name);
  }
  entries_.emplace_back(std::move(name), std::move(t));
}

Tensor ParameterSet::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("unknown parameter " + name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

// ---------------------------------------------------------------------------

Conv2dLayer::Conv2dLayer(const ConvSpec& s, Rng& rng) : spec(s) {
  const double fan_in = static_cast<double>(s.in_channels * s.kernel * s.kernel);
  weight = uniform_tensor({s.out_channels, s.in_channels, s.kernel, s.kernel},
                          std::sqrt(6.0 / fan_in), rng);
  bias = Tensor({s.out_channels}, 0.0, true);
}

void Conv2dLayer::register_parameters(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias);
}

Conv3dLayer::Conv3dLayer(const ConvSpec& s, Rng& rng) : spec(s) {
  const double fan_in = static_cast<double>(s.in_channels * s.kernel * s.kernel * s.kernel);
  weight = uniform_tensor({s.out_channels, s.in_channels, s.kernel, s.kernel, s.kernel},
                          std::sqrt(6.0 / fan_in), rng);
  bias = Tensor({s.out_channels}, 0.0, true);
}

void Conv3dLayer::register_parameters(ParameterSet& set, const std::string& prefix) const {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias);
}

ResidualBlock::ResidualBlock(std::size_t channels, double s, Rng& rng, std::size_t dilation)
    : first(ConvSpec{channels, channels, 3, 1, dilation, {}}, rng),
      second(ConvSpec{channels, channels, 3, 1, dilation, {}}, rng),
      slope(s) {}

Tensor ResidualBlock::operator()(const Tensor& x) const {
  return leaky_relu(x + second(leaky_relu(first(x), slope)), slope);
}

void ResidualBlock::register_parameters(ParameterSet& set, const std::string& prefix) const {
  first.register_parameters(set, prefix + ".a");
  second.register_parameters(set, prefix + ".b");
}

void fill(Tensor& t, double value) {
  for (double& v : t.data()) v = value;
}

}  // namespace du2
