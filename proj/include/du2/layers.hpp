#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "du2/ops.hpp"
#include "du2/tensor.hpp"

namespace du2 {

/// Seeded generator with a platform-independent uniform draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  /// Independent child stream.
  Rng fork(std::uint64_t salt);

 private:
  std::uint64_t state_;
};

/// Ordered name -> tensor registry shared by checkpoints and the optimizer.
class ParameterSet {
 public:
  void add(std::string name, Tensor t);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  Tensor find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Uniform in +-sqrt(6 / fan_in), bias zero.
struct Conv2dLayer {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;

  Conv2dLayer() = default;
  Conv2dLayer(const ConvSpec& spec, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, spec); }
  void register_parameters(ParameterSet& set, const std::string& prefix) const;
};

struct Conv3dLayer {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;

  Conv3dLayer() = default;
  Conv3dLayer(const ConvSpec& spec, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv3d(x, weight, bias, spec); }
  void register_parameters(ParameterSet& set, const std::string& prefix) const;
};

/// lrelu(x + conv_b(lrelu(conv_a(x)))), both convs 3x3 same-padded.
struct ResidualBlock {
  Conv2dLayer first;
  Conv2dLayer second;
  double slope = 0.2;

  ResidualBlock() = default;
  ResidualBlock(std::size_t channels, double slope, Rng& rng, std::size_t dilation = 1);
  Tensor operator()(const Tensor& x) const;
  void register_parameters(ParameterSet& set, const std::string& prefix) const;
};

/// Overwrites every entry of t with `value` (test and ablation helper).
void fill(Tensor& t, double value);

}  // namespace du2
