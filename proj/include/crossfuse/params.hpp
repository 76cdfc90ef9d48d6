#pragma once

#include <string>
#include <vector>

#include "crossfuse/random.hpp"
#include "crossfuse/tensor.hpp"

namespace crossfuse {

/// Optimizer group: encoders are fine-tuned with a reduced learning rate.
enum class ParamGroup { Encoder, Fusion };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

/// Leaf of the given shape drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng);
/// Zero-filled leaf (biases).
Tensor zero_param(Shape shape);

}  // namespace crossfuse
