#include "crossfuse/params.hpp"

#include <cmath>

namespace crossfuse {

Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<float> data(shape_numel(shape));
  for (float& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor(std::move(shape), std::move(data), true);
}

Tensor zero_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

}  // namespace crossfuse
