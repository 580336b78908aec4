#pragma once

#include <string>
#include <vector>

#include "piars/tensor.hpp"

namespace piars {

// One timestep's observation: two depth images (front and belly cameras,
// channel-stacked history for the moving-platforms task) plus the
// proprioceptive vector.
struct Observation {
  grad::Tensor front;  // [C x 24 x 32]
  grad::Tensor rear;
  std::vector<double> proprio;
};

struct ActionDim {
  std::string name;
  double lower = 0.0;
  double upper = 0.0;
};

struct ActionSpec {
  std::vector<ActionDim> dims;
  int size() const { return static_cast<int>(dims.size()); }
};

}  // namespace piars
