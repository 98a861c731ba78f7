#pragma once

#include <string>
#include <vector>

namespace sfl {

struct LayerCheck {
  std::string layer;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central-finite-difference checks for every differentiable layer type:
// primitives at 1e-6, composite layers and whole models at 1e-4, each run
// over `seeds` random seeds. `defect` names a layer whose backward rule is
// deliberately sabotaged (negative-control fixture); only "gelu" is wired.
std::vector<LayerCheck> run_gradient_suite(int seeds,
                                           const std::string& defect = "");

} // namespace sfl
