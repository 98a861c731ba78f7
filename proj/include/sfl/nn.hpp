#pragma once

#include <string>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

struct NamedParam {
  std::string name;
  Tensor tensor; // shallow handle; optimizers mutate through it
};

// Forward-pass mode. Evaluation is the default: no dropout, no RNG.
struct RunMode {
  bool training = false;
  double dropout_p = 0.0;
  Rng* rng = nullptr;

  static RunMode eval() { return {}; }
  static RunMode train(double p, Rng& rng) { return {true, p, &rng}; }
};

inline Tensor maybe_dropout(const Tensor& x, const RunMode& mode) {
  if (!mode.training || mode.dropout_p == 0.0) return x;
  return dropout(x, mode.dropout_p, *mode.rng);
}

} // namespace sfl
