#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hvc/tensor.hpp"

namespace hvc::gradcheck {

// One verification case: leaf tensors plus a scalar-producing function
// of them. The function must be pure; anything mutable it needs (batch
// norm running stats, say) has to be rebuilt inside on every call.
struct Instance {
  std::vector<Tensor<double>> leaves;
  std::function<Tensor<double>(Graph<double>*, std::vector<Tensor<double>>&)>
      fn;
};

// Max relative error between the reverse-mode gradient and central
// finite differences over every coordinate of every leaf:
//   |analytic - numeric| / max(|analytic|, |numeric|, floor).
double max_rel_error(Instance& inst, double eps = 1e-3, double floor = 1e-4);

struct SuiteResult {
  std::string op;
  int instances = 0;
  double max_rel_err = 0;
};

// Runs `instances` random small cases for every differentiable op plus
// two composite chains, all in fp64. Deterministic in `seed`.
std::vector<SuiteResult> run_suite(std::uint64_t seed, int instances = 20);

bool all_within(const std::vector<SuiteResult>& results, double tol = 1e-4);

}  // namespace hvc::gradcheck
