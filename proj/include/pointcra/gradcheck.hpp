#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pointcra/tensor.hpp"

namespace pointcra {

// Central finite differences, step 1e-3 by default. eval() rebuilds a scalar
// graph from the current leaf values; leaves are perturbed in place. Returns
// the worst guarded relative error over every leaf element:
//   |analytic - numeric| / (max(|analytic|, |numeric|) + 0.01)
// With richardson set, a second probe at step/2 extrapolates the h^2
// truncation term away; used only for the deep whole-model check where the
// trend cosines make plain central differences too coarse.
double max_fd_error(const std::function<Tensor()>& eval, const std::vector<Tensor>& leaves,
                    double step = 1e-3, bool richardson = false);

struct GradCheckReport {
    std::string name;
    bool pass = false;
    double max_err = 0.0;
    int trials = 0;
};

std::vector<std::string> gradcheck_suite_names();
GradCheckReport run_gradcheck_suite(const std::string& name);
std::vector<GradCheckReport> run_all_gradchecks();

}  // namespace pointcra
