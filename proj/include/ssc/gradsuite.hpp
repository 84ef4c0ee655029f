#pragma once

#include <string>
#include <vector>

namespace ssc {

struct GradSuiteEntry {
  std::string module;
  std::string check;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Finite-difference verification of every differentiable op plus the full
// 2-group desk pipeline at 64-bit. Empty filter runs everything; otherwise
// only the named module ("tensor", "nn", "roi", "fce", "similarity", "slm",
// "decoder", "loss", "pipeline").
std::vector<GradSuiteEntry> run_grad_suite(const std::string& module_filter = "");

}  // namespace ssc
