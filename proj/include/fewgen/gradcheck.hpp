#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fewgen {

struct GradcheckOptions {
  double loss_tol = 1e-5;  // primitives and every loss
  double meta_tol = 1e-4;
  std::optional<double> tol;  // replaces both thresholds when set
  std::size_t loss_instances = 20;
  std::size_t meta_instances = 10;
  /// Scales the discriminative gradient inside the meta-gradient; -1 flips
  /// the sign of every alignment and should fail the meta suite.
  double disc_grad_scale = 1.0;
  std::uint64_t seed = 7;
};

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  double worst = 0.0;  // largest relative error against central differences
  double tol = 0.0;
  bool pass = false;
};

/// Runs every suite (primitives, gen, disc, w-gen, combined, class, meta).
std::vector<SuiteResult> run_gradcheck(const GradcheckOptions& options);
std::vector<SuiteResult> run_gradcheck_suites(const GradcheckOptions& options, const std::vector<std::string>& names);

/// One line per suite plus an overall verdict; returns whether all passed.
bool print_gradcheck(std::ostream& out, const std::vector<SuiteResult>& results, const GradcheckOptions& options);

}  // namespace fewgen
