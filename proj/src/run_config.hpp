#pragma once

#include <string>
#include <vector>

#include "dataset.hpp"
#include "eval.hpp"
#include "grpo.hpp"
#include "model.hpp"

namespace salient {

struct EvalSettings {
  Split split = Split::kTest;
  std::size_t limit = 0;  // 0 = whole split
  std::vector<double> fractions = default_fractions();
  std::vector<double> sigmas = {0.1, 0.25, 0.5};
  std::size_t max_new = 16;
};

// Everything a pipeline stage needs besides the seed. The task grid always
// follows the model grid.
struct RunConfig {
  ModelConfig model;
  TaskConfig task;
  std::size_t n_train = 4000;
  std::size_t n_test = 500;
  WarmupOptions warmup;
  Hyperparams grpo;
  EvalSettings eval;

  void validate() const;
};

// Partial documents are fine; unknown sections or keys are a config error so
// typos do not pass silently.
RunConfig parse_run_config(const std::string& text);
std::string run_config_json(const RunConfig& config);

}  // namespace salient
