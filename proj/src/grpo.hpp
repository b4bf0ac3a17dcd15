#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"
#include "reward.hpp"
#include "saliency.hpp"
#include "tape.hpp"

namespace salient {

enum class RatioMode { kToken, kSequence };

struct Hyperparams {
  std::size_t group_size = 8;
  double eps_clip = 0.2;
  double beta = 0.001;
  double lr = 1e-3;
  double temperature = 1.0;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::size_t max_new = 16;
  RatioMode ratio_mode = RatioMode::kToken;
  double grad_clip = 0.0;  // global L2 norm; <= 0 disables
  bool use_accuracy = true;
  bool use_format = true;
  bool use_saliency = true;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const;
};

class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(const ModelParams& shape, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // Ascends along `grads` (maximization).
  void ascend(ModelParams& params, const Gradients& grads);
  void set_lr(double lr) { lr_ = lr; }
  std::size_t step_count() const { return t_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct PolicyState {
  ModelParams policy;
  ModelParams old_policy;
  ModelParams reference;
  AdamOptimizer optimizer;
};

// Policy, old policy and the frozen reference all start at `warm`.
PolicyState make_policy_state(const ModelParams& warm, double lr);

struct Rollout {
  std::uint64_t seed = 0;
  SegmentedSequence sequence;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;
  RewardBreakdown reward;
  std::optional<double> alignment;  // holistic-map alignment when well formatted
  SaliencyMap map;
};

struct RolloutGroup {
  const DataSample* sample = nullptr;
  // Set when theta_old is the policy being optimized; logp_old is then left
  // empty and taken from the objective's own forward pass.
  bool on_policy = false;
  std::vector<Rollout> rollouts;
  std::vector<double> advantages;
};

// Scores one response: accuracy, format, and the alignment of its holistic
// saliency map (computed from `trace` of the policy that generated it).
struct ScoredResponse {
  RewardBreakdown reward;
  std::optional<double> alignment;
  SaliencyMap map;
};
ScoredResponse score_response(const ModelParams& params, const ForwardTrace& trace,
                              const SegmentedSequence& seq, const DataSample& sample,
                              const Hyperparams& hp);

// Per-token log-probabilities through the taped forward (no gradients).
std::vector<double> token_logprobs(const ModelParams& params, const Tensor& patches,
                                   const SegmentedSequence& seq);

RolloutGroup sample_group(const PolicyState& state, const DataSample& sample, const Hyperparams& hp,
                          std::uint64_t group_seed, bool on_policy = false);

std::vector<double> standardize_advantages(std::span<const double> rewards);
double clipped_surrogate(double ratio, double advantage, double eps_clip);
double kl_penalty(double logp_theta, double logp_ref);

struct ObjectiveTerms {
  Var objective;
  double value = 0.0;
  double mean_kl = 0.0;
  double mean_ratio = 0.0;
  std::size_t used = 0;
  std::size_t dropped = 0;
};

// (1/G) sum_i [surrogate_i - beta * kl_i] as a differentiable node.
ObjectiveTerms grpo_objective(GradientTape& tape, const std::vector<Var>& param_vars,
                              const RolloutGroup& group, const ModelConfig& config,
                              const Hyperparams& hp);

struct StepRecord {
  std::size_t step = 0;
  std::uint64_t sample_id = 0;
  double mean_reward = 0.0;
  double mean_accuracy = 0.0;
  double mean_format = 0.0;
  double mean_saliency = 0.0;
  double mean_alignment = 0.0;
  double objective = 0.0;
  double kl = 0.0;
  std::uint64_t seed = 0;
};

std::string step_record_json(const StepRecord& r);

struct TrainSinks {
  std::function<void(const std::string& json_line)> log;
  std::function<void(std::size_t step, const ModelParams&)> checkpoint;
};

std::vector<StepRecord> train(PolicyState& state, const Dataset& dataset, const Hyperparams& hp,
                              const TrainSinks& sinks = {});

struct WarmupOptions {
  std::size_t steps = 1500;
  std::size_t batch = 8;
  double lr = 1e-3;
  // cosine decay from lr down to lr * final_lr_fraction; 1 keeps it constant
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 0;
  std::size_t log_every = 50;
};

// Prompt + scripted response, tagged Think through </think> and Answer after.
SegmentedSequence scripted_sequence(const ModelConfig& config, const DataSample& sample);

// Supervised next-token training on scripted responses. Returns per-step mean
// token negative log-likelihood.
std::vector<double> supervised_warmup(ModelParams& params, const Dataset& dataset,
                                      const WarmupOptions& options,
                                      const std::function<void(const std::string&)>& log = {});

}  // namespace salient
