#include "grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <iostream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "error.hpp"

namespace salient {

namespace {

constexpr std::uint64_t kSampleStream = 0x5a4d'0001ULL;
constexpr std::uint64_t kGroupStream = 0x5a4d'0002ULL;

double global_norm(const Gradients& grads) {
  double s = 0.0;
  for (const auto& [id, g] : grads)
    for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

bool finite_grads(const Gradients& grads) {
  for (const auto& [id, g] : grads)
    if (!g.all_finite()) return false;
  return true;
}

void clip_gradients(Gradients& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = global_norm(grads);
  if (n <= max_norm) return;
  const double k = max_norm / n;
  for (auto& [id, g] : grads)
    for (auto& v : g.values()) v *= k;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

void Hyperparams::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::kConfig, "hyperparams: " + m); };
  if (group_size < 2) bad("group_size must be >= 2");
  if (!(eps_clip > 0.0 && eps_clip < 1.0)) bad("eps_clip must lie in (0, 1)");
  if (!(beta >= 0.0)) bad("beta must be >= 0");
  if (!(lr >= 0.0)) bad("lr must be >= 0");
  if (!(temperature >= 0.0)) bad("temperature must be >= 0");
  if (max_new == 0) bad("max_new must be >= 1");
}

AdamOptimizer::AdamOptimizer(const ModelParams& shape, double lr, double beta1, double beta2,
                             double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Tensor* t : shape.tensors()) {
    m_.emplace_back(t->shape());
    v_.emplace_back(t->shape());
  }
}

void AdamOptimizer::ascend(ModelParams& params, const Gradients& grads) {
  auto ts = params.tensors();
  if (m_.size() != ts.size()) fail(ErrorKind::kUsage, "optimizer state does not match parameters");
  ++t_;
  if (lr_ == 0.0) return;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [id, g] : grads) {
    Tensor& p = *ts.at(id);
    Tensor& m = m_[id];
    Tensor& v = v_[id];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      p[k] += lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

PolicyState make_policy_state(const ModelParams& warm, double lr) {
  return PolicyState{warm, warm, warm, AdamOptimizer(warm, lr)};
}

ScoredResponse score_response(const ModelParams& params, const ForwardTrace& trace,
                              const SegmentedSequence& seq, const DataSample& sample,
                              const Hyperparams& hp) {
  ScoredResponse out;
  const double format = format_reward(seq);
  const double accuracy = accuracy_reward(seq.tokens_in(Segment::kAnswer), sample.answer);
  double saliency = 0.0;
  out.map = SaliencyMap(params.config.grid_rows, params.config.grid_cols);
  if (format == 1.0) {
    out.map = holistic_saliency_map(params, trace, seq);
    out.alignment = alignment_score(out.map, sample.boxes, sample.image.width(), sample.image.height());
    saliency = *out.alignment;
  }
  out.reward = overall_reward(hp.use_accuracy ? accuracy : 0.0, hp.use_format ? format : 0.0,
                              hp.use_saliency ? saliency : 0.0);
  if (!hp.use_format && hp.use_saliency && format == 1.0) {
    // overall_reward gates saliency on the format component; keep it when the
    // format term is switched off but the response is well formed.
    out.reward.saliency = saliency;
    out.reward.overall = out.reward.accuracy + out.reward.saliency;
  }
  return out;
}

std::vector<double> token_logprobs(const ModelParams& params, const Tensor& patches,
                                   const SegmentedSequence& seq) {
  GradientTape tape;
  const auto vars = register_params(tape, params);
  const Var lp = taped_token_logprobs(tape, vars, params.config, patches, seq);
  const Tensor& v = tape.value(lp);
  return {v.values().begin(), v.values().end()};
}

RolloutGroup sample_group(const PolicyState& state, const DataSample& sample, const Hyperparams& hp,
                          std::uint64_t group_seed, bool on_policy) {
  hp.validate();
  const ModelParams& old = state.old_policy;
  const SegmentedSequence prompt = make_prompt(old.config, sample.question);
  const Tensor patches = image_patches(old.config, sample.image);

  std::vector<std::uint64_t> seeds(hp.group_size);
  for (std::size_t i = 0; i < hp.group_size; ++i) seeds[i] = derive_seed(group_seed, i);
  auto generations = generate_group(old, sample.image, prompt, hp.temperature, hp.max_new, seeds);

  RolloutGroup group;
  group.sample = &sample;
  group.on_policy = on_policy;
  std::vector<double> rewards;
  for (std::size_t i = 0; i < hp.group_size; ++i) {
    Rollout r;
    r.seed = seeds[i];
    r.sequence = std::move(generations[i].sequence);
    if (!r.sequence.generated_positions().empty()) {
      ScoredResponse scored = score_response(old, generations[i].trace, r.sequence, sample, hp);
      r.reward = scored.reward;
      r.alignment = scored.alignment;
      r.map = std::move(scored.map);
      if (!on_policy) r.logp_old = token_logprobs(old, patches, r.sequence);
      r.logp_ref = token_logprobs(state.reference, patches, r.sequence);
    }
    rewards.push_back(r.reward.overall);
    group.rollouts.push_back(std::move(r));
  }
  group.advantages = standardize_advantages(rewards);
  return group;
}

std::vector<double> standardize_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) fail(ErrorKind::kUsage, "standardize_advantages: need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  const bool all_equal = std::all_of(rewards.begin(), rewards.end(),
                                     [&](double r) { return r == rewards[0]; });
  if (all_equal) return adv;
  const double denom = std::max(sd, 1e-8);
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

double clipped_surrogate(double ratio, double advantage, double eps_clip) {
  const double clipped = std::clamp(ratio, 1.0 - eps_clip, 1.0 + eps_clip);
  return std::min(ratio * advantage, clipped * advantage);
}

double kl_penalty(double logp_theta, double logp_ref) {
  const double log_r = logp_ref - logp_theta;
  return std::exp(log_r) - log_r - 1.0;
}

ObjectiveTerms grpo_objective(GradientTape& tape, const std::vector<Var>& pv,
                              const RolloutGroup& group, const ModelConfig& config,
                              const Hyperparams& hp) {
  if (group.sample == nullptr) fail(ErrorKind::kUsage, "grpo_objective: group has no sample");
  if (group.advantages.size() != group.rollouts.size()) {
    fail(ErrorKind::kUsage, "grpo_objective: advantages do not match rollouts");
  }
  const Tensor patches = image_patches(config, group.sample->image);
  const double lo = 1.0 - hp.eps_clip, hi = 1.0 + hp.eps_clip;

  ObjectiveTerms out;
  std::vector<Var> terms;
  double kl_sum = 0.0, ratio_sum = 0.0;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const Rollout& r = group.rollouts[i];
    const double adv = group.advantages[i];
    if (r.sequence.generated_positions().empty()) {
      std::cerr << "warning: dropping rollout " << i << " with an empty generated segment\n";
      ++out.dropped;
      continue;
    }
    const Var logp = taped_token_logprobs(tape, pv, config, patches, r.sequence);
    const std::size_t n = tape.value(logp).size();
    // on-policy: theta_old is the current parameters, so its log-probs are
    // this forward pass, held constant
    const Var old = group.on_policy ? tape.constant(tape.value(logp))
                                    : tape.constant(Tensor({n, 1}, r.logp_old));
    const Var ref = tape.constant(Tensor({n, 1}, r.logp_ref));

    Var surrogate{}, kl{};
    if (hp.ratio_mode == RatioMode::kToken) {
      const Var ratio = tape.exp(tape.sub(logp, old));
      surrogate = tape.mean(tape.minimum(tape.scale(ratio, adv),
                                         tape.scale(tape.clamp(ratio, lo, hi), adv)));
      const Var log_r = tape.sub(ref, logp);
      kl = tape.mean(tape.add_scalar(tape.sub(tape.exp(log_r), log_r), -1.0));
      double rs = 0.0;
      for (double v : tape.value(ratio).values()) rs += v;
      ratio_sum += rs / static_cast<double>(n);
    } else {
      const Var ratio = tape.exp(tape.sub(tape.sum(logp), tape.sum(old)));
      surrogate = tape.minimum(tape.scale(ratio, adv), tape.scale(tape.clamp(ratio, lo, hi), adv));
      const Var log_r = tape.sub(tape.sum(ref), tape.sum(logp));
      kl = tape.add_scalar(tape.sub(tape.exp(log_r), log_r), -1.0);
      ratio_sum += tape.value(ratio).item();
    }
    kl_sum += tape.value(kl).item();
    terms.push_back(tape.sub(surrogate, tape.scale(kl, hp.beta)));
  }
  if (terms.empty()) fail(ErrorKind::kDegenerate, "grpo_objective: every rollout was empty");

  Var total = terms[0];
  for (std::size_t k = 1; k < terms.size(); ++k) total = tape.add(total, terms[k]);
  const double inv = 1.0 / static_cast<double>(terms.size());
  out.objective = tape.scale(total, inv);
  out.value = tape.value(out.objective).item();
  out.used = terms.size();
  out.mean_kl = kl_sum * inv;
  out.mean_ratio = ratio_sum * inv;
  return out;
}

std::string step_record_json(const StepRecord& r) {
  nlohmann::json j{{"step", r.step},
                   {"sample_id", r.sample_id},
                   {"mean_reward", r.mean_reward},
                   {"mean_accuracy", r.mean_accuracy},
                   {"mean_format", r.mean_format},
                   {"mean_saliency", r.mean_saliency},
                   {"mean_alignment", r.mean_alignment},
                   {"objective", r.objective},
                   {"kl", r.kl},
                   {"seed", r.seed}};
  return j.dump();
}

std::vector<StepRecord> train(PolicyState& state, const Dataset& dataset, const Hyperparams& hp,
                              const TrainSinks& sinks) {
  hp.validate();
  const auto train_set = dataset.split(Split::kTrain);
  if (train_set.empty()) fail(ErrorKind::kUsage, "train: dataset has no training samples");
  state.optimizer.set_lr(hp.lr);

  std::vector<StepRecord> log;
  for (std::size_t step = 0; step < hp.steps; ++step) {
    state.old_policy = state.policy;

    std::mt19937_64 pick(derive_seed(hp.seed ^ kSampleStream, step));
    std::uniform_int_distribution<std::size_t> idx(0, train_set.size() - 1);
    const DataSample& sample = *train_set[idx(pick)];

    const std::uint64_t group_seed = derive_seed(hp.seed ^ kGroupStream, step);
    const RolloutGroup group = sample_group(state, sample, hp, group_seed, true);

    GradientTape tape;
    const auto vars = register_params(tape, state.policy);
    const ObjectiveTerms obj = grpo_objective(tape, vars, group, state.policy.config, hp);

    StepRecord rec;
    rec.step = step;
    rec.sample_id = sample.id;
    rec.seed = group_seed;
    rec.objective = obj.value;
    rec.kl = obj.mean_kl;
    std::vector<double> acc, fmt, sal, rew, align;
    for (const auto& r : group.rollouts) {
      acc.push_back(r.reward.accuracy);
      fmt.push_back(r.reward.format);
      sal.push_back(r.reward.saliency);
      rew.push_back(r.reward.overall);
      align.push_back(r.alignment.value_or(0.0));
    }
    rec.mean_accuracy = mean_of(acc);
    rec.mean_format = mean_of(fmt);
    rec.mean_saliency = mean_of(sal);
    rec.mean_reward = mean_of(rew);
    rec.mean_alignment = mean_of(align);

    Gradients grads = tape.backward(obj.objective);
    if (!std::isfinite(obj.value) || !finite_grads(grads)) {
      nlohmann::json diag{{"step", step}, {"error", "divergence"}, {"objective", obj.value},
                          {"sample_id", sample.id}, {"seed", group_seed}};
      if (sinks.log) sinks.log(diag.dump());
      fail(ErrorKind::kDivergence, "non-finite objective or gradient at step " + std::to_string(step));
    }
    clip_gradients(grads, hp.grad_clip);
    state.optimizer.ascend(state.policy, grads);

    if (sinks.log) sinks.log(step_record_json(rec));
    log.push_back(rec);
    if (sinks.checkpoint && hp.checkpoint_every > 0 && (step + 1) % hp.checkpoint_every == 0) {
      sinks.checkpoint(step + 1, state.policy);
    }
  }
  return log;
}

SegmentedSequence scripted_sequence(const ModelConfig& config, const DataSample& sample) {
  SegmentedSequence seq = make_prompt(config, sample.question);
  bool closed = false;
  for (TokenId t : sample.warmup) {
    seq.push(t, closed ? Segment::kAnswer : Segment::kThink);
    if (t == tok::kEndThink) closed = true;
  }
  return seq;
}

std::vector<double> supervised_warmup(ModelParams& params, const Dataset& dataset,
                                      const WarmupOptions& options,
                                      const std::function<void(const std::string&)>& log) {
  const auto train_set = dataset.split(Split::kTrain);
  if (train_set.empty()) fail(ErrorKind::kUsage, "warmup: dataset has no training samples");
  if (options.batch == 0) fail(ErrorKind::kConfig, "warmup: batch must be >= 1");
  AdamOptimizer opt(params, options.lr);
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> idx(0, train_set.size() - 1);

  std::vector<double> losses;
  for (std::size_t step = 0; step < options.steps; ++step) {
    const double progress = static_cast<double>(step) / static_cast<double>(options.steps);
    const double f = options.final_lr_fraction;
    opt.set_lr(options.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    GradientTape tape;
    const auto vars = register_params(tape, params);
    Var total{};
    for (std::size_t b = 0; b < options.batch; ++b) {
      const DataSample& s = *train_set[idx(rng)];
      const SegmentedSequence seq = scripted_sequence(params.config, s);
      const Var lp = taped_token_logprobs(tape, vars, params.config,
                                          image_patches(params.config, s.image), seq);
      const Var m = tape.mean(lp);
      total = b == 0 ? m : tape.add(total, m);
    }
    const Var objective = tape.scale(total, 1.0 / static_cast<double>(options.batch));
    const double nll = -tape.value(objective).item();
    Gradients grads = tape.backward(objective);
    if (!std::isfinite(nll) || !finite_grads(grads)) {
      fail(ErrorKind::kDivergence, "warmup diverged at step " + std::to_string(step));
    }
    opt.ascend(params, grads);
    losses.push_back(nll);
    if (log && options.log_every > 0 && (step % options.log_every == 0 || step + 1 == options.steps)) {
      log(nlohmann::json{{"step", step}, {"nll", nll}}.dump());
    }
  }
  return losses;
}

}  // namespace salient
