#include "run_config.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "error.hpp"
#include "json_io.hpp"

namespace salient {

namespace {

using nlohmann::json;

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "config: '" + where + "' must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) fail(ErrorKind::kConfig, "config: unknown key '" + where + "." + k + "'");
  }
}

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void read_model(const json& j, ModelConfig& c) {
  only_keys(j, "model", {"layers", "heads", "width", "vocab", "grid_rows", "grid_cols", "patch_px",
                         "max_len", "ffn_mult", "eps"});
  from_json(j, c);
}

void read_task(const json& j, TaskConfig& t) {
  only_keys(j, "task", {"min_objects", "max_objects", "families"});
  take(j, "min_objects", t.min_objects);
  take(j, "max_objects", t.max_objects);
  if (j.contains("families")) {
    t.families.clear();
    for (const auto& f : j.at("families")) t.families.push_back(question_kind_from_name(f.get<std::string>()));
  }
}

void read_warmup(const json& j, WarmupOptions& w) {
  only_keys(j, "warmup", {"steps", "batch", "lr", "final_lr_fraction", "log_every"});
  take(j, "steps", w.steps);
  take(j, "batch", w.batch);
  take(j, "lr", w.lr);
  take(j, "final_lr_fraction", w.final_lr_fraction);
  take(j, "log_every", w.log_every);
}

void read_grpo(const json& j, Hyperparams& h) {
  only_keys(j, "grpo", {"group_size", "eps_clip", "beta", "lr", "temperature", "steps", "max_new",
                        "ratio_mode", "grad_clip", "use_accuracy", "use_format", "use_saliency",
                        "checkpoint_every"});
  take(j, "group_size", h.group_size);
  take(j, "eps_clip", h.eps_clip);
  take(j, "beta", h.beta);
  take(j, "lr", h.lr);
  take(j, "temperature", h.temperature);
  take(j, "steps", h.steps);
  take(j, "max_new", h.max_new);
  take(j, "grad_clip", h.grad_clip);
  take(j, "use_accuracy", h.use_accuracy);
  take(j, "use_format", h.use_format);
  take(j, "use_saliency", h.use_saliency);
  take(j, "checkpoint_every", h.checkpoint_every);
  if (j.contains("ratio_mode")) {
    const auto m = j.at("ratio_mode").get<std::string>();
    if (m == "token") h.ratio_mode = RatioMode::kToken;
    else if (m == "sequence") h.ratio_mode = RatioMode::kSequence;
    else fail(ErrorKind::kConfig, "config: ratio_mode must be 'token' or 'sequence'");
  }
}

void read_eval(const json& j, EvalSettings& e) {
  only_keys(j, "eval", {"split", "limit", "fractions", "sigmas", "max_new"});
  if (j.contains("split")) {
    const auto s = j.at("split").get<std::string>();
    if (s == "train") e.split = Split::kTrain;
    else if (s == "test") e.split = Split::kTest;
    else fail(ErrorKind::kConfig, "config: eval.split must be 'train' or 'test'");
  }
  take(j, "limit", e.limit);
  take(j, "fractions", e.fractions);
  take(j, "sigmas", e.sigmas);
  take(j, "max_new", e.max_new);
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  task.validate();
  if (task.grid_rows != model.grid_rows || task.grid_cols != model.grid_cols ||
      task.patch_px != model.patch_px) {
    fail(ErrorKind::kConfig, "config: task grid must match the model grid");
  }
  if (n_train == 0) fail(ErrorKind::kConfig, "config: data.n_train must be >= 1");
  if (warmup.batch == 0) fail(ErrorKind::kConfig, "config: warmup.batch must be >= 1");
  if (!(warmup.lr >= 0.0)) fail(ErrorKind::kConfig, "config: warmup.lr must be >= 0");
  if (!(warmup.final_lr_fraction >= 0.0 && warmup.final_lr_fraction <= 1.0)) {
    fail(ErrorKind::kConfig, "config: warmup.final_lr_fraction must lie in [0, 1]");
  }
  grpo.validate();
  for (double f : eval.fractions)
    if (!(f >= 0.0 && f <= 1.0)) fail(ErrorKind::kConfig, "config: eval.fractions must lie in [0, 1]");
  if (!std::is_sorted(eval.fractions.begin(), eval.fractions.end())) {
    fail(ErrorKind::kConfig, "config: eval.fractions must be ascending");
  }
  for (double s : eval.sigmas)
    if (!(s >= 0.0)) fail(ErrorKind::kConfig, "config: eval.sigmas must be >= 0");
  if (eval.max_new == 0) fail(ErrorKind::kConfig, "config: eval.max_new must be >= 1");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  json j;
  try {
    j = text.empty() ? json::object() : json::parse(text);
    only_keys(j, "", {"model", "task", "data", "warmup", "grpo", "eval"});
    if (j.contains("model")) read_model(j.at("model"), c.model);
    const TaskConfig defaults = task_for_model(c.model);
    c.task.grid_rows = defaults.grid_rows;
    c.task.grid_cols = defaults.grid_cols;
    c.task.patch_px = defaults.patch_px;
    c.task.max_objects = std::min(c.task.max_objects, c.model.num_patches());
    if (j.contains("task")) read_task(j.at("task"), c.task);
    if (j.contains("data")) {
      only_keys(j.at("data"), "data", {"n_train", "n_test"});
      take(j.at("data"), "n_train", c.n_train);
      take(j.at("data"), "n_test", c.n_test);
    }
    if (j.contains("warmup")) read_warmup(j.at("warmup"), c.warmup);
    if (j.contains("grpo")) read_grpo(j.at("grpo"), c.grpo);
    if (j.contains("eval")) read_eval(j.at("eval"), c.eval);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string run_config_json(const RunConfig& c) {
  json families = json::array();
  for (auto k : c.task.families) families.push_back(question_kind_name(k));
  json j{
      {"model", c.model},
      {"task", {{"min_objects", c.task.min_objects}, {"max_objects", c.task.max_objects}, {"families", families}}},
      {"data", {{"n_train", c.n_train}, {"n_test", c.n_test}}},
      {"warmup",
       {{"steps", c.warmup.steps},
        {"batch", c.warmup.batch},
        {"lr", c.warmup.lr},
        {"final_lr_fraction", c.warmup.final_lr_fraction},
        {"log_every", c.warmup.log_every}}},
      {"grpo",
       {{"group_size", c.grpo.group_size},
        {"eps_clip", c.grpo.eps_clip},
        {"beta", c.grpo.beta},
        {"lr", c.grpo.lr},
        {"temperature", c.grpo.temperature},
        {"steps", c.grpo.steps},
        {"max_new", c.grpo.max_new},
        {"ratio_mode", c.grpo.ratio_mode == RatioMode::kToken ? "token" : "sequence"},
        {"grad_clip", c.grpo.grad_clip},
        {"use_accuracy", c.grpo.use_accuracy},
        {"use_format", c.grpo.use_format},
        {"use_saliency", c.grpo.use_saliency},
        {"checkpoint_every", c.grpo.checkpoint_every}}},
      {"eval",
       {{"split", c.eval.split == Split::kTest ? "test" : "train"},
        {"limit", c.eval.limit},
        {"fractions", c.eval.fractions},
        {"sigmas", c.eval.sigmas},
        {"max_new", c.eval.max_new}}}};
  return j.dump(2) + "\n";
}

}  // namespace salient
