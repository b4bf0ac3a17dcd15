// Command-line front end; talks to the library only through salient.h.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "salient/salient.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kOutEnv = "SALIENT_OUT_ROOT";
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Thrown after a diagnostic has been printed.
struct Exit {
  int code;
};

[[noreturn]] void die(const std::string& what, int code = kExitFailure) {
  std::cerr << "salient: error: " << what << '\n';
  throw Exit{code};
}

void check(salient_status s, const std::string& doing) {
  if (s == SALIENT_OK) return;
  const std::string msg = salient_last_error();
  die(doing.empty() ? msg : doing + ": " + msg, s == SALIENT_ERR_USAGE ? kExitUsage : kExitFailure);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) die("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    die("cannot write " + p.string());
  }
}

template <typename T, void (*Free)(T*)>
struct Owned {
  T* p = nullptr;
  Owned() = default;
  Owned(const Owned&) = delete;
  Owned& operator=(const Owned&) = delete;
  ~Owned() { Free(p); }
  T* get() const { return p; }
  T** out() { return &p; }
};
using Dataset = Owned<salient_dataset, salient_dataset_free>;
using Model = Owned<salient_model, salient_model_free>;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  salient_string_free(s);
  return out;
}

std::string take_bytes(unsigned char* b, size_t n) {
  std::string out(reinterpret_cast<const char*>(b), n);
  salient_buffer_free(b);
  return out;
}

// Flags every subcommand shares.
struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  bool verbose = false;
  json overrides = json::object();

  void attach(CLI::App* app) {
    app->add_option("--seed", seed, "Master seed")->capture_default_str();
    app->add_option("--config", config, "JSON run config (sections: model, task, data, warmup, grpo, eval)")
        ->check(CLI::ExistingFile);
    app->add_option("--out", out, std::string("Output directory (default: $") + kOutEnv + "/<subcommand>, or ./runs/<subcommand>)");
    app->add_flag("-v,--verbose", verbose, "Echo log lines to stderr");
  }

  fs::path out_dir(const std::string& sub) const {
    fs::path p;
    if (!out.empty()) p = out;
    else if (const char* root = std::getenv(kOutEnv); root && *root) p = fs::path(root) / sub;
    else p = fs::path("runs") / sub;
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) die("cannot create " + p.string() + ": " + ec.message());
    return p;
  }

  // Config file merged with command-line overrides, resolved by the library.
  std::string config_json() const {
    json j = json::object();
    if (!config.empty()) {
      try {
        j = json::parse(slurp(config));
      } catch (const json::exception& e) {
        die("config " + config + ": " + e.what());
      }
    }
    j.merge_patch(overrides);
    char* resolved = nullptr;
    check(salient_config_resolve(j.dump().c_str(), &resolved), "");
    return take_string(resolved);
  }
};

struct LogSink {
  std::ofstream file;
  bool echo = false;
};

void log_line(const char* line, void* user) {
  auto* sink = static_cast<LogSink*>(user);
  sink->file << line << '\n';
  if (sink->echo) std::cerr << line << '\n';
}

void load_dataset(const std::string& dir, Dataset& ds) {
  if (dir.empty()) die("--data is required", kExitUsage);
  check(salient_dataset_read(dir.c_str(), ds.out()), "reading dataset " + dir);
}

void load_model(const std::string& path, Model& m) {
  if (path.empty()) die("--checkpoint is required", kExitUsage);
  check(salient_model_read(path.c_str(), m.out()), "reading checkpoint " + path);
}

void write_report(const fs::path& dir, char* report_json, char* report_csv) {
  spit(dir / "report.json", take_string(report_json));
  spit(dir / "report.csv", take_string(report_csv));
  std::cout << (dir / "report.json").string() << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Saliency-guided GRPO on a synthetic visual question task"};
  app.set_version_flag("--version", salient_version());
  app.require_subcommand(1);
  app.footer(std::string("Environment:\n  ") + kOutEnv +
             "  default output root; each subcommand writes to $" + kOutEnv + "/<subcommand>");

  std::function<void()> action;

  // gen-data
  Common gen;
  std::optional<std::size_t> n_train, n_test;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen.attach(gen_cmd);
  gen_cmd->add_option("--n", n_train, "Number of training samples (overrides data.n_train)");
  gen_cmd->add_option("--n-test", n_test, "Number of test samples (overrides data.n_test)");
  gen_cmd->callback([&] {
    action = [&] {
      if (n_train) gen.overrides["data"]["n_train"] = *n_train;
      if (n_test) gen.overrides["data"]["n_test"] = *n_test;
      const std::string cfg = gen.config_json();
      const fs::path dir = gen.out_dir("gen-data");
      Dataset ds;
      check(salient_dataset_generate(cfg.c_str(), gen.seed, ds.out()), "generating dataset");
      check(salient_dataset_write(ds.get(), dir.string().c_str()), "writing dataset");
      std::cout << dir.string() << '\n';
    };
  });

  // warmup
  Common warm;
  std::string warm_data, warm_init;
  std::optional<std::size_t> warm_steps;
  auto* warm_cmd = app.add_subcommand("warmup", "Supervised warm-up on scripted responses");
  warm.attach(warm_cmd);
  warm_cmd->add_option("--data", warm_data, "Dataset directory")->required();
  warm_cmd->add_option("--init", warm_init, "Start from this checkpoint instead of a fresh model");
  warm_cmd->add_option("--steps", warm_steps, "Warm-up steps (overrides warmup.steps)");
  warm_cmd->callback([&] {
    action = [&] {
      if (warm_steps) warm.overrides["warmup"]["steps"] = *warm_steps;
      const std::string cfg = warm.config_json();
      const fs::path dir = warm.out_dir("warmup");
      Dataset ds;
      load_dataset(warm_data, ds);
      Model m;
      if (warm_init.empty()) check(salient_model_init(cfg.c_str(), warm.seed, m.out()), "initializing model");
      else load_model(warm_init, m);
      LogSink sink{std::ofstream(dir / "warmup_log.jsonl", std::ios::trunc), warm.verbose};
      check(salient_warmup(m.get(), ds.get(), cfg.c_str(), warm.seed, log_line, &sink), "warm-up");
      const fs::path ck = dir / "checkpoint.json";
      check(salient_model_write(m.get(), ck.string().c_str()), "writing checkpoint");
      std::cout << ck.string() << '\n';
    };
  });

  // train-grpo
  Common grpo;
  std::string grpo_data, grpo_ck;
  std::optional<std::size_t> grpo_steps, ck_every;
  std::optional<double> grpo_lr;
  bool no_saliency = false;
  auto* grpo_cmd = app.add_subcommand("train-grpo", "GRPO from a warm-up checkpoint");
  grpo.attach(grpo_cmd);
  grpo_cmd->add_option("--data", grpo_data, "Dataset directory")->required();
  grpo_cmd->add_option("--checkpoint", grpo_ck, "Warm-up checkpoint (also the frozen reference)")->required();
  grpo_cmd->add_option("--steps", grpo_steps, "GRPO steps (overrides grpo.steps)");
  grpo_cmd->add_option("--lr", grpo_lr, "Learning rate (overrides grpo.lr)");
  grpo_cmd->add_option("--checkpoint-every", ck_every, "Save checkpoints/step_<n>.json every n steps");
  grpo_cmd->add_flag("--no-saliency", no_saliency, "Drop the saliency reward (ablation)");
  grpo_cmd->callback([&] {
    action = [&] {
      if (grpo_steps) grpo.overrides["grpo"]["steps"] = *grpo_steps;
      if (grpo_lr) grpo.overrides["grpo"]["lr"] = *grpo_lr;
      if (ck_every) grpo.overrides["grpo"]["checkpoint_every"] = *ck_every;
      if (no_saliency) grpo.overrides["grpo"]["use_saliency"] = false;
      const std::string cfg = grpo.config_json();
      const fs::path dir = grpo.out_dir("train-grpo");
      Dataset ds;
      load_dataset(grpo_data, ds);
      Model warm_model;
      load_model(grpo_ck, warm_model);
      LogSink sink{std::ofstream(dir / "train_log.jsonl", std::ios::trunc), grpo.verbose};
      struct Ctx {
        LogSink* sink;
        fs::path dir;
      } ctx{&sink, dir};
      auto on_checkpoint = [](size_t step, const salient_model* policy, void* user) {
        auto* c = static_cast<Ctx*>(user);
        fs::create_directories(c->dir / "checkpoints");
        const fs::path p = c->dir / "checkpoints" / ("step_" + std::to_string(step) + ".json");
        if (salient_model_write(policy, p.string().c_str()) != SALIENT_OK) {
          std::cerr << "salient: warning: " << salient_last_error() << '\n';
        }
      };
      auto on_log = [](const char* line, void* user) { log_line(line, static_cast<Ctx*>(user)->sink); };
      Model policy;
      check(salient_train_grpo(warm_model.get(), ds.get(), cfg.c_str(), grpo.seed, on_log, on_checkpoint,
                               &ctx, policy.out()),
            "GRPO training");
      const fs::path ck = dir / "checkpoint.json";
      check(salient_model_write(policy.get(), ck.string().c_str()), "writing checkpoint");
      std::cout << ck.string() << '\n';
    };
  });

  // evaluations share their flags
  struct EvalCmd {
    Common common;
    std::string data, checkpoint;
    std::optional<std::size_t> limit;
  };
  std::vector<std::unique_ptr<EvalCmd>> evals;
  auto add_eval = [&](const char* name, const char* help, salient_eval_kind kind) {
    evals.push_back(std::make_unique<EvalCmd>());
    EvalCmd* e = evals.back().get();
    auto* cmd = app.add_subcommand(name, help);
    e->common.attach(cmd);
    cmd->add_option("--data", e->data, "Dataset directory")->required();
    cmd->add_option("--checkpoint", e->checkpoint, "Model checkpoint")->required();
    cmd->add_option("--limit", e->limit, "Evaluate only the first n samples of the split (overrides eval.limit)");
    cmd->callback([&action, e, name, kind] {
      action = [e, name, kind] {
        if (e->limit) e->common.overrides["eval"]["limit"] = *e->limit;
        const std::string cfg = e->common.config_json();
        const fs::path dir = e->common.out_dir(name);
        Dataset ds;
        load_dataset(e->data, ds);
        Model m;
        load_model(e->checkpoint, m);
        char* rj = nullptr;
        char* rc = nullptr;
        check(salient_evaluate(m.get(), ds.get(), kind, cfg.c_str(), e->common.seed, &rj, &rc), name);
        write_report(dir, rj, rc);
      };
    });
  };
  add_eval("eval-faithfulness", "Deletion/insertion curves and pointing game", SALIENT_EVAL_FAITHFULNESS);
  add_eval("eval-pg", "Pointing game and energy-PG", SALIENT_EVAL_PG);
  add_eval("eval-counterfactual", "Accuracy under foreground vs background noise", SALIENT_EVAL_COUNTERFACTUAL);

  // render
  Common ren;
  std::string ren_data, ren_ck;
  std::vector<std::uint64_t> ren_ids;
  std::size_t ren_limit = 8;
  auto* ren_cmd = app.add_subcommand("render", "Heatmaps and saliency grids for test samples");
  ren.attach(ren_cmd);
  ren_cmd->add_option("--data", ren_data, "Dataset directory")->required();
  ren_cmd->add_option("--checkpoint", ren_ck, "Model checkpoint")->required();
  ren_cmd->add_option("--ids", ren_ids, "Sample ids (default: first --limit test samples)");
  ren_cmd->add_option("--limit", ren_limit, "Number of test samples when --ids is absent")->capture_default_str();
  ren_cmd->callback([&] {
    action = [&] {
      ren.config_json();  // validates the file
      const fs::path dir = ren.out_dir("render");
      Dataset ds;
      load_dataset(ren_data, ds);
      Model m;
      load_model(ren_ck, m);
      std::vector<std::uint64_t> ids = ren_ids;
      if (ids.empty()) {
        size_t n = 0;
        check(salient_dataset_ids(ds.get(), SALIENT_SPLIT_TEST, nullptr, 0, &n), "listing test ids");
        ids.resize(n);
        check(salient_dataset_ids(ds.get(), SALIENT_SPLIT_TEST, ids.data(), n, &n), "listing test ids");
        if (ids.size() > ren_limit) ids.resize(ren_limit);
      }
      fs::create_directories(dir / "heatmaps");
      fs::create_directories(dir / "saliency");
      std::ofstream responses(dir / "responses.jsonl", std::ios::trunc);
      for (std::uint64_t id : ids) {
        char* text = nullptr;
        char* sj = nullptr;
        unsigned char* ppm = nullptr;
        unsigned char* pgm = nullptr;
        size_t ppm_len = 0, pgm_len = 0;
        check(salient_explain(m.get(), ds.get(), id, &text, &sj, &ppm, &ppm_len, &pgm, &pgm_len),
              "explaining sample " + std::to_string(id));
        const std::string stem = std::to_string(id);
        spit(dir / "heatmaps" / (stem + ".ppm"), take_bytes(ppm, ppm_len));
        spit(dir / "saliency" / (stem + ".pgm"), take_bytes(pgm, pgm_len));
        spit(dir / "saliency" / (stem + ".json"), take_string(sj));
        responses << json{{"id", id}, {"response", take_string(text)}}.dump() << '\n';
      }
      std::cout << (dir / "heatmaps").string() << '\n';
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  action();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Exit& e) {
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "salient: error: " << e.what() << '\n';
    return kExitFailure;
  }
}
