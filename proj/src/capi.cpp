#include "salient/salient.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "error.hpp"
#include "eval.hpp"
#include "grpo.hpp"
#include "run_config.hpp"
#include "vocab.hpp"

struct salient_dataset {
  salient::Dataset data;
};

struct salient_model {
  salient::ModelParams params;
};

namespace {

using namespace salient;

thread_local std::string g_last_error;

salient_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage: return SALIENT_ERR_USAGE;
    case ErrorKind::kConfig: return SALIENT_ERR_CONFIG;
    case ErrorKind::kShape: return SALIENT_ERR_SHAPE;
    case ErrorKind::kCapacity: return SALIENT_ERR_CAPACITY;
    case ErrorKind::kIndex: return SALIENT_ERR_INDEX;
    case ErrorKind::kSegment: return SALIENT_ERR_SEGMENT;
    case ErrorKind::kValidation: return SALIENT_ERR_VALIDATION;
    case ErrorKind::kParse: return SALIENT_ERR_PARSE;
    case ErrorKind::kIo: return SALIENT_ERR_IO;
    case ErrorKind::kDegenerate: return SALIENT_ERR_DEGENERATE;
    case ErrorKind::kDivergence: return SALIENT_ERR_DIVERGENCE;
  }
  return SALIENT_ERR_INTERNAL;
}

// Runs f, mapping exceptions to status codes and the thread's last error.
template <typename F>
salient_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return SALIENT_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SALIENT_ERR_CAPACITY;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SALIENT_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) fail(ErrorKind::kUsage, std::string(what) + " must not be null");
}

RunConfig config_of(const char* json) { return parse_run_config(json ? json : ""); }

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

unsigned char* dup_bytes(const std::string& s, size_t* len) {
  auto* out = static_cast<unsigned char*>(std::malloc(s.size() ? s.size() : 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size());
  if (len) *len = s.size();
  return out;
}

Split split_of(salient_split s) {
  if (s == SALIENT_SPLIT_TRAIN) return Split::kTrain;
  if (s == SALIENT_SPLIT_TEST) return Split::kTest;
  fail(ErrorKind::kUsage, "unknown split");
}

// A dataset only makes sense for a model with the same grid and vocabulary.
void check_compatible(const ModelParams& params, const Dataset& ds) {
  const ModelConfig& c = params.config;
  const TaskConfig& t = ds.manifest.task;
  if (t.grid_rows != c.grid_rows || t.grid_cols != c.grid_cols || t.patch_px != c.patch_px) {
    fail(ErrorKind::kValidation, "dataset grid does not match the model grid");
  }
  if (ds.manifest.vocabulary != Vocabulary(c.vocab).names()) {
    fail(ErrorKind::kValidation, "dataset vocabulary does not match the model vocabulary");
  }
}

std::vector<const DataSample*> eval_samples(const Dataset& ds, const EvalSettings& e) {
  auto s = ds.split(e.split);
  if (e.limit > 0 && s.size() > e.limit) s.resize(e.limit);
  if (s.empty()) fail(ErrorKind::kUsage, "evaluation split is empty");
  return s;
}

}  // namespace

extern "C" {

const char* salient_version(void) { return "0.1.0"; }

const char* salient_last_error(void) { return g_last_error.c_str(); }

const char* salient_status_name(salient_status status) {
  switch (status) {
    case SALIENT_OK: return "ok";
    case SALIENT_ERR_USAGE: return "usage";
    case SALIENT_ERR_CONFIG: return "config";
    case SALIENT_ERR_SHAPE: return "shape";
    case SALIENT_ERR_CAPACITY: return "capacity";
    case SALIENT_ERR_INDEX: return "index";
    case SALIENT_ERR_SEGMENT: return "segment";
    case SALIENT_ERR_VALIDATION: return "validation";
    case SALIENT_ERR_PARSE: return "parse";
    case SALIENT_ERR_IO: return "io";
    case SALIENT_ERR_DEGENERATE: return "degenerate";
    case SALIENT_ERR_DIVERGENCE: return "divergence";
    case SALIENT_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void salient_string_free(char* s) { std::free(s); }
void salient_buffer_free(unsigned char* b) { std::free(b); }

salient_status salient_config_resolve(const char* config_json, char** out_json) {
  return guarded([&] {
    need(out_json, "out_json");
    *out_json = dup_string(run_config_json(config_of(config_json)));
  });
}

salient_status salient_dataset_generate(const char* config_json, uint64_t seed, salient_dataset** out) {
  return guarded([&] {
    need(out, "out");
    const RunConfig c = config_of(config_json);
    auto ds = std::make_unique<salient_dataset>();
    ds->data = generate_dataset(c.task, seed, c.n_train, c.n_test, c.model.vocab);
    *out = ds.release();
  });
}

salient_status salient_dataset_read(const char* dir, salient_dataset** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    auto ds = std::make_unique<salient_dataset>();
    ds->data = read_dataset(dir);
    *out = ds.release();
  });
}

salient_status salient_dataset_write(const salient_dataset* ds, const char* dir) {
  return guarded([&] {
    need(ds, "dataset");
    need(dir, "dir");
    write_dataset(dir, ds->data);
  });
}

salient_status salient_dataset_count(const salient_dataset* ds, salient_split split, size_t* out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    *out = ds->data.split(split_of(split)).size();
  });
}

salient_status salient_dataset_ids(const salient_dataset* ds, salient_split split, uint64_t* ids,
                                   size_t capacity, size_t* count) {
  return guarded([&] {
    need(ds, "dataset");
    if (capacity > 0) need(ids, "ids");
    const auto s = ds->data.split(split_of(split));
    for (size_t i = 0; i < s.size() && i < capacity; ++i) ids[i] = s[i]->id;
    if (count) *count = s.size();
  });
}

void salient_dataset_free(salient_dataset* ds) { delete ds; }

salient_status salient_model_init(const char* config_json, uint64_t seed, salient_model** out) {
  return guarded([&] {
    need(out, "out");
    auto m = std::make_unique<salient_model>();
    m->params = init_model(config_of(config_json).model, seed);
    *out = m.release();
  });
}

salient_status salient_model_read(const char* path, salient_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto m = std::make_unique<salient_model>();
    m->params = load_checkpoint(path);
    *out = m.release();
  });
}

salient_status salient_model_write(const salient_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    save_checkpoint(path, model->params);
  });
}

salient_status salient_model_equal(const salient_model* a, const salient_model* b, int* out) {
  return guarded([&] {
    need(a, "a");
    need(b, "b");
    need(out, "out");
    *out = a->params == b->params ? 1 : 0;
  });
}

salient_status salient_model_clone(const salient_model* model, salient_model** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = new salient_model{model->params};
  });
}

void salient_model_free(salient_model* model) { delete model; }

salient_status salient_warmup(salient_model* model, const salient_dataset* ds, const char* config_json,
                              uint64_t seed, salient_log_fn log, void* user) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    check_compatible(model->params, ds->data);
    WarmupOptions w = config_of(config_json).warmup;
    w.seed = seed;
    // train on a copy so a failure leaves the caller's model untouched
    ModelParams p = model->params;
    supervised_warmup(p, ds->data, w, [&](const std::string& line) {
      if (log) log(line.c_str(), user);
    });
    model->params = std::move(p);
  });
}

salient_status salient_train_grpo(const salient_model* warm, const salient_dataset* ds,
                                  const char* config_json, uint64_t seed, salient_log_fn log,
                                  salient_checkpoint_fn checkpoint, void* user, salient_model** out) {
  return guarded([&] {
    need(warm, "warm");
    need(ds, "dataset");
    need(out, "out");
    check_compatible(warm->params, ds->data);
    Hyperparams hp = config_of(config_json).grpo;
    hp.seed = seed;
    PolicyState state = make_policy_state(warm->params, hp.lr);
    TrainSinks sinks;
    if (log) sinks.log = [&](const std::string& line) { log(line.c_str(), user); };
    if (checkpoint) {
      sinks.checkpoint = [&](std::size_t step, const ModelParams& p) {
        const salient_model view{p};
        checkpoint(step, &view, user);
      };
    }
    train(state, ds->data, hp, sinks);
    *out = new salient_model{std::move(state.policy)};
  });
}

salient_status salient_evaluate(const salient_model* model, const salient_dataset* ds,
                                salient_eval_kind kind, const char* config_json, uint64_t seed,
                                char** report_json_out, char** report_csv_out) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    check_compatible(model->params, ds->data);
    const EvalSettings e = config_of(config_json).eval;
    const auto samples = eval_samples(ds->data, e);
    std::string json, csv;
    if (kind == SALIENT_EVAL_COUNTERFACTUAL) {
      const auto rep = counterfactual_sweep(model->params, samples, e.sigmas, seed, e.max_new);
      json = counterfactual_json(rep);
      csv = counterfactual_csv(rep);
    } else if (kind == SALIENT_EVAL_FAITHFULNESS || kind == SALIENT_EVAL_PG) {
      EvalOptions o;
      o.fractions = e.fractions;
      o.curves = kind == SALIENT_EVAL_FAITHFULNESS;
      o.max_new = e.max_new;
      const auto rep = evaluate(model->params, samples, o, o.curves ? "faithfulness" : "pg");
      json = report_json(rep);
      csv = report_csv(rep);
    } else {
      fail(ErrorKind::kUsage, "unknown evaluation kind");
    }
    if (report_json_out) *report_json_out = dup_string(json);
    if (report_csv_out) *report_csv_out = dup_string(csv);
  });
}

salient_status salient_explain(const salient_model* model, const salient_dataset* ds,
                               uint64_t sample_id, char** response_text, char** saliency_json_out,
                               unsigned char** heatmap_ppm, size_t* heatmap_len,
                               unsigned char** map_pgm, size_t* map_len) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    check_compatible(model->params, ds->data);
    const DataSample* sample = nullptr;
    for (const auto& s : ds->data.samples)
      if (s.id == sample_id) sample = &s;
    if (!sample) fail(ErrorKind::kIndex, "no sample with id " + std::to_string(sample_id));
    const Explained e = explain(model->params, *sample);
    std::vector<TokenId> generated;
    for (std::size_t p : e.response.generated_positions()) generated.push_back(e.response.tokens[p]);
    // build everything first so a failure leaks nothing
    const std::string text = Vocabulary(model->params.config.vocab).detokenize(generated);
    const std::string sj = saliency_json(e.holistic);
    const std::string ppm = encode_ppm(render_heatmap(e.holistic, sample->image, sample->boxes));
    const std::string pgm = saliency_pgm(e.holistic, model->params.config.patch_px);
    if (response_text) *response_text = dup_string(text);
    if (saliency_json_out) *saliency_json_out = dup_string(sj);
    if (heatmap_ppm) *heatmap_ppm = dup_bytes(ppm, heatmap_len);
    if (map_pgm) *map_pgm = dup_bytes(pgm, map_len);
  });
}

}  // extern "C"
