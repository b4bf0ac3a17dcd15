#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "salient/salient.h"

namespace fs = std::filesystem;

namespace {

const char* kSmall =
    R"({"model":{"layers":1,"heads":2,"width":16,"grid_rows":2,"grid_cols":3,"max_len":32,"ffn_mult":2},)"
    R"("data":{"n_train":12,"n_test":4},"warmup":{"steps":2,"batch":2,"log_every":1},)"
    R"("grpo":{"steps":2,"group_size":2,"lr":1e-4},"eval":{"limit":2,"fractions":[0.2,0.5]}})";

struct Log {
  std::vector<std::string> lines;
  std::vector<size_t> checkpoints;
};

void collect(const char* line, void* user) { static_cast<Log*>(user)->lines.emplace_back(line); }
void on_checkpoint(size_t step, const salient_model*, void* user) {
  static_cast<Log*>(user)->checkpoints.push_back(step);
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::strlen(salient_version()) > 0);
  CHECK(std::string(salient_status_name(SALIENT_OK)) == "ok");
  CHECK(std::string(salient_status_name(SALIENT_ERR_PARSE)) == "parse");
}

TEST_CASE("null arguments are usage errors with a message") {
  CHECK(salient_dataset_read(nullptr, nullptr) == SALIENT_ERR_USAGE);
  CHECK(std::strlen(salient_last_error()) > 0);
  size_t n = 0;
  CHECK(salient_dataset_count(nullptr, SALIENT_SPLIT_TEST, &n) == SALIENT_ERR_USAGE);
  salient_model_free(nullptr);
  salient_dataset_free(nullptr);
}

TEST_CASE("config resolution fills defaults and rejects unknown keys") {
  char* out = nullptr;
  REQUIRE(salient_config_resolve(nullptr, &out) == SALIENT_OK);
  CHECK(std::string(out).find("\"group_size\": 8") != std::string::npos);
  salient_string_free(out);
  CHECK(salient_config_resolve(R"({"grpo":{"lrr":1}})", &out) == SALIENT_ERR_CONFIG);
  CHECK(std::string(salient_last_error()).find("grpo.lrr") != std::string::npos);
  CHECK(salient_config_resolve("{not json", &out) == SALIENT_ERR_CONFIG);
  CHECK(salient_config_resolve(R"({"grpo":{"group_size":1}})", &out) == SALIENT_ERR_CONFIG);
}

TEST_CASE("end-to-end through the C API") {
  const fs::path dir = fs::temp_directory_path() / "salient_test_capi";
  fs::remove_all(dir);

  salient_dataset* ds = nullptr;
  REQUIRE(salient_dataset_generate(kSmall, 5, &ds) == SALIENT_OK);
  size_t n = 0;
  CHECK(salient_dataset_count(ds, SALIENT_SPLIT_TRAIN, &n) == SALIENT_OK);
  CHECK(n == 12);
  std::vector<uint64_t> ids(4);
  CHECK(salient_dataset_ids(ds, SALIENT_SPLIT_TEST, ids.data(), ids.size(), &n) == SALIENT_OK);
  CHECK(n == 4);
  CHECK(ids[0] == 12);

  REQUIRE(salient_dataset_write(ds, (dir / "data").string().c_str()) == SALIENT_OK);
  salient_dataset* again = nullptr;
  REQUIRE(salient_dataset_read((dir / "data").string().c_str(), &again) == SALIENT_OK);
  CHECK(salient_dataset_count(again, SALIENT_SPLIT_TEST, &n) == SALIENT_OK);
  CHECK(n == 4);

  salient_model* m = nullptr;
  REQUIRE(salient_model_init(kSmall, 1, &m) == SALIENT_OK);
  salient_model* fresh = nullptr;
  REQUIRE(salient_model_clone(m, &fresh) == SALIENT_OK);
  Log log;
  REQUIRE(salient_warmup(m, ds, kSmall, 0, collect, &log) == SALIENT_OK);
  CHECK(log.lines.size() == 2);
  int same = 1;
  CHECK(salient_model_equal(m, fresh, &same) == SALIENT_OK);
  CHECK(same == 0);

  const std::string ck = (dir / "warm.json").string();
  REQUIRE(salient_model_write(m, ck.c_str()) == SALIENT_OK);
  salient_model* loaded = nullptr;
  REQUIRE(salient_model_read(ck.c_str(), &loaded) == SALIENT_OK);
  CHECK(salient_model_equal(m, loaded, &same) == SALIENT_OK);
  CHECK(same == 1);

  salient_model* policy = nullptr;
  const char* zero = R"({"model":{"layers":1,"heads":2,"width":16,"grid_rows":2,"grid_cols":3,"max_len":32,"ffn_mult":2},"grpo":{"steps":0}})";
  REQUIRE(salient_train_grpo(m, ds, zero, 3, nullptr, nullptr, nullptr, &policy) == SALIENT_OK);
  CHECK(salient_model_equal(m, policy, &same) == SALIENT_OK);
  CHECK(same == 1);
  salient_model_free(policy);

  Log glog;
  const char* every = R"({"model":{"layers":1,"heads":2,"width":16,"grid_rows":2,"grid_cols":3,"max_len":32,"ffn_mult":2},)"
                      R"("grpo":{"steps":2,"group_size":2,"lr":1e-4,"checkpoint_every":1}})";
  REQUIRE(salient_train_grpo(m, ds, every, 3, collect, on_checkpoint, &glog, &policy) == SALIENT_OK);
  CHECK(glog.lines.size() == 2);
  CHECK(glog.checkpoints == std::vector<size_t>{1, 2});
  CHECK(glog.lines[0].find("\"mean_accuracy\"") != std::string::npos);

  char* rj = nullptr;
  char* rc = nullptr;
  REQUIRE(salient_evaluate(policy, ds, SALIENT_EVAL_FAITHFULNESS, kSmall, 0, &rj, &rc) == SALIENT_OK);
  CHECK(std::string(rj).find("\"faithfulness\"") != std::string::npos);
  CHECK(std::string(rc).find("deletion_0.2") != std::string::npos);
  salient_string_free(rj);
  salient_string_free(rc);
  REQUIRE(salient_evaluate(policy, ds, SALIENT_EVAL_COUNTERFACTUAL, kSmall, 0, &rj, nullptr) == SALIENT_OK);
  CHECK(std::string(rj).find("\"background\"") != std::string::npos);
  salient_string_free(rj);

  char* text = nullptr;
  char* sj = nullptr;
  unsigned char* ppm = nullptr;
  unsigned char* pgm = nullptr;
  size_t ppm_len = 0, pgm_len = 0;
  REQUIRE(salient_explain(policy, ds, 12, &text, &sj, &ppm, &ppm_len, &pgm, &pgm_len) == SALIENT_OK);
  CHECK(std::string(sj).find("\"grid_rows\"") != std::string::npos);
  CHECK(std::string(reinterpret_cast<char*>(ppm), 2) == "P6");
  CHECK(std::string(reinterpret_cast<char*>(pgm), 2) == "P5");
  CHECK(ppm_len == 12 + 8 * 12 * 3);  // "P6\n12 8\n255\n" + pixels
  salient_string_free(text);
  salient_string_free(sj);
  salient_buffer_free(ppm);
  salient_buffer_free(pgm);
  CHECK(salient_explain(policy, ds, 999, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr) ==
        SALIENT_ERR_INDEX);

  // a dataset built for another grid is refused
  salient_dataset* other = nullptr;
  REQUIRE(salient_dataset_generate(R"({"data":{"n_train":2,"n_test":1}})", 5, &other) == SALIENT_OK);
  CHECK(salient_warmup(m, other, kSmall, 0, nullptr, nullptr) == SALIENT_ERR_VALIDATION);
  CHECK(std::string(salient_last_error()).find("grid") != std::string::npos);

  CHECK(salient_dataset_read((dir / "missing").string().c_str(), &other) != SALIENT_OK);

  salient_dataset_free(other);
  salient_model_free(policy);
  salient_model_free(loaded);
  salient_model_free(fresh);
  salient_model_free(m);
  salient_dataset_free(again);
  salient_dataset_free(ds);
  fs::remove_all(dir);
}
