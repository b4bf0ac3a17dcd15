#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "salient_test_cli";

struct Result {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Result run(const std::string& args, const std::string& env = "") {
  const fs::path log = kRoot / "last_output.txt";
  const std::string cmd = env + " \"" SALIENT_CLI "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string p(const fs::path& x) { return "\"" + x.string() + "\""; }

// Small model so the whole pipeline runs in seconds.
fs::path write_config() {
  const fs::path c = kRoot / "config.json";
  std::ofstream(c) << R"({"model":{"layers":1,"heads":2,"width":16,"ffn_mult":2},)"
                      R"("data":{"n_train":30,"n_test":6},"warmup":{"steps":3,"batch":2},)"
                      R"("grpo":{"steps":2,"group_size":2,"lr":1e-4},"eval":{"limit":5}})";
  return c;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b)) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& f : fa)
    if (fs::is_regular_file(a / f) && slurp(a / f) != slurp(b / f)) return false;
  return true;
}

struct Fresh {
  Fresh() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE("help lists every subcommand and the shared flags") {
  Fresh fresh;
  const Result top = run("--help");
  CHECK(top.code == 0);
  for (const char* sub : {"gen-data", "warmup", "train-grpo", "eval-faithfulness", "eval-pg",
                          "eval-counterfactual", "render"}) {
    CHECK_MESSAGE(top.out.find(sub) != std::string::npos, sub);
    const Result r = run(std::string(sub) + " --help");
    CHECK(r.code == 0);
    for (const char* flag : {"--seed", "--config", "--out"})
      CHECK_MESSAGE(r.out.find(flag) != std::string::npos, sub << " " << flag);
  }
  CHECK(top.out.find("SALIENT_OUT_ROOT") != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
  Fresh fresh;
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("gen-data --no-such-flag").code == 2);
  CHECK(run("eval-pg --data x").code == 2);  // missing --checkpoint
}

TEST_CASE("runtime failures exit nonzero with a diagnostic") {
  Fresh fresh;
  const Result r = run("eval-pg --data " + p(kRoot / "nope") + " --checkpoint " + p(kRoot / "nope.json") +
                       " --out " + p(kRoot / "x"));
  CHECK(r.code == 1);
  CHECK(r.out.find("salient: error:") != std::string::npos);

  std::ofstream(kRoot / "bad.json") << R"({"grpo":{"lrr":1}})";
  const Result b = run("gen-data --config " + p(kRoot / "bad.json") + " --out " + p(kRoot / "y"));
  CHECK(b.code == 1);
  CHECK(b.out.find("grpo.lrr") != std::string::npos);
}

TEST_CASE("gen-data with a fixed seed is byte-identical") {
  Fresh fresh;
  REQUIRE(run("gen-data --seed 7 --n 1000 --out " + p(kRoot / "a")).code == 0);
  REQUIRE(run("gen-data --seed 7 --n 1000 --out " + p(kRoot / "b")).code == 0);
  CHECK(same_tree(kRoot / "a", kRoot / "b"));
  CHECK(fs::exists(kRoot / "a" / "manifest.json"));
  CHECK(fs::exists(kRoot / "a" / "samples.jsonl"));
  CHECK(fs::exists(kRoot / "a" / "images" / "000000.ppm"));
  REQUIRE(run("gen-data --seed 8 --n 1000 --out " + p(kRoot / "c")).code == 0);
  CHECK_FALSE(same_tree(kRoot / "a", kRoot / "c"));
}

TEST_CASE("output root comes from the environment") {
  Fresh fresh;
  const Result r = run("gen-data --n 3 --n-test 1", "SALIENT_OUT_ROOT=" + p(kRoot / "root"));
  CHECK(r.code == 0);
  CHECK(fs::exists(kRoot / "root" / "gen-data" / "manifest.json"));
}

TEST_CASE("pipeline: zero-step GRPO, reports and renders") {
  Fresh fresh;
  const std::string cfg = " --config " + p(write_config());
  const fs::path data = kRoot / "data", warm = kRoot / "warm", g0 = kRoot / "g0", g = kRoot / "g";
  REQUIRE(run("gen-data --seed 3" + cfg + " --out " + p(data)).code == 0);
  REQUIRE(run("warmup --seed 1 --data " + p(data) + cfg + " --out " + p(warm)).code == 0);
  const fs::path warm_ck = warm / "checkpoint.json";
  CHECK(nlohmann::json::parse(slurp(warm_ck)).contains("format_version"));

  REQUIRE(run("train-grpo --steps 0 --data " + p(data) + " --checkpoint " + p(warm_ck) + cfg +
              " --out " + p(g0))
              .code == 0);
  CHECK(slurp(g0 / "checkpoint.json") == slurp(warm_ck));

  REQUIRE(run("train-grpo --seed 2 --data " + p(data) + " --checkpoint " + p(warm_ck) + cfg +
              " --checkpoint-every 1 --out " + p(g))
              .code == 0);
  CHECK(fs::exists(g / "checkpoints" / "step_2.json"));
  std::istringstream log(slurp(g / "train_log.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"step", "mean_reward", "mean_accuracy", "mean_format", "mean_saliency",
                          "objective", "kl", "seed"})
      CHECK_MESSAGE(j.contains(k), k);
    ++lines;
  }
  CHECK(lines == 2);

  const fs::path pg = kRoot / "pg";
  REQUIRE(run("eval-pg --data " + p(data) + " --checkpoint " + p(g / "checkpoint.json") + cfg +
              " --out " + p(pg))
              .code == 0);
  // aggregate recomputed from the CSV rows
  std::istringstream csv(slurp(pg / "report.csv"));
  std::getline(csv, line);
  CHECK(line == "id,well_formed,correct,pg_hit,energy_pg");
  double sum_pg = 0, sum_energy = 0, sum_acc = 0;
  int rows = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    REQUIRE(f.size() == 5);
    sum_acc += std::stod(f[2]);
    sum_pg += std::stod(f[3]);
    sum_energy += std::stod(f[4]);
    ++rows;
  }
  REQUIRE(rows == 5);
  const auto agg = nlohmann::json::parse(slurp(pg / "report.json")).at("aggregate");
  CHECK(agg.at("pg_hit").get<double>() == doctest::Approx(sum_pg / rows).epsilon(1e-12));
  CHECK(agg.at("energy_pg").get<double>() == doctest::Approx(sum_energy / rows).epsilon(1e-12));
  CHECK(agg.at("accuracy").get<double>() == doctest::Approx(sum_acc / rows).epsilon(1e-12));

  for (const char* sub : {"eval-faithfulness", "eval-counterfactual"}) {
    const fs::path out = kRoot / sub;
    REQUIRE(run(std::string(sub) + " --data " + p(data) + " --checkpoint " + p(g / "checkpoint.json") +
                cfg + " --out " + p(out))
                .code == 0);
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "report.csv"));
  }

  const fs::path ren = kRoot / "render";
  REQUIRE(run("render --limit 2 --data " + p(data) + " --checkpoint " + p(g / "checkpoint.json") + cfg +
              " --out " + p(ren))
              .code == 0);
  CHECK(fs::exists(ren / "heatmaps" / "30.ppm"));
  CHECK(fs::exists(ren / "saliency" / "31.pgm"));
  const auto sal = nlohmann::json::parse(slurp(ren / "saliency" / "30.json"));
  CHECK(sal.at("values").size() == sal.at("grid_rows").get<std::size_t>() * sal.at("grid_cols").get<std::size_t>());
  fs::remove_all(kRoot);
}
