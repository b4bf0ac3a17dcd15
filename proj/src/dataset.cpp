#include "dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "vocab.hpp"

namespace salient {

namespace {

using nlohmann::json;

struct Object {
  std::size_t cell = 0;
  std::size_t color = 0;
  std::size_t shape = 0;
};

std::size_t pick_other(std::mt19937_64& rng, std::size_t n, std::size_t excluded) {
  std::uniform_int_distribution<std::size_t> u(0, n - 2);
  const std::size_t v = u(rng);
  return v >= excluded ? v + 1 : v;
}

json task_to_json(const TaskConfig& t) {
  json fam = json::array();
  for (auto k : t.families) fam.push_back(question_kind_name(k));
  return json{{"grid_rows", t.grid_rows},     {"grid_cols", t.grid_cols},
              {"patch_px", t.patch_px},       {"min_objects", t.min_objects},
              {"max_objects", t.max_objects}, {"families", fam}};
}

TaskConfig task_from_json(const json& j) {
  TaskConfig t;
  t.grid_rows = j.value("grid_rows", t.grid_rows);
  t.grid_cols = j.value("grid_cols", t.grid_cols);
  t.patch_px = j.value("patch_px", t.patch_px);
  t.min_objects = j.value("min_objects", t.min_objects);
  t.max_objects = j.value("max_objects", t.max_objects);
  if (j.contains("families")) {
    t.families.clear();
    for (const auto& f : j.at("families")) t.families.push_back(question_kind_from_name(f.get<std::string>()));
  }
  return t;
}

json sample_to_json(const DataSample& s) {
  json boxes = json::array();
  for (const auto& b : s.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
  return json{{"id", s.id},
              {"split", s.split == Split::kTrain ? "train" : "test"},
              {"image", "images/" + image_file_name(s.id)},
              {"question", s.question},
              {"answer", s.answer},
              {"boxes", boxes},
              {"warmup", s.warmup}};
}

}  // namespace

const char* question_kind_name(QuestionKind k) {
  switch (k) {
    case QuestionKind::kColorOfShape: return "color_of_shape";
    case QuestionKind::kShapeOfColor: return "shape_of_color";
    case QuestionKind::kCountOfColor: return "count_of_color";
  }
  return "?";
}

QuestionKind question_kind_from_name(const std::string& name) {
  for (auto k : {QuestionKind::kColorOfShape, QuestionKind::kShapeOfColor, QuestionKind::kCountOfColor}) {
    if (name == question_kind_name(k)) return k;
  }
  fail(ErrorKind::kConfig, "unknown question family '" + name + "'");
}

void TaskConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::kConfig, "task: " + m); };
  if (grid_rows == 0 || grid_cols == 0) bad("grid must be non-empty");
  if (grid_rows > tok::kMaxGrid || grid_cols > tok::kMaxGrid) {
    bad("grid side exceeds the " + std::to_string(tok::kMaxGrid) + " row/column tokens");
  }
  if (patch_px < 4) bad("patch_px must be >= 4 so that shapes stay distinguishable");
  if (min_objects < 2 || min_objects > max_objects) bad("need 2 <= min_objects <= max_objects");
  if (max_objects > grid_rows * grid_cols) bad("more objects than grid cells");
  if (max_objects > tok::kNumCounts + 1) bad("max_objects too large for the count vocabulary");
  if (families.empty()) bad("at least one question family is required");
}

TaskConfig task_for_model(const ModelConfig& model) {
  TaskConfig t;
  t.grid_rows = model.grid_rows;
  t.grid_cols = model.grid_cols;
  t.patch_px = model.patch_px;
  return t;
}

std::vector<const DataSample*> Dataset::split(Split s) const {
  std::vector<const DataSample*> out;
  for (const auto& x : samples)
    if (x.split == s) out.push_back(&x);
  return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t id) {
  // splitmix64 over the combined key
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (id + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<bool> shape_mask(std::size_t shape, std::size_t p) {
  std::vector<bool> m(p * p, false);
  const std::size_t lo = (p - 1) / 2, hi = p / 2;  // middle row/col band
  const std::size_t q = p / 4;
  for (std::size_t y = 0; y < p; ++y) {
    for (std::size_t x = 0; x < p; ++x) {
      bool on = false;
      switch (shape) {
        case 0: on = true; break;                                            // square
        case 1: on = y == 0 || x == 0 || y == p - 1 || x == p - 1; break;     // ring
        case 2: on = (y >= lo && y <= hi) || (x >= lo && x <= hi); break;    // plus
        case 3: on = x == y || x + y == p - 1; break;                         // cross
        case 4: on = y >= q && y < p - q && x >= q && x < p - q; break;      // dot
        default: fail(ErrorKind::kIndex, "unknown shape");
      }
      m[y * p + x] = on;
    }
  }
  return m;
}

std::array<double, 3> color_rgb(std::size_t color) {
  static constexpr std::array<std::array<double, 3>, tok::kNumColors> kRgb = {{
      {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}}};
  if (color >= kRgb.size()) fail(ErrorKind::kIndex, "unknown color");
  return kRgb[color];
}

DataSample generate_sample(const TaskConfig& task, std::uint64_t seed, std::uint64_t id) {
  task.validate();
  std::mt19937_64 rng(seed);
  const std::size_t cells = task.grid_rows * task.grid_cols;

  std::uniform_int_distribution<std::size_t> n_dist(task.min_objects, task.max_objects);
  const std::size_t n = n_dist(rng);
  std::vector<std::size_t> order(cells);
  for (std::size_t i = 0; i < cells; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::uniform_int_distribution<std::size_t> fam_dist(0, task.families.size() - 1);
  const QuestionKind kind = task.families[fam_dist(rng)];
  std::uniform_int_distribution<std::size_t> color_dist(0, tok::kNumColors - 1);
  std::uniform_int_distribution<std::size_t> shape_dist(0, tok::kNumShapes - 1);

  std::vector<Object> objects(n);
  for (std::size_t i = 0; i < n; ++i) {
    objects[i].cell = order[i];
    objects[i].color = color_dist(rng);
    objects[i].shape = shape_dist(rng);
  }

  DataSample s;
  s.id = id;
  std::size_t targets = 1;
  switch (kind) {
    case QuestionKind::kColorOfShape: {
      for (std::size_t i = 1; i < n; ++i) objects[i].shape = pick_other(rng, tok::kNumShapes, objects[0].shape);
      s.question = {tok::kWhat, tok::kColor, static_cast<TokenId>(tok::kFirstShape + objects[0].shape)};
      s.answer = {static_cast<TokenId>(tok::kFirstColor + objects[0].color)};
      break;
    }
    case QuestionKind::kShapeOfColor: {
      for (std::size_t i = 1; i < n; ++i) objects[i].color = pick_other(rng, tok::kNumColors, objects[0].color);
      s.question = {tok::kWhat, tok::kShape, static_cast<TokenId>(tok::kFirstColor + objects[0].color)};
      s.answer = {static_cast<TokenId>(tok::kFirstShape + objects[0].shape)};
      break;
    }
    case QuestionKind::kCountOfColor: {
      std::uniform_int_distribution<std::size_t> k_dist(1, std::min(n, tok::kNumCounts));
      targets = k_dist(rng);
      for (std::size_t i = 1; i < n; ++i) {
        objects[i].color = i < targets ? objects[0].color : pick_other(rng, tok::kNumColors, objects[0].color);
      }
      s.question = {tok::kCount, static_cast<TokenId>(tok::kFirstColor + objects[0].color)};
      s.answer = {static_cast<TokenId>(tok::kFirstCount + targets - 1)};
      break;
    }
  }

  const std::size_t px = task.patch_px;
  s.image = Image(task.image_height(), task.image_width());
  for (const auto& o : objects) {
    const std::size_t r = o.cell / task.grid_cols, c = o.cell % task.grid_cols;
    const auto mask = shape_mask(o.shape, px);
    const auto rgb = color_rgb(o.color);
    for (std::size_t y = 0; y < px; ++y)
      for (std::size_t x = 0; x < px; ++x)
        if (mask[y * px + x])
          for (std::size_t ch = 0; ch < 3; ++ch) s.image.at(r * px + y, c * px + x, ch) = rgb[ch];
  }

  std::vector<std::size_t> target_cells;
  for (std::size_t i = 0; i < targets; ++i) target_cells.push_back(objects[i].cell);
  std::sort(target_cells.begin(), target_cells.end());

  s.warmup.push_back(tok::kBeginThink);
  for (std::size_t cell : target_cells) {
    const std::size_t r = cell / task.grid_cols, c = cell % task.grid_cols;
    s.boxes.push_back({c * px, r * px, (c + 1) * px, (r + 1) * px});
    s.warmup.push_back(tok::kLook);
    s.warmup.push_back(static_cast<TokenId>(tok::kFirstRow + r));
    s.warmup.push_back(static_cast<TokenId>(tok::kFirstCol + c));
  }
  s.warmup.push_back(tok::kEndThink);
  s.warmup.insert(s.warmup.end(), s.answer.begin(), s.answer.end());
  s.warmup.push_back(tok::kEos);
  return s;
}

Dataset generate_dataset(const TaskConfig& task, std::uint64_t seed, std::size_t n_train,
                         std::size_t n_test, std::size_t vocab_size) {
  task.validate();
  Dataset ds;
  ds.manifest.format_version = kDatasetVersion;
  ds.manifest.task = task;
  ds.manifest.vocabulary = Vocabulary(vocab_size).names();
  ds.manifest.sample_count = n_train + n_test;
  ds.manifest.seed = seed;
  ds.samples.reserve(n_train + n_test);
  for (std::uint64_t id = 0; id < n_train + n_test; ++id) {
    DataSample s = generate_sample(task, derive_seed(seed, id), id);
    s.split = id < n_train ? Split::kTrain : Split::kTest;
    (s.split == Split::kTrain ? ds.manifest.train_ids : ds.manifest.test_ids).push_back(id);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<TokenId> answer_from_pixels(const TaskConfig& task, const DataSample& sample) {
  const std::size_t px = task.patch_px;
  // Identify (color, shape) of every box from its pixels alone.
  std::vector<std::pair<std::size_t, std::size_t>> found;
  for (const auto& b : sample.boxes) {
    std::vector<bool> mask(px * px, false);
    std::array<double, 3> rgb{0, 0, 0};
    for (std::size_t y = 0; y < px; ++y)
      for (std::size_t x = 0; x < px; ++x) {
        const std::size_t iy = b.y0 + y, ix = b.x0 + x;
        const bool lit = sample.image.at(iy, ix, 0) + sample.image.at(iy, ix, 1) + sample.image.at(iy, ix, 2) > 0;
        mask[y * px + x] = lit;
        if (lit) rgb = {sample.image.at(iy, ix, 0), sample.image.at(iy, ix, 1), sample.image.at(iy, ix, 2)};
      }
    std::size_t color = tok::kNumColors, shape = tok::kNumShapes;
    for (std::size_t c = 0; c < tok::kNumColors; ++c)
      if (color_rgb(c) == rgb) color = c;
    for (std::size_t sh = 0; sh < tok::kNumShapes; ++sh)
      if (shape_mask(sh, px) == mask) shape = sh;
    if (color == tok::kNumColors || shape == tok::kNumShapes) return {};
    found.emplace_back(color, shape);
  }
  if (found.empty() || sample.question.empty()) return {};

  if (sample.question[0] == tok::kCount) {
    return {static_cast<TokenId>(tok::kFirstCount + found.size() - 1)};
  }
  if (found.size() != 1 || sample.question.size() < 2) return {};
  if (sample.question[1] == tok::kColor) return {static_cast<TokenId>(tok::kFirstColor + found[0].first)};
  if (sample.question[1] == tok::kShape) return {static_cast<TokenId>(tok::kFirstShape + found[0].second)};
  return {};
}

std::string image_file_name(std::uint64_t id) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << id << ".ppm";
  return os.str();
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + (dir / "images").string() + ": " + ec.message());

  json m{{"format_version", ds.manifest.format_version},
         {"task", task_to_json(ds.manifest.task)},
         {"vocabulary", ds.manifest.vocabulary},
         {"sample_count", ds.manifest.sample_count},
         {"splits", {{"train", ds.manifest.train_ids}, {"test", ds.manifest.test_ids}}},
         {"seed", ds.manifest.seed}};
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) fail(ErrorKind::kIo, "cannot write manifest.json");
    out << m.dump(2) << '\n';
  }
  std::ofstream lines(dir / "samples.jsonl", std::ios::binary);
  if (!lines) fail(ErrorKind::kIo, "cannot write samples.jsonl");
  for (const auto& s : ds.samples) {
    lines << sample_to_json(s).dump() << '\n';
    write_ppm(dir / "images" / image_file_name(s.id), s.image);
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) fail(ErrorKind::kIo, "cannot read " + (dir / "manifest.json").string());
    json m;
    try {
      m = json::parse(in);
      ds.manifest.format_version = m.at("format_version").get<int>();
      if (ds.manifest.format_version != kDatasetVersion) {
        fail(ErrorKind::kParse, "manifest.json: unsupported format_version " +
                                    std::to_string(ds.manifest.format_version));
      }
      ds.manifest.task = task_from_json(m.at("task"));
      ds.manifest.vocabulary = m.at("vocabulary").get<std::vector<std::string>>();
      ds.manifest.sample_count = m.at("sample_count").get<std::size_t>();
      ds.manifest.train_ids = m.at("splits").at("train").get<std::vector<std::uint64_t>>();
      ds.manifest.test_ids = m.at("splits").at("test").get<std::vector<std::uint64_t>>();
      ds.manifest.seed = m.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      fail(ErrorKind::kParse, std::string("manifest.json: ") + e.what());
    }
  }
  const TaskConfig& task = ds.manifest.task;
  task.validate();

  std::set<std::uint64_t> train(ds.manifest.train_ids.begin(), ds.manifest.train_ids.end());
  std::set<std::uint64_t> test(ds.manifest.test_ids.begin(), ds.manifest.test_ids.end());
  for (auto id : test)
    if (train.count(id)) fail(ErrorKind::kValidation, "consistency error: sample " + std::to_string(id) + " is in both splits");

  std::ifstream in(dir / "samples.jsonl", std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + (dir / "samples.jsonl").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "samples.jsonl line " + std::to_string(lineno) + ": ";
    DataSample s;
    try {
      const json j = json::parse(line);
      s.id = j.at("id").get<std::uint64_t>();
      const std::string split = j.at("split").get<std::string>();
      if (split != "train" && split != "test") fail(ErrorKind::kParse, where + "unknown split '" + split + "'");
      s.split = split == "train" ? Split::kTrain : Split::kTest;
      s.question = j.at("question").get<std::vector<TokenId>>();
      s.answer = j.at("answer").get<std::vector<TokenId>>();
      s.warmup = j.at("warmup").get<std::vector<TokenId>>();
      for (const auto& b : j.at("boxes")) {
        const auto v = b.get<std::vector<std::size_t>>();
        if (v.size() != 4) fail(ErrorKind::kParse, where + "box must have 4 coordinates");
        s.boxes.push_back({v[0], v[1], v[2], v[3]});
      }
      s.image = read_ppm(dir / j.at("image").get<std::string>());
    } catch (const json::exception& e) {
      fail(ErrorKind::kParse, where + e.what());
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kParse && std::string(e.what()).rfind("samples.jsonl", 0) == 0) throw;
      fail(e.kind(), where + e.what());
    }
    if (s.image.width() != task.image_width() || s.image.height() != task.image_height()) {
      fail(ErrorKind::kParse, where + "image size does not match the task grid");
    }
    for (const auto& b : s.boxes) {
      try {
        b.validate(task.image_width(), task.image_height());
      } catch (const Error& e) {
        fail(ErrorKind::kParse, where + e.what());
      }
    }
    const bool listed = s.split == Split::kTrain ? train.count(s.id) > 0 : test.count(s.id) > 0;
    if (!listed) {
      fail(ErrorKind::kValidation, where + "consistency error: sample " + std::to_string(s.id) +
                                       " not listed in its manifest split");
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.size() != ds.manifest.sample_count) {
    fail(ErrorKind::kValidation, "consistency error: manifest lists " +
                                     std::to_string(ds.manifest.sample_count) + " samples, samples.jsonl has " +
                                     std::to_string(ds.samples.size()));
  }
  if (train.size() + test.size() != ds.manifest.sample_count) {
    fail(ErrorKind::kValidation, "consistency error: splits do not cover every sample");
  }
  return ds;
}

}  // namespace salient
