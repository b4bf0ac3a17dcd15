#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "image.hpp"
#include "model.hpp"
#include "reward.hpp"

namespace salient {

enum class QuestionKind { kColorOfShape, kShapeOfColor, kCountOfColor };

const char* question_kind_name(QuestionKind k);
QuestionKind question_kind_from_name(const std::string& name);

struct TaskConfig {
  std::size_t grid_rows = 6;
  std::size_t grid_cols = 6;
  std::size_t patch_px = 4;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::vector<QuestionKind> families = {QuestionKind::kColorOfShape, QuestionKind::kShapeOfColor,
                                        QuestionKind::kCountOfColor};

  std::size_t image_width() const { return grid_cols * patch_px; }
  std::size_t image_height() const { return grid_rows * patch_px; }
  void validate() const;

  friend bool operator==(const TaskConfig&, const TaskConfig&) = default;
};

// Task grid matching a model configuration.
TaskConfig task_for_model(const ModelConfig& model);

enum class Split { kTrain, kTest };

struct DataSample {
  std::uint64_t id = 0;
  Split split = Split::kTrain;
  Image image;
  std::vector<TokenId> question;
  std::vector<TokenId> answer;
  std::vector<BoundingBox> boxes;
  // <think> look rowR colC ... </think> answer <eos>
  std::vector<TokenId> warmup;

  friend bool operator==(const DataSample&, const DataSample&) = default;
};

struct DatasetManifest {
  int format_version = 1;
  TaskConfig task;
  std::vector<std::string> vocabulary;
  std::size_t sample_count = 0;
  std::vector<std::uint64_t> train_ids;
  std::vector<std::uint64_t> test_ids;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<DataSample> samples;

  std::vector<const DataSample*> split(Split s) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr int kDatasetVersion = 1;

// Per-sample seed derived from (master seed, id).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t id);

// Shape masks on a patch_px x patch_px block, row-major; index = shape offset.
std::vector<bool> shape_mask(std::size_t shape, std::size_t patch_px);
// RGB of a color offset, components in {0, 1}.
std::array<double, 3> color_rgb(std::size_t color);

DataSample generate_sample(const TaskConfig& task, std::uint64_t seed, std::uint64_t id = 0);
Dataset generate_dataset(const TaskConfig& task, std::uint64_t seed, std::size_t n_train,
                         std::size_t n_test, std::size_t vocab_size = 64);

// Re-derives the gold answer from pixels inside the box union, for checking
// generator output independently of how it was produced.
std::vector<TokenId> answer_from_pixels(const TaskConfig& task, const DataSample& sample);

// Layout: <dir>/manifest.json, <dir>/samples.jsonl, <dir>/images/<id>.ppm.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

std::string image_file_name(std::uint64_t id);

}  // namespace salient
