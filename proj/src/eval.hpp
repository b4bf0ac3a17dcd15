#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"
#include "reward.hpp"
#include "saliency.hpp"

namespace salient {

enum class PerturbMode { kDelete, kInsert };

// Patch indices by descending saliency; ties keep row-major order.
std::vector<std::size_t> rank_patches(const SaliencyMap& map);

// round-half-up of fraction * num_patches
std::size_t topk_count(double fraction, std::size_t num_patches);

// Delete zeroes the first k ranked patches; insert starts from black and
// restores them.
Image perturb_ranked(const Image& image, std::span<const std::size_t> ranking, std::size_t k,
                     PerturbMode mode, std::size_t grid_rows, std::size_t grid_cols);
Image perturb_topk(const Image& image, const SaliencyMap& map, double fraction, PerturbMode mode);

// Mean teacher-forced log-probability of the generated part of `response`
// with `image` in the visual block.
double mean_response_logprob(const ModelParams& params, const Image& image,
                             const SegmentedSequence& response);

struct LikelihoodReference {
  double blank = 0.0;     // raw score on the all-zero image
  double original = 0.0;  // raw score on the unperturbed image
};

LikelihoodReference likelihood_reference(const ModelParams& params, const Image& original,
                                         const SegmentedSequence& response);
// 100 * (raw - blank) / (original - blank); degenerate references are an error.
double normalize_likelihood(double raw, const LikelihoodReference& ref);
double normalized_likelihood(const ModelParams& params, const Image& variant,
                             const SegmentedSequence& response, const LikelihoodReference& ref);

struct PerturbationCurve {
  std::vector<double> fractions;
  std::vector<double> scores;  // 0..100 scale
};

inline const std::vector<double>& default_fractions() {
  static const std::vector<double> f{0.05, 0.15, 0.30};
  return f;
}

PerturbationCurve perturbation_curve(const ModelParams& params, const Image& image,
                                     const SegmentedSequence& response, const SaliencyMap& map,
                                     std::span<const double> fractions, PerturbMode mode);
PerturbationCurve deletion_curve(const ModelParams& params, const Image& image,
                                 const SegmentedSequence& response, const SaliencyMap& map,
                                 std::span<const double> fractions);
PerturbationCurve insertion_curve(const ModelParams& params, const Image& image,
                                  const SegmentedSequence& response, const SaliencyMap& map,
                                  std::span<const double> fractions);

// 1 iff the centre of the (first) maximal cell lies in the box union; an
// all-zero map never hits.
int pointing_game_hit(const SaliencyMap& map, std::span<const BoundingBox> boxes,
                      std::size_t image_w, std::size_t image_h);
double energy_pg(const SaliencyMap& map, std::span<const BoundingBox> boxes, std::size_t image_w,
                 std::size_t image_h);

enum class NoiseRegion { kForeground, kBackground };
const char* noise_region_name(NoiseRegion r);

// Gaussian noise (std sigma, clipped to [0,1]) on pixels inside or outside the
// box union.
Image add_region_noise(const Image& image, std::span<const BoundingBox> boxes, double sigma,
                       NoiseRegion region, std::uint64_t seed);

// Greedy exact-match accuracy with noisy images; noise seed per sample is
// derive_seed(seed, sample id).
double counterfactual_accuracy(const ModelParams& params,
                               std::span<const DataSample* const> samples, double sigma,
                               NoiseRegion region, std::uint64_t seed, std::size_t max_new = 16);

// Greedy response plus the maps used by the evaluations.
struct Explained {
  SegmentedSequence response;
  bool well_formed = false;
  bool correct = false;
  SaliencyMap holistic;  // all zero when the response is malformed
};
Explained explain(const ModelParams& params, const DataSample& sample, std::size_t max_new = 16);

struct EvalRecord {
  std::uint64_t id = 0;
  int well_formed = 0;
  int correct = 0;
  int pg_hit = 0;
  double energy_pg = 0.0;
  std::vector<double> deletion;
  std::vector<double> insertion;
};

struct EvalReport {
  std::string kind;
  std::vector<double> fractions;
  std::vector<EvalRecord> records;
  std::size_t skipped = 0;  // degenerate likelihood references

  struct Aggregate {
    double accuracy = 0.0;
    double format = 0.0;
    double pg_hit = 0.0;
    double energy_pg = 0.0;
    std::vector<double> deletion;
    std::vector<double> insertion;
  };
  Aggregate aggregate() const;
};

struct EvalOptions {
  std::vector<double> fractions = default_fractions();
  bool curves = true;
  std::size_t max_new = 16;
};

EvalReport evaluate(const ModelParams& params, std::span<const DataSample* const> samples,
                    const EvalOptions& options, const std::string& kind);

std::string report_json(const EvalReport& report);
std::string report_csv(const EvalReport& report);

struct CounterfactualRow {
  double sigma = 0.0;
  NoiseRegion region = NoiseRegion::kForeground;
  double accuracy = 0.0;
  double drop = 0.0;  // clean accuracy minus this accuracy
};

struct CounterfactualReport {
  std::size_t samples = 0;
  double clean_accuracy = 0.0;
  std::vector<CounterfactualRow> rows;
};

CounterfactualReport counterfactual_sweep(const ModelParams& params,
                                          std::span<const DataSample* const> samples,
                                          std::span<const double> sigmas, std::uint64_t seed,
                                          std::size_t max_new = 16);
std::string counterfactual_json(const CounterfactualReport& report);
std::string counterfactual_csv(const CounterfactualReport& report);

// Base image dimmed by half, blended toward red by normalized heat, boxes
// outlined in green.
Image render_heatmap(const SaliencyMap& map, const Image& image, std::span<const BoundingBox> boxes);

// One-sided exact sign test: P(X >= wins) for X ~ Binomial(trials, 1/2).
double sign_test_p(std::size_t wins, std::size_t trials);

}  // namespace salient
