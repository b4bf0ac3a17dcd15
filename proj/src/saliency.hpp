#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "model.hpp"

namespace salient {

// Direct first-order contributions of every context position p <= i to the
// target logit at position i, under the final RMSNorm statistic of h^L_i.
struct ContributionVector {
  std::size_t position = 0;
  TokenId target = 0;
  std::vector<double> contributions;  // indexed by context position
  double remainder = 0.0;             // embedding + FFN terms
  double logit = 0.0;                 // logits[i][target] from the trace
};

// Non-negative grid over visual patches, row-major.
struct SaliencyMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  SaliencyMap() = default;
  SaliencyMap(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double total() const;
  bool is_zero() const;

  friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;
};

// Nearest-neighbor expansion of each cell to a patch_px x patch_px block.
std::vector<double> upsample_nearest(const SaliencyMap& map, std::size_t patch_px);

// One answer token: its logit lives at `position` (the step that emitted it).
struct AnswerStep {
  std::size_t position = 0;
  std::size_t token_position = 0;
  TokenId target = 0;
};

// Answer-tagged tokens other than end-of-sequence/padding, each paired with the
// position whose logits produced it.
std::vector<AnswerStep> answer_steps(const SegmentedSequence& seq);

struct BottleneckRollout {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::vector<std::size_t> visual_positions;
  std::vector<std::size_t> think_positions;
  std::vector<AnswerStep> answers;
  std::vector<Tensor> combined;  // L*H of [num_visual x num_answer]

  const Tensor& at(std::size_t l, std::size_t h) const { return combined[l * heads + h]; }
};

ContributionVector direct_contributions(const ModelParams& params, const ForwardTrace& trace,
                                        std::size_t position, TokenId target);

SaliencyMap token_saliency_map(const ContributionVector& contrib, const SegmentedSequence& seq,
                               const ModelConfig& config);

// Per layer/head: visual->think attention times think->answer attention,
// without normalization.
BottleneckRollout bottleneck_rollout(const ForwardTrace& trace, const SegmentedSequence& seq);

// Per answer token: direct contributions of visual tokens with the attention
// weights replaced by the rollout column, ReLU-ed into a grid.
std::vector<SaliencyMap> transitional_maps(const ModelParams& params, const ForwardTrace& trace,
                                           const SegmentedSequence& seq);

// Sum of the per-answer-token transitional maps.
SaliencyMap holistic_saliency_map(const ModelParams& params, const ForwardTrace& trace,
                                  const SegmentedSequence& seq);

std::string saliency_json(const SaliencyMap& map);
SaliencyMap saliency_from_json(const std::string& text);
// Grayscale render scaled so the maximum maps to white; `scale` repeats pixels.
std::string saliency_pgm(const SaliencyMap& map, std::size_t scale = 1);

}  // namespace salient
