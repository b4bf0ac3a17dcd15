#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "model.hpp"
#include "saliency.hpp"

namespace salient {

// Pixel rectangle, half-open on the max side.
struct BoundingBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  std::size_t area() const { return (x1 - x0) * (y1 - y0); }
  void validate(std::size_t image_w, std::size_t image_h) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

bool in_union(std::span<const BoundingBox> boxes, std::size_t x, std::size_t y);

struct RewardBreakdown {
  double accuracy = 0.0;
  double format = 0.0;
  double saliency = 0.0;
  double overall = 0.0;

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

// Fraction of (nearest-neighbor upsampled) saliency mass inside the union of
// boxes. An all-zero map scores 0.
double alignment_score(const SaliencyMap& map, std::span<const BoundingBox> boxes,
                       std::size_t image_w, std::size_t image_h);

// 1 iff the response opens with <think>, has exactly one </think>, and at
// least one answer token (not <eos>/<pad>) follows it.
double format_reward(std::span<const TokenId> response);
double format_reward(const SegmentedSequence& seq);
double format_reward(std::string_view text);

// Exact match after dropping <pad> and <eos> tokens.
double accuracy_reward(std::span<const TokenId> predicted, std::span<const TokenId> gold);

RewardBreakdown overall_reward(double accuracy, double format, double saliency);

}  // namespace salient
