#include "reward.hpp"

#include <algorithm>
#include <sstream>
#include <string>

#include "error.hpp"

namespace salient {

namespace {

std::vector<TokenId> normalize_answer(std::span<const TokenId> ids) {
  std::vector<TokenId> out;
  for (TokenId t : ids)
    if (t != tok::kPad && t != tok::kEos) out.push_back(t);
  return out;
}

bool is_binary(double v) { return v == 0.0 || v == 1.0; }

}  // namespace

void BoundingBox::validate(std::size_t image_w, std::size_t image_h) const {
  if (!(x0 < x1 && x1 <= image_w && y0 < y1 && y1 <= image_h)) {
    std::ostringstream os;
    os << "bounding box [" << x0 << ',' << y0 << ',' << x1 << ',' << y1
       << ") invalid for a " << image_w << 'x' << image_h << " image";
    fail(ErrorKind::kValidation, os.str());
  }
}

bool in_union(std::span<const BoundingBox> boxes, std::size_t x, std::size_t y) {
  return std::any_of(boxes.begin(), boxes.end(),
                     [&](const BoundingBox& b) { return b.contains(x, y); });
}

double alignment_score(const SaliencyMap& map, std::span<const BoundingBox> boxes,
                       std::size_t image_w, std::size_t image_h) {
  if (boxes.empty()) fail(ErrorKind::kUsage, "alignment_score: empty box list");
  if (map.rows == 0 || map.cols == 0 || image_w % map.cols != 0 || image_h % map.rows != 0 ||
      image_w / map.cols != image_h / map.rows) {
    fail(ErrorKind::kShape, "alignment_score: map grid does not tile the image");
  }
  for (const auto& b : boxes) b.validate(image_w, image_h);
  const std::size_t px = image_w / map.cols;
  const auto pixels = upsample_nearest(map, px);
  double inside = 0.0, total = 0.0;
  for (std::size_t y = 0; y < image_h; ++y) {
    for (std::size_t x = 0; x < image_w; ++x) {
      const double v = pixels[y * image_w + x];
      total += v;
      if (in_union(boxes, x, y)) inside += v;
    }
  }
  if (total <= 0.0) return 0.0;
  return std::clamp(inside / total, 0.0, 1.0);
}

double format_reward(std::span<const TokenId> response) {
  if (response.empty() || response.front() != tok::kBeginThink) return 0.0;
  const auto closes = std::count(response.begin(), response.end(), tok::kEndThink);
  if (closes != 1) return 0.0;
  const auto close = std::find(response.begin(), response.end(), tok::kEndThink);
  const bool has_answer = std::any_of(close + 1, response.end(), [](TokenId t) {
    return t != tok::kEos && t != tok::kPad && t != tok::kBeginThink;
  });
  return has_answer ? 1.0 : 0.0;
}

double format_reward(const SegmentedSequence& seq) {
  std::vector<TokenId> response;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.segments[i] == Segment::kThink || seq.segments[i] == Segment::kAnswer) {
      response.push_back(seq.tokens[i]);
    }
  }
  return format_reward(response);
}

double format_reward(std::string_view text) {
  const std::string s(text);
  std::istringstream is(s);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  if (words.empty() || words.front() != "<think>") return 0.0;
  const auto closes = std::count(words.begin(), words.end(), "</think>");
  if (closes != 1) return 0.0;
  const auto close = std::find(words.begin(), words.end(), "</think>");
  const bool has_answer = std::any_of(close + 1, words.end(), [](const std::string& w) {
    return w != "<eos>" && w != "<pad>" && w != "<think>";
  });
  return has_answer ? 1.0 : 0.0;
}

double accuracy_reward(std::span<const TokenId> predicted, std::span<const TokenId> gold) {
  const auto g = normalize_answer(gold);
  if (g.empty()) fail(ErrorKind::kUsage, "accuracy_reward: empty gold answer");
  return normalize_answer(predicted) == g ? 1.0 : 0.0;
}

RewardBreakdown overall_reward(double accuracy, double format, double saliency) {
  if (!is_binary(accuracy)) fail(ErrorKind::kValidation, "accuracy reward must be 0 or 1");
  if (!is_binary(format)) fail(ErrorKind::kValidation, "format reward must be 0 or 1");
  if (!(saliency >= 0.0 && saliency <= 1.0)) {
    fail(ErrorKind::kValidation, "saliency reward must lie in [0, 1]");
  }
  RewardBreakdown r;
  r.accuracy = accuracy;
  r.format = format;
  r.saliency = format == 0.0 ? 0.0 : saliency;
  r.overall = r.accuracy + r.format + r.saliency;
  return r;
}

}  // namespace salient
