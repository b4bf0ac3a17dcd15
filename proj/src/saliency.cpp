#include "saliency.hpp"

#include <algorithm>

#include <json.hpp>

#include "error.hpp"

namespace salient {

namespace {

// gamma_final * E_u[:, target] / sigma_i: projects a residual-stream vector
// onto the normalized target logit.
std::vector<double> logit_direction(const ModelParams& params, const ForwardTrace& trace,
                                    std::size_t position, TokenId target) {
  const std::size_t d = params.config.width;
  const double sigma = trace.final_sigma.at(position);
  std::vector<double> u(d);
  for (std::size_t j = 0; j < d; ++j) {
    u[j] = params.final_gain[j] * params.unembed(j, target) / sigma;
  }
  return u;
}

void require_rollout_segments(const SegmentedSequence& seq) {
  if (seq.positions(Segment::kThink).empty()) {
    fail(ErrorKind::kSegment, "rollout needs at least one think position");
  }
  if (answer_steps(seq).empty()) {
    fail(ErrorKind::kSegment, "rollout needs at least one answer token");
  }
}

}  // namespace

double SaliencyMap::total() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

bool SaliencyMap::is_zero() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

std::vector<double> upsample_nearest(const SaliencyMap& map, std::size_t patch_px) {
  const std::size_t w = map.cols * patch_px;
  std::vector<double> out(map.rows * patch_px * w);
  for (std::size_t y = 0; y < map.rows * patch_px; ++y)
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = map.at(y / patch_px, x / patch_px);
  return out;
}

std::vector<AnswerStep> answer_steps(const SegmentedSequence& seq) {
  std::vector<AnswerStep> steps;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    if (seq.segments[i] != Segment::kAnswer) continue;
    const TokenId t = seq.tokens[i];
    if (t == tok::kEos || t == tok::kPad) continue;
    steps.push_back({i - 1, i, t});
  }
  return steps;
}

ContributionVector direct_contributions(const ModelParams& params, const ForwardTrace& trace,
                                        std::size_t position, TokenId target) {
  if (position >= trace.length) {
    fail(ErrorKind::kIndex, "position " + std::to_string(position) + " outside trace of length " +
                                std::to_string(trace.length));
  }
  if (target >= params.config.vocab) {
    fail(ErrorKind::kIndex, "target token " + std::to_string(target) + " outside vocabulary");
  }
  const std::size_t d = params.config.width;
  const auto u = logit_direction(params, trace, position, target);

  ContributionVector cv;
  cv.position = position;
  cv.target = target;
  cv.logit = trace.logits(position, target);
  cv.contributions.assign(position + 1, 0.0);
  for (std::size_t l = 0; l < trace.layers; ++l) {
    for (std::size_t h = 0; h < trace.heads; ++h) {
      const Tensor& alpha = trace.alpha(l, h);
      const Tensor& vout = trace.value_out(l, h);
      for (std::size_t p = 0; p <= position; ++p) {
        const double a = alpha(position, p);
        if (a == 0.0) continue;
        cv.contributions[p] += a * dot(vout.row(p), u);
      }
    }
  }

  std::vector<double> rest(trace.hidden[0].row(position).begin(),
                           trace.hidden[0].row(position).end());
  for (const Tensor& f : trace.ffn) {
    auto fr = f.row(position);
    for (std::size_t j = 0; j < d; ++j) rest[j] += fr[j];
  }
  cv.remainder = dot(rest, u);
  return cv;
}

SaliencyMap token_saliency_map(const ContributionVector& contrib, const SegmentedSequence& seq,
                               const ModelConfig& config) {
  const auto visual = seq.positions(Segment::kVisual);
  if (visual.empty()) fail(ErrorKind::kUsage, "sequence has no visual positions");
  if (visual.size() != config.num_patches()) {
    fail(ErrorKind::kShape, "visual block does not match the patch grid");
  }
  SaliencyMap map(config.grid_rows, config.grid_cols);
  for (std::size_t k = 0; k < visual.size(); ++k) {
    const std::size_t p = visual[k];
    const double c = p < contrib.contributions.size() ? contrib.contributions[p] : 0.0;
    map.values[k] = std::max(c, 0.0);
  }
  return map;
}

BottleneckRollout bottleneck_rollout(const ForwardTrace& trace, const SegmentedSequence& seq) {
  require_rollout_segments(seq);
  BottleneckRollout r;
  r.layers = trace.layers;
  r.heads = trace.heads;
  r.visual_positions = seq.positions(Segment::kVisual);
  r.think_positions = seq.positions(Segment::kThink);
  r.answers = answer_steps(seq);
  const std::size_t nv = r.visual_positions.size();
  const std::size_t nt = r.think_positions.size();
  const std::size_t na = r.answers.size();

  for (std::size_t l = 0; l < trace.layers; ++l) {
    for (std::size_t h = 0; h < trace.heads; ++h) {
      const Tensor& alpha = trace.alpha(l, h);
      Tensor vt({nv, nt});
      for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t t = 0; t < nt; ++t) vt(v, t) = alpha(r.think_positions[t], r.visual_positions[v]);
      Tensor ta({nt, na});
      for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t a = 0; a < na; ++a) ta(t, a) = alpha(r.answers[a].position, r.think_positions[t]);
      r.combined.push_back(matmul(vt, ta));
    }
  }
  return r;
}

std::vector<SaliencyMap> transitional_maps(const ModelParams& params, const ForwardTrace& trace,
                                           const SegmentedSequence& seq) {
  const BottleneckRollout rollout = bottleneck_rollout(trace, seq);
  const ModelConfig& cfg = params.config;
  std::vector<SaliencyMap> maps;
  maps.reserve(rollout.answers.size());
  for (std::size_t a = 0; a < rollout.answers.size(); ++a) {
    const AnswerStep& step = rollout.answers[a];
    const auto u = logit_direction(params, trace, step.position, step.target);
    std::vector<double> contrib(rollout.visual_positions.size(), 0.0);
    for (std::size_t l = 0; l < trace.layers; ++l) {
      for (std::size_t h = 0; h < trace.heads; ++h) {
        const Tensor& weights = rollout.at(l, h);
        const Tensor& vout = trace.value_out(l, h);
        for (std::size_t v = 0; v < contrib.size(); ++v) {
          const double w = weights(v, a);
          if (w == 0.0) continue;
          contrib[v] += w * dot(vout.row(rollout.visual_positions[v]), u);
        }
      }
    }
    SaliencyMap m(cfg.grid_rows, cfg.grid_cols);
    for (std::size_t v = 0; v < contrib.size(); ++v) m.values[v] = std::max(contrib[v], 0.0);
    maps.push_back(std::move(m));
  }
  return maps;
}

SaliencyMap holistic_saliency_map(const ModelParams& params, const ForwardTrace& trace,
                                  const SegmentedSequence& seq) {
  const auto maps = transitional_maps(params, trace, seq);
  SaliencyMap total(params.config.grid_rows, params.config.grid_cols);
  for (const auto& m : maps)
    for (std::size_t k = 0; k < m.values.size(); ++k) total.values[k] += m.values[k];
  return total;
}

std::string saliency_json(const SaliencyMap& map) {
  nlohmann::json j{{"grid_rows", map.rows}, {"grid_cols", map.cols}, {"values", map.values}};
  return j.dump();
}

SaliencyMap saliency_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SaliencyMap m;
    m.rows = j.at("grid_rows").get<std::size_t>();
    m.cols = j.at("grid_cols").get<std::size_t>();
    m.values = j.at("values").get<std::vector<double>>();
    if (m.values.size() != m.rows * m.cols) fail(ErrorKind::kParse, "saliency: values length mismatch");
    for (double v : m.values)
      if (!(v >= 0.0)) fail(ErrorKind::kParse, "saliency: negative or non-finite value");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("saliency: ") + e.what());
  }
}

std::string saliency_pgm(const SaliencyMap& map, std::size_t scale) {
  if (scale == 0) scale = 1;
  const double mx = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  const std::size_t h = map.rows * scale, w = map.cols * scale;
  std::vector<double> gray(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      gray[y * w + x] = mx > 0.0 ? map.at(y / scale, x / scale) / mx : 0.0;
  return encode_pgm(h, w, gray);
}

}  // namespace salient
