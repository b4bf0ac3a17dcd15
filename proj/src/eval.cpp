#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "error.hpp"

namespace salient {

namespace {

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void check_fractions(std::span<const double> fractions) {
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] >= 0.0 && fractions[i] <= 1.0)) {
      fail(ErrorKind::kUsage, "fractions must lie in [0, 1]");
    }
    if (i > 0 && fractions[i] < fractions[i - 1]) {
      fail(ErrorKind::kUsage, "fractions must be sorted ascending");
    }
  }
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << (v == 0.0 ? 0.0 : v);  // no "-0"
  return os.str();
}

}  // namespace

std::vector<std::size_t> rank_patches(const SaliencyMap& map) {
  std::vector<std::size_t> idx(map.values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return map.values[a] > map.values[b]; });
  return idx;
}

std::size_t topk_count(double fraction, std::size_t num_patches) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) fail(ErrorKind::kUsage, "fraction must lie in [0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(num_patches) + 0.5));
  return std::min(k, num_patches);
}

Image perturb_ranked(const Image& image, std::span<const std::size_t> ranking, std::size_t k,
                     PerturbMode mode, std::size_t grid_rows, std::size_t grid_cols) {
  if (grid_rows == 0 || grid_cols == 0 || image.height() % grid_rows != 0 ||
      image.width() % grid_cols != 0) {
    fail(ErrorKind::kShape, "perturb: grid does not tile the image");
  }
  if (k > ranking.size()) fail(ErrorKind::kUsage, "perturb: k exceeds the ranking");
  const std::size_t ph = image.height() / grid_rows, pw = image.width() / grid_cols;
  Image out = mode == PerturbMode::kDelete ? image : Image(image.height(), image.width());
  for (std::size_t n = 0; n < k; ++n) {
    const std::size_t cell = ranking[n];
    if (cell >= grid_rows * grid_cols) fail(ErrorKind::kIndex, "perturb: patch index out of range");
    const std::size_t r = cell / grid_cols, c = cell % grid_cols;
    for (std::size_t y = r * ph; y < (r + 1) * ph; ++y)
      for (std::size_t x = c * pw; x < (c + 1) * pw; ++x)
        for (std::size_t ch = 0; ch < Image::kChannels; ++ch)
          out.at(y, x, ch) = mode == PerturbMode::kDelete ? 0.0 : image.at(y, x, ch);
  }
  return out;
}

Image perturb_topk(const Image& image, const SaliencyMap& map, double fraction, PerturbMode mode) {
  const auto ranking = rank_patches(map);
  return perturb_ranked(image, ranking, topk_count(fraction, ranking.size()), mode, map.rows,
                        map.cols);
}

double mean_response_logprob(const ModelParams& params, const Image& image,
                             const SegmentedSequence& response) {
  const auto lp = sequence_logprob(params, image, response);
  return lp.total / static_cast<double>(lp.per_token.size());
}

LikelihoodReference likelihood_reference(const ModelParams& params, const Image& original,
                                         const SegmentedSequence& response) {
  return {mean_response_logprob(params, Image(original.height(), original.width()), response),
          mean_response_logprob(params, original, response)};
}

double normalize_likelihood(double raw, const LikelihoodReference& ref) {
  const double span = ref.original - ref.blank;
  if (!(std::abs(span) > 1e-12)) {
    fail(ErrorKind::kDegenerate, "blank and unperturbed likelihoods coincide");
  }
  return 100.0 * (raw - ref.blank) / span;
}

double normalized_likelihood(const ModelParams& params, const Image& variant,
                             const SegmentedSequence& response, const LikelihoodReference& ref) {
  return normalize_likelihood(mean_response_logprob(params, variant, response), ref);
}

PerturbationCurve perturbation_curve(const ModelParams& params, const Image& image,
                                     const SegmentedSequence& response, const SaliencyMap& map,
                                     std::span<const double> fractions, PerturbMode mode) {
  check_fractions(fractions);
  const LikelihoodReference ref = likelihood_reference(params, image, response);
  PerturbationCurve c;
  c.fractions.assign(fractions.begin(), fractions.end());
  for (double f : fractions) {
    c.scores.push_back(
        normalized_likelihood(params, perturb_topk(image, map, f, mode), response, ref));
  }
  return c;
}

PerturbationCurve deletion_curve(const ModelParams& params, const Image& image,
                                 const SegmentedSequence& response, const SaliencyMap& map,
                                 std::span<const double> fractions) {
  return perturbation_curve(params, image, response, map, fractions, PerturbMode::kDelete);
}

PerturbationCurve insertion_curve(const ModelParams& params, const Image& image,
                                  const SegmentedSequence& response, const SaliencyMap& map,
                                  std::span<const double> fractions) {
  return perturbation_curve(params, image, response, map, fractions, PerturbMode::kInsert);
}

int pointing_game_hit(const SaliencyMap& map, std::span<const BoundingBox> boxes,
                      std::size_t image_w, std::size_t image_h) {
  if (map.values.empty()) fail(ErrorKind::kUsage, "pointing game: empty map");
  if (image_w % map.cols != 0 || image_h % map.rows != 0) {
    fail(ErrorKind::kShape, "pointing game: map grid does not tile the image");
  }
  const auto top = std::max_element(map.values.begin(), map.values.end());
  if (*top <= 0.0) return 0;
  const std::size_t cell = static_cast<std::size_t>(top - map.values.begin());
  const std::size_t pw = image_w / map.cols, ph = image_h / map.rows;
  const std::size_t cx = (cell % map.cols) * pw + pw / 2;
  const std::size_t cy = (cell / map.cols) * ph + ph / 2;
  return in_union(boxes, cx, cy) ? 1 : 0;
}

double energy_pg(const SaliencyMap& map, std::span<const BoundingBox> boxes, std::size_t image_w,
                 std::size_t image_h) {
  return alignment_score(map, boxes, image_w, image_h);
}

const char* noise_region_name(NoiseRegion r) {
  return r == NoiseRegion::kForeground ? "foreground" : "background";
}

Image add_region_noise(const Image& image, std::span<const BoundingBox> boxes, double sigma,
                       NoiseRegion region, std::uint64_t seed) {
  if (!(sigma >= 0.0)) fail(ErrorKind::kUsage, "noise sigma must be >= 0");
  Image out = image;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x) {
      const bool inside = in_union(boxes, x, y);
      if (inside != (region == NoiseRegion::kForeground)) continue;
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        out.at(y, x, c) = std::clamp(image.at(y, x, c) + noise(rng), 0.0, 1.0);
    }
  return out;
}

double counterfactual_accuracy(const ModelParams& params,
                               std::span<const DataSample* const> samples, double sigma,
                               NoiseRegion region, std::uint64_t seed, std::size_t max_new) {
  if (samples.empty()) fail(ErrorKind::kUsage, "counterfactual: no samples");
  std::size_t correct = 0;
  for (const DataSample* s : samples) {
    const Image noisy = add_region_noise(s->image, s->boxes, sigma, region, derive_seed(seed, s->id));
    const auto resp = generate(params, noisy, make_prompt(params.config, s->question), {0.0, max_new, 0});
    if (accuracy_reward(resp.tokens_in(Segment::kAnswer), s->answer) == 1.0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

Explained explain(const ModelParams& params, const DataSample& sample, std::size_t max_new) {
  Explained e;
  const std::uint64_t seed = 0;
  auto gen = generate_group(params, sample.image, make_prompt(params.config, sample.question), 0.0,
                            max_new, std::span<const std::uint64_t>(&seed, 1));
  e.response = std::move(gen[0].sequence);
  e.correct = accuracy_reward(e.response.tokens_in(Segment::kAnswer), sample.answer) == 1.0;
  e.well_formed = format_reward(e.response) == 1.0;
  e.holistic = e.well_formed ? holistic_saliency_map(params, gen[0].trace, e.response)
                             : SaliencyMap(params.config.grid_rows, params.config.grid_cols);
  return e;
}

EvalReport::Aggregate EvalReport::aggregate() const {
  Aggregate a;
  if (records.empty()) return a;
  std::vector<double> acc, fmt, pg, en;
  for (const auto& r : records) {
    acc.push_back(r.correct);
    fmt.push_back(r.well_formed);
    pg.push_back(r.pg_hit);
    en.push_back(r.energy_pg);
  }
  a.accuracy = mean(acc);
  a.format = mean(fmt);
  a.pg_hit = mean(pg);
  a.energy_pg = mean(en);
  const std::size_t nf = records.front().deletion.size();
  for (std::size_t k = 0; k < nf; ++k) {
    std::vector<double> d, ins;
    for (const auto& r : records) {
      d.push_back(r.deletion.at(k));
      ins.push_back(r.insertion.at(k));
    }
    a.deletion.push_back(mean(d));
    a.insertion.push_back(mean(ins));
  }
  return a;
}

EvalReport evaluate(const ModelParams& params, std::span<const DataSample* const> samples,
                    const EvalOptions& options, const std::string& kind) {
  check_fractions(options.fractions);
  EvalReport rep;
  rep.kind = kind;
  if (options.curves) rep.fractions = options.fractions;
  for (const DataSample* s : samples) {
    const Explained e = explain(params, *s, options.max_new);
    EvalRecord r;
    r.id = s->id;
    r.well_formed = e.well_formed;
    r.correct = e.correct;
    r.pg_hit = pointing_game_hit(e.holistic, s->boxes, s->image.width(), s->image.height());
    r.energy_pg = energy_pg(e.holistic, s->boxes, s->image.width(), s->image.height());
    if (options.curves) {
      try {
        r.deletion = deletion_curve(params, s->image, e.response, e.holistic, options.fractions).scores;
        r.insertion = insertion_curve(params, s->image, e.response, e.holistic, options.fractions).scores;
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::kDegenerate) throw;
        std::cerr << "warning: sample " << s->id << " skipped: " << err.what() << '\n';
        ++rep.skipped;
        continue;
      }
    }
    rep.records.push_back(std::move(r));
  }
  return rep;
}

std::string report_json(const EvalReport& report) {
  using nlohmann::json;
  const auto agg = report.aggregate();
  json rows = json::array();
  for (const auto& r : report.records) {
    rows.push_back({{"id", r.id},
                    {"well_formed", r.well_formed},
                    {"correct", r.correct},
                    {"pg_hit", r.pg_hit},
                    {"energy_pg", r.energy_pg},
                    {"deletion", r.deletion},
                    {"insertion", r.insertion}});
  }
  json j{{"kind", report.kind},
         {"samples", report.records.size()},
         {"skipped", report.skipped},
         {"fractions", report.fractions},
         {"aggregate",
          {{"accuracy", agg.accuracy},
           {"format", agg.format},
           {"pg_hit", agg.pg_hit},
           {"energy_pg", agg.energy_pg},
           {"deletion", agg.deletion},
           {"insertion", agg.insertion}}},
         {"records", rows}};
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "id,well_formed,correct,pg_hit,energy_pg";
  for (double f : report.fractions) os << ",deletion_" << f;
  for (double f : report.fractions) os << ",insertion_" << f;
  os << '\n';
  for (const auto& r : report.records) {
    os << r.id << ',' << r.well_formed << ',' << r.correct << ',' << r.pg_hit << ','
       << fmt_double(r.energy_pg);
    for (double v : r.deletion) os << ',' << fmt_double(v);
    for (double v : r.insertion) os << ',' << fmt_double(v);
    os << '\n';
  }
  return os.str();
}

CounterfactualReport counterfactual_sweep(const ModelParams& params,
                                          std::span<const DataSample* const> samples,
                                          std::span<const double> sigmas, std::uint64_t seed,
                                          std::size_t max_new) {
  CounterfactualReport rep;
  rep.samples = samples.size();
  rep.clean_accuracy = counterfactual_accuracy(params, samples, 0.0, NoiseRegion::kForeground, seed, max_new);
  for (double sigma : sigmas) {
    for (NoiseRegion region : {NoiseRegion::kForeground, NoiseRegion::kBackground}) {
      CounterfactualRow row;
      row.sigma = sigma;
      row.region = region;
      row.accuracy = counterfactual_accuracy(params, samples, sigma, region, seed, max_new);
      row.drop = rep.clean_accuracy - row.accuracy;
      rep.rows.push_back(row);
    }
  }
  return rep;
}

std::string counterfactual_json(const CounterfactualReport& report) {
  using nlohmann::json;
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"sigma", r.sigma},
                    {"region", noise_region_name(r.region)},
                    {"accuracy", r.accuracy},
                    {"drop", r.drop}});
  }
  json j{{"kind", "counterfactual"},
         {"samples", report.samples},
         {"clean_accuracy", report.clean_accuracy},
         {"rows", rows}};
  return j.dump(2) + "\n";
}

std::string counterfactual_csv(const CounterfactualReport& report) {
  std::ostringstream os;
  os << "sigma,region,accuracy,drop\n";
  for (const auto& r : report.rows) {
    os << fmt_double(r.sigma) << ',' << noise_region_name(r.region) << ',' << fmt_double(r.accuracy)
       << ',' << fmt_double(r.drop) << '\n';
  }
  return os.str();
}

Image render_heatmap(const SaliencyMap& map, const Image& image, std::span<const BoundingBox> boxes) {
  if (map.rows == 0 || map.cols == 0 || image.height() % map.rows != 0 ||
      image.width() % map.cols != 0) {
    fail(ErrorKind::kShape, "render: map grid does not tile the image");
  }
  const double peak = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  const std::size_t ph = image.height() / map.rows, pw = image.width() / map.cols;
  Image out(image.height(), image.width());
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x) {
      const double heat = peak > 0.0 ? map.at(y / ph, x / pw) / peak : 0.0;
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        const double base = 0.5 * image.at(y, x, c);
        const double red = c == 0 ? 1.0 : 0.0;
        out.at(y, x, c) = (1.0 - heat) * base + heat * red;
      }
    }
  for (const auto& b : boxes) {
    b.validate(image.width(), image.height());
    for (std::size_t y = b.y0; y < b.y1; ++y)
      for (std::size_t x = b.x0; x < b.x1; ++x) {
        if (y != b.y0 && y + 1 != b.y1 && x != b.x0 && x + 1 != b.x1) continue;
        out.at(y, x, 0) = 0.0;
        out.at(y, x, 1) = 1.0;
        out.at(y, x, 2) = 0.0;
      }
  }
  return out;
}

double sign_test_p(std::size_t wins, std::size_t trials) {
  if (wins > trials) fail(ErrorKind::kUsage, "sign test: wins exceed trials");
  double p = 0.0;
  const double n = static_cast<double>(trials);
  for (std::size_t k = wins; k <= trials; ++k) {
    const double kk = static_cast<double>(k);
    p += std::exp(std::lgamma(n + 1) - std::lgamma(kk + 1) - std::lgamma(n - kk + 1) - n * std::log(2.0));
  }
  return std::min(p, 1.0);
}

}  // namespace salient
