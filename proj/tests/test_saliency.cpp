#include <doctest.h>

#include <cmath>
#include <random>

#include "error.hpp"
#include "saliency.hpp"
#include "test_util.hpp"

using namespace salient;
using namespace salient::testing;

namespace {

// gamma_final * E_u[:, t] / rms(h^L_i), written out directly.
std::vector<double> oracle_direction(const ModelParams& p, const ForwardTrace& tr, std::size_t i,
                                     TokenId t) {
  const std::size_t d = p.config.width;
  const auto h = tr.hidden.back().row(i);
  double ss = 0.0;
  for (double v : h) ss += v * v;
  const double sigma = std::sqrt(ss / static_cast<double>(d) + p.config.eps);
  std::vector<double> u(d);
  for (std::size_t j = 0; j < d; ++j) u[j] = p.final_gain[j] * p.unembed(j, t) / sigma;
  return u;
}

double dotv(std::span<const double> a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) s += a[j] * b[j];
  return s;
}

// Per-answer visual map by brute force: rollout weight summed over think
// tokens inline rather than via a matrix product.
SaliencyMap oracle_transitional(const ModelParams& p, const ForwardTrace& tr,
                                const SegmentedSequence& seq, std::size_t answer_pos) {
  const auto visual = seq.positions(Segment::kVisual);
  const auto think = seq.positions(Segment::kThink);
  const std::size_t i = answer_pos - 1;
  const auto u = oracle_direction(p, tr, i, seq.tokens[answer_pos]);
  SaliencyMap m(p.config.grid_rows, p.config.grid_cols);
  for (std::size_t v = 0; v < visual.size(); ++v) {
    double c = 0.0;
    for (std::size_t l = 0; l < tr.layers; ++l)
      for (std::size_t h = 0; h < tr.heads; ++h) {
        double w = 0.0;
        for (std::size_t t : think) w += tr.alpha(l, h)(t, visual[v]) * tr.alpha(l, h)(i, t);
        c += w * dotv(tr.value_out(l, h).row(visual[v]), u);
      }
    m.values[v] = std::max(c, 0.0);
  }
  return m;
}

struct Fixture {
  ModelConfig cfg;
  ModelParams params;
  Image image;
  SegmentedSequence seq;
  ForwardTrace trace;
};

Fixture make_fixture(std::uint64_t seed, std::size_t think, std::size_t answer) {
  std::mt19937_64 rng(seed);
  Fixture f;
  f.cfg = small_config();
  f.params = init_model(f.cfg, seed);
  f.image = random_image(f.cfg, rng);
  f.seq = random_sequence(f.cfg, rng, 2, think, answer);
  f.trace = forward_with_trace(f.params, f.image, f.seq).trace;
  return f;
}

}  // namespace

TEST_CASE("contributions plus remainder reconstruct every logit") {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Fixture f = make_fixture(seed, 3, 2);
    std::mt19937_64 rng(seed * 31);
    std::uniform_int_distribution<TokenId> tgt(0, static_cast<TokenId>(f.cfg.vocab - 1));
    for (std::size_t i = 0; i < f.seq.size(); ++i) {
      const TokenId t = tgt(rng);
      const auto cv = direct_contributions(f.params, f.trace, i, t);
      REQUIRE(cv.contributions.size() == i + 1);
      double s = cv.remainder;
      for (double c : cv.contributions) s += c;
      worst = std::max(worst, std::abs(s - f.trace.logits(i, t)));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("default-size model reconstructs logits too") {
  std::mt19937_64 rng(9);
  const ModelConfig cfg;
  const ModelParams p = init_model(cfg, 9);
  const Image img = random_image(cfg, rng);
  const SegmentedSequence seq = random_sequence(cfg, rng, 4, 8, 3);
  const auto tr = forward_with_trace(p, img, seq).trace;
  for (std::size_t i = seq.size() - 6; i < seq.size(); ++i) {
    const auto cv = direct_contributions(p, tr, i, 7);
    double s = cv.remainder;
    for (double c : cv.contributions) s += c;
    CHECK(std::abs(s - tr.logits(i, 7)) < 1e-6);
  }
}

TEST_CASE("single token, one layer, one head: contribution is the normalized value output") {
  ModelConfig cfg = small_config();
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.grid_rows = 1;
  cfg.grid_cols = 1;
  const ModelParams p = init_model(cfg, 5);
  std::mt19937_64 rng(5);
  const Image img = random_image(cfg, rng);
  const SegmentedSequence seq = make_prompt(cfg, {});
  REQUIRE(seq.size() == 1);
  const auto tr = forward_with_trace(p, img, seq).trace;

  // vout recomputed from the weights: W_o W_v RMSNorm(h0)
  const Tensor h0 = add(matmul(image_patches(cfg, img), p.patch_embed),
                        Tensor({1, cfg.width}, {p.pos_embed.row(0).begin(), p.pos_embed.row(0).end()}));
  const Tensor vo = matmul(matmul(rmsnorm(h0, p.layers[0].attn_gain, cfg.eps), p.layers[0].wv[0]),
                           p.layers[0].wo[0]);
  for (TokenId t : {TokenId{0}, TokenId{11}, TokenId{40}}) {
    const auto u = oracle_direction(p, tr, 0, t);
    const auto cv = direct_contributions(p, tr, 0, t);
    CHECK(cv.contributions[0] == doctest::Approx(dotv(vo.row(0), u)).epsilon(1e-12));
  }
}

TEST_CASE("zero unembedding column zeroes every contribution") {
  Fixture f = make_fixture(3, 2, 2);
  const TokenId t = 13;
  for (std::size_t j = 0; j < f.cfg.width; ++j) f.params.unembed(j, t) = 0.0;
  const auto tr = forward_with_trace(f.params, f.image, f.seq).trace;
  const auto cv = direct_contributions(f.params, tr, f.seq.size() - 1, t);
  for (double c : cv.contributions) CHECK(c == 0.0);
  CHECK(cv.remainder == 0.0);
}

TEST_CASE("scaling the target unembedding column scales contributions linearly") {
  Fixture f = make_fixture(4, 2, 2);
  const TokenId t = 21;
  const std::size_t i = f.seq.size() - 1;
  const auto base = direct_contributions(f.params, f.trace, i, t);
  for (double k : {0.5, 3.0}) {
    ModelParams q = f.params;
    for (std::size_t j = 0; j < f.cfg.width; ++j) q.unembed(j, t) *= k;
    // the column only feeds the logit, so the trace is otherwise identical
    const auto tr = forward_with_trace(q, f.image, f.seq).trace;
    const auto cv = direct_contributions(q, tr, i, t);
    for (std::size_t p = 0; p < cv.contributions.size(); ++p)
      CHECK(cv.contributions[p] == doctest::Approx(k * base.contributions[p]).epsilon(1e-12));
    CHECK(cv.remainder == doctest::Approx(k * base.remainder).epsilon(1e-12));
  }
}

TEST_CASE("direct_contributions rejects positions outside the trace") {
  Fixture f = make_fixture(2, 1, 1);
  try {
    direct_contributions(f.params, f.trace, f.seq.size(), 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIndex);
  }
}

TEST_CASE("token map is the ReLU of visual contributions in grid order") {
  ModelConfig cfg = small_config();
  cfg.grid_rows = 2;
  cfg.grid_cols = 2;
  SegmentedSequence seq = make_prompt(cfg, {tok::kWhat});
  ContributionVector cv;
  cv.contributions = {2.0, -1.0, 0.0, 3.0, 5.0};
  const SaliencyMap m = token_saliency_map(cv, seq, cfg);
  CHECK(m.rows == 2);
  CHECK(m.cols == 2);
  CHECK(m.values == std::vector<double>{2.0, 0.0, 0.0, 3.0});

  cv.contributions = {-2.0, -1.0, -0.5, -3.0, 1.0};
  CHECK(token_saliency_map(cv, seq, cfg).is_zero());
}

TEST_CASE("token map entries match recomputed contributions") {
  Fixture f = make_fixture(8, 2, 2);
  const std::size_t i = f.seq.size() - 1;
  const auto cv = direct_contributions(f.params, f.trace, i, 17);
  const auto m = token_saliency_map(cv, f.seq, f.cfg);
  const auto u = oracle_direction(f.params, f.trace, i, 17);
  for (std::size_t v = 0; v < f.cfg.num_patches(); ++v) {
    double c = 0.0;
    for (std::size_t l = 0; l < f.cfg.layers; ++l)
      for (std::size_t h = 0; h < f.cfg.heads; ++h)
        c += f.trace.alpha(l, h)(i, v) * dotv(f.trace.value_out(l, h).row(v), u);
    CHECK(m.values[v] == doctest::Approx(std::max(c, 0.0)).epsilon(1e-10));
  }
}

TEST_CASE("token map needs a visual block") {
  const ModelConfig cfg = small_config();
  SegmentedSequence seq;
  seq.push(tok::kWhat, Segment::kPrompt);
  ContributionVector cv;
  cv.contributions = {1.0};
  try {
    token_saliency_map(cv, seq, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUsage);
  }
}

namespace {

// Hand-built trace over V V T A A: answer steps read rows 2 and 3.
ForwardTrace hand_trace(const std::vector<std::vector<double>>& rows) {
  ForwardTrace tr;
  tr.length = rows.size();
  tr.layers = 1;
  tr.heads = 1;
  Tensor a({tr.length, tr.length});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) a(i, j) = rows[i][j];
  tr.attention.push_back(a);
  return tr;
}

SegmentedSequence vvtaa() {
  SegmentedSequence s;
  s.push(tok::kImage, Segment::kVisual);
  s.push(tok::kImage, Segment::kVisual);
  s.push(tok::kBeginThink, Segment::kThink);
  s.push(tok::kFirstColor, Segment::kAnswer);
  s.push(static_cast<TokenId>(tok::kFirstColor + 1), Segment::kAnswer);
  return s;
}

}  // namespace

TEST_CASE("rollout multiplies visual-think by think-answer weights") {
  const ForwardTrace tr = hand_trace({{1.0},
                                      {0.5, 0.5},
                                      {0.6, 0.3, 0.1},
                                      {0.05, 0.05, 0.8, 0.1},
                                      {0.2, 0.2, 0.2, 0.2, 0.2}});
  const auto r = bottleneck_rollout(tr, vvtaa());
  REQUIRE(r.answers.size() == 2);
  CHECK(r.answers[1].position == 3);
  const Tensor& c = r.at(0, 0);
  REQUIRE(c.shape() == std::vector<std::size_t>{2, 2});
  CHECK(c(0, 1) == doctest::Approx(0.48).epsilon(1e-15));
  CHECK(c(1, 1) == doctest::Approx(0.24).epsilon(1e-15));
}

TEST_CASE("one-hot attention passes straight through the bottleneck") {
  const ForwardTrace tr = hand_trace({{1.0},
                                      {0.5, 0.5},
                                      {0.0, 1.0, 0.0},
                                      {0.0, 0.0, 1.0, 0.0},
                                      {0.2, 0.2, 0.2, 0.2, 0.2}});
  const auto r = bottleneck_rollout(tr, vvtaa());
  const Tensor& c = r.at(0, 0);
  CHECK(c(0, 1) == 0.0);
  CHECK(c(1, 1) == 1.0);
}

TEST_CASE("rollout columns never exceed the think-answer column mass") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Fixture f = make_fixture(seed, 4, 3);
    const auto r = bottleneck_rollout(f.trace, f.seq);
    for (std::size_t l = 0; l < f.cfg.layers; ++l)
      for (std::size_t h = 0; h < f.cfg.heads; ++h) {
        const Tensor& c = r.at(l, h);
        for (std::size_t a = 0; a < r.answers.size(); ++a) {
          double col = 0.0, ta = 0.0;
          for (std::size_t v = 0; v < r.visual_positions.size(); ++v) {
            CHECK(c(v, a) >= 0.0);
            col += c(v, a);
          }
          for (std::size_t t : r.think_positions) ta += f.trace.alpha(l, h)(r.answers[a].position, t);
          CHECK(col <= ta + 1e-12);
          CHECK(ta <= 1.0 + 1e-9);
        }
      }
  }
}

TEST_CASE("rollout needs think and answer tokens") {
  Fixture f = make_fixture(1, 0, 2);
  CHECK_THROWS_AS(bottleneck_rollout(f.trace, f.seq), Error);
  try {
    holistic_saliency_map(f.params, f.trace, f.seq);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSegment);
  }
  Fixture g = make_fixture(1, 2, 0);
  try {
    bottleneck_rollout(g.trace, g.seq);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSegment);
  }
}

TEST_CASE("holistic map is the sum of independently computed transitional maps") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Fixture f = make_fixture(seed, 3, 2);
    const auto maps = transitional_maps(f.params, f.trace, f.seq);
    REQUIRE(maps.size() == 2);
    const SaliencyMap a = oracle_transitional(f.params, f.trace, f.seq, f.seq.size() - 2);
    const SaliencyMap b = oracle_transitional(f.params, f.trace, f.seq, f.seq.size() - 1);
    const SaliencyMap hol = holistic_saliency_map(f.params, f.trace, f.seq);
    for (std::size_t k = 0; k < hol.values.size(); ++k) {
      CHECK(maps[0].values[k] == doctest::Approx(a.values[k]).epsilon(1e-10));
      CHECK(maps[1].values[k] == doctest::Approx(b.values[k]).epsilon(1e-10));
      CHECK(hol.values[k] == doctest::Approx(a.values[k] + b.values[k]).epsilon(1e-10));
      CHECK(hol.values[k] >= 0.0);
    }
  }
}

TEST_CASE("with one answer token the holistic map is its transitional map") {
  Fixture f = make_fixture(12, 2, 1);
  const auto maps = transitional_maps(f.params, f.trace, f.seq);
  REQUIRE(maps.size() == 1);
  CHECK(holistic_saliency_map(f.params, f.trace, f.seq) == maps[0]);
}

TEST_CASE("end-of-sequence in the answer contributes no map") {
  Fixture f = make_fixture(13, 2, 1);
  SegmentedSequence with_eos = f.seq;
  with_eos.push(tok::kEos, Segment::kAnswer);
  const auto tr = forward_with_trace(f.params, f.image, with_eos).trace;
  CHECK(transitional_maps(f.params, tr, with_eos).size() == 1);
}

TEST_CASE("visual tokens ignored by thinking tokens get no holistic mass") {
  Fixture f = make_fixture(14, 3, 2);
  const auto think = f.seq.positions(Segment::kThink);
  ForwardTrace tr = f.trace;
  for (auto& a : tr.attention)
    for (std::size_t t : think) a(t, 4) = 0.0;
  const SaliencyMap m = holistic_saliency_map(f.params, tr, f.seq);
  CHECK(m.values[4] <= 1e-9);

  for (auto& a : tr.attention)
    for (std::size_t t : think)
      for (std::size_t v = 0; v < f.cfg.num_patches(); ++v) a(t, v) = 0.0;
  CHECK(holistic_saliency_map(f.params, tr, f.seq).is_zero());
}

TEST_CASE("maps have the grid shape and never go negative") {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    Fixture f = make_fixture(seed, 2, 3);
    for (const auto& m : transitional_maps(f.params, f.trace, f.seq)) {
      CHECK(m.rows == f.cfg.grid_rows);
      CHECK(m.cols == f.cfg.grid_cols);
      for (double v : m.values) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("saliency JSON round-trips and rejects bad records") {
  SaliencyMap m(2, 3);
  m.values = {0.0, 1.5, 2.0, 0.25, 0.0, 3.0};
  CHECK(saliency_from_json(saliency_json(m)) == m);
  CHECK_THROWS_AS(saliency_from_json(R"({"grid_rows":2,"grid_cols":2,"values":[1,2,3]})"), Error);
  CHECK_THROWS_AS(saliency_from_json(R"({"grid_rows":1,"grid_cols":1,"values":[-1]})"), Error);
  CHECK_THROWS_AS(saliency_from_json("{"), Error);
}

TEST_CASE("graymap render scales the maximum to white") {
  SaliencyMap m(1, 2);
  m.values = {0.0, 4.0};
  const std::string pgm = saliency_pgm(m, 2);
  CHECK(pgm.rfind("P5\n4 2\n255\n", 0) == 0);
  const std::string body = pgm.substr(pgm.size() - 8);
  CHECK(static_cast<unsigned char>(body[0]) == 0);
  CHECK(static_cast<unsigned char>(body[2]) == 255);
  CHECK(static_cast<unsigned char>(body[3]) == 255);
}

TEST_CASE("nearest-neighbor upsampling copies each cell into its block") {
  SaliencyMap m(1, 2);
  m.values = {1.0, 2.0};
  CHECK(upsample_nearest(m, 2) == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2});
}
