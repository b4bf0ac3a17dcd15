#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "error.hpp"
#include "model.hpp"
#include "test_util.hpp"

using namespace salient;
using namespace salient::testing;

TEST_CASE("init_model is deterministic per seed") {
  const ModelConfig cfg = small_config();
  const ModelParams a = init_model(cfg, 17);
  const ModelParams b = init_model(cfg, 17);
  const ModelParams c = init_model(cfg, 18);
  CHECK(a == b);
  CHECK_FALSE(a == c);
}

TEST_CASE("per-head matrices have width d/H") {
  ModelConfig cfg = small_config();
  cfg.width = 8;
  cfg.heads = 2;
  const ModelParams p = init_model(cfg, 1);
  CHECK(p.layers[0].wq.size() == 2);
  CHECK(p.layers[0].wq[0].shape() == std::vector<std::size_t>{8, 4});
  CHECK(p.layers[0].wo[1].shape() == std::vector<std::size_t>{4, 8});
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig cfg = small_config();
  cfg.heads = 3;
  cfg.width = 8;
  try {
    (void)init_model(cfg, 0);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
  cfg = small_config();
  cfg.max_len = cfg.num_patches();
  CHECK_THROWS_AS(init_model(cfg, 0), Error);
}

TEST_CASE("forward trace reconstructs the residual stream exactly") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelConfig cfg = small_config();
    const ModelParams p = init_model(cfg, 100 + trial);
    const Image img = random_image(cfg, rng);
    const SegmentedSequence seq = random_sequence(cfg, rng, 3, 4, 2);
    const auto [logits, tr] = forward_with_trace(p, img, seq);
    REQUIRE(tr.length == seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      for (std::size_t j = 0; j < cfg.width; ++j) {
        double recon = tr.hidden[0](i, j);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
          recon += tr.ffn[l](i, j);
          for (std::size_t h = 0; h < cfg.heads; ++h)
            for (std::size_t q = 0; q <= i; ++q)
              recon += tr.alpha(l, h)(i, q) * tr.value_out(l, h)(q, j);
        }
        CHECK(std::abs(recon - tr.hidden[cfg.layers](i, j)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("trace logits agree with the batched taped forward") {
  std::mt19937_64 rng(8);
  const ModelConfig cfg = small_config();
  const ModelParams p = init_model(cfg, 3);
  const Image img = random_image(cfg, rng);
  const SegmentedSequence seq = random_sequence(cfg, rng, 2, 3, 2);
  const auto [logits, tr] = forward_with_trace(p, img, seq);
  GradientTape tape;
  const auto vars = register_params(tape, p);
  const Var out = taped_logits(tape, vars, cfg, image_patches(cfg, img), seq);
  CHECK(max_abs_diff(tape.value(out), logits) < 1e-10);
}

TEST_CASE("attention rows are causal probability vectors") {
  std::mt19937_64 rng(4);
  const ModelConfig cfg = small_config();
  const ModelParams p = init_model(cfg, 9);
  const SegmentedSequence seq = random_sequence(cfg, rng, 3, 2, 2);
  const auto tr = forward_with_trace(p, random_image(cfg, rng), seq).trace;
  for (std::size_t l = 0; l < cfg.layers; ++l)
    for (std::size_t h = 0; h < cfg.heads; ++h)
      for (std::size_t i = 0; i < seq.size(); ++i) {
        double s = 0.0;
        for (std::size_t q = 0; q < seq.size(); ++q) {
          if (q > i) CHECK(tr.alpha(l, h)(i, q) == 0.0);
          s += tr.alpha(l, h)(i, q);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
}

TEST_CASE("single-position sequence attends fully to itself") {
  ModelConfig cfg = small_config();
  cfg.grid_rows = 1;
  cfg.grid_cols = 1;
  const ModelParams p = init_model(cfg, 2);
  std::mt19937_64 rng(1);
  SegmentedSequence seq = make_prompt(cfg, {});
  const auto tr = forward_with_trace(p, random_image(cfg, rng), seq).trace;
  for (std::size_t l = 0; l < cfg.layers; ++l)
    for (std::size_t h = 0; h < cfg.heads; ++h) CHECK(tr.alpha(l, h)(0, 0) == 1.0);
}

TEST_CASE("logits at a position ignore later tokens") {
  std::mt19937_64 rng(6);
  const ModelConfig cfg = small_config();
  const ModelParams p = init_model(cfg, 4);
  const Image img = random_image(cfg, rng);
  SegmentedSequence seq = random_sequence(cfg, rng, 2, 3, 2);
  const Tensor before = forward_with_trace(p, img, seq).logits;
  const std::size_t cut = seq.size() - 2;
  seq.tokens[cut + 1] = (seq.tokens[cut + 1] + 7) % static_cast<TokenId>(cfg.vocab);
  const Tensor after = forward_with_trace(p, img, seq).logits;
  for (std::size_t i = 0; i <= cut; ++i)
    for (std::size_t j = 0; j < cfg.vocab; ++j) CHECK(before(i, j) == after(i, j));
}

TEST_CASE("permuting visual patches changes logits") {
  std::mt19937_64 rng(12);
  const ModelConfig cfg = small_config();
  const ModelParams p = init_model(cfg, 5);
  const Image img = random_image(cfg, rng);
  Image swapped = img;
  // swap patch (0,0) with patch (rows-1, cols-1)
  const std::size_t px = cfg.patch_px;
  for (std::size_t y = 0; y < px; ++y)
    for (std::size_t x = 0; x < px; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        std::swap(swapped.at(y, x, c),
                  swapped.at((cfg.grid_rows - 1) * px + y, (cfg.grid_cols - 1) * px + x, c));
  const SegmentedSequence seq = random_sequence(cfg, rng, 2, 2, 1);
  const Tensor a = forward_with_trace(p, img, seq).logits;
  const Tensor b = forward_with_trace(p, swapped, seq).logits;
  CHECK(max_abs_diff(a, b) > 1e-6);
}

TEST_CASE("length overflow is a capacity error") {
  const ModelConfig cfg = small_config();
  const ModelParams p = init_model(cfg, 1);
  std::mt19937_64 rng(1);
  SegmentedSequence seq = make_prompt(cfg, {});
  while (seq.size() <= cfg.max_len) seq.push(tok::kWhat, Segment::kPrompt);
  try {
    (void)forward_with_trace(p, random_image(cfg, rng), seq);
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCapacity);
  }
}

TEST_CASE("generation determinism and tagging") {
  std::mt19937_64 rng(21);
  const ModelConfig cfg = small_config();
  const ModelParams p = init_model(cfg, 6);
  const Image img = random_image(cfg, rng);
  const SegmentedSequence prompt = make_prompt(cfg, {tok::kWhat, tok::kColor});

  GenerateOptions greedy{0.0, 8, 0};
  CHECK(generate(p, img, prompt, greedy) == generate(p, img, prompt, greedy));

  GenerateOptions sampled{0.8, 8, 99};
  const auto s1 = generate(p, img, prompt, sampled);
  CHECK(s1 == generate(p, img, prompt, sampled));

  GenerateOptions none{0.8, 0, 99};
  CHECK(generate(p, img, prompt, none) == prompt);

  // Tagging: Think until (and including) </think>, Answer afterwards.
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto out = generate(p, img, prompt, {1.5, 10, seed});
    bool closed = false;
    for (std::size_t i = prompt.size(); i < out.size(); ++i) {
      CHECK(out.segments[i] == (closed ? Segment::kAnswer : Segment::kThink));
      if (out.tokens[i] == tok::kEndThink) closed = true;
      if (out.tokens[i] == tok::kEos) CHECK(i + 1 == out.size());
    }
  }
}

TEST_CASE("greedy tokens maximize teacher-forced log-probabilities") {
  std::mt19937_64 rng(22);
  const ModelConfig cfg = small_config();
  const ModelParams p = init_model(cfg, 7);
  const Image img = random_image(cfg, rng);
  const auto out = generate(p, img, make_prompt(cfg, {tok::kWhat}), {0.0, 6, 0});
  const auto fr = forward_with_trace(p, img, out);
  const auto lp = sequence_logprob(fr.trace, out);
  const auto gen = out.generated_positions();
  REQUIRE(gen.size() == lp.per_token.size());
  double total = 0.0;
  for (std::size_t k = 0; k < gen.size(); ++k) {
    std::vector<double> row(fr.logits.row(gen[k] - 1).begin(), fr.logits.row(gen[k] - 1).end());
    log_softmax_inplace(row);
    for (double v : row) CHECK(lp.per_token[k] >= v);
    total += lp.per_token[k];
  }
  CHECK(std::abs(total - lp.total) <= 1e-12);
}

TEST_CASE("uniform logits give -ln N per token") {
  ModelConfig cfg = small_config();
  ModelParams p = init_model(cfg, 8);
  for (auto& v : p.unembed.values()) v = 0.0;
  std::mt19937_64 rng(1);
  SegmentedSequence seq = make_prompt(cfg, {tok::kWhat});
  seq.push(tok::kBeginThink, Segment::kThink);
  const auto lp = sequence_logprob(p, random_image(cfg, rng), seq);
  REQUIRE(lp.per_token.size() == 1);
  CHECK(std::abs(lp.per_token[0] + std::log(static_cast<double>(cfg.vocab))) < 1e-12);
}

TEST_CASE("checkpoint round-trip is exact") {
  const ModelParams p = init_model(small_config(), 31);
  const auto path = std::filesystem::temp_directory_path() / "salient_ckpt_test.json";
  save_checkpoint(path, p);
  CHECK(load_checkpoint(path) == p);
  std::filesystem::remove(path);

  std::string text = checkpoint_json(p);
  text.replace(text.find("\"format_version\":1"), 18, "\"format_version\":9");
  try {
    (void)checkpoint_from_json(text);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
  }
}

TEST_CASE("group generation matches single generation and a fresh forward pass") {
  std::mt19937_64 rng(21);
  const ModelConfig cfg = small_config();
  const ModelParams p = init_model(cfg, 21);
  const Image img = random_image(cfg, rng);
  const SegmentedSequence prompt = make_prompt(cfg, {tok::kWhat, tok::kColor});
  const std::vector<std::uint64_t> seeds{1, 2, 3, 99};
  const auto gens = generate_group(p, img, prompt, 1.0, 10, seeds);
  REQUIRE(gens.size() == seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto single = generate(p, img, prompt, {1.0, 10, seeds[i]});
    CHECK(gens[i].sequence.tokens == single.tokens);
    CHECK(gens[i].sequence.segments == single.segments);
    const auto fresh = forward_with_trace(p, img, single).trace;
    CHECK(gens[i].trace.length == single.size());
    CHECK(gens[i].trace.logits == fresh.logits);
    CHECK(gens[i].trace.attention == fresh.attention);
    CHECK(gens[i].trace.vout == fresh.vout);
    CHECK(gens[i].trace.final_sigma == fresh.final_sigma);
  }
}
