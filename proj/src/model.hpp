#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "image.hpp"
#include "tape.hpp"
#include "tensor.hpp"
#include "vocab.hpp"

namespace salient {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t width = 64;
  std::size_t vocab = 64;
  std::size_t grid_rows = 6;
  std::size_t grid_cols = 6;
  std::size_t patch_px = 4;
  std::size_t max_len = 64;
  std::size_t ffn_mult = 4;
  double eps = 1e-6;

  std::size_t head_dim() const { return width / heads; }
  std::size_t num_patches() const { return grid_rows * grid_cols; }
  std::size_t patch_dim() const { return patch_px * patch_px * Image::kChannels; }
  std::size_t ffn_width() const { return width * ffn_mult; }
  std::size_t image_height() const { return grid_rows * patch_px; }
  std::size_t image_width() const { return grid_cols * patch_px; }

  // Throws kConfig on any inconsistency.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Tensor attn_gain;            // [d]
  std::vector<Tensor> wq;      // per head [d x d/H]
  std::vector<Tensor> wk;
  std::vector<Tensor> wv;
  std::vector<Tensor> wo;      // per head [d/H x d]
  Tensor ffn_gain;             // [d]
  Tensor ffn_in;               // [d x ffn]
  Tensor ffn_out;              // [ffn x d]
};

struct ModelParams {
  ModelConfig config;
  Tensor patch_embed;  // [patch_dim x d]
  Tensor token_embed;  // [N x d]
  Tensor pos_embed;    // [max_len x d]
  std::vector<LayerParams> layers;
  Tensor final_gain;   // [d]
  Tensor unembed;      // [d x N]

  // Stable enumeration; the index is the ParamId used by tapes and optimizers.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> names() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

enum class Segment : std::uint8_t { kVisual, kPrompt, kThink, kAnswer };

const char* segment_name(Segment s);

struct SegmentedSequence {
  std::vector<TokenId> tokens;
  std::vector<Segment> segments;

  std::size_t size() const { return tokens.size(); }
  void push(TokenId t, Segment s) {
    tokens.push_back(t);
    segments.push_back(s);
  }
  std::vector<std::size_t> positions(Segment s) const;
  // Positions tagged Think or Answer.
  std::vector<std::size_t> generated_positions() const;
  std::vector<TokenId> tokens_in(Segment s) const;

  // Checks equal lengths, a Visual prefix of exactly num_patches, no Visual
  // elsewhere, and every Think preceding every Answer.
  void validate(std::size_t num_patches) const;

  friend bool operator==(const SegmentedSequence&, const SegmentedSequence&) = default;
};

// Visual block followed by prompt tokens.
SegmentedSequence make_prompt(const ModelConfig& config, const std::vector<TokenId>& question);

// Per-layer, per-head, per-position quantities captured during the forward
// pass. Row i of every matrix belongs to sequence position i.
struct ForwardTrace {
  std::size_t length = 0;
  std::size_t layers = 0;
  std::size_t heads = 0;
  Tensor logits;                 // [len x N]
  std::vector<Tensor> hidden;    // L+1 of [len x d]; hidden[0] is the embedding
  std::vector<Tensor> ffn;       // L of [len x d]
  std::vector<Tensor> attention; // L*H of [len x len], row i is alpha over p <= i
  std::vector<Tensor> vout;      // L*H of [len x d], W_o W_v RMSNorm(h^{l-1}_p)
  std::vector<double> final_sigma;

  const Tensor& alpha(std::size_t l, std::size_t h) const { return attention[l * heads + h]; }
  const Tensor& value_out(std::size_t l, std::size_t h) const { return vout[l * heads + h]; }
};

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

// Patches of the image, one row per grid cell (row-major), pixels flattened
// as (py, px, channel).
Tensor image_patches(const ModelConfig& config, const Image& image);

struct ForwardResult {
  Tensor logits;
  ForwardTrace trace;
};

ForwardResult forward_with_trace(const ModelParams& params, const Image& image,
                                 const SegmentedSequence& seq);

struct GenerateOptions {
  double temperature = 0.0;
  std::size_t max_new = 16;
  std::uint64_t seed = 0;
};

SegmentedSequence generate(const ModelParams& params, const Image& image,
                           const SegmentedSequence& prompt, const GenerateOptions& options);

struct Generation {
  SegmentedSequence sequence;
  ForwardTrace trace;  // identical to forward_with_trace on `sequence`
};

// One sampled continuation per seed, sharing the prompt computation. Each
// generation equals generate() with that seed.
std::vector<Generation> generate_group(const ModelParams& params, const Image& image,
                                       const SegmentedSequence& prompt, double temperature,
                                       std::size_t max_new, std::span<const std::uint64_t> seeds);

struct SequenceLogprob {
  double total = 0.0;
  std::vector<double> per_token;
};

// Log-probabilities of every Think/Answer token given its prefix.
SequenceLogprob sequence_logprob(const ModelParams& params, const Image& image,
                                 const SegmentedSequence& seq);
SequenceLogprob sequence_logprob(const ForwardTrace& trace, const SegmentedSequence& seq);

// Differentiable forward on a tape. param_vars must come from register_params.
std::vector<Var> register_params(GradientTape& tape, const ModelParams& params);
Var taped_logits(GradientTape& tape, const std::vector<Var>& param_vars,
                 const ModelConfig& config, const Tensor& patches,
                 const SegmentedSequence& seq);
// n x 1 column of log-probabilities at the sequence's generated positions.
Var taped_token_logprobs(GradientTape& tape, const std::vector<Var>& param_vars,
                         const ModelConfig& config, const Tensor& patches,
                         const SegmentedSequence& seq);

// Checkpoint: JSON {format_version, config, params: [{name, shape, data}]}.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_json(const ModelParams& params);
ModelParams checkpoint_from_json(const std::string& text);

}  // namespace salient
