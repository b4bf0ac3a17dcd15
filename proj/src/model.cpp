#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "error.hpp"
#include "json_io.hpp"

namespace salient {

namespace {

constexpr double kGeluC = 0.7978845608028654;

double gelu(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

// Row-wise incremental forward. Each push() runs one position through every
// layer against the cached keys and value-outputs of earlier positions, which
// is exactly the causal forward pass.
class Decoder {
 public:
  Decoder(const ModelParams& params, std::size_t capacity)
      : p_(params), cfg_(params.config), capacity_(capacity) {
    const std::size_t d = cfg_.width, L = cfg_.layers, H = cfg_.heads;
    trace_.layers = L;
    trace_.heads = H;
    trace_.logits = Tensor({capacity, cfg_.vocab});
    trace_.hidden.assign(L + 1, Tensor({capacity, d}));
    trace_.ffn.assign(L, Tensor({capacity, d}));
    trace_.attention.assign(L * H, Tensor({capacity, capacity}));
    trace_.vout.assign(L * H, Tensor({capacity, d}));
    keys_.assign(L * H, Tensor({capacity, cfg_.head_dim()}));
    trace_.final_sigma.reserve(capacity);
  }

  std::size_t length() const { return trace_.length; }

  std::span<const double> push(std::span<const double> embedding) {
    const std::size_t i = trace_.length;
    if (i >= capacity_) {
      fail(ErrorKind::kCapacity, "sequence exceeds max_len " + std::to_string(capacity_));
    }
    const std::size_t d = cfg_.width, dh = cfg_.head_dim(), H = cfg_.heads;
    const double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto h0 = trace_.hidden[0].row(i);
    std::copy(embedding.begin(), embedding.end(), h0.begin());

    std::vector<double> xn(d), q(dh), k(dh), v(dh), attn(d), mid(d), yn(d);
    std::vector<double> hidden_ffn(cfg_.ffn_width());

    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const LayerParams& lp = p_.layers[l];
      auto x = trace_.hidden[l].row(i);
      const double s_attn = rms_statistic(x, cfg_.eps);
      for (std::size_t j = 0; j < d; ++j) xn[j] = lp.attn_gain[j] * x[j] / s_attn;

      std::fill(attn.begin(), attn.end(), 0.0);
      for (std::size_t h = 0; h < H; ++h) {
        std::fill(q.begin(), q.end(), 0.0);
        std::fill(k.begin(), k.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
        axpy_row_matrix(xn, lp.wq[h], q);
        axpy_row_matrix(xn, lp.wk[h], k);
        axpy_row_matrix(xn, lp.wv[h], v);

        Tensor& kcache = keys_[l * H + h];
        std::copy(k.begin(), k.end(), kcache.row(i).begin());
        auto vo = trace_.vout[l * H + h].row(i);
        std::fill(vo.begin(), vo.end(), 0.0);
        axpy_row_matrix(v, lp.wo[h], vo);

        auto alpha = trace_.attention[l * H + h].row(i).first(i + 1);
        for (std::size_t p = 0; p <= i; ++p) alpha[p] = dot(q, kcache.row(p)) * score_scale;
        softmax_inplace(alpha);

        const Tensor& vcache = trace_.vout[l * H + h];
        for (std::size_t p = 0; p <= i; ++p) {
          const double a = alpha[p];
          auto vr = vcache.row(p);
          for (std::size_t j = 0; j < d; ++j) attn[j] += a * vr[j];
        }
      }

      for (std::size_t j = 0; j < d; ++j) mid[j] = x[j] + attn[j];
      const double s_ffn = rms_statistic(mid, cfg_.eps);
      for (std::size_t j = 0; j < d; ++j) yn[j] = lp.ffn_gain[j] * mid[j] / s_ffn;
      std::fill(hidden_ffn.begin(), hidden_ffn.end(), 0.0);
      axpy_row_matrix(yn, lp.ffn_in, hidden_ffn);
      for (auto& u : hidden_ffn) u = gelu(u);
      auto f = trace_.ffn[l].row(i);
      std::fill(f.begin(), f.end(), 0.0);
      axpy_row_matrix(hidden_ffn, lp.ffn_out, f);

      auto out = trace_.hidden[l + 1].row(i);
      for (std::size_t j = 0; j < d; ++j) out[j] = mid[j] + f[j];
    }

    auto hl = trace_.hidden[cfg_.layers].row(i);
    const double sigma = rms_statistic(hl, cfg_.eps);
    trace_.final_sigma.push_back(sigma);
    std::vector<double> hn(d);
    for (std::size_t j = 0; j < d; ++j) hn[j] = p_.final_gain[j] * hl[j] / sigma;
    auto logits = trace_.logits.row(i);
    axpy_row_matrix(hn, p_.unembed, logits);

    ++trace_.length;
    return logits;
  }

  // Shrinks every buffer to the pushed length.
  ForwardTrace finish() && {
    const std::size_t n = trace_.length;
    auto shrink_rows = [n](Tensor& t) {
      const std::size_t c = t.cols();
      std::vector<double> data(t.data(), t.data() + n * c);
      t = Tensor({n, c}, std::move(data));
    };
    shrink_rows(trace_.logits);
    for (auto& t : trace_.hidden) shrink_rows(t);
    for (auto& t : trace_.ffn) shrink_rows(t);
    for (auto& t : trace_.vout) shrink_rows(t);
    for (auto& t : trace_.attention) {
      Tensor s({n, n});
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c <= r; ++c) s(r, c) = t(r, c);
      t = std::move(s);
    }
    return std::move(trace_);
  }

 private:
  const ModelParams& p_;
  const ModelConfig& cfg_;
  std::size_t capacity_;
  ForwardTrace trace_;
  std::vector<Tensor> keys_;
};

// h^0 for every position: patch embedding or token embedding, plus position.
std::vector<double> embed_position(const ModelParams& params, const Tensor& patches,
                                   const SegmentedSequence& seq, std::size_t i) {
  const std::size_t d = params.config.width;
  std::vector<double> e(d, 0.0);
  if (seq.segments[i] == Segment::kVisual) {
    axpy_row_matrix(patches.row(i), params.patch_embed, e);
  } else {
    const TokenId t = seq.tokens[i];
    if (t >= params.config.vocab) {
      fail(ErrorKind::kIndex, "token id " + std::to_string(t) + " outside vocabulary");
    }
    auto row = params.token_embed.row(t);
    std::copy(row.begin(), row.end(), e.begin());
  }
  auto pos = params.pos_embed.row(i);
  for (std::size_t j = 0; j < d; ++j) e[j] += pos[j];
  return e;
}

void check_image(const ModelConfig& cfg, const Image& image) {
  if (image.height() != cfg.image_height() || image.width() != cfg.image_width()) {
    fail(ErrorKind::kShape, "image is " + std::to_string(image.height()) + "x" +
                                std::to_string(image.width()) + ", model expects " +
                                std::to_string(cfg.image_height()) + "x" +
                                std::to_string(cfg.image_width()));
  }
}

TokenId sample_token(std::span<const double> logits, double temperature, std::mt19937_64& rng) {
  if (temperature <= 0.0) {
    // First maximum wins, i.e. lowest token id on ties.
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  std::vector<double> probs(logits.begin(), logits.end());
  for (auto& v : probs) v /= temperature;
  softmax_inplace(probs);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    acc += probs[t];
    if (u < acc) return static_cast<TokenId>(t);
  }
  return static_cast<TokenId>(probs.size() - 1);
}

}  // namespace

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::kConfig, m); };
  if (layers == 0) bad("layers must be >= 1");
  if (heads == 0) bad("heads must be >= 1");
  if (width == 0 || width % heads != 0) bad("width must be a positive multiple of heads");
  if (vocab <= tok::kEos) bad("vocab must cover the special tokens");
  if (grid_rows == 0 || grid_cols == 0) bad("grid must be non-empty");
  if (patch_px == 0) bad("patch_px must be >= 1");
  if (ffn_mult == 0) bad("ffn_mult must be >= 1");
  if (max_len <= num_patches()) bad("max_len must exceed the visual block length");
  if (!(eps >= 0.0) || !std::isfinite(eps)) bad("eps must be finite and >= 0");
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out{&patch_embed, &token_embed, &pos_embed};
  for (auto& l : layers) {
    out.push_back(&l.attn_gain);
    for (auto& t : l.wq) out.push_back(&t);
    for (auto& t : l.wk) out.push_back(&t);
    for (auto& t : l.wv) out.push_back(&t);
    for (auto& t : l.wo) out.push_back(&t);
    out.push_back(&l.ffn_gain);
    out.push_back(&l.ffn_in);
    out.push_back(&l.ffn_out);
  }
  out.push_back(&final_gain);
  out.push_back(&unembed);
  return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
  auto mut = const_cast<ModelParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out{"patch_embed", "token_embed", "pos_embed"};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.push_back(pre + "attn_gain");
    for (const char* m : {"wq", "wk", "wv", "wo"})
      for (std::size_t h = 0; h < layers[l].wq.size(); ++h)
        out.push_back(pre + m + ".head" + std::to_string(h));
    out.push_back(pre + "ffn_gain");
    out.push_back(pre + "ffn_in");
    out.push_back(pre + "ffn_out");
  }
  out.push_back("final_gain");
  out.push_back("unembed");
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

bool ModelParams::all_finite() const {
  for (const Tensor* t : tensors())
    if (!t->all_finite()) return false;
  return true;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!(a.config == b.config)) return false;
  auto ta = a.tensors();
  auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (!(*ta[i] == *tb[i])) return false;
  return true;
}

const char* segment_name(Segment s) {
  switch (s) {
    case Segment::kVisual: return "visual";
    case Segment::kPrompt: return "prompt";
    case Segment::kThink: return "think";
    case Segment::kAnswer: return "answer";
  }
  return "?";
}

std::vector<std::size_t> SegmentedSequence::positions(Segment s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (segments[i] == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> SegmentedSequence::generated_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (segments[i] == Segment::kThink || segments[i] == Segment::kAnswer) out.push_back(i);
  return out;
}

std::vector<TokenId> SegmentedSequence::tokens_in(Segment s) const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (segments[i] == s) out.push_back(tokens[i]);
  return out;
}

void SegmentedSequence::validate(std::size_t num_patches) const {
  if (tokens.size() != segments.size()) {
    fail(ErrorKind::kValidation, "tokens and segments differ in length");
  }
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const bool visual = segments[i] == Segment::kVisual;
    if (visual != (i < num_patches)) {
      fail(ErrorKind::kValidation, "visual block must be exactly the first " +
                                       std::to_string(num_patches) + " positions");
    }
  }
  if (segments.size() < num_patches) {
    fail(ErrorKind::kValidation, "sequence shorter than the visual block");
  }
  bool seen_answer = false;
  for (Segment s : segments) {
    if (s == Segment::kAnswer) seen_answer = true;
    if (s == Segment::kThink && seen_answer) {
      fail(ErrorKind::kValidation, "think position after an answer position");
    }
  }
}

SegmentedSequence make_prompt(const ModelConfig& config, const std::vector<TokenId>& question) {
  SegmentedSequence seq;
  for (std::size_t i = 0; i < config.num_patches(); ++i) seq.push(tok::kImage, Segment::kVisual);
  for (TokenId t : question) seq.push(t, Segment::kPrompt);
  return seq;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.width, dh = config.head_dim();
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::uniform_real_distribution<double> unif(-bound, bound);
  auto weight = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (auto& v : t.values()) v = unif(rng);
    return t;
  };
  auto ones = [](std::size_t n) {
    Tensor t({n});
    for (auto& v : t.values()) v = 1.0;
    return t;
  };

  ModelParams p;
  p.config = config;
  p.patch_embed = weight(config.patch_dim(), d);
  p.token_embed = weight(config.vocab, d);
  p.pos_embed = weight(config.max_len, d);
  p.layers.resize(config.layers);
  for (auto& l : p.layers) {
    l.attn_gain = ones(d);
    for (std::size_t h = 0; h < config.heads; ++h) l.wq.push_back(weight(d, dh));
    for (std::size_t h = 0; h < config.heads; ++h) l.wk.push_back(weight(d, dh));
    for (std::size_t h = 0; h < config.heads; ++h) l.wv.push_back(weight(d, dh));
    for (std::size_t h = 0; h < config.heads; ++h) l.wo.push_back(weight(dh, d));
    l.ffn_gain = ones(d);
    l.ffn_in = weight(d, config.ffn_width());
    l.ffn_out = weight(config.ffn_width(), d);
  }
  p.final_gain = ones(d);
  p.unembed = weight(d, config.vocab);
  return p;
}

Tensor image_patches(const ModelConfig& cfg, const Image& image) {
  check_image(cfg, image);
  const std::size_t px = cfg.patch_px;
  Tensor patches({cfg.num_patches(), cfg.patch_dim()});
  for (std::size_t r = 0; r < cfg.grid_rows; ++r) {
    for (std::size_t c = 0; c < cfg.grid_cols; ++c) {
      auto row = patches.row(r * cfg.grid_cols + c);
      std::size_t k = 0;
      for (std::size_t y = 0; y < px; ++y)
        for (std::size_t x = 0; x < px; ++x)
          for (std::size_t ch = 0; ch < Image::kChannels; ++ch)
            row[k++] = image.at(r * px + y, c * px + x, ch);
    }
  }
  return patches;
}

ForwardResult forward_with_trace(const ModelParams& params, const Image& image,
                                 const SegmentedSequence& seq) {
  const ModelConfig& cfg = params.config;
  if (seq.size() > cfg.max_len) {
    fail(ErrorKind::kCapacity, "sequence length " + std::to_string(seq.size()) +
                                   " exceeds max_len " + std::to_string(cfg.max_len));
  }
  seq.validate(cfg.num_patches());
  const Tensor patches = image_patches(cfg, image);
  Decoder dec(params, seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) dec.push(embed_position(params, patches, seq, i));
  ForwardTrace trace = std::move(dec).finish();
  Tensor logits = trace.logits;
  return {std::move(logits), std::move(trace)};
}

namespace {

void check_generate(const ModelParams& params, const SegmentedSequence& prompt, double temperature,
                    std::size_t max_new) {
  const ModelConfig& cfg = params.config;
  prompt.validate(cfg.num_patches());
  if (!prompt.positions(Segment::kAnswer).empty()) {
    fail(ErrorKind::kUsage, "generate: prompt already contains answer tokens");
  }
  if (temperature < 0.0) fail(ErrorKind::kUsage, "generate: negative temperature");
  if (prompt.size() + max_new > cfg.max_len) {
    fail(ErrorKind::kCapacity, "generate: prompt length " + std::to_string(prompt.size()) +
                                   " + max_new " + std::to_string(max_new) +
                                   " exceeds max_len " + std::to_string(cfg.max_len));
  }
}

bool prompt_closed_think(const SegmentedSequence& prompt) {
  for (std::size_t i = 0; i < prompt.size(); ++i)
    if (prompt.segments[i] == Segment::kThink && prompt.tokens[i] == tok::kEndThink) return true;
  return false;
}

// Samples a continuation from a decoder that has consumed the prompt. With
// `trace` set, the last sampled token is pushed too so the trace covers the
// whole sequence.
SegmentedSequence continue_decoding(const ModelParams& params, const Tensor& patches, Decoder& dec,
                                    std::vector<double> logits, SegmentedSequence out,
                                    double temperature, std::size_t max_new, std::uint64_t seed,
                                    bool trace) {
  bool in_answer = prompt_closed_think(out);
  std::mt19937_64 rng(seed);
  for (std::size_t n = 0; n < max_new; ++n) {
    const TokenId t = sample_token(logits, temperature, rng);
    out.push(t, in_answer ? Segment::kAnswer : Segment::kThink);
    if (t == tok::kEndThink) in_answer = true;
    if (!trace && (t == tok::kEos || n + 1 == max_new)) break;
    auto next = dec.push(embed_position(params, patches, out, out.size() - 1));
    if (t == tok::kEos) break;
    logits.assign(next.begin(), next.end());
  }
  return out;
}

}  // namespace

SegmentedSequence generate(const ModelParams& params, const Image& image,
                           const SegmentedSequence& prompt, const GenerateOptions& options) {
  check_generate(params, prompt, options.temperature, options.max_new);
  if (options.max_new == 0) return prompt;
  const Tensor patches = image_patches(params.config, image);
  Decoder dec(params, prompt.size() + options.max_new);
  std::span<const double> logits;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    logits = dec.push(embed_position(params, patches, prompt, i));
  }
  return continue_decoding(params, patches, dec, {logits.begin(), logits.end()}, prompt,
                           options.temperature, options.max_new, options.seed, false);
}

std::vector<Generation> generate_group(const ModelParams& params, const Image& image,
                                       const SegmentedSequence& prompt, double temperature,
                                       std::size_t max_new, std::span<const std::uint64_t> seeds) {
  check_generate(params, prompt, temperature, max_new);
  const Tensor patches = image_patches(params.config, image);
  Decoder prefix(params, prompt.size() + max_new);
  std::span<const double> last;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    last = prefix.push(embed_position(params, patches, prompt, i));
  }
  const std::vector<double> logits(last.begin(), last.end());
  std::vector<Generation> out;
  out.reserve(seeds.size());
  for (std::uint64_t seed : seeds) {
    Decoder dec = prefix;
    Generation g;
    g.sequence = continue_decoding(params, patches, dec, logits, prompt, temperature, max_new,
                                   seed, true);
    g.trace = std::move(dec).finish();
    out.push_back(std::move(g));
  }
  return out;
}

SequenceLogprob sequence_logprob(const ForwardTrace& trace, const SegmentedSequence& seq) {
  SequenceLogprob out;
  std::vector<double> row;
  for (std::size_t pos : seq.generated_positions()) {
    if (pos == 0) fail(ErrorKind::kValidation, "generated token at position 0 has no prefix");
    auto lr = trace.logits.row(pos - 1);
    row.assign(lr.begin(), lr.end());
    log_softmax_inplace(row);
    const double lp = row[seq.tokens[pos]];
    out.per_token.push_back(lp);
    out.total += lp;
  }
  if (out.per_token.empty()) {
    fail(ErrorKind::kValidation, "sequence_logprob: no think/answer positions");
  }
  return out;
}

SequenceLogprob sequence_logprob(const ModelParams& params, const Image& image,
                                 const SegmentedSequence& seq) {
  return sequence_logprob(forward_with_trace(params, image, seq).trace, seq);
}

std::vector<Var> register_params(GradientTape& tape, const ModelParams& params) {
  std::vector<Var> vars;
  const auto ts = params.tensors();
  vars.reserve(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) vars.push_back(tape.parameter(i, *ts[i]));
  return vars;
}

Var taped_logits(GradientTape& tape, const std::vector<Var>& pv, const ModelConfig& cfg,
                 const Tensor& patches, const SegmentedSequence& seq) {
  if (seq.size() > cfg.max_len) {
    fail(ErrorKind::kCapacity, "sequence length exceeds max_len");
  }
  seq.validate(cfg.num_patches());
  const std::size_t H = cfg.heads;
  // ParamId layout mirrors ModelParams::tensors().
  std::size_t next = 0;
  const Var patch_embed = pv[next++];
  const Var token_embed = pv[next++];
  const Var pos_embed = pv[next++];

  const std::size_t T = seq.size(), V = cfg.num_patches();
  Var h = tape.matmul(tape.constant(patches), patch_embed);
  if (T > V) {
    std::vector<std::size_t> ids(seq.tokens.begin() + static_cast<std::ptrdiff_t>(V), seq.tokens.end());
    for (auto id : ids)
      if (id >= cfg.vocab) fail(ErrorKind::kIndex, "token id outside vocabulary");
    h = tape.concat_rows(h, tape.gather_rows(token_embed, std::move(ids)));
  }
  std::vector<std::size_t> positions(T);
  for (std::size_t i = 0; i < T; ++i) positions[i] = i;
  h = tape.add(h, tape.gather_rows(pos_embed, std::move(positions)));

  const double score_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const Var attn_gain = pv[next++];
    const std::size_t wq0 = next, wk0 = next + H, wv0 = next + 2 * H, wo0 = next + 3 * H;
    next += 4 * H;
    const Var ffn_gain = pv[next++];
    const Var ffn_in = pv[next++];
    const Var ffn_out = pv[next++];

    const Var xn = tape.rmsnorm_rows(h, attn_gain, cfg.eps);
    Var attn{};
    for (std::size_t hd = 0; hd < H; ++hd) {
      const Var q = tape.matmul(xn, pv[wq0 + hd]);
      const Var k = tape.matmul(xn, pv[wk0 + hd]);
      const Var v = tape.matmul(xn, pv[wv0 + hd]);
      const Var scores = tape.scale(tape.matmul_nt(q, k), score_scale);
      const Var alpha = tape.causal_softmax_rows(scores);
      const Var out = tape.matmul(tape.matmul(alpha, v), pv[wo0 + hd]);
      attn = hd == 0 ? out : tape.add(attn, out);
    }
    const Var mid = tape.add(h, attn);
    const Var yn = tape.rmsnorm_rows(mid, ffn_gain, cfg.eps);
    const Var f = tape.matmul(tape.gelu(tape.matmul(yn, ffn_in)), ffn_out);
    h = tape.add(mid, f);
  }
  const Var final_gain = pv[next++];
  const Var unembed = pv[next++];
  return tape.matmul(tape.rmsnorm_rows(h, final_gain, cfg.eps), unembed);
}

Var taped_token_logprobs(GradientTape& tape, const std::vector<Var>& pv, const ModelConfig& cfg,
                         const Tensor& patches, const SegmentedSequence& seq) {
  const auto gen = seq.generated_positions();
  if (gen.empty()) fail(ErrorKind::kDegenerate, "no generated positions to score");
  const Var logp = tape.log_softmax_rows(taped_logits(tape, pv, cfg, patches, seq));
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  coords.reserve(gen.size());
  for (std::size_t pos : gen) {
    if (pos == 0) fail(ErrorKind::kValidation, "generated token at position 0 has no prefix");
    coords.emplace_back(pos - 1, seq.tokens[pos]);
  }
  return tape.pick(logp, std::move(coords));
}

std::string checkpoint_json(const ModelParams& params) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = params.config;
  auto names = params.names();
  auto ts = params.tensors();
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    arr.push_back({{"name", names[i]},
                   {"shape", ts[i]->shape()},
                   {"data", std::vector<double>(ts[i]->values().begin(), ts[i]->values().end())}});
  }
  j["params"] = std::move(arr);
  return j.dump();
}

ModelParams checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("checkpoint: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      fail(ErrorKind::kParse, "checkpoint: unsupported format_version " + std::to_string(version));
    }
    ModelParams p = init_model(j.at("config").get<ModelConfig>(), 0);
    auto names = p.names();
    auto ts = p.tensors();
    const auto& arr = j.at("params");
    if (arr.size() != ts.size()) fail(ErrorKind::kParse, "checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const auto& e = arr[i];
      if (e.at("name").get<std::string>() != names[i]) {
        fail(ErrorKind::kParse, "checkpoint: expected parameter " + names[i]);
      }
      auto shape = e.at("shape").get<std::vector<std::size_t>>();
      if (shape != ts[i]->shape()) fail(ErrorKind::kParse, "checkpoint: shape mismatch for " + names[i]);
      *ts[i] = Tensor(std::move(shape), e.at("data").get<std::vector<double>>());
    }
    if (!p.all_finite()) fail(ErrorKind::kParse, "checkpoint: non-finite parameter values");
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  out << checkpoint_json(params) << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace salient
