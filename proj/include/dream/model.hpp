#pragma once

// Toy encoder-decoder transformer with buffer tokens, two caption towers and a
// residual MLP diffusion head. Everything operates on batches of ragged
// per-sample row segments: the encoder sees [buffers; visible tokens] for each
// sample, the decoder sees [buffers; all grid positions].

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "dream/masking.hpp"
#include "dream/ops.hpp"
#include "dream/optim.hpp"
#include "dream/rng.hpp"
#include "dream/synthdata.hpp"

namespace dream {

enum class ClipTokens : std::uint8_t { all, buffer };

struct ModelConfig {
  int enc_blocks = 2;
  int dec_blocks = 2;
  int width = 64;
  int heads = 4;
  int mlp_ratio = 4;
  int buffer_tokens = 8;
  int head_layers = 6;
  int contrastive_dim = 64;
  int cond_dim = 64;  // width of the conditioning caption tower
  int text_blocks = 2;
  int vocab_size = kVocabSize;
  int caption_length = kCaptionLength;
  int token_channels = 48;
  int n_tokens = 64;
  int clip_loss_layer = 0;  // encoder block whose output is pooled; 0 = last
  ClipTokens clip_tokens = ClipTokens::all;
  int timesteps = 1000;  // scale of the sinusoidal timestep embedding
  double init_std = 0.02;
  bool zero_init_head_output = true;

  bool operator==(const ModelConfig&) const = default;
  int tap_layer() const { return clip_loss_layer == 0 ? enc_blocks : clip_loss_layer; }
  void validate() const {
    auto need = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
    };
    need(width > 0 && heads > 0 && width % heads == 0, "width must be divisible by heads");
    need(cond_dim > 0 && cond_dim % heads == 0, "cond_dim must be divisible by heads");
    need(enc_blocks >= 1 && dec_blocks >= 1 && text_blocks >= 0, "block counts");
    need(buffer_tokens >= 0 && head_layers >= 1 && mlp_ratio >= 1, "buffer/head/mlp sizes");
    need(contrastive_dim > 0 && token_channels > 0 && n_tokens > 0, "embedding sizes");
    need(vocab_size > kNullToken && caption_length > 0, "caption vocabulary");
    need(clip_loss_layer >= 0 && clip_loss_layer <= enc_blocks, "clip_loss_layer outside encoder");
    need(clip_tokens == ClipTokens::all || buffer_tokens > 0, "buffer pooling needs buffer tokens");
    need(width % 2 == 0 && timesteps >= 1, "timestep embedding");
  }
};

/// One sample's encoder input: token values and their original grid positions.
template <typename Scalar>
struct EncoderInput {
  Matrix<Scalar> tokens;  // visible x channels
  std::vector<int> positions;
};

template <typename Scalar>
struct EncoderOutput {
  Tensor<Scalar> features;  // final-layer, normalized; segment i = [buffers; visible tokens]
  Tensor<Scalar> tap;       // residual stream after the tap block
  Tensor<Scalar> pooled;    // samples x contrastive_dim, unit rows
  std::vector<Index> offsets;
  std::vector<std::vector<int>> positions;
  int buffer_tokens = 0;

  int samples() const { return static_cast<int>(positions.size()); }
  Index rows_of(int i) const { return offsets[static_cast<std::size_t>(i) + 1] - offsets[static_cast<std::size_t>(i)]; }
  /// Mean of final-layer features over each sample's rows (probe features).
  Tensor<Scalar> mean_features() const { return segment_mean(features, offsets); }
};

template <typename Scalar>
class Model {
 public:
  using T = Tensor<Scalar>;
  using Mat = Matrix<Scalar>;

  struct Linear {
    T w, b;
    T operator()(const T& x) const { return affine(x, w, b); }
  };
  struct Norm {
    T g, b;
    T operator()(const T& x) const { return layer_norm(x, g, b); }
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct Block {
    Norm ln1;
    Attention self;
    bool has_cross = false;
    Norm ln_cross;
    Attention cross;
    Norm ln2;
    Linear fc1, fc2;
  };
  struct HeadBlock {
    Norm ln;
    Linear fc1, fc2;
  };

  explicit Model(const ModelConfig& config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    Rng rng(seed, {key(Stream::init)});
    const int D = config_.width, C = config_.token_channels, B = config_.buffer_tokens, E = config_.cond_dim;
    const double s = config_.init_std;

    enc_in_ = linear("enc.in", C, D, rng);
    enc_pos_ = params_.normal("enc.pos", config_.n_tokens, D, s, rng, false);
    if (B > 0) buffers_ = params_.normal("enc.buffers", B, D, s, rng, false);
    for (int i = 0; i < config_.enc_blocks; ++i) enc_blocks_.push_back(block("enc.block" + std::to_string(i), D, D, false, rng));
    enc_norm_ = norm("enc.norm", D);
    clip_norm_ = norm("clip.norm", D);
    clip_proj_ = linear("clip.proj", D, config_.contrastive_dim, rng);
    logit_scale_ = params_.constant("clip.logit_scale", 1, 1, 2.659);

    dec_embed_ = linear("dec.embed", D, D, rng);
    mask_token_ = params_.normal("dec.mask_token", 1, D, s, rng, false);
    dec_pos_ = params_.normal("dec.pos", B + config_.n_tokens, D, s, rng, false);
    for (int i = 0; i < config_.dec_blocks; ++i) dec_blocks_.push_back(block("dec.block" + std::to_string(i), D, E, true, rng));
    dec_norm_ = norm("dec.norm", D);

    const int L = config_.caption_length, V = config_.vocab_size;
    txt_tok_ = params_.normal("text.tok", V, D, s, rng, false);
    txt_pos_ = params_.normal("text.pos", L, D, s, rng, false);
    for (int i = 0; i < config_.text_blocks; ++i) txt_blocks_.push_back(block("text.block" + std::to_string(i), D, D, false, rng));
    txt_norm_ = norm("text.norm", D);
    txt_proj_ = linear("text.proj", D, config_.contrastive_dim, rng);

    cond_tok_ = params_.normal("cond.tok", V, E, s, rng, false);
    cond_pos_ = params_.normal("cond.pos", L, E, s, rng, false);
    for (int i = 0; i < config_.text_blocks; ++i) cond_blocks_.push_back(block("cond.block" + std::to_string(i), E, E, false, rng));
    cond_norm_ = norm("cond.norm", E);
    null_seq_ = params_.normal("cond.null", L, E, s, rng, false);

    t_fc1_ = linear("head.t_fc1", D, D, rng);
    t_fc2_ = linear("head.t_fc2", D, D, rng);
    head_in_ = linear("head.in", C, D, rng);
    for (int i = 0; i < config_.head_layers; ++i) {
      const std::string p = "head.block" + std::to_string(i);
      head_blocks_.push_back({norm(p + ".ln", D), linear(p + ".fc1", D, D, rng), linear(p + ".fc2", D, D, rng)});
    }
    head_norm_ = norm("head.norm", D);
    head_out_ = linear("head.out", D, C, rng);
    if (config_.zero_init_head_output) head_out_.w.mutable_value().setZero();
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore<Scalar>& params() { return params_; }
  const ParamStore<Scalar>& params() const { return params_; }
  const T& logit_scale() const { return logit_scale_; }

  // -------------------------------------------------------------------------
  // Vision encoder. Takes no caption input.

  EncoderOutput<Scalar> encode(const std::vector<EncoderInput<Scalar>>& inputs) const {
    const int B = config_.buffer_tokens, C = config_.token_channels;
    if (inputs.empty()) throw std::invalid_argument("encoder: empty batch");
    EncoderOutput<Scalar> out;
    out.buffer_tokens = B;
    out.offsets.push_back(0);
    Index visible_total = 0;
    for (const auto& in : inputs) {
      if (in.tokens.rows() != static_cast<Index>(in.positions.size()) || in.tokens.cols() != C) {
        throw std::invalid_argument("encoder: token/position shape mismatch");
      }
      if (B + in.tokens.rows() == 0) throw std::invalid_argument("encoder: sample has no tokens at all");
      for (int p : in.positions) {
        if (p < 0 || p >= config_.n_tokens) throw std::invalid_argument("encoder: position out of range");
      }
      visible_total += in.tokens.rows();
      out.offsets.push_back(out.offsets.back() + B + in.tokens.rows());
      out.positions.push_back(in.positions);
    }

    Mat stacked(visible_total, C);
    std::vector<Index> pos_index;
    pos_index.reserve(static_cast<std::size_t>(visible_total));
    Index at = 0;
    for (const auto& in : inputs) {
      stacked.middleRows(at, in.tokens.rows()) = in.tokens;
      at += in.tokens.rows();
      for (int p : in.positions) pos_index.push_back(p);
    }
    T tokens = add(enc_in_(T(std::move(stacked))), gather_rows(enc_pos_, std::move(pos_index)));

    T x;
    if (B > 0) {
      // Rows [0, B) of `pool` are the buffers, then every sample's tokens.
      T pool = concat_rows<Scalar>({buffers_, tokens});
      std::vector<Index> order;
      order.reserve(static_cast<std::size_t>(out.offsets.back()));
      Index token_row = B;
      for (const auto& in : inputs) {
        for (int b = 0; b < B; ++b) order.push_back(b);
        for (Index j = 0; j < in.tokens.rows(); ++j) order.push_back(token_row++);
      }
      x = gather_rows(pool, std::move(order));
    } else {
      x = tokens;
    }

    const int tap = config_.tap_layer();
    for (int i = 0; i < config_.enc_blocks; ++i) {
      x = self_block(enc_blocks_[static_cast<std::size_t>(i)], x, out.offsets);
      if (i + 1 == tap) out.tap = x;
    }
    out.features = enc_norm_(x);

    T pooled_src = out.tap;
    std::vector<Index> pool_offsets = out.offsets;
    if (config_.clip_tokens == ClipTokens::buffer) {
      std::vector<Index> rows;
      for (std::size_t i = 0; i + 1 < out.offsets.size(); ++i) {
        for (int b = 0; b < B; ++b) rows.push_back(out.offsets[i] + b);
      }
      pooled_src = gather_rows(out.tap, std::move(rows));
      for (std::size_t i = 0; i < pool_offsets.size(); ++i) pool_offsets[i] = static_cast<Index>(i) * B;
    }
    out.pooled = l2_normalize_rows(clip_proj_(clip_norm_(segment_mean(pooled_src, std::move(pool_offsets)))));
    return out;
  }

  /// Encoder over the unmasked tokens of each grid.
  EncoderOutput<Scalar> encode_masked(const std::vector<const Matrix<double>*>& grids,
                                      const std::vector<MaskState>& masks) const {
    if (grids.size() != masks.size()) throw std::invalid_argument("encoder: grid/mask count mismatch");
    std::vector<EncoderInput<Scalar>> inputs(grids.size());
    for (std::size_t i = 0; i < grids.size(); ++i) {
      if (grids[i]->rows() != masks[i].token_count()) throw std::invalid_argument("encoder: mask length mismatch");
      inputs[i].positions = masks[i].visible_positions();
      inputs[i].tokens.resize(static_cast<Index>(inputs[i].positions.size()), grids[i]->cols());
      for (std::size_t j = 0; j < inputs[i].positions.size(); ++j) {
        inputs[i].tokens.row(static_cast<Index>(j)) = grids[i]->row(inputs[i].positions[j]).template cast<Scalar>();
      }
    }
    return encode(inputs);
  }

  // -------------------------------------------------------------------------
  // Decoder: scatter encoder features back onto the grid, fill masked slots
  // with the mask token, attend to itself and to the caption sequence.
  // Returns z with n_tokens rows per sample.

  T decode(const EncoderOutput<Scalar>& enc, const std::vector<MaskState>& masks, const T& cond) const {
    const int B = config_.buffer_tokens, n = config_.n_tokens, L = config_.caption_length;
    const auto N = static_cast<std::size_t>(enc.samples());
    if (masks.size() != N) throw std::invalid_argument("decoder: mask count mismatch");
    if (cond.rows() != static_cast<Index>(N) * L || cond.cols() != config_.cond_dim) {
      throw std::invalid_argument("decoder: conditioning shape mismatch");
    }
    T embedded = dec_embed_(enc.features);
    T pool = concat_rows<Scalar>({embedded, mask_token_});
    const Index mask_row = embedded.rows();
    std::vector<Index> order, pos_index;
    order.reserve(N * static_cast<std::size_t>(B + n));
    for (std::size_t i = 0; i < N; ++i) {
      const auto& mask = masks[i];
      if (mask.token_count() != n || enc.rows_of(static_cast<int>(i)) != B + mask.visible_count() ||
          static_cast<int>(enc.positions[i].size()) != mask.visible_count()) {
        throw std::invalid_argument("decoder: mask does not match encoder features");
      }
      std::vector<Index> row_of(static_cast<std::size_t>(n), -1);
      for (std::size_t j = 0; j < enc.positions[i].size(); ++j) {
        const int p = enc.positions[i][j];
        if (mask.is_masked(p)) throw std::invalid_argument("decoder: encoded position is masked");
        row_of[static_cast<std::size_t>(p)] = enc.offsets[i] + B + static_cast<Index>(j);
      }
      for (int b = 0; b < B; ++b) order.push_back(enc.offsets[i] + b);
      for (int p = 0; p < n; ++p) order.push_back(mask.is_masked(p) ? mask_row : row_of[static_cast<std::size_t>(p)]);
      for (int r = 0; r < B + n; ++r) pos_index.push_back(r);
    }
    T x = add(gather_rows(pool, std::move(order)), gather_rows(dec_pos_, std::move(pos_index)));

    std::vector<Index> offsets(N + 1), cond_offsets(N + 1);
    for (std::size_t i = 0; i <= N; ++i) {
      offsets[i] = static_cast<Index>(i) * (B + n);
      cond_offsets[i] = static_cast<Index>(i) * L;
    }
    for (const auto& blk : dec_blocks_) x = cross_block(blk, x, offsets, cond, cond_offsets);
    x = dec_norm_(x);

    std::vector<Index> keep;
    keep.reserve(N * static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < N; ++i) {
      for (int p = 0; p < n; ++p) keep.push_back(offsets[i] + B + p);
    }
    return gather_rows(x, std::move(keep));
  }

  // -------------------------------------------------------------------------
  // Caption towers.

  /// Unit-norm caption embeddings in the shared contrastive space.
  T encode_text(const std::vector<CaptionTokens>& captions) const {
    const int L = config_.caption_length;
    auto x = embed_caption(captions, txt_tok_, txt_pos_);
    const auto offsets = uniform_offsets(captions.size(), L);
    for (const auto& blk : txt_blocks_) x = self_block(blk, x, offsets);
    return l2_normalize_rows(txt_proj_(segment_mean(txt_norm_(x), offsets)));
  }

  /// Conditioning sequences (caption_length rows per caption). NULL prompts
  /// map to the learned null sequence.
  T encode_cond(const std::vector<CaptionTokens>& captions) const {
    const int L = config_.caption_length;
    if (captions.empty()) throw std::invalid_argument("caption tower: empty batch");
    std::vector<CaptionTokens> real;
    for (const auto& c : captions) {
      if (!c.is_null()) real.push_back(c);
    }
    std::vector<T> parts;
    if (!real.empty()) {
      auto x = embed_caption(real, cond_tok_, cond_pos_);
      const auto offsets = uniform_offsets(real.size(), L);
      for (const auto& blk : cond_blocks_) x = self_block(blk, x, offsets);
      parts.push_back(cond_norm_(x));
    }
    if (real.size() == captions.size()) return parts.front();
    parts.push_back(null_seq_);
    const Index null_base = static_cast<Index>(real.size()) * L;
    std::vector<Index> order;
    Index next_real = 0;
    for (const auto& c : captions) {
      const Index base = c.is_null() ? null_base : (next_real++) * L;
      for (int j = 0; j < L; ++j) order.push_back(base + j);
    }
    return gather_rows(concat_rows(parts), std::move(order));
  }

  // -------------------------------------------------------------------------
  // Diffusion head: eps_hat for each row of x_t given z and the timestep.

  T head(const T& x_t, const std::vector<int>& timesteps, const T& z) const {
    if (x_t.rows() != z.rows() || static_cast<Index>(timesteps.size()) != x_t.rows()) {
      throw std::invalid_argument("diffusion head: row counts differ");
    }
    if (x_t.cols() != config_.token_channels || z.cols() != config_.width) {
      throw std::invalid_argument("diffusion head: column counts");
    }
    for (int t : timesteps) {
      if (t < 0 || t > config_.timesteps) throw std::invalid_argument("diffusion head: timestep out of range");
    }
    T temb = t_fc2_(silu(t_fc1_(T(timestep_embedding(timesteps)))));
    T c = add(z, temb);
    T h = add(head_in_(x_t), c);
    for (const auto& blk : head_blocks_) h = add(h, blk.fc2(silu(blk.fc1(add(blk.ln(h), c)))));
    return head_out_(head_norm_(h));
  }

  /// Sinusoidal features [cos(t f_k), sin(t f_k)], f_k = 10000^(-k / half).
  Mat timestep_embedding(const std::vector<int>& timesteps) const {
    const int half = config_.width / 2;
    Mat e(static_cast<Index>(timesteps.size()), config_.width);
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
      for (int k = 0; k < half; ++k) {
        const double f = std::exp(-std::log(10000.0) * k / half);
        const double a = timesteps[i] * f;
        e(static_cast<Index>(i), k) = static_cast<Scalar>(std::cos(a));
        e(static_cast<Index>(i), half + k) = static_cast<Scalar>(std::sin(a));
      }
    }
    return e;
  }

  /// Parameters of every decoder cross-attention (used by ablation tests).
  std::vector<std::string> cross_attention_parameter_names() const {
    std::vector<std::string> names;
    for (int i = 0; i < config_.dec_blocks; ++i) {
      for (const char* part : {"q", "k", "v", "o"}) {
        for (const char* leaf : {"w", "b"}) {
          names.push_back("dec.block" + std::to_string(i) + ".cross." + part + "." + leaf);
        }
      }
    }
    return names;
  }

 private:
  static std::vector<Index> uniform_offsets(std::size_t n, int len) {
    std::vector<Index> o(n + 1);
    for (std::size_t i = 0; i <= n; ++i) o[i] = static_cast<Index>(i) * len;
    return o;
  }

  T embed_caption(const std::vector<CaptionTokens>& captions, const T& table, const T& pos) const {
    const int L = config_.caption_length;
    if (L != kCaptionLength) throw std::invalid_argument("caption length differs from the vocabulary layout");
    if (captions.empty()) throw std::invalid_argument("caption tower: empty batch");
    std::vector<Index> ids, pos_index;
    for (const auto& c : captions) {
      for (int j = 0; j < L; ++j) {
        const auto id = c.ids[static_cast<std::size_t>(j)];
        if (id >= config_.vocab_size) throw std::invalid_argument("caption tower: token id outside vocabulary");
        ids.push_back(id);
        pos_index.push_back(j);
      }
    }
    return add(gather_rows(table, std::move(ids)), gather_rows(pos, std::move(pos_index)));
  }

  Linear linear(const std::string& name, int in, int out, Rng& rng) {
    return {params_.normal(name + ".w", in, out, config_.init_std, rng, true),
            params_.constant(name + ".b", 1, out, 0.0, false)};
  }

  Norm norm(const std::string& name, int width) {
    return {params_.constant(name + ".g", 1, width, 1.0, false), params_.constant(name + ".b", 1, width, 0.0, false)};
  }

  Attention attention(const std::string& name, int width, int kv_width, Rng& rng) {
    return {linear(name + ".q", width, width, rng), linear(name + ".k", kv_width, width, rng),
            linear(name + ".v", kv_width, width, rng), linear(name + ".o", width, width, rng)};
  }

  Block block(const std::string& name, int width, int kv_width, bool cross, Rng& rng) {
    Block b;
    b.ln1 = norm(name + ".ln1", width);
    b.self = attention(name + ".self", width, width, rng);
    b.has_cross = cross;
    if (cross) {
      b.ln_cross = norm(name + ".ln_cross", width);
      b.cross = attention(name + ".cross", width, kv_width, rng);
    }
    b.ln2 = norm(name + ".ln2", width);
    b.fc1 = linear(name + ".fc1", width, width * config_.mlp_ratio, rng);
    b.fc2 = linear(name + ".fc2", width * config_.mlp_ratio, width, rng);
    return b;
  }

  T attend(const Attention& a, const T& x, const T& kv, const std::vector<Index>& q_off,
           const std::vector<Index>& kv_off) const {
    return a.o(segmented_attention(a.q(x), a.k(kv), a.v(kv), q_off, kv_off, config_.heads));
  }

  T self_block(const Block& b, T x, const std::vector<Index>& offsets) const {
    T h = b.ln1(x);
    x = add(x, attend(b.self, h, h, offsets, offsets));
    return add(x, b.fc2(gelu(b.fc1(b.ln2(x)))));
  }

  T cross_block(const Block& b, T x, const std::vector<Index>& offsets, const T& cond,
                const std::vector<Index>& cond_offsets) const {
    T h = b.ln1(x);
    x = add(x, attend(b.self, h, h, offsets, offsets));
    x = add(x, attend(b.cross, b.ln_cross(x), cond, offsets, cond_offsets));
    return add(x, b.fc2(gelu(b.fc1(b.ln2(x)))));
  }

  ModelConfig config_;
  ParamStore<Scalar> params_;

  Linear enc_in_;
  T enc_pos_, buffers_;
  std::vector<Block> enc_blocks_;
  Norm enc_norm_, clip_norm_;
  Linear clip_proj_;
  T logit_scale_;

  Linear dec_embed_;
  T mask_token_, dec_pos_;
  std::vector<Block> dec_blocks_;
  Norm dec_norm_;

  T txt_tok_, txt_pos_;
  std::vector<Block> txt_blocks_;
  Norm txt_norm_;
  Linear txt_proj_;

  T cond_tok_, cond_pos_;
  std::vector<Block> cond_blocks_;
  Norm cond_norm_;
  T null_seq_;

  Linear t_fc1_, t_fc2_, head_in_;
  std::vector<HeadBlock> head_blocks_;
  Norm head_norm_;
  Linear head_out_;
};

}  // namespace dream
