#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vlalign/boxes.hpp"
#include "vlalign/config.hpp"
#include "vlalign/ops.hpp"
#include "vlalign/params.hpp"

namespace vlalign {

// ---------------------------------------------------------------------------
// inputs
// ---------------------------------------------------------------------------

struct ObjectInput {
  std::vector<double> features;
  Box box;
};

// Fixed-length token buffer. Position 0 is always [CLS]; padded positions
// carry kPadId and are invalid for attention.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<unsigned char> valid;

  static TokenSequence from_words(const std::vector<int>& word_ids, int max_tokens) {
    check(static_cast<int>(word_ids.size()) <= max_tokens - 1,
          "TokenSequence: sentence too long for max_tokens");
    TokenSequence t;
    t.ids.assign(static_cast<size_t>(max_tokens), kPadId);
    t.valid.assign(static_cast<size_t>(max_tokens), 0);
    t.ids[0] = kClsId;
    t.valid[0] = 1;
    for (size_t i = 0; i < word_ids.size(); ++i) {
      t.ids[i + 1] = word_ids[i];
      t.valid[i + 1] = 1;
    }
    return t;
  }

  int length() const { return static_cast<int>(ids.size()); }
};

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

struct AttnParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LnParams {
  Tensor gain, bias;
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
};

namespace detail {

inline void add_linear(ParamStore& p, const std::string& prefix, int in, int out, Rng& rng) {
  p.add_normal(prefix + ".W", {in, out}, rng);
  p.add_const(prefix + ".b", {out}, 0.0);
}

inline void add_ln(ParamStore& p, const std::string& prefix, int d) {
  p.add_const(prefix + ".gain", {d}, 1.0);
  p.add_const(prefix + ".bias", {d}, 0.0);
}

inline void add_attn(ParamStore& p, const std::string& prefix, int d, Rng& rng) {
  for (const char* nm : {"Wq", "Wk", "Wv", "Wo"}) p.add_normal(prefix + "." + nm, {d, d}, rng);
  for (const char* nm : {"bq", "bk", "bv", "bo"}) p.add_const(prefix + "." + nm, {d}, 0.0);
}

inline void add_ffn(ParamStore& p, const std::string& prefix, int d, Rng& rng) {
  p.add_normal(prefix + ".W1", {d, 4 * d}, rng);
  p.add_const(prefix + ".b1", {4 * d}, 0.0);
  p.add_normal(prefix + ".W2", {4 * d, d}, rng);
  p.add_const(prefix + ".b2", {d}, 0.0);
}

inline AttnParams get_attn(const ParamStore& p, const std::string& prefix) {
  return AttnParams{p.at(prefix + ".Wq"), p.at(prefix + ".bq"), p.at(prefix + ".Wk"),
                    p.at(prefix + ".bk"), p.at(prefix + ".Wv"), p.at(prefix + ".bv"),
                    p.at(prefix + ".Wo"), p.at(prefix + ".bo")};
}

inline LnParams get_ln(const ParamStore& p, const std::string& prefix) {
  return LnParams{p.at(prefix + ".gain"), p.at(prefix + ".bias")};
}

inline FfnParams get_ffn(const ParamStore& p, const std::string& prefix) {
  return FfnParams{p.at(prefix + ".W1"), p.at(prefix + ".b1"), p.at(prefix + ".W2"),
                   p.at(prefix + ".b2")};
}

}  // namespace detail

// Creates every model parameter. Weights ~ N(0, 0.02), biases zero, layer
// norm gains one. The creation order is the checkpoint order.
inline ParamStore build_model_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamStore p;
  Rng rng(hash_tag(seed, "params"));
  p.add_normal("embed.word_table", {cfg.vocab_size, cfg.d}, rng);
  p.add_normal("embed.pos_table", {cfg.max_tokens, cfg.d}, rng);
  detail::add_ln(p, "embed.word_ln", cfg.d);
  detail::add_linear(p, "embed.obj_feat", cfg.feature_dim, cfg.d, rng);
  detail::add_ln(p, "embed.obj_feat_ln", cfg.d);
  detail::add_linear(p, "embed.obj_box", 7, cfg.d, rng);
  detail::add_ln(p, "embed.obj_box_ln", cfg.d);
  for (int i = 0; i < cfg.n_lang_layers; ++i) {
    const std::string pre = "lang_intra." + std::to_string(i);
    detail::add_attn(p, pre + ".attn", cfg.d, rng);
    detail::add_ln(p, pre + ".attn_ln", cfg.d);
    detail::add_ffn(p, pre + ".ffn", cfg.d, rng);
    detail::add_ln(p, pre + ".ffn_ln", cfg.d);
  }
  for (int i = 0; i < cfg.n_vis_layers; ++i) {
    const std::string pre = "vis_intra." + std::to_string(i);
    detail::add_attn(p, pre + ".attn", cfg.d, rng);
    detail::add_ln(p, pre + ".attn_ln", cfg.d);
    detail::add_ffn(p, pre + ".ffn", cfg.d, rng);
    detail::add_ln(p, pre + ".ffn_ln", cfg.d);
  }
  for (int i = 0; i < cfg.n_inter_layers; ++i) {
    const std::string pre = "inter." + std::to_string(i);
    detail::add_attn(p, pre + ".cross_s.attn", cfg.d, rng);
    detail::add_ln(p, pre + ".cross_s_ln", cfg.d);
    detail::add_attn(p, pre + ".cross_o.attn", cfg.d, rng);
    detail::add_ln(p, pre + ".cross_o_ln", cfg.d);
    detail::add_attn(p, pre + ".self_s.attn", cfg.d, rng);
    detail::add_ln(p, pre + ".self_s_ln", cfg.d);
    detail::add_attn(p, pre + ".self_o.attn", cfg.d, rng);
    detail::add_ln(p, pre + ".self_o_ln", cfg.d);
    detail::add_ffn(p, pre + ".ffn_s", cfg.d, rng);
    detail::add_ln(p, pre + ".ffn_s_ln", cfg.d);
    detail::add_ffn(p, pre + ".ffn_o", cfg.d, rng);
    detail::add_ln(p, pre + ".ffn_o_ln", cfg.d);
  }
  detail::add_linear(p, "head.vocab", cfg.d, cfg.vocab_size, rng);
  detail::add_linear(p, "head.vis_class", cfg.d, cfg.class_count, rng);
  detail::add_linear(p, "head.vis_attr", cfg.d, cfg.attribute_count, rng);
  detail::add_linear(p, "head.vis_feat", cfg.d, cfg.feature_dim, rng);
  detail::add_linear(p, "head.match", cfg.d, 1, rng);
  detail::add_linear(p, "head.vqa", cfg.d, cfg.answer_count, rng);
  detail::add_linear(p, "head.pair", 2 * cfg.d, 1, rng);
  detail::add_linear(p, "align.proj_s", cfg.d, cfg.d, rng);
  detail::add_ln(p, "align.ln_s", cfg.d);
  detail::add_linear(p, "align.proj_o", cfg.d, cfg.d, rng);
  detail::add_ln(p, "align.ln_o", cfg.d);
  return p;
}

// ---------------------------------------------------------------------------
// embeddings
// ---------------------------------------------------------------------------

// o_j = ( LN(W_f f_j + b_f) + LN(W_b box7_j + b_b) ) / 2
inline Tensor embed_objects(const std::vector<ObjectInput>& objects, const ParamStore& p) {
  check(!objects.empty(), "embed_objects: empty object list");
  const int n = static_cast<int>(objects.size());
  const int fdim = static_cast<int>(objects[0].features.size());
  std::vector<double> feats(static_cast<size_t>(n) * fdim);
  std::vector<double> boxes(static_cast<size_t>(n) * 7);
  for (int j = 0; j < n; ++j) {
    check(static_cast<int>(objects[static_cast<size_t>(j)].features.size()) == fdim,
          "embed_objects: inconsistent feature widths");
    const Box& b = objects[static_cast<size_t>(j)].box;
    check(b.valid(), "embed_objects: degenerate box");
    check(b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= 1.0 && b.y_max <= 1.0,
          "embed_objects: box coordinates must lie in [0, 1]");
    std::copy(objects[static_cast<size_t>(j)].features.begin(),
              objects[static_cast<size_t>(j)].features.end(), feats.begin() + static_cast<size_t>(j) * fdim);
    auto f7 = b.features();
    std::copy(f7.begin(), f7.end(), boxes.begin() + static_cast<size_t>(j) * 7);
  }
  Tensor f = Tensor::from_flat({n, fdim}, std::move(feats));
  Tensor b7 = Tensor::from_flat({n, 7}, std::move(boxes));
  LnParams lf = detail::get_ln(p, "embed.obj_feat_ln");
  LnParams lb = detail::get_ln(p, "embed.obj_box_ln");
  Tensor branch_f = layer_norm_rows(linear(f, p.at("embed.obj_feat.W"), p.at("embed.obj_feat.b")),
                                    lf.gain, lf.bias);
  Tensor branch_b = layer_norm_rows(linear(b7, p.at("embed.obj_box.W"), p.at("embed.obj_box.b")),
                                    lb.gain, lb.bias);
  return scale(add(branch_f, branch_b), 0.5);
}

// s_i = LN( word_table[id_i] + pos_table[i] )
inline Tensor embed_words(const TokenSequence& tokens, const ParamStore& p) {
  Tensor table = p.at("embed.word_table");
  Tensor pos = p.at("embed.pos_table");
  check(tokens.length() == pos.dim(0), "embed_words: token count does not match max_tokens");
  std::vector<int> positions(static_cast<size_t>(tokens.length()));
  for (int i = 0; i < tokens.length(); ++i) {
    check(tokens.ids[static_cast<size_t>(i)] >= 0 &&
              tokens.ids[static_cast<size_t>(i)] < table.dim(0),
          "embed_words: token id out of range");
    positions[static_cast<size_t>(i)] = i;
  }
  Tensor word_rows = gather_rows(table, tokens.ids);
  Tensor pos_rows = gather_rows(pos, positions);
  LnParams ln = detail::get_ln(p, "embed.word_ln");
  return layer_norm_rows(add(word_rows, pos_rows), ln.gain, ln.bias);
}

// ---------------------------------------------------------------------------
// attention and blocks
// ---------------------------------------------------------------------------

struct AttentionResult {
  Tensor output;                   // [n_q x d]
  std::vector<Tensor> head_alpha;  // H matrices [n_q x n_k], rows sum to 1 over valid keys
};

// Scaled dot-product multi-head attention. Queries/keys/values are linearly
// mapped, split into `heads` slices of width d/heads, attended with scale
// 1/sqrt(head_dim) over valid keys, concatenated and output-projected.
inline AttentionResult multi_head_attention(const Tensor& q_seq, const Tensor& k_seq,
                                            const Tensor& v_seq,
                                            const std::vector<unsigned char>& key_valid,
                                            const AttnParams& w, int heads) {
  check(q_seq.rank() == 2 && k_seq.rank() == 2 && v_seq.rank() == 2,
        "multi_head_attention: inputs must be rank 2");
  const int d = q_seq.dim(1);
  check(k_seq.dim(1) == d && v_seq.dim(1) == d, "multi_head_attention: width mismatch");
  check(k_seq.dim(0) == v_seq.dim(0), "multi_head_attention: key/value count mismatch");
  check(d % heads == 0, "multi_head_attention: d must be divisible by head count");
  check(static_cast<int>(key_valid.size()) == k_seq.dim(0),
        "multi_head_attention: mask length mismatch");
  const int hd = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor q = linear(q_seq, w.wq, w.bq);
  Tensor k = linear(k_seq, w.wk, w.bk);
  Tensor v = linear(v_seq, w.wv, w.bv);

  std::vector<Tensor> head_outputs;
  std::vector<Tensor> head_alpha;
  head_outputs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
    Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
    Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
    Tensor logits = scale(matmul(qh, transpose(kh)), att_scale);
    Tensor alpha = masked_softmax_rows(logits, &key_valid);
    head_outputs.push_back(matmul(alpha, vh));
    head_alpha.push_back(alpha);
  }
  Tensor concat = concat_cols(head_outputs);
  Tensor out = linear(concat, w.wo, w.bo);
  return AttentionResult{out, std::move(head_alpha)};
}

inline Tensor ffn_forward(const Tensor& x, const FfnParams& f) {
  return linear(relu(linear(x, f.w1, f.b1)), f.w2, f.b2);
}

// post-norm sublayer: layer_norm(x + sub(x))
inline Tensor residual_ln(const Tensor& x, const Tensor& sub_out, const LnParams& ln) {
  return layer_norm_rows(add(x, sub_out), ln.gain, ln.bias);
}

// Self-attention block for one modality: attention sublayer then FFN
// sublayer, each residual + layer norm.
inline std::pair<Tensor, std::vector<Tensor>> intra_modality_block(
    const Tensor& x, const std::vector<unsigned char>& valid, const ParamStore& p,
    const std::string& prefix, int heads) {
  AttentionResult att = multi_head_attention(x, x, x, valid, detail::get_attn(p, prefix + ".attn"), heads);
  Tensor x1 = residual_ln(x, att.output, detail::get_ln(p, prefix + ".attn_ln"));
  Tensor f = ffn_forward(x1, detail::get_ffn(p, prefix + ".ffn"));
  Tensor x2 = residual_ln(x1, f, detail::get_ln(p, prefix + ".ffn_ln"));
  return {x2, std::move(att.head_alpha)};
}

struct InterBlockResult {
  Tensor sentence;
  Tensor objects;
  std::vector<Tensor> alpha_s_from_o;  // cross-attention, words attending to objects
  std::vector<Tensor> alpha_o_from_s;
  std::vector<Tensor> alpha_s_self;
  std::vector<Tensor> alpha_o_self;
};

// Inter-modality block: both cross-attention steps read the same pre-block
// inputs, then each modality runs its own self-attention and FFN sublayers.
inline InterBlockResult inter_modality_block(const Tensor& s, const Tensor& o,
                                             const std::vector<unsigned char>& s_valid,
                                             const std::vector<unsigned char>& o_valid,
                                             const ParamStore& p, const std::string& prefix,
                                             int heads) {
  AttentionResult cross_s =
      multi_head_attention(s, o, o, o_valid, detail::get_attn(p, prefix + ".cross_s.attn"), heads);
  AttentionResult cross_o =
      multi_head_attention(o, s, s, s_valid, detail::get_attn(p, prefix + ".cross_o.attn"), heads);
  Tensor s1 = residual_ln(s, cross_s.output, detail::get_ln(p, prefix + ".cross_s_ln"));
  Tensor o1 = residual_ln(o, cross_o.output, detail::get_ln(p, prefix + ".cross_o_ln"));

  AttentionResult self_s =
      multi_head_attention(s1, s1, s1, s_valid, detail::get_attn(p, prefix + ".self_s.attn"), heads);
  Tensor s2 = residual_ln(s1, self_s.output, detail::get_ln(p, prefix + ".self_s_ln"));
  AttentionResult self_o =
      multi_head_attention(o1, o1, o1, o_valid, detail::get_attn(p, prefix + ".self_o.attn"), heads);
  Tensor o2 = residual_ln(o1, self_o.output, detail::get_ln(p, prefix + ".self_o_ln"));

  Tensor s3 = residual_ln(s2, ffn_forward(s2, detail::get_ffn(p, prefix + ".ffn_s")),
                          detail::get_ln(p, prefix + ".ffn_s_ln"));
  Tensor o3 = residual_ln(o2, ffn_forward(o2, detail::get_ffn(p, prefix + ".ffn_o")),
                          detail::get_ln(p, prefix + ".ffn_o_ln"));
  return InterBlockResult{s3,
                          o3,
                          std::move(cross_s.head_alpha),
                          std::move(cross_o.head_alpha),
                          std::move(self_s.head_alpha),
                          std::move(self_o.head_alpha)};
}

// ---------------------------------------------------------------------------
// full encoder
// ---------------------------------------------------------------------------

struct AttentionTrace {
  std::string kind;  // lang_intra | vis_intra | inter_s_from_o | inter_o_from_s |
                     // inter_s_self | inter_o_self
  int layer = 0;
  std::vector<Tensor> heads;  // detached value copies, one matrix per head
};

struct EncoderOutput {
  Tensor objects;   // O' [N_o x d]
  Tensor sentence;  // S' [N_s x d]
  std::vector<AttentionTrace> traces;

  const AttentionTrace& trace(const std::string& kind, int layer) const {
    for (const AttentionTrace& t : traces)
      if (t.kind == kind && t.layer == layer) return t;
    throw std::invalid_argument("EncoderOutput: no trace '" + kind + "' at layer " +
                                std::to_string(layer));
  }
};

namespace detail {

inline void push_trace(std::vector<AttentionTrace>& traces, const std::string& kind, int layer,
                       const std::vector<Tensor>& alphas) {
  AttentionTrace t;
  t.kind = kind;
  t.layer = layer;
  for (const Tensor& a : alphas) t.heads.push_back(Tensor::from_flat(a.shape(), a.values()));
  traces.push_back(std::move(t));
}

}  // namespace detail

// Stacked architecture: language and vision intra-modality layers, then the
// inter-modality layers. Returns updated embeddings plus all attention maps.
inline EncoderOutput encode(const std::vector<ObjectInput>& objects, const TokenSequence& tokens,
                            const ParamStore& p, const ModelConfig& cfg) {
  check(static_cast<int>(objects.size()) == cfg.n_objects,
        "encode: object count does not match config");
  check(tokens.length() == cfg.max_tokens, "encode: token count does not match config");
  std::vector<unsigned char> o_valid(static_cast<size_t>(cfg.n_objects), 1);
  const std::vector<unsigned char>& s_valid = tokens.valid;

  Tensor s = embed_words(tokens, p);
  Tensor o = embed_objects(objects, p);

  EncoderOutput out;
  for (int i = 0; i < cfg.n_lang_layers; ++i) {
    auto [s_next, alphas] =
        intra_modality_block(s, s_valid, p, "lang_intra." + std::to_string(i), cfg.heads);
    s = s_next;
    detail::push_trace(out.traces, "lang_intra", i, alphas);
  }
  for (int i = 0; i < cfg.n_vis_layers; ++i) {
    auto [o_next, alphas] =
        intra_modality_block(o, o_valid, p, "vis_intra." + std::to_string(i), cfg.heads);
    o = o_next;
    detail::push_trace(out.traces, "vis_intra", i, alphas);
  }
  for (int i = 0; i < cfg.n_inter_layers; ++i) {
    InterBlockResult r =
        inter_modality_block(s, o, s_valid, o_valid, p, "inter." + std::to_string(i), cfg.heads);
    s = r.sentence;
    o = r.objects;
    detail::push_trace(out.traces, "inter_s_from_o", i, r.alpha_s_from_o);
    detail::push_trace(out.traces, "inter_o_from_s", i, r.alpha_o_from_s);
    detail::push_trace(out.traces, "inter_s_self", i, r.alpha_s_self);
    detail::push_trace(out.traces, "inter_o_self", i, r.alpha_o_self);
  }
  out.sentence = s;
  out.objects = o;
  return out;
}

}  // namespace vlalign
