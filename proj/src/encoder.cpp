#include "sfl/encoder.hpp"

#include <cmath>

namespace sfl {

void EncoderConfig::validate() const {
  if (layers < 0 || heads < 1 || d_model < 1 || d_ff < 1 || max_len < 1 ||
      vocab_size < 1 || segment_types < 1) {
    throw Error("EncoderConfig: counts must be positive");
  }
  if (d_model % heads != 0) {
    throw Error("EncoderConfig: d_model " + std::to_string(d_model) +
                " not divisible by heads " + std::to_string(heads));
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw Error("EncoderConfig: dropout_p must lie in [0, 1)");
  }
}

namespace {

constexpr double kInitStd = 0.02;

EncoderLayerParams init_layer(int d_model, int d_ff, Rng& rng) {
  EncoderLayerParams p;
  p.w_q = Tensor::randn({d_model, d_model}, rng, kInitStd);
  p.w_k = Tensor::randn({d_model, d_model}, rng, kInitStd);
  p.w_v = Tensor::randn({d_model, d_model}, rng, kInitStd);
  p.w_o = Tensor::randn({d_model, d_model}, rng, kInitStd);
  p.ffn_w1 = Tensor::randn({d_model, d_ff}, rng, kInitStd);
  p.ffn_b1 = Tensor::zeros({d_ff});
  p.ffn_w2 = Tensor::randn({d_ff, d_model}, rng, kInitStd);
  p.ffn_b2 = Tensor::zeros({d_model});
  p.ln1_gain = Tensor::ones({d_model});
  p.ln1_bias = Tensor::zeros({d_model});
  p.ln2_gain = Tensor::ones({d_model});
  p.ln2_bias = Tensor::zeros({d_model});
  return p;
}

void collect_layer(const std::string& prefix, const EncoderLayerParams& p,
                   std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w_q", p.w_q});
  out.push_back({prefix + ".w_k", p.w_k});
  out.push_back({prefix + ".w_v", p.w_v});
  out.push_back({prefix + ".w_o", p.w_o});
  out.push_back({prefix + ".ffn_w1", p.ffn_w1});
  out.push_back({prefix + ".ffn_b1", p.ffn_b1});
  out.push_back({prefix + ".ffn_w2", p.ffn_w2});
  out.push_back({prefix + ".ffn_b2", p.ffn_b2});
  out.push_back({prefix + ".ln1_gain", p.ln1_gain});
  out.push_back({prefix + ".ln1_bias", p.ln1_bias});
  out.push_back({prefix + ".ln2_gain", p.ln2_gain});
  out.push_back({prefix + ".ln2_bias", p.ln2_bias});
}

} // namespace

EncoderParams EncoderParams::init(const EncoderConfig& config, Rng& rng) {
  config.validate();
  EncoderParams p;
  p.wordpiece_emb =
      Tensor::randn({config.vocab_size, config.d_model}, rng, kInitStd);
  p.pos_emb = Tensor::randn({config.max_len, config.d_model}, rng, kInitStd);
  p.seg_emb =
      Tensor::randn({config.segment_types, config.d_model}, rng, kInitStd);
  p.indicator_emb = Tensor::randn({2, config.d_model}, rng, kInitStd);
  for (int l = 0; l < config.layers; ++l) {
    p.layers.push_back(init_layer(config.d_model, config.d_ff, rng));
  }
  return p;
}

void EncoderParams::collect(const std::string& prefix,
                            std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".wordpiece_emb", wordpiece_emb});
  out.push_back({prefix + ".pos_emb", pos_emb});
  out.push_back({prefix + ".seg_emb", seg_emb});
  out.push_back({prefix + ".indicator_emb", indicator_emb});
  for (size_t l = 0; l < layers.size(); ++l) {
    collect_layer(prefix + ".layer" + std::to_string(l), layers[l], out);
  }
}

Tensor embed(const TokenIds& ids, const EncoderParams& params,
             const EncoderConfig& config, const RunMode& mode) {
  const int m = static_cast<int>(ids.pieces.size());
  if (m == 0) throw Error("embed: empty sequence");
  if (m > config.max_len) {
    throw Error("embed: sequence of " + std::to_string(m) +
                " wordpieces exceeds max_len " +
                std::to_string(config.max_len));
  }
  if (static_cast<int>(ids.segments.size()) != m) {
    throw Error("embed: segment ids length mismatch");
  }
  std::vector<int> positions(m);
  for (int i = 0; i < m; ++i) positions[i] = i;

  Tensor h = gather_rows(params.wordpiece_emb, ids.pieces);
  h = add(h, gather_rows(params.pos_emb, positions));
  h = add(h, gather_rows(params.seg_emb, ids.segments));
  if (ids.use_indicator) {
    if (static_cast<int>(ids.indicators.size()) != m) {
      throw Error("embed: indicator ids length mismatch");
    }
    h = add(h, gather_rows(params.indicator_emb, ids.indicators));
  }
  return maybe_dropout(h, mode);
}

Tensor encoder_attention(const Tensor& h, const std::vector<uint8_t>& pad_mask,
                         const EncoderLayerParams& params, int heads,
                         const ExtraKv* extra_kv, KvMode kv_mode,
                         const RunMode& mode,
                         std::vector<AttentionTrace::Head>* trace) {
  const int m = h.dim(0);
  const int d = h.dim(1);
  if (static_cast<int>(pad_mask.size()) != m) {
    throw Error("encoder_attention: pad mask length mismatch");
  }
  if (extra_kv != nullptr && kv_mode == KvMode::none) {
    throw Error("encoder_attention: extra keys/values without a fusion mode");
  }

  Tensor q = matmul(h, params.w_q);
  Tensor k = matmul(h, params.w_k);
  Tensor v = matmul(h, params.w_v);

  if (extra_kv != nullptr) {
    if (extra_kv->keys.dim(1) != d || extra_kv->values.dim(1) != d) {
      throw Error("encoder_attention: extra keys/values width " +
                  std::to_string(extra_kv->keys.dim(1)) +
                  " does not match d_model " + std::to_string(d));
    }
    if (kv_mode == KvMode::add) {
      if (extra_kv->keys.dim(0) != m) {
        throw Error("encoder_attention: add-mode extra keys must align "
                    "positionwise");
      }
      k = add(k, extra_kv->keys);
      v = add(v, extra_kv->values);
    }
  }

  const bool concat = extra_kv != nullptr && kv_mode == KvMode::concat;
  const int mk = concat ? m + extra_kv->keys.dim(0) : m;
  std::vector<uint8_t> key_mask(mk);
  for (int j = 0; j < m; ++j) key_mask[j] = pad_mask[j];
  if (concat) {
    // Syntax keys exist per wordpiece; padded positions stay masked.
    const int ms = extra_kv->keys.dim(0);
    if (ms != m) {
      throw Error("encoder_attention: concat-mode extra keys must cover the "
                  "same positions");
    }
    for (int j = 0; j < ms; ++j) key_mask[m + j] = pad_mask[j];
  }
  std::vector<uint8_t> score_mask(static_cast<size_t>(m) * mk);
  for (int i = 0; i < m; ++i) {
    std::copy(key_mask.begin(), key_mask.end(),
              score_mask.begin() + static_cast<size_t>(i) * mk);
  }

  const int dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> contexts;
  contexts.reserve(heads);
  for (int head = 0; head < heads; ++head) {
    Tensor qh = slice_cols(q, head * dh, dh);
    Tensor kh = slice_cols(k, head * dh, dh);
    Tensor vh = slice_cols(v, head * dh, dh);
    if (concat) {
      kh = concat_rows(kh, slice_cols(extra_kv->keys, head * dh, dh));
      vh = concat_rows(vh, slice_cols(extra_kv->values, head * dh, dh));
    }
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    Tensor alpha = masked_softmax(scores, score_mask);
    if (trace) {
      trace->push_back({m, mk, alpha.value()});
    }
    alpha = maybe_dropout(alpha, mode);
    contexts.push_back(matmul(alpha, vh));
  }
  Tensor context = heads == 1 ? contexts[0] : concat_cols(contexts);
  return matmul(context, params.w_o);
}

Tensor self_attention_layer(const Tensor& h,
                            const std::vector<uint8_t>& pad_mask,
                            const EncoderLayerParams& params, int heads,
                            const ExtraKv* extra_kv, KvMode kv_mode,
                            const RunMode& mode,
                            std::vector<AttentionTrace::Head>* trace) {
  Tensor attn = encoder_attention(h, pad_mask, params, heads, extra_kv,
                                  kv_mode, mode, trace);
  return layer_norm(add(h, attn), params.ln1_gain, params.ln1_bias);
}

Tensor ffn_layer(const Tensor& h, const EncoderLayerParams& params,
                 const RunMode& mode) {
  Tensor inner = gelu(add(matmul(h, params.ffn_w1), params.ffn_b1));
  inner = maybe_dropout(inner, mode);
  Tensor out = add(matmul(inner, params.ffn_w2), params.ffn_b2);
  return layer_norm(add(h, out), params.ln2_gain, params.ln2_bias);
}

EncodeResult encode(const TokenIds& ids, const EncoderParams& params,
                    const EncoderConfig& config,
                    const std::vector<const ExtraKv*>& extra_per_layer,
                    KvMode kv_mode, const std::vector<uint8_t>& pad_mask,
                    const RunMode& mode, bool want_trace) {
  config.validate();
  if (!extra_per_layer.empty() &&
      static_cast<int>(extra_per_layer.size()) != config.layers) {
    throw Error("encode: extra keys/values must be given for every layer");
  }
  EncodeResult result;
  result.hidden = embed(ids, params, config, mode);
  for (int l = 0; l < config.layers; ++l) {
    std::vector<AttentionTrace::Head>* layer_trace = nullptr;
    if (want_trace) {
      result.trace.layers.emplace_back();
      layer_trace = &result.trace.layers.back();
    }
    const ExtraKv* extra =
        extra_per_layer.empty() ? nullptr : extra_per_layer[l];
    result.hidden =
        self_attention_layer(result.hidden, pad_mask, params.layers[l],
                             config.heads, extra, kv_mode, mode, layer_trace);
    result.hidden = ffn_layer(result.hidden, params.layers[l], mode);
  }
  return result;
}

EncodeResult encode(const TokenIds& ids, const EncoderParams& params,
                    const EncoderConfig& config, const RunMode& mode,
                    bool want_trace) {
  std::vector<uint8_t> pad_mask(ids.pieces.size(), 1);
  return encode(ids, params, config, {}, KvMode::none, pad_mask, mode,
                want_trace);
}

} // namespace sfl
