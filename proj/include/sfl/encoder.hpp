#pragma once

#include <optional>
#include <vector>

#include "sfl/nn.hpp"
#include "sfl/tensor.hpp"

namespace sfl {

struct EncoderConfig {
  int layers = 4;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int max_len = 64;
  int vocab_size = 0;
  int segment_types = 2;
  double dropout_p = 0.1;

  int head_dim() const { return d_model / heads; }
  void validate() const;
};

struct EncoderLayerParams {
  Tensor w_q, w_k, w_v, w_o;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct EncoderParams {
  Tensor wordpiece_emb;  // vocab_size x d_model
  Tensor pos_emb;        // max_len x d_model, learned
  Tensor seg_emb;        // segment_types x d_model
  Tensor indicator_emb;  // 2 x d_model, predicate marker
  std::vector<EncoderLayerParams> layers;

  static EncoderParams init(const EncoderConfig& config, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Per-layer, per-head attention rows over key positions, captured before
// dropout so each row over unmasked keys sums to 1.
struct AttentionTrace {
  struct Head {
    int mq = 0;
    int mk = 0;
    std::vector<double> alpha; // row-major mq x mk
  };
  std::vector<std::vector<Head>> layers;
};

struct TokenIds {
  std::vector<int> pieces;
  std::vector<int> segments;
  std::vector<int> indicators;
  bool use_indicator = false;
};

// Syntax-based key/value vectors injected into a self-attention sublayer.
struct ExtraKv {
  Tensor keys;   // m x d_model, already projected
  Tensor values; // m x d_model
};

enum class KvMode { none, add, concat };

Tensor embed(const TokenIds& ids, const EncoderParams& params,
             const EncoderConfig& config, const RunMode& mode);

// Multi-head dot-product attention, output projection applied, no residual.
// extra_kv, when present, is combined per kv_mode: `add` sums syntax keys
// and values positionwise, `concat` enlarges the key set (one softmax over
// 2m keys).
Tensor encoder_attention(const Tensor& h, const std::vector<uint8_t>& pad_mask,
                         const EncoderLayerParams& params, int heads,
                         const ExtraKv* extra_kv, KvMode kv_mode,
                         const RunMode& mode,
                         std::vector<AttentionTrace::Head>* trace);

// Attention sublayer with residual add and post-norm.
Tensor self_attention_layer(const Tensor& h,
                            const std::vector<uint8_t>& pad_mask,
                            const EncoderLayerParams& params, int heads,
                            const ExtraKv* extra_kv, KvMode kv_mode,
                            const RunMode& mode,
                            std::vector<AttentionTrace::Head>* trace);

// LN(h + W2 gelu(h W1 + b1) + b2), dropout on the inner activations.
Tensor ffn_layer(const Tensor& h, const EncoderLayerParams& params,
                 const RunMode& mode);

struct EncodeResult {
  Tensor hidden;
  AttentionTrace trace;
};

EncodeResult encode(const TokenIds& ids, const EncoderParams& params,
                    const EncoderConfig& config,
                    const std::vector<const ExtraKv*>& extra_per_layer,
                    KvMode kv_mode, const std::vector<uint8_t>& pad_mask,
                    const RunMode& mode, bool want_trace = false);

// Convenience wrapper without fusion hooks or padding.
EncodeResult encode(const TokenIds& ids, const EncoderParams& params,
                    const EncoderConfig& config, const RunMode& mode,
                    bool want_trace = false);

} // namespace sfl
