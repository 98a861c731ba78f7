#include "sfl/syntax_gnn.hpp"

#include <cmath>

namespace sfl {

void GnnConfig::validate() const {
  if (layers < 0 || heads < 1 || d_model < 1 || d_ff < 1) {
    throw Error("GnnConfig: counts must be positive");
  }
  if (d_model % heads != 0) {
    throw Error("GnnConfig: d_model " + std::to_string(d_model) +
                " not divisible by heads " + std::to_string(heads));
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw Error("GnnConfig: dropout_p must lie in [0, 1)");
  }
}

namespace {

constexpr double kInitStd = 0.02;

GnnLayerParams init_layer(int d_model, int d_ff, Rng& rng) {
  GnnLayerParams p;
  p.w_q = Tensor::randn({d_model, d_model}, rng, kInitStd);
  p.w_k = Tensor::randn({d_model, d_model}, rng, kInitStd);
  p.w_v = Tensor::randn({d_model, d_model}, rng, kInitStd);
  p.w_f = Tensor::randn({d_model, d_model}, rng, kInitStd);
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

} // namespace

GnnParams GnnParams::init(const GnnConfig& config, Rng& rng) {
  config.validate();
  GnnParams p;
  for (int l = 0; l < config.layers; ++l) {
    p.layers.push_back(init_layer(config.d_model, config.d_ff, rng));
  }
  return p;
}

void GnnParams::collect(const std::string& prefix,
                        std::vector<NamedParam>& out) const {
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    const GnnLayerParams& p = layers[l];
    out.push_back({base + ".w_q", p.w_q});
    out.push_back({base + ".w_k", p.w_k});
    out.push_back({base + ".w_v", p.w_v});
    out.push_back({base + ".w_f", p.w_f});
    out.push_back({base + ".ffn_w1", p.ffn_w1});
    out.push_back({base + ".ffn_b1", p.ffn_b1});
    out.push_back({base + ".ffn_w2", p.ffn_w2});
    out.push_back({base + ".ffn_b2", p.ffn_b2});
    out.push_back({base + ".ln1_gain", p.ln1_gain});
    out.push_back({base + ".ln1_bias", p.ln1_bias});
    out.push_back({base + ".ln2_gain", p.ln2_gain});
    out.push_back({base + ".ln2_bias", p.ln2_bias});
  }
}

Tensor graph_attention(const Tensor& states, const WordpieceGraph& graph,
                       const GnnLayerParams& params, int heads,
                       const RunMode& mode,
                       std::vector<GraphAttentionTrace::HeadEdges>* trace) {
  const int m = states.dim(0);
  const int d = states.dim(1);
  if (m != graph.m) {
    throw Error("graph_attention: " + std::to_string(m) + " states for a " +
                std::to_string(graph.m) + "-node graph");
  }
  Tensor q = matmul(states, params.w_q);
  Tensor k = matmul(states, params.w_k);
  Tensor v = matmul(states, params.w_v);

  const int dh = d / heads;
  // Same score scaling as the sequence encoder so a complete graph
  // reproduces unmasked self-attention exactly.
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> aggregated;
  aggregated.reserve(heads);
  for (int head = 0; head < heads; ++head) {
    Tensor qh = slice_cols(q, head * dh, dh);
    Tensor kh = slice_cols(k, head * dh, dh);
    Tensor vh = slice_cols(v, head * dh, dh);
    Tensor scores = graph_scores(qh, kh, graph.neighbors, inv_scale);
    Tensor alpha = edge_softmax(scores, graph.neighbors);
    if (trace) {
      GraphAttentionTrace::HeadEdges edges;
      edges.reserve(static_cast<size_t>(scores.size()));
      int64_t idx = 0;
      for (int i = 0; i < m; ++i) {
        for (int j : graph.neighbors[i]) {
          edges.push_back({i, j, scores.at(static_cast<int>(idx)),
                           alpha.at(static_cast<int>(idx))});
          ++idx;
        }
      }
      trace->push_back(std::move(edges));
    }
    alpha = maybe_dropout(alpha, mode);
    aggregated.push_back(graph_aggregate(alpha, vh, graph.neighbors));
  }
  Tensor z = heads == 1 ? aggregated[0] : concat_cols(aggregated);
  return matmul(z, params.w_f);
}

Tensor gnn_encode(const Tensor& input_states, const WordpieceGraph& graph,
                  const GnnParams& params, const GnnConfig& config,
                  const RunMode& mode, GraphAttentionTrace* trace) {
  config.validate();
  if (static_cast<int>(params.layers.size()) != config.layers) {
    throw Error("gnn_encode: layer count mismatch");
  }
  Tensor h = input_states;
  for (int l = 0; l < config.layers; ++l) {
    const GnnLayerParams& p = params.layers[l];
    std::vector<GraphAttentionTrace::HeadEdges>* layer_trace = nullptr;
    if (trace) {
      trace->layers.emplace_back();
      layer_trace = &trace->layers.back();
    }
    Tensor z = graph_attention(h, graph, p, config.heads, mode, layer_trace);
    h = layer_norm(add(h, z), p.ln1_gain, p.ln1_bias);
    Tensor inner = gelu(add(matmul(h, p.ffn_w1), p.ffn_b1));
    inner = maybe_dropout(inner, mode);
    Tensor out = add(matmul(inner, p.ffn_w2), p.ffn_b2);
    h = layer_norm(add(h, out), p.ln2_gain, p.ln2_bias);
  }
  return h;
}

} // namespace sfl
