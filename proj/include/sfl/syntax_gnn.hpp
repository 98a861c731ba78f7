#pragma once

#include <vector>

#include "sfl/nn.hpp"
#include "sfl/tensor.hpp"
#include "sfl/treebank.hpp"

namespace sfl {

struct GnnConfig {
  int layers = 4;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  double dropout_p = 0.1;

  int head_dim() const { return d_model / heads; }
  void validate() const;
};

struct GnnLayerParams {
  Tensor w_q, w_k, w_v, w_f;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct GnnParams {
  std::vector<GnnLayerParams> layers;

  static GnnParams init(const GnnConfig& config, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Interaction scores and attention weights, defined only on graph edges.
struct GraphAttentionTrace {
  struct Edge {
    int from = 0;
    int to = 0;
    double score = 0.0;
    double alpha = 0.0;
  };
  using HeadEdges = std::vector<Edge>;
  std::vector<std::vector<HeadEdges>> layers; // layer -> head -> edges
};

// One graph-attention sublayer, pre-residual: per head, scores are dot
// products of projected states restricted to graph adjacency, softmax runs
// over each node's neighborhood, aggregated values are concatenated across
// heads and projected by w_f.
Tensor graph_attention(const Tensor& states, const WordpieceGraph& graph,
                       const GnnLayerParams& params, int heads,
                       const RunMode& mode,
                       std::vector<GraphAttentionTrace::HeadEdges>* trace);

Tensor gnn_encode(const Tensor& input_states, const WordpieceGraph& graph,
                  const GnnParams& params, const GnnConfig& config,
                  const RunMode& mode, GraphAttentionTrace* trace = nullptr);

} // namespace sfl
