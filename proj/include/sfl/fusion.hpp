#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sfl/encoder.hpp"
#include "sfl/heads.hpp"
#include "sfl/syntax_gnn.hpp"
#include "sfl/treebank.hpp"

namespace sfl {

enum class Variant { baseline, late, joint };
enum class JointMode { concat, add };
enum class TaskKind { tagging, srl, relation };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);
const char* joint_mode_name(JointMode m);
JointMode joint_mode_from_name(const std::string& name);
const char* task_name(TaskKind t);
TaskKind task_from_name(const std::string& name);

// Highway gate of the late-fusion path: g = sigmoid(v W_g + b_g),
// h = g * v + (1 - g) * z.
struct GateParams {
  Tensor w_g; // d_model x d_model
  Tensor b_g; // d_model

  static GateParams init(int d_model, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Per-encoder-layer projections of the shared syntax-GNN states.
struct JointLayerKv {
  Tensor p_k, p_v; // d_model x d_model
};

struct FusionConfig {
  Variant variant = Variant::late;
  JointMode joint_mode = JointMode::concat;
  TaskKind task = TaskKind::tagging;
  EncoderConfig encoder;
  GnnConfig gnn;

  void validate() const;
};

struct FusionModel {
  FusionConfig config;
  EncoderParams encoder;
  GnnParams gnn;                  // late and joint variants
  GateParams gate;                // late only
  std::vector<JointLayerKv> joint; // joint only, one per encoder layer
  TagSet tagset;                  // tagging / srl
  CrfParams crf;                  // tagging / srl
  ReHeadParams re_head;           // relation

  static FusionModel init_tagging(const FusionConfig& config,
                                  const TagSet& tags, Rng& rng);
  static FusionModel init_relation(const FusionConfig& config,
                                   const std::vector<std::string>& relations,
                                   Rng& rng);

  std::vector<NamedParam> parameters() const;
};

// Everything a forward pass needs for one sentence, precomputed once.
struct SentenceInput {
  TokenIds ids;
  std::vector<uint8_t> pad_mask;
  WordpieceGraph graph; // pruned to the LCA subtree for relation tasks
  std::vector<uint8_t> prune_mask; // token-level LCA mask; all ones otherwise
  Tensor aggregation;   // n x m 0/1 token-sum matrix
  Payload payload;
  int n = 0;
  int m = 0;
};

SentenceInput prepare_input(const Sentence& sentence, const Vocab& vocab,
                            TaskKind task);

struct FusionTrace {
  AttentionTrace encoder;
  GraphAttentionTrace gnn;
  Tensor encoder_states; // v, wordpiece level
  Tensor gnn_states;     // z (late) or s (joint)
  Tensor gated;          // h, late only
};

// Token-level states [n x d_model] for each model variant.
Tensor late_fusion_forward(const FusionModel& model, const SentenceInput& in,
                           const RunMode& mode, FusionTrace* trace = nullptr);
Tensor joint_fusion_forward(const FusionModel& model, const SentenceInput& in,
                            const RunMode& mode, FusionTrace* trace = nullptr);
Tensor baseline_forward(const FusionModel& model, const SentenceInput& in,
                        const RunMode& mode, FusionTrace* trace = nullptr);
Tensor fusion_forward(const FusionModel& model, const SentenceInput& in,
                      const RunMode& mode, FusionTrace* trace = nullptr);

// Task loss (negative log-likelihood / cross-entropy), a scalar tensor.
Tensor model_loss(const FusionModel& model, const SentenceInput& in,
                  const RunMode& mode);

std::vector<int> predict_tags(const FusionModel& model,
                              const SentenceInput& in);
int predict_relation(const FusionModel& model, const SentenceInput& in);

} // namespace sfl
