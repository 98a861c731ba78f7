#include "sfl/fusion.hpp"

#include <algorithm>

namespace sfl {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::late: return "late";
    case Variant::joint: return "joint";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "late") return Variant::late;
  if (name == "joint") return Variant::joint;
  throw Error("unknown variant '" + name + "' (baseline|late|joint)");
}

const char* joint_mode_name(JointMode m) {
  return m == JointMode::concat ? "concat" : "add";
}

JointMode joint_mode_from_name(const std::string& name) {
  if (name == "concat") return JointMode::concat;
  if (name == "add") return JointMode::add;
  throw Error("unknown joint-mode '" + name + "' (concat|add)");
}

const char* task_name(TaskKind t) {
  switch (t) {
    case TaskKind::tagging: return "tag";
    case TaskKind::srl: return "srl";
    case TaskKind::relation: return "re";
  }
  return "?";
}

TaskKind task_from_name(const std::string& name) {
  if (name == "tag") return TaskKind::tagging;
  if (name == "srl") return TaskKind::srl;
  if (name == "re") return TaskKind::relation;
  throw Error("unknown task '" + name + "' (tag|srl|re)");
}

GateParams GateParams::init(int d_model, Rng& rng) {
  GateParams p;
  p.w_g = Tensor::randn({d_model, d_model}, rng, 0.02);
  // Balanced gate at init (g ~ 0.5). An encoder-dominant start (+2.0)
  // starves the GNN path of gradient and traps desk-scale training in the
  // tree-blind optimum on 2 of 3 seeds.
  p.b_g = Tensor::zeros({d_model});
  return p;
}

void GateParams::collect(const std::string& prefix,
                         std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".w_g", w_g});
  out.push_back({prefix + ".b_g", b_g});
}

void FusionConfig::validate() const {
  encoder.validate();
  gnn.validate();
  if (variant != Variant::baseline && gnn.d_model != encoder.d_model) {
    throw Error("FusionConfig: encoder and GNN must share d_model");
  }
}

namespace {

FusionModel init_common(const FusionConfig& config, Rng& rng) {
  config.validate();
  FusionModel model;
  model.config = config;
  model.encoder = EncoderParams::init(config.encoder, rng);
  if (config.variant != Variant::baseline) {
    model.gnn = GnnParams::init(config.gnn, rng);
  }
  if (config.variant == Variant::late) {
    model.gate = GateParams::init(config.encoder.d_model, rng);
  }
  if (config.variant == Variant::joint) {
    for (int l = 0; l < config.encoder.layers; ++l) {
      JointLayerKv kv;
      kv.p_k = Tensor::randn({config.encoder.d_model, config.encoder.d_model},
                             rng, 0.02);
      kv.p_v = Tensor::randn({config.encoder.d_model, config.encoder.d_model},
                             rng, 0.02);
      model.joint.push_back(kv);
    }
  }
  return model;
}

} // namespace

FusionModel FusionModel::init_tagging(const FusionConfig& config,
                                      const TagSet& tags, Rng& rng) {
  if (config.task == TaskKind::relation) {
    throw Error("init_tagging: config declares a relation task");
  }
  FusionModel model = init_common(config, rng);
  model.tagset = tags;
  model.crf = CrfParams::init(config.encoder.d_model, tags.size(), rng);
  return model;
}

FusionModel FusionModel::init_relation(
    const FusionConfig& config, const std::vector<std::string>& relations,
    Rng& rng) {
  if (config.task != TaskKind::relation) {
    throw Error("init_relation: config does not declare a relation task");
  }
  FusionModel model = init_common(config, rng);
  model.re_head =
      ReHeadParams::init(config.encoder.d_model, relations, rng);
  return model;
}

std::vector<NamedParam> FusionModel::parameters() const {
  std::vector<NamedParam> out;
  encoder.collect("encoder", out);
  if (config.variant != Variant::baseline) gnn.collect("gnn", out);
  if (config.variant == Variant::late) gate.collect("gate", out);
  if (config.variant == Variant::joint) {
    for (size_t l = 0; l < joint.size(); ++l) {
      out.push_back({"joint.layer" + std::to_string(l) + ".p_k", joint[l].p_k});
      out.push_back({"joint.layer" + std::to_string(l) + ".p_v", joint[l].p_v});
    }
  }
  if (config.task == TaskKind::relation) {
    re_head.collect("re", out);
  } else {
    crf.collect("crf", out);
  }
  return out;
}

SentenceInput prepare_input(const Sentence& sentence, const Vocab& vocab,
                            TaskKind task) {
  SentenceInput in;
  in.n = sentence.num_tokens();
  in.m = sentence.num_pieces();
  if (in.n == 0 || in.m == 0) throw Error("prepare_input: empty sentence");
  in.payload = sentence.payload;

  in.ids.pieces.reserve(in.m);
  for (const auto& piece : sentence.wordpieces) {
    const int id = vocab.lookup(piece);
    in.ids.pieces.push_back(id >= 0 ? id : Vocab::kUnk);
  }
  in.ids.segments.assign(in.m, 0);
  in.pad_mask.assign(in.m, 1);

  if (task == TaskKind::srl) {
    const auto* srl = std::get_if<SrlPayload>(&sentence.payload);
    if (!srl) throw Error("prepare_input: srl task needs a predicate payload");
    in.ids.use_indicator = true;
    in.ids.indicators.assign(in.m, 0);
    const auto [begin, end] = sentence.alignment[srl->predicate];
    for (int p = begin; p < end; ++p) in.ids.indicators[p] = 1;
  }

  if (task == TaskKind::relation) {
    const auto* re = std::get_if<RePayload>(&sentence.payload);
    if (!re) throw Error("prepare_input: relation task needs an re payload");
    // The pruned subtree feeds the GNN; the encoder sees the full sentence.
    in.prune_mask = lca_prune(sentence.tree, re->subj, re->obj);
    in.graph =
        build_wordpiece_graph(sentence.tree, sentence.alignment, in.prune_mask);
  } else {
    in.prune_mask.assign(in.n, 1);
    in.graph = build_wordpiece_graph(sentence.tree, sentence.alignment);
  }

  std::vector<double> agg(static_cast<size_t>(in.n) * in.m, 0.0);
  for (int t = 0; t < in.n; ++t) {
    for (int p = sentence.alignment[t].first; p < sentence.alignment[t].second;
         ++p) {
      agg[static_cast<size_t>(t) * in.m + p] = 1.0;
    }
  }
  in.aggregation = Tensor({in.n, in.m}, std::move(agg));
  return in;
}

namespace {

Tensor aggregate_tokens(const SentenceInput& in, const Tensor& piece_states) {
  return matmul(in.aggregation, piece_states);
}

} // namespace

Tensor baseline_forward(const FusionModel& model, const SentenceInput& in,
                        const RunMode& mode, FusionTrace* trace) {
  if (model.config.variant != Variant::baseline) {
    throw Error("baseline_forward: model variant is not baseline");
  }
  auto result = encode(in.ids, model.encoder, model.config.encoder, {},
                       KvMode::none, in.pad_mask, mode, trace != nullptr);
  if (trace) {
    trace->encoder = std::move(result.trace);
    trace->encoder_states = result.hidden;
  }
  return aggregate_tokens(in, result.hidden);
}

Tensor late_fusion_forward(const FusionModel& model, const SentenceInput& in,
                           const RunMode& mode, FusionTrace* trace) {
  if (model.config.variant != Variant::late) {
    throw Error("late_fusion_forward: model variant is not late");
  }
  auto result = encode(in.ids, model.encoder, model.config.encoder, {},
                       KvMode::none, in.pad_mask, mode, trace != nullptr);
  Tensor v = result.hidden;
  Tensor z = gnn_encode(v, in.graph, model.gnn, model.config.gnn, mode,
                        trace ? &trace->gnn : nullptr);
  Tensor g = sigmoid(add(matmul(v, model.gate.w_g), model.gate.b_g));
  Tensor ones = Tensor::ones(g.shape());
  Tensor h = add(mul(g, v), mul(sub(ones, g), z));
  if (trace) {
    trace->encoder = std::move(result.trace);
    trace->encoder_states = v;
    trace->gnn_states = z;
    trace->gated = h;
  }
  return aggregate_tokens(in, h);
}

Tensor joint_fusion_forward(const FusionModel& model, const SentenceInput& in,
                            const RunMode& mode, FusionTrace* trace) {
  if (model.config.variant != Variant::joint) {
    throw Error("joint_fusion_forward: model variant is not joint");
  }
  // GNN states come from the input embeddings and are shared by every
  // encoder layer.
  Tensor u = embed(in.ids, model.encoder, model.config.encoder, mode);
  Tensor s = gnn_encode(u, in.graph, model.gnn, model.config.gnn, mode,
                        trace ? &trace->gnn : nullptr);
  std::vector<ExtraKv> extras;
  extras.reserve(model.joint.size());
  for (const auto& kv : model.joint) {
    extras.push_back({matmul(s, kv.p_k), matmul(s, kv.p_v)});
  }
  std::vector<const ExtraKv*> per_layer;
  per_layer.reserve(extras.size());
  for (const auto& e : extras) per_layer.push_back(&e);
  const KvMode kv_mode = model.config.joint_mode == JointMode::concat
                             ? KvMode::concat
                             : KvMode::add;
  auto result = encode(in.ids, model.encoder, model.config.encoder, per_layer,
                       kv_mode, in.pad_mask, mode, trace != nullptr);
  if (trace) {
    trace->encoder = std::move(result.trace);
    trace->encoder_states = result.hidden;
    trace->gnn_states = s;
  }
  return aggregate_tokens(in, result.hidden);
}

Tensor fusion_forward(const FusionModel& model, const SentenceInput& in,
                      const RunMode& mode, FusionTrace* trace) {
  switch (model.config.variant) {
    case Variant::baseline: return baseline_forward(model, in, mode, trace);
    case Variant::late: return late_fusion_forward(model, in, mode, trace);
    case Variant::joint: return joint_fusion_forward(model, in, mode, trace);
  }
  throw Error("fusion_forward: unknown variant");
}

Tensor model_loss(const FusionModel& model, const SentenceInput& in,
                  const RunMode& mode) {
  Tensor states = fusion_forward(model, in, mode);
  if (model.config.task == TaskKind::relation) {
    const auto* re = std::get_if<RePayload>(&in.payload);
    if (!re) throw Error("model_loss: payload does not match relation task");
    Tensor scores =
        re_classify(states, re->subj, re->obj, in.prune_mask, model.re_head);
    int gold = -1;
    for (size_t r = 0; r < model.re_head.relations.size(); ++r) {
      if (model.re_head.relations[r] == re->relation) {
        gold = static_cast<int>(r);
      }
    }
    if (gold < 0) {
      throw Error("model_loss: unknown relation label '" + re->relation + "'");
    }
    Tensor log_z =
        logsumexp_rows(reshape(scores, {1, model.re_head.num_relations()}));
    return sub(log_z, pick(scores, {gold}));
  }
  const std::vector<std::string>* tags = nullptr;
  if (const auto* p = std::get_if<TagSeqPayload>(&in.payload)) {
    tags = &p->tags;
  } else if (const auto* p = std::get_if<SrlPayload>(&in.payload)) {
    tags = &p->tags;
  } else {
    throw Error("model_loss: payload does not match tagging task");
  }
  std::vector<int> tag_ids;
  tag_ids.reserve(tags->size());
  for (const auto& t : *tags) tag_ids.push_back(model.tagset.id(t));
  return scale(crf_log_likelihood(states, tag_ids, model.crf), -1.0);
}

std::vector<int> predict_tags(const FusionModel& model,
                              const SentenceInput& in) {
  TapePause pause;
  Tensor states = fusion_forward(model, in, RunMode::eval());
  return viterbi_decode(states, model.crf).tags;
}

int predict_relation(const FusionModel& model, const SentenceInput& in) {
  TapePause pause;
  const auto* re = std::get_if<RePayload>(&in.payload);
  if (!re) throw Error("predict_relation: payload is not a relation");
  Tensor states = fusion_forward(model, in, RunMode::eval());
  Tensor scores =
      re_classify(states, re->subj, re->obj, in.prune_mask, model.re_head);
  int best = 0;
  for (int r = 1; r < scores.dim(0); ++r) {
    if (scores.at(r) > scores.at(best)) best = r;
  }
  return best;
}

} // namespace sfl
