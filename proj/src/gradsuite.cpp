#include "sfl/gradsuite.hpp"

#include <functional>

#include "sfl/fusion.hpp"
#include "sfl/harness.hpp"

namespace sfl {

namespace {

constexpr double kPrimitiveTol = 1e-6;
constexpr double kCompositeTol = 1e-4;

struct Check {
  std::string layer;
  double tolerance;
  // Returns the max relative error for one seed.
  std::function<double(uint64_t seed, bool sabotage)> run;
};

DepTree chain_tree(int n) {
  DepTree tree;
  tree.n = n;
  tree.heads.assign(n, 0);
  tree.deprels.assign(n, "dep");
  tree.deprels[0] = "root";
  for (int i = 1; i < n; ++i) tree.heads[i] = i;
  return tree;
}

WordpieceGraph tree_graph(const DepTree& tree) {
  std::vector<std::pair<int, int>> alignment;
  for (int i = 0; i < tree.n; ++i) alignment.emplace_back(i, i + 1);
  return build_wordpiece_graph(tree, alignment);
}

FusionConfig micro_config(Variant v) {
  FusionConfig c;
  c.variant = v;
  c.task = TaskKind::tagging;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.d_model = 8;
  c.encoder.d_ff = 32;
  c.encoder.max_len = 16;
  c.encoder.vocab_size = 12;
  c.encoder.dropout_p = 0.0;
  c.gnn.layers = 1;
  c.gnn.heads = 2;
  c.gnn.d_model = 8;
  c.gnn.d_ff = 32;
  c.gnn.dropout_p = 0.0;
  return c;
}

Sentence micro_sentence(Rng& rng) {
  Sentence s;
  const int n = 3 + rng.uniform_int(3);
  for (int i = 0; i < n; ++i) s.tokens.push_back("t" + std::to_string(i));
  s.tree = chain_tree(n);
  TagSeqPayload payload;
  for (int i = 0; i < n; ++i) {
    payload.tags.push_back(i % 2 == 0 ? "B-X" : "O");
  }
  s.payload = payload;
  s.wordpieces = s.tokens;
  for (int i = 0; i < n; ++i) s.alignment.emplace_back(i, i + 1);
  return s;
}

Vocab micro_vocab() {
  std::vector<std::string> pieces;
  for (int i = 0; i < 9; ++i) pieces.push_back("t" + std::to_string(i));
  return Vocab::from_pieces(pieces);
}

double model_check(Variant variant, uint64_t seed) {
  Rng rng(seed);
  FusionConfig c = micro_config(variant);
  TagSet tags = TagSet::from_tags({"O", "B-X"});
  FusionModel model = FusionModel::init_tagging(c, tags, rng);
  Sentence s = micro_sentence(rng);
  SentenceInput in = prepare_input(s, micro_vocab(), TaskKind::tagging);
  std::vector<Tensor> inputs;
  for (auto& np : model.parameters()) inputs.push_back(np.tensor);
  auto f = [&](const std::vector<Tensor>&) {
    return model_loss(model, in, RunMode::eval());
  };
  return grad_check(f, inputs, 1e-5, kCompositeTol).max_rel_err;
}

std::vector<Check> build_checks() {
  std::vector<Check> checks;

  checks.push_back({"matmul", kPrimitiveTol, [](uint64_t seed, bool) {
    Rng rng(seed);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 2}, rng);
    Tensor c = Tensor::randn({2, 3}, rng);
    auto f = [&](const std::vector<Tensor>& in) {
      return sum_all(matmul(matmul(in[0], in[1]), in[2]));
    };
    return grad_check(f, {a, b, c}, 1e-5, kPrimitiveTol).max_rel_err;
  }});

  checks.push_back({"masked_softmax", kPrimitiveTol, [](uint64_t seed, bool) {
    Rng rng(seed);
    Tensor scores = Tensor::randn({3, 5}, rng);
    Tensor w = Tensor::randn({3, 5}, rng);
    std::vector<uint8_t> mask(15, 1);
    mask[2] = mask[7] = mask[11] = 0;
    auto f = [&](const std::vector<Tensor>& in) {
      return sum_all(mul(masked_softmax(in[0], mask), w));
    };
    return grad_check(f, {scores}, 1e-5, kPrimitiveTol).max_rel_err;
  }});

  checks.push_back({"layer_norm", kPrimitiveTol, [](uint64_t seed, bool) {
    Rng rng(seed);
    Tensor x = Tensor::randn({4, 6}, rng);
    Tensor gain = Tensor::randn({6}, rng);
    Tensor bias = Tensor::randn({6}, rng);
    Tensor w = Tensor::randn({4, 6}, rng);
    auto f = [&](const std::vector<Tensor>& in) {
      return sum_all(mul(layer_norm(in[0], in[1], in[2]), w));
    };
    return grad_check(f, {x, gain, bias}, 1e-5, kPrimitiveTol).max_rel_err;
  }});

  checks.push_back({"gelu", kPrimitiveTol, [](uint64_t seed, bool sabotage) {
    Rng rng(seed);
    Tensor x = Tensor::randn({8}, rng);
    auto f = [&](const std::vector<Tensor>& in) {
      return sum_all(sabotage ? gelu_defective(in[0]) : gelu(in[0]));
    };
    return grad_check(f, {x}, 1e-5, kPrimitiveTol).max_rel_err;
  }});

  checks.push_back({"encoder_layer", kCompositeTol, [](uint64_t seed, bool) {
    Rng rng(seed);
    EncoderConfig c;
    c.layers = 1;
    c.heads = 2;
    c.d_model = 8;
    c.d_ff = 32;
    c.max_len = 8;
    c.vocab_size = 4;
    c.dropout_p = 0.0;
    EncoderParams p = EncoderParams::init(c, rng);
    Tensor h = Tensor::randn({3, 8}, rng);
    std::vector<uint8_t> pad(3, 1);
    std::vector<NamedParam> named;
    p.collect("enc", named);
    std::vector<Tensor> inputs = {h};
    for (auto& np : named) inputs.push_back(np.tensor);
    auto f = [&](const std::vector<Tensor>& in) {
      Tensor a = self_attention_layer(in[0], pad, p.layers[0], c.heads,
                                      nullptr, KvMode::none, RunMode::eval(),
                                      nullptr);
      Tensor out = ffn_layer(a, p.layers[0], RunMode::eval());
      return sum_all(mul(out, out));
    };
    return grad_check(f, inputs, 1e-5, kCompositeTol).max_rel_err;
  }});

  checks.push_back({"gnn_layer", kCompositeTol, [](uint64_t seed, bool) {
    Rng rng(seed);
    GnnConfig c;
    c.layers = 1;
    c.heads = 2;
    c.d_model = 8;
    c.d_ff = 32;
    c.dropout_p = 0.0;
    GnnParams p = GnnParams::init(c, rng);
    WordpieceGraph g = tree_graph(chain_tree(5));
    Tensor v = Tensor::randn({5, 8}, rng);
    std::vector<NamedParam> named;
    p.collect("gnn", named);
    std::vector<Tensor> inputs = {v};
    for (auto& np : named) inputs.push_back(np.tensor);
    auto f = [&](const std::vector<Tensor>& in) {
      Tensor out = gnn_encode(in[0], g, p, c, RunMode::eval());
      return sum_all(mul(out, out));
    };
    return grad_check(f, inputs, 1e-5, kCompositeTol).max_rel_err;
  }});

  checks.push_back({"gate", kPrimitiveTol, [](uint64_t seed, bool) {
    Rng rng(seed);
    GateParams gate = GateParams::init(6, rng);
    Tensor v = Tensor::randn({4, 6}, rng);
    Tensor z = Tensor::randn({4, 6}, rng);
    auto f = [&](const std::vector<Tensor>& in) {
      Tensor g = sigmoid(add(matmul(in[0], in[2]), in[3]));
      Tensor h = add(mul(g, in[0]),
                     mul(sub(Tensor::ones(g.shape()), g), in[1]));
      return sum_all(mul(h, h));
    };
    return grad_check(f, {v, z, gate.w_g, gate.b_g}, 1e-5, kPrimitiveTol)
        .max_rel_err;
  }});

  checks.push_back({"joint_kv", kCompositeTol, [](uint64_t seed, bool) {
    Rng rng(seed);
    EncoderConfig c;
    c.layers = 1;
    c.heads = 2;
    c.d_model = 8;
    c.d_ff = 32;
    c.max_len = 8;
    c.vocab_size = 4;
    c.dropout_p = 0.0;
    EncoderParams p = EncoderParams::init(c, rng);
    Tensor h = Tensor::randn({3, 8}, rng);
    Tensor s = Tensor::randn({3, 8}, rng);
    Tensor p_k = Tensor::randn({8, 8}, rng, 0.1);
    Tensor p_v = Tensor::randn({8, 8}, rng, 0.1);
    std::vector<uint8_t> pad(3, 1);
    auto run_mode = [&](KvMode kv_mode, const std::vector<Tensor>& in) {
      ExtraKv extra{matmul(in[1], in[2]), matmul(in[1], in[3])};
      Tensor out = encoder_attention(in[0], pad, p.layers[0], c.heads, &extra,
                                     kv_mode, RunMode::eval(), nullptr);
      return sum_all(mul(out, out));
    };
    auto f_concat = [&](const std::vector<Tensor>& in) {
      return run_mode(KvMode::concat, in);
    };
    auto f_add = [&](const std::vector<Tensor>& in) {
      return run_mode(KvMode::add, in);
    };
    const double e1 =
        grad_check(f_concat, {h, s, p_k, p_v}, 1e-5, kCompositeTol).max_rel_err;
    const double e2 =
        grad_check(f_add, {h, s, p_k, p_v}, 1e-5, kCompositeTol).max_rel_err;
    return std::max(e1, e2);
  }});

  checks.push_back({"crf", kPrimitiveTol, [](uint64_t seed, bool) {
    Rng rng(seed);
    CrfParams p = CrfParams::init(4, 3, rng);
    p.transitions = Tensor::randn({3, 3}, rng);
    p.start = Tensor::randn({3}, rng);
    p.end = Tensor::randn({3}, rng);
    Tensor states = Tensor::randn({4, 4}, rng);
    std::vector<int> tags = {static_cast<int>(seed % 3), 0, 2, 1};
    auto f = [&](const std::vector<Tensor>&) {
      return crf_log_likelihood(states, tags, p);
    };
    return grad_check(f,
                      {states, p.emission, p.transitions, p.start, p.end},
                      1e-5, kPrimitiveTol)
        .max_rel_err;
  }});

  checks.push_back({"late_model", kCompositeTol, [](uint64_t seed, bool) {
    return model_check(Variant::late, seed);
  }});
  checks.push_back({"joint_model", kCompositeTol, [](uint64_t seed, bool) {
    return model_check(Variant::joint, seed);
  }});

  return checks;
}

} // namespace

std::vector<LayerCheck> run_gradient_suite(int seeds,
                                           const std::string& defect) {
  std::vector<LayerCheck> results;
  for (const auto& check : build_checks()) {
    LayerCheck result;
    result.layer = check.layer;
    result.tolerance = check.tolerance;
    const bool sabotage = defect == check.layer;
    for (int s = 0; s < seeds; ++s) {
      result.max_rel_err = std::max(
          result.max_rel_err, check.run(1000 + 7919ull * s, sabotage));
    }
    result.pass = result.max_rel_err <= check.tolerance;
    results.push_back(std::move(result));
  }
  return results;
}

} // namespace sfl
