// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavier experiments (criteria 6 and 7) train real models
// at the desk configuration; expect a multi-minute wall time overall.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sfl/gradsuite.hpp"
#include "sfl/harness.hpp"

using namespace sfl;
namespace fs = std::filesystem;

namespace {

const std::vector<uint64_t> kSeeds = {101, 202, 303};

struct Criterion {
  int id;
  std::string name;
  std::function<bool(std::string&)> run;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// --- shared fixtures ----------------------------------------------------

FusionConfig desk_config(Variant v, int vocab_size) {
  FusionConfig c;
  c.variant = v;
  c.task = TaskKind::tagging;
  c.encoder.layers = 4;
  c.encoder.heads = 4;
  c.encoder.d_model = 64;
  c.encoder.d_ff = 256;
  c.encoder.max_len = 64;
  c.encoder.vocab_size = vocab_size;
  c.encoder.dropout_p = 0.1;
  c.gnn.layers = 4;
  c.gnn.heads = 4;
  c.gnn.d_model = 64;
  c.gnn.d_ff = 256;
  c.gnn.dropout_p = 0.1;
  return c;
}

DepTree random_tree(int n, Rng& rng) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  DepTree tree;
  tree.n = n;
  tree.heads.assign(n, 0);
  tree.deprels.assign(n, "dep");
  for (int i = 1; i < n; ++i) {
    tree.heads[order[i]] = order[rng.uniform_int(i)] + 1;
  }
  return tree;
}

WordpieceGraph tree_graph(const DepTree& tree) {
  std::vector<std::pair<int, int>> alignment;
  for (int i = 0; i < tree.n; ++i) alignment.emplace_back(i, i + 1);
  return build_wordpiece_graph(tree, alignment);
}

WordpieceGraph complete_graph(int m) {
  WordpieceGraph g;
  g.m = m;
  g.neighbors.resize(m);
  g.origins.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      g.neighbors[i].push_back(j);
      g.origins[i].push_back(i == j ? WordpieceGraph::EdgeOrigin::self
                                    : WordpieceGraph::EdgeOrigin::tree);
    }
  }
  return g;
}

// --- criterion 1: gradient suite -------------------------------------------

bool c1_gradients(std::string& detail) {
  auto results = run_gradient_suite(10);
  double worst = 0.0;
  bool pass = true;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_err);
    if (!r.pass) {
      pass = false;
      detail += " layer " + r.layer + " err=" + fmt(r.max_rel_err);
    }
  }
  // Desk-config whole-model spot checks on sampled coordinates.
  for (Variant v : {Variant::late, Variant::joint}) {
    Rng rng(9000 + static_cast<int>(v));
    SyntheticSpec spec;
    Vocab vocab = synthetic_vocab(spec);
    TagSet tags = synthetic_tagset(spec);
    FusionConfig config = desk_config(v, vocab.size());
    config.encoder.dropout_p = 0.0;
    config.gnn.dropout_p = 0.0;
    FusionModel model = FusionModel::init_tagging(config, tags, rng);
    Rng data_rng(77);
    auto data = make_synthetic(spec, 1, data_rng);
    SentenceInput in =
        prepare_input(data.sentences[0], vocab, TaskKind::tagging);
    std::vector<Tensor> inputs;
    for (auto& np : model.parameters()) inputs.push_back(np.tensor);
    auto f = [&](const std::vector<Tensor>&) {
      return model_loss(model, in, RunMode::eval());
    };
    Rng coord_rng(31337);
    auto report = grad_check_sampled(f, inputs, 1e-5, 1e-4, 2, coord_rng);
    worst = std::max(worst, report.max_rel_err);
    if (!report.pass) {
      pass = false;
      detail += std::string(" desk ") + variant_name(v) +
                " err=" + fmt(report.max_rel_err);
    }
  }
  detail = "max rel err " + fmt(worst) + " over " +
           std::to_string(results.size()) +
           " layer types x 10 seeds + sampled desk models" + detail;
  return pass;
}

// --- criterion 2: zero-injection identity ------------------------------------

bool c2_zero_injection(std::string& detail) {
  SyntheticSpec spec;
  Rng data_rng(2024);
  auto data = make_synthetic(spec, 100, data_rng);
  Vocab vocab = synthetic_vocab(spec);
  TagSet tags = synthetic_tagset(spec);

  Rng rng(11);
  FusionConfig config = desk_config(Variant::joint, vocab.size());
  config.joint_mode = JointMode::add;
  FusionModel joint = FusionModel::init_tagging(config, tags, rng);
  for (auto& kv : joint.joint) {
    std::fill(kv.p_k.value().begin(), kv.p_k.value().end(), 0.0);
    std::fill(kv.p_v.value().begin(), kv.p_v.value().end(), 0.0);
  }
  FusionModel base;
  base.config = config;
  base.config.variant = Variant::baseline;
  base.encoder = joint.encoder;
  base.tagset = joint.tagset;
  base.crf = joint.crf;

  double max_diff = 0.0;
  for (const auto& s : data.sentences) {
    SentenceInput in = prepare_input(s, vocab, TaskKind::tagging);
    Tensor a = joint_fusion_forward(joint, in, RunMode::eval());
    Tensor b = baseline_forward(base, in, RunMode::eval());
    for (int64_t i = 0; i < a.size(); ++i) {
      max_diff = std::max(max_diff,
                          std::fabs(a.value()[i] - b.value()[i]));
    }
  }
  detail = "max |joint(add, P=0) - baseline| = " + fmt(max_diff) +
           " over 100 sentences";
  return max_diff <= 1e-9;
}

// --- criterion 3: adjacency confinement + receptive field ----------------------

bool c3_confinement(std::string& detail) {
  Rng rng(33);
  GnnConfig config;
  config.layers = 3;
  config.heads = 2;
  config.d_model = 16;
  config.d_ff = 64;
  config.dropout_p = 0.0;

  bool pass = true;
  double worst_row = 0.0;
  for (int iter = 0; iter < 20 && pass; ++iter) {
    const int n = 2 + rng.uniform_int(11); // up to 12 nodes
    DepTree tree = random_tree(n, rng);
    WordpieceGraph graph = tree_graph(tree);
    Rng init_rng(400 + iter);
    GnnParams params = GnnParams::init(config, init_rng);
    Tensor v = Tensor::randn({n, config.d_model}, rng, 1.0);

    // Attention weights exist only on adjacency; dense reconstruction is
    // exactly zero off-adjacency and rows sum to one.
    GraphAttentionTrace trace;
    gnn_encode(v, graph, params, config, RunMode::eval(), &trace);
    for (const auto& layer : trace.layers) {
      for (const auto& head : layer) {
        std::vector<std::vector<double>> dense(
            n, std::vector<double>(n, 0.0));
        for (const auto& e : head) {
          const auto& nb = graph.neighbors[e.from];
          if (!std::binary_search(nb.begin(), nb.end(), e.to)) pass = false;
          dense[e.from][e.to] += e.alpha;
        }
        for (int i = 0; i < n; ++i) {
          double row = 0.0;
          for (int j = 0; j < n; ++j) {
            const auto& nb = graph.neighbors[i];
            if (!std::binary_search(nb.begin(), nb.end(), j)) {
              if (dense[i][j] != 0.0) pass = false; // exact zero
            }
            row += dense[i][j];
          }
          worst_row = std::max(worst_row, std::fabs(row - 1.0));
        }
      }
    }

    // Receptive field: L layers reach at most graph distance L.
    std::vector<int> dist(n, -1);
    const int source = rng.uniform_int(n);
    std::vector<int> queue = {source};
    dist[source] = 0;
    for (size_t qi = 0; qi < queue.size(); ++qi) {
      for (int j : graph.neighbors[queue[qi]]) {
        if (dist[j] < 0) {
          dist[j] = dist[queue[qi]] + 1;
          queue.push_back(j);
        }
      }
    }
    for (int layers = 1; layers <= 3; ++layers) {
      GnnConfig lc = config;
      lc.layers = layers;
      GnnParams lp;
      {
        Rng lr(500 + iter * 4 + layers);
        lp = GnnParams::init(lc, lr);
      }
      Tensor v2 = Tensor(v.shape(), v.value());
      for (int j = 0; j < config.d_model; ++j) {
        v2.value()[static_cast<size_t>(source) * config.d_model + j] += 1.5;
      }
      Tensor a = gnn_encode(v, graph, lp, lc, RunMode::eval());
      Tensor b = gnn_encode(v2, graph, lp, lc, RunMode::eval());
      for (int i = 0; i < n; ++i) {
        bool changed = false;
        for (int j = 0; j < config.d_model; ++j) {
          if (a.at(i, j) != b.at(i, j)) changed = true;
        }
        if (dist[i] > layers && changed) pass = false;
        if (i == source && !changed) pass = false;
      }
    }
  }
  detail = "alpha exists only on adjacency, worst row-sum dev " +
           fmt(worst_row) + ", receptive field <= L on random trees (n<=12)";
  return pass && worst_row <= 1e-6;
}

// --- criterion 4: full-graph equivalence ----------------------------------------

bool c4_full_graph(std::string& detail) {
  double max_diff = 0.0;
  for (uint64_t seed : {1u, 2u, 3u}) {
    for (int m : {2, 5, 8}) {
      Rng rng(seed * 100 + m);
      GnnConfig config;
      config.layers = 1;
      config.heads = 4;
      config.d_model = 32;
      config.d_ff = 64;
      GnnParams gp = GnnParams::init(config, rng);
      Tensor v = Tensor::randn({m, config.d_model}, rng, 1.0);

      EncoderLayerParams ep;
      ep.w_q = gp.layers[0].w_q;
      ep.w_k = gp.layers[0].w_k;
      ep.w_v = gp.layers[0].w_v;
      ep.w_o = gp.layers[0].w_f;

      Tensor dense =
          encoder_attention(v, std::vector<uint8_t>(m, 1), ep, config.heads,
                            nullptr, KvMode::none, RunMode::eval(), nullptr);
      Tensor sparse = graph_attention(v, complete_graph(m), gp.layers[0],
                                      config.heads, RunMode::eval(), nullptr);
      for (int64_t i = 0; i < dense.size(); ++i) {
        max_diff = std::max(
            max_diff, std::fabs(dense.value()[i] - sparse.value()[i]));
      }
    }
  }
  detail = "max |gnn(complete) - unmasked self-attention| = " + fmt(max_diff);
  return max_diff <= 1e-9;
}

// --- criterion 5: CRF exactness ---------------------------------------------------

struct BruteCrf {
  int n, t;
  std::vector<double> emissions, trans, start, end;

  double score(const std::vector<int>& tags) const {
    double s = start[tags[0]] + end[tags[n - 1]];
    for (int i = 0; i < n; ++i) {
      s += emissions[static_cast<size_t>(i) * t + tags[i]];
    }
    for (int i = 1; i < n; ++i) {
      s += trans[static_cast<size_t>(tags[i - 1]) * t + tags[i]];
    }
    return s;
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    std::vector<int> tags(n, 0);
    while (true) {
      fn(tags);
      int pos = n - 1;
      while (pos >= 0 && ++tags[pos] == t) {
        tags[pos] = 0;
        --pos;
      }
      if (pos < 0) break;
    }
  }
};

bool c5_crf(std::string& detail) {
  Rng rng(55);
  double worst = 0.0;
  int instances = 0;
  bool pass = true;
  for (int iter = 0; iter < 120; ++iter) {
    const int n = 1 + rng.uniform_int(6);
    const int t = 1 + rng.uniform_int(5);
    const int d = 3;
    Tensor states = Tensor::randn({n, d}, rng, 1.0);
    CrfParams params = CrfParams::init(d, t, rng);
    params.emission = Tensor::randn({d, t}, rng, 1.0);
    params.transitions = Tensor::randn({t, t}, rng, 1.0);
    params.start = Tensor::randn({t}, rng, 1.0);
    params.end = Tensor::randn({t}, rng, 1.0);

    BruteCrf brute{n, t, matmul(states, params.emission).value(),
                   params.transitions.value(), params.start.value(),
                   params.end.value()};
    double mx = -1e300;
    std::vector<int> best;
    brute.for_each([&](const std::vector<int>& y) {
      const double s = brute.score(y);
      if (s > mx) {
        mx = s;
        best = y;
      }
    });
    double z = 0.0;
    brute.for_each(
        [&](const std::vector<int>& y) { z += std::exp(brute.score(y) - mx); });
    const double log_z = mx + std::log(z);

    std::vector<int> gold(n);
    for (int i = 0; i < n; ++i) gold[i] = rng.uniform_int(t);
    const double ll =
        crf_log_likelihood(states, gold, params).item();
    worst = std::max(worst, std::fabs(ll - (brute.score(gold) - log_z)));

    auto vit = viterbi_decode(states, params);
    if (vit.tags != best) pass = false;
    worst = std::max(worst, std::fabs(vit.score - mx));
    ++instances;
  }
  // Distribution normalizes: sum over all sequences of exp(ll) is 1.
  for (int iter = 0; iter < 10; ++iter) {
    const int n = 1 + rng.uniform_int(4);
    const int t = 2 + rng.uniform_int(3);
    Tensor states = Tensor::randn({n, 3}, rng, 1.0);
    CrfParams params = CrfParams::init(3, t, rng);
    params.emission = Tensor::randn({3, t}, rng, 1.0);
    params.transitions = Tensor::randn({t, t}, rng, 1.0);
    BruteCrf brute{n, t, {}, {}, {}, {}};
    double total = 0.0;
    brute.for_each([&](const std::vector<int>& y) {
      total += std::exp(crf_log_likelihood(states, y, params).item());
    });
    worst = std::max(worst, std::fabs(total - 1.0));
  }
  detail = std::to_string(instances) +
           " instances (n<=6, T<=5), worst |error| = " + fmt(worst);
  return pass && worst <= 1e-8;
}

// --- criterion 6: synthetic head-copy separation ------------------------------------

struct TrainedModels {
  double late_gold = 0.0, joint_gold = 0.0, base_gold = 0.0;
  double late_corr = 0.0, joint_corr = 0.0;
};

TrainedModels run_separation_seed(uint64_t seed) {
  SyntheticSpec spec; // V=40, C=8, lengths 5-12
  Vocab vocab = synthetic_vocab(spec);
  TagSet tags = synthetic_tagset(spec);

  Rng data_rng(seed);
  Rng train_rng = data_rng.split("train");
  Rng dev_rng = data_rng.split("dev");
  Rng test_rng = data_rng.split("test");
  auto train_sentences = make_synthetic(spec, 2000, train_rng).sentences;
  auto dev_sentences = make_synthetic(spec, 200, dev_rng).sentences;
  auto test_sentences = make_synthetic(spec, 500, test_rng).sentences;

  PreparedDataset train_data =
      prepare_dataset(train_sentences, vocab, TaskKind::tagging);
  PreparedDataset dev_data =
      prepare_dataset(dev_sentences, vocab, TaskKind::tagging);
  PreparedDataset test_data =
      prepare_dataset(test_sentences, vocab, TaskKind::tagging);
  Rng corrupt_rng = Rng(seed).split("corrupt-test");
  PreparedDataset test_corrupted = prepare_dataset(
      corrupt_dataset(test_sentences, 1.0, corrupt_rng), vocab,
      TaskKind::tagging);

  auto train_variant = [&](Variant v, int epochs) {
    Rng init_rng = Rng(seed).split(std::string("init-") + variant_name(v));
    FusionConfig config = desk_config(v, vocab.size());
    FusionModel model = FusionModel::init_tagging(config, tags, init_rng);
    TrainConfig tc;
    tc.epochs = epochs;
    tc.seed = seed;
    tc.base_lr = 1e-3;
    tc.dropout_p = 0.1;
    tc.batch_size = 8;
    train(model, train_data, dev_data, tc);
    return model;
  };

  FusionModel late_model = train_variant(Variant::late, 4);
  FusionModel joint_model = train_variant(Variant::joint, 6);
  FusionModel base_model = train_variant(Variant::baseline, 4);

  TrainedModels out;
  out.late_gold = eval_model(late_model, test_data).accuracy;
  out.joint_gold = eval_model(joint_model, test_data).accuracy;
  out.base_gold = eval_model(base_model, test_data).accuracy;
  out.late_corr = eval_model(late_model, test_corrupted).accuracy;
  out.joint_corr = eval_model(joint_model, test_corrupted).accuracy;
  return out;
}

bool c6_separation(std::string& detail) {
  SyntheticSpec spec;
  Rng oracle_rng(4242);
  const double bayes = synthetic_bayes_accuracy(spec, 20000, oracle_rng);

  int pass_a = 0, pass_b = 0, pass_c = 0;
  std::string rows;
  for (uint64_t seed : kSeeds) {
    TrainedModels m = run_separation_seed(seed);
    const bool a = m.late_gold >= 0.95 && m.joint_gold >= 0.95;
    const bool b = m.base_gold <= 0.30;
    const bool c = m.late_corr < 0.5 && m.joint_corr < 0.5;
    pass_a += a;
    pass_b += b;
    pass_c += c;
    rows += "\n      seed " + std::to_string(seed) + ": late=" +
            fmt(m.late_gold) + " joint=" + fmt(m.joint_gold) + " base=" +
            fmt(m.base_gold) + " late@corrupt=" + fmt(m.late_corr) +
            " joint@corrupt=" + fmt(m.joint_corr) + "  [a=" +
            (a ? "ok" : "no") + " b=" + (b ? "ok" : "no") + " c=" +
            (c ? "ok" : "no") + "]";
  }
  const bool a_ok = pass_a >= 2, b_ok = pass_b >= 2, c_ok = pass_c >= 2;
  detail = "(a) fusion>=0.95: " + std::to_string(pass_a) + "/3, (b) base<=0.30: " +
           std::to_string(pass_b) + "/3, (c) corrupted<0.5: " +
           std::to_string(pass_c) +
           "/3; tree-blind Bayes oracle (Monte-Carlo) = " + fmt(bayes) + rows;
  if (!b_ok) {
    detail += "\n      note: the Monte-Carlo Bayes oracle over this generator "
              "yields " + fmt(bayes) +
              ", above the pinned 0.30 threshold; a well-trained tree-blind "
              "model tracks the oracle (see decisions ledger)";
  }
  return a_ok && b_ok && c_ok;
}

// --- criterion 7: sensitivity asymmetry -----------------------------------------------

bool c7_sensitivity(std::string& detail) {
  int wins = 0;
  std::string rows;
  for (uint64_t seed : kSeeds) {
    SyntheticSpec spec;
    Vocab vocab = synthetic_vocab(spec);
    TagSet tags = synthetic_tagset(spec);
    Rng data_rng(seed + 7000);
    auto train_sentences = make_synthetic(spec, 1000, data_rng).sentences;
    auto dev_sentences = make_synthetic(spec, 150, data_rng).sentences;
    auto eval_sentences = make_synthetic(spec, 300, data_rng).sentences;

    PreparedDataset dev_data =
        prepare_dataset(dev_sentences, vocab, TaskKind::tagging);

    auto train_with_trees = [&](bool noisy) {
      auto sentences = train_sentences;
      if (noisy) {
        Rng rng = Rng(seed).split("train-noise");
        sentences = corrupt_dataset(sentences, 0.3, rng);
      }
      PreparedDataset data =
          prepare_dataset(std::move(sentences), vocab, TaskKind::tagging);
      Rng init_rng = Rng(seed).split(noisy ? "init-noisy" : "init-gold");
      FusionConfig config = desk_config(Variant::late, vocab.size());
      FusionModel model = FusionModel::init_tagging(config, tags, init_rng);
      TrainConfig tc;
      tc.epochs = 4;
      tc.seed = seed;
      tc.base_lr = 1e-3;
      tc.batch_size = 8;
      train(model, data, dev_data, tc);
      return model;
    };

    FusionModel gold_model = train_with_trees(false);
    FusionModel noisy_model = train_with_trees(true);

    Rng exp_rng(seed + 1);
    auto reports =
        sensitivity_experiment(gold_model, noisy_model, eval_sentences, vocab,
                               {0.1, 0.2, 0.3, 0.4, 0.5}, exp_rng);
    double slope_gold = 0.0, slope_noisy = 0.0;
    for (const auto& r : reports) {
      if (r.rate >= 0.0 || r.fit.degenerate) continue;
      if (r.condition == "gold_trained") slope_gold = r.fit.slope;
      if (r.condition == "noisy_trained") slope_noisy = r.fit.slope;
    }
    if (slope_gold > slope_noisy) ++wins;
    rows += "\n      seed " + std::to_string(seed) + ": slope(gold-trained)=" +
            fmt(slope_gold) + " slope(noisy-trained)=" + fmt(slope_noisy);
  }
  detail = "pooled OLS slope ordering gold > noisy in " +
           std::to_string(wins) + "/3 seeds (rates 0.1..0.5, 300 sentences)" +
           rows;
  return wins >= 2;
}

// --- criterion 8: RE head properties -----------------------------------------------

bool c8_re_head(std::string& detail) {
  Rng rng(88);
  bool pass = true;

  // LCA pruning vs a brute-force ancestor oracle on trees up to n = 8.
  int lca_checks = 0;
  for (int iter = 0; iter < 500 && pass; ++iter) {
    const int n = 2 + rng.uniform_int(7);
    DepTree tree = random_tree(n, rng);
    auto ancestors = [&](int t) {
      std::set<int> anc;
      int cur = t + 1;
      while (cur != 0) {
        anc.insert(cur - 1);
        cur = tree.heads[cur - 1];
      }
      return anc;
    };
    for (int a = 0; a < n && pass; ++a) {
      for (int b = 0; b < n && pass; ++b) {
        auto mask = lca_prune(tree, {a, a + 1}, {b, b + 1});
        auto anc_a = ancestors(a);
        auto anc_b = ancestors(b);
        int lca = -1;
        size_t best = SIZE_MAX;
        for (int c : anc_a) {
          if (!anc_b.count(c)) continue;
          const size_t size = tree.descendants(c).size() + 1;
          if (size < best) {
            best = size;
            lca = c;
          }
        }
        for (int t = 0; t < n; ++t) {
          const bool expect = t == lca || ancestors(t).count(lca);
          if (static_cast<bool>(mask[t]) != expect) pass = false;
        }
        if (!mask[a] || !mask[b]) pass = false;
        ++lca_checks;
      }
    }
  }

  // Max-pool monotonicity over nested masks.
  for (int iter = 0; iter < 200 && pass; ++iter) {
    const int n = 2 + rng.uniform_int(7);
    Tensor states = Tensor::randn({n, 6}, rng, 1.0);
    std::vector<int> small_rows, large_rows;
    for (int i = 0; i < n; ++i) {
      const bool in_small = rng.uniform() < 0.4;
      if (in_small) small_rows.push_back(i);
      if (in_small || rng.uniform() < 0.5) large_rows.push_back(i);
    }
    if (small_rows.empty()) {
      small_rows.push_back(0);
      if (large_rows.empty() || large_rows[0] != 0) {
        large_rows.insert(large_rows.begin(), 0);
      }
    }
    Tensor lo = rowmax_pool(states, small_rows);
    Tensor hi = rowmax_pool(states, large_rows);
    for (int j = 0; j < 6; ++j) {
      if (hi.at(j) < lo.at(j)) pass = false;
    }
  }

  // Relation micro-F1 vs hand-built confusion counts, no_relation excluded.
  // Predictions are planted through one-hot embeddings and an identity
  // block in the classifier (baseline variant, zero encoder layers).
  {
    std::vector<std::string> rels = {"no_relation", "r1", "r2"};
    FusionConfig config;
    config.variant = Variant::baseline;
    config.task = TaskKind::relation;
    config.encoder.layers = 0;
    config.encoder.heads = 1;
    config.encoder.d_model = 3;
    config.encoder.d_ff = 12;
    config.encoder.max_len = 16;
    config.encoder.vocab_size = 6;
    config.encoder.dropout_p = 0.0;
    config.gnn.layers = 0;
    config.gnn.heads = 1;
    config.gnn.d_model = 3;
    config.gnn.d_ff = 12;
    Rng init_rng(1);
    FusionModel model = FusionModel::init_relation(config, rels, init_rng);
    for (auto& np : model.parameters()) {
      std::fill(np.tensor.value().begin(), np.tensor.value().end(), 0.0);
    }
    std::vector<std::string> pieces = {"p0", "p1", "p2"};
    Vocab vocab = Vocab::from_pieces(pieces);
    for (int k = 0; k < 3; ++k) {
      model.encoder.wordpiece_emb.value()[static_cast<size_t>(3 + k) * 3 + k] =
          10.0;
      model.re_head.classifier.value()[static_cast<size_t>(3 + k) * 3 + k] =
          1.0;
    }
    auto instance = [&](int planted, const std::string& gold) {
      Sentence s;
      s.tokens = {"p" + std::to_string(planted), "p0", "p0"};
      s.tree = {3, {0, 1, 1}, {"root", "dep", "dep"}};
      s.payload = RePayload{{0, 1}, {2, 3}, gold};
      auto tok = tokenize(s.tokens, vocab);
      s.wordpieces = tok.pieces;
      s.alignment = tok.alignment;
      return s;
    };
    // (gold, predicted): (r1,r1) (r1,r2) (r2,no) (no,no) (no,r1) (r2,r2)
    std::vector<Sentence> batch = {instance(1, "r1"), instance(2, "r1"),
                                   instance(0, "r2"), instance(0, "no_relation"),
                                   instance(1, "no_relation"),
                                   instance(2, "r2")};
    auto data = prepare_dataset(batch, vocab, TaskKind::relation);
    auto report = eval_relations(model, data);
    if (report.gold_count != 4 || report.pred_count != 4 ||
        report.correct_count != 2) {
      pass = false;
    }
    if (std::fabs(report.precision - 0.5) > 1e-12 ||
        std::fabs(report.recall - 0.5) > 1e-12 ||
        std::fabs(report.f1 - 0.5) > 1e-12) {
      pass = false;
    }
  }

  detail = std::to_string(lca_checks) +
           " LCA span pairs vs ancestor oracle, 200 max-pool monotonicity "
           "draws, hand confusion arithmetic";
  return pass;
}

// --- criterion 9: persistence ---------------------------------------------------------

bool c9_persistence(std::string& detail) {
  SyntheticSpec spec;
  Vocab vocab = synthetic_vocab(spec);
  TagSet tags = synthetic_tagset(spec);
  Rng rng(99);
  FusionConfig config = desk_config(Variant::late, vocab.size());
  FusionModel model = FusionModel::init_tagging(config, tags, rng);
  Rng data_rng(100);
  auto data = prepare_dataset(make_synthetic(spec, 50, data_rng).sentences,
                              vocab, TaskKind::tagging);

  const std::string dir = "/tmp/sfl_acceptance";
  fs::create_directories(dir);
  const std::string p1 = dir + "/ckpt1.bin";
  const std::string p2 = dir + "/ckpt2.bin";
  save_checkpoint(model, p1);
  FusionModel loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);

  double max_drift = 0.0;
  for (const auto& in : data.inputs) {
    Tensor a = fusion_forward(model, in, RunMode::eval());
    Tensor b = fusion_forward(loaded, in, RunMode::eval());
    for (int64_t i = 0; i < a.size(); ++i) {
      max_drift =
          std::max(max_drift, std::fabs(a.value()[i] - b.value()[i]));
    }
  }
  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  FusionModel reloaded = load_checkpoint(p2);
  const std::string p3 = dir + "/ckpt3.bin";
  save_checkpoint(reloaded, p3);
  const bool bytes_equal = slurp(p2) == slurp(p3) && slurp(p1) == slurp(p2);
  detail = "max eval-output drift " + fmt(max_drift) +
           ", repeated save byte-identical: " + (bytes_equal ? "yes" : "no");
  return max_drift <= 1e-6 && bytes_equal;
}

// --- criterion 10: CLI determinism -------------------------------------------------------

int run_cmd(const std::string& args) {
  const std::string cmd = std::string(SFL_CLI_PATH) + " " + args +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool c10_cli_determinism(std::string& detail) {
  const std::string base = "/tmp/sfl_acceptance/cli";
  fs::remove_all(base);
  fs::create_directories(base);
  auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  if (run_cmd("synth --out " + base +
              "/data --train 100 --dev 20 --test 30 --vocab-size 12 "
              "--classes 4 --len-min 4 --len-max 7 --seed 17") != 0) {
    detail = "synth failed";
    return false;
  }
  const std::string tiny =
      " --layers 1 --gnn-layers 1 --heads 2 --d-model 16 --d-ff 64 "
      "--epochs 2 --seed 23";
  const std::string train_args =
      "train --task tag --variant late --data " + base +
      "/data/train.jsonl --dev " + base + "/data/dev.jsonl --vocab " + base +
      "/data/vocab.txt" + tiny;
  if (run_cmd(train_args + " --out " + base + "/t1") != 0 ||
      run_cmd(train_args + " --out " + base + "/t2") != 0) {
    detail = "train failed";
    return false;
  }
  bool ok = slurp(base + "/t1/metrics.csv") == slurp(base + "/t2/metrics.csv");
  ok = ok && slurp(base + "/t1/checkpoint.bin") ==
                 slurp(base + "/t2/checkpoint.bin");

  const std::string sens_args =
      "sensitivity --checkpoint " + base + "/t1/checkpoint.bin "
      "--checkpoint-noisy " + base + "/t2/checkpoint.bin --data " + base +
      "/data/test.jsonl --vocab " + base +
      "/data/vocab.txt --rates 0.2,0.4 --seed 29";
  if (run_cmd(sens_args + " --out " + base + "/s1") != 0 ||
      run_cmd(sens_args + " --out " + base + "/s2") != 0) {
    detail = "sensitivity failed";
    return false;
  }
  ok = ok && slurp(base + "/s1/metrics.csv") == slurp(base + "/s2/metrics.csv");
  ok = ok &&
       slurp(base + "/s1/sensitivity.csv") == slurp(base + "/s2/sensitivity.csv");

  const std::string perturb_args = "perturb --data " + base +
                                   "/data/test.jsonl --rate 0.3 --seed 31";
  if (run_cmd(perturb_args + " --out " + base + "/p1") != 0 ||
      run_cmd(perturb_args + " --out " + base + "/p2") != 0) {
    detail = "perturb failed";
    return false;
  }
  ok = ok && slurp(base + "/p1/perturbed.jsonl") ==
                 slurp(base + "/p2/perturbed.jsonl");
  detail = ok ? "train/sensitivity/perturb reruns byte-identical"
              : "byte mismatch between reruns";
  return ok;
}

} // namespace

int main() {
  std::vector<Criterion> criteria = {
      {1, "gradient suite (all layers, <=1e-4, 10 seeds)", c1_gradients},
      {2, "joint add-mode zero-injection identity (<=1e-9)", c2_zero_injection},
      {3, "graph-attention confinement and receptive field", c3_confinement},
      {4, "full-graph equivalence with self-attention (<=1e-9)", c4_full_graph},
      {5, "CRF log-partition and Viterbi vs enumeration (<=1e-8)", c5_crf},
      {6, "synthetic head-copy separation (desk scale, 3 seeds)",
       c6_separation},
      {7, "parse-quality sensitivity slope asymmetry (3 seeds)",
       c7_sensitivity},
      {8, "RE head: LCA oracle, max-pool monotonicity, micro-F1", c8_re_head},
      {9, "checkpoint round-trip drift and byte stability", c9_persistence},
      {10, "CLI determinism: byte-identical artifacts per seed",
       c10_cli_determinism},
  };

  int failures = 0;
  for (auto& criterion : criteria) {
    std::string detail;
    bool pass = false;
    try {
      pass = criterion.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    if (!pass) ++failures;
    std::printf("%s %2d  %s\n      %s\n", pass ? "PASS" : "FAIL",
                criterion.id, criterion.name.c_str(), detail.c_str());
    std::fflush(stdout);
  }
  if (failures > 0) {
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  } else {
    std::printf("all %zu criteria passed\n", criteria.size());
  }
  return failures == 0 ? 0 : 1;
}
