#include "sfl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

namespace sfl {

namespace {
using json = nlohmann::ordered_json;
} // namespace

// --- optimizer ----------------------------------------------------------

OptimState OptimState::init(const std::vector<NamedParam>& params,
                            AdamConfig config) {
  if (config.total_steps < 1) {
    throw Error("OptimState: total_steps must be positive");
  }
  OptimState state;
  state.config = config;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.emplace_back(p.tensor.size(), 0.0);
    state.v.emplace_back(p.tensor.size(), 0.0);
  }
  return state;
}

double adam_lr(const OptimState& state) {
  return state.config.base_lr *
         (1.0 - static_cast<double>(state.step) / state.config.total_steps);
}

void adam_step(std::vector<NamedParam>& params, OptimState& state) {
  if (params.size() != state.m.size()) {
    throw Error("adam_step: parameter/state size mismatch");
  }
  if (state.step >= state.config.total_steps) {
    throw Error("adam_step: schedule exhausted (step " +
                std::to_string(state.step) + " of " +
                std::to_string(state.config.total_steps) + ")");
  }
  const AdamConfig& c = state.config;
  const double lr = adam_lr(state);
  const int t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p].tensor.value();
    auto& m = state.m[p];
    auto& v = state.v[p];
    const bool has_grad = params[p].tensor.has_grad();
    const std::vector<double>* grad =
        has_grad ? &params[p].tensor.grad() : nullptr;
    for (size_t i = 0; i < value.size(); ++i) {
      const double g = grad ? (*grad)[i] : 0.0;
      if (std::isnan(g)) {
        throw Error("adam_step: NaN gradient in parameter '" +
                    params[p].name + "'");
      }
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
  ++state.step;
}

// --- dataset preparation ---------------------------------------------------

PreparedDataset prepare_dataset(std::vector<Sentence> sentences,
                                const Vocab& vocab, TaskKind task) {
  PreparedDataset data;
  data.task = task;
  data.sentences = std::move(sentences);
  data.inputs.reserve(data.sentences.size());
  for (size_t i = 0; i < data.sentences.size(); ++i) {
    const Sentence& s = data.sentences[i];
    const bool ok =
        (task == TaskKind::tagging &&
         std::holds_alternative<TagSeqPayload>(s.payload)) ||
        (task == TaskKind::srl && std::holds_alternative<SrlPayload>(s.payload)) ||
        (task == TaskKind::relation &&
         std::holds_alternative<RePayload>(s.payload));
    if (!ok) {
      throw Error("dataset/head mismatch: record " + std::to_string(i) +
                  " does not carry a '" + task_name(task) + "' payload");
    }
    data.inputs.push_back(prepare_input(s, vocab, task));
  }
  return data;
}

// --- evaluation ---------------------------------------------------------------

namespace {

const std::vector<std::string>& gold_tags_of(const Sentence& s) {
  if (const auto* p = std::get_if<TagSeqPayload>(&s.payload)) return p->tags;
  if (const auto* p = std::get_if<SrlPayload>(&s.payload)) return p->tags;
  throw Error("eval: sentence has no tag payload");
}

struct SentenceEval {
  int64_t gold = 0, pred = 0, correct = 0;
  int tokens = 0, token_hits = 0;
};

double f1_from_counts(int64_t gold, int64_t pred, int64_t correct,
                      bool* flagged = nullptr) {
  if (flagged) *flagged = false;
  if (gold == 0 && pred == 0) {
    // Defined per-point value for sensitivity scatter plots.
    if (flagged) *flagged = true;
    return 1.0;
  }
  const double p = pred > 0 ? static_cast<double>(correct) / pred : 0.0;
  const double r = gold > 0 ? static_cast<double>(correct) / gold : 0.0;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

} // namespace

MetricsReport eval_spans(const FusionModel& model,
                         const PreparedDataset& data) {
  const int64_t n = static_cast<int64_t>(data.size());
  std::vector<SentenceEval> evals(n);
  parallel_for(n, env_thread_cap(), [&](int64_t i) {
    const Sentence& s = data.sentences[i];
    std::vector<int> predicted_ids = predict_tags(model, data.inputs[i]);
    std::vector<std::string> predicted;
    predicted.reserve(predicted_ids.size());
    for (int id : predicted_ids) predicted.push_back(model.tagset.tag(id));
    const auto& gold = gold_tags_of(s);

    auto pred_spans = extract_spans(predicted);
    auto gold_spans = extract_spans(gold);
    std::set<LabeledSpan> gold_set(gold_spans.begin(), gold_spans.end());
    SentenceEval e;
    e.gold = static_cast<int64_t>(gold_spans.size());
    e.pred = static_cast<int64_t>(pred_spans.size());
    for (const auto& span : pred_spans) {
      if (gold_set.count(span)) ++e.correct;
    }
    e.tokens = s.num_tokens();
    for (int t = 0; t < e.tokens; ++t) {
      if (predicted[t] == gold[t]) ++e.token_hits;
    }
    evals[i] = e;
  });

  MetricsReport report;
  int64_t tokens = 0, hits = 0;
  for (const auto& e : evals) {
    report.gold_count += e.gold;
    report.pred_count += e.pred;
    report.correct_count += e.correct;
    tokens += e.tokens;
    hits += e.token_hits;
    bool flagged = false;
    report.per_sentence_f1.push_back(
        f1_from_counts(e.gold, e.pred, e.correct, &flagged));
    report.per_sentence_flagged.push_back(flagged);
  }
  report.precision = report.pred_count > 0
                         ? static_cast<double>(report.correct_count) /
                               report.pred_count
                         : 0.0;
  report.recall = report.gold_count > 0
                      ? static_cast<double>(report.correct_count) /
                            report.gold_count
                      : 0.0;
  report.f1 = report.precision + report.recall > 0.0
                  ? 2.0 * report.precision * report.recall /
                        (report.precision + report.recall)
                  : 0.0;
  report.accuracy = tokens > 0 ? static_cast<double>(hits) / tokens : 0.0;
  return report;
}

MetricsReport eval_relations(const FusionModel& model,
                             const PreparedDataset& data) {
  const int64_t n = static_cast<int64_t>(data.size());
  std::vector<int> predicted(n);
  parallel_for(n, env_thread_cap(), [&](int64_t i) {
    predicted[i] = predict_relation(model, data.inputs[i]);
  });

  int negative = -1; // id of no_relation, excluded from micro counts
  for (size_t r = 0; r < model.re_head.relations.size(); ++r) {
    if (model.re_head.relations[r] == "no_relation") {
      negative = static_cast<int>(r);
    }
  }

  MetricsReport report;
  int64_t exact = 0;
  for (int64_t i = 0; i < n; ++i) {
    const auto* re = std::get_if<RePayload>(&data.sentences[i].payload);
    int gold = -1;
    for (size_t r = 0; r < model.re_head.relations.size(); ++r) {
      if (model.re_head.relations[r] == re->relation) {
        gold = static_cast<int>(r);
      }
    }
    if (gold < 0) {
      throw Error("eval_relations: unknown gold label '" + re->relation + "'");
    }
    const bool hit = predicted[i] == gold;
    if (hit) ++exact;
    if (gold != negative) ++report.gold_count;
    if (predicted[i] != negative) ++report.pred_count;
    if (hit && gold != negative) ++report.correct_count;
    report.per_sentence_f1.push_back(hit ? 1.0 : 0.0);
    report.per_sentence_flagged.push_back(0);
  }
  report.accuracy = n > 0 ? static_cast<double>(exact) / n : 0.0;
  if (report.gold_count == 0 && report.pred_count == 0) {
    // Empty-support convention, flagged.
    report.zero_support = true;
    report.precision = report.recall = report.f1 = 1.0;
    return report;
  }
  report.precision = report.pred_count > 0
                         ? static_cast<double>(report.correct_count) /
                               report.pred_count
                         : 0.0;
  report.recall = report.gold_count > 0
                      ? static_cast<double>(report.correct_count) /
                            report.gold_count
                      : 0.0;
  report.f1 = report.precision + report.recall > 0.0
                  ? 2.0 * report.precision * report.recall /
                        (report.precision + report.recall)
                  : 0.0;
  return report;
}

MetricsReport eval_model(const FusionModel& model,
                         const PreparedDataset& data) {
  return model.config.task == TaskKind::relation ? eval_relations(model, data)
                                                 : eval_spans(model, data);
}

// --- training ----------------------------------------------------------------

namespace {

std::vector<std::vector<double>> snapshot_params(
    const std::vector<NamedParam>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.value());
  return out;
}

void restore_params(std::vector<NamedParam>& params,
                    const std::vector<std::vector<double>>& values) {
  for (size_t i = 0; i < params.size(); ++i) {
    params[i].tensor.value() = values[i];
  }
}

} // namespace

TrainResult train(FusionModel& model, const PreparedDataset& train_data,
                  const PreparedDataset& dev_data, const TrainConfig& config) {
  if (train_data.task != model.config.task ||
      dev_data.task != model.config.task) {
    throw Error("train: dataset task does not match the model head");
  }
  TrainResult result;
  if (config.epochs <= 0) return result;
  if (train_data.size() == 0) throw Error("train: empty training set");

  if (config.batch_size < 1) throw Error("train: batch_size must be >= 1");
  auto params = model.parameters();
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  const int n = static_cast<int>(train_data.size());
  const int steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  AdamConfig adam;
  adam.base_lr = config.base_lr;
  adam.total_steps = config.epochs * steps_per_epoch;
  OptimState state = OptimState::init(params, adam);

  Rng master(config.seed);
  Rng shuffle_rng = master.split("shuffle");
  Rng dropout_rng = master.split("dropout");

  std::vector<int> order(train_data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  double best_f1 = -1.0;
  std::vector<std::vector<double>> best_values;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    // Gradients accumulate across each batch (zero_grad runs after the
    // step), with per-sentence losses scaled to the batch mean.
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const int batch = static_cast<int>(
          std::min<size_t>(config.batch_size, order.size() - start));
      for (int b = 0; b < batch; ++b) {
        Tape tape;
        RunMode mode = RunMode::train(config.dropout_p, dropout_rng);
        Tensor loss =
            model_loss(model, train_data.inputs[order[start + b]], mode);
        loss_sum += loss.item();
        tape.backward(scale(loss, 1.0 / batch));
      }
      adam_step(params, state);
      for (auto& p : params) p.tensor.zero_grad();
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(train_data.size());
    em.dev = eval_model(model, dev_data);
    if (em.dev.f1 > best_f1) {
      best_f1 = em.dev.f1;
      best_values = snapshot_params(params);
      result.best_epoch = epoch;
    }
    result.history.push_back(std::move(em));
  }
  if (!best_values.empty()) restore_params(params, best_values);
  return result;
}

// --- synthetic task --------------------------------------------------------------

namespace {

std::string token_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "w%03d", index);
  return buf;
}

} // namespace

Vocab synthetic_vocab(const SyntheticSpec& spec) {
  std::vector<std::string> pieces;
  pieces.reserve(spec.vocab_size);
  for (int i = 0; i < spec.vocab_size; ++i) pieces.push_back(token_name(i));
  return Vocab::from_pieces(pieces);
}

TagSet synthetic_tagset(const SyntheticSpec& spec) {
  std::vector<std::string> tags = {"O"};
  for (int c = 0; c < spec.num_classes; ++c) {
    tags.push_back("B-c" + std::to_string(c));
  }
  return TagSet::from_tags(std::move(tags));
}

SyntheticData make_synthetic(const SyntheticSpec& spec, int count, Rng& rng) {
  if (spec.vocab_size < spec.num_classes || spec.num_classes < 2) {
    throw Error("make_synthetic: need V >= C >= 2");
  }
  if (spec.len_lo < 1 || spec.len_hi < spec.len_lo) {
    throw Error("make_synthetic: bad length range");
  }
  SyntheticData data;
  for (int i = 0; i < spec.vocab_size; ++i) {
    data.token_types.push_back(token_name(i));
  }
  data.tag_names.push_back("O");
  for (int c = 0; c < spec.num_classes; ++c) {
    data.tag_names.push_back("B-c" + std::to_string(c));
  }

  data.sentences.reserve(count);
  for (int s = 0; s < count; ++s) {
    const int n =
        spec.len_lo + rng.uniform_int(spec.len_hi - spec.len_lo + 1);
    Sentence sent;
    std::vector<int> type_of(n);
    for (int i = 0; i < n; ++i) {
      type_of[i] = rng.uniform_int(spec.vocab_size);
      sent.tokens.push_back(data.token_types[type_of[i]]);
    }
    sent.tree.n = n;
    sent.tree.heads.assign(n, 0);
    sent.tree.deprels.assign(n, "dep");
    sent.tree.deprels[0] = "root";
    // Token 1 is the root; token i attaches uniformly to a previous token.
    for (int i = 1; i < n; ++i) {
      sent.tree.heads[i] = 1 + rng.uniform_int(i);
    }
    TagSeqPayload payload;
    for (int i = 0; i < n; ++i) {
      const int head = sent.tree.heads[i];
      const int head_type = head == 0 ? type_of[i] : type_of[head - 1];
      payload.tags.push_back(
          "B-c" + std::to_string(head_type % spec.num_classes));
    }
    sent.payload = std::move(payload);
    sent.wordpieces = sent.tokens; // single-piece by construction
    for (int i = 0; i < n; ++i) sent.alignment.emplace_back(i, i + 1);
    data.sentences.push_back(std::move(sent));
  }
  return data;
}

double synthetic_bayes_accuracy(const SyntheticSpec& spec, int num_sentences,
                                Rng& rng) {
  SyntheticData data = make_synthetic(spec, num_sentences, rng);
  int64_t hits = 0, total = 0;
  for (const auto& sent : data.sentences) {
    const auto& gold = std::get<TagSeqPayload>(sent.payload).tags;
    const int n = sent.num_tokens();
    std::vector<int> prefix_count(spec.num_classes, 0);
    for (int i = 0; i < n; ++i) {
      int type = 0;
      for (int v = 0; v < spec.vocab_size; ++v) {
        if (data.token_types[v] == sent.tokens[i]) type = v;
      }
      const int own_class = type % spec.num_classes;
      int guess;
      if (i == 0) {
        guess = own_class; // root labels its own class
      } else {
        guess = 0;
        for (int c = 1; c < spec.num_classes; ++c) {
          if (prefix_count[c] > prefix_count[guess]) guess = c;
        }
      }
      if ("B-c" + std::to_string(guess) == gold[i]) ++hits;
      ++total;
      prefix_count[own_class] += 1;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

// --- sensitivity ------------------------------------------------------------------

OlsFit ols_fit(const std::vector<std::pair<double, double>>& pairs) {
  OlsFit fit;
  fit.n = static_cast<int>(pairs.size());
  if (fit.n < 2) {
    fit.degenerate = true;
    return fit;
  }
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pairs) {
    mx += x;
    my += y;
  }
  mx /= fit.n;
  my /= fit.n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : pairs) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx <= 1e-12) {
    fit.degenerate = true;
    return fit;
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

std::vector<Sentence> corrupt_dataset(const std::vector<Sentence>& sentences,
                                      double rate, Rng& rng) {
  std::vector<Sentence> out(sentences);
  for (auto& s : out) {
    s.tree = corrupt_tree(s.tree, rate, rng).tree;
  }
  return out;
}

std::vector<SensitivityReport> sensitivity_experiment(
    const FusionModel& gold_model, const FusionModel& noisy_model,
    const std::vector<Sentence>& dataset, const Vocab& vocab,
    const std::vector<double>& rates, Rng& rng) {
  const TaskKind task = gold_model.config.task;
  if (noisy_model.config.task != task) {
    throw Error("sensitivity_experiment: model heads disagree");
  }
  PreparedDataset gold_data = prepare_dataset(dataset, vocab, task);

  struct Condition {
    std::string name;
    const FusionModel* model;
    std::vector<double> f1_ref;
    std::vector<std::pair<double, double>> pooled;
  };
  std::vector<Condition> conditions = {{"gold_trained", &gold_model, {}, {}},
                                       {"noisy_trained", &noisy_model, {}, {}}};
  for (auto& cond : conditions) {
    cond.f1_ref = eval_model(*cond.model, gold_data).per_sentence_f1;
  }

  std::vector<SensitivityReport> reports;
  for (size_t ri = 0; ri < rates.size(); ++ri) {
    const double rate = rates[ri];
    Rng rate_rng = rng.split("rate" + std::to_string(ri));
    std::vector<Sentence> corrupted = corrupt_dataset(dataset, rate, rate_rng);
    std::vector<double> sentence_uas(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
      sentence_uas[i] = uas(corrupted[i].tree, dataset[i].tree);
    }
    PreparedDataset noisy_data =
        prepare_dataset(std::move(corrupted), vocab, task);
    for (auto& cond : conditions) {
      SensitivityReport report;
      report.condition = cond.name;
      report.rate = rate;
      auto f1_noisy = eval_model(*cond.model, noisy_data).per_sentence_f1;
      std::vector<std::pair<double, double>> pairs;
      for (size_t i = 0; i < dataset.size(); ++i) {
        report.rows.push_back({static_cast<int>(i), sentence_uas[i],
                               cond.f1_ref[i], f1_noisy[i]});
        pairs.emplace_back(sentence_uas[i], f1_noisy[i] - cond.f1_ref[i]);
        cond.pooled.emplace_back(sentence_uas[i], f1_noisy[i] - cond.f1_ref[i]);
      }
      report.fit = ols_fit(pairs);
      reports.push_back(std::move(report));
    }
  }
  for (auto& cond : conditions) {
    SensitivityReport pooled;
    pooled.condition = cond.name;
    pooled.rate = -1.0;
    pooled.fit = ols_fit(cond.pooled);
    reports.push_back(std::move(pooled));
  }
  return reports;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

} // namespace

void write_sensitivity_metrics_csv(
    const std::vector<SensitivityReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path);
  out << "condition,rate,sentence_id,uas,f1_ref,f1_noisy,delta\n";
  for (const auto& report : reports) {
    if (report.rate < 0.0) continue; // pooled fits carry no sentence rows
    for (const auto& row : report.rows) {
      out << report.condition << ',' << fmt_double(report.rate) << ','
          << row.sentence_id << ',' << fmt_double(row.uas) << ','
          << fmt_double(row.f1_ref) << ',' << fmt_double(row.f1_noisy) << ','
          << fmt_double(row.f1_noisy - row.f1_ref) << '\n';
    }
  }
}

void write_sensitivity_fits_csv(const std::vector<SensitivityReport>& reports,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path);
  out << "condition,rate,slope,intercept,n,flag\n";
  for (const auto& report : reports) {
    out << report.condition << ','
        << (report.rate < 0.0 ? std::string("all") : fmt_double(report.rate))
        << ',';
    if (report.fit.degenerate) {
      out << "undefined,undefined," << report.fit.n << ",degenerate\n";
    } else {
      out << fmt_double(report.fit.slope) << ','
          << fmt_double(report.fit.intercept) << ',' << report.fit.n
          << ",ok\n";
    }
  }
}

// --- persistence -----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'F', 'L', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw Error("checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

float get_f32(std::istream& in) {
  const uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

json encoder_config_json(const EncoderConfig& c) {
  json j;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["max_len"] = c.max_len;
  j["vocab_size"] = c.vocab_size;
  j["segment_types"] = c.segment_types;
  j["dropout_p"] = c.dropout_p;
  return j;
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.segment_types = j.at("segment_types").get<int>();
  c.dropout_p = j.at("dropout_p").get<double>();
  return c;
}

json gnn_config_json(const GnnConfig& c) {
  json j;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["dropout_p"] = c.dropout_p;
  return j;
}

GnnConfig gnn_config_from_json(const json& j) {
  GnnConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.dropout_p = j.at("dropout_p").get<double>();
  return c;
}

} // namespace

void save_checkpoint(const FusionModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);

  json config;
  config["variant"] = variant_name(model.config.variant);
  config["joint_mode"] = joint_mode_name(model.config.joint_mode);
  config["task"] = task_name(model.config.task);
  config["encoder"] = encoder_config_json(model.config.encoder);
  config["gnn"] = gnn_config_json(model.config.gnn);
  if (model.config.task == TaskKind::relation) {
    config["relations"] = model.re_head.relations;
  } else {
    config["tags"] = model.tagset.tags();
  }
  const std::string config_text = config.dump();
  put_u32(out, static_cast<uint32_t>(config_text.size()));
  out.write(config_text.data(),
            static_cast<std::streamsize>(config_text.size()));

  const auto params = model.parameters();
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(out, static_cast<uint32_t>(p.tensor.rank()));
    for (int d = 0; d < p.tensor.rank(); ++d) {
      put_u32(out, static_cast<uint32_t>(p.tensor.dim(d)));
    }
    for (double v : p.tensor.value()) {
      put_f32(out, static_cast<float>(v));
    }
  }
  if (!out) throw Error("save_checkpoint: write failed for " + path);
}

FusionModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error("load_checkpoint: version mismatch (bad magic bytes)");
  }
  const uint32_t version = get_u32(in);
  if (version != kVersion) {
    throw Error("load_checkpoint: version mismatch (file version " +
                std::to_string(version) + ", expected " +
                std::to_string(kVersion) + ")");
  }
  const uint32_t config_len = get_u32(in);
  std::string config_text(config_len, '\0');
  in.read(config_text.data(), config_len);
  if (!in) throw Error("checkpoint: truncated file");
  json config;
  try {
    config = json::parse(config_text);
  } catch (const std::exception& e) {
    throw Error(std::string("load_checkpoint: bad config block: ") + e.what());
  }

  FusionConfig fc;
  fc.variant = variant_from_name(config.at("variant").get<std::string>());
  fc.joint_mode =
      joint_mode_from_name(config.at("joint_mode").get<std::string>());
  fc.task = task_from_name(config.at("task").get<std::string>());
  fc.encoder = encoder_config_from_json(config.at("encoder"));
  fc.gnn = gnn_config_from_json(config.at("gnn"));

  Rng rng(0);
  FusionModel model =
      fc.task == TaskKind::relation
          ? FusionModel::init_relation(
                fc, config.at("relations").get<std::vector<std::string>>(),
                rng)
          : FusionModel::init_tagging(
                fc,
                TagSet::from_tags(
                    config.at("tags").get<std::vector<std::string>>()),
                rng);

  auto params = model.parameters();
  const uint32_t count = get_u32(in);
  if (count != params.size()) {
    throw Error("load_checkpoint: tensor count " + std::to_string(count) +
                " does not match the config (" +
                std::to_string(params.size()) + ")");
  }
  for (auto& p : params) {
    const uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw Error("checkpoint: truncated file");
    if (name != p.name) {
      throw Error("load_checkpoint: tensor '" + name + "' where '" + p.name +
                  "' was expected");
    }
    const uint32_t rank = get_u32(in);
    if (rank != static_cast<uint32_t>(p.tensor.rank())) {
      throw Error("load_checkpoint: rank mismatch for '" + name + "'");
    }
    int64_t count_elems = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = get_u32(in);
      if (dim != static_cast<uint32_t>(p.tensor.dim(static_cast<int>(d)))) {
        throw Error("load_checkpoint: shape mismatch for '" + name + "'");
      }
      count_elems *= dim;
    }
    auto& value = p.tensor.value();
    for (int64_t i = 0; i < count_elems; ++i) {
      value[i] = static_cast<double>(get_f32(in));
    }
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw Error("load_checkpoint: trailing bytes after the last tensor");
  }
  return model;
}

// --- misc ---------------------------------------------------------------------------

int env_thread_cap() {
  const char* env = std::getenv("SFL_THREADS");
  if (!env) return 1;
  const int v = std::atoi(env);
  return v >= 1 ? v : 1;
}

void parallel_for(int64_t n, int workers,
                  const std::function<void(int64_t)>& fn) {
  if (n <= 0) return;
  workers = static_cast<int>(std::min<int64_t>(workers, n));
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::mutex error_mutex;
  std::exception_ptr first_error;
  const int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int64_t begin = w * chunk;
    const int64_t end = std::min<int64_t>(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, begin, end] {
      try {
        for (int64_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

} // namespace sfl
