// sfl: syntax-fusion experiment driver.
//
// Subcommands: synth, train, eval, perturb, gradcheck, sensitivity.
// Exit codes: 0 success, 1 runtime failure, 2 config error,
// 3 compatibility error, 4 verification failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfl/gradsuite.hpp"
#include "sfl/harness.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace sfl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCompat = 3;
constexpr int kExitVerify = 4;

struct ConfigError : Error {
  using Error::Error;
};
struct CompatError : Error {
  using Error::Error;
};

void require_file(const std::string& path, const std::string& flag) {
  if (!fs::exists(path)) {
    throw ConfigError(flag + ": file does not exist: " + path);
  }
}

fs::path ensure_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out: output directory required");
  fs::create_directories(out);
  return fs::path(out);
}

Vocab load_vocab_file(const std::string& path) {
  require_file(path, "--vocab");
  std::ifstream in(path);
  return Vocab::load(in);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string());
  out << text;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// --trees gold | corrupted@RATE | file:PATH
struct TreeSource {
  enum class Kind { gold, corrupted, file } kind = Kind::gold;
  double rate = 0.0;
  std::string path;

  static TreeSource parse(const std::string& text) {
    TreeSource src;
    if (text.empty() || text == "gold") return src;
    if (text.rfind("corrupted@", 0) == 0) {
      src.kind = Kind::corrupted;
      try {
        src.rate = std::stod(text.substr(10));
      } catch (const std::exception&) {
        throw ConfigError("--trees: bad rate in '" + text + "'");
      }
      if (src.rate < 0.0 || src.rate > 1.0) {
        throw ConfigError("--trees: rate must lie in [0, 1]");
      }
      return src;
    }
    if (text.rfind("file:", 0) == 0) {
      src.kind = Kind::file;
      src.path = text.substr(5);
      require_file(src.path, "--trees");
      return src;
    }
    throw ConfigError("--trees: expected gold, corrupted@RATE, or file:PATH");
  }

  std::string describe() const {
    switch (kind) {
      case Kind::gold: return "gold";
      case Kind::corrupted: return "corrupted@" + fmt_double(rate);
      case Kind::file: return "file:" + path;
    }
    return "gold";
  }

  std::vector<Sentence> apply(std::vector<Sentence> sentences,
                              const Vocab& vocab, uint64_t seed) const {
    switch (kind) {
      case Kind::gold:
        return sentences;
      case Kind::corrupted: {
        Rng rng = Rng(seed).split("corrupt");
        return corrupt_dataset(sentences, rate, rng);
      }
      case Kind::file: {
        auto donors = load_dataset(path, vocab);
        if (donors.size() != sentences.size()) {
          throw CompatError("--trees file: record count mismatch");
        }
        for (size_t i = 0; i < sentences.size(); ++i) {
          if (donors[i].tree.n != sentences[i].tree.n) {
            throw CompatError("--trees file: token count mismatch at record " +
                              std::to_string(i));
          }
          sentences[i].tree = donors[i].tree;
        }
        return sentences;
      }
    }
    return sentences;
  }
};

// Distinct tags in first-occurrence-free canonical order: O first, rest
// sorted. The CRF needs a fixed inventory across train/eval.
TagSet tagset_from_data(const std::vector<Sentence>& sentences) {
  std::set<std::string> seen;
  for (const auto& s : sentences) {
    const std::vector<std::string>* tags = nullptr;
    if (const auto* p = std::get_if<TagSeqPayload>(&s.payload)) {
      tags = &p->tags;
    } else if (const auto* p = std::get_if<SrlPayload>(&s.payload)) {
      tags = &p->tags;
    }
    if (tags) seen.insert(tags->begin(), tags->end());
  }
  std::vector<std::string> ordered = {"O"};
  for (const auto& t : seen) {
    if (t != "O") ordered.push_back(t);
  }
  return TagSet::from_tags(std::move(ordered));
}

std::vector<std::string> relations_from_data(
    const std::vector<Sentence>& sentences) {
  std::set<std::string> seen;
  for (const auto& s : sentences) {
    if (const auto* p = std::get_if<RePayload>(&s.payload)) {
      seen.insert(p->relation);
    }
  }
  return {seen.begin(), seen.end()};
}

struct CommonModelFlags {
  std::string variant = "late";
  std::string joint_mode = "concat";
  std::string task = "tag";
  int layers = 4;
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int max_len = 64;
  int gnn_layers = 4;
  double dropout = 0.1;

  FusionConfig to_config(int vocab_size) const {
    FusionConfig c;
    c.variant = variant_from_name(variant);
    c.joint_mode = joint_mode_from_name(joint_mode);
    c.task = task_from_name(task);
    c.encoder.layers = layers;
    c.encoder.heads = heads;
    c.encoder.d_model = d_model;
    c.encoder.d_ff = d_ff;
    c.encoder.max_len = max_len;
    c.encoder.vocab_size = vocab_size;
    c.encoder.dropout_p = dropout;
    c.gnn.layers = gnn_layers;
    c.gnn.heads = heads;
    c.gnn.d_model = d_model;
    c.gnn.d_ff = d_ff;
    c.gnn.dropout_p = dropout;
    return c;
  }
};

json config_echo_base(const std::string& command, uint64_t seed) {
  json j;
  j["command"] = command;
  j["seed"] = seed;
  return j;
}

// --- synth ------------------------------------------------------------------

int cmd_synth(const std::string& out, int train_count, int dev_count,
              int test_count, int vocab_size, int classes, int len_min,
              int len_max, uint64_t seed) {
  SyntheticSpec spec;
  spec.vocab_size = vocab_size;
  spec.num_classes = classes;
  spec.len_lo = len_min;
  spec.len_hi = len_max;
  fs::path dir = ensure_out_dir(out);

  Rng rng(seed);
  Rng train_rng = rng.split("train");
  Rng dev_rng = rng.split("dev");
  Rng test_rng = rng.split("test");
  save_dataset((dir / "train.jsonl").string(),
               make_synthetic(spec, train_count, train_rng).sentences);
  save_dataset((dir / "dev.jsonl").string(),
               make_synthetic(spec, dev_count, dev_rng).sentences);
  save_dataset((dir / "test.jsonl").string(),
               make_synthetic(spec, test_count, test_rng).sentences);
  Vocab vocab = synthetic_vocab(spec);
  std::ofstream vf(dir / "vocab.txt", std::ios::binary);
  vocab.save(vf);

  json echo = config_echo_base("synth", seed);
  echo["vocab_size"] = vocab_size;
  echo["classes"] = classes;
  echo["len_min"] = len_min;
  echo["len_max"] = len_max;
  echo["train"] = train_count;
  echo["dev"] = dev_count;
  echo["test"] = test_count;
  write_text(dir / "config.echo", echo.dump(2) + "\n");
  std::cout << "wrote " << (dir / "train.jsonl").string() << " (+dev/test/vocab)\n";
  return kExitOk;
}

// --- train ---------------------------------------------------------------------

int cmd_train(const std::string& data_path, const std::string& dev_path,
              const std::string& vocab_path, const std::string& out,
              const CommonModelFlags& flags, const std::string& trees,
              uint64_t seed, int epochs, double lr, int batch_size) {
  require_file(data_path, "--data");
  require_file(vocab_path, "--vocab");
  try { // flag-derived settings: failures are config errors
    (void)variant_from_name(flags.variant);
    (void)joint_mode_from_name(flags.joint_mode);
    (void)task_from_name(flags.task);
    flags.to_config(4).validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  TreeSource tree_source = TreeSource::parse(trees);
  fs::path dir = ensure_out_dir(out);

  Vocab vocab = load_vocab_file(vocab_path);
  auto sentences = load_dataset(data_path, vocab);
  if (sentences.empty()) throw ConfigError("--data: empty dataset");
  sentences = tree_source.apply(std::move(sentences), vocab, seed);

  std::vector<Sentence> dev_sentences;
  if (!dev_path.empty()) {
    require_file(dev_path, "--dev");
    dev_sentences = load_dataset(dev_path, vocab);
  } else {
    // Deterministic held-out split: the final tenth of the records.
    const size_t dev_n = std::max<size_t>(1, sentences.size() / 10);
    dev_sentences.assign(sentences.end() - dev_n, sentences.end());
    sentences.resize(sentences.size() - dev_n);
  }

  const TaskKind task = task_from_name(flags.task);
  FusionConfig config = flags.to_config(vocab.size());
  Rng init_rng = Rng(seed).split("init");
  FusionModel model =
      task == TaskKind::relation
          ? FusionModel::init_relation(config, relations_from_data(sentences),
                                       init_rng)
          : FusionModel::init_tagging(config, tagset_from_data(sentences),
                                      init_rng);

  PreparedDataset train_data =
      prepare_dataset(std::move(sentences), vocab, task);
  PreparedDataset dev_data =
      prepare_dataset(std::move(dev_sentences), vocab, task);

  if (batch_size < 1) throw ConfigError("--batch-size: must be >= 1");
  TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = seed;
  tc.base_lr = lr;
  tc.dropout_p = flags.dropout;
  tc.batch_size = batch_size;
  TrainResult result = train(model, train_data, dev_data, tc);

  save_checkpoint(model, (dir / "checkpoint.bin").string());

  std::string csv = "epoch,train_loss,dev_precision,dev_recall,dev_f1,"
                    "dev_accuracy,best\n";
  for (const auto& em : result.history) {
    csv += std::to_string(em.epoch) + ',' + fmt_double(em.train_loss) + ',' +
           fmt_double(em.dev.precision) + ',' + fmt_double(em.dev.recall) +
           ',' + fmt_double(em.dev.f1) + ',' + fmt_double(em.dev.accuracy) +
           ',' + (em.epoch == result.best_epoch ? "1" : "0") + '\n';
  }
  write_text(dir / "metrics.csv", csv);

  json echo = config_echo_base("train", seed);
  echo["data"] = data_path;
  echo["dev"] = dev_path.empty() ? json("split:0.1") : json(dev_path);
  echo["vocab"] = vocab_path;
  echo["trees"] = tree_source.describe();
  echo["task"] = flags.task;
  echo["variant"] = flags.variant;
  echo["joint_mode"] = flags.joint_mode;
  echo["epochs"] = epochs;
  echo["lr"] = lr;
  echo["batch_size"] = batch_size;
  echo["dropout"] = flags.dropout;
  echo["encoder_layers"] = flags.layers;
  echo["gnn_layers"] = flags.gnn_layers;
  echo["heads"] = flags.heads;
  echo["d_model"] = flags.d_model;
  echo["d_ff"] = flags.d_ff;
  echo["vocab_size"] = vocab.size();
  echo["best_epoch"] = result.best_epoch;
  write_text(dir / "config.echo", echo.dump(2) + "\n");

  if (!result.history.empty()) {
    const auto& last = result.history[result.best_epoch];
    std::cout << "best epoch " << result.best_epoch << " dev F1 "
              << fmt4(last.dev.f1) << "\n";
  }
  return kExitOk;
}

// --- eval -----------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& vocab_path, const std::string& out,
             const std::string& trees, uint64_t seed) {
  require_file(checkpoint_path, "--checkpoint");
  require_file(data_path, "--data");
  require_file(vocab_path, "--vocab");
  TreeSource tree_source = TreeSource::parse(trees);
  fs::path dir = ensure_out_dir(out);

  FusionModel model = load_checkpoint(checkpoint_path);
  Vocab vocab = load_vocab_file(vocab_path);
  if (vocab.size() != model.config.encoder.vocab_size) {
    throw CompatError("checkpoint was trained with vocab size " +
                      std::to_string(model.config.encoder.vocab_size) +
                      ", got " + std::to_string(vocab.size()));
  }
  auto sentences = load_dataset(data_path, vocab);
  sentences = tree_source.apply(std::move(sentences), vocab, seed);

  PreparedDataset data;
  try {
    data = prepare_dataset(std::move(sentences), vocab, model.config.task);
  } catch (const Error& e) {
    throw CompatError(e.what()); // dataset/head mismatch
  }
  MetricsReport report = eval_model(model, data);

  std::string csv = "sentence_id,f1,flag\n";
  for (size_t i = 0; i < report.per_sentence_f1.size(); ++i) {
    csv += std::to_string(i) + ',' + fmt_double(report.per_sentence_f1[i]) +
           ',' + (report.per_sentence_flagged[i] ? "empty" : "ok") + '\n';
  }
  write_text(dir / "metrics.csv", csv);

  json echo = config_echo_base("eval", seed);
  echo["checkpoint"] = checkpoint_path;
  echo["data"] = data_path;
  echo["trees"] = tree_source.describe();
  echo["precision"] = report.precision;
  echo["recall"] = report.recall;
  echo["f1"] = report.f1;
  echo["accuracy"] = report.accuracy;
  echo["zero_support"] = report.zero_support;
  write_text(dir / "config.echo", echo.dump(2) + "\n");

  std::cout << "P=" << fmt4(report.precision) << " R=" << fmt4(report.recall)
            << " F1=" << fmt4(report.f1) << "\n";
  return kExitOk;
}

// --- perturb -----------------------------------------------------------------------

int cmd_perturb(const std::string& data_path, const std::string& out,
                double rate, uint64_t seed) {
  require_file(data_path, "--data");
  if (rate < 0.0 || rate > 1.0) {
    throw ConfigError("--rate: must lie in [0, 1]");
  }
  fs::path dir = ensure_out_dir(out);

  // Tokenization is irrelevant here; an empty vocab maps tokens to [UNK].
  Vocab vocab = Vocab::from_pieces({});
  auto sentences = load_dataset(data_path, vocab);
  Rng rng = Rng(seed).split("corrupt");
  auto corrupted = corrupt_dataset(sentences, rate, rng);
  double mean_uas = 0.0;
  for (size_t i = 0; i < sentences.size(); ++i) {
    mean_uas += uas(corrupted[i].tree, sentences[i].tree);
  }
  if (!sentences.empty()) mean_uas /= static_cast<double>(sentences.size());
  save_dataset((dir / "perturbed.jsonl").string(), corrupted);

  json echo = config_echo_base("perturb", seed);
  echo["data"] = data_path;
  echo["rate"] = rate;
  echo["mean_uas"] = mean_uas;
  write_text(dir / "config.echo", echo.dump(2) + "\n");

  std::cout << "mean UAS vs original: " << fmt4(mean_uas) << "\n";
  return kExitOk;
}

// --- gradcheck ---------------------------------------------------------------------

int cmd_gradcheck(int seeds, const std::string& defect) {
  auto results = run_gradient_suite(seeds, defect);
  bool all_pass = true;
  std::string failing;
  for (const auto& r : results) {
    std::cout << (r.pass ? "ok   " : "FAIL ") << r.layer
              << " max_rel_err=" << fmt_double(r.max_rel_err)
              << " tol=" << fmt_double(r.tolerance) << "\n";
    if (!r.pass) {
      all_pass = false;
      if (failing.empty()) failing = r.layer;
    }
  }
  if (!all_pass) {
    std::cout << "gradient check failed in layer: " << failing << "\n";
    return kExitVerify;
  }
  return kExitOk;
}

// --- sensitivity ---------------------------------------------------------------------

int cmd_sensitivity(const std::string& gold_ckpt,
                    const std::string& noisy_ckpt,
                    const std::string& data_path,
                    const std::string& vocab_path, const std::string& out,
                    const std::string& rates_text, uint64_t seed) {
  require_file(gold_ckpt, "--checkpoint");
  require_file(noisy_ckpt, "--checkpoint-noisy");
  require_file(data_path, "--data");
  require_file(vocab_path, "--vocab");
  fs::path dir = ensure_out_dir(out);

  std::vector<double> rates;
  {
    std::string token;
    std::istringstream stream(rates_text);
    while (std::getline(stream, token, ',')) {
      if (token.empty()) continue;
      try {
        rates.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw ConfigError("--rates: bad value '" + token + "'");
      }
      if (rates.back() < 0.0 || rates.back() > 1.0) {
        throw ConfigError("--rates: values must lie in [0, 1]");
      }
    }
  }
  if (rates.empty()) throw ConfigError("--rates: empty grid");

  FusionModel gold_model = load_checkpoint(gold_ckpt);
  FusionModel noisy_model = load_checkpoint(noisy_ckpt);
  if (gold_model.config.task != noisy_model.config.task ||
      gold_model.config.encoder.vocab_size !=
          noisy_model.config.encoder.vocab_size) {
    throw CompatError("checkpoints disagree on task or vocabulary");
  }
  Vocab vocab = load_vocab_file(vocab_path);
  if (vocab.size() != gold_model.config.encoder.vocab_size) {
    throw CompatError("vocab size does not match the checkpoints");
  }
  auto sentences = load_dataset(data_path, vocab);

  Rng rng = Rng(seed).split("sensitivity");
  std::vector<SensitivityReport> reports;
  try {
    reports = sensitivity_experiment(gold_model, noisy_model, sentences,
                                     vocab, rates, rng);
  } catch (const Error& e) {
    throw CompatError(e.what());
  }
  write_sensitivity_metrics_csv(reports, (dir / "metrics.csv").string());
  write_sensitivity_fits_csv(reports, (dir / "sensitivity.csv").string());

  json echo = config_echo_base("sensitivity", seed);
  echo["checkpoint"] = gold_ckpt;
  echo["checkpoint_noisy"] = noisy_ckpt;
  echo["data"] = data_path;
  json jr = json::array();
  for (double r : rates) jr.push_back(r);
  echo["rates"] = jr;
  write_text(dir / "config.echo", echo.dump(2) + "\n");

  for (const auto& report : reports) {
    if (report.rate >= 0.0) continue;
    std::cout << report.condition << " pooled slope: "
              << (report.fit.degenerate ? std::string("undefined")
                                        : fmt_double(report.fit.slope))
              << "\n";
  }
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"syntax-fusion experiment driver"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  int synth_train = 2000, synth_dev = 200, synth_test = 500;
  int synth_vocab = 40, synth_classes = 8, synth_len_min = 5,
      synth_len_max = 12;
  uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--train", synth_train);
  synth->add_option("--dev", synth_dev);
  synth->add_option("--test", synth_test);
  synth->add_option("--vocab-size", synth_vocab);
  synth->add_option("--classes", synth_classes);
  synth->add_option("--len-min", synth_len_min);
  synth->add_option("--len-max", synth_len_max);
  synth->add_option("--seed", synth_seed);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string train_data, train_dev, train_vocab, train_out, train_trees;
  CommonModelFlags train_flags;
  uint64_t train_seed = 1;
  int train_epochs = 10;
  int train_batch = 8;
  double train_lr = 1e-3;
  train_cmd->add_option("--data", train_data)->required();
  train_cmd->add_option("--dev", train_dev);
  train_cmd->add_option("--vocab", train_vocab)->required();
  train_cmd->add_option("--out", train_out)->required();
  train_cmd->add_option("--task", train_flags.task);
  train_cmd->add_option("--variant", train_flags.variant);
  train_cmd->add_option("--joint-mode", train_flags.joint_mode);
  train_cmd->add_option("--trees", train_trees);
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--epochs", train_epochs);
  train_cmd->add_option("--batch-size", train_batch);
  train_cmd->add_option("--lr", train_lr);
  train_cmd->add_option("--dropout", train_flags.dropout);
  train_cmd->add_option("--layers", train_flags.layers);
  train_cmd->add_option("--gnn-layers", train_flags.gnn_layers);
  train_cmd->add_option("--heads", train_flags.heads);
  train_cmd->add_option("--d-model", train_flags.d_model);
  train_cmd->add_option("--d-ff", train_flags.d_ff);
  train_cmd->add_option("--max-len", train_flags.max_len);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_vocab, eval_out, eval_trees;
  uint64_t eval_seed = 1;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--vocab", eval_vocab)->required();
  eval_cmd->add_option("--out", eval_out)->required();
  eval_cmd->add_option("--trees", eval_trees);
  eval_cmd->add_option("--seed", eval_seed);

  // perturb
  auto* perturb_cmd = app.add_subcommand("perturb", "corrupt dataset trees");
  std::string perturb_data, perturb_out;
  double perturb_rate = 0.0;
  uint64_t perturb_seed = 1;
  perturb_cmd->add_option("--data", perturb_data)->required();
  perturb_cmd->add_option("--out", perturb_out)->required();
  perturb_cmd->add_option("--rate", perturb_rate)->required();
  perturb_cmd->add_option("--seed", perturb_seed);

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "run the gradient suite");
  int grad_seeds = 10;
  std::string grad_defect;
  grad_cmd->add_option("--seeds", grad_seeds);
  grad_cmd->add_option("--defect", grad_defect)
      ->description("sabotage a layer's backward rule (test fixture)");

  // sensitivity
  auto* sens_cmd =
      app.add_subcommand("sensitivity", "parse-quality sensitivity sweep");
  std::string sens_gold, sens_noisy, sens_data, sens_vocab, sens_out;
  std::string sens_rates = "0,0.1,0.2,0.3,0.4,0.5";
  uint64_t sens_seed = 1;
  sens_cmd->add_option("--checkpoint", sens_gold)->required();
  sens_cmd->add_option("--checkpoint-noisy", sens_noisy)->required();
  sens_cmd->add_option("--data", sens_data)->required();
  sens_cmd->add_option("--vocab", sens_vocab)->required();
  sens_cmd->add_option("--out", sens_out)->required();
  sens_cmd->add_option("--rates", sens_rates);
  sens_cmd->add_option("--seed", sens_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
      return app.exit(e);
    }
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(synth_out, synth_train, synth_dev, synth_test,
                       synth_vocab, synth_classes, synth_len_min,
                       synth_len_max, synth_seed);
    }
    if (train_cmd->parsed()) {
      return cmd_train(train_data, train_dev, train_vocab, train_out,
                       train_flags, train_trees, train_seed, train_epochs,
                       train_lr, train_batch);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_ckpt, eval_data, eval_vocab, eval_out, eval_trees,
                      eval_seed);
    }
    if (perturb_cmd->parsed()) {
      return cmd_perturb(perturb_data, perturb_out, perturb_rate,
                         perturb_seed);
    }
    if (grad_cmd->parsed()) {
      return cmd_gradcheck(grad_seeds, grad_defect);
    }
    if (sens_cmd->parsed()) {
      return cmd_sensitivity(sens_gold, sens_noisy, sens_data, sens_vocab,
                             sens_out, sens_rates, sens_seed);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CompatError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return kExitCompat;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
