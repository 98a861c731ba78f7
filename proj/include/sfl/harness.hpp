#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sfl/fusion.hpp"

namespace sfl {

// --- optimizer ------------------------------------------------------------

struct AdamConfig {
  double base_lr = 1e-3;
  int total_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  AdamConfig config;
  int step = 0;
  std::vector<std::vector<double>> m; // first moments, aligned with params
  std::vector<std::vector<double>> v; // second moments

  static OptimState init(const std::vector<NamedParam>& params,
                         AdamConfig config);
};

// Bias-corrected Adam with linear learning-rate decay
// lr(step) = base_lr * (1 - step / total_steps). Reads gradients from the
// parameter tensors and clears nothing; callers zero grads afterwards.
void adam_step(std::vector<NamedParam>& params, OptimState& state);

// Learning rate the next adam_step will use.
double adam_lr(const OptimState& state);

// --- metrics ----------------------------------------------------------------

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0; // token-level tag accuracy; exact match for RE
  std::vector<double> per_sentence_f1;
  std::vector<uint8_t> per_sentence_flagged; // zero-gold zero-pred rows
  int64_t gold_count = 0;
  int64_t pred_count = 0;
  int64_t correct_count = 0;
  bool zero_support = false; // RE with no positive instances anywhere
};

struct PreparedDataset {
  TaskKind task = TaskKind::tagging;
  std::vector<Sentence> sentences;
  std::vector<SentenceInput> inputs;

  size_t size() const { return sentences.size(); }
};

PreparedDataset prepare_dataset(std::vector<Sentence> sentences,
                                const Vocab& vocab, TaskKind task);

MetricsReport eval_spans(const FusionModel& model, const PreparedDataset& data);
MetricsReport eval_relations(const FusionModel& model,
                             const PreparedDataset& data);
MetricsReport eval_model(const FusionModel& model, const PreparedDataset& data);

// --- training ---------------------------------------------------------------

struct TrainConfig {
  int epochs = 10;
  uint64_t seed = 1;
  double base_lr = 1e-3;
  double dropout_p = 0.1;
  int batch_size = 1; // gradients accumulate over this many sentences
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0; // mean per-sentence loss
  MetricsReport dev;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  int best_epoch = -1; // epoch whose checkpoint was kept
};

// Trains in place and leaves the best-dev-F1 checkpoint in `model`.
TrainResult train(FusionModel& model, const PreparedDataset& train_data,
                  const PreparedDataset& dev_data, const TrainConfig& config);

// --- synthetic task -----------------------------------------------------------

struct SyntheticSpec {
  int vocab_size = 40;  // V
  int num_classes = 8;  // C, tag of a token = class of its head token
  int len_lo = 5;
  int len_hi = 12;
};

struct SyntheticData {
  std::vector<Sentence> sentences;
  std::vector<std::string> token_types;
  std::vector<std::string> tag_names; // O first, then B-c*
};

SyntheticData make_synthetic(const SyntheticSpec& spec, int count, Rng& rng);
Vocab synthetic_vocab(const SyntheticSpec& spec);
TagSet synthetic_tagset(const SyntheticSpec& spec);

// Monte-Carlo estimate of the best tree-blind accuracy on the synthetic
// task: the root copies its own class, every other token's head is uniform
// over the prefix, so the optimal guess is the majority class of the
// prefix.
double synthetic_bayes_accuracy(const SyntheticSpec& spec, int num_sentences,
                                Rng& rng);

// --- parse-quality sensitivity ---------------------------------------------

struct OlsFit {
  double slope = 0.0;
  double intercept = 0.0;
  int n = 0;
  bool degenerate = false; // undefined slope (no x variance)
};

OlsFit ols_fit(const std::vector<std::pair<double, double>>& pairs);

struct SentenceSensitivity {
  int sentence_id = 0;
  double uas = 0.0;
  double f1_ref = 0.0;
  double f1_noisy = 0.0;
};

struct SensitivityReport {
  std::string condition; // gold_trained | noisy_trained
  double rate = 0.0;     // -1 marks the pooled fit across all rates
  OlsFit fit;
  std::vector<SentenceSensitivity> rows; // empty for pooled reports
};

std::vector<SensitivityReport> sensitivity_experiment(
    const FusionModel& gold_model, const FusionModel& noisy_model,
    const std::vector<Sentence>& dataset, const Vocab& vocab,
    const std::vector<double>& rates, Rng& rng);

void write_sensitivity_metrics_csv(const std::vector<SensitivityReport>& reports,
                                   const std::string& path);
void write_sensitivity_fits_csv(const std::vector<SensitivityReport>& reports,
                                const std::string& path);

// --- persistence ----------------------------------------------------------------

// Binary checkpoint: magic, format version, JSON config block, then named
// tensors as (name length, name, rank, dims, little-endian float32 data).
void save_checkpoint(const FusionModel& model, const std::string& path);
FusionModel load_checkpoint(const std::string& path);

// --- misc -------------------------------------------------------------------------

// Worker cap from SFL_THREADS (default 1).
int env_thread_cap();

// Runs fn(0..n-1) across up to `workers` threads; outputs must be written
// by index so the merge is deterministic.
void parallel_for(int64_t n, int workers,
                  const std::function<void(int64_t)>& fn);

std::vector<Sentence> corrupt_dataset(const std::vector<Sentence>& sentences,
                                      double rate, Rng& rng);

} // namespace sfl
