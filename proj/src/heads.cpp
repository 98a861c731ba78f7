#include "sfl/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sfl {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kBannedPenalty = -1e9;
} // namespace

// --- TagSet -----------------------------------------------------------

TagSet TagSet::from_tags(std::vector<std::string> tags) {
  TagSet ts;
  bool has_o = false;
  for (const auto& t : tags) {
    if (ts.index_.count(t)) throw Error("TagSet: duplicate tag '" + t + "'");
    ts.index_[t] = static_cast<int>(ts.tags_.size());
    ts.tags_.push_back(t);
    if (t == "O") has_o = true;
  }
  if (!has_o) throw Error("TagSet: missing O tag");
  for (const auto& t : ts.tags_) {
    if (t.rfind("I-", 0) == 0 && !ts.index_.count("B-" + t.substr(2))) {
      throw Error("TagSet: " + t + " has no matching B- tag");
    }
    if (t != "O" && t.rfind("B-", 0) != 0 && t.rfind("I-", 0) != 0) {
      throw Error("TagSet: tag '" + t + "' is not O, B-X, or I-X");
    }
  }
  return ts;
}

int TagSet::id(const std::string& tag) const {
  auto it = index_.find(tag);
  if (it == index_.end()) throw Error("TagSet: unknown tag '" + tag + "'");
  return it->second;
}

const std::string& TagSet::tag(int id) const {
  if (id < 0 || id >= size()) {
    throw Error("TagSet: id " + std::to_string(id) + " out of range");
  }
  return tags_[id];
}

// --- CrfParams -------------------------------------------------------------

CrfParams CrfParams::init(int d_model, int num_tags, Rng& rng) {
  if (num_tags < 1) throw Error("CrfParams: need at least one tag");
  CrfParams p;
  p.emission = Tensor::randn({d_model, num_tags}, rng, kInitStd);
  p.transitions = Tensor::zeros({num_tags, num_tags});
  p.start = Tensor::zeros({num_tags});
  p.end = Tensor::zeros({num_tags});
  return p;
}

void CrfParams::set_bio_constraints(const TagSet& tags) {
  const int t = tags.size();
  if (t != num_tags()) throw Error("CrfParams: tag set size mismatch");
  banned.assign(static_cast<size_t>(t) * t, 0);
  banned_start.assign(t, 0);
  for (int to = 0; to < t; ++to) {
    const std::string& name = tags.tag(to);
    if (name.rfind("I-", 0) != 0) continue;
    banned_start[to] = 1;
    const std::string kind = name.substr(2);
    for (int from = 0; from < t; ++from) {
      const std::string& prev = tags.tag(from);
      const bool ok = (prev == "B-" + kind) || (prev == "I-" + kind);
      if (!ok) banned[static_cast<size_t>(from) * t + to] = 1;
    }
  }
}

void CrfParams::collect(const std::string& prefix,
                        std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".emission", emission});
  out.push_back({prefix + ".transitions", transitions});
  out.push_back({prefix + ".start", start});
  out.push_back({prefix + ".end", end});
}

namespace {

// Transitions with the BIO penalty folded in as a constant offset.
Tensor effective_transitions(const CrfParams& params) {
  if (params.banned.empty()) return params.transitions;
  const int t = params.num_tags();
  std::vector<double> penalty(static_cast<size_t>(t) * t, 0.0);
  for (size_t i = 0; i < params.banned.size(); ++i) {
    if (params.banned[i]) penalty[i] = kBannedPenalty;
  }
  return add(params.transitions, Tensor({t, t}, std::move(penalty)));
}

Tensor effective_start(const CrfParams& params) {
  if (params.banned_start.empty()) return params.start;
  const int t = params.num_tags();
  std::vector<double> penalty(t, 0.0);
  for (int i = 0; i < t; ++i) {
    if (params.banned_start[i]) penalty[i] = kBannedPenalty;
  }
  return add(params.start, Tensor({t}, std::move(penalty)));
}

} // namespace

Tensor crf_log_likelihood(const Tensor& states, const std::vector<int>& tags,
                          const CrfParams& params) {
  const int n = states.dim(0);
  const int t = params.num_tags();
  if (static_cast<int>(tags.size()) != n) {
    throw Error("crf_log_likelihood: " + std::to_string(tags.size()) +
                " tags for " + std::to_string(n) + " tokens");
  }
  for (int y : tags) {
    if (y < 0 || y >= t) {
      throw Error("crf_log_likelihood: tag id " + std::to_string(y) +
                  " out of range (T=" + std::to_string(t) + ")");
    }
  }
  Tensor emissions = matmul(states, params.emission); // n x T
  Tensor trans = effective_transitions(params);
  Tensor start = effective_start(params);

  // Gold path score.
  std::vector<int> emit_idx(n);
  for (int i = 0; i < n; ++i) emit_idx[i] = i * t + tags[i];
  Tensor gold = sum_all(pick(emissions, emit_idx));
  gold = add(gold, sum_all(pick(start, {tags[0]})));
  gold = add(gold, sum_all(pick(params.end, {tags[n - 1]})));
  if (n > 1) {
    std::vector<int> trans_idx(n - 1);
    for (int i = 1; i < n; ++i) trans_idx[i - 1] = tags[i - 1] * t + tags[i];
    gold = add(gold, sum_all(pick(trans, trans_idx)));
  }

  // Forward algorithm in log space.
  Tensor alpha = add(slice_rows(emissions, 0, 1), reshape(start, {1, t}));
  Tensor ones_row = Tensor::ones({1, t});
  for (int i = 1; i < n; ++i) {
    // M[a][b] = alpha[a] + trans[a][b]; reduce over a.
    Tensor m = add(matmul(transpose(alpha), ones_row), trans);
    Tensor reduced = logsumexp_rows(transpose(m)); // [t]
    alpha = add(reshape(reduced, {1, t}), slice_rows(emissions, i, 1));
  }
  Tensor log_z = logsumexp_rows(add(alpha, reshape(params.end, {1, t})));
  return sub(gold, log_z);
}

ViterbiResult viterbi_decode(const Tensor& states, const CrfParams& params) {
  TapePause pause; // pure inference
  const int n = states.dim(0);
  const int t = params.num_tags();
  Tensor emissions = matmul(states, params.emission);
  std::vector<double> trans(effective_transitions(params).value());
  std::vector<double> start(effective_start(params).value());

  std::vector<double> score(t);
  for (int j = 0; j < t; ++j) {
    score[j] = start[j] + emissions.at(0, j);
  }
  std::vector<int> backptr(static_cast<size_t>(std::max(0, n - 1)) * t);
  std::vector<double> next(t);
  for (int i = 1; i < n; ++i) {
    for (int j = 0; j < t; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int best_from = 0;
      for (int a = 0; a < t; ++a) {
        const double s = score[a] + trans[static_cast<size_t>(a) * t + j];
        if (s > best) { // strict: ties keep the lowest previous tag id
          best = s;
          best_from = a;
        }
      }
      next[j] = best + emissions.at(i, j);
      backptr[static_cast<size_t>(i - 1) * t + j] = best_from;
    }
    std::swap(score, next);
  }
  for (int j = 0; j < t; ++j) score[j] += params.end.at(j);

  ViterbiResult result;
  int best_last = 0;
  double best = score[0];
  for (int j = 1; j < t; ++j) {
    if (score[j] > best) {
      best = score[j];
      best_last = j;
    }
  }
  result.score = best;
  result.tags.assign(n, 0);
  result.tags[n - 1] = best_last;
  for (int i = n - 2; i >= 0; --i) {
    result.tags[i] = backptr[static_cast<size_t>(i) * t + result.tags[i + 1]];
  }
  return result;
}

// --- spans -----------------------------------------------------------------

std::vector<LabeledSpan> extract_spans(const std::vector<std::string>& tags) {
  std::vector<LabeledSpan> spans;
  std::string open_label;
  int open_start = -1;
  auto close = [&](int end) {
    if (open_start >= 0) {
      spans.push_back({open_start, end, open_label});
      open_start = -1;
      open_label.clear();
    }
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const std::string& tag = tags[i];
    if (tag == "O") {
      close(i);
    } else if (tag.rfind("B-", 0) == 0) {
      close(i);
      open_start = i;
      open_label = tag.substr(2);
    } else if (tag.rfind("I-", 0) == 0) {
      const std::string label = tag.substr(2);
      if (open_start < 0 || label != open_label) {
        close(i); // orphan I-X starts a fresh span
        open_start = i;
        open_label = label;
      }
    } else {
      throw Error("extract_spans: malformed tag '" + tag + "'");
    }
  }
  close(static_cast<int>(tags.size()));
  return spans;
}

std::vector<std::string> render_tags(const std::vector<LabeledSpan>& spans,
                                     int n) {
  std::vector<std::string> tags(n, "O");
  std::vector<LabeledSpan> sorted(spans);
  std::sort(sorted.begin(), sorted.end());
  int last_end = 0;
  for (const auto& span : sorted) {
    if (span.start < last_end || span.end > n || span.start >= span.end) {
      throw Error("render_tags: spans must be disjoint and in range");
    }
    last_end = span.end;
    tags[span.start] = "B-" + span.label;
    for (int i = span.start + 1; i < span.end; ++i) {
      tags[i] = "I-" + span.label;
    }
  }
  return tags;
}

// --- relation head ---------------------------------------------------------

ReHeadParams ReHeadParams::init(int d_model,
                                std::vector<std::string> relations, Rng& rng) {
  if (relations.empty()) throw Error("ReHeadParams: no relation labels");
  ReHeadParams p;
  p.classifier = Tensor::randn({3 * d_model, static_cast<int>(relations.size())},
                               rng, kInitStd);
  p.bias = Tensor::zeros({static_cast<int>(relations.size())});
  p.relations = std::move(relations);
  return p;
}

void ReHeadParams::collect(const std::string& prefix,
                           std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".classifier", classifier});
  out.push_back({prefix + ".bias", bias});
}

Tensor re_classify(const Tensor& states, Span subj, Span obj,
                   const std::vector<uint8_t>& prune_mask,
                   const ReHeadParams& params) {
  const int n = states.dim(0);
  if (static_cast<int>(prune_mask.size()) != n) {
    throw Error("re_classify: prune mask length mismatch");
  }
  auto span_rows = [&](Span s, const char* name) {
    if (s.start < 0 || s.end > n || s.start >= s.end) {
      throw Error(std::string("re_classify: ") + name + " span out of range");
    }
    std::vector<int> rows;
    for (int i = s.start; i < s.end; ++i) rows.push_back(i);
    return rows;
  };
  std::vector<int> masked_rows;
  for (int i = 0; i < n; ++i) {
    if (prune_mask[i]) masked_rows.push_back(i);
  }
  if (masked_rows.empty()) {
    throw Error("re_classify: empty prune mask"); // lca_prune never yields one
  }
  Tensor sentence = rowmax_pool(states, masked_rows);
  Tensor subject = rowmax_pool(states, span_rows(subj, "subj"));
  Tensor object = rowmax_pool(states, span_rows(obj, "obj"));
  const int d = states.dim(1);
  Tensor features = concat_cols({reshape(sentence, {1, d}),
                                 reshape(subject, {1, d}),
                                 reshape(object, {1, d})});
  Tensor scores = add(matmul(features, params.classifier),
                      reshape(params.bias, {1, params.num_relations()}));
  return reshape(scores, {params.num_relations()});
}

} // namespace sfl
