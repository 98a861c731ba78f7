#pragma once

#include <string>
#include <vector>

#include "sfl/nn.hpp"
#include "sfl/tensor.hpp"
#include "sfl/treebank.hpp"

namespace sfl {

// BIO tag inventory: O plus B-X/I-X pairs. Every I-X needs its B-X.
class TagSet {
public:
  static TagSet from_tags(std::vector<std::string> tags);

  int id(const std::string& tag) const;
  const std::string& tag(int id) const;
  int size() const { return static_cast<int>(tags_.size()); }
  const std::vector<std::string>& tags() const { return tags_; }

private:
  std::vector<std::string> tags_;
  std::unordered_map<std::string, int> index_;
};

struct CrfParams {
  Tensor emission;    // d_model x T
  Tensor transitions; // T x T
  Tensor start;       // T
  Tensor end;         // T
  // Optional hard BIO constraint: banned transitions and banned start tags
  // get a large negative penalty in scoring and decoding. Empty means
  // unconstrained.
  std::vector<uint8_t> banned;       // T x T, row-major (from, to)
  std::vector<uint8_t> banned_start; // T

  static CrfParams init(int d_model, int num_tags, Rng& rng);
  void set_bio_constraints(const TagSet& tags);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
  int num_tags() const { return start.dim(0); }
};

// log p(tags | states) = score(tags) - logZ, with logZ from the forward
// algorithm in log space. Differentiable through emissions and all CRF
// parameters.
Tensor crf_log_likelihood(const Tensor& states, const std::vector<int>& tags,
                          const CrfParams& params);

struct ViterbiResult {
  std::vector<int> tags;
  double score = 0.0;
};

// Exact argmax decode; ties break toward the lowest tag id.
ViterbiResult viterbi_decode(const Tensor& states, const CrfParams& params);

struct LabeledSpan {
  int start = 0;
  int end = 0; // exclusive
  std::string label;

  bool operator==(const LabeledSpan&) const = default;
  bool operator<(const LabeledSpan& o) const {
    return std::tie(start, end, label) < std::tie(o.start, o.end, o.label);
  }
};

// Maximal B-X (I-X)* runs; an orphan I-X opens a new span (relaxed repair).
std::vector<LabeledSpan> extract_spans(const std::vector<std::string>& tags);
std::vector<std::string> render_tags(const std::vector<LabeledSpan>& spans,
                                     int n);

struct ReHeadParams {
  Tensor classifier; // 3 * d_model x R
  Tensor bias;       // R
  std::vector<std::string> relations; // id -> label, includes no_relation

  static ReHeadParams init(int d_model, std::vector<std::string> relations,
                           Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
  int num_relations() const { return bias.dim(0); }
};

// Max-pooled sentence vector over the pruned token set, concatenated with
// max-pooled subject and object vectors, then a linear classifier.
Tensor re_classify(const Tensor& states, Span subj, Span obj,
                   const std::vector<uint8_t>& prune_mask,
                   const ReHeadParams& params);

} // namespace sfl
