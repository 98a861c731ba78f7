#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

// Dependency tree over sentence tokens. Head indices are 1-based with 0
// marking the root token's head, matching the ingestion format.
struct DepTree {
  int n = 0;
  std::vector<int> heads;
  std::vector<std::string> deprels;

  // Throws Error on: bad sizes, out-of-range heads, self-attachment,
  // cycles, zero or multiple roots.
  void validate() const;

  int root() const; // 0-based index of the root token
  std::vector<std::vector<int>> children() const; // 0-based adjacency
  std::vector<int> descendants(int token) const;  // 0-based, excludes token
};

inline constexpr const char* kCorruptedDeprel = "@corrupted";

struct TagSeqPayload {
  std::vector<std::string> tags;
};
struct SrlPayload {
  int predicate = 0; // 0-based token index
  std::vector<std::string> tags;
};
struct Span {
  int start = 0; // [start, end) token indices
  int end = 0;
};
struct RePayload {
  Span subj;
  Span obj;
  std::string relation;
};
using Payload = std::variant<TagSeqPayload, SrlPayload, RePayload>;

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<std::string> wordpieces;
  std::vector<std::pair<int, int>> alignment; // [begin, end) per token
  DepTree tree;
  Payload payload;

  int num_tokens() const { return static_cast<int>(tokens.size()); }
  int num_pieces() const { return static_cast<int>(wordpieces.size()); }
};

// Wordpiece-level graph: token tree edges between first pieces, first piece
// to trailing pieces within a token, self-loops everywhere. Symmetric.
struct WordpieceGraph {
  enum class EdgeOrigin : uint8_t { tree, subword, self };

  int m = 0;
  std::vector<std::vector<int>> neighbors;          // sorted per node
  std::vector<std::vector<EdgeOrigin>> origins;     // parallel to neighbors

  void validate() const;
  int64_t undirected_edge_count_excl_self() const;
};

class Vocab {
public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;

  // Reserved pieces occupy the first three ids.
  static Vocab from_pieces(const std::vector<std::string>& pieces);
  static Vocab load(std::istream& in);
  void save(std::ostream& out) const;

  int lookup(const std::string& piece) const; // -1 when absent
  const std::string& piece(int id) const;
  int size() const { return static_cast<int>(pieces_.size()); }

private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
  void push(const std::string& piece);
};

struct TokenizeResult {
  std::vector<std::string> pieces;
  std::vector<std::pair<int, int>> alignment;
  int unk_count = 0; // tokens replaced by [UNK]
};

// Greedy longest-match wordpiece segmentation with "##" continuations.
// A token with no match at some position becomes a single [UNK] piece.
TokenizeResult tokenize(const std::vector<std::string>& tokens,
                        const Vocab& vocab);

struct ConlluSentence {
  std::vector<std::string> tokens;
  DepTree tree;
};

std::vector<ConlluSentence> read_conllu(std::istream& in);
void write_conllu(std::ostream& out,
                  const std::vector<ConlluSentence>& sentences);

WordpieceGraph build_wordpiece_graph(
    const DepTree& tree, const std::vector<std::pair<int, int>>& alignment);

// Restricted variant for LCA pruning: tree edges are kept only when both
// endpoint tokens are in the mask; subword and self edges always remain.
WordpieceGraph build_wordpiece_graph(
    const DepTree& tree, const std::vector<std::pair<int, int>>& alignment,
    const std::vector<uint8_t>& token_mask);

// Unlabeled attachment score: fraction of tokens whose head matches gold.
double uas(const DepTree& predicted, const DepTree& gold);

struct CorruptResult {
  DepTree tree;
  int rewired = 0;  // tokens whose head actually changed
  int skipped = 0;  // selected tokens with no legal new head
  bool warning = false; // n < 3 with rate > 0: returned unchanged
};

// Rewires floor(rate * (n-1)) uniformly chosen non-root tokens to uniformly
// chosen new heads that keep the tree valid (not self, not the current
// head, not a descendant). Rewired edges get the sentinel deprel.
CorruptResult corrupt_tree(const DepTree& tree, double rate, Rng& rng);

// Token mask of the subtree rooted at the lowest common ancestor of all
// tokens in span_a and span_b. Always covers both spans.
std::vector<uint8_t> lca_prune(const DepTree& tree, Span span_a, Span span_b);

// --- dataset lines format (one JSON record per line) ---------------------

std::vector<Sentence> load_dataset(const std::string& path,
                                   const Vocab& vocab);
void save_dataset(const std::string& path,
                  const std::vector<Sentence>& sentences);
Sentence parse_dataset_record(const std::string& line, const Vocab& vocab);
std::string render_dataset_record(const Sentence& sentence);

} // namespace sfl
