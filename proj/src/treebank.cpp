#include "sfl/treebank.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace sfl {

namespace {

using json = nlohmann::ordered_json;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

bool parse_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  size_t i = 0;
  bool neg = false;
  if (s[0] == '-') {
    neg = true;
    i = 1;
    if (s.size() == 1) return false;
  }
  long v = 0;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
    if (v > 1'000'000) return false;
  }
  out = static_cast<int>(neg ? -v : v);
  return true;
}

} // namespace

// --- DepTree -----------------------------------------------------------

void DepTree::validate() const {
  if (n < 1) throw Error("DepTree: empty tree");
  if (static_cast<int>(heads.size()) != n ||
      static_cast<int>(deprels.size()) != n) {
    throw Error("DepTree: heads/deprels length does not match n=" +
                std::to_string(n));
  }
  for (int i = 0; i < n; ++i) {
    if (heads[i] < 0 || heads[i] > n) {
      throw Error("DepTree: head " + std::to_string(heads[i]) +
                  " of token " + std::to_string(i + 1) + " out of range");
    }
    if (heads[i] == i + 1) {
      throw Error("DepTree: token " + std::to_string(i + 1) +
                  " attaches to itself");
    }
  }
  // Cycle check first so a rootless cycle reports as a cycle.
  for (int i = 0; i < n; ++i) {
    int cur = i + 1;
    int steps = 0;
    while (cur != 0) {
      cur = heads[cur - 1];
      if (++steps > n) {
        throw Error("DepTree: cycle detected involving token " +
                    std::to_string(i + 1));
      }
    }
  }
  int roots = 0;
  for (int h : heads) {
    if (h == 0) ++roots;
  }
  if (roots != 1) {
    throw Error("DepTree: multiple roots (" + std::to_string(roots) + ")");
  }
}

int DepTree::root() const {
  for (int i = 0; i < n; ++i) {
    if (heads[i] == 0) return i;
  }
  throw Error("DepTree: no root token");
}

std::vector<std::vector<int>> DepTree::children() const {
  std::vector<std::vector<int>> kids(n);
  for (int i = 0; i < n; ++i) {
    if (heads[i] > 0) kids[heads[i] - 1].push_back(i);
  }
  return kids;
}

std::vector<int> DepTree::descendants(int token) const {
  auto kids = children();
  std::vector<int> out;
  std::vector<int> stack(kids[token]);
  while (!stack.empty()) {
    int t = stack.back();
    stack.pop_back();
    out.push_back(t);
    for (int c : kids[t]) stack.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// --- WordpieceGraph -----------------------------------------------------

void WordpieceGraph::validate() const {
  if (static_cast<int>(neighbors.size()) != m ||
      static_cast<int>(origins.size()) != m) {
    throw Error("WordpieceGraph: adjacency size mismatch");
  }
  for (int i = 0; i < m; ++i) {
    if (neighbors[i].empty()) {
      throw Error("WordpieceGraph: node " + std::to_string(i) +
                  " has an empty neighborhood");
    }
    if (!std::is_sorted(neighbors[i].begin(), neighbors[i].end())) {
      throw Error("WordpieceGraph: unsorted adjacency list");
    }
    if (!std::binary_search(neighbors[i].begin(), neighbors[i].end(), i)) {
      throw Error("WordpieceGraph: node " + std::to_string(i) +
                  " lacks a self-loop");
    }
    for (int j : neighbors[i]) {
      if (j < 0 || j >= m) throw Error("WordpieceGraph: neighbor out of range");
      if (!std::binary_search(neighbors[j].begin(), neighbors[j].end(), i)) {
        throw Error("WordpieceGraph: edge " + std::to_string(i) + "-" +
                    std::to_string(j) + " is not symmetric");
      }
    }
  }
}

int64_t WordpieceGraph::undirected_edge_count_excl_self() const {
  int64_t count = 0;
  for (int i = 0; i < m; ++i) {
    for (int j : neighbors[i]) {
      if (j > i) ++count;
    }
  }
  return count;
}

// --- Vocab ----------------------------------------------------------------

namespace {
const char* kReserved[3] = {"[PAD]", "[UNK]", "[BOS]"};
}

void Vocab::push(const std::string& piece) {
  if (index_.count(piece)) {
    throw Error("Vocab: duplicate piece '" + piece + "'");
  }
  index_[piece] = static_cast<int>(pieces_.size());
  pieces_.push_back(piece);
}

Vocab Vocab::from_pieces(const std::vector<std::string>& pieces) {
  Vocab v;
  for (const char* r : kReserved) v.push(r);
  for (const auto& p : pieces) v.push(p);
  return v;
}

Vocab Vocab::load(std::istream& in) {
  Vocab v;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no < 3 && line != kReserved[line_no]) {
      throw Error("Vocab: line " + std::to_string(line_no + 1) +
                  " must be the reserved piece " +
                  std::string(kReserved[line_no]));
    }
    v.push(line);
    ++line_no;
  }
  if (v.size() < 3) throw Error("Vocab: missing reserved pieces");
  return v;
}

void Vocab::save(std::ostream& out) const {
  for (const auto& p : pieces_) out << p << "\n";
}

int Vocab::lookup(const std::string& piece) const {
  auto it = index_.find(piece);
  return it == index_.end() ? -1 : it->second;
}

const std::string& Vocab::piece(int id) const {
  if (id < 0 || id >= size()) {
    throw Error("Vocab: id " + std::to_string(id) + " out of range");
  }
  return pieces_[id];
}

// --- tokenize ------------------------------------------------------------

TokenizeResult tokenize(const std::vector<std::string>& tokens,
                        const Vocab& vocab) {
  TokenizeResult result;
  for (const auto& token : tokens) {
    const int begin = static_cast<int>(result.pieces.size());
    std::vector<std::string> sub;
    size_t start = 0;
    bool bad = token.empty();
    while (start < token.size()) {
      size_t end = token.size();
      std::string match;
      while (start < end) {
        std::string candidate = token.substr(start, end - start);
        if (start > 0) candidate = "##" + candidate;
        if (vocab.lookup(candidate) >= 0) {
          match = std::move(candidate);
          break;
        }
        --end;
      }
      if (match.empty()) {
        bad = true;
        break;
      }
      sub.push_back(std::move(match));
      start = end;
    }
    if (bad) {
      result.pieces.push_back(vocab.piece(Vocab::kUnk));
      ++result.unk_count;
    } else {
      for (auto& p : sub) result.pieces.push_back(std::move(p));
    }
    result.alignment.emplace_back(begin,
                                  static_cast<int>(result.pieces.size()));
  }
  return result;
}

// --- CoNLL-U -------------------------------------------------------------

std::vector<ConlluSentence> read_conllu(std::istream& in) {
  std::vector<ConlluSentence> sentences;
  std::vector<std::string> tokens;
  std::vector<int> heads;
  std::vector<std::string> deprels;
  int block_start_line = 0;

  std::string line;
  int line_no = 0;
  int block_index = 0;

  auto context = [&](int at_line) {
    return "block " + std::to_string(block_index) + " (line " +
           std::to_string(at_line) + ")";
  };

  auto finish_block = [&] {
    if (tokens.empty()) return;
    ConlluSentence s;
    s.tokens = std::move(tokens);
    s.tree.n = static_cast<int>(s.tokens.size());
    s.tree.heads = std::move(heads);
    s.tree.deprels = std::move(deprels);
    try {
      s.tree.validate();
    } catch (const Error& e) {
      throw Error("read_conllu: " + context(block_start_line) + ": " +
                  e.what());
    }
    sentences.push_back(std::move(s));
    tokens.clear();
    heads.clear();
    deprels.clear();
    ++block_index;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      finish_block();
      continue;
    }
    if (line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 10) {
      throw Error("read_conllu: " + context(line_no) + ": expected 10 "
                  "tab-separated columns, got " +
                  std::to_string(fields.size()));
    }
    const std::string& id = fields[0];
    if (id.find('-') != std::string::npos ||
        id.find('.') != std::string::npos) {
      continue; // range ids (multiword tokens) and empty nodes
    }
    int id_value = 0;
    if (!parse_int(id, id_value)) {
      throw Error("read_conllu: " + context(line_no) + ": non-integer ID '" +
                  id + "'");
    }
    if (tokens.empty()) block_start_line = line_no;
    if (id_value != static_cast<int>(tokens.size()) + 1) {
      throw Error("read_conllu: " + context(line_no) +
                  ": non-sequential ID " + id);
    }
    int head = 0;
    if (!parse_int(fields[6], head)) {
      throw Error("read_conllu: " + context(line_no) +
                  ": non-integer HEAD '" + fields[6] + "'");
    }
    tokens.push_back(fields[1]);
    heads.push_back(head);
    deprels.push_back(fields[7]);
  }
  finish_block();
  return sentences;
}

void write_conllu(std::ostream& out,
                  const std::vector<ConlluSentence>& sentences) {
  for (const auto& s : sentences) {
    for (int i = 0; i < s.tree.n; ++i) {
      out << i + 1 << '\t' << s.tokens[i] << "\t_\t_\t_\t_\t"
          << s.tree.heads[i] << '\t' << s.tree.deprels[i] << "\t_\t_\n";
    }
    out << '\n';
  }
}

// --- wordpiece graph -------------------------------------------------------

namespace {

WordpieceGraph build_graph_impl(
    const DepTree& tree, const std::vector<std::pair<int, int>>& alignment,
    const std::vector<uint8_t>* token_mask) {
  if (static_cast<int>(alignment.size()) != tree.n) {
    throw Error("build_wordpiece_graph: alignment covers " +
                std::to_string(alignment.size()) + " tokens, tree has " +
                std::to_string(tree.n));
  }
  int expected_begin = 0;
  for (const auto& [begin, end] : alignment) {
    if (begin != expected_begin || end <= begin) {
      throw Error("build_wordpiece_graph: alignment ranges must be "
                  "contiguous, ordered, and non-empty");
    }
    expected_begin = end;
  }
  const int m = expected_begin;

  std::vector<int> token_of(m);
  for (int t = 0; t < tree.n; ++t) {
    for (int p = alignment[t].first; p < alignment[t].second; ++p) {
      token_of[p] = t;
    }
  }

  std::vector<std::vector<int>> nbrs(m);
  auto connect = [&](int a, int b) {
    nbrs[a].push_back(b);
    nbrs[b].push_back(a);
  };
  for (int i = 0; i < m; ++i) nbrs[i].push_back(i); // self-loops
  for (int t = 0; t < tree.n; ++t) {
    // subword edges: first piece to each trailing piece
    for (int p = alignment[t].first + 1; p < alignment[t].second; ++p) {
      connect(alignment[t].first, p);
    }
    // tree edge to the head token's first piece
    const int h = tree.heads[t];
    if (h > 0) {
      if (token_mask && (!(*token_mask)[t] || !(*token_mask)[h - 1])) continue;
      connect(alignment[t].first, alignment[h - 1].first);
    }
  }

  WordpieceGraph graph;
  graph.m = m;
  graph.neighbors.resize(m);
  graph.origins.resize(m);
  for (int i = 0; i < m; ++i) {
    auto& list = nbrs[i];
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    graph.neighbors[i] = list;
    graph.origins[i].reserve(list.size());
    for (int j : list) {
      if (j == i) {
        graph.origins[i].push_back(WordpieceGraph::EdgeOrigin::self);
      } else if (token_of[j] == token_of[i]) {
        graph.origins[i].push_back(WordpieceGraph::EdgeOrigin::subword);
      } else {
        graph.origins[i].push_back(WordpieceGraph::EdgeOrigin::tree);
      }
    }
  }
  return graph;
}

} // namespace

WordpieceGraph build_wordpiece_graph(
    const DepTree& tree, const std::vector<std::pair<int, int>>& alignment) {
  return build_graph_impl(tree, alignment, nullptr);
}

WordpieceGraph build_wordpiece_graph(
    const DepTree& tree, const std::vector<std::pair<int, int>>& alignment,
    const std::vector<uint8_t>& token_mask) {
  if (static_cast<int>(token_mask.size()) != tree.n) {
    throw Error("build_wordpiece_graph: token mask size mismatch");
  }
  return build_graph_impl(tree, alignment, &token_mask);
}

// --- scores and corruption ---------------------------------------------------

double uas(const DepTree& predicted, const DepTree& gold) {
  if (predicted.n != gold.n) {
    throw Error("uas: token counts differ (" + std::to_string(predicted.n) +
                " vs " + std::to_string(gold.n) + ")");
  }
  int matches = 0;
  for (int i = 0; i < gold.n; ++i) {
    if (predicted.heads[i] == gold.heads[i]) ++matches;
  }
  return static_cast<double>(matches) / gold.n;
}

CorruptResult corrupt_tree(const DepTree& tree, double rate, Rng& rng) {
  if (rate < 0.0 || rate > 1.0) {
    throw Error("corrupt_tree: rate must lie in [0, 1]");
  }
  tree.validate();
  CorruptResult result;
  result.tree = tree;
  if (rate == 0.0) return result;
  if (tree.n < 3) {
    result.warning = true; // no legal rewiring target can exist
    return result;
  }

  const int k = static_cast<int>(rate * (tree.n - 1));
  std::vector<int> non_root;
  for (int i = 0; i < tree.n; ++i) {
    if (tree.heads[i] != 0) non_root.push_back(i);
  }
  // Partial Fisher-Yates: the first k entries are the selection.
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(static_cast<int>(non_root.size()) - i);
    std::swap(non_root[i], non_root[j]);
  }

  DepTree& out = result.tree;
  for (int s = 0; s < k; ++s) {
    const int t = non_root[s];
    const auto desc = out.descendants(t);
    std::vector<uint8_t> banned(out.n, 0);
    banned[t] = 1;
    if (out.heads[t] > 0) banned[out.heads[t] - 1] = 1;
    for (int d : desc) banned[d] = 1;
    std::vector<int> candidates;
    for (int c = 0; c < out.n; ++c) {
      if (!banned[c]) candidates.push_back(c);
    }
    if (candidates.empty()) {
      ++result.skipped;
      continue;
    }
    const int new_head = candidates[rng.uniform_int(
        static_cast<int>(candidates.size()))];
    out.heads[t] = new_head + 1;
    out.deprels[t] = kCorruptedDeprel;
    ++result.rewired;
  }
  out.validate();
  return result;
}

std::vector<uint8_t> lca_prune(const DepTree& tree, Span span_a, Span span_b) {
  auto check_span = [&](Span s, const char* name) {
    if (s.start < 0 || s.end > tree.n || s.start >= s.end) {
      throw Error(std::string("lca_prune: invalid ") + name + " span [" +
                  std::to_string(s.start) + ", " + std::to_string(s.end) +
                  ") for n=" + std::to_string(tree.n));
    }
  };
  check_span(span_a, "subj");
  check_span(span_b, "obj");

  auto root_path = [&](int t) {
    std::vector<int> path; // root-first
    int cur = t + 1;
    while (cur != 0) {
      path.push_back(cur - 1);
      cur = tree.heads[cur - 1];
    }
    std::reverse(path.begin(), path.end());
    return path;
  };

  std::vector<int> members;
  for (int t = span_a.start; t < span_a.end; ++t) members.push_back(t);
  for (int t = span_b.start; t < span_b.end; ++t) members.push_back(t);

  auto prefix = root_path(members[0]);
  for (size_t i = 1; i < members.size(); ++i) {
    auto path = root_path(members[i]);
    size_t common = 0;
    while (common < prefix.size() && common < path.size() &&
           prefix[common] == path[common]) {
      ++common;
    }
    prefix.resize(common);
  }
  const int lca = prefix.back(); // paths share at least the root

  std::vector<uint8_t> mask(tree.n, 0);
  mask[lca] = 1;
  for (int d : tree.descendants(lca)) mask[d] = 1;
  return mask;
}

// --- dataset lines -------------------------------------------------------------

namespace {

Span parse_span(const json& j, const char* name, int n) {
  if (!j.is_array() || j.size() != 2) {
    throw Error(std::string("dataset: '") + name +
                "' must be a [start, end) pair");
  }
  Span s{j[0].get<int>(), j[1].get<int>()};
  if (s.start < 0 || s.end > n || s.start >= s.end) {
    throw Error(std::string("dataset: '") + name + "' span out of bounds");
  }
  return s;
}

std::vector<std::string> parse_string_list(const json& j, const char* name) {
  if (!j.is_array()) {
    throw Error(std::string("dataset: '") + name + "' must be an array");
  }
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(e.get<std::string>());
  return out;
}

} // namespace

Sentence parse_dataset_record(const std::string& line, const Vocab& vocab) {
  json j;
  try {
    j = json::parse(line);
  } catch (const std::exception& e) {
    throw Error(std::string("dataset: invalid JSON record: ") + e.what());
  }
  if (!j.contains("tokens") || !j.contains("heads") || !j.contains("deprels")) {
    throw Error("dataset: record needs tokens, heads, and deprels");
  }

  Sentence s;
  s.tokens = parse_string_list(j["tokens"], "tokens");
  const int n = s.num_tokens();
  s.tree.n = n;
  for (const auto& h : j["heads"]) s.tree.heads.push_back(h.get<int>());
  s.tree.deprels = parse_string_list(j["deprels"], "deprels");
  s.tree.validate();

  const bool has_tags = j.contains("tags");
  const bool has_pred = j.contains("predicate");
  const bool has_re =
      j.contains("subj") || j.contains("obj") || j.contains("relation");
  if (has_re && (has_tags || has_pred)) {
    throw Error("dataset: record mixes payload variants");
  }
  if (has_re) {
    if (!j.contains("subj") || !j.contains("obj") || !j.contains("relation")) {
      throw Error("dataset: relation records need subj, obj, and relation");
    }
    RePayload p;
    p.subj = parse_span(j["subj"], "subj", n);
    p.obj = parse_span(j["obj"], "obj", n);
    p.relation = j["relation"].get<std::string>();
    s.payload = p;
  } else if (has_pred) {
    if (!has_tags) throw Error("dataset: predicate records need tags");
    SrlPayload p;
    p.predicate = j["predicate"].get<int>();
    if (p.predicate < 0 || p.predicate >= n) {
      throw Error("dataset: predicate index out of bounds");
    }
    p.tags = parse_string_list(j["tags"], "tags");
    if (static_cast<int>(p.tags.size()) != n) {
      throw Error("dataset: tags length does not match tokens");
    }
    s.payload = p;
  } else if (has_tags) {
    TagSeqPayload p;
    p.tags = parse_string_list(j["tags"], "tags");
    if (static_cast<int>(p.tags.size()) != n) {
      throw Error("dataset: tags length does not match tokens");
    }
    s.payload = p;
  } else {
    throw Error("dataset: record carries no payload");
  }

  auto tok = tokenize(s.tokens, vocab);
  s.wordpieces = std::move(tok.pieces);
  s.alignment = std::move(tok.alignment);
  return s;
}

std::string render_dataset_record(const Sentence& sentence) {
  json j;
  j["tokens"] = sentence.tokens;
  j["heads"] = sentence.tree.heads;
  j["deprels"] = sentence.tree.deprels;
  if (const auto* p = std::get_if<TagSeqPayload>(&sentence.payload)) {
    j["tags"] = p->tags;
  } else if (const auto* p = std::get_if<SrlPayload>(&sentence.payload)) {
    j["predicate"] = p->predicate;
    j["tags"] = p->tags;
  } else if (const auto* p = std::get_if<RePayload>(&sentence.payload)) {
    j["subj"] = {p->subj.start, p->subj.end};
    j["obj"] = {p->obj.start, p->obj.end};
    j["relation"] = p->relation;
  }
  return j.dump();
}

std::vector<Sentence> load_dataset(const std::string& path,
                                   const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw Error("load_dataset: cannot open " + path);
  std::vector<Sentence> sentences;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      sentences.push_back(parse_dataset_record(line, vocab));
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return sentences;
}

void save_dataset(const std::string& path,
                  const std::vector<Sentence>& sentences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_dataset: cannot open " + path);
  for (const auto& s : sentences) {
    out << render_dataset_record(s) << "\n";
  }
}

} // namespace sfl
