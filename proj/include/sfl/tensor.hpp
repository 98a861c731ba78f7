#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfl {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Deterministic splitmix64 stream. All randomness in the project flows
// through this type so runs are reproducible bit-for-bit across platforms
// (std:: distributions are implementation-defined).
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  double uniform();                     // [0, 1)
  double uniform(double lo, double hi); // [lo, hi)
  double normal();                      // standard normal, Box-Muller
  int uniform_int(int n);               // [0, n)

  // Derive an independent labeled substream (init, dropout, shuffle, ...).
  Rng split(const std::string& label) const;

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
      std::swap(items[i], items[uniform_int(i + 1)]);
    }
  }

private:
  uint64_t state_;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad; // empty until backward touches this node
  bool requires_grad = false;
  int node_id = -1;         // id on the tape identified by owner_serial
  uint64_t owner_serial = 0;
};

// Dense 64-bit tensor handle. Copies are shallow; the underlying buffer is
// shared. Tensors that do not require gradients are treated as immutable
// once built and may be shared across threads.
class Tensor {
public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[i]; }
  int64_t size() const { return static_cast<int64_t>(impl_->value.size()); }

  const std::vector<double>& value() const { return impl_->value; }
  std::vector<double>& value() { return impl_->value; }
  double item() const;                  // requires size() == 1
  double at(int i) const { return impl_->value[i]; }
  double at(int r, int c) const;        // rank-2 access

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
  std::shared_ptr<TensorImpl> impl_;
};

enum class OpKind {
  add, add_rowvec, sub, mul, scale, add_scalar, matmul, transpose, reshape,
  concat_rows, concat_cols, slice_cols, slice_rows, gather_rows, pick,
  rowmax_pool, masked_softmax, layer_norm, gelu, gelu_defective, sigmoid,
  dropout, sum_all, logsumexp_rows, graph_scores, edge_softmax,
  graph_aggregate,
};

const char* op_name(OpKind op);

struct TapeEntry {
  OpKind op;
  std::vector<int> inputs; // node ids
  int output = -1;
  std::function<void()> backward; // saved values live in the closure
};

// Reverse-mode differentiation tape. Construction pushes the tape as the
// thread-local active tape; destruction pops it. Append order is the
// topological order of the recorded forward pass. A tape never crosses
// threads.
class Tape {
public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Reverse sweep from a scalar loss. Populates grad buffers of every
  // requires_grad tensor that participated. A second call without a fresh
  // tape is an error.
  void backward(const Tensor& loss);

  const std::vector<TapeEntry>& entries() const { return entries_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  uint64_t serial() const { return serial_; }

  int track(const Tensor& t);
  void record(OpKind op, const std::vector<Tensor>& inputs,
              const Tensor& output, std::function<void()> fn);

private:
  std::vector<TapeEntry> entries_;
  std::vector<std::shared_ptr<TensorImpl>> nodes_;
  bool backward_done_ = false;
  uint64_t serial_ = 0;
  Tape* prev_ = nullptr;
};

// Temporarily disables recording on the active tape (evaluation passes,
// finite-difference probes).
class TapePause {
public:
  TapePause();
  ~TapePause();
  TapePause(const TapePause&) = delete;
  TapePause& operator=(const TapePause&) = delete;

private:
  Tape* saved_;
};

// --- forward operations -------------------------------------------------
// Every op validates shapes, checks its output for NaN/Inf (overflow is an
// error, never a propagated value), and records a tape entry when an input
// requires gradients and a tape is active.

Tensor add(const Tensor& a, const Tensor& b); // same shape, or [m x d] + [d]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int start, int width);
Tensor slice_rows(const Tensor& a, int start, int rows);
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
Tensor pick(const Tensor& a, const std::vector<int>& flat_indices);
Tensor rowmax_pool(const Tensor& a, const std::vector<int>& rows);
Tensor masked_softmax(const Tensor& scores, const std::vector<uint8_t>& mask);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor dropout(const Tensor& x, double p, Rng& rng);
Tensor sum_all(const Tensor& x);
Tensor logsumexp_rows(const Tensor& x); // [r x c] -> [r]

// Verification fixture: forward identical to gelu, backward has a flipped
// sign, used as a negative control for the gradient checker.
Tensor gelu_defective(const Tensor& x);

// --- graph attention primitives ------------------------------------------
// Edges are laid out node-major: node 0's neighbors in adjacency order,
// then node 1's, and so on. Scores and weights exist only for these edges;
// nothing is ever computed outside the neighborhoods.

int64_t edge_count(const std::vector<std::vector<int>>& neighbors);

Tensor graph_scores(const Tensor& q, const Tensor& k,
                    const std::vector<std::vector<int>>& neighbors,
                    double scale);
Tensor edge_softmax(const Tensor& scores,
                    const std::vector<std::vector<int>>& neighbors);
Tensor graph_aggregate(const Tensor& alpha, const Tensor& v,
                       const std::vector<std::vector<int>>& neighbors);

// --- gradient checking ----------------------------------------------------

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int worst_input = -1;
  int64_t worst_elem = -1;
  std::vector<double> per_input_max;
  int64_t flagged = 0;
};

// Compares analytic gradients of a deterministic scalar function against
// central finite differences (f(x+h) - f(x-h)) / 2h. Relative error uses
// |a - n| / max(1, |a|, |n|). Throws if two forward passes disagree.
GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, double h = 1e-5, double tol = 1e-6);

// Same check restricted to `coords_per_input` randomly chosen coordinates
// of each input, for models too large to probe exhaustively.
GradCheckReport grad_check_sampled(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, double h, double tol,
    int64_t coords_per_input, Rng& rng);

} // namespace sfl
