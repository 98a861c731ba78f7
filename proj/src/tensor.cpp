#include "sfl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace sfl {

namespace {

uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

thread_local Tape* g_active_tape = nullptr;
uint64_t g_tape_serial = 0;

void ensure_finite(const std::vector<double>& v, OpKind op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw Error(std::string("op '") + op_name(op) +
                  "' produced a non-finite value (overflow or NaN)");
    }
  }
}

std::vector<double>& ensure_grad(const std::shared_ptr<TensorImpl>& impl) {
  if (impl->grad.empty()) {
    impl->grad.assign(impl->value.size(), 0.0);
  }
  return impl->grad;
}

using Impl = std::shared_ptr<TensorImpl>;

// Finalizes an op: finiteness check, output construction, and tape entry
// when recording applies. `fn` builds the backward closure once the output
// impl exists, so it can capture the output gradient buffer.
Tensor finish(OpKind op, const std::vector<Tensor>& inputs, Shape shape,
              std::vector<double> data,
              const std::function<std::function<void()>(const Impl&)>& fn) {
  ensure_finite(data, op);
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = Tape::active();
  if (tape) {
    bool rec = false;
    for (const Tensor& in : inputs) {
      if (in.requires_grad()) { rec = true; break; }
    }
    if (rec) {
      out.set_requires_grad(true);
      tape->record(op, inputs, out, fn(out.impl()));
    }
  }
  return out;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw Error(std::string(op) + ": expected a rank-2 tensor, got shape " +
                shape_str(t.shape()));
  }
}

} // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::add: return "add";
    case OpKind::add_rowvec: return "add_rowvec";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::pick: return "pick";
    case OpKind::rowmax_pool: return "rowmax_pool";
    case OpKind::masked_softmax: return "masked_softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::gelu: return "gelu";
    case OpKind::gelu_defective: return "gelu_defective";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::dropout: return "dropout";
    case OpKind::sum_all: return "sum_all";
    case OpKind::logsumexp_rows: return "logsumexp_rows";
    case OpKind::graph_scores: return "graph_scores";
    case OpKind::edge_softmax: return "edge_softmax";
    case OpKind::graph_aggregate: return "graph_aggregate";
  }
  return "unknown";
}

// --- Rng ---------------------------------------------------------------

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  double u = uniform();
  double v = uniform();
  if (u < 1e-300) u = 1e-300;
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw Error("Rng::uniform_int: n must be positive");
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

Rng Rng::split(const std::string& label) const {
  uint64_t s = state_ ^ fnv1a(label);
  splitmix64(s);
  return Rng(s);
}

// --- Tensor --------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data) {
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    throw Error("Tensor: shape " + shape_str(shape) + " does not match " +
                std::to_string(data.size()) + " values");
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->value = std::move(data);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  std::vector<double> data(static_cast<size_t>(numel(shape)), v);
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (double& x : data) x = rng.normal() * stddev;
  return Tensor(std::move(shape), std::move(data));
}

double Tensor::item() const {
  if (size() != 1) {
    throw Error("Tensor::item: expected a scalar, got shape " +
                shape_str(shape()));
  }
  return impl_->value[0];
}

double Tensor::at(int r, int c) const {
  return impl_->value[static_cast<size_t>(r) * dim(1) + c];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) {
    throw Error("Tensor::grad: no gradient buffer (backward not run)");
  }
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }
}

// --- Tape ----------------------------------------------------------------

Tape::Tape() : serial_(++g_tape_serial), prev_(g_active_tape) {
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

int Tape::track(const Tensor& t) {
  auto& impl = *t.impl();
  if (impl.owner_serial != serial_) {
    impl.owner_serial = serial_;
    impl.node_id = static_cast<int>(nodes_.size());
    nodes_.push_back(t.impl());
  }
  return impl.node_id;
}

void Tape::record(OpKind op, const std::vector<Tensor>& inputs,
                  const Tensor& output, std::function<void()> fn) {
  TapeEntry entry;
  entry.op = op;
  entry.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) entry.inputs.push_back(track(in));
  entry.output = track(output);
  auto out_impl = output.impl();
  entry.backward = [out_impl, fn = std::move(fn)] {
    if (out_impl->grad.empty()) return; // branch never reached the loss
    fn();
  };
  entries_.push_back(std::move(entry));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw Error("backward: loss must be a scalar");
  }
  if (loss.impl()->owner_serial != serial_) {
    throw Error(
        "backward: loss was not produced by a forward pass on this tape");
  }
  if (backward_done_) {
    throw Error("backward: called twice on one tape without a reset");
  }
  backward_done_ = true;
  ensure_grad(loss.impl())[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward();
  }
}

TapePause::TapePause() : saved_(g_active_tape) { g_active_tape = nullptr; }
TapePause::~TapePause() { g_active_tape = saved_; }

// --- elementwise and linear ops -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (b.rank() == 1 && a.rank() == 2 && a.dim(1) == b.dim(0)) {
    const int m = a.dim(0), d = a.dim(1);
    std::vector<double> out(a.value());
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < d; ++j) {
        out[static_cast<size_t>(i) * d + j] += b.at(j);
      }
    }
    Impl ai = a.impl(), bi = b.impl();
    return finish(OpKind::add_rowvec, {a, b}, a.shape(), std::move(out),
                  [&](const Impl& oi) {
                    return [ai, bi, oi, m, d] {
                      const auto& og = oi->grad;
                      if (ai->requires_grad) {
                        auto& ag = ensure_grad(ai);
                        for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
                      }
                      if (bi->requires_grad) {
                        auto& bg = ensure_grad(bi);
                        for (int i = 0; i < m; ++i) {
                          for (int j = 0; j < d; ++j) {
                            bg[j] += og[static_cast<size_t>(i) * d + j];
                          }
                        }
                      }
                    };
                  });
  }
  if (a.shape() != b.shape()) {
    throw Error("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  std::vector<double> out(a.value());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  Impl ai = a.impl(), bi = b.impl();
  return finish(OpKind::add, {a, b}, a.shape(), std::move(out),
                [&](const Impl& oi) {
                  return [ai, bi, oi] {
                    const auto& og = oi->grad;
                    if (ai->requires_grad) {
                      auto& ag = ensure_grad(ai);
                      for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
                    }
                    if (bi->requires_grad) {
                      auto& bg = ensure_grad(bi);
                      for (size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
                    }
                  };
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  std::vector<double> out(a.value());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  Impl ai = a.impl(), bi = b.impl();
  return finish(OpKind::sub, {a, b}, a.shape(), std::move(out),
                [&](const Impl& oi) {
                  return [ai, bi, oi] {
                    const auto& og = oi->grad;
                    if (ai->requires_grad) {
                      auto& ag = ensure_grad(ai);
                      for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
                    }
                    if (bi->requires_grad) {
                      auto& bg = ensure_grad(bi);
                      for (size_t i = 0; i < og.size(); ++i) bg[i] -= og[i];
                    }
                  };
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  std::vector<double> out(a.value());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Impl ai = a.impl(), bi = b.impl();
  return finish(OpKind::mul, {a, b}, a.shape(), std::move(out),
                [&](const Impl& oi) {
                  return [ai, bi, oi] {
                    const auto& og = oi->grad;
                    if (ai->requires_grad) {
                      auto& ag = ensure_grad(ai);
                      for (size_t i = 0; i < og.size(); ++i) {
                        ag[i] += og[i] * bi->value[i];
                      }
                    }
                    if (bi->requires_grad) {
                      auto& bg = ensure_grad(bi);
                      for (size_t i = 0; i < og.size(); ++i) {
                        bg[i] += og[i] * ai->value[i];
                      }
                    }
                  };
                });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.value());
  for (double& x : out) x *= c;
  Impl ai = a.impl();
  return finish(OpKind::scale, {a}, a.shape(), std::move(out),
                [&](const Impl& oi) {
                  return [ai, oi, c] {
                    if (!ai->requires_grad) return;
                    auto& ag = ensure_grad(ai);
                    const auto& og = oi->grad;
                    for (size_t i = 0; i < og.size(); ++i) ag[i] += c * og[i];
                  };
                });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.value());
  for (double& x : out) x += c;
  Impl ai = a.impl();
  return finish(OpKind::add_scalar, {a}, a.shape(), std::move(out),
                [&](const Impl& oi) {
                  return [ai, oi] {
                    if (!ai->requires_grad) return;
                    auto& ag = ensure_grad(ai);
                    const auto& og = oi->grad;
                    for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
                  };
                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw Error("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + static_cast<size_t>(p) * n;
      double* orow = out.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  Impl ai = a.impl(), bi = b.impl();
  return finish(
      OpKind::matmul, {a, b}, {m, n}, std::move(out), [&](const Impl& oi) {
        return [ai, bi, oi, m, k, n] {
          const auto& og = oi->grad;
          if (ai->requires_grad) {
            // dA += dC . B^T
            auto& ag = ensure_grad(ai);
            for (int i = 0; i < m; ++i) {
              for (int p = 0; p < k; ++p) {
                double s = 0.0;
                const double* orow = og.data() + static_cast<size_t>(i) * n;
                const double* brow = bi->value.data() + static_cast<size_t>(p) * n;
                for (int j = 0; j < n; ++j) s += orow[j] * brow[j];
                ag[static_cast<size_t>(i) * k + p] += s;
              }
            }
          }
          if (bi->requires_grad) {
            // dB += A^T . dC
            auto& bg = ensure_grad(bi);
            for (int p = 0; p < k; ++p) {
              for (int i = 0; i < m; ++i) {
                const double aip = ai->value[static_cast<size_t>(i) * k + p];
                if (aip == 0.0) continue;
                const double* orow = og.data() + static_cast<size_t>(i) * n;
                double* brow = bg.data() + static_cast<size_t>(p) * n;
                for (int j = 0; j < n; ++j) brow[j] += aip * orow[j];
              }
            }
          }
        };
      });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(static_cast<size_t>(r) * c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      out[static_cast<size_t>(j) * r + i] = a.at(i, j);
    }
  }
  Impl ai = a.impl();
  return finish(OpKind::transpose, {a}, {c, r}, std::move(out),
                [&](const Impl& oi) {
                  return [ai, oi, r, c] {
                    if (!ai->requires_grad) return;
                    auto& ag = ensure_grad(ai);
                    const auto& og = oi->grad;
                    for (int i = 0; i < r; ++i) {
                      for (int j = 0; j < c; ++j) {
                        ag[static_cast<size_t>(i) * c + j] +=
                            og[static_cast<size_t>(j) * r + i];
                      }
                    }
                  };
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw Error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                shape_str(shape));
  }
  std::vector<double> out(a.value());
  Impl ai = a.impl();
  return finish(OpKind::reshape, {a}, std::move(shape), std::move(out),
                [&](const Impl& oi) {
                  return [ai, oi] {
                    if (!ai->requires_grad) return;
                    auto& ag = ensure_grad(ai);
                    const auto& og = oi->grad;
                    for (size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
                  };
                });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_rows");
  require_rank2(b, "concat_rows");
  if (a.dim(1) != b.dim(1)) {
    throw Error("concat_rows: column mismatch " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
  }
  const int ra = a.dim(0), rb = b.dim(0), c = a.dim(1);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(ra + rb) * c);
  out.insert(out.end(), a.value().begin(), a.value().end());
  out.insert(out.end(), b.value().begin(), b.value().end());
  Impl ai = a.impl(), bi = b.impl();
  return finish(OpKind::concat_rows, {a, b}, {ra + rb, c}, std::move(out),
                [&](const Impl& oi) {
                  return [ai, bi, oi, ra, rb, c] {
                    const auto& og = oi->grad;
                    const size_t split = static_cast<size_t>(ra) * c;
                    if (ai->requires_grad) {
                      auto& ag = ensure_grad(ai);
                      for (size_t i = 0; i < split; ++i) ag[i] += og[i];
                    }
                    if (bi->requires_grad) {
                      auto& bg = ensure_grad(bi);
                      for (size_t i = 0; i < static_cast<size_t>(rb) * c; ++i) {
                        bg[i] += og[split + i];
                      }
                    }
                  };
                });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != m) {
      throw Error("concat_cols: row mismatch " + shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(m) * total);
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < w; ++j) {
        out[static_cast<size_t>(i) * total + off + j] = p.at(i, j);
      }
    }
    off += w;
  }
  std::vector<Impl> impls;
  impls.reserve(parts.size());
  for (const Tensor& p : parts) impls.push_back(p.impl());
  return finish(OpKind::concat_cols, parts, {m, total}, std::move(out),
                [&](const Impl& oi) {
                  return [impls, oi, m, total] {
                    const auto& og = oi->grad;
                    int off = 0;
                    for (const Impl& pi : impls) {
                      const int w = pi->shape[1];
                      if (pi->requires_grad) {
                        auto& pg = ensure_grad(pi);
                        for (int i = 0; i < m; ++i) {
                          for (int j = 0; j < w; ++j) {
                            pg[static_cast<size_t>(i) * w + j] +=
                                og[static_cast<size_t>(i) * total + off + j];
                          }
                        }
                      }
                      off += w;
                    }
                  };
                });
}

Tensor slice_cols(const Tensor& a, int start, int width) {
  require_rank2(a, "slice_cols");
  const int m = a.dim(0), d = a.dim(1);
  if (start < 0 || width <= 0 || start + width > d) {
    throw Error("slice_cols: range [" + std::to_string(start) + ", " +
                std::to_string(start + width) + ") out of " +
                shape_str(a.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m) * width);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < width; ++j) {
      out[static_cast<size_t>(i) * width + j] = a.at(i, start + j);
    }
  }
  Impl ai = a.impl();
  return finish(OpKind::slice_cols, {a}, {m, width}, std::move(out),
                [&](const Impl& oi) {
                  return [ai, oi, m, d, start, width] {
                    if (!ai->requires_grad) return;
                    auto& ag = ensure_grad(ai);
                    const auto& og = oi->grad;
                    for (int i = 0; i < m; ++i) {
                      for (int j = 0; j < width; ++j) {
                        ag[static_cast<size_t>(i) * d + start + j] +=
                            og[static_cast<size_t>(i) * width + j];
                      }
                    }
                  };
                });
}

Tensor slice_rows(const Tensor& a, int start, int rows) {
  require_rank2(a, "slice_rows");
  const int m = a.dim(0), d = a.dim(1);
  if (start < 0 || rows <= 0 || start + rows > m) {
    throw Error("slice_rows: range [" + std::to_string(start) + ", " +
                std::to_string(start + rows) + ") out of " +
                shape_str(a.shape()));
  }
  std::vector<double> out(a.value().begin() + static_cast<size_t>(start) * d,
                          a.value().begin() +
                              static_cast<size_t>(start + rows) * d);
  Impl ai = a.impl();
  return finish(OpKind::slice_rows, {a}, {rows, d}, std::move(out),
                [&](const Impl& oi) {
                  return [ai, oi, start, rows, d] {
                    if (!ai->requires_grad) return;
                    auto& ag = ensure_grad(ai);
                    const auto& og = oi->grad;
                    for (size_t i = 0; i < static_cast<size_t>(rows) * d; ++i) {
                      ag[static_cast<size_t>(start) * d + i] += og[i];
                    }
                  };
                });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  require_rank2(table, "gather_rows");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw Error("gather_rows: id " + std::to_string(id) +
                  " out of range for table " + shape_str(table.shape()));
    }
  }
  const int m = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<size_t>(m) * d);
  for (int i = 0; i < m; ++i) {
    const double* row = table.value().data() + static_cast<size_t>(ids[i]) * d;
    std::copy(row, row + d, out.begin() + static_cast<size_t>(i) * d);
  }
  Impl ti = table.impl();
  return finish(OpKind::gather_rows, {table}, {m, d}, std::move(out),
                [&](const Impl& oi) {
                  return [ti, oi, ids, d, m] {
                    if (!ti->requires_grad) return;
                    auto& tg = ensure_grad(ti);
                    const auto& og = oi->grad;
                    for (int i = 0; i < m; ++i) {
                      double* row = tg.data() + static_cast<size_t>(ids[i]) * d;
                      const double* orow = og.data() + static_cast<size_t>(i) * d;
                      for (int j = 0; j < d; ++j) row[j] += orow[j];
                    }
                  };
                });
}

Tensor pick(const Tensor& a, const std::vector<int>& flat_indices) {
  for (int idx : flat_indices) {
    if (idx < 0 || idx >= a.size()) {
      throw Error("pick: flat index " + std::to_string(idx) +
                  " out of range for " + shape_str(a.shape()));
    }
  }
  const int k = static_cast<int>(flat_indices.size());
  std::vector<double> out(k);
  for (int i = 0; i < k; ++i) out[i] = a.value()[flat_indices[i]];
  Impl ai = a.impl();
  return finish(OpKind::pick, {a}, {k}, std::move(out),
                [&](const Impl& oi) {
                  return [ai, oi, flat_indices] {
                    if (!ai->requires_grad) return;
                    auto& ag = ensure_grad(ai);
                    const auto& og = oi->grad;
                    for (size_t i = 0; i < flat_indices.size(); ++i) {
                      ag[flat_indices[i]] += og[i];
                    }
                  };
                });
}

Tensor rowmax_pool(const Tensor& a, const std::vector<int>& rows) {
  require_rank2(a, "rowmax_pool");
  if (rows.empty()) throw Error("rowmax_pool: empty row set");
  const int m = a.dim(0), d = a.dim(1);
  for (int r : rows) {
    if (r < 0 || r >= m) {
      throw Error("rowmax_pool: row " + std::to_string(r) + " out of range");
    }
  }
  std::vector<int> sorted(rows);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out(d, -std::numeric_limits<double>::infinity());
  std::vector<int> argmax(d, -1);
  for (int r : sorted) {
    for (int j = 0; j < d; ++j) {
      const double x = a.at(r, j);
      if (x > out[j]) { // strict: ties keep the lowest row index
        out[j] = x;
        argmax[j] = r;
      }
    }
  }
  Impl ai = a.impl();
  return finish(OpKind::rowmax_pool, {a}, {d}, std::move(out),
                [&](const Impl& oi) {
                  return [ai, oi, argmax, d] {
                    if (!ai->requires_grad) return;
                    auto& ag = ensure_grad(ai);
                    const auto& og = oi->grad;
                    for (int j = 0; j < d; ++j) {
                      ag[static_cast<size_t>(argmax[j]) * d + j] += og[j];
                    }
                  };
                });
}

Tensor masked_softmax(const Tensor& scores, const std::vector<uint8_t>& mask) {
  if (static_cast<int64_t>(mask.size()) != scores.size()) {
    throw Error("masked_softmax: mask size " + std::to_string(mask.size()) +
                " does not match scores " + shape_str(scores.shape()));
  }
  if (scores.rank() < 1) throw Error("masked_softmax: rank-0 input");
  const int cols = scores.dim(scores.rank() - 1);
  const int64_t rows = scores.size() / cols;
  std::vector<double> out(scores.size(), 0.0);
  const auto& sv = scores.value();
  for (int64_t r = 0; r < rows; ++r) {
    const size_t base = static_cast<size_t>(r) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j) {
      if (mask[base + j] && sv[base + j] > mx) mx = sv[base + j];
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw Error("masked_softmax: row " + std::to_string(r) +
                  " has no unmasked entries (isolated node)");
    }
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      if (mask[base + j]) {
        out[base + j] = std::exp(sv[base + j] - mx);
        sum += out[base + j];
      }
    }
    for (int j = 0; j < cols; ++j) {
      if (mask[base + j]) out[base + j] /= sum;
    }
  }
  Impl si = scores.impl();
  return finish(OpKind::masked_softmax, {scores}, scores.shape(),
                std::move(out), [&](const Impl& oi) {
                  return [si, oi, mask, cols, rows] {
                    if (!si->requires_grad) return;
                    auto& sg = ensure_grad(si);
                    const auto& og = oi->grad;
                    const auto& y = oi->value;
                    for (int64_t r = 0; r < rows; ++r) {
                      const size_t base = static_cast<size_t>(r) * cols;
                      double dot = 0.0;
                      for (int j = 0; j < cols; ++j) {
                        if (mask[base + j]) dot += og[base + j] * y[base + j];
                      }
                      for (int j = 0; j < cols; ++j) {
                        if (mask[base + j]) {
                          sg[base + j] += y[base + j] * (og[base + j] - dot);
                        }
                      }
                    }
                  };
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() < 1) throw Error("layer_norm: rank-0 input");
  const int d = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 ||
      bias.dim(0) != d) {
    throw Error("layer_norm: gain/bias must be rank-1 of width " +
                std::to_string(d));
  }
  const int64_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const auto& xv = x.value();
  for (int64_t r = 0; r < rows; ++r) {
    const size_t base = static_cast<size_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xv[base + j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xv[base + j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (int j = 0; j < d; ++j) {
      const double h = (xv[base + j] - mean) * inv;
      xhat[base + j] = h;
      out[base + j] = h * gain.at(j) + bias.at(j);
    }
  }
  Impl xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  auto xhat_p = std::make_shared<std::vector<double>>(std::move(xhat));
  auto inv_p = std::make_shared<std::vector<double>>(std::move(inv_std));
  return finish(
      OpKind::layer_norm, {x, gain, bias}, x.shape(), std::move(out),
      [&](const Impl& oi) {
        return [xi, gi, bi, oi, xhat_p, inv_p, d, rows] {
          const auto& og = oi->grad;
          const auto& xh = *xhat_p;
          if (gi->requires_grad) {
            auto& gg = ensure_grad(gi);
            for (int64_t r = 0; r < rows; ++r) {
              const size_t base = static_cast<size_t>(r) * d;
              for (int j = 0; j < d; ++j) gg[j] += og[base + j] * xh[base + j];
            }
          }
          if (bi->requires_grad) {
            auto& bg = ensure_grad(bi);
            for (int64_t r = 0; r < rows; ++r) {
              const size_t base = static_cast<size_t>(r) * d;
              for (int j = 0; j < d; ++j) bg[j] += og[base + j];
            }
          }
          if (xi->requires_grad) {
            auto& xg = ensure_grad(xi);
            for (int64_t r = 0; r < rows; ++r) {
              const size_t base = static_cast<size_t>(r) * d;
              double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
              for (int j = 0; j < d; ++j) {
                const double dxh = og[base + j] * gi->value[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xh[base + j];
              }
              mean_dxhat /= d;
              mean_dxhat_xhat /= d;
              const double inv = (*inv_p)[r];
              for (int j = 0; j < d; ++j) {
                const double dxh = og[base + j] * gi->value[j];
                xg[base + j] +=
                    inv * (dxh - mean_dxhat - xh[base + j] * mean_dxhat_xhat);
              }
            }
          }
        };
      });
}

namespace {

constexpr double kGeluC1 = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluC2 = 0.044715;

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC1 * (x + kGeluC2 * x * x * x)));
}

double gelu_grad_scalar(double x) {
  const double u = kGeluC1 * (x + kGeluC2 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC1 * (1.0 + 3.0 * kGeluC2 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Tensor gelu_impl(const Tensor& x, bool defective) {
  std::vector<double> out(x.value());
  for (double& v : out) v = gelu_scalar(v);
  const OpKind kind = defective ? OpKind::gelu_defective : OpKind::gelu;
  const double sign = defective ? -1.0 : 1.0;
  Impl xi = x.impl();
  return finish(kind, {x}, x.shape(), std::move(out), [&](const Impl& oi) {
    return [xi, oi, sign] {
      if (!xi->requires_grad) return;
      auto& xg = ensure_grad(xi);
      const auto& og = oi->grad;
      for (size_t i = 0; i < og.size(); ++i) {
        xg[i] += sign * og[i] * gelu_grad_scalar(xi->value[i]);
      }
    };
  });
}

} // namespace

Tensor gelu(const Tensor& x) { return gelu_impl(x, false); }
Tensor gelu_defective(const Tensor& x) { return gelu_impl(x, true); }

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.value());
  for (double& v : out) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  Impl xi = x.impl();
  return finish(OpKind::sigmoid, {x}, x.shape(), std::move(out),
                [&](const Impl& oi) {
                  return [xi, oi] {
                    if (!xi->requires_grad) return;
                    auto& xg = ensure_grad(xi);
                    const auto& og = oi->grad;
                    const auto& y = oi->value;
                    for (size_t i = 0; i < og.size(); ++i) {
                      xg[i] += og[i] * y[i] * (1.0 - y[i]);
                    }
                  };
                });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw Error("dropout: p must lie in [0, 1), got " + std::to_string(p));
  }
  if (p == 0.0) return x;
  // Inverted dropout: survivors scaled by 1/(1-p).
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.value());
  for (size_t i = 0; i < out.size(); ++i) {
    const double m = rng.uniform() >= p ? keep_scale : 0.0;
    (*mask)[i] = m;
    out[i] *= m;
  }
  Impl xi = x.impl();
  return finish(OpKind::dropout, {x}, x.shape(), std::move(out),
                [&](const Impl& oi) {
                  return [xi, oi, mask] {
                    if (!xi->requires_grad) return;
                    auto& xg = ensure_grad(xi);
                    const auto& og = oi->grad;
                    for (size_t i = 0; i < og.size(); ++i) {
                      xg[i] += og[i] * (*mask)[i];
                    }
                  };
                });
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  Impl xi = x.impl();
  return finish(OpKind::sum_all, {x}, {1}, {s}, [&](const Impl& oi) {
    return [xi, oi] {
      if (!xi->requires_grad) return;
      auto& xg = ensure_grad(xi);
      const double g = oi->grad[0];
      for (double& v : xg) v += g;
    };
  });
}

Tensor logsumexp_rows(const Tensor& x) {
  require_rank2(x, "logsumexp_rows");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r);
  for (int i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(x.at(i, j) - mx);
    out[i] = mx + std::log(sum);
  }
  Impl xi = x.impl();
  return finish(OpKind::logsumexp_rows, {x}, {r}, std::move(out),
                [&](const Impl& oi) {
                  return [xi, oi, r, c] {
                    if (!xi->requires_grad) return;
                    auto& xg = ensure_grad(xi);
                    const auto& og = oi->grad;
                    const auto& lse = oi->value;
                    for (int i = 0; i < r; ++i) {
                      for (int j = 0; j < c; ++j) {
                        xg[static_cast<size_t>(i) * c + j] +=
                            og[i] *
                            std::exp(xi->value[static_cast<size_t>(i) * c + j] -
                                     lse[i]);
                      }
                    }
                  };
                });
}

// --- graph attention primitives ---------------------------------------------

int64_t edge_count(const std::vector<std::vector<int>>& neighbors) {
  int64_t e = 0;
  for (const auto& nb : neighbors) e += static_cast<int64_t>(nb.size());
  return e;
}

Tensor graph_scores(const Tensor& q, const Tensor& k,
                    const std::vector<std::vector<int>>& neighbors,
                    double scale) {
  require_rank2(q, "graph_scores");
  require_rank2(k, "graph_scores");
  const int m = q.dim(0), d = q.dim(1);
  if (k.dim(0) != m || k.dim(1) != d) {
    throw Error("graph_scores: q " + shape_str(q.shape()) + " vs k " +
                shape_str(k.shape()));
  }
  if (static_cast<int>(neighbors.size()) != m) {
    throw Error("graph_scores: graph has " +
                std::to_string(neighbors.size()) + " nodes, states have " +
                std::to_string(m));
  }
  const int64_t e = edge_count(neighbors);
  std::vector<double> out(e);
  int64_t idx = 0;
  for (int i = 0; i < m; ++i) {
    const double* qi = q.value().data() + static_cast<size_t>(i) * d;
    for (int j : neighbors[i]) {
      const double* kj = k.value().data() + static_cast<size_t>(j) * d;
      double s = 0.0;
      for (int t = 0; t < d; ++t) s += qi[t] * kj[t];
      out[idx++] = s * scale;
    }
  }
  Impl qi_ = q.impl(), ki_ = k.impl();
  return finish(OpKind::graph_scores, {q, k}, {static_cast<int>(e)},
                std::move(out), [&](const Impl& oi) {
                  return [qi_, ki_, oi, neighbors, m, d, scale] {
                    const auto& og = oi->grad;
                    int64_t idx = 0;
                    for (int i = 0; i < m; ++i) {
                      for (int j : neighbors[i]) {
                        const double g = og[idx++] * scale;
                        if (qi_->requires_grad) {
                          auto& qg = ensure_grad(qi_);
                          for (int t = 0; t < d; ++t) {
                            qg[static_cast<size_t>(i) * d + t] +=
                                g * ki_->value[static_cast<size_t>(j) * d + t];
                          }
                        }
                        if (ki_->requires_grad) {
                          auto& kg = ensure_grad(ki_);
                          for (int t = 0; t < d; ++t) {
                            kg[static_cast<size_t>(j) * d + t] +=
                                g * qi_->value[static_cast<size_t>(i) * d + t];
                          }
                        }
                      }
                    }
                  };
                });
}

Tensor edge_softmax(const Tensor& scores,
                    const std::vector<std::vector<int>>& neighbors) {
  if (scores.rank() != 1 || scores.dim(0) != edge_count(neighbors)) {
    throw Error("edge_softmax: scores " + shape_str(scores.shape()) +
                " do not match edge count " +
                std::to_string(edge_count(neighbors)));
  }
  std::vector<double> out(scores.size());
  const auto& sv = scores.value();
  int64_t base = 0;
  for (size_t i = 0; i < neighbors.size(); ++i) {
    const int deg = static_cast<int>(neighbors[i].size());
    if (deg == 0) {
      throw Error("edge_softmax: node " + std::to_string(i) +
                  " has an empty neighborhood");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < deg; ++t) mx = std::max(mx, sv[base + t]);
    double sum = 0.0;
    for (int t = 0; t < deg; ++t) {
      out[base + t] = std::exp(sv[base + t] - mx);
      sum += out[base + t];
    }
    for (int t = 0; t < deg; ++t) out[base + t] /= sum;
    base += deg;
  }
  Impl si = scores.impl();
  return finish(OpKind::edge_softmax, {scores}, scores.shape(),
                std::move(out), [&](const Impl& oi) {
                  return [si, oi, neighbors] {
                    if (!si->requires_grad) return;
                    auto& sg = ensure_grad(si);
                    const auto& og = oi->grad;
                    const auto& y = oi->value;
                    int64_t base = 0;
                    for (const auto& nb : neighbors) {
                      const int deg = static_cast<int>(nb.size());
                      double dot = 0.0;
                      for (int t = 0; t < deg; ++t) {
                        dot += og[base + t] * y[base + t];
                      }
                      for (int t = 0; t < deg; ++t) {
                        sg[base + t] += y[base + t] * (og[base + t] - dot);
                      }
                      base += deg;
                    }
                  };
                });
}

Tensor graph_aggregate(const Tensor& alpha, const Tensor& v,
                       const std::vector<std::vector<int>>& neighbors) {
  require_rank2(v, "graph_aggregate");
  if (alpha.rank() != 1 || alpha.dim(0) != edge_count(neighbors)) {
    throw Error("graph_aggregate: alpha " + shape_str(alpha.shape()) +
                " does not match edge count");
  }
  const int m = v.dim(0), d = v.dim(1);
  if (static_cast<int>(neighbors.size()) != m) {
    throw Error("graph_aggregate: graph nodes vs states mismatch");
  }
  std::vector<double> out(static_cast<size_t>(m) * d, 0.0);
  int64_t idx = 0;
  for (int i = 0; i < m; ++i) {
    double* zi = out.data() + static_cast<size_t>(i) * d;
    for (int j : neighbors[i]) {
      const double a = alpha.at(static_cast<int>(idx++));
      const double* vj = v.value().data() + static_cast<size_t>(j) * d;
      for (int t = 0; t < d; ++t) zi[t] += a * vj[t];
    }
  }
  Impl ai = alpha.impl(), vi = v.impl();
  return finish(OpKind::graph_aggregate, {alpha, v}, {m, d}, std::move(out),
                [&](const Impl& oi) {
                  return [ai, vi, oi, neighbors, m, d] {
                    const auto& og = oi->grad;
                    int64_t idx = 0;
                    for (int i = 0; i < m; ++i) {
                      const double* gz = og.data() + static_cast<size_t>(i) * d;
                      for (int j : neighbors[i]) {
                        if (ai->requires_grad) {
                          auto& ag = ensure_grad(ai);
                          const double* vj =
                              vi->value.data() + static_cast<size_t>(j) * d;
                          double s = 0.0;
                          for (int t = 0; t < d; ++t) s += gz[t] * vj[t];
                          ag[idx] += s;
                        }
                        if (vi->requires_grad) {
                          auto& vg = ensure_grad(vi);
                          const double a = ai->value[idx];
                          double* vj = vg.data() + static_cast<size_t>(j) * d;
                          for (int t = 0; t < d; ++t) vj[t] += a * gz[t];
                        }
                        ++idx;
                      }
                    }
                  };
                });
}

// --- gradient checking --------------------------------------------------------

namespace {

GradCheckReport grad_check_impl(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor>& inputs, double h, double tol,
    const std::vector<std::vector<size_t>>& coords) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  double base1, base2;
  {
    TapePause pause;
    base1 = f(inputs).item();
    base2 = f(inputs).item();
  }
  if (std::memcmp(&base1, &base2, sizeof(double)) != 0) {
    throw Error("grad_check: function is nondeterministic "
                "(two forward passes disagree)");
  }
  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tape tape;
    Tensor loss = f(inputs);
    tape.backward(loss);
    for (size_t i = 0; i < inputs.size(); ++i) {
      analytic[i] = inputs[i].has_grad()
                        ? inputs[i].grad()
                        : std::vector<double>(inputs[i].size(), 0.0);
    }
  }
  GradCheckReport report;
  report.per_input_max.assign(inputs.size(), 0.0);
  TapePause pause;
  for (size_t i = 0; i < inputs.size(); ++i) {
    auto& vals = inputs[i].value();
    for (size_t e : coords[i]) {
      const double saved = vals[e];
      vals[e] = saved + h;
      const double fp = f(inputs).item();
      vals[e] = saved - h;
      const double fm = f(inputs).item();
      vals[e] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][e];
      const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.per_input_max[i]) report.per_input_max[i] = rel;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = static_cast<int>(i);
        report.worst_elem = static_cast<int64_t>(e);
      }
      if (rel > tol) ++report.flagged;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

} // namespace

GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, double h, double tol) {
  std::vector<std::vector<size_t>> coords(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    coords[i].resize(inputs[i].size());
    for (size_t e = 0; e < coords[i].size(); ++e) coords[i][e] = e;
  }
  return grad_check_impl(f, inputs, h, tol, coords);
}

GradCheckReport grad_check_sampled(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, double h, double tol,
    int64_t coords_per_input, Rng& rng) {
  std::vector<std::vector<size_t>> coords(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    const int64_t n = inputs[i].size();
    if (n <= coords_per_input) {
      coords[i].resize(n);
      for (size_t e = 0; e < coords[i].size(); ++e) coords[i][e] = e;
    } else {
      std::vector<size_t> all(n);
      for (size_t e = 0; e < all.size(); ++e) all[e] = e;
      for (int64_t pick = 0; pick < coords_per_input; ++pick) {
        const int64_t j =
            pick + rng.uniform_int(static_cast<int>(n - pick));
        std::swap(all[pick], all[j]);
      }
      coords[i].assign(all.begin(), all.begin() + coords_per_input);
    }
  }
  return grad_check_impl(f, inputs, h, tol, coords);
}

} // namespace sfl
