#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pobrl/rng.hpp"

namespace pobrl::ad {

// Row-major dense tensor, rank 1 or 2, double storage throughout so gradient
// checks run at 64-bit accuracy. Checkpoints serialize to 32-bit floats.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) { v.assign(static_cast<std::size_t>(size_of(shape)), 0.0); }

  static long long size_of(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
  }
  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor vector(std::vector<double> data) {
    Tensor t;
    t.shape = {static_cast<int>(data.size())};
    t.v = std::move(data);
    return t;
  }
  static Tensor matrix(int rows, int cols, std::vector<double> data = {}) {
    Tensor t({rows, cols});
    if (!data.empty()) t.v = std::move(data);
    return t;
  }

  int size() const { return static_cast<int>(v.size()); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(int r, int c) { return v[static_cast<std::size_t>(r * cols() + c)]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r * cols() + c)]; }
  bool all_finite() const;
};

std::string shape_str(const std::vector<int>& shape);

// Named parameters with matching gradient accumulators. Entry order is
// insertion order and fixes the checkpoint layout.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, std::vector<int> shape);
  Tensor& add_uniform(const std::string& name, std::vector<int> shape, Rng rng, double half_range = 0.08);

  bool has(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);

  void zero_grads();
  double grad_norm() const;
  void scale_grads(double factor);

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  long long total_parameters() const;

 private:
  std::vector<Entry> entries_;
  int index_of(const std::string& name) const;
};

// Checkpoint file: one JSON manifest line (version tag "pobrl-ckpt-v1",
// metadata, parameter names/shapes/dtype) followed by little-endian float32
// buffers concatenated in manifest order.
void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& metadata = {});
// Loads values into an empty or matching store; returns the metadata map.
std::vector<std::pair<std::string, std::string>> load_checkpoint(ParamStore& store, const std::string& path);

class Tape;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are recorded in forward order; backward() walks
// them once in reverse. A tape and its vars are confined to one thread.
class Tape {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;
    std::function<void(Tape&, Node&)> back;  // null for leaves without grads
  };

  Var input(Tensor value);
  Var scalar(double value);
  // Leaf bound to a ParamStore entry; backward accumulates into its grad.
  // The store must outlive the tape.
  Var param(ParamStore& store, const std::string& name);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double factor);
  Var add_rowwise(Var m, Var row);      // [n,d] + [d]
  Var matmul(Var a, Var b);             // [m,k] x [k,n]
  Var matvec(Var m, Var x);             // [m,k] x [k] -> [m]
  Var matvec_t(Var m, Var x);           // [n,d]^T x [n] -> [d]
  Var dot(Var a, Var b);                // [n] . [n] -> scalar
  Var sum(Var a);                       // -> scalar
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var emax(Var a, Var b);               // elementwise max
  Var concat(std::span<const Var> parts);  // vectors -> vector
  Var slice(Var a, int begin, int len);    // vector slice
  Var pick(Var a, int index);              // vector element -> scalar
  Var stack_rows(std::span<const Var> rows);  // k vectors [d] -> [k,d]
  Var row(Var m, int r);                      // [n,d] -> [d]
  Var rows(Var m, const std::vector<int>& ids);  // gather -> [k,d]
  // 1-D convolution over time: x [t,d], w [f, window*d], b [f] -> [t-window+1, f].
  // Inputs shorter than the window are zero-padded to the window length.
  Var conv1d(Var x, Var w, Var b, int window);
  Var max_over_time(Var x);  // [t,f] -> [f]
  Var softmax(Var logits);
  Var log_softmax(Var logits);
  // Masked log-softmax over the allowed slots; disallowed outputs are 0 and
  // must not be consumed downstream.
  Var masked_log_softmax(Var logits, const std::vector<bool>& allow);
  // -sum_i exp(lp_i) * lp_i over allowed slots.
  Var entropy_from_log_probs(Var log_probs, const std::vector<bool>& allow);
  // Test hook: unary elementwise op with caller-supplied forward/derivative.
  Var custom_unary(Var a, std::function<double(double)> fn, std::function<double(double)> dfn);

  struct LstmState {
    Var h, c;
  };
  // Standard LSTM cell; wx [4h, in], wh [4h, h], b [4h]; gate order i,f,g,o.
  LstmState lstm_cell(Var x, LstmState state, Var wx, Var wh, Var b);
  struct BiLstmWeights {
    Var fwd_wx, fwd_wh, fwd_b;
    Var bwd_wx, bwd_wh, bwd_b;
  };
  // Per-step concatenated [fwd_h; bwd_h] states over the input sequence.
  std::vector<Var> bilstm_sequence(std::span<const Var> inputs, const BiLstmWeights& w, int hidden);

  const std::vector<double>& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].val; }
  const std::vector<int>& shape(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].shape; }
  const std::vector<double>& grad_of(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  double scalar_val(Var v) const;

  // Seeds d(loss)/d(loss) = seed and propagates to every leaf exactly once.
  void backward(Var loss, double seed = 1.0);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  Var make(std::vector<int> shape);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  void check_vector(Var v, const char* op) const;
};

// Central-finite-difference comparison against reverse-mode gradients on a
// random coordinate subsample (>= per_tensor per parameter, or all if fewer).
// Returns the max relative error with denominator max(|a|, |n|, 1e-8).
using ScalarFn = std::function<Var(Tape&, ParamStore&)>;
double grad_check(ParamStore& store, const ScalarFn& f, double epsilon, Rng rng, int per_tensor = 32);

// Adam with bias correction; gradients are clipped by global norm before the
// update. Call step() once per batch after grads are accumulated.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(ParamStore& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(double lr, double clip_norm = 2.0);
  int steps_taken() const { return t_; }

 private:
  ParamStore* store_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace pobrl::ad
