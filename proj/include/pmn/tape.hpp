#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "pmn/tensor.hpp"

namespace pmn {

class Tape;

/// Lightweight handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  size_t size() const;
  size_t rows() const;
  size_t cols() const;
  size_t rank() const;
  std::span<const double> val() const;
  std::span<const double> grad() const;
  double scalar() const;
};

enum class Op : uint8_t {
  Leaf,
  MatMul,       // (r x c)·(c) -> (r), or (r x c)·(c x k) -> (r x k)
  Add,
  Sub,
  Mul,          // elementwise
  Scale,        // x * darg
  AddScalar,    // x + darg
  Concat,       // rank-1 inputs -> rank-1
  Slice,        // rank-1, [iarg, iarg+len)
  Row,          // matrix row iarg -> vector
  Pick,         // vector element iarg -> scalar
  SumAll,       // -> scalar
  SumAxis,      // matrix, iarg==0: column sums -> (c); iarg==1: row sums -> (r)
  Softmax,      // rank-1
  LogSoftmax,   // rank-1
  Sigmoid,
  Tanh,
  Relu,
  Exp,
  Log,
  Softplus,
  WeightedSum,  // extra inputs: items (equal length); in0: weight vector
  StackRows,    // extra inputs: rank-1 rows -> matrix
  Expand,       // scalar -> vector of length iarg
};

enum class Precision { F64, F32 };

/// Arena-backed record of one differentiable computation. Node values and
/// gradients live in two flat buffers whose capacity is retained across
/// reset(), so steady-state training does no per-sample allocation.
///
/// The default numeric mode is 64-bit. The optional 32-bit mode rounds
/// every recorded value to float precision; it trades accuracy for cache
/// footprint experiments and is excluded from the finite-difference gates.
///
/// Usage per sample: reset (or reset_to a mark), build the forward pass,
/// call backward(loss). Gradients of watched tensors are accumulated into
/// Tensor::grad (additive; callers zero grads between optimizer steps).
class Tape {
 public:
  struct Node {
    Op op;
    uint8_t rank;       // 0, 1, 2
    int32_t in0 = -1;
    int32_t in1 = -1;
    uint32_t d0 = 1, d1 = 1;
    int64_t off = 0;    // offset into val_/grad_
    int32_t len = 0;
    int32_t xstart = 0; // extra-input range in xin_
    int32_t xcount = 0;
    int32_t iarg = 0;
    double darg = 0.0;
    Tensor* source = nullptr;  // watched leaf pull target
  };

  Tape() = default;
  explicit Tape(Precision p) : precision_(p) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Record a constant leaf (no gradient pull-back).
  Var leaf(const Tensor& t);
  Var leaf(std::span<const double> v, std::vector<size_t> shape);
  Var scalar(double v);
  Var zeros(size_t n);

  /// Record a watched leaf: after backward(), its gradient is added into
  /// t.grad(). The same tensor watched twice in one generation maps to the
  /// same node.
  Var watch(Tensor& t);

  Precision precision() const { return precision_; }

  void reset();
  int mark() const { return static_cast<int>(nodes_.size()); }
  /// Pop all nodes recorded after `mark`; watched-leaf cache entries above
  /// the mark are dropped too.
  void reset_to(int mark);

  /// Reverse sweep from a scalar loss. Accumulates into watched tensors'
  /// grad buffers; node gradients remain readable until the next forward op.
  void backward(Var loss);

  size_t node_count() const { return nodes_.size(); }
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
  std::span<const double> val(int32_t id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return {val_.data() + n.off, static_cast<size_t>(n.len)};
  }
  std::span<const double> grad(int32_t id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return {grad_.data() + n.off, static_cast<size_t>(n.len)};
  }

  // -- forward ops ---------------------------------------------------------
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var concat(std::span<const Var> parts);
  Var concat(Var a, Var b);
  Var concat(Var a, Var b, Var c);
  Var slice(Var a, size_t start, size_t len);
  Var row(Var m, size_t r);
  Var pick(Var v, size_t i);
  Var sum(Var a);
  Var sum_axis(Var m, int axis);
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var sigmoid(Var a);
  Var tanh_(Var a);
  Var relu(Var a);
  Var exp_(Var a);
  Var log_(Var a);
  Var softplus(Var a);
  Var weighted_sum(std::span<const Var> items, Var weights);
  Var stack_rows(std::span<const Var> rows);
  Var expand(Var scalar, size_t n);
  Var dot(Var a, Var b) { return sum(mul(a, b)); }
  Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

 private:
  friend struct Var;
  int32_t alloc(Op op, uint8_t rank, uint32_t d0, uint32_t d1, int32_t in0,
                int32_t in1);
  Var done(int32_t id);
  double* out(int32_t id) { return val_.data() + nodes_[static_cast<size_t>(id)].off; }
  void check_same_tape(const char* op, Var a) const;
  void backward_node(int32_t id);

  Precision precision_ = Precision::F64;
  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> grad_;
  std::vector<int32_t> xin_;
  std::unordered_map<const Tensor*, int32_t> watched_;
};

inline size_t Var::size() const { return static_cast<size_t>(tape->node(id).len); }
inline size_t Var::rows() const { return tape->node(id).d0; }
inline size_t Var::cols() const { return tape->node(id).d1; }
inline size_t Var::rank() const { return tape->node(id).rank; }
inline std::span<const double> Var::val() const { return tape->val(id); }
inline std::span<const double> Var::grad() const { return tape->grad(id); }
inline double Var::scalar() const { return tape->val(id)[0]; }

}  // namespace pmn
