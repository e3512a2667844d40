#include "pmn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace pmn {

namespace {

std::string var_shape_str(Var v) {
  if (!v.valid()) return "[?]";
  if (v.rank() == 0) return "[]";
  if (v.rank() == 1) return "[" + std::to_string(v.rows()) + "]";
  return "[" + std::to_string(v.rows()) + "," + std::to_string(v.cols()) + "]";
}

[[noreturn]] void shape_fail(const char* op, Var a, Var b) {
  throw ShapeError(strformat("%s: incompatible shapes %s and %s", op,
                             var_shape_str(a).c_str(), var_shape_str(b).c_str()));
}

[[noreturn]] void shape_fail1(const char* op, Var a, const char* need) {
  throw ShapeError(strformat("%s: got shape %s, need %s", op,
                             var_shape_str(a).c_str(), need));
}

}  // namespace

Var Tape::done(int32_t id) {
  if (precision_ == Precision::F32) {
    Node& n = nodes_[static_cast<size_t>(id)];
    double* v = val_.data() + n.off;
    for (int32_t i = 0; i < n.len; ++i)
      v[i] = static_cast<double>(static_cast<float>(v[i]));
  }
  return {this, id};
}

void Tape::check_same_tape(const char* op, Var a) const {
  if (!a.valid() || a.tape != this)
    throw ValueError(strformat("%s: operand not recorded on this tape", op));
}

int32_t Tape::alloc(Op op, uint8_t rank, uint32_t d0, uint32_t d1, int32_t in0,
                    int32_t in1) {
  Node n;
  n.op = op;
  n.rank = rank;
  n.d0 = d0;
  n.d1 = d1;
  n.in0 = in0;
  n.in1 = in1;
  n.len = static_cast<int32_t>(rank == 0 ? 1 : (rank == 1 ? d0 : d0 * d1));
  n.off = static_cast<int64_t>(val_.size());
  val_.resize(val_.size() + static_cast<size_t>(n.len));
  nodes_.push_back(n);
  return static_cast<int32_t>(nodes_.size()) - 1;
}

void Tape::reset() {
  nodes_.clear();
  val_.clear();
  grad_.clear();
  xin_.clear();
  watched_.clear();
}

void Tape::reset_to(int mark) {
  if (mark < 0 || static_cast<size_t>(mark) > nodes_.size())
    throw ValueError("tape: bad mark");
  if (static_cast<size_t>(mark) == nodes_.size()) return;
  const Node& first = nodes_[static_cast<size_t>(mark)];
  val_.resize(static_cast<size_t>(first.off));
  xin_.resize(static_cast<size_t>(first.xstart));
  nodes_.resize(static_cast<size_t>(mark));
  for (auto it = watched_.begin(); it != watched_.end();) {
    if (it->second >= mark)
      it = watched_.erase(it);
    else
      ++it;
  }
}

Var Tape::leaf(const Tensor& t) {
  uint8_t rank = static_cast<uint8_t>(t.rank());
  if (rank > 2) throw ShapeError("leaf: rank > 2 not supported");
  uint32_t d0 = rank >= 1 ? static_cast<uint32_t>(t.dim(0)) : 1;
  uint32_t d1 = rank == 2 ? static_cast<uint32_t>(t.dim(1)) : 1;
  int32_t id = alloc(Op::Leaf, rank, d0, d1, -1, -1);
  std::memcpy(out(id), t.data(), t.size() * sizeof(double));
  return done(id);
}

Var Tape::leaf(std::span<const double> v, std::vector<size_t> shape) {
  if (Tensor::count(shape) != v.size())
    throw ShapeError("leaf: shape/value mismatch");
  uint8_t rank = static_cast<uint8_t>(shape.size());
  if (rank > 2) throw ShapeError("leaf: rank > 2 not supported");
  uint32_t d0 = rank >= 1 ? static_cast<uint32_t>(shape[0]) : 1;
  uint32_t d1 = rank == 2 ? static_cast<uint32_t>(shape[1]) : 1;
  int32_t id = alloc(Op::Leaf, rank, d0, d1, -1, -1);
  std::memcpy(out(id), v.data(), v.size() * sizeof(double));
  return done(id);
}

Var Tape::scalar(double v) {
  int32_t id = alloc(Op::Leaf, 0, 1, 1, -1, -1);
  out(id)[0] = v;
  return done(id);
}

Var Tape::zeros(size_t n) {
  int32_t id = alloc(Op::Leaf, 1, static_cast<uint32_t>(n), 1, -1, -1);
  std::memset(out(id), 0, n * sizeof(double));
  return done(id);
}

Var Tape::watch(Tensor& t) {
  auto it = watched_.find(&t);
  if (it != watched_.end()) return Var{this, it->second};
  Var v = leaf(t);
  nodes_[static_cast<size_t>(v.id)].source = &t;
  watched_.emplace(&t, v.id);
  return v;
}

// -- forward ---------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  check_same_tape("matmul", a);
  check_same_tape("matmul", b);
  const Node& na = nodes_[static_cast<size_t>(a.id)];
  const Node& nb = nodes_[static_cast<size_t>(b.id)];
  if (na.rank != 2) shape_fail1("matmul", a, "matrix lhs");
  if (nb.rank == 1) {
    if (na.d1 != nb.d0) shape_fail("matmul", a, b);
    int32_t id = alloc(Op::MatMul, 1, na.d0, 1, a.id, b.id);
    const double* A = val_.data() + nodes_[static_cast<size_t>(a.id)].off;
    const double* x = val_.data() + nodes_[static_cast<size_t>(b.id)].off;
    double* y = out(id);
    size_t r = na.d0, c = na.d1;
    for (size_t i = 0; i < r; ++i) {
      const double* arow = A + i * c;
      double acc = 0.0;
      for (size_t j = 0; j < c; ++j) acc += arow[j] * x[j];
      y[i] = acc;
    }
    return done(id);
  }
  if (nb.rank == 2) {
    if (na.d1 != nb.d0) shape_fail("matmul", a, b);
    int32_t id = alloc(Op::MatMul, 2, na.d0, nb.d1, a.id, b.id);
    const double* A = val_.data() + nodes_[static_cast<size_t>(a.id)].off;
    const double* B = val_.data() + nodes_[static_cast<size_t>(b.id)].off;
    double* C = out(id);
    size_t r = na.d0, c = na.d1, k = nb.d1;
    std::memset(C, 0, r * k * sizeof(double));
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) {
        double aij = A[i * c + j];
        const double* brow = B + j * k;
        double* crow = C + i * k;
        for (size_t l = 0; l < k; ++l) crow[l] += aij * brow[l];
      }
    return done(id);
  }
  shape_fail("matmul", a, b);
}

#define PMN_BINOP_PRE(opname)                                        \
  check_same_tape(opname, a);                                        \
  check_same_tape(opname, b);                                        \
  const Node& na = nodes_[static_cast<size_t>(a.id)];                \
  const Node& nb = nodes_[static_cast<size_t>(b.id)];                \
  if (na.rank != nb.rank || na.d0 != nb.d0 || na.d1 != nb.d1)        \
    shape_fail(opname, a, b);

Var Tape::add(Var a, Var b) {
  PMN_BINOP_PRE("add")
  int32_t id = alloc(Op::Add, na.rank, na.d0, na.d1, a.id, b.id);
  const double* x = val_.data() + nodes_[static_cast<size_t>(a.id)].off;
  const double* y = val_.data() + nodes_[static_cast<size_t>(b.id)].off;
  double* z = out(id);
  int32_t len = nodes_.back().len;
  for (int32_t i = 0; i < len; ++i) z[i] = x[i] + y[i];
  return done(id);
}

Var Tape::sub(Var a, Var b) {
  PMN_BINOP_PRE("sub")
  int32_t id = alloc(Op::Sub, na.rank, na.d0, na.d1, a.id, b.id);
  const double* x = val_.data() + nodes_[static_cast<size_t>(a.id)].off;
  const double* y = val_.data() + nodes_[static_cast<size_t>(b.id)].off;
  double* z = out(id);
  int32_t len = nodes_.back().len;
  for (int32_t i = 0; i < len; ++i) z[i] = x[i] - y[i];
  return done(id);
}

Var Tape::mul(Var a, Var b) {
  PMN_BINOP_PRE("mul")
  int32_t id = alloc(Op::Mul, na.rank, na.d0, na.d1, a.id, b.id);
  const double* x = val_.data() + nodes_[static_cast<size_t>(a.id)].off;
  const double* y = val_.data() + nodes_[static_cast<size_t>(b.id)].off;
  double* z = out(id);
  int32_t len = nodes_.back().len;
  for (int32_t i = 0; i < len; ++i) z[i] = x[i] * y[i];
  return done(id);
}

#undef PMN_BINOP_PRE

Var Tape::scale(Var a, double c) {
  check_same_tape("scale", a);
  const Node& na = nodes_[static_cast<size_t>(a.id)];
  int32_t id = alloc(Op::Scale, na.rank, na.d0, na.d1, a.id, -1);
  nodes_.back().darg = c;
  const double* x = val_.data() + nodes_[static_cast<size_t>(a.id)].off;
  double* z = out(id);
  int32_t len = nodes_.back().len;
  for (int32_t i = 0; i < len; ++i) z[i] = x[i] * c;
  return done(id);
}

Var Tape::add_scalar(Var a, double c) {
  check_same_tape("add_scalar", a);
  const Node& na = nodes_[static_cast<size_t>(a.id)];
  int32_t id = alloc(Op::AddScalar, na.rank, na.d0, na.d1, a.id, -1);
  nodes_.back().darg = c;
  const double* x = val_.data() + nodes_[static_cast<size_t>(a.id)].off;
  double* z = out(id);
  int32_t len = nodes_.back().len;
  for (int32_t i = 0; i < len; ++i) z[i] = x[i] + c;
  return done(id);
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  size_t total = 0;
  for (Var p : parts) {
    check_same_tape("concat", p);
    if (p.rank() > 1) shape_fail1("concat", p, "rank-1 inputs");
    total += p.size();
  }
  int32_t xstart = static_cast<int32_t>(xin_.size());
  for (Var p : parts) xin_.push_back(p.id);
  int32_t id = alloc(Op::Concat, 1, static_cast<uint32_t>(total), 1, -1, -1);
  nodes_.back().xstart = xstart;
  nodes_.back().xcount = static_cast<int32_t>(parts.size());
  double* z = out(id);
  for (Var p : parts) {
    auto v = p.val();
    std::memcpy(z, v.data(), v.size() * sizeof(double));
    z += v.size();
  }
  return done(id);
}

Var Tape::concat(Var a, Var b) {
  Var parts[2] = {a, b};
  return concat(std::span<const Var>(parts, 2));
}

Var Tape::concat(Var a, Var b, Var c) {
  Var parts[3] = {a, b, c};
  return concat(std::span<const Var>(parts, 3));
}

Var Tape::slice(Var a, size_t start, size_t len) {
  check_same_tape("slice", a);
  if (a.rank() != 1) shape_fail1("slice", a, "rank-1 input");
  if (start + len > a.size() || len == 0)
    throw ShapeError(strformat("slice: [%zu,%zu) out of range for %s", start,
                               start + len, var_shape_str(a).c_str()));
  int32_t id = alloc(Op::Slice, 1, static_cast<uint32_t>(len), 1, a.id, -1);
  nodes_.back().iarg = static_cast<int32_t>(start);
  std::memcpy(out(id), a.val().data() + start, len * sizeof(double));
  return done(id);
}

Var Tape::row(Var m, size_t r) {
  check_same_tape("row", m);
  if (m.rank() != 2) shape_fail1("row", m, "matrix input");
  if (r >= m.rows()) throw ShapeError(strformat("row: index %zu out of %zu", r, m.rows()));
  size_t c = m.cols();
  int32_t id = alloc(Op::Row, 1, static_cast<uint32_t>(c), 1, m.id, -1);
  nodes_.back().iarg = static_cast<int32_t>(r);
  std::memcpy(out(id), m.val().data() + r * c, c * sizeof(double));
  return done(id);
}

Var Tape::pick(Var v, size_t i) {
  check_same_tape("pick", v);
  if (v.rank() != 1) shape_fail1("pick", v, "rank-1 input");
  if (i >= v.size()) throw ShapeError(strformat("pick: index %zu out of %zu", i, v.size()));
  int32_t id = alloc(Op::Pick, 0, 1, 1, v.id, -1);
  nodes_.back().iarg = static_cast<int32_t>(i);
  out(id)[0] = v.val()[i];
  return done(id);
}

Var Tape::sum(Var a) {
  check_same_tape("sum", a);
  int32_t id = alloc(Op::SumAll, 0, 1, 1, a.id, -1);
  auto v = a.val();
  double acc = 0.0;
  for (double x : v) acc += x;
  out(id)[0] = acc;
  return done(id);
}

Var Tape::sum_axis(Var m, int axis) {
  check_same_tape("sum_axis", m);
  if (m.rank() != 2) shape_fail1("sum_axis", m, "matrix input");
  if (axis != 0 && axis != 1) throw ShapeError("sum_axis: axis must be 0 or 1");
  size_t r = m.rows(), c = m.cols();
  uint32_t n = static_cast<uint32_t>(axis == 0 ? c : r);
  int32_t id = alloc(Op::SumAxis, 1, n, 1, m.id, -1);
  nodes_.back().iarg = axis;
  const double* x = m.val().data();
  double* z = out(id);
  std::memset(z, 0, n * sizeof(double));
  if (axis == 0) {
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) z[j] += x[i * c + j];
  } else {
    for (size_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (size_t j = 0; j < c; ++j) acc += x[i * c + j];
      z[i] = acc;
    }
  }
  return done(id);
}

Var Tape::softmax(Var a) {
  check_same_tape("softmax", a);
  if (a.rank() != 1) shape_fail1("softmax", a, "rank-1 input");
  int32_t id = alloc(Op::Softmax, 1, static_cast<uint32_t>(a.size()), 1, a.id, -1);
  auto x = a.val();
  double* z = out(id);
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double denom = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    z[i] = std::exp(x[i] - mx);
    denom += z[i];
  }
  double inv = 1.0 / denom;
  for (size_t i = 0; i < x.size(); ++i) z[i] *= inv;
  return done(id);
}

Var Tape::log_softmax(Var a) {
  check_same_tape("log_softmax", a);
  if (a.rank() != 1) shape_fail1("log_softmax", a, "rank-1 input");
  int32_t id = alloc(Op::LogSoftmax, 1, static_cast<uint32_t>(a.size()), 1, a.id, -1);
  auto x = a.val();
  double* z = out(id);
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double denom = 0.0;
  for (size_t i = 0; i < x.size(); ++i) denom += std::exp(x[i] - mx);
  double lse = mx + std::log(denom);
  for (size_t i = 0; i < x.size(); ++i) z[i] = x[i] - lse;
  return done(id);
}

#define PMN_UNOP(fname, opkind, expr)                                        \
  Var Tape::fname(Var a) {                                                   \
    check_same_tape(#fname, a);                                              \
    const Node& na = nodes_[static_cast<size_t>(a.id)];                      \
    int32_t id = alloc(opkind, na.rank, na.d0, na.d1, a.id, -1);             \
    const double* x = val_.data() + nodes_[static_cast<size_t>(a.id)].off;   \
    double* z = out(id);                                                     \
    int32_t len = nodes_.back().len;                                         \
    for (int32_t i = 0; i < len; ++i) {                                      \
      double v = x[i];                                                       \
      z[i] = (expr);                                                         \
    }                                                                        \
    return done(id);                                                       \
  }

PMN_UNOP(sigmoid, Op::Sigmoid, 1.0 / (1.0 + std::exp(-v)))
PMN_UNOP(tanh_, Op::Tanh, std::tanh(v))
PMN_UNOP(relu, Op::Relu, v > 0.0 ? v : 0.0)
PMN_UNOP(exp_, Op::Exp, std::exp(v))
PMN_UNOP(log_, Op::Log, std::log(v))
PMN_UNOP(softplus, Op::Softplus, v > 30.0 ? v : std::log1p(std::exp(v)))

#undef PMN_UNOP

Var Tape::weighted_sum(std::span<const Var> items, Var weights) {
  if (items.empty()) throw ShapeError("weighted_sum: no items");
  check_same_tape("weighted_sum", weights);
  if (weights.rank() != 1 || weights.size() != items.size())
    throw ShapeError(strformat("weighted_sum: %zu items but %zu weights",
                               items.size(), weights.size()));
  size_t len = items[0].size();
  for (Var it : items) {
    check_same_tape("weighted_sum", it);
    if (it.rank() != 1 || it.size() != len) shape_fail("weighted_sum", items[0], it);
  }
  int32_t xstart = static_cast<int32_t>(xin_.size());
  for (Var it : items) xin_.push_back(it.id);
  int32_t id = alloc(Op::WeightedSum, 1, static_cast<uint32_t>(len), 1, weights.id, -1);
  nodes_.back().xstart = xstart;
  nodes_.back().xcount = static_cast<int32_t>(items.size());
  const double* w = weights.val().data();
  double* z = out(id);
  std::memset(z, 0, len * sizeof(double));
  for (size_t j = 0; j < items.size(); ++j) {
    const double* x = val_.data() + nodes_[static_cast<size_t>(xin_[static_cast<size_t>(xstart) + j])].off;
    double wj = w[j];
    for (size_t i = 0; i < len; ++i) z[i] += wj * x[i];
  }
  return done(id);
}

Var Tape::stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  size_t c = rows[0].size();
  for (Var r : rows) {
    check_same_tape("stack_rows", r);
    if (r.rank() != 1 || r.size() != c) shape_fail("stack_rows", rows[0], r);
  }
  int32_t xstart = static_cast<int32_t>(xin_.size());
  for (Var r : rows) xin_.push_back(r.id);
  int32_t id = alloc(Op::StackRows, 2, static_cast<uint32_t>(rows.size()),
                     static_cast<uint32_t>(c), -1, -1);
  nodes_.back().xstart = xstart;
  nodes_.back().xcount = static_cast<int32_t>(rows.size());
  double* z = out(id);
  for (Var r : rows) {
    std::memcpy(z, r.val().data(), c * sizeof(double));
    z += c;
  }
  return done(id);
}

Var Tape::expand(Var s, size_t n) {
  check_same_tape("expand", s);
  if (s.rank() != 0) shape_fail1("expand", s, "scalar input");
  int32_t id = alloc(Op::Expand, 1, static_cast<uint32_t>(n), 1, s.id, -1);
  nodes_.back().iarg = static_cast<int32_t>(n);
  double v = s.val()[0];
  double* z = out(id);
  for (size_t i = 0; i < n; ++i) z[i] = v;
  return done(id);
}

// -- backward ---------------------------------------------------------------

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.tape != this)
    throw ValueError("backward: loss is not recorded on this tape");
  const Node& ln = nodes_[static_cast<size_t>(loss.id)];
  if (ln.len != 1 || ln.rank != 0)
    throw ValueError(strformat("backward: loss must be scalar, got %d values", ln.len));

  size_t span_end = static_cast<size_t>(ln.off) + 1;
  if (grad_.size() < val_.size()) grad_.resize(val_.size());
  std::memset(grad_.data(), 0, span_end * sizeof(double));
  grad_[static_cast<size_t>(ln.off)] = 1.0;

  for (int32_t id = loss.id; id >= 0; --id) backward_node(id);

  for (int32_t id = 0; id <= loss.id; ++id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.op == Op::Leaf && n.source != nullptr) {
      auto& g = n.source->grad();
      const double* src = grad_.data() + n.off;
      for (int32_t i = 0; i < n.len; ++i) g[static_cast<size_t>(i)] += src[i];
    }
  }
}

void Tape::backward_node(int32_t id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  const double* g = grad_.data() + n.off;
  const double* y = val_.data() + n.off;
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::MatMul: {
      const Node& a = nodes_[static_cast<size_t>(n.in0)];
      const Node& b = nodes_[static_cast<size_t>(n.in1)];
      double* ga = grad_.data() + a.off;
      double* gb = grad_.data() + b.off;
      const double* A = val_.data() + a.off;
      const double* B = val_.data() + b.off;
      size_t r = a.d0, c = a.d1;
      if (b.rank == 1) {
        for (size_t i = 0; i < r; ++i) {
          double gi = g[i];
          if (gi == 0.0) continue;
          const double* arow = A + i * c;
          double* garow = ga + i * c;
          for (size_t j = 0; j < c; ++j) {
            garow[j] += gi * B[j];
            gb[j] += gi * arow[j];
          }
        }
      } else {
        size_t k = b.d1;
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) {
            const double* grow = g + i * k;
            const double* brow = B + j * k;
            double acc = 0.0;
            for (size_t l = 0; l < k; ++l) acc += grow[l] * brow[l];
            ga[i * c + j] += acc;
            double aij = A[i * c + j];
            double* gbrow = gb + j * k;
            for (size_t l = 0; l < k; ++l) gbrow[l] += aij * grow[l];
          }
      }
      break;
    }
    case Op::Add: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      double* gb = grad_.data() + nodes_[static_cast<size_t>(n.in1)].off;
      for (int32_t i = 0; i < n.len; ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
      break;
    }
    case Op::Sub: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      double* gb = grad_.data() + nodes_[static_cast<size_t>(n.in1)].off;
      for (int32_t i = 0; i < n.len; ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
      break;
    }
    case Op::Mul: {
      const Node& a = nodes_[static_cast<size_t>(n.in0)];
      const Node& b = nodes_[static_cast<size_t>(n.in1)];
      double* ga = grad_.data() + a.off;
      double* gb = grad_.data() + b.off;
      const double* xa = val_.data() + a.off;
      const double* xb = val_.data() + b.off;
      for (int32_t i = 0; i < n.len; ++i) {
        ga[i] += g[i] * xb[i];
        gb[i] += g[i] * xa[i];
      }
      break;
    }
    case Op::Scale: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      for (int32_t i = 0; i < n.len; ++i) ga[i] += g[i] * n.darg;
      break;
    }
    case Op::AddScalar: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      for (int32_t i = 0; i < n.len; ++i) ga[i] += g[i];
      break;
    }
    case Op::Concat: {
      const double* gp = g;
      for (int32_t j = 0; j < n.xcount; ++j) {
        const Node& p = nodes_[static_cast<size_t>(xin_[static_cast<size_t>(n.xstart + j)])];
        double* gpart = grad_.data() + p.off;
        for (int32_t i = 0; i < p.len; ++i) gpart[i] += gp[i];
        gp += p.len;
      }
      break;
    }
    case Op::Slice: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off + n.iarg;
      for (int32_t i = 0; i < n.len; ++i) ga[i] += g[i];
      break;
    }
    case Op::Row: {
      const Node& m = nodes_[static_cast<size_t>(n.in0)];
      double* ga = grad_.data() + m.off + static_cast<int64_t>(n.iarg) * m.d1;
      for (int32_t i = 0; i < n.len; ++i) ga[i] += g[i];
      break;
    }
    case Op::Pick: {
      grad_[static_cast<size_t>(nodes_[static_cast<size_t>(n.in0)].off + n.iarg)] += g[0];
      break;
    }
    case Op::SumAll: {
      const Node& a = nodes_[static_cast<size_t>(n.in0)];
      double* ga = grad_.data() + a.off;
      double gv = g[0];
      for (int32_t i = 0; i < a.len; ++i) ga[i] += gv;
      break;
    }
    case Op::SumAxis: {
      const Node& m = nodes_[static_cast<size_t>(n.in0)];
      double* ga = grad_.data() + m.off;
      size_t r = m.d0, c = m.d1;
      if (n.iarg == 0) {
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) ga[i * c + j] += g[j];
      } else {
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
      }
      break;
    }
    case Op::Softmax: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      double dotgy = 0.0;
      for (int32_t i = 0; i < n.len; ++i) dotgy += g[i] * y[i];
      for (int32_t i = 0; i < n.len; ++i) ga[i] += y[i] * (g[i] - dotgy);
      break;
    }
    case Op::LogSoftmax: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      double gsum = 0.0;
      for (int32_t i = 0; i < n.len; ++i) gsum += g[i];
      for (int32_t i = 0; i < n.len; ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
      break;
    }
    case Op::Sigmoid: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      for (int32_t i = 0; i < n.len; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case Op::Tanh: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      for (int32_t i = 0; i < n.len; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case Op::Relu: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      for (int32_t i = 0; i < n.len; ++i) ga[i] += y[i] > 0.0 ? g[i] : 0.0;
      break;
    }
    case Op::Exp: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      for (int32_t i = 0; i < n.len; ++i) ga[i] += g[i] * y[i];
      break;
    }
    case Op::Log: {
      const Node& a = nodes_[static_cast<size_t>(n.in0)];
      double* ga = grad_.data() + a.off;
      const double* x = val_.data() + a.off;
      for (int32_t i = 0; i < n.len; ++i) ga[i] += g[i] / x[i];
      break;
    }
    case Op::Softplus: {
      const Node& a = nodes_[static_cast<size_t>(n.in0)];
      double* ga = grad_.data() + a.off;
      const double* x = val_.data() + a.off;
      for (int32_t i = 0; i < n.len; ++i)
        ga[i] += g[i] / (1.0 + std::exp(-x[i]));
      break;
    }
    case Op::WeightedSum: {
      const Node& w = nodes_[static_cast<size_t>(n.in0)];
      double* gw = grad_.data() + w.off;
      const double* wv = val_.data() + w.off;
      for (int32_t j = 0; j < n.xcount; ++j) {
        const Node& it = nodes_[static_cast<size_t>(xin_[static_cast<size_t>(n.xstart + j)])];
        double* gi = grad_.data() + it.off;
        const double* xi = val_.data() + it.off;
        double wj = wv[j];
        double acc = 0.0;
        for (int32_t i = 0; i < n.len; ++i) {
          gi[i] += wj * g[i];
          acc += g[i] * xi[i];
        }
        gw[j] += acc;
      }
      break;
    }
    case Op::StackRows: {
      for (int32_t j = 0; j < n.xcount; ++j) {
        const Node& rnode = nodes_[static_cast<size_t>(xin_[static_cast<size_t>(n.xstart + j)])];
        double* gr = grad_.data() + rnode.off;
        const double* grow = g + static_cast<int64_t>(j) * n.d1;
        for (uint32_t i = 0; i < n.d1; ++i) gr[i] += grow[i];
      }
      break;
    }
    case Op::Expand: {
      double* ga = grad_.data() + nodes_[static_cast<size_t>(n.in0)].off;
      double acc = 0.0;
      for (int32_t i = 0; i < n.len; ++i) acc += g[i];
      ga[0] += acc;
      break;
    }
  }
}

}  // namespace pmn
