#include "pmn/blocks.hpp"

#include <cmath>

namespace pmn {

namespace {
Var apply_act(Tape& tape, Var x, Act a) {
  switch (a) {
    case Act::None: return x;
    case Act::Relu: return tape.relu(x);
    case Act::Tanh: return tape.tanh_(x);
  }
  return x;
}
}  // namespace

// -- Mlp ---------------------------------------------------------------------

Mlp::Mlp(const std::string& label, std::vector<size_t> sizes,
         std::vector<Act> acts, Rng& rng)
    : sizes_(std::move(sizes)), acts_(std::move(acts)), params_(make_params(label)) {
  if (sizes_.size() < 2) throw ValueError("mlp " + label + ": needs >= 2 sizes");
  if (acts_.size() != sizes_.size() - 1)
    throw ValueError("mlp " + label + ": one activation per layer required");
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    params_->add("W" + std::to_string(l), {sizes_[l + 1], sizes_[l]}, rng);
    params_->add_const("b" + std::to_string(l), {sizes_[l + 1]}, 0.0);
  }
}

Var Mlp::forward(Tape& tape, Var x) const {
  if (x.rank() != 1 || x.size() != sizes_.front())
    throw ShapeError(strformat("mlp %s: input size %zu, expected %zu",
                               params_->label().c_str(), x.size(), sizes_.front()));
  Var h = x;
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    Var W = params_->var(tape, "W" + std::to_string(l));
    Var b = params_->var(tape, "b" + std::to_string(l));
    h = apply_act(tape, tape.add(tape.matmul(W, h), b), acts_[l]);
  }
  return h;
}

// -- GruCell -----------------------------------------------------------------

GruCell::GruCell(const std::string& label, size_t input, size_t hidden, Rng& rng)
    : input_(input), hidden_(hidden), params_(make_params(label)) {
  params_->add("Wz", {hidden_, input_ + hidden_}, rng);
  params_->add_const("bz", {hidden_}, 0.0);
  params_->add("Wr", {hidden_, input_ + hidden_}, rng);
  params_->add_const("br", {hidden_}, 0.0);
  params_->add("Wh", {hidden_, input_ + hidden_}, rng);
  params_->add_const("bh", {hidden_}, 0.0);
}

Var GruCell::step(Tape& tape, Var x, Var h) const {
  if (x.size() != input_)
    throw ShapeError(strformat("gru %s: input size %zu, expected %zu",
                               params_->label().c_str(), x.size(), input_));
  if (h.size() != hidden_)
    throw ShapeError(strformat("gru %s: state size %zu, expected %zu",
                               params_->label().c_str(), h.size(), hidden_));
  Var xh = tape.concat(x, h);
  Var z = tape.sigmoid(tape.add(tape.matmul(params_->var(tape, "Wz"), xh),
                                params_->var(tape, "bz")));
  Var r = tape.sigmoid(tape.add(tape.matmul(params_->var(tape, "Wr"), xh),
                                params_->var(tape, "br")));
  Var xrh = tape.concat(x, tape.mul(r, h));
  Var hc = tape.tanh_(tape.add(tape.matmul(params_->var(tape, "Wh"), xrh),
                               params_->var(tape, "bh")));
  // (1-z)*h + z*hc
  Var one_minus_z = tape.add_scalar(tape.scale(z, -1.0), 1.0);
  return tape.add(tape.mul(one_minus_z, h), tape.mul(z, hc));
}

// -- SoftAttention -----------------------------------------------------------

SoftAttention::SoftAttention(const std::string& label, size_t key_size,
                             size_t item_size, size_t joint_size, AttnNorm mode,
                             Rng& rng)
    : key_size_(key_size), item_size_(item_size), joint_size_(joint_size),
      mode_(mode), params_(make_params(label)) {
  params_->add("Wf", {joint_size_, key_size_}, rng);
  params_->add_const("bf", {joint_size_}, 0.0);
  params_->add("Wg", {joint_size_, item_size_}, rng);
  params_->add_const("bg", {joint_size_}, 0.0);
  params_->add("wz", {1, joint_size_}, rng);
  params_->add_const("bz", {1}, 0.0);
}

SoftAttention::SoftAttention(ParamsPtr shared, size_t key_size, size_t item_size,
                             size_t joint_size, AttnNorm mode)
    : key_size_(key_size), item_size_(item_size), joint_size_(joint_size),
      mode_(mode), params_(std::move(shared)) {
  for (const char* name : {"Wf", "bf", "Wg", "bg", "wz", "bz"})
    if (!params_->has(name))
      throw ValueError("attention: shared parameter set lacks entry " +
                       std::string(name));
}

Var SoftAttention::finish(Tape& tape, std::span<const Var> per_item) const {
  Var s = tape.concat(per_item);
  switch (mode_) {
    case AttnNorm::Softmax: return tape.softmax(s);
    case AttnNorm::Sigmoid: return tape.sigmoid(s);
    case AttnNorm::None: return s;
  }
  return s;
}

Var SoftAttention::score(Tape& tape, Var key, std::span<const Var> items) const {
  if (items.empty())
    throw ValueError("attention " + params_->label() + ": no items to attend over");
  if (key.size() != key_size_)
    throw ShapeError(strformat("attention %s: key size %zu, expected %zu",
                               params_->label().c_str(), key.size(), key_size_));
  Var f = tape.relu(tape.add(tape.matmul(params_->var(tape, "Wf"), key),
                             params_->var(tape, "bf")));
  Var wz = params_->var(tape, "wz");
  Var bz = params_->var(tape, "bz");
  std::vector<Var> scores;
  scores.reserve(items.size());
  Var Wg = params_->var(tape, "Wg");
  Var bg = params_->var(tape, "bg");
  for (Var item : items) {
    if (item.size() != item_size_)
      throw ShapeError(strformat("attention %s: item size %zu, expected %zu",
                                 params_->label().c_str(), item.size(), item_size_));
    Var g = tape.relu(tape.add(tape.matmul(Wg, item), bg));
    scores.push_back(tape.add(tape.matmul(wz, tape.mul(f, g)), bz));
  }
  return finish(tape, scores);
}

Var SoftAttention::score_rows(Tape& tape, Var key, Var items) const {
  if (items.rank() != 2)
    throw ShapeError("attention " + params_->label() + ": items must be a matrix");
  std::vector<Var> rows;
  rows.reserve(items.rows());
  for (size_t i = 0; i < items.rows(); ++i) rows.push_back(tape.row(items, i));
  return score(tape, key, rows);
}

// -- GatedTanh ---------------------------------------------------------------

GatedTanh::GatedTanh(const std::string& label, size_t in, size_t out, Rng& rng)
    : in_(in), out_(out), params_(make_params(label)) {
  params_->add("W1", {out_, in_}, rng);
  params_->add_const("b1", {out_}, 0.0);
  params_->add("W2", {out_, in_}, rng);
  params_->add_const("b2", {out_}, 0.0);
}

Var GatedTanh::forward(Tape& tape, Var x) const {
  if (x.size() != in_)
    throw ShapeError(strformat("gated_tanh %s: input size %zu, expected %zu",
                               params_->label().c_str(), x.size(), in_));
  Var a = tape.tanh_(tape.add(tape.matmul(params_->var(tape, "W1"), x),
                              params_->var(tape, "b1")));
  Var g = tape.sigmoid(tape.add(tape.matmul(params_->var(tape, "W2"), x),
                                params_->var(tape, "b2")));
  return tape.mul(a, g);
}

// -- Embedding ---------------------------------------------------------------

Embedding::Embedding(const std::string& label, size_t vocab, size_t width, Rng& rng)
    : vocab_(vocab), width_(width), params_(make_params(label)) {
  params_->add("E", {vocab_, width_}, rng);
}

Var Embedding::lookup(Tape& tape, size_t token) const {
  if (token >= vocab_)
    throw ValueError(strformat("embedding %s: token %zu out of vocabulary %zu",
                               params_->label().c_str(), token, vocab_));
  return tape.row(params_->var(tape, "E"), token);
}

Var Embedding::table(Tape& tape) const { return params_->var(tape, "E"); }

// -- AffineNorm --------------------------------------------------------------

AffineNorm::AffineNorm(const std::string& label, size_t width, Rng& rng)
    : width_(width), params_(make_params(label)) {
  (void)rng;
  params_->add_const("gamma", {width_}, 1.0);
  params_->add_const("beta", {width_}, 0.0);
  params_->add_const("mu_run", {width_}, 0.0);
  params_->add_const("var_run", {width_}, 1.0);
  for (const char* stat : {"mu_run", "var_run"}) {
    auto& e = params_->entry(stat);
    e.statistic = true;
    e.trainable = false;
  }
}

Var AffineNorm::forward(Tape& tape, Var x, bool update_stats) const {
  if (x.size() != width_)
    throw ShapeError(strformat("norm %s: input size %zu, expected %zu",
                               params_->label().c_str(), x.size(), width_));
  Tensor& mu = (*params_)["mu_run"];
  Tensor& var = (*params_)["var_run"];
  if (update_stats) {
    auto xv = x.val();
    for (size_t i = 0; i < width_; ++i) {
      double d = xv[i] - mu[i];
      mu[i] += (1.0 - momentum_) * d;
      var[i] = momentum_ * var[i] + (1.0 - momentum_) * d * d;
    }
  }
  std::vector<double> inv(width_);
  for (size_t i = 0; i < width_; ++i) inv[i] = 1.0 / std::sqrt(var[i] + 1e-5);
  Var centered = tape.sub(x, tape.leaf(mu));
  Var scaled = tape.mul(centered, tape.leaf(std::span<const double>(inv), {width_}));
  return tape.add(tape.mul(scaled, params_->var(tape, "gamma")),
                  params_->var(tape, "beta"));
}

}  // namespace pmn
