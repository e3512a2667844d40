#pragma once

#include <span>
#include <string>
#include <vector>

#include "pmn/params.hpp"

namespace pmn {

enum class Act { None, Relu, Tanh };

/// Plain fully-connected stack. Layer i maps sizes[i] -> sizes[i+1] and
/// applies acts[i].
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& label, std::vector<size_t> sizes, std::vector<Act> acts,
      Rng& rng);

  Var forward(Tape& tape, Var x) const;
  Var operator()(Tape& tape, Var x) const { return forward(tape, x); }

  size_t in_size() const { return sizes_.front(); }
  size_t out_size() const { return sizes_.back(); }
  const ParamsPtr& params() const { return params_; }

 private:
  std::vector<size_t> sizes_;
  std::vector<Act> acts_;
  ParamsPtr params_;
};

/// Single GRU step. Gates use sigmoid, the candidate uses tanh:
///   z = sigmoid(Wz [x,h] + bz), r = sigmoid(Wr [x,h] + br)
///   hc = tanh(Wh [x, r*h] + bh), h' = (1-z)*h + z*hc
class GruCell {
 public:
  GruCell() = default;
  GruCell(const std::string& label, size_t input, size_t hidden, Rng& rng);
  explicit GruCell(const std::string& label, size_t input, Rng& rng)
      : GruCell(label, input, 512, rng) {}

  Var step(Tape& tape, Var x, Var h) const;
  Var zero_state(Tape& tape) const { return tape.zeros(hidden_); }

  size_t input_size() const { return input_; }
  size_t hidden_size() const { return hidden_; }
  const ParamsPtr& params() const { return params_; }

 private:
  size_t input_ = 0, hidden_ = 512;
  ParamsPtr params_;
};

enum class AttnNorm { Softmax, Sigmoid, None };

/// Scores a set of items against a key:
///   score_i = z( relu(Wf k + bf) * relu(Wg d_i + bg) )
/// with z a linear map to one number, then an optional normalization over
/// the item axis.
class SoftAttention {
 public:
  SoftAttention() = default;
  SoftAttention(const std::string& label, size_t key_size, size_t item_size,
                size_t joint_size, AttnNorm mode, Rng& rng);
  /// View over an existing scorer's parameters, possibly with a different
  /// normalization.
  SoftAttention(ParamsPtr shared, size_t key_size, size_t item_size,
                size_t joint_size, AttnNorm mode);

  /// Items given as individual vectors.
  Var score(Tape& tape, Var key, std::span<const Var> items) const;
  /// Items given as rows of a matrix.
  Var score_rows(Tape& tape, Var key, Var items) const;

  AttnNorm mode() const { return mode_; }
  const ParamsPtr& params() const { return params_; }

 private:
  Var finish(Tape& tape, std::span<const Var> per_item) const;
  size_t key_size_ = 0, item_size_ = 0, joint_size_ = 0;
  AttnNorm mode_ = AttnNorm::Softmax;
  ParamsPtr params_;
};

/// y = tanh(W1 x + b1) * sigmoid(W2 x + b2), elementwise, equal widths.
class GatedTanh {
 public:
  GatedTanh() = default;
  GatedTanh(const std::string& label, size_t in, size_t out, Rng& rng);

  Var forward(Tape& tape, Var x) const;
  size_t out_size() const { return out_; }
  const ParamsPtr& params() const { return params_; }

 private:
  size_t in_ = 0, out_ = 0;
  ParamsPtr params_;
};

/// Token embedding table.
class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& label, size_t vocab, size_t width, Rng& rng);
  Embedding(const std::string& label, size_t vocab, Rng& rng)
      : Embedding(label, vocab, 300, rng) {}

  Var lookup(Tape& tape, size_t token) const;
  /// The whole table as a matrix (vocab x width).
  Var table(Tape& tape) const;

  size_t vocab() const { return vocab_; }
  size_t width() const { return width_; }
  const ParamsPtr& params() const { return params_; }

 private:
  size_t vocab_ = 0, width_ = 0;
  ParamsPtr params_;
};

/// Per-feature normalization with running statistics and a learned affine:
///   y = gamma * (x - mu) / sqrt(var + eps) + beta.
/// Statistics are buffers, not weights: they adapt only while the owning
/// module is being trained and are held fixed at evaluation, which keeps
/// single-example traces well defined.
class AffineNorm {
 public:
  AffineNorm() = default;
  AffineNorm(const std::string& label, size_t width, Rng& rng);

  Var forward(Tape& tape, Var x, bool update_stats) const;
  const ParamsPtr& params() const { return params_; }

 private:
  size_t width_ = 0;
  double momentum_ = 0.99;
  ParamsPtr params_;
};

}  // namespace pmn
