#include <doctest.h>

#include <cmath>

#include "pmn/blocks.hpp"
#include "pmn/gradcheck.hpp"

using namespace pmn;

TEST_CASE("zero-weight relu mlp maps everything to zero") {
  Rng rng(1);
  Mlp m("m", {3, 4}, {Act::Relu}, rng);
  for (auto& e : m.params()->entries())
    for (size_t i = 0; i < e.value.size(); ++i) e.value[i] = 0.0;
  Tape tape;
  auto out = m.forward(tape, tape.leaf(Tensor::vec({1, -2, 3}))).val();
  for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("identity single layer passes input through") {
  Rng rng(1);
  Mlp m("m", {3, 3}, {Act::None}, rng);
  Tensor& W = (*m.params())["W0"];
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j) W.at2(i, j) = i == j ? 1.0 : 0.0;
  (*m.params())["b0"].values().assign(3, 0.0);
  Tape tape;
  auto out = m.forward(tape, tape.leaf(Tensor::vec({0.5, -1, 2}))).val();
  CHECK(out[0] == 0.5);
  CHECK(out[1] == -1.0);
  CHECK(out[2] == 2.0);
}

TEST_CASE("two-layer mlp equals a straight-line re-evaluation") {
  Rng rng(7);
  Mlp m("m", {4, 5, 3}, {Act::Relu, Act::Tanh}, rng);
  Tensor x(std::vector<size_t>{4});
  for (size_t i = 0; i < 4; ++i) x[i] = rng.uniform(-1, 1);

  // Independent evaluation with plain loops.
  const Tensor& W0 = m.params()->at("W0");
  const Tensor& b0 = m.params()->at("b0");
  const Tensor& W1 = m.params()->at("W1");
  const Tensor& b1 = m.params()->at("b1");
  double h[5], o[3];
  for (size_t i = 0; i < 5; ++i) {
    double acc = b0[i];
    for (size_t j = 0; j < 4; ++j) acc += W0.at2(i, j) * x[j];
    h[i] = acc > 0 ? acc : 0;
  }
  for (size_t i = 0; i < 3; ++i) {
    double acc = b1[i];
    for (size_t j = 0; j < 5; ++j) acc += W1.at2(i, j) * h[j];
    o[i] = std::tanh(acc);
  }

  Tape tape;
  auto got = m.forward(tape, tape.leaf(x)).val();
  for (size_t i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(o[i]).epsilon(1e-12));
}

TEST_CASE("gru with zero parameters halves the state") {
  Rng rng(1);
  GruCell gru("g", 3, 4, rng);
  for (auto& e : gru.params()->entries())
    for (size_t i = 0; i < e.value.size(); ++i) e.value[i] = 0.0;
  Tape tape;
  Tensor h0 = Tensor::vec({1.0, -2.0, 0.5, 4.0});
  auto h1 = gru.step(tape, tape.leaf(Tensor::vec({1, 2, 3})), tape.leaf(h0)).val();
  for (size_t i = 0; i < 4; ++i) CHECK(h1[i] == doctest::Approx(0.5 * h0[i]).epsilon(1e-15));
}

TEST_CASE("gru at the origin with zero biases stays at the origin") {
  Rng rng(2);
  GruCell gru("g", 3, 4, rng);
  (*gru.params())["bz"].values().assign(4, 0.0);
  (*gru.params())["br"].values().assign(4, 0.0);
  (*gru.params())["bh"].values().assign(4, 0.0);
  Tape tape;
  auto h1 = gru.step(tape, tape.zeros(3), tape.zeros(4)).val();
  for (double v : h1) CHECK(v == 0.0);
}

TEST_CASE("gru gate weights pass the finite-difference check") {
  Rng rng(3);
  GruCell gru("g", 3, 4, rng);
  Tensor x = Tensor::vec({0.3, -0.8, 0.2});
  Tensor h = Tensor::vec({0.1, 0.4, -0.2, 0.9});
  ScalarFn f = [&](Tape& t) {
    return t.sum(gru.step(t, t.watch(x), t.watch(h)));
  };
  auto rep = grad_check(f, *gru.params(), {});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gru default hidden width is 512") {
  Rng rng(4);
  GruCell gru("g", 16, rng);
  CHECK(gru.hidden_size() == 512);
}

TEST_CASE("attention over identical items is uniform") {
  Rng rng(5);
  SoftAttention attn("a", 4, 3, 6, AttnNorm::Softmax, rng);
  Tape tape;
  Var key = tape.leaf(Tensor::vec({1, 2, 3, 4}));
  Var item = tape.leaf(Tensor::vec({0.5, -0.5, 1}));
  Var items[4] = {item, item, item, item};
  auto scores = attn.score(tape, key, items).val();
  for (double s : scores) CHECK(s == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("attention scores permute with their items") {
  Rng rng(6);
  SoftAttention attn("a", 4, 3, 6, AttnNorm::Softmax, rng);
  Tape tape;
  Var key = tape.leaf(Tensor::vec({0.1, -0.4, 0.7, 0.2}));
  Tensor i0 = Tensor::vec({1, 0, 0}), i1 = Tensor::vec({0, 1, 0}),
         i2 = Tensor::vec({-1, 0.5, 2});
  Var fwd[3] = {tape.leaf(i0), tape.leaf(i1), tape.leaf(i2)};
  Var rev[3] = {tape.leaf(i2), tape.leaf(i1), tape.leaf(i0)};
  auto a = attn.score(tape, key, fwd).val();
  auto b = attn.score(tape, key, rev).val();
  CHECK(a[0] == doctest::Approx(b[2]).epsilon(1e-15));
  CHECK(a[1] == doctest::Approx(b[1]).epsilon(1e-15));
  CHECK(a[2] == doctest::Approx(b[0]).epsilon(1e-15));
}

TEST_CASE("attention matches a straight-line evaluation of its formula") {
  Rng rng(7);
  size_t kd = 3, id = 4, jd = 5, n = 3;
  SoftAttention attn("a", kd, id, jd, AttnNorm::Softmax, rng);
  Tensor key(std::vector<size_t>{kd});
  for (size_t i = 0; i < kd; ++i) key[i] = rng.uniform(-1, 1);
  std::vector<Tensor> items;
  for (size_t t = 0; t < n; ++t) {
    Tensor it(std::vector<size_t>{id});
    for (size_t i = 0; i < id; ++i) it[i] = rng.uniform(-1, 1);
    items.push_back(it);
  }

  // Straight-line: score_i = wz . (relu(Wf k + bf) * relu(Wg d_i + bg)) + bz,
  // then softmax.
  const Tensor& Wf = attn.params()->at("Wf");
  const Tensor& bf = attn.params()->at("bf");
  const Tensor& Wg = attn.params()->at("Wg");
  const Tensor& bg = attn.params()->at("bg");
  const Tensor& wz = attn.params()->at("wz");
  const Tensor& bz = attn.params()->at("bz");
  std::vector<double> fk(jd);
  for (size_t i = 0; i < jd; ++i) {
    double acc = bf[i];
    for (size_t j = 0; j < kd; ++j) acc += Wf.at2(i, j) * key[j];
    fk[i] = acc > 0 ? acc : 0;
  }
  std::vector<double> raw(n);
  for (size_t t = 0; t < n; ++t) {
    double score = bz[0];
    for (size_t i = 0; i < jd; ++i) {
      double acc = bg[i];
      for (size_t j = 0; j < id; ++j) acc += Wg.at2(i, j) * items[t][j];
      double g = acc > 0 ? acc : 0;
      score += wz.at2(0, i) * fk[i] * g;
    }
    raw[t] = score;
  }
  double mx = std::max({raw[0], raw[1], raw[2]});
  double denom = 0;
  for (double r : raw) denom += std::exp(r - mx);
  std::vector<double> expect(n);
  for (size_t t = 0; t < n; ++t) expect[t] = std::exp(raw[t] - mx) / denom;

  Tape tape;
  std::vector<Var> vitems;
  for (const auto& it : items) vitems.push_back(tape.leaf(it));
  auto got = attn.score(tape, tape.leaf(key), vitems).val();
  for (size_t t = 0; t < n; ++t)
    CHECK(got[t] == doctest::Approx(expect[t]).epsilon(1e-12));
}

TEST_CASE("attention rejects an empty item list") {
  Rng rng(8);
  SoftAttention attn("a", 2, 2, 2, AttnNorm::Softmax, rng);
  Tape tape;
  Var key = tape.leaf(Tensor::vec({1, 2}));
  CHECK_THROWS_AS(attn.score(tape, key, {}), ValueError);
}

TEST_CASE("gated tanh: zero weights give exactly zero") {
  Rng rng(9);
  GatedTanh gt("g", 3, 4, rng);
  for (auto& e : gt.params()->entries())
    for (size_t i = 0; i < e.value.size(); ++i) e.value[i] = 0.0;
  Tape tape;
  auto out = gt.forward(tape, tape.leaf(Tensor::vec({1, 2, 3}))).val();
  for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("gated tanh output is bounded by (-1, 1)") {
  Rng rng(10);
  GatedTanh gt("g", 3, 4, rng);
  Tape tape;
  auto out = gt.forward(tape, tape.leaf(Tensor::vec({50, -50, 10}))).val();
  for (double v : out) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("gated tanh passes the finite-difference check") {
  Rng rng(11);
  GatedTanh gt("g", 3, 4, rng);
  Tensor x = Tensor::vec({0.2, -0.6, 1.1});
  ScalarFn f = [&](Tape& t) { return t.sum(gt.forward(t, t.watch(x))); };
  auto rep = grad_check(f, *gt.params(), {});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("embedding lookups are table rows; bad ids are rejected") {
  Rng rng(12);
  Embedding emb("e", 5, 7, rng);
  Tape tape;
  auto row = emb.lookup(tape, 3).val();
  const Tensor& table = emb.params()->at("E");
  for (size_t i = 0; i < 7; ++i) CHECK(row[i] == table.at2(3, i));
  CHECK_THROWS_AS(emb.lookup(tape, 5), ValueError);
}

TEST_CASE("embedding default width is 300") {
  Rng rng(13);
  Embedding emb("e", 4, rng);
  CHECK(emb.width() == 300);
}

TEST_CASE("affine norm trains its scale and freezes statistics at eval") {
  Rng rng(14);
  AffineNorm norm("n", 3, rng);
  Tensor x = Tensor::vec({2.0, -1.0, 0.5});
  Tape tape;
  std::vector<double> mu_before = norm.params()->at("mu_run").values();
  norm.forward(tape, tape.leaf(x), /*update_stats=*/false);
  CHECK(norm.params()->at("mu_run").values() == mu_before);
  norm.forward(tape, tape.leaf(x), /*update_stats=*/true);
  CHECK(norm.params()->at("mu_run").values() != mu_before);
  // Statistics are not optimizer targets.
  CHECK_FALSE(norm.params()->entry("mu_run").trainable);
  CHECK(norm.params()->entry("mu_run").statistic);
}

TEST_CASE("blocks own disjoint parameter sets") {
  Rng rng(15);
  Mlp a("a", {2, 2}, {Act::None}, rng);
  Mlp b("b", {2, 2}, {Act::None}, rng);
  CHECK(a.params().get() != b.params().get());
}
