#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "rfn/tensor.hpp"

using namespace rfn;

namespace {

double sum_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

}  // namespace

TEST_CASE("matmul values and errors") {
  Tape tape;
  auto a = constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto id2 = constant(Tensor::identity(2));
  auto out = tape.matmul(a, id2);
  CHECK(out->at(0, 0) == 1.0);
  CHECK(out->at(0, 1) == 2.0);
  CHECK(out->at(1, 0) == 3.0);
  CHECK(out->at(1, 1) == 4.0);

  auto row = constant(Tensor::from_rows({{1, 2}}));
  auto col = constant(Tensor::from_rows({{1}, {1}}));
  CHECK(tape.matmul(row, col)->at(0, 0) == 3.0);

  CHECK_THROWS_AS(tape.matmul(a, row), DimensionError);
  try {
    tape.matmul(a, row);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("2x2") != std::string::npos);
    CHECK(std::string(e.what()).find("1x2") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum equals ones times b transposed") {
  Rng rng(7);
  auto a = parameter(testing::random_tensor(3, 4, rng));
  auto b = constant(testing::random_tensor(4, 2, rng));

  Tape tape;
  auto loss = tape.sum_all(tape.matmul(a, b));
  tape.backward(loss);

  // d sum(a.b) / d a[i,k] = sum_j b[k,j]
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = b->at(k, 0) + b->at(k, 1);
      CHECK(a->grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  const TensorPtr params[] = {a};
  auto report = finite_diff_check(params, [&](Tape& t) { return t.sum_all(t.matmul(a, b)); });
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("elementwise ops and bias broadcast") {
  Tape tape;
  auto a = constant(Tensor::row({1, 2}));
  auto b = constant(Tensor::row({3, 4}));
  auto prod = tape.elementwise(a, b, ElementwiseKind::mul);
  CHECK(prod->at(0, 0) == 3.0);
  CHECK(prod->at(0, 1) == 8.0);

  auto m = constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto bias = constant(Tensor::row({10, 20}));
  auto shifted = tape.add(m, bias);
  CHECK(shifted->at(0, 0) == 11.0);
  CHECK(shifted->at(0, 1) == 22.0);
  CHECK(shifted->at(1, 0) == 13.0);
  CHECK(shifted->at(1, 1) == 24.0);

  auto bad = constant(Tensor::from_rows({{1, 2, 3}}));
  CHECK_THROWS_AS(tape.mul(m, bad), DimensionError);
  CHECK_THROWS_AS(tape.sub(m, bad), DimensionError);
}

TEST_CASE("elementwise mul gradient check") {
  Rng rng(11);
  auto a = parameter(testing::random_tensor(2, 3, rng));
  auto b = parameter(testing::random_tensor(2, 3, rng));
  const TensorPtr params[] = {a, b};
  auto report = finite_diff_check(params, [&](Tape& t) { return t.sum_all(t.mul(a, b)); });
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("bias broadcast gradient check") {
  Rng rng(12);
  auto m = parameter(testing::random_tensor(3, 2, rng));
  auto bias = parameter(testing::random_tensor(1, 2, rng));
  const TensorPtr params[] = {m, bias};
  auto report = finite_diff_check(params, [&](Tape& t) { return t.sum_all(t.mul(t.add(m, bias), t.add(m, bias))); });
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("concat_cols layout and gradient split") {
  Tape tape;
  auto p1 = constant(Tensor::row({1}));
  auto p2 = constant(Tensor::row({2}));
  auto p3 = constant(Tensor::row({3}));
  auto cat = tape.concat_cols({p1, p2, p3});
  CHECK(cat->rows() == 1);
  CHECK(cat->cols() == 3);
  CHECK(cat->at(0, 0) == 1.0);
  CHECK(cat->at(0, 1) == 2.0);
  CHECK(cat->at(0, 2) == 3.0);

  auto a = constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto b = constant(Tensor::from_rows({{5, 6, 7}, {8, 9, 10}}));
  auto wide = tape.concat_cols({a, b});
  CHECK(wide->rows() == 2);
  CHECK(wide->cols() == 5);
  CHECK(wide->at(0, 2) == 5.0);
  CHECK(wide->at(1, 4) == 10.0);

  auto ga = parameter(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto gb = parameter(Tensor::from_rows({{5, 6, 7}, {8, 9, 10}}));
  Tape t2;
  auto loss = t2.sum_all(t2.concat_cols({ga, gb}));
  t2.backward(loss);
  for (double g : ga->grad()) CHECK(g == 1.0);
  for (double g : gb->grad()) CHECK(g == 1.0);

  auto short_rows = constant(Tensor::row({1, 2}));
  CHECK_THROWS_AS(tape.concat_cols({a, short_rows}), DimensionError);
  CHECK_THROWS_AS(tape.concat_cols(std::span<const TensorPtr>{}), ContractError);
}

TEST_CASE("activations") {
  Tape tape;
  auto x = constant(Tensor::row({-1, 0, 2}));
  auto r = tape.activation(x, Activation::relu);
  CHECK(r->at(0, 0) == 0.0);
  CHECK(r->at(0, 1) == 0.0);
  CHECK(r->at(0, 2) == 2.0);

  auto s = tape.activation(constant(Tensor::row({0, 0})), Activation::softmax_rows);
  CHECK(s->at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s->at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

  auto e = tape.activation(constant(Tensor::row({-1})), Activation::elu);
  CHECK(e->at(0, 0) == doctest::Approx(std::expm1(-1.0)).epsilon(1e-15));
  CHECK(e->at(0, 0) == doctest::Approx(-0.6321205588).epsilon(1e-9));

  auto l = tape.activation(constant(Tensor::row({-10, 10})), Activation::leaky_relu, 0.2);
  CHECK(l->at(0, 0) == doctest::Approx(-2.0));
  CHECK(l->at(0, 1) == doctest::Approx(10.0));

  // identity is a pass-through, not a copy
  auto y = tape.activation(x, Activation::identity);
  CHECK(y.get() == x.get());
}

TEST_CASE("softmax rows sum to one and stay positive") {
  Rng rng(3);
  Tape tape;
  auto x = constant(testing::random_tensor(5, 7, rng, -30.0, 30.0));
  auto s = tape.activation(x, Activation::softmax_rows);
  for (std::size_t i = 0; i < s->rows(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < s->cols(); ++j) {
      CHECK(s->at(i, j) > 0.0);
      total += s->at(i, j);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("activation gradients at non-kink points") {
  Rng rng(5);
  auto w = parameter(testing::random_tensor(2, 3, rng, 0.1, 1.0));
  for (auto kind : {Activation::elu, Activation::leaky_relu, Activation::softmax_rows}) {
    const TensorPtr params[] = {w};
    auto report = finite_diff_check(params, [&](Tape& t) {
      return t.sum_all(t.mul(t.activation(w, kind), t.activation(w, kind)));
    });
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("l2_normalize_rows") {
  Tape tape;
  auto v = tape.l2_normalize_rows(constant(Tensor::row({3, 4})));
  CHECK(v->at(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(v->at(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  auto z = tape.l2_normalize_rows(constant(Tensor::row({0, 0})));
  CHECK(z->at(0, 0) == 0.0);
  CHECK(z->at(0, 1) == 0.0);

  Rng rng(9);
  auto x = constant(testing::random_tensor(4, 3, rng));
  auto n = tape.l2_normalize_rows(x);
  for (std::size_t i = 0; i < n->rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n->cols(); ++j) sq += n->at(i, j) * n->at(i, j);
    const double norm = std::sqrt(sq);
    CHECK((std::abs(norm - 1.0) < 1e-12 || std::abs(norm) < 1e-12));
  }

  // idempotence
  auto nn = tape.l2_normalize_rows(n);
  for (std::size_t i = 0; i < n->size(); ++i) {
    CHECK(std::abs(nn->data()[i] - n->data()[i]) < 1e-12);
  }

  auto w = parameter(testing::random_tensor(3, 4, rng, 0.2, 1.0));
  const TensorPtr params[] = {w};
  auto report = finite_diff_check(params, [&](Tape& t) {
    return t.sum_all(t.mul(t.l2_normalize_rows(w), w));
  });
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("segment_reduce values") {
  Tape tape;
  auto v = constant(Tensor::from_rows({{2}, {4}}));
  std::vector<std::vector<std::uint32_t>> segs = {{0, 1}};
  auto mean = tape.segment_reduce(v, segs, ReduceKind::mean);
  CHECK(mean->at(0, 0) == 3.0);

  std::vector<std::vector<double>> w = {{1.0, 0.0}};
  auto sel = tape.segment_reduce(v, segs, ReduceKind::weighted_sum, w);
  CHECK(sel->at(0, 0) == 2.0);

  auto m = constant(Tensor::from_rows({{1, 5}, {3, 2}}));
  auto mx = tape.segment_reduce(m, segs, ReduceKind::max);
  CHECK(mx->at(0, 0) == 3.0);
  CHECK(mx->at(0, 1) == 5.0);

  std::vector<std::vector<std::uint32_t>> with_empty = {{}, {1}};
  auto se = tape.segment_reduce(v, with_empty, ReduceKind::sum);
  CHECK(se->at(0, 0) == 0.0);
  CHECK(se->at(1, 0) == 4.0);
  auto me = tape.segment_reduce(v, with_empty, ReduceKind::max);
  CHECK(me->at(0, 0) == 0.0);

  std::vector<std::vector<std::uint32_t>> bad = {{0, 7}};
  CHECK_THROWS_AS(tape.segment_reduce(v, bad, ReduceKind::sum), BoundsError);
}

TEST_CASE("segment mean equals weighted sum with uniform weights") {
  Rng rng(21);
  Tape tape;
  auto v = constant(testing::random_tensor(10, 4, rng));
  std::vector<std::vector<std::uint32_t>> segs = {{0, 3, 5}, {1, 2}, {9}, {4, 6, 7, 8}};
  std::vector<std::vector<double>> w;
  for (const auto& s : segs) w.emplace_back(s.size(), 1.0 / static_cast<double>(s.size()));
  auto mean = tape.segment_reduce(v, segs, ReduceKind::mean);
  auto wsum = tape.segment_reduce(v, segs, ReduceKind::weighted_sum, w);
  for (std::size_t i = 0; i < mean->size(); ++i) {
    CHECK(std::abs(mean->data()[i] - wsum->data()[i]) < 1e-12);
  }
}

TEST_CASE("segment_reduce is invariant to order within a segment") {
  Rng rng(22);
  Tape tape;
  auto v = constant(testing::random_tensor(6, 3, rng));
  std::vector<std::vector<std::uint32_t>> a = {{0, 1, 2, 3, 4, 5}};
  std::vector<std::vector<std::uint32_t>> b = {{4, 2, 5, 0, 3, 1}};
  auto ra = tape.segment_reduce(v, a, ReduceKind::sum);
  auto rb = tape.segment_reduce(v, b, ReduceKind::sum);
  for (std::size_t i = 0; i < ra->size(); ++i) {
    CHECK(ra->data()[i] == rb->data()[i]);  // bitwise
  }
}

TEST_CASE("segment_reduce gradients") {
  Rng rng(23);
  auto v = parameter(testing::random_tensor(6, 2, rng));
  std::vector<std::vector<std::uint32_t>> segs = {{0, 2, 4}, {}, {1, 3}, {5}};
  std::vector<std::vector<double>> w = {{0.3, 0.5, 0.2}, {}, {1.5, -0.5}, {2.0}};
  for (auto kind : {ReduceKind::sum, ReduceKind::mean, ReduceKind::max, ReduceKind::weighted_sum}) {
    const TensorPtr params[] = {v};
    auto report = finite_diff_check(params, [&](Tape& t) {
      auto r = t.segment_reduce(v, segs, kind,
                                kind == ReduceKind::weighted_sum
                                    ? std::span<const std::vector<double>>(w)
                                    : std::span<const std::vector<double>>{});
      return t.sum_all(t.mul(r, r));
    });
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("gather_rows and transpose") {
  Tape tape;
  auto x = constant(Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}));
  std::vector<std::uint32_t> idx = {2, 0, 2};
  auto g = tape.gather_rows(x, idx);
  CHECK(g->rows() == 3);
  CHECK(g->at(0, 0) == 5.0);
  CHECK(g->at(1, 0) == 1.0);
  CHECK(g->at(2, 1) == 6.0);
  std::vector<std::uint32_t> bad = {3};
  CHECK_THROWS_AS(tape.gather_rows(x, bad), BoundsError);

  auto t = tape.transpose(x);
  CHECK(t->rows() == 2);
  CHECK(t->cols() == 3);
  CHECK(t->at(0, 2) == 5.0);

  Rng rng(31);
  auto w = parameter(testing::random_tensor(4, 3, rng));
  const TensorPtr params[] = {w};
  auto report = finite_diff_check(params, [&](Tape& tp) {
    auto picked = tp.gather_rows(w, idx);
    return tp.sum_all(tp.mul(tp.transpose(picked), tp.transpose(picked)));
  });
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("attention_aggregate matches explicit softmax weighting") {
  Rng rng(41);
  Tape tape;
  auto values = constant(testing::random_tensor(7, 3, rng));
  auto coeffs = constant(testing::random_tensor(7, 1, rng));
  std::vector<std::vector<std::uint32_t>> segs = {{0, 1, 2}, {}, {3, 4, 5, 6}};
  auto out = tape.attention_aggregate(values, coeffs, segs);
  CHECK(out->rows() == 3);
  for (std::size_t j = 0; j < 3; ++j) CHECK(out->at(1, j) == 0.0);

  for (std::size_t s = 0; s < segs.size(); ++s) {
    if (segs[s].empty()) continue;
    double z = 0.0;
    for (auto i : segs[s]) z += std::exp(coeffs->at(i, 0));
    for (std::size_t j = 0; j < 3; ++j) {
      double expect = 0.0;
      for (auto i : segs[s]) expect += std::exp(coeffs->at(i, 0)) / z * values->at(i, j);
      CHECK(out->at(s, j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention_aggregate gradients") {
  Rng rng(42);
  auto values = parameter(testing::random_tensor(6, 2, rng));
  auto coeffs = parameter(testing::random_tensor(6, 1, rng));
  std::vector<std::vector<std::uint32_t>> segs = {{0, 1}, {2, 3, 4}, {5}};
  const TensorPtr params[] = {values, coeffs};
  auto report = finite_diff_check(params, [&](Tape& t) {
    auto agg = t.attention_aggregate(values, coeffs, segs);
    return t.sum_all(t.mul(agg, agg));
  });
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("backward basics") {
  auto w = parameter(Tensor::from_rows({{1, 2}, {3, 4}}));
  Tape tape;
  auto loss = tape.sum_all(w);
  tape.backward(loss);
  for (double g : w->grad()) CHECK(g == 1.0);

  auto v = parameter(Tensor::row({1, 2}));
  Tape t2;
  auto l2 = t2.sum_all(t2.mul(v, v));
  t2.backward(l2);
  CHECK(v->grad()[0] == 2.0);
  CHECK(v->grad()[1] == 4.0);

  // repeated backward accumulates into leaves
  t2.backward(l2);
  CHECK(v->grad()[0] == 4.0);
  CHECK(v->grad()[1] == 8.0);

  Tape t3;
  auto non_scalar = t3.mul(v, v);
  CHECK_THROWS_AS(t3.backward(non_scalar), ContractError);
  CHECK_THROWS_AS(t2.backward(loss), ContractError);  // loss from another tape
}

TEST_CASE("finite_diff_check on linear and composite functions") {
  Rng rng(51);
  auto w = parameter(testing::random_tensor(3, 2, rng));
  const TensorPtr linear[] = {w};
  auto lin = finite_diff_check(linear, [&](Tape& t) { return t.sum_all(w); });
  CHECK(lin.max_rel_error < 1e-10);

  auto x = constant(testing::random_tensor(2, 3, rng));
  auto m = parameter(testing::random_tensor(4, 2, rng));
  const TensorPtr comp[] = {m};
  auto report = finite_diff_check(comp, [&](Tape& t) {
    return t.sum_all(t.activation(t.matmul(m, x), Activation::elu));
  });
  CHECK(report.max_rel_error < 1e-4);

  CHECK_THROWS_AS(finite_diff_check(comp, [&](Tape& t) { return t.sum_all(m); }, 0.0),
                  ContractError);
}

TEST_CASE("random composite chains pass gradient checks") {
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    Rng rng(seed);
    auto w1 = parameter(testing::random_tensor(4, 3, rng));
    auto w2 = parameter(testing::random_tensor(3, 2, rng));
    auto bias = parameter(testing::random_tensor(1, 2, rng));
    auto x = constant(testing::random_tensor(5, 4, rng));
    std::vector<std::vector<std::uint32_t>> segs = {{0, 1, 4}, {2, 3}};
    const TensorPtr params[] = {w1, w2, bias};
    auto report = finite_diff_check(params, [&](Tape& t) {
      auto h = t.activation(t.add(t.matmul(t.matmul(x, w1), w2), bias), Activation::elu);
      auto n = t.l2_normalize_rows(h);
      auto agg = t.segment_reduce(n, segs, ReduceKind::mean);
      return t.sum_all(t.mul(agg, agg));
    });
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("tensor stays finite through public ops on finite input") {
  Rng rng(61);
  Tape tape;
  auto x = constant(testing::random_tensor(4, 4, rng, -100.0, 100.0));
  auto big = tape.activation(x, Activation::softmax_rows);
  CHECK(big->all_finite());
  auto n = tape.l2_normalize_rows(x);
  CHECK(n->all_finite());
}
