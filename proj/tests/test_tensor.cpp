#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "goalign/ad.hpp"
#include "goalign/rng.hpp"

using goalign::ad::Graph;
using goalign::ad::Mat;
using goalign::ad::Node;

namespace {

Mat random_mat(int r, int c, goalign::rng::Rng& rg, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.a) v = rg.normal() * scale;
  return m;
}

using Builder = std::function<Node*(Graph&, std::vector<Node*>&)>;

// Central-difference check of d(loss)/d(input) for every input entry.
void fd_check(std::vector<Mat> inputs, const Builder& build, double tol = 1e-6) {
  Graph g;
  std::vector<Node*> leaves;
  for (auto& m : inputs) leaves.push_back(g.leaf(m));
  Node* loss = build(g, leaves);
  REQUIRE(loss->val.rows == 1);
  REQUIRE(loss->val.cols == 1);
  g.backward(loss);

  const double h = 1e-5;
  for (size_t li = 0; li < inputs.size(); ++li) {
    for (size_t i = 0; i < inputs[li].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Mat> shifted = inputs;
        shifted[li].a[i] += delta;
        Graph g2;
        std::vector<Node*> lv;
        for (auto& m : shifted) lv.push_back(g2.leaf(m));
        return build(g2, lv)->val.at(0, 0);
      };
      double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      double analytic = leaves[li]->grad.a[i];
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      INFO("input ", li, " entry ", i, " analytic=", analytic, " numeric=", numeric);
      CHECK(std::abs(numeric - analytic) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul value matches naive loop") {
  goalign::rng::Rng rg(1);
  Mat a = random_mat(3, 4, rg), b = random_mat(4, 5, rg);
  Mat y = goalign::ad::matmul(a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(y.at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("grad: matmul, add_rowvec, gelu chain") {
  goalign::rng::Rng rg(2);
  fd_check({random_mat(3, 4, rg), random_mat(4, 5, rg), random_mat(1, 5, rg)},
           [](Graph& g, std::vector<Node*>& v) {
             return g.mean_all(g.gelu(g.add_rowvec(g.matmul(v[0], v[1]), v[2])));
           });
}

TEST_CASE("grad: add, sub, hadamard, scale") {
  goalign::rng::Rng rg(3);
  fd_check({random_mat(4, 3, rg), random_mat(4, 3, rg)},
           [](Graph& g, std::vector<Node*>& v) {
             Node* s = g.sub(g.add(v[0], v[1]), g.scale(v[1], 0.3));
             return g.mean_all(g.hadamard(s, v[0]));
           });
}

TEST_CASE("grad: softmax with additive mask") {
  goalign::rng::Rng rg(4);
  Mat mask(3, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) mask.at(r, c) = (c > r) ? -1e30 : 0.0;
  fd_check({random_mat(3, 3, rg), random_mat(3, 2, rg)},
           [mask](Graph& g, std::vector<Node*>& v) {
             return g.mean_all(g.matmul(g.softmax_rows(v[0], &mask), v[1]));
           });
}

TEST_CASE("grad: log_softmax + take_diag") {
  goalign::rng::Rng rg(5);
  fd_check({random_mat(4, 4, rg)}, [](Graph& g, std::vector<Node*>& v) {
    return g.scale(g.mean_all(g.take_diag(g.log_softmax_rows(v[0]))), -1.0);
  });
}

TEST_CASE("grad: layernorm") {
  goalign::rng::Rng rg(6);
  fd_check({random_mat(3, 8, rg), random_mat(1, 8, rg, 0.5), random_mat(1, 8, rg)},
           [](Graph& g, std::vector<Node*>& v) {
             return g.mean_all(g.hadamard(g.layernorm_rows(v[0], v[1], v[2]),
                                          g.layernorm_rows(v[0], v[1], v[2])));
           },
           1e-5);
}

TEST_CASE("grad: l2normalize + cosine matrix") {
  goalign::rng::Rng rg(7);
  fd_check({random_mat(3, 5, rg), random_mat(3, 5, rg)},
           [](Graph& g, std::vector<Node*>& v) {
             Node* s = g.matmul(g.l2normalize_rows(v[0]),
                                g.transpose(g.l2normalize_rows(v[1])));
             return g.mean_all(g.hadamard(s, s));
           });
}

TEST_CASE("grad: slice, concat, gather, mean_rows") {
  goalign::rng::Rng rg(8);
  fd_check({random_mat(5, 6, rg)}, [](Graph& g, std::vector<Node*>& v) {
    Node* a = g.slice_cols(v[0], 1, 3);
    Node* b = g.slice_rows(v[0], 0, 2);
    Node* c = g.gather_rows(v[0], {4, 0, 2});
    Node* cat = g.concat_cols({g.mean_rows(a), g.mean_rows(b), g.mean_rows(c)});
    return g.mean_all(g.hadamard(cat, cat));
  });
}

TEST_CASE("grad: concat_rows and transpose") {
  goalign::rng::Rng rg(9);
  fd_check({random_mat(2, 4, rg), random_mat(3, 4, rg)},
           [](Graph& g, std::vector<Node*>& v) {
             Node* cat = g.concat_rows({v[0], v[1]});
             return g.mean_all(g.matmul(g.transpose(cat), cat));
           });
}

TEST_CASE("grad: mul_scalar and expn (temperature path)") {
  goalign::rng::Rng rg(10);
  fd_check({random_mat(3, 3, rg), random_mat(1, 1, rg, 0.3)},
           [](Graph& g, std::vector<Node*>& v) {
             Node* scaled = g.mul_scalar(v[0], g.expn(v[1]));
             return g.scale(g.mean_all(g.take_diag(g.log_softmax_rows(scaled))), -1.0);
           });
}

TEST_CASE("detach blocks gradient flow") {
  goalign::rng::Rng rg(11);
  Mat a = random_mat(2, 3, rg);
  Graph g;
  Node* leaf = g.leaf(a);
  Node* loss = g.mean_all(g.hadamard(g.detach(leaf), leaf));
  g.backward(loss);
  // gradient should equal detached value / size, not 2*value/size
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(leaf->grad.a[i] == doctest::Approx(a.a[i] / 6.0).epsilon(1e-12));
}

TEST_CASE("backward accumulates across reuse") {
  Mat a(1, 1);
  a.at(0, 0) = 3.0;
  Graph g;
  Node* x = g.leaf(a);
  Node* y = g.hadamard(x, x);  // x^2, dy/dx = 2x = 6
  Node* loss = g.mean_all(y);
  g.backward(loss);
  CHECK(x->grad.at(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("l2_normalize_rows throws on zero row") {
  Mat z(2, 3);
  CHECK_THROWS(goalign::ad::l2_normalize_rows(z));
}
