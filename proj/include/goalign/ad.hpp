#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

// Reverse-mode autodiff over dense row-major matrices, double precision.
// A Graph owns the nodes of one forward pass; parameters live outside as
// plain Mats and enter the graph as leaves. Creation order is a valid
// topological order, so backward() is a reverse sweep over reachable nodes.
namespace goalign::ad {

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return a.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;
};

// value-level helpers (shared by forward passes and oracles)
Mat transpose(const Mat& m);
Mat matmul(const Mat& a, const Mat& b);
Mat l2_normalize_rows(const Mat& m);  // throws on zero-norm row

struct Node {
  Mat val;
  Mat grad;  // allocated by backward()
  std::vector<Node*> parents;
  std::function<void(Node&)> back;  // accumulates into parents' grads
  int id = 0;
};

class Graph {
 public:
  Node* leaf(Mat v);
  Node* constant(Mat v) { return leaf(std::move(v)); }
  Node* scalar(double v);

  Node* add(Node* a, Node* b);
  Node* sub(Node* a, Node* b);
  Node* hadamard(Node* a, Node* b);
  Node* add_rowvec(Node* a, Node* b);  // b is 1 x cols, broadcast over rows
  Node* scale(Node* a, double c);
  Node* mul_scalar(Node* a, Node* s);  // s is 1x1
  Node* matmul(Node* a, Node* b);
  Node* transpose(Node* a);
  Node* slice_cols(Node* a, int c0, int len);
  Node* slice_rows(Node* a, int r0, int len);
  Node* gather_rows(Node* a, std::vector<int> idx);
  Node* concat_rows(const std::vector<Node*>& parts);
  Node* concat_cols(const std::vector<Node*>& parts);
  Node* softmax_rows(Node* a, const Mat* additive_mask = nullptr);
  Node* log_softmax_rows(Node* a);
  Node* layernorm_rows(Node* x, Node* gain, Node* bias, double eps = 1e-5);
  Node* gelu(Node* a);
  Node* expn(Node* a);
  Node* l2normalize_rows(Node* a);
  Node* mean_rows(Node* a);  // -> 1 x cols
  Node* mean_all(Node* a);   // -> 1 x 1
  Node* take_diag(Node* a);  // square -> n x 1
  Node* detach(Node* a);

  // loss must be 1x1; accumulates gradients of all reachable nodes
  void backward(Node* loss);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  Node* make(Mat v, std::vector<Node*> parents, std::function<void(Node&)> back);
  std::deque<std::unique_ptr<Node>> nodes_;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace goalign::ad
