#include "goalign/ad.hpp"

#include <algorithm>
#include <cmath>

namespace goalign::ad {

bool Mat::all_finite() const {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) t.at(c, r) = m.at(r, c);
  return t;
}

Mat matmul(const Mat& a, const Mat& b) {
  check(a.cols == b.rows, "matmul: inner dims mismatch");
  Mat y(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* ai = &a.a[static_cast<size_t>(i) * a.cols];
    double* yi = &y.a[static_cast<size_t>(i) * b.cols];
    for (int k = 0; k < a.cols; ++k) {
      double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = &b.a[static_cast<size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) yi[j] += aik * bk[j];
    }
  }
  return y;
}

Mat l2_normalize_rows(const Mat& m) {
  Mat y(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < m.cols; ++c) s += m.at(r, c) * m.at(r, c);
    double n = std::sqrt(s);
    check(n > 0.0, "l2_normalize_rows: zero-norm row");
    for (int c = 0; c < m.cols; ++c) y.at(r, c) = m.at(r, c) / n;
  }
  return y;
}

Node* Graph::make(Mat v, std::vector<Node*> parents, std::function<void(Node&)> back) {
  auto n = std::make_unique<Node>();
  n->val = std::move(v);
  n->parents = std::move(parents);
  n->back = std::move(back);
  n->id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  return nodes_.back().get();
}

Node* Graph::leaf(Mat v) { return make(std::move(v), {}, nullptr); }

Node* Graph::scalar(double v) {
  Mat m(1, 1);
  m.at(0, 0) = v;
  return leaf(std::move(m));
}

Node* Graph::add(Node* a, Node* b) {
  check(a->val.same_shape(b->val), "add: shape mismatch");
  Mat y = a->val;
  for (size_t i = 0; i < y.size(); ++i) y.a[i] += b->val.a[i];
  return make(std::move(y), {a, b}, [](Node& n) {
    for (size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad.a[i] += n.grad.a[i];
      n.parents[1]->grad.a[i] += n.grad.a[i];
    }
  });
}

Node* Graph::sub(Node* a, Node* b) {
  check(a->val.same_shape(b->val), "sub: shape mismatch");
  Mat y = a->val;
  for (size_t i = 0; i < y.size(); ++i) y.a[i] -= b->val.a[i];
  return make(std::move(y), {a, b}, [](Node& n) {
    for (size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad.a[i] += n.grad.a[i];
      n.parents[1]->grad.a[i] -= n.grad.a[i];
    }
  });
}

Node* Graph::hadamard(Node* a, Node* b) {
  check(a->val.same_shape(b->val), "hadamard: shape mismatch");
  Mat y = a->val;
  for (size_t i = 0; i < y.size(); ++i) y.a[i] *= b->val.a[i];
  return make(std::move(y), {a, b}, [](Node& n) {
    for (size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad.a[i] += n.grad.a[i] * n.parents[1]->val.a[i];
      n.parents[1]->grad.a[i] += n.grad.a[i] * n.parents[0]->val.a[i];
    }
  });
}

Node* Graph::add_rowvec(Node* a, Node* b) {
  check(b->val.rows == 1 && b->val.cols == a->val.cols, "add_rowvec: bad bias shape");
  Mat y = a->val;
  for (int r = 0; r < y.rows; ++r)
    for (int c = 0; c < y.cols; ++c) y.at(r, c) += b->val.at(0, c);
  return make(std::move(y), {a, b}, [](Node& n) {
    for (size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad.a[i] += n.grad.a[i];
    for (int r = 0; r < n.grad.rows; ++r)
      for (int c = 0; c < n.grad.cols; ++c) n.parents[1]->grad.at(0, c) += n.grad.at(r, c);
  });
}

Node* Graph::scale(Node* a, double c) {
  Mat y = a->val;
  for (double& v : y.a) v *= c;
  return make(std::move(y), {a}, [c](Node& n) {
    for (size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad.a[i] += c * n.grad.a[i];
  });
}

Node* Graph::mul_scalar(Node* a, Node* s) {
  check(s->val.rows == 1 && s->val.cols == 1, "mul_scalar: s must be 1x1");
  double sv = s->val.at(0, 0);
  Mat y = a->val;
  for (double& v : y.a) v *= sv;
  return make(std::move(y), {a, s}, [sv](Node& n) {
    double acc = 0.0;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad.a[i] += sv * n.grad.a[i];
      acc += n.grad.a[i] * n.parents[0]->val.a[i];
    }
    n.parents[1]->grad.at(0, 0) += acc;
  });
}

Node* Graph::matmul(Node* a, Node* b) {
  Mat y = ad::matmul(a->val, b->val);
  return make(std::move(y), {a, b}, [](Node& n) {
    const Mat& A = n.parents[0]->val;
    const Mat& B = n.parents[1]->val;
    Mat& dA = n.parents[0]->grad;
    Mat& dB = n.parents[1]->grad;
    // dA += dY * B^T
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < B.cols; ++j) {
        double g = n.grad.at(i, j);
        if (g == 0.0) continue;
        for (int k = 0; k < A.cols; ++k) dA.at(i, k) += g * B.at(k, j);
      }
    // dB += A^T * dY
    for (int i = 0; i < A.rows; ++i)
      for (int k = 0; k < A.cols; ++k) {
        double av = A.at(i, k);
        if (av == 0.0) continue;
        for (int j = 0; j < B.cols; ++j) dB.at(k, j) += av * n.grad.at(i, j);
      }
  });
}

Node* Graph::transpose(Node* a) {
  return make(ad::transpose(a->val), {a}, [](Node& n) {
    for (int r = 0; r < n.grad.rows; ++r)
      for (int c = 0; c < n.grad.cols; ++c) n.parents[0]->grad.at(c, r) += n.grad.at(r, c);
  });
}

Node* Graph::slice_cols(Node* a, int c0, int len) {
  check(c0 >= 0 && len > 0 && c0 + len <= a->val.cols, "slice_cols: out of range");
  Mat y(a->val.rows, len);
  for (int r = 0; r < y.rows; ++r)
    for (int c = 0; c < len; ++c) y.at(r, c) = a->val.at(r, c0 + c);
  return make(std::move(y), {a}, [c0](Node& n) {
    for (int r = 0; r < n.grad.rows; ++r)
      for (int c = 0; c < n.grad.cols; ++c) n.parents[0]->grad.at(r, c0 + c) += n.grad.at(r, c);
  });
}

Node* Graph::slice_rows(Node* a, int r0, int len) {
  check(r0 >= 0 && len > 0 && r0 + len <= a->val.rows, "slice_rows: out of range");
  Mat y(len, a->val.cols);
  for (int r = 0; r < len; ++r)
    for (int c = 0; c < y.cols; ++c) y.at(r, c) = a->val.at(r0 + r, c);
  return make(std::move(y), {a}, [r0](Node& n) {
    for (int r = 0; r < n.grad.rows; ++r)
      for (int c = 0; c < n.grad.cols; ++c) n.parents[0]->grad.at(r0 + r, c) += n.grad.at(r, c);
  });
}

Node* Graph::gather_rows(Node* a, std::vector<int> idx) {
  Mat y(static_cast<int>(idx.size()), a->val.cols);
  for (size_t r = 0; r < idx.size(); ++r) {
    check(idx[r] >= 0 && idx[r] < a->val.rows, "gather_rows: index out of range");
    for (int c = 0; c < y.cols; ++c) y.at(static_cast<int>(r), c) = a->val.at(idx[r], c);
  }
  return make(std::move(y), {a}, [idx = std::move(idx)](Node& n) {
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < n.grad.cols; ++c)
        n.parents[0]->grad.at(idx[r], c) += n.grad.at(static_cast<int>(r), c);
  });
}

Node* Graph::concat_rows(const std::vector<Node*>& parts) {
  check(!parts.empty(), "concat_rows: empty");
  int cols = parts[0]->val.cols, rows = 0;
  for (Node* p : parts) {
    check(p->val.cols == cols, "concat_rows: col mismatch");
    rows += p->val.rows;
  }
  Mat y(rows, cols);
  int r0 = 0;
  for (Node* p : parts) {
    for (int r = 0; r < p->val.rows; ++r)
      for (int c = 0; c < cols; ++c) y.at(r0 + r, c) = p->val.at(r, c);
    r0 += p->val.rows;
  }
  return make(std::move(y), parts, [](Node& n) {
    int r0 = 0;
    for (Node* p : n.parents) {
      for (int r = 0; r < p->val.rows; ++r)
        for (int c = 0; c < n.grad.cols; ++c) p->grad.at(r, c) += n.grad.at(r0 + r, c);
      r0 += p->val.rows;
    }
  });
}

Node* Graph::concat_cols(const std::vector<Node*>& parts) {
  check(!parts.empty(), "concat_cols: empty");
  int rows = parts[0]->val.rows, cols = 0;
  for (Node* p : parts) {
    check(p->val.rows == rows, "concat_cols: row mismatch");
    cols += p->val.cols;
  }
  Mat y(rows, cols);
  int c0 = 0;
  for (Node* p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p->val.cols; ++c) y.at(r, c0 + c) = p->val.at(r, c);
    c0 += p->val.cols;
  }
  return make(std::move(y), parts, [](Node& n) {
    int c0 = 0;
    for (Node* p : n.parents) {
      for (int r = 0; r < n.grad.rows; ++r)
        for (int c = 0; c < p->val.cols; ++c) p->grad.at(r, c) += n.grad.at(r, c0 + c);
      c0 += p->val.cols;
    }
  });
}

Node* Graph::softmax_rows(Node* a, const Mat* additive_mask) {
  if (additive_mask)
    check(additive_mask->same_shape(a->val), "softmax_rows: mask shape mismatch");
  Mat y(a->val.rows, a->val.cols);
  for (int r = 0; r < y.rows; ++r) {
    double mx = -1e300;
    for (int c = 0; c < y.cols; ++c) {
      double v = a->val.at(r, c) + (additive_mask ? additive_mask->at(r, c) : 0.0);
      y.at(r, c) = v;
      mx = std::max(mx, v);
    }
    double z = 0.0;
    for (int c = 0; c < y.cols; ++c) {
      y.at(r, c) = std::exp(y.at(r, c) - mx);
      z += y.at(r, c);
    }
    for (int c = 0; c < y.cols; ++c) y.at(r, c) /= z;
  }
  return make(std::move(y), {a}, [](Node& n) {
    // dx = y * (dy - sum(dy*y)) per row
    for (int r = 0; r < n.grad.rows; ++r) {
      double dot = 0.0;
      for (int c = 0; c < n.grad.cols; ++c) dot += n.grad.at(r, c) * n.val.at(r, c);
      for (int c = 0; c < n.grad.cols; ++c)
        n.parents[0]->grad.at(r, c) += n.val.at(r, c) * (n.grad.at(r, c) - dot);
    }
  });
}

Node* Graph::log_softmax_rows(Node* a) {
  Mat y(a->val.rows, a->val.cols);
  for (int r = 0; r < y.rows; ++r) {
    double mx = -1e300;
    for (int c = 0; c < y.cols; ++c) mx = std::max(mx, a->val.at(r, c));
    double z = 0.0;
    for (int c = 0; c < y.cols; ++c) z += std::exp(a->val.at(r, c) - mx);
    double lz = mx + std::log(z);
    for (int c = 0; c < y.cols; ++c) y.at(r, c) = a->val.at(r, c) - lz;
  }
  return make(std::move(y), {a}, [](Node& n) {
    // dx = dy - softmax * rowsum(dy)
    for (int r = 0; r < n.grad.rows; ++r) {
      double s = 0.0;
      for (int c = 0; c < n.grad.cols; ++c) s += n.grad.at(r, c);
      for (int c = 0; c < n.grad.cols; ++c)
        n.parents[0]->grad.at(r, c) += n.grad.at(r, c) - std::exp(n.val.at(r, c)) * s;
    }
  });
}

Node* Graph::layernorm_rows(Node* x, Node* gain, Node* bias, double eps) {
  int d = x->val.cols;
  check(gain->val.rows == 1 && gain->val.cols == d, "layernorm: bad gain shape");
  check(bias->val.rows == 1 && bias->val.cols == d, "layernorm: bad bias shape");
  Mat y(x->val.rows, d);
  for (int r = 0; r < y.rows; ++r) {
    double mu = 0.0;
    for (int c = 0; c < d; ++c) mu += x->val.at(r, c);
    mu /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) {
      double dv = x->val.at(r, c) - mu;
      var += dv * dv;
    }
    var /= d;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < d; ++c)
      y.at(r, c) = (x->val.at(r, c) - mu) * inv * gain->val.at(0, c) + bias->val.at(0, c);
  }
  return make(std::move(y), {x, gain, bias}, [eps](Node& n) {
    const Mat& X = n.parents[0]->val;
    const Mat& G = n.parents[1]->val;
    int d = X.cols;
    for (int r = 0; r < X.rows; ++r) {
      double mu = 0.0;
      for (int c = 0; c < d; ++c) mu += X.at(r, c);
      mu /= d;
      double var = 0.0;
      for (int c = 0; c < d; ++c) {
        double dv = X.at(r, c) - mu;
        var += dv * dv;
      }
      var /= d;
      double inv = 1.0 / std::sqrt(var + eps);
      // xhat_c = (x_c - mu) * inv; dy through gain
      double m1 = 0.0, m2 = 0.0;  // mean(g*dy), mean(g*dy*xhat)
      for (int c = 0; c < d; ++c) {
        double xh = (X.at(r, c) - mu) * inv;
        double gd = G.at(0, c) * n.grad.at(r, c);
        m1 += gd;
        m2 += gd * xh;
      }
      m1 /= d;
      m2 /= d;
      for (int c = 0; c < d; ++c) {
        double xh = (X.at(r, c) - mu) * inv;
        double gd = G.at(0, c) * n.grad.at(r, c);
        n.parents[0]->grad.at(r, c) += inv * (gd - m1 - xh * m2);
        n.parents[1]->grad.at(0, c) += n.grad.at(r, c) * xh;
        n.parents[2]->grad.at(0, c) += n.grad.at(r, c);
      }
    }
  });
}

Node* Graph::gelu(Node* a) {
  Mat y = a->val;
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (double& v : y.a) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  return make(std::move(y), {a}, [](Node& n) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double x = n.parents[0]->val.a[i];
      double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      n.parents[0]->grad.a[i] += n.grad.a[i] * (cdf + x * pdf);
    }
  });
}

Node* Graph::expn(Node* a) {
  Mat y = a->val;
  for (double& v : y.a) v = std::exp(v);
  return make(std::move(y), {a}, [](Node& n) {
    for (size_t i = 0; i < n.grad.size(); ++i)
      n.parents[0]->grad.a[i] += n.grad.a[i] * n.val.a[i];
  });
}

Node* Graph::l2normalize_rows(Node* a) {
  Mat y = l2_normalize_rows(a->val);
  return make(std::move(y), {a}, [](Node& n) {
    const Mat& X = n.parents[0]->val;
    for (int r = 0; r < X.rows; ++r) {
      double s = 0.0;
      for (int c = 0; c < X.cols; ++c) s += X.at(r, c) * X.at(r, c);
      double norm = std::sqrt(s);
      double dot = 0.0;
      for (int c = 0; c < X.cols; ++c) dot += n.grad.at(r, c) * n.val.at(r, c);
      for (int c = 0; c < X.cols; ++c)
        n.parents[0]->grad.at(r, c) += (n.grad.at(r, c) - n.val.at(r, c) * dot) / norm;
    }
  });
}

Node* Graph::mean_rows(Node* a) {
  Mat y(1, a->val.cols);
  for (int r = 0; r < a->val.rows; ++r)
    for (int c = 0; c < a->val.cols; ++c) y.at(0, c) += a->val.at(r, c);
  for (double& v : y.a) v /= a->val.rows;
  int rows = a->val.rows;
  return make(std::move(y), {a}, [rows](Node& n) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < n.grad.cols; ++c)
        n.parents[0]->grad.at(r, c) += n.grad.at(0, c) / rows;
  });
}

Node* Graph::mean_all(Node* a) {
  Mat y(1, 1);
  for (double v : a->val.a) y.at(0, 0) += v;
  y.at(0, 0) /= static_cast<double>(a->val.size());
  return make(std::move(y), {a}, [](Node& n) {
    double g = n.grad.at(0, 0) / static_cast<double>(n.parents[0]->val.size());
    for (size_t i = 0; i < n.parents[0]->grad.size(); ++i) n.parents[0]->grad.a[i] += g;
  });
}

Node* Graph::take_diag(Node* a) {
  check(a->val.rows == a->val.cols, "take_diag: not square");
  Mat y(a->val.rows, 1);
  for (int r = 0; r < y.rows; ++r) y.at(r, 0) = a->val.at(r, r);
  return make(std::move(y), {a}, [](Node& n) {
    for (int r = 0; r < n.grad.rows; ++r) n.parents[0]->grad.at(r, r) += n.grad.at(r, 0);
  });
}

Node* Graph::detach(Node* a) { return leaf(a->val); }

void Graph::backward(Node* loss) {
  check(loss->val.rows == 1 && loss->val.cols == 1, "backward: loss must be 1x1");
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<Node*> stack{loss};
  reachable[loss->id] = 1;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    for (Node* p : n->parents)
      if (!reachable[p->id]) {
        reachable[p->id] = 1;
        stack.push_back(p);
      }
  }
  for (auto& n : nodes_)
    if (reachable[n->id]) n->grad = Mat(n->val.rows, n->val.cols);
  loss->grad.at(0, 0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = it->get();
    if (reachable[n->id] && n->back) n->back(*n);
  }
}

}  // namespace goalign::ad
