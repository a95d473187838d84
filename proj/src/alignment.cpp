#include "goalign/alignment.hpp"

#include <algorithm>
#include <cmath>

#include "goalign/errors.hpp"

namespace goalign::align {

using ad::Graph;
using ad::Mat;
using ad::Node;

void LossWeights::validate() const {
  if (lambda_global < 0 || lambda_local < 0 || lambda_tsl < 0)
    throw DataError("LossWeights: lambdas must be non-negative");
  if (!(temperature > 0.0)) throw DataError("LossWeights: temperature must be positive");
}

PatchIndexSet select_patch_indices(const BBox& box, int image_size, int patch_size,
                                   bool any_overlap) {
  ad::check(image_size > 0 && patch_size > 0 && image_size % patch_size == 0,
            "select_patch_indices: bad sizes");
  ad::check(!box.degenerate(), "select_patch_indices: degenerate box");
  int grid = image_size / patch_size;
  PatchIndexSet out;
  out.grid_rows = grid;
  out.grid_cols = grid;
  for (int pr = 0; pr < grid; ++pr)
    for (int pc = 0; pc < grid; ++pc) {
      bool in;
      if (any_overlap) {
        BBox cell{pc * patch_size, pr * patch_size, (pc + 1) * patch_size,
                  (pr + 1) * patch_size};
        in = intersection_area(cell, box) > 0;
      } else {
        double cx = (pc + 0.5) * patch_size;
        double cy = (pr + 0.5) * patch_size;
        in = cx >= box.x1 && cx < box.x2 && cy >= box.y1 && cy < box.y2;
      }
      if (in) out.indices.push_back(pr * grid + pc);
    }
  if (out.indices.empty()) {
    double cx = 0.5 * (box.x1 + box.x2);
    double cy = 0.5 * (box.y1 + box.y2);
    int pc = std::clamp(static_cast<int>(cx) / patch_size, 0, grid - 1);
    int pr = std::clamp(static_cast<int>(cy) / patch_size, 0, grid - 1);
    out.indices.push_back(pr * grid + pc);
    out.fallback_used = true;
  }
  return out;
}

TokenIndexSet select_token_indices(int span_start, int span_end,
                                   const enc::Tokenization& tok) {
  ad::check(span_start >= 0 && span_end > span_start, "select_token_indices: bad span");
  TokenIndexSet out;
  for (size_t i = 0; i < tok.spans.size(); ++i) {
    auto [s, e] = tok.spans[i];
    if (s < 0) continue;  // bos/eos
    if (s < span_end && e > span_start) out.indices.push_back(static_cast<int>(i));
  }
  if (out.indices.empty())
    throw DataError("select_token_indices: span has no surviving tokens (truncated away)");
  return out;
}

Node* pool_mean(Graph& g, Node* tokens, const std::vector<int>& indices) {
  ad::check(!indices.empty(), "pool_mean: empty index set");
  return g.mean_rows(g.gather_rows(tokens, indices));
}

Node* project(Graph& g, Node* v, Node* w, Node* b) {
  return g.add_rowvec(g.matmul(v, w), b);
}

Node* cosine_sim_matrix(Graph& g, Node* a, Node* b) {
  return g.matmul(g.l2normalize_rows(a), g.transpose(g.l2normalize_rows(b)));
}

namespace {

// mean over rows of -log softmax diagonal
Node* cross_entropy_diag(Graph& g, Node* logits) {
  return g.scale(g.mean_all(g.take_diag(g.log_softmax_rows(logits))), -1.0);
}

Mat identity_mat(int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

}  // namespace

Node* contrastive_loss_node(Graph& g, Node* v_cls, Node* t_cls, Node* inv_tau_node) {
  ad::check(v_cls->val.rows == t_cls->val.rows, "contrastive: batch size mismatch");
  Node* sims = cosine_sim_matrix(g, v_cls, t_cls);
  Node* logits = g.mul_scalar(sims, inv_tau_node);
  Node* row_ce = cross_entropy_diag(g, logits);
  Node* col_ce = cross_entropy_diag(g, g.transpose(logits));
  return g.scale(g.add(row_ce, col_ce), 0.5);
}

Node* tsl_loss_node(Graph& g, Node* p_hat, Node* v_cls, Node* s_hat, Node* t_cls,
                    bool diagonal_only) {
  int n = p_hat->val.rows;
  ad::check(v_cls->val.rows == n && s_hat->val.rows == n && t_cls->val.rows == n,
            "tsl_loss: batch size mismatch");
  auto mse_identity = [&](Node* a, Node* b) {
    Node* sims = cosine_sim_matrix(g, a, b);
    if (diagonal_only) {
      Node* diag = g.take_diag(sims);
      Node* diff = g.sub(diag, g.constant(Mat(n, 1, 1.0)));
      return g.mean_all(g.hadamard(diff, diff));
    }
    Node* diff = g.sub(sims, g.constant(identity_mat(n)));
    return g.mean_all(g.hadamard(diff, diff));
  };
  return g.add(mse_identity(p_hat, v_cls), mse_identity(s_hat, t_cls));
}

Node* tsl_loss_weighted(Graph& g, const std::vector<TslSlot>& slots, int batch_size,
                        bool diagonal_only) {
  ad::check(!slots.empty() && batch_size > 0, "tsl_loss_weighted: empty input");
  // L = (1/n) * sum_slots sum_records w_ij * rowterm, with rowterm the mean
  // over that slot's row entries of (sim - target)^2. One pair of weight 1
  // recovers the plain n^2-averaged MSE.
  auto slot_term = [&](Node* a, Node* b, const std::vector<double>& w) {
    int nj = a->val.rows;
    Node* sims = cosine_sim_matrix(g, a, b);
    Node* sq;
    if (diagonal_only) {
      Node* diff = g.sub(g.take_diag(sims), g.constant(Mat(nj, 1, 1.0)));
      sq = g.hadamard(diff, diff);  // nj x 1 row terms
    } else {
      Node* diff = g.sub(sims, g.constant(identity_mat(nj)));
      Node* e = g.hadamard(diff, diff);
      sq = g.matmul(e, g.constant(Mat(nj, 1, 1.0 / nj)));  // row means, nj x 1
    }
    Mat wrow(1, nj);
    for (int i = 0; i < nj; ++i) wrow.at(0, i) = w[i];
    return g.matmul(g.constant(std::move(wrow)), sq);  // 1 x 1
  };
  Node* acc = nullptr;
  for (const auto& s : slots) {
    ad::check(static_cast<int>(s.weights.size()) == s.p_hat->val.rows,
              "tsl_loss_weighted: weight count mismatch");
    Node* term = g.add(slot_term(s.p_hat, s.v_cls, s.weights),
                       slot_term(s.s_hat, s.t_cls, s.weights));
    acc = acc ? g.add(acc, term) : term;
  }
  return g.scale(acc, 1.0 / batch_size);
}

Mat cosine_sim_matrix(const Mat& a, const Mat& b) {
  ad::check(a.cols == b.cols, "cosine_sim_matrix: dim mismatch");
  return ad::matmul(ad::l2_normalize_rows(a), ad::transpose(ad::l2_normalize_rows(b)));
}

double contrastive_loss(const Mat& v_cls, const Mat& t_cls, double tau) {
  if (!(tau > 0.0)) throw NumericError("contrastive_loss: tau must be positive");
  Graph g;
  Node* v = g.leaf(v_cls);
  Node* t = g.leaf(t_cls);
  Node* inv_tau = g.scalar(1.0 / tau);
  return contrastive_loss_node(g, v, t, inv_tau)->val.at(0, 0);
}

double tsl_loss(const Mat& p_hat, const Mat& v_cls, const Mat& s_hat, const Mat& t_cls,
                bool diagonal_only) {
  Graph g;
  return tsl_loss_node(g, g.leaf(p_hat), g.leaf(v_cls), g.leaf(s_hat), g.leaf(t_cls),
                       diagonal_only)
      ->val.at(0, 0);
}

Mat pool_mean(const Mat& tokens, const std::vector<int>& indices) {
  Graph g;
  return pool_mean(g, g.leaf(tokens), indices)->val;
}

TotalLossNodes combine_losses(Graph& g, Node* global_term, Node* local_term, Node* tsl_term,
                              const LossWeights& w) {
  w.validate();
  TotalLossNodes out;
  out.global_term = global_term;
  out.local_term = local_term;
  out.tsl_term = tsl_term;
  Node* total = nullptr;
  auto accumulate = [&](Node* term, double lambda) {
    if (!term || lambda == 0.0) return;
    Node* scaled = g.scale(term, lambda);
    total = total ? g.add(total, scaled) : scaled;
  };
  accumulate(global_term, w.lambda_global);
  accumulate(local_term, w.lambda_local);
  accumulate(tsl_term, w.lambda_tsl);
  out.total = total ? total : g.scalar(0.0);
  return out;
}

}  // namespace goalign::align
