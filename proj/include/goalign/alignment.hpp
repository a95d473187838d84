#pragma once

#include <vector>

#include "goalign/ad.hpp"
#include "goalign/geometry.hpp"
#include "goalign/tokenizer.hpp"

namespace goalign::align {

// Patch-token positions whose cell centers fall inside a box.
struct PatchIndexSet {
  std::vector<int> indices;  // sorted, row-major over the patch grid
  int grid_rows = 0;
  int grid_cols = 0;
  bool fallback_used = false;
};

// Sequence-token positions overlapping a caption character span.
struct TokenIndexSet {
  std::vector<int> indices;  // sorted, excludes bos/eos
};

// Membership rule: patch-cell center inside the half-open box. An empty set
// falls back to the single patch containing the box center. The any-overlap
// rule is available for sensitivity checks.
PatchIndexSet select_patch_indices(const BBox& box, int image_size, int patch_size,
                                   bool any_overlap = false);

// Tokens of the global-caption tokenization whose source characters intersect
// [span_start, span_end). Throws if the span was truncated away entirely.
TokenIndexSet select_token_indices(int span_start, int span_end,
                                   const enc::Tokenization& tok);

struct LossWeights {
  double lambda_global = 1.0;
  double lambda_local = 0.5;
  double lambda_tsl = 1.0;
  double temperature = 0.07;  // initial value of the learnable temperature

  void validate() const;
};

struct LossBreakdown {
  double global_contrastive = 0.0;
  double local_contrastive = 0.0;
  double tsl = 0.0;
  double total = 0.0;
};

// ---- graph-building ops (training path) ----

// Arithmetic mean of the selected rows (Eq. 7 / Eq. 9 pooling).
ad::Node* pool_mean(ad::Graph& g, ad::Node* tokens, const std::vector<int>& indices);

// Affine projection into the shared space (Eq. 8 / Eq. 10).
ad::Node* project(ad::Graph& g, ad::Node* v, ad::Node* w, ad::Node* b);

// Row-wise cosine similarity matrix.
ad::Node* cosine_sim_matrix(ad::Graph& g, ad::Node* a, ad::Node* b);

// Symmetric InfoNCE with logits sim/tau; inv_tau_node is a 1x1 scale node.
ad::Node* contrastive_loss_node(ad::Graph& g, ad::Node* v_cls, ad::Node* t_cls,
                                ad::Node* inv_tau_node);

// MSE(sim(P_hat, V_cls), I) + MSE(sim(S_hat, T_cls), I) averaged over all
// n^2 entries (or the diagonal only).
ad::Node* tsl_loss_node(ad::Graph& g, ad::Node* p_hat, ad::Node* v_cls, ad::Node* s_hat,
                        ad::Node* t_cls, bool diagonal_only = false);

// Per-pair weighted TSL used with top-k matching: each pair's row terms are
// scaled by its weight; reduces exactly to tsl_loss_node for one pair of
// weight 1. Matrices are per pair-slot; weights are per (slot, record).
struct TslSlot {
  ad::Node* p_hat;
  ad::Node* v_cls;
  ad::Node* s_hat;
  ad::Node* t_cls;
  std::vector<double> weights;  // one per record present in this slot
};
ad::Node* tsl_loss_weighted(ad::Graph& g, const std::vector<TslSlot>& slots, int batch_size,
                            bool diagonal_only = false);

// ---- value-level ops (oracle-facing contracts) ----

ad::Mat cosine_sim_matrix(const ad::Mat& a, const ad::Mat& b);
double contrastive_loss(const ad::Mat& v_cls, const ad::Mat& t_cls, double tau);
double tsl_loss(const ad::Mat& p_hat, const ad::Mat& v_cls, const ad::Mat& s_hat,
                const ad::Mat& t_cls, bool diagonal_only = false);
ad::Mat pool_mean(const ad::Mat& tokens, const std::vector<int>& indices);

// total = lg*global + ll*local + lt*tsl; terms with zero weight contribute
// exactly nothing (equivalent to removing them from the graph).
struct TotalLossNodes {
  ad::Node* total = nullptr;
  ad::Node* global_term = nullptr;  // unweighted components, may be null
  ad::Node* local_term = nullptr;
  ad::Node* tsl_term = nullptr;
};
TotalLossNodes combine_losses(ad::Graph& g, ad::Node* global_term, ad::Node* local_term,
                              ad::Node* tsl_term, const LossWeights& w);

}  // namespace goalign::align
