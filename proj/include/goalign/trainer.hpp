#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "goalign/alignment.hpp"
#include "goalign/checkpoint.hpp"
#include "goalign/encoders.hpp"
#include "goalign/flism.hpp"

namespace goalign::train {

struct TrainConfig {
  align::LossWeights weights;
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  uint64_t seed = 42;
  flism::MatchStrategy strategy = flism::MatchStrategy::kTop1;
  bool use_partitions = true;
  bool tsl_diagonal_only = false;  // tsl_reduction: full | diagonal
  bool stop_grad_targets = true;   // freeze CLS targets inside TSL

  void validate() const;
};

struct AdamState {
  enc::ParamMap m;
  enc::ParamMap v;
  long long t = 0;
};

struct TrainState {
  int step = 0;
  int epoch = 0;  // completed epochs
  uint64_t seed = 0;
  enc::Model model;
  AdamState opt;
  std::vector<align::LossBreakdown> history;  // one entry per step
};

struct BatchPair {
  img::Image crop;
  enc::Tokenization sentence_tok;
  align::PatchIndexSet patches;
  align::TokenIndexSet tokens;
  double weight = 1.0;
};

struct BatchItem {
  img::Image image;  // global image
  enc::Tokenization caption_tok;
  std::vector<BatchPair> pairs;  // ordered as selected (>=1)
};

struct Batch {
  std::vector<BatchItem> items;
};

struct MakeBatchResult {
  Batch batch;
  std::vector<int> skipped;  // record indices excluded (e.g. truncated-away pair)
};

// Assembles aligned global/local tensors for the given record indices.
// Records whose local sentences were truncated away are skipped with a
// warning so the caller can refill the batch.
MakeBatchResult make_batch(const std::vector<flism::FlismRecord>& records,
                           const std::vector<int>& indices, const enc::Model& model,
                           const TrainConfig& cfg);

struct BuiltLoss {
  align::TotalLossNodes nodes;
  align::LossBreakdown values;
};

// Builds the full objective over a batch on an existing leaf map. Both the
// global and local branches read the same leaves (shared encoders). Terms
// with a zero lambda are not built at all.
BuiltLoss build_total_loss(ad::Graph& g, const enc::LeafMap& leaves, const enc::Model& model,
                           const Batch& batch, const TrainConfig& cfg);

// Forward + backward; returns the breakdown and (optionally) the gradient of
// every parameter tensor (zero for unused ones).
align::LossBreakdown compute_loss_grads(const enc::Model& model, const Batch& batch,
                                        const TrainConfig& cfg, enc::ParamMap* grads_out);

// One optimizer update (AdamW). Throws NumericError on non-finite loss with
// the component values in the message.
align::LossBreakdown train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg);

using StepCallback = std::function<void(int epoch, int step, const align::LossBreakdown&)>;

// Deterministic epoch loop with seeded shuffling and per-epoch checkpoints
// (written when out_dir is non-empty). Passing resume_from continues the
// exact trajectory of an uninterrupted run.
TrainState fit(const std::vector<flism::FlismRecord>& records, const enc::Model& init_model,
               const TrainConfig& cfg, const std::filesystem::path& out_dir = {},
               const StepCallback& on_step = nullptr, const TrainState* resume_from = nullptr);

ckpt::Checkpoint to_checkpoint(const TrainState& state);
TrainState state_from_checkpoint(const ckpt::Checkpoint& c);

struct GradCheckOptions {
  double tolerance = 1e-4;
  double fd_step = 1e-5;
  int max_entries_per_tensor = 48;   // deterministic subsample for big tensors
  std::string corrupt_tensor;        // fault injection for self-tests
  double corrupt_delta = 0.0;
};

struct GradCheckEntry {
  std::string tensor;
  double max_rel_err = 0.0;
  int entries_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  std::string worst_tensor;
  bool pass = false;
};

// Central differences of the total loss against the analytic gradient for
// every parameter tensor. Run with stop_grad_targets=false so the objective
// is the plain differentiable one.
GradCheckReport grad_check(const enc::Model& model, const Batch& batch, const TrainConfig& cfg,
                           const GradCheckOptions& opts = {});

// Small fully in-memory setup (tiny encoders + tiny dataset) shared by the
// gradcheck CLI and tests.
struct TinySetup {
  enc::Model model;
  std::vector<flism::FlismRecord> records;
};
TinySetup make_tiny_setup(uint64_t seed, int n_records = 4);

}  // namespace goalign::train
