#include "goalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "goalign/errors.hpp"
#include "goalign/rng.hpp"

namespace goalign::train {

using ad::Graph;
using ad::Mat;
using ad::Node;

void TrainConfig::validate() const {
  weights.validate();
  if (batch_size < 2) throw DataError("TrainConfig: batch_size must be >= 2");
  if (epochs < 1) throw DataError("TrainConfig: epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw DataError("TrainConfig: learning_rate must be > 0");
  if (weight_decay < 0.0) throw DataError("TrainConfig: weight_decay must be >= 0");
}

MakeBatchResult make_batch(const std::vector<flism::FlismRecord>& records,
                           const std::vector<int>& indices, const enc::Model& model,
                           const TrainConfig& cfg) {
  MakeBatchResult out;
  for (int idx : indices) {
    ad::check(idx >= 0 && idx < static_cast<int>(records.size()),
              "make_batch: index out of range");
    const auto& fr = records[idx];
    if (fr.pairs.empty())
      throw DataError("make_batch: record " + fr.record.id + " carries no local pairs");
    BatchItem item;
    item.image = fr.record.image;
    item.caption_tok = enc::tokenize(fr.record.caption, model.vocab, model.text.max_len);
    bool usable = true;
    for (const auto& p : fr.pairs) {
      BatchPair bp;
      try {
        bp.tokens = align::select_token_indices(p.char_start, p.char_end, item.caption_tok);
      } catch (const DataError&) {
        usable = false;  // local sentence truncated away
        break;
      }
      bp.crop = flism::crop(fr.record.image, p.bbox, model.vision.image_size);
      bp.patches = align::select_patch_indices(p.bbox, model.vision.image_size,
                                               model.vision.patch_size);
      bp.sentence_tok = enc::tokenize(
          fr.record.caption.substr(p.char_start, p.char_end - p.char_start), model.vocab,
          model.text.max_len);
      bp.weight = p.weight;
      item.pairs.push_back(std::move(bp));
    }
    if (!usable) {
      std::cerr << "[make_batch] warning: record " << fr.record.id
                << " excluded (local sentence truncated away)\n";
      out.skipped.push_back(idx);
      continue;
    }
    out.batch.items.push_back(std::move(item));
  }
  (void)cfg;
  return out;
}

BuiltLoss build_total_loss(Graph& g, const enc::LeafMap& leaves, const enc::Model& model,
                           const Batch& batch, const TrainConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(batch.items.size());
  ad::check(n >= 1, "build_total_loss: empty batch");
  const auto& w = cfg.weights;
  const bool need_local = w.lambda_local != 0.0 || w.lambda_tsl != 0.0;
  const bool need_tsl = w.lambda_tsl != 0.0;

  Node* inv_tau = g.expn(leaves.at("loss.logit_scale"));

  std::vector<Node*> vg_rows, tg_rows;
  std::vector<Node*> global_patch_tokens, global_seq_tokens;
  for (const auto& item : batch.items) {
    enc::EncodeNodes im = enc::encode_image_nodes(g, leaves, model.vision, item.image);
    enc::EncodeNodes tx = enc::encode_text_nodes(g, leaves, model.text, item.caption_tok);
    vg_rows.push_back(im.cls);
    tg_rows.push_back(tx.cls);
    global_patch_tokens.push_back(im.tokens);
    global_seq_tokens.push_back(tx.tokens);
  }

  Node* global_term = nullptr;
  if (w.lambda_global != 0.0) {
    global_term = align::contrastive_loss_node(g, g.concat_rows(vg_rows),
                                               g.concat_rows(tg_rows), inv_tau);
  }

  // local crop/sentence CLS per pair slot; slot 0 exists for every item
  int max_slots = 0;
  for (const auto& item : batch.items)
    max_slots = std::max(max_slots, static_cast<int>(item.pairs.size()));

  Node* local_term = nullptr;
  Node* tsl_term = nullptr;
  if (need_local) {
    std::vector<align::TslSlot> slots;
    std::vector<Node*> vl0_rows, tl0_rows;
    for (int slot = 0; slot < (need_tsl ? max_slots : 1); ++slot) {
      std::vector<Node*> vcls_rows, tcls_rows, phat_rows, shat_rows;
      std::vector<double> weights;
      for (int i = 0; i < n; ++i) {
        const auto& item = batch.items[i];
        if (slot >= static_cast<int>(item.pairs.size())) continue;
        const auto& pair = item.pairs[slot];
        enc::EncodeNodes vc = enc::encode_image_nodes(g, leaves, model.vision, pair.crop);
        enc::EncodeNodes tc = enc::encode_text_nodes(g, leaves, model.text, pair.sentence_tok);
        vcls_rows.push_back(vc.cls);
        tcls_rows.push_back(tc.cls);
        if (slot == 0) {
          vl0_rows.push_back(vc.cls);
          tl0_rows.push_back(tc.cls);
        }
        if (need_tsl) {
          Node* pm = align::pool_mean(g, global_patch_tokens[i], pair.patches.indices);
          Node* sm = align::pool_mean(g, global_seq_tokens[i], pair.tokens.indices);
          phat_rows.push_back(
              align::project(g, pm, leaves.at("proj.vis.w"), leaves.at("proj.vis.b")));
          shat_rows.push_back(
              align::project(g, sm, leaves.at("proj.text.w"), leaves.at("proj.text.b")));
          weights.push_back(pair.weight);
        }
      }
      if (need_tsl && !phat_rows.empty()) {
        align::TslSlot s;
        s.p_hat = g.concat_rows(phat_rows);
        s.s_hat = g.concat_rows(shat_rows);
        Node* vt = g.concat_rows(vcls_rows);
        Node* tt = g.concat_rows(tcls_rows);
        s.v_cls = cfg.stop_grad_targets ? g.detach(vt) : vt;
        s.t_cls = cfg.stop_grad_targets ? g.detach(tt) : tt;
        s.weights = std::move(weights);
        slots.push_back(s);
      }
    }
    if (w.lambda_local != 0.0)
      local_term = align::contrastive_loss_node(g, g.concat_rows(vl0_rows),
                                                g.concat_rows(tl0_rows), inv_tau);
    if (need_tsl) tsl_term = align::tsl_loss_weighted(g, slots, n, cfg.tsl_diagonal_only);
  }

  BuiltLoss built;
  built.nodes = align::combine_losses(g, global_term, local_term, tsl_term, w);
  built.values.global_contrastive = global_term ? global_term->val.at(0, 0) : 0.0;
  built.values.local_contrastive = local_term ? local_term->val.at(0, 0) : 0.0;
  built.values.tsl = tsl_term ? tsl_term->val.at(0, 0) : 0.0;
  built.values.total = built.nodes.total->val.at(0, 0);
  return built;
}

align::LossBreakdown compute_loss_grads(const enc::Model& model, const Batch& batch,
                                        const TrainConfig& cfg, enc::ParamMap* grads_out) {
  Graph g;
  enc::LeafMap leaves = enc::make_leaves(g, model.params);
  BuiltLoss built = build_total_loss(g, leaves, model, batch, cfg);
  if (grads_out) {
    g.backward(built.nodes.total);
    grads_out->clear();
    for (const auto& [name, leaf] : leaves) {
      Mat grad = leaf->grad.size() ? leaf->grad : Mat(leaf->val.rows, leaf->val.cols);
      (*grads_out)[name] = std::move(grad);
    }
  }
  return built.values;
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
const double kMaxLogitScale = std::log(100.0);

void adam_update(TrainState& state, const enc::ParamMap& grads, const TrainConfig& cfg) {
  auto& opt = state.opt;
  if (opt.m.empty()) {
    for (const auto& [name, p] : state.model.params) {
      opt.m[name] = Mat(p.rows, p.cols);
      opt.v[name] = Mat(p.rows, p.cols);
    }
  }
  opt.t += 1;
  double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(opt.t));
  double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(opt.t));
  for (auto& [name, p] : state.model.params) {
    const Mat& gmat = grads.at(name);
    Mat& m = opt.m[name];
    Mat& v = opt.v[name];
    for (size_t i = 0; i < p.size(); ++i) {
      double gi = gmat.a[i];
      m.a[i] = kAdamBeta1 * m.a[i] + (1.0 - kAdamBeta1) * gi;
      v.a[i] = kAdamBeta2 * v.a[i] + (1.0 - kAdamBeta2) * gi * gi;
      double mhat = m.a[i] / bc1;
      double vhat = v.a[i] / bc2;
      p.a[i] -= cfg.learning_rate *
                (mhat / (std::sqrt(vhat) + kAdamEps) + cfg.weight_decay * p.a[i]);
    }
  }
  // CLIP-style cap on the learnable similarity scale
  Mat& ls = state.model.params["loss.logit_scale"];
  if (ls.at(0, 0) > kMaxLogitScale) ls.at(0, 0) = kMaxLogitScale;
}

}  // namespace

align::LossBreakdown train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg) {
  enc::ParamMap grads;
  align::LossBreakdown losses;
  try {
    losses = compute_loss_grads(state.model, batch, cfg, &grads);
  } catch (const DataError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw NumericError(std::string("train_step: forward failed at step ") +
                       std::to_string(state.step) + ": " + e.what());
  }
  if (!std::isfinite(losses.total)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss at step " << state.step
        << " (global=" << losses.global_contrastive
        << " local=" << losses.local_contrastive << " tsl=" << losses.tsl << ")";
    throw NumericError(msg.str());
  }
  adam_update(state, grads, cfg);
  state.step += 1;
  state.history.push_back(losses);
  return losses;
}

ckpt::Checkpoint to_checkpoint(const TrainState& state) {
  ckpt::Checkpoint c;
  c.model = state.model;
  for (const auto& [name, m] : state.opt.m) c.opt_state["m." + name] = m;
  for (const auto& [name, m] : state.opt.v) c.opt_state["v." + name] = m;
  c.meta = {{"step", state.step},
            {"epoch", state.epoch},
            {"seed", state.seed},
            {"adam_t", state.opt.t}};
  return c;
}

TrainState state_from_checkpoint(const ckpt::Checkpoint& c) {
  TrainState s;
  s.model = c.model;
  s.step = c.meta.value("step", 0);
  s.epoch = c.meta.value("epoch", 0);
  s.seed = c.meta.value("seed", 0ull);
  s.opt.t = c.meta.value("adam_t", 0ll);
  for (const auto& [name, m] : c.opt_state) {
    if (name.rfind("m.", 0) == 0) s.opt.m[name.substr(2)] = m;
    if (name.rfind("v.", 0) == 0) s.opt.v[name.substr(2)] = m;
  }
  return s;
}

TrainState fit(const std::vector<flism::FlismRecord>& records, const enc::Model& init_model,
               const TrainConfig& cfg, const std::filesystem::path& out_dir,
               const StepCallback& on_step, const TrainState* resume_from) {
  cfg.validate();
  ad::check(!records.empty(), "fit: empty dataset");

  TrainState state;
  if (resume_from) {
    state = *resume_from;
  } else {
    state.model = init_model;
    state.seed = cfg.seed;
  }

  const int n = static_cast<int>(records.size());
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng::Rng shuffle_rng(rng::mix_seed(state.seed, 1000 + static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(perm);

    size_t cursor = 0;
    while (cursor < perm.size()) {
      Batch batch;
      while (static_cast<int>(batch.items.size()) < cfg.batch_size && cursor < perm.size()) {
        MakeBatchResult r = make_batch(records, {perm[cursor]}, state.model, cfg);
        ++cursor;
        if (!r.batch.items.empty()) batch.items.push_back(std::move(r.batch.items[0]));
      }
      if (static_cast<int>(batch.items.size()) < 2) break;  // tail too small for InfoNCE
      align::LossBreakdown losses = train_step(state, batch, cfg);
      if (on_step) on_step(epoch, state.step, losses);
    }
    state.epoch = epoch + 1;
    if (!out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_epoch_%04d.bin", state.epoch);
      ckpt::save_checkpoint(to_checkpoint(state), out_dir / name);
    }
  }
  return state;
}

GradCheckReport grad_check(const enc::Model& model, const Batch& batch, const TrainConfig& cfg,
                           const GradCheckOptions& opts) {
  enc::ParamMap grads;
  compute_loss_grads(model, batch, cfg, &grads);
  if (!opts.corrupt_tensor.empty()) {
    auto it = grads.find(opts.corrupt_tensor);
    ad::check(it != grads.end(), "grad_check: unknown corrupt_tensor");
    for (double& v : it->second.a) v += opts.corrupt_delta;
  }

  auto loss_at = [&](const enc::ParamMap& params) {
    enc::Model m2 = model;
    m2.params = params;
    return compute_loss_grads(m2, batch, cfg, nullptr).total;
  };

  GradCheckReport report;
  report.max_rel_err = 0.0;
  int tensor_idx = 0;
  for (const auto& [name, p] : model.params) {
    GradCheckEntry entry;
    entry.tensor = name;
    int total = static_cast<int>(p.size());
    std::vector<int> picks;
    if (total <= opts.max_entries_per_tensor) {
      picks.resize(total);
      for (int i = 0; i < total; ++i) picks[i] = i;
    } else {
      rng::Rng rg(rng::mix_seed(0xC0FFEEull, static_cast<uint64_t>(tensor_idx)));
      for (int i = 0; i < opts.max_entries_per_tensor; ++i)
        picks.push_back(rg.uniform_int(0, total - 1));
      std::sort(picks.begin(), picks.end());
      picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    }
    for (int i : picks) {
      enc::ParamMap shifted = model.params;
      shifted[name].a[i] += opts.fd_step;
      double up = loss_at(shifted);
      shifted[name].a[i] -= 2.0 * opts.fd_step;
      double down = loss_at(shifted);
      double numeric = (up - down) / (2.0 * opts.fd_step);
      double analytic = grads.at(name).a[i];
      double rel = std::abs(analytic - numeric) /
                   std::max(std::abs(analytic) + std::abs(numeric), 1e-4);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    entry.entries_checked = static_cast<int>(picks.size());
    if (entry.max_rel_err > report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_tensor = name;
    }
    report.entries.push_back(std::move(entry));
    ++tensor_idx;
  }
  report.pass = report.max_rel_err < opts.tolerance;
  return report;
}

TinySetup make_tiny_setup(uint64_t seed, int n_records) {
  TinySetup setup;
  datagen::SceneSpec spec;
  spec.image_size = 16;
  spec.n_objects = 1;
  auto records = datagen::generate_dataset(spec, n_records, seed);

  std::vector<std::string> captions;
  for (const auto& r : records) captions.push_back(r.caption);
  setup.model.vocab = enc::Vocabulary::build(captions);

  setup.model.vision.image_size = 16;
  setup.model.vision.patch_size = 8;
  setup.model.vision.depth = 1;
  setup.model.vision.dim = 16;
  setup.model.vision.heads = 2;

  setup.model.text.vocab_size = setup.model.vocab.size();
  setup.model.text.max_len = 40;
  setup.model.text.depth = 1;
  setup.model.text.dim = 16;
  setup.model.text.heads = 2;
  setup.model.text.pe_base_len = 10;
  setup.model.text.pe_keep = 4;

  setup.model.params = enc::init_params(setup.model.vision, setup.model.text, 0.07,
                                        rng::mix_seed(seed, 77));

  flism::Options fopts;
  for (const auto& r : records) {
    flism::FlismRecord fr;
    fr.record = r;
    fr.pairs = flism::run_record(r, setup.model, fopts);
    setup.records.push_back(std::move(fr));
  }
  return setup;
}

}  // namespace goalign::train
