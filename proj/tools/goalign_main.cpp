#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "goalign/checkpoint.hpp"
#include "goalign/datagen.hpp"
#include "goalign/errors.hpp"
#include "goalign/evalkit.hpp"
#include "goalign/flism.hpp"
#include "goalign/rng.hpp"
#include "goalign/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace goalign;

namespace {

constexpr const char* kConfigVersion = "goalign-cfg/1";
constexpr const char* kRunVersion = "goalign-run/1";

uint64_t env_seed_or(uint64_t fallback) {
  const char* s = std::getenv("GOALIGN_SEED");
  if (!s) return fallback;
  return std::strtoull(s, nullptr, 10);
}

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw DataError("config: unknown key '" + k + "' in " + ctx);
}

struct ResolvedTrain {
  train::TrainConfig cfg;
  enc::VisionEncoderConfig vision;
  enc::TextEncoderConfig text;
  bool seed_from_config = false;
};

void apply_vision(const json& j, enc::VisionEncoderConfig& c) {
  require_keys(j, {"image_size", "patch_size", "depth", "dim", "heads"}, "model.vision");
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.depth = j.value("depth", c.depth);
  c.dim = j.value("dim", c.dim);
  c.heads = j.value("heads", c.heads);
}

void apply_text(const json& j, enc::TextEncoderConfig& c) {
  require_keys(j, {"max_len", "depth", "dim", "heads", "pe_base_len", "pe_keep"}, "model.text");
  c.max_len = j.value("max_len", c.max_len);
  c.depth = j.value("depth", c.depth);
  c.dim = j.value("dim", c.dim);
  c.heads = j.value("heads", c.heads);
  c.pe_base_len = j.value("pe_base_len", c.pe_base_len);
  c.pe_keep = j.value("pe_keep", c.pe_keep);
}

ResolvedTrain load_train_config(const std::string& path) {
  ResolvedTrain r;
  if (path.empty()) return r;
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed config: " + std::string(e.what()));
  }
  require_keys(j,
               {"version", "weights", "epochs", "batch_size", "learning_rate", "weight_decay",
                "seed", "strategy", "use_partitions", "tsl_reduction", "stop_grad_targets",
                "model"},
               "top level");
  if (!j.contains("version") || j["version"] != kConfigVersion)
    throw DataError("config version mismatch, expected " + std::string(kConfigVersion));
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    require_keys(w, {"lambda_global", "lambda_local", "lambda_tsl", "temperature"}, "weights");
    r.cfg.weights.lambda_global = w.value("lambda_global", r.cfg.weights.lambda_global);
    r.cfg.weights.lambda_local = w.value("lambda_local", r.cfg.weights.lambda_local);
    r.cfg.weights.lambda_tsl = w.value("lambda_tsl", r.cfg.weights.lambda_tsl);
    r.cfg.weights.temperature = w.value("temperature", r.cfg.weights.temperature);
  }
  r.cfg.epochs = j.value("epochs", r.cfg.epochs);
  r.cfg.batch_size = j.value("batch_size", r.cfg.batch_size);
  r.cfg.learning_rate = j.value("learning_rate", r.cfg.learning_rate);
  r.cfg.weight_decay = j.value("weight_decay", r.cfg.weight_decay);
  if (j.contains("seed")) {
    r.cfg.seed = j["seed"].get<uint64_t>();
    r.seed_from_config = true;
  }
  if (j.contains("strategy"))
    r.cfg.strategy = flism::parse_strategy(j["strategy"].get<std::string>());
  r.cfg.use_partitions = j.value("use_partitions", r.cfg.use_partitions);
  if (j.contains("tsl_reduction")) {
    std::string red = j["tsl_reduction"].get<std::string>();
    if (red != "full" && red != "diagonal")
      throw DataError("config: tsl_reduction must be full|diagonal");
    r.cfg.tsl_diagonal_only = red == "diagonal";
  }
  r.cfg.stop_grad_targets = j.value("stop_grad_targets", r.cfg.stop_grad_targets);
  if (j.contains("model")) {
    require_keys(j["model"], {"vision", "text"}, "model");
    if (j["model"].contains("vision")) apply_vision(j["model"]["vision"], r.vision);
    if (j["model"].contains("text")) apply_text(j["model"]["text"], r.text);
  }
  return r;
}

json train_config_json(const train::TrainConfig& c) {
  return {{"weights",
           {{"lambda_global", c.weights.lambda_global},
            {"lambda_local", c.weights.lambda_local},
            {"lambda_tsl", c.weights.lambda_tsl},
            {"temperature", c.weights.temperature}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"strategy", flism::strategy_name(c.strategy)},
          {"use_partitions", c.use_partitions},
          {"tsl_reduction", c.tsl_diagonal_only ? "diagonal" : "full"},
          {"stop_grad_targets", c.stop_grad_targets}};
}

// resolved-config manifest, one per run, deterministic content
void write_run_manifest(const fs::path& dir, const std::string& subcommand, json config) {
  json j = {{"version", kRunVersion},
            {"subcommand", subcommand},
            {"config", std::move(config)},
            {"formats",
             {{"manifest", datagen::kManifestVersion},
              {"flism", flism::kFlismVersion},
              {"checkpoint", ckpt::kCheckpointVersion},
              {"report", evalkit::kReportVersion},
              {"config", kConfigVersion}}}};
  std::ofstream f(dir / (subcommand + "_run.json"));
  if (!f) throw DataError("cannot write run manifest in " + dir.string());
  f << j.dump(2) << "\n";
}

enc::Model build_model_from_data(const std::vector<std::string>& captions,
                                 enc::VisionEncoderConfig vcfg, enc::TextEncoderConfig tcfg,
                                 double temperature, uint64_t seed) {
  enc::Model model;
  model.vocab = enc::Vocabulary::build(captions);
  model.vision = vcfg;
  model.text = tcfg;
  model.text.vocab_size = model.vocab.size();
  model.params = enc::init_params(model.vision, model.text, temperature,
                                  rng::mix_seed(seed, 7));
  return model;
}

std::vector<int> parse_ks(const std::string& s) {
  std::vector<int> ks;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    ks.push_back(std::stoi(tok));
  }
  if (ks.empty()) throw DataError("--ks parsed to nothing: " + s);
  return ks;
}

int cmd_gen_data(const std::string& out, int n, uint64_t seed, int objects, int size,
                 int verbosity) {
  datagen::SceneSpec spec;
  spec.image_size = size;
  spec.n_objects = objects;
  spec.verbosity = verbosity;
  spec.validate();
  auto records = datagen::generate_dataset(spec, n, seed);
  fs::create_directories(out);
  datagen::write_manifest(records, out);
  write_run_manifest(out, "gen-data",
                     {{"n", n},
                      {"seed", seed},
                      {"objects", objects},
                      {"image_size", size},
                      {"verbosity", verbosity}});
  std::cerr << "wrote " << records.size() << " records to " << out << "\n";
  return 0;
}

int cmd_flism(const std::string& data, const std::string& strategy, const std::string& partitions,
              const std::string& boxes_path, const std::string& ckpt_path, uint64_t seed) {
  auto records = datagen::read_manifest(data);
  flism::Options opts;
  opts.strategy = flism::parse_strategy(strategy);
  if (partitions != "on" && partitions != "off")
    throw DataError("--partitions must be on|off");
  opts.use_partitions = partitions == "on";

  enc::Model model;
  if (!ckpt_path.empty()) {
    model = ckpt::load_checkpoint(ckpt_path).model;
  } else {
    std::vector<std::string> captions;
    for (const auto& r : records) captions.push_back(r.caption);
    model = build_model_from_data(captions, enc::VisionEncoderConfig{},
                                  enc::TextEncoderConfig{}, 0.07, seed);
  }
  if (!records.empty() && records[0].image.w != model.vision.image_size)
    throw DataError("flism: dataset image size does not match encoder config");

  std::map<std::string, std::vector<BBox>> external;
  if (!boxes_path.empty()) external = flism::read_boxes_file(boxes_path);

  std::vector<flism::FlismRecord> out;
  for (const auto& rec : records) {
    flism::FlismRecord fr;
    fr.record = rec;
    const std::vector<BBox>* det = nullptr;
    if (!boxes_path.empty()) {
      auto it = external.find(rec.id);
      if (it == external.end())
        throw DataError("flism: no boxes for record " + rec.id + " in " + boxes_path);
      det = &it->second;
    }
    fr.pairs = flism::run_record(rec, model, opts, det);
    out.push_back(std::move(fr));
  }
  flism::write_flism_manifest(out, data, opts);
  write_run_manifest(data, "flism",
                     {{"strategy", strategy},
                      {"partitions", opts.use_partitions},
                      {"boxes", boxes_path.empty() ? "oracle" : boxes_path},
                      {"ckpt", ckpt_path},
                      {"seed", seed}});
  std::cerr << "matched " << out.size() << " records\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& out, const ResolvedTrain& resolved,
              const std::string& resume) {
  auto records = flism::read_flism_manifest(data);
  if (records.empty()) throw DataError("train: no records in " + data);

  fs::create_directories(out);
  std::ofstream log(fs::path(out) / "train_log.jsonl");
  if (!log) throw DataError("train: cannot open train log");

  const train::TrainConfig& cfg = resolved.cfg;
  train::TrainState state;
  const train::TrainState* resume_ptr = nullptr;
  enc::Model model;
  if (!resume.empty()) {
    state = train::state_from_checkpoint(ckpt::load_checkpoint(resume));
    resume_ptr = &state;
  } else {
    std::vector<std::string> captions;
    for (const auto& r : records) captions.push_back(r.record.caption);
    model = build_model_from_data(captions, resolved.vision, resolved.text,
                                  cfg.weights.temperature, cfg.seed);
    if (records[0].record.image.w != model.vision.image_size)
      throw DataError("train: dataset image size does not match encoder config");
  }

  auto on_step = [&](int epoch, int step, const align::LossBreakdown& l) {
    json line = {{"step", step},          {"epoch", epoch},
                 {"global", l.global_contrastive}, {"local", l.local_contrastive},
                 {"tsl", l.tsl},          {"total", l.total},
                 {"lr", cfg.learning_rate}};
    log << line.dump() << "\n";
  };

  train::TrainState final_state = train::fit(records, model, cfg, out, on_step, resume_ptr);
  ckpt::save_checkpoint(train::to_checkpoint(final_state), fs::path(out) / "ckpt.bin");
  write_run_manifest(out, "train", train_config_json(cfg));
  std::cerr << "trained " << final_state.step << " steps, checkpoint at " << out
            << "/ckpt.bin\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& ks_str,
             const std::string& out_path) {
  ckpt::Checkpoint c = ckpt::load_checkpoint(ckpt_path);
  auto records = datagen::read_manifest(data);
  std::vector<int> ks = parse_ks(ks_str);
  std::string model_id = fs::path(ckpt_path).stem().string() + "-" +
                         ckpt::fingerprint_hex(ckpt::params_fingerprint(c.model.params));
  std::string dataset_id =
      fs::path(data).filename().string() + "-n" + std::to_string(records.size());
  evalkit::RetrievalReport rep = evalkit::evaluate(c.model, records, ks, model_id, dataset_id);

  fs::path out = out_path.empty() ? fs::path(data) / "report.json" : fs::path(out_path);
  evalkit::write_report(rep, out);
  if (out.has_parent_path())
    write_run_manifest(out.parent_path(), "eval",
                       {{"ckpt", fs::path(ckpt_path).filename().string()},
                        {"ks", rep.ks},
                        {"dataset", dataset_id}});
  std::cout << "n_queries " << rep.n_queries << "\n";
  for (int k : rep.ks)
    std::cout << "R@" << k << "  t2i " << rep.t2i[k] << "  i2t " << rep.i2t[k] << "\n";
  std::cerr << "report written to " << out << "\n";
  return 0;
}

int cmd_viz(const std::string& ckpt_path, const std::string& image_path,
            const std::string& out_prefix) {
  ckpt::Checkpoint c = ckpt::load_checkpoint(ckpt_path);
  img::Image image = img::read_ppm(image_path);
  evalkit::HeatmapArtifact art = evalkit::export_attention(image, c.model, out_prefix);
  std::cout << "grid " << art.rows << "x" << art.cols
            << (art.degenerate ? " (degenerate)" : "") << " energies";
  for (double e : art.component_energies) std::cout << " " << e;
  std::cout << "\n";
  return 0;
}

int cmd_gradcheck(double tolerance, uint64_t seed) {
  train::TinySetup setup = train::make_tiny_setup(seed);
  train::TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.stop_grad_targets = false;  // check the plain differentiable objective
  train::MakeBatchResult mb = train::make_batch(setup.records, {0, 1, 2}, setup.model, cfg);
  if (mb.batch.items.size() != 3) throw DataError("gradcheck: failed to assemble batch of 3");
  train::GradCheckOptions opts;
  opts.tolerance = tolerance;
  train::GradCheckReport rep = train::grad_check(setup.model, mb.batch, cfg, opts);
  for (const auto& e : rep.entries)
    std::cout << e.tensor << "  rel_err " << e.max_rel_err << "  (" << e.entries_checked
              << " entries)\n";
  std::cout << "max rel_err " << rep.max_rel_err << " on " << rep.worst_tensor << " -> "
            << (rep.pass ? "PASS" : "FAIL") << "\n";
  return rep.pass ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"goalign: global-local image/text alignment on synthetic scenes"};
  app.require_subcommand(1);
  uint64_t default_seed = env_seed_or(42);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_out;
  int gen_n = 64, gen_objects = 3, gen_size = 64, gen_verbosity = 1;
  uint64_t gen_seed = default_seed;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n", gen_n, "number of records");
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--objects", gen_objects, "objects per scene (1-6)");
  gen->add_option("--size", gen_size, "image size in pixels");
  gen->add_option("--verbosity", gen_verbosity, "caption verbosity (1|2)");

  auto* fl = app.add_subcommand("flism", "match local regions to sentences");
  std::string fl_data, fl_strategy = "top1", fl_partitions = "on", fl_boxes, fl_ckpt;
  uint64_t fl_seed = default_seed;
  fl->add_option("--data", fl_data, "dataset directory")->required();
  fl->add_option("--strategy", fl_strategy, "top1|top3u|top3w");
  fl->add_option("--partitions", fl_partitions, "on|off");
  fl->add_option("--boxes", fl_boxes, "external detections file (jsonl)");
  fl->add_option("--ckpt", fl_ckpt, "encoder checkpoint for matching (default: fresh init)");
  fl->add_option("--seed", fl_seed, "seed for the fresh matching encoder");

  auto* tr = app.add_subcommand("train", "fine-tune the dual encoder");
  std::string tr_data, tr_out, tr_config, tr_resume;
  uint64_t tr_seed = 0;
  int tr_epochs = 0, tr_batch = 0;
  double tr_lr = 0.0;
  tr->add_option("--data", tr_data, "dataset directory (with flism.jsonl)")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--config", tr_config, "goalign-cfg/1 json file");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "seed override");
  auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "epoch override");
  auto* tr_batch_opt = tr->add_option("--batch", tr_batch, "batch-size override");
  auto* tr_lr_opt = tr->add_option("--lr", tr_lr, "learning-rate override");

  auto* ev = app.add_subcommand("eval", "recall@k retrieval evaluation");
  std::string ev_ckpt, ev_data, ev_ks = "1,5,10,15,25,50", ev_out;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--ks", ev_ks, "comma-separated K values");
  ev->add_option("--out", ev_out, "report path (default <data>/report.json)");

  auto* vz = app.add_subcommand("viz", "principal-component attention heatmap");
  std::string vz_ckpt, vz_image, vz_out;
  vz->add_option("--ckpt", vz_ckpt, "checkpoint file")->required();
  vz->add_option("--image", vz_image, "input image (ppm)");
  vz->add_option("--out", vz_out, "output prefix")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  double gc_tol = 1e-4;
  uint64_t gc_seed = default_seed;
  gc->add_option("--tolerance", gc_tol, "max relative error");
  gc->add_option("--seed", gc_seed, "setup seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_n, gen_seed, gen_objects, gen_size, gen_verbosity);
    if (fl->parsed())
      return cmd_flism(fl_data, fl_strategy, fl_partitions, fl_boxes, fl_ckpt, fl_seed);
    if (tr->parsed()) {
      ResolvedTrain resolved = load_train_config(tr_config);
      if (!resolved.seed_from_config && tr_seed_opt->count() == 0)
        resolved.cfg.seed = default_seed;
      if (tr_seed_opt->count()) resolved.cfg.seed = tr_seed;
      if (tr_epochs_opt->count()) resolved.cfg.epochs = tr_epochs;
      if (tr_batch_opt->count()) resolved.cfg.batch_size = tr_batch;
      if (tr_lr_opt->count()) resolved.cfg.learning_rate = tr_lr;
      return cmd_train(tr_data, tr_out, resolved, tr_resume);
    }
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_ks, ev_out);
    if (vz->parsed()) return cmd_viz(vz_ckpt, vz_image, vz_out);
    if (gc->parsed()) return cmd_gradcheck(gc_tol, gc_seed);
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
