#include "goalign/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "goalign/alignment.hpp"
#include "goalign/errors.hpp"

namespace goalign::evalkit {

using ad::Mat;
using nlohmann::json;

double recall_at_k(const Mat& sim, const std::vector<int>& truth, int k) {
  ad::check(k >= 1, "recall_at_k: k must be >= 1");
  ad::check(static_cast<int>(truth.size()) == sim.rows, "recall_at_k: truth size mismatch");
  int gallery = sim.cols;
  int kk = std::min(k, gallery);
  int hits = 0;
  for (int q = 0; q < sim.rows; ++q) {
    int t = truth[q];
    ad::check(t >= 0 && t < gallery, "recall_at_k: truth index out of range");
    double ts = sim.at(q, t);
    int rank = 0;  // items strictly ahead of the true one
    for (int j = 0; j < gallery; ++j) {
      if (j == t) continue;
      if (sim.at(q, j) > ts || (sim.at(q, j) == ts && j < t)) ++rank;
    }
    if (rank < kk) ++hits;
  }
  return static_cast<double>(hits) / sim.rows;
}

RetrievalReport evaluate(const enc::Model& model, const std::vector<datagen::SceneRecord>& data,
                         const std::vector<int>& ks, const std::string& model_id,
                         const std::string& dataset_id) {
  ad::check(!data.empty(), "evaluate: empty dataset");
  ad::check(!ks.empty(), "evaluate: no K values");
  const int n = static_cast<int>(data.size());
  const int d = model.vision.dim;

  Mat img_emb(n, d), txt_emb(n, d);
  for (int i = 0; i < n; ++i) {
    enc::EncoderOutput vo = enc::encode_image(data[i].image, model.params, model.vision);
    enc::Tokenization tok = enc::tokenize(data[i].caption, model.vocab, model.text.max_len);
    enc::EncoderOutput to = enc::encode_text(tok, model.params, model.text);
    for (int c = 0; c < d; ++c) {
      img_emb.at(i, c) = vo.cls.at(0, c);
      txt_emb.at(i, c) = to.cls.at(0, c);
    }
  }
  Mat sim_t2i = align::cosine_sim_matrix(txt_emb, img_emb);  // queries = captions
  Mat sim_i2t = ad::transpose(sim_t2i);

  std::vector<int> truth(n);
  for (int i = 0; i < n; ++i) truth[i] = i;

  RetrievalReport rep;
  rep.ks = ks;
  std::sort(rep.ks.begin(), rep.ks.end());
  rep.n_queries = n;
  rep.model_id = model_id;
  rep.dataset_id = dataset_id;
  double prev_t2i = 0.0, prev_i2t = 0.0;
  for (int k : rep.ks) {
    double rt = recall_at_k(sim_t2i, truth, k);
    double ri = recall_at_k(sim_i2t, truth, k);
    ad::check(rt >= prev_t2i && ri >= prev_i2t, "evaluate: recall not monotone in K");
    if (k >= n)
      ad::check(rt == 1.0 && ri == 1.0, "evaluate: recall must saturate at K >= gallery");
    rep.t2i[k] = rt;
    rep.i2t[k] = ri;
    prev_t2i = rt;
    prev_i2t = ri;
  }
  return rep;
}

void write_report(const RetrievalReport& report, const std::filesystem::path& path) {
  json j = {{"version", kReportVersion},
            {"ks", report.ks},
            {"n_queries", report.n_queries},
            {"model_id", report.model_id},
            {"dataset_id", report.dataset_id}};
  json t2i = json::object(), i2t = json::object();
  for (int k : report.ks) {
    t2i[std::to_string(k)] = report.t2i.at(k);
    i2t[std::to_string(k)] = report.i2t.at(k);
  }
  j["t2i"] = t2i;
  j["i2t"] = i2t;
  std::ofstream f(path);
  if (!f) throw DataError("write_report: cannot open " + path.string());
  f << j.dump(2) << "\n";
}

RetrievalReport read_report(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("read_report: cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("read_report: malformed json: " + std::string(e.what()));
  }
  if (!j.contains("version") || j["version"] != kReportVersion)
    throw DataError("read_report: version mismatch");
  RetrievalReport rep;
  rep.ks = j.at("ks").get<std::vector<int>>();
  rep.n_queries = j.at("n_queries").get<int>();
  rep.model_id = j.value("model_id", "");
  rep.dataset_id = j.value("dataset_id", "");
  for (int k : rep.ks) {
    rep.t2i[k] = j.at("t2i").at(std::to_string(k)).get<double>();
    rep.i2t[k] = j.at("i2t").at(std::to_string(k)).get<double>();
  }
  return rep;
}

HeatmapArtifact export_attention(const img::Image& image, const enc::Model& model,
                                 const std::filesystem::path& out_prefix) {
  HeatmapArtifact art;
  art.rows = model.vision.grid();
  art.cols = model.vision.grid();

  bool constant_input = true;
  for (size_t i = 1; i < image.px.size() && constant_input; ++i)
    if (image.px[i] != image.px[0]) constant_input = false;

  if (constant_input) {
    // a featureless input has no attention structure worth mapping
    art.degenerate = true;
    art.grid = Mat(art.rows * art.cols, 3);
    art.component_energies = {0.0, 0.0, 0.0};
  } else {
    enc::EncoderOutput eo = enc::encode_image(image, model.params, model.vision);
    enc::PcaResult pca = enc::attention_pca(eo.tokens, 3);
    art.grid = pca.projections;  // N x 3
    art.degenerate = pca.degenerate;
    double total = 0.0;
    for (double e : pca.eigenvalues) total += std::max(e, 0.0);
    for (int j = 0; j < 3; ++j)
      art.component_energies.push_back(
          total > 0.0 && j < static_cast<int>(pca.eigenvalues.size())
              ? std::max(pca.eigenvalues[j], 0.0) / total
              : 0.0);
  }

  art.grid_image = img::Image(art.rows, art.cols);
  for (int r = 0; r < art.rows; ++r)
    for (int c = 0; c < art.cols; ++c)
      for (int ch = 0; ch < 3; ++ch)
        art.grid_image.at(r, c, ch) = art.grid.at(r * art.cols + c, ch);

  img::Image up = img::resize_bilinear(art.grid_image, image.h, image.w);
  art.overlay = image;
  for (size_t i = 0; i < art.overlay.px.size(); ++i)
    art.overlay.px[i] = 0.5 * art.overlay.px[i] + 0.5 * up.px[i];

  if (!out_prefix.empty()) {
    std::filesystem::path grid_path = out_prefix;
    grid_path += "_grid.ppm";
    std::filesystem::path overlay_path = out_prefix;
    overlay_path += "_overlay.ppm";
    img::write_ppm(art.grid_image, grid_path);
    img::write_ppm(art.overlay, overlay_path);
  }
  return art;
}

}  // namespace goalign::evalkit
