#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "goalign/ad.hpp"
#include "goalign/datagen.hpp"
#include "goalign/encoders.hpp"

namespace goalign::evalkit {

struct RetrievalReport {
  std::vector<int> ks;
  std::map<int, double> t2i;  // K -> recall fraction
  std::map<int, double> i2t;
  int n_queries = 0;
  std::string model_id;
  std::string dataset_id;
};

// Fraction of queries whose true gallery item ranks within the top k by
// similarity. Descending scores, ties broken by the lower gallery index;
// k is clamped to the gallery size.
double recall_at_k(const ad::Mat& sim, const std::vector<int>& truth, int k);

// Embeds images and captions once (L2-normalized CLS), builds the full
// cosine matrix, reports both directions at every K. Read-only on params.
RetrievalReport evaluate(const enc::Model& model, const std::vector<datagen::SceneRecord>& data,
                         const std::vector<int>& ks, const std::string& model_id = "",
                         const std::string& dataset_id = "");

inline constexpr const char* kReportVersion = "goalign-report/1";
void write_report(const RetrievalReport& report, const std::filesystem::path& path);
RetrievalReport read_report(const std::filesystem::path& path);

struct HeatmapArtifact {
  int rows = 0;
  int cols = 0;
  ad::Mat grid;  // (rows*cols) x 3, values in [0,1]
  img::Image grid_image;
  img::Image overlay;
  std::vector<double> component_energies;  // top-3 eigenvalue shares
  bool degenerate = false;
};

// Principal-component map of final-layer patch tokens rendered on the patch
// grid plus an alpha-blended overlay; writes <prefix>_grid.ppm and
// <prefix>_overlay.ppm when prefix is non-empty.
HeatmapArtifact export_attention(const img::Image& image, const enc::Model& model,
                                 const std::filesystem::path& out_prefix = {});

}  // namespace goalign::evalkit
