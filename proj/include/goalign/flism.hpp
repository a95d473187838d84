#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "goalign/ad.hpp"
#include "goalign/datagen.hpp"
#include "goalign/encoders.hpp"
#include "goalign/geometry.hpp"

namespace goalign::flism {

enum class RegionSource { kDetected, kQuadrant, kCenter };

struct RegionCandidate {
  BBox bbox;
  RegionSource source = RegionSource::kDetected;
};

struct SelectedPair {
  int sentence_index = 0;
  int region_index = 0;
  double score = 0.0;
  double weight = 0.0;
};

struct MatchResult {
  ad::Mat sim;  // M sentences x N regions, cosine
  std::vector<std::pair<int, double>> per_text_best;  // (region, score) per sentence
  std::vector<SelectedPair> selected;
};

struct LocalPair {
  BBox bbox;
  int sentence_index = 0;
  int char_start = 0;
  int char_end = 0;
  double score = 0.0;
  double weight = 0.0;
};

enum class MatchStrategy { kTop1, kTop3Uniform, kTop3Weighted };
MatchStrategy parse_strategy(const std::string& name);  // top1 | top3u | top3w
std::string strategy_name(MatchStrategy s);

// Detections clipped to bounds, then (optionally) four quadrants and the
// center box (W/4, H/4, 3W/4, 3H/4); exact duplicates removed, earlier
// (detected) entries win. Order: detections, quadrants TL TR BL BR, center.
std::vector<RegionCandidate> propose_regions(int image_size, const std::vector<BBox>& detections,
                                             bool use_partitions);

// Pixel-exact sub-array then bilinear resize to out_size x out_size.
// Boxes with a side shorter than 2 px are rejected.
img::Image crop(const img::Image& image, const BBox& box, int out_size);

// Row-wise cosine matching; per-sentence argmax with ties to the lower
// region index.
MatchResult match_local_pairs(const ad::Mat& text_cls, const ad::Mat& region_cls);

// top1: single best pair, weight 1. top3: three best per-sentence pairs
// (uniform thirds, or similarity-proportional after a +1 shift); fewer
// sentences use what exists with renormalized weights.
std::vector<SelectedPair> select_pairs(const MatchResult& match, MatchStrategy strategy);

struct Options {
  MatchStrategy strategy = MatchStrategy::kTop1;
  bool use_partitions = true;
};

// Full pipeline for one record: propose regions (oracle boxes from the
// record unless detections are supplied), embed crops and sentences with the
// given encoder, match, select.
std::vector<LocalPair> run_record(const datagen::SceneRecord& record, const enc::Model& model,
                                  const Options& opts,
                                  const std::vector<BBox>* detections = nullptr);

struct FlismRecord {
  datagen::SceneRecord record;
  std::vector<LocalPair> pairs;
};

// Augmented manifest <dir>/flism.jsonl, version "flism/1". Image files are
// shared with the base manifest.
inline constexpr const char* kFlismVersion = "flism/1";
void write_flism_manifest(const std::vector<FlismRecord>& records,
                          const std::filesystem::path& dir, const Options& opts);
std::vector<FlismRecord> read_flism_manifest(const std::filesystem::path& dir);

// External detections: one {"record_id":..., "boxes":[[x1,y1,x2,y2],...]}
// JSON object per line.
std::map<std::string, std::vector<BBox>> read_boxes_file(const std::filesystem::path& path);

}  // namespace goalign::flism
