#include "goalign/flism.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "goalign/errors.hpp"

namespace goalign::flism {

using ad::Mat;
using nlohmann::json;

MatchStrategy parse_strategy(const std::string& name) {
  if (name == "top1") return MatchStrategy::kTop1;
  if (name == "top3u") return MatchStrategy::kTop3Uniform;
  if (name == "top3w") return MatchStrategy::kTop3Weighted;
  throw DataError("unknown matching strategy: " + name + " (expected top1|top3u|top3w)");
}

std::string strategy_name(MatchStrategy s) {
  switch (s) {
    case MatchStrategy::kTop1: return "top1";
    case MatchStrategy::kTop3Uniform: return "top3u";
    case MatchStrategy::kTop3Weighted: return "top3w";
  }
  return "top1";
}

std::vector<RegionCandidate> propose_regions(int image_size, const std::vector<BBox>& detections,
                                             bool use_partitions) {
  ad::check(image_size > 0, "propose_regions: bad image size");
  std::vector<RegionCandidate> out;
  auto push_unique = [&](const BBox& b, RegionSource src) {
    if (b.degenerate()) return;
    for (const auto& r : out)
      if (r.bbox == b) return;  // IoU == 1.0 duplicate, earlier source wins
    out.push_back({b, src});
  };
  for (const auto& d : detections)
    push_unique(clip_box(d, image_size, image_size), RegionSource::kDetected);
  if (use_partitions) {
    int w2 = image_size / 2;
    push_unique({0, 0, w2, w2}, RegionSource::kQuadrant);
    push_unique({w2, 0, image_size, w2}, RegionSource::kQuadrant);
    push_unique({0, w2, w2, image_size}, RegionSource::kQuadrant);
    push_unique({w2, w2, image_size, image_size}, RegionSource::kQuadrant);
    int q = image_size / 4;
    push_unique({q, q, 3 * image_size / 4, 3 * image_size / 4}, RegionSource::kCenter);
  }
  return out;
}

img::Image crop(const img::Image& image, const BBox& box, int out_size) {
  if (box.degenerate() || box.width() < 2 || box.height() < 2)
    throw DataError("crop: degenerate box (min side 2px)");
  if (box.x1 < 0 || box.y1 < 0 || box.x2 > image.w || box.y2 > image.h)
    throw DataError("crop: box out of image bounds");
  return img::resize_bilinear(img::subarray(image, box), out_size, out_size);
}

MatchResult match_local_pairs(const Mat& text_cls, const Mat& region_cls) {
  ad::check(text_cls.rows >= 1 && region_cls.rows >= 1, "match_local_pairs: empty inputs");
  ad::check(text_cls.cols == region_cls.cols, "match_local_pairs: dim mismatch");
  MatchResult res;
  res.sim = ad::matmul(ad::l2_normalize_rows(text_cls),
                       ad::transpose(ad::l2_normalize_rows(region_cls)));
  for (int i = 0; i < res.sim.rows; ++i) {
    int best = 0;
    for (int j = 1; j < res.sim.cols; ++j)
      if (res.sim.at(i, j) > res.sim.at(i, best)) best = j;
    res.per_text_best.emplace_back(best, res.sim.at(i, best));
  }
  return res;
}

std::vector<SelectedPair> select_pairs(const MatchResult& match, MatchStrategy strategy) {
  const int m = static_cast<int>(match.per_text_best.size());
  ad::check(m >= 1, "select_pairs: empty match");

  // sentence order by (score desc, index asc)
  std::vector<int> order(m);
  for (int i = 0; i < m; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return match.per_text_best[a].second > match.per_text_best[b].second;
  });

  std::vector<SelectedPair> out;
  if (strategy == MatchStrategy::kTop1) {
    int s = order[0];
    out.push_back({s, match.per_text_best[s].first, match.per_text_best[s].second, 1.0});
    return out;
  }
  int k = std::min(3, m);
  for (int r = 0; r < k; ++r) {
    int s = order[r];
    out.push_back({s, match.per_text_best[s].first, match.per_text_best[s].second, 0.0});
  }
  std::sort(out.begin(), out.end(),
            [](const SelectedPair& a, const SelectedPair& b) {
              return a.sentence_index < b.sentence_index;
            });
  if (strategy == MatchStrategy::kTop3Uniform) {
    for (auto& p : out) p.weight = 1.0 / k;
  } else {
    // cosine scores can be negative; shift to [0,2] before normalizing
    double sum = 0.0;
    for (const auto& p : out) sum += p.score + 1.0;
    ad::check(sum > 0.0, "select_pairs: degenerate weights");
    for (auto& p : out) p.weight = (p.score + 1.0) / sum;
  }
  return out;
}

std::vector<LocalPair> run_record(const datagen::SceneRecord& record, const enc::Model& model,
                                  const Options& opts, const std::vector<BBox>* detections) {
  std::vector<BBox> det;
  if (detections) {
    det = *detections;
  } else {
    for (const auto& o : record.objects) det.push_back(o.bbox);
  }
  auto regions = propose_regions(record.image.w, det, opts.use_partitions);
  ad::check(!regions.empty(), "run_record: no region candidates");

  const int d = model.vision.dim;
  Mat region_cls(static_cast<int>(regions.size()), d);
  for (size_t j = 0; j < regions.size(); ++j) {
    img::Image patch = crop(record.image, regions[j].bbox, model.vision.image_size);
    enc::EncoderOutput eo = enc::encode_image(patch, model.params, model.vision);
    for (int c = 0; c < d; ++c) region_cls.at(static_cast<int>(j), c) = eo.cls.at(0, c);
  }
  Mat text_cls(static_cast<int>(record.sentences.size()), d);
  for (size_t i = 0; i < record.sentences.size(); ++i) {
    enc::Tokenization tok =
        enc::tokenize(record.sentences[i].text, model.vocab, model.text.max_len);
    enc::EncoderOutput eo = enc::encode_text(tok, model.params, model.text);
    for (int c = 0; c < d; ++c) text_cls.at(static_cast<int>(i), c) = eo.cls.at(0, c);
  }

  MatchResult match = match_local_pairs(text_cls, region_cls);
  match.selected = select_pairs(match, opts.strategy);

  std::vector<LocalPair> out;
  for (const auto& sp : match.selected) {
    const auto& sent = record.sentences[sp.sentence_index];
    out.push_back({regions[sp.region_index].bbox, sp.sentence_index, sent.start, sent.end,
                   sp.score, sp.weight});
  }
  return out;
}

void write_flism_manifest(const std::vector<FlismRecord>& records,
                          const std::filesystem::path& dir, const Options& opts) {
  std::ofstream f(dir / "flism.jsonl");
  if (!f) throw DataError("write_flism_manifest: cannot open " + (dir / "flism.jsonl").string());
  json header = {{"version", kFlismVersion},
                 {"count", records.size()},
                 {"strategy", strategy_name(opts.strategy)},
                 {"partitions", opts.use_partitions}};
  f << header.dump() << "\n";
  for (const auto& fr : records) {
    const auto& rec = fr.record;
    json sentences = json::array();
    for (const auto& s : rec.sentences)
      sentences.push_back({{"text", s.text}, {"start", s.start}, {"end", s.end}});
    json objects = json::array();
    for (const auto& o : rec.objects)
      objects.push_back({{"shape", o.shape},
                         {"color", o.color},
                         {"bbox", {o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2}},
                         {"sentence_index", o.sentence_index}});
    json pairs = json::array();
    for (const auto& p : fr.pairs)
      pairs.push_back({{"bbox", {p.bbox.x1, p.bbox.y1, p.bbox.x2, p.bbox.y2}},
                       {"sentence_index", p.sentence_index},
                       {"char_start", p.char_start},
                       {"char_end", p.char_end},
                       {"score", p.score},
                       {"weight", p.weight}});
    json line = {{"id", rec.id},
                 {"image_path", "images/" + rec.id + ".ppm"},
                 {"caption", rec.caption},
                 {"sentences", sentences},
                 {"objects", objects},
                 {"local_pairs", pairs}};
    f << line.dump() << "\n";
  }
  if (!f) throw DataError("write_flism_manifest: write failed");
}

std::vector<FlismRecord> read_flism_manifest(const std::filesystem::path& dir) {
  std::ifstream f(dir / "flism.jsonl");
  if (!f) throw DataError("read_flism_manifest: cannot open " + (dir / "flism.jsonl").string());
  std::string line;
  if (!std::getline(f, line)) throw DataError("read_flism_manifest: empty file");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("read_flism_manifest: malformed header: " + std::string(e.what()));
  }
  if (!header.contains("version") || header["version"] != kFlismVersion)
    throw DataError("read_flism_manifest: version mismatch, expected " +
                    std::string(kFlismVersion));
  std::vector<FlismRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      FlismRecord fr;
      fr.record.id = j.at("id").get<std::string>();
      fr.record.caption = j.at("caption").get<std::string>();
      for (const auto& s : j.at("sentences"))
        fr.record.sentences.push_back({s.at("text").get<std::string>(),
                                       s.at("start").get<int>(), s.at("end").get<int>()});
      for (const auto& o : j.at("objects")) {
        datagen::SceneObject obj;
        obj.shape = o.at("shape").get<std::string>();
        obj.color = o.at("color").get<std::string>();
        auto b = o.at("bbox");
        obj.bbox = BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                        b.at(3).get<int>()};
        obj.sentence_index = o.at("sentence_index").get<int>();
        fr.record.objects.push_back(obj);
      }
      for (const auto& p : j.at("local_pairs")) {
        auto b = p.at("bbox");
        fr.pairs.push_back({BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                                 b.at(3).get<int>()},
                            p.at("sentence_index").get<int>(), p.at("char_start").get<int>(),
                            p.at("char_end").get<int>(), p.at("score").get<double>(),
                            p.at("weight").get<double>()});
      }
      fr.record.image = img::read_ppm(dir / j.at("image_path").get<std::string>());
      out.push_back(std::move(fr));
    } catch (const json::exception& e) {
      throw DataError("read_flism_manifest: bad record: " + std::string(e.what()));
    }
  }
  return out;
}

std::map<std::string, std::vector<BBox>> read_boxes_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("read_boxes_file: cannot open " + path.string());
  std::map<std::string, std::vector<BBox>> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      std::vector<BBox> boxes;
      for (const auto& b : j.at("boxes"))
        boxes.push_back(BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                             b.at(3).get<int>()});
      out[j.at("record_id").get<std::string>()] = std::move(boxes);
    } catch (const json::exception& e) {
      throw DataError("read_boxes_file: malformed line: " + std::string(e.what()));
    }
  }
  return out;
}

}  // namespace goalign::flism
