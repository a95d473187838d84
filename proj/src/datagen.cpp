#include "goalign/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "goalign/errors.hpp"
#include "goalign/rng.hpp"

namespace goalign::datagen {

using nlohmann::json;

const double kBackground[3] = {28.0 / 255.0, 28.0 / 255.0, 34.0 / 255.0};

namespace {

struct PaletteEntry {
  const char* name;
  int r, g, b;
};

// Byte-exact values so PPM round-trips are lossless.
const PaletteEntry kPalette[] = {
    {"red", 220, 50, 47},     {"green", 64, 190, 80},   {"blue", 52, 101, 230},
    {"yellow", 235, 220, 60}, {"magenta", 211, 54, 180}, {"cyan", 42, 200, 210},
    {"orange", 240, 150, 40}, {"white", 240, 240, 240},
};

const char* kCountWords[] = {"zero", "one", "two", "three", "four", "five", "six"};

std::string location_name(const BBox& box, int image_size) {
  double cx = 0.5 * (box.x1 + box.x2);
  double cy = 0.5 * (box.y1 + box.y2);
  int col = std::min(2, static_cast<int>(cx * 3.0 / image_size));
  int row = std::min(2, static_cast<int>(cy * 3.0 / image_size));
  static const char* kRows[] = {"top", "middle", "bottom"};
  static const char* kCols[] = {"left", "center", "right"};
  if (row == 1 && col == 1) return "center";
  return std::string(kRows[row]) + " " + kCols[col];
}

std::string size_word(const BBox& box, int image_size) {
  int side = std::max(box.width(), box.height());
  if (side * 4 < image_size) return "small";
  if (side * 16 < image_size * 5) return "medium";
  return "large";
}

bool inside_shape(const std::string& shape, const BBox& b, int x, int y) {
  double cx = 0.5 * (b.x1 + b.x2 - 1);
  double cy = 0.5 * (b.y1 + b.y2 - 1);
  double rx = std::max(1.0, 0.5 * (b.width() - 1));
  double ry = std::max(1.0, 0.5 * (b.height() - 1));
  if (shape == "square") return true;
  if (shape == "circle") {
    double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
  if (shape == "diamond") {
    return std::abs(x - cx) / rx + std::abs(y - cy) / ry <= 1.0;
  }
  if (shape == "triangle") {
    // apex top-center, base along the bottom edge
    double ax = cx, ay = b.y1;
    double bx = b.x1, by = b.y2 - 1;
    double cx2 = b.x2 - 1, cy2 = b.y2 - 1;
    auto side = [](double x1, double y1, double x2, double y2, double px, double py) {
      return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
    };
    double d1 = side(ax, ay, bx, by, x, y);
    double d2 = side(bx, by, cx2, cy2, x, y);
    double d3 = side(cx2, cy2, ax, ay, x, y);
    bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
    bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
    return !(has_neg && has_pos);
  }
  if (shape == "cross") {
    return std::abs(x - cx) <= rx / 3.0 + 0.5 || std::abs(y - cy) <= ry / 3.0 + 0.5;
  }
  // unknown shape names fall back to a filled box
  return true;
}

void render_object(img::Image& im, const SceneObject& obj) {
  double rgb[3];
  if (!palette_rgb(obj.color, rgb)) {
    rgb[0] = rgb[1] = rgb[2] = 200.0 / 255.0;
  }
  for (int y = obj.bbox.y1; y < obj.bbox.y2; ++y)
    for (int x = obj.bbox.x1; x < obj.bbox.x2; ++x)
      if (inside_shape(obj.shape, obj.bbox, x, y))
        for (int c = 0; c < 3; ++c) im.at(y, x, c) = rgb[c];
}

}  // namespace

bool palette_rgb(const std::string& name, double rgb[3]) {
  for (const auto& p : kPalette)
    if (name == p.name) {
      rgb[0] = p.r / 255.0;
      rgb[1] = p.g / 255.0;
      rgb[2] = p.b / 255.0;
      return true;
    }
  return false;
}

void SceneSpec::validate() const {
  if (image_size < 16) throw DataError("SceneSpec: image_size must be >= 16");
  if (n_objects < 1 || n_objects > 6) throw DataError("SceneSpec: n_objects must be in [1,6]");
  if (shape_vocab.empty() || color_vocab.empty())
    throw DataError("SceneSpec: vocabularies must be non-empty");
  if (verbosity < 1 || verbosity > 2) throw DataError("SceneSpec: verbosity must be 1 or 2");
}

SceneRecord generate_scene(const SceneSpec& spec) {
  spec.validate();
  rng::Rng rg(spec.seed);
  const int W = spec.image_size;

  int min_side = std::max(4, W * 3 / 16);
  int cap = static_cast<int>(std::sqrt(static_cast<double>(W) * W / (2.5 * spec.n_objects)));
  int max_side = std::max(min_side + 1, std::min(W * 3 / 8, cap));
  // margin-padded minimum footprint above half the canvas cannot place reliably
  if (static_cast<long long>(min_side + 1) * (min_side + 1) * spec.n_objects >
      static_cast<long long>(W) * W / 2)
    throw DataError("generate_scene: placement infeasible; n_objects too large for image_size");

  SceneRecord rec;
  rec.image = img::Image(W, W);
  for (int y = 0; y < W; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) rec.image.at(y, x, c) = kBackground[c];

  // place boxes with zero pairwise overlap (1px margin)
  // bimodal size classes keep the small/large caption words visually crisp
  int small_hi = std::min(min_side + 3, max_side);
  int large_lo = std::max(max_side - 4, min_side);

  std::set<std::pair<std::string, std::string>> used;
  for (int i = 0; i < spec.n_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      int lo = min_side, hi = max_side;
      if (large_lo > small_hi) {
        if (rg.uniform_int(0, 1) == 0) {
          hi = small_hi;
        } else {
          lo = large_lo;
        }
      }
      int sw = rg.uniform_int(lo, hi);
      int sh = std::clamp(sw + rg.uniform_int(-2, 2), lo, hi);
      int x1 = rg.uniform_int(0, W - sw);
      int y1 = rg.uniform_int(0, W - sh);
      BBox box{x1, y1, x1 + sw, y1 + sh};
      BBox margin{x1 - 1, y1 - 1, x1 + sw + 1, y1 + sh + 1};
      bool ok = true;
      for (const auto& other : rec.objects)
        if (intersection_area(margin, other.bbox) > 0) ok = false;
      if (!ok) continue;
      SceneObject obj;
      obj.bbox = box;
      for (int pick = 0; pick < 20; ++pick) {
        obj.shape = spec.shape_vocab[rg.uniform_int(0, static_cast<int>(spec.shape_vocab.size()) - 1)];
        obj.color = spec.color_vocab[rg.uniform_int(0, static_cast<int>(spec.color_vocab.size()) - 1)];
        if (!used.count({obj.shape, obj.color})) break;
      }
      used.insert({obj.shape, obj.color});
      obj.sentence_index = i + 1;
      rec.objects.push_back(obj);
      placed = true;
    }
    if (!placed)
      throw DataError("generate_scene: placement failed; n_objects too large for image_size");
  }

  for (const auto& obj : rec.objects) render_object(rec.image, obj);

  // caption: [summary, object_1, ..., object_n]
  std::vector<std::string> sentences;
  {
    std::ostringstream s;
    const char* shapes_word = spec.n_objects == 1 ? "shape" : "shapes";
    if (spec.verbosity >= 2)
      s << "This synthetic scene shows " << kCountWords[spec.n_objects] << " colored "
        << shapes_word << " arranged carefully on a plain dark uncluttered background.";
    else
      s << "This synthetic scene shows " << kCountWords[spec.n_objects] << " colored "
        << shapes_word << " arranged on a plain dark background.";
    sentences.push_back(s.str());
  }
  for (const auto& obj : rec.objects) {
    std::ostringstream s;
    s << "A " << size_word(obj.bbox, W) << " " << obj.color << " " << obj.shape;
    if (spec.verbosity >= 2) s << " with a clean solid fill";
    s << " sits in the " << location_name(obj.bbox, W) << " area of the picture.";
    sentences.push_back(s.str());
  }

  int offset = 0;
  for (size_t i = 0; i < sentences.size(); ++i) {
    if (i > 0) {
      rec.caption += " ";
      ++offset;
    }
    rec.sentences.push_back({sentences[i], offset, offset + static_cast<int>(sentences[i].size())});
    rec.caption += sentences[i];
    offset += static_cast<int>(sentences[i].size());
  }
  return rec;
}

std::vector<SceneRecord> generate_dataset(const SceneSpec& spec_template, int n,
                                          uint64_t master_seed) {
  std::vector<SceneRecord> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    SceneSpec spec = spec_template;
    spec.seed = rng::mix_seed(master_seed, static_cast<uint64_t>(i));
    SceneRecord rec = generate_scene(spec);
    char buf[16];
    std::snprintf(buf, sizeof buf, "rec_%05d", i);
    rec.id = buf;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<SentenceSpan> split_sentences(const std::string& caption) {
  if (caption.empty()) throw DataError("split_sentences: empty caption");
  std::vector<SentenceSpan> spans;
  const int n = static_cast<int>(caption.size());
  auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  auto is_term = [](char c) { return c == '.' || c == '!' || c == '?'; };
  int i = 0;
  while (i < n) {
    while (i < n && is_ws(caption[i])) ++i;
    if (i >= n) break;
    int start = i;
    int end = -1;
    while (i < n) {
      if (is_term(caption[i]) && (i + 1 >= n || is_ws(caption[i + 1]))) {
        end = i + 1;
        ++i;
        break;
      }
      ++i;
    }
    if (end < 0) {
      end = n;
      while (end > start && is_ws(caption[end - 1])) --end;
    }
    spans.push_back({caption.substr(start, end - start), start, end});
  }
  if (spans.empty()) throw DataError("split_sentences: caption contains no sentences");
  return spans;
}

void write_manifest(const std::vector<SceneRecord>& records, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::ofstream f(dir / "manifest.jsonl");
  if (!f) throw DataError("write_manifest: cannot open " + (dir / "manifest.jsonl").string());
  json header = {{"version", kManifestVersion}, {"count", records.size()}};
  f << header.dump() << "\n";
  for (const auto& rec : records) {
    std::string image_rel = "images/" + rec.id + ".ppm";
    img::write_ppm(rec.image, dir / image_rel);
    json sentences = json::array();
    for (const auto& s : rec.sentences)
      sentences.push_back({{"text", s.text}, {"start", s.start}, {"end", s.end}});
    json objects = json::array();
    for (const auto& o : rec.objects)
      objects.push_back({{"shape", o.shape},
                         {"color", o.color},
                         {"bbox", {o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2}},
                         {"sentence_index", o.sentence_index}});
    json line = {{"id", rec.id},
                 {"image_path", image_rel},
                 {"caption", rec.caption},
                 {"sentences", sentences},
                 {"objects", objects}};
    f << line.dump() << "\n";
  }
  if (!f) throw DataError("write_manifest: write failed");
}

std::vector<SceneRecord> read_manifest(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::path mpath = dir / "manifest.jsonl";
  std::ifstream f(mpath);
  if (!f) throw DataError("read_manifest: cannot open " + mpath.string());
  std::string line;
  if (!std::getline(f, line)) throw DataError("read_manifest: empty manifest " + mpath.string());
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("read_manifest: malformed header: " + std::string(e.what()));
  }
  if (!header.contains("version") || header["version"] != kManifestVersion)
    throw DataError("read_manifest: version mismatch, expected " +
                    std::string(kManifestVersion));
  std::vector<SceneRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("read_manifest: malformed record: " + std::string(e.what()));
    }
    try {
      SceneRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.caption = j.at("caption").get<std::string>();
      for (const auto& s : j.at("sentences"))
        rec.sentences.push_back({s.at("text").get<std::string>(), s.at("start").get<int>(),
                                 s.at("end").get<int>()});
      for (const auto& o : j.at("objects")) {
        SceneObject obj;
        obj.shape = o.at("shape").get<std::string>();
        obj.color = o.at("color").get<std::string>();
        auto b = o.at("bbox");
        obj.bbox = BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                        b.at(3).get<int>()};
        obj.sentence_index = o.at("sentence_index").get<int>();
        rec.objects.push_back(obj);
      }
      rec.image = img::read_ppm(dir / j.at("image_path").get<std::string>());
      out.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw DataError("read_manifest: bad record fields: " + std::string(e.what()));
    }
  }
  return out;
}

}  // namespace goalign::datagen
