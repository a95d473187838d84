#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "goalign/geometry.hpp"
#include "goalign/image.hpp"

namespace goalign::datagen {

struct SceneSpec {
  int image_size = 64;
  int n_objects = 3;
  std::vector<std::string> shape_vocab = {"circle", "square", "triangle", "diamond", "cross"};
  std::vector<std::string> color_vocab = {"red",     "green", "blue",   "yellow",
                                          "magenta", "cyan",  "orange", "white"};
  uint64_t seed = 0;
  int verbosity = 1;  // 1 = default template, 2 = wordier sentences

  void validate() const;
};

struct SceneObject {
  std::string shape;
  std::string color;
  BBox bbox;
  int sentence_index = 0;
};

struct SentenceSpan {
  std::string text;
  int start = 0;
  int end = 0;
};

struct SceneRecord {
  std::string id;
  img::Image image;
  std::string caption;
  std::vector<SceneObject> objects;
  std::vector<SentenceSpan> sentences;
};

// Deterministic function of spec.seed. Object boxes never overlap; caption is
// one summary sentence followed by one sentence per object (color, shape,
// coarse location). Throws if placement fails after bounded retries.
SceneRecord generate_scene(const SceneSpec& spec);

// Master seed fans out to per-record seeds; records get ids rec_00000...
std::vector<SceneRecord> generate_dataset(const SceneSpec& spec_template, int n,
                                          uint64_t master_seed);

// Sentence boundaries: '.', '!' or '?' followed by whitespace or end of text.
// Spans include the terminator and exclude surrounding whitespace.
std::vector<SentenceSpan> split_sentences(const std::string& caption);

// Manifest: <dir>/manifest.jsonl (header line + one record per line) with
// images as PPM files under <dir>/images/. Version tag "glit-toy/1".
inline constexpr const char* kManifestVersion = "glit-toy/1";
void write_manifest(const std::vector<SceneRecord>& records, const std::filesystem::path& dir);
std::vector<SceneRecord> read_manifest(const std::filesystem::path& dir);

// RGB for a palette color name (exact byte values / 255).
bool palette_rgb(const std::string& name, double rgb[3]);
extern const double kBackground[3];

}  // namespace goalign::datagen
