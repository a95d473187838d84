#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "goalign/ad.hpp"
#include "goalign/image.hpp"
#include "goalign/tokenizer.hpp"

namespace goalign::enc {

struct VisionEncoderConfig {
  int image_size = 64;
  int patch_size = 16;
  int depth = 2;
  int dim = 64;
  int heads = 4;

  int grid() const { return image_size / patch_size; }
  int n_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  void validate() const;
};

struct TextEncoderConfig {
  int vocab_size = 0;
  int max_len = 128;
  int depth = 2;
  int dim = 64;
  int heads = 4;
  int pe_base_len = 32;  // positional table length before interpolation
  int pe_keep = 20;      // prefix rows preserved exactly

  void validate() const;
};

struct EncoderOutput {
  ad::Mat cls;                     // 1 x d
  ad::Mat tokens;                  // patch tokens (N x d) or sequence tokens (M x d)
  std::vector<ad::Mat> attn_last;  // final-layer attention, one (T x T) per head
};

using ParamMap = std::map<std::string, ad::Mat>;
using LeafMap = std::map<std::string, ad::Node*>;

// Fresh parameters; the text positional table is built by interpolating a
// pe_base_len-long table up to max_len at construction time.
ParamMap init_params(const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg,
                     double temperature_init, uint64_t seed);

LeafMap make_leaves(ad::Graph& g, const ParamMap& params);

struct EncodeNodes {
  ad::Node* cls;
  ad::Node* tokens;
};

// Graph-building forwards shared by training, matching and evaluation.
EncodeNodes encode_image_nodes(ad::Graph& g, const LeafMap& leaves,
                               const VisionEncoderConfig& cfg, const img::Image& image,
                               std::vector<ad::Mat>* attn_last = nullptr);
EncodeNodes encode_text_nodes(ad::Graph& g, const LeafMap& leaves,
                              const TextEncoderConfig& cfg, const Tokenization& tok,
                              std::vector<ad::Mat>* attn_last = nullptr);

// Value-level wrappers used outside training.
EncoderOutput encode_image(const img::Image& image, const ParamMap& params,
                           const VisionEncoderConfig& cfg);
EncoderOutput encode_text(const Tokenization& tok, const ParamMap& params,
                          const TextEncoderConfig& cfg);

// Stretch a learned positional table to new_len rows, preserving the first
// `keep` rows bit-exactly and linearly interpolating the remainder.
ad::Mat interpolate_positional(const ad::Mat& pe, int new_len, int keep);

struct PcaResult {
  ad::Mat projections;              // N x k, each column min-max scaled to [0,1]
  std::vector<double> eigenvalues;  // all covariance eigenvalues, descending
  bool degenerate = false;          // fewer than k non-trivial components
  int components_used = 0;
};

// Top-k principal components of mean-centered token rows.
PcaResult attention_pca(const ad::Mat& tokens, int k);

// Symmetric eigendecomposition (cyclic Jacobi), eigenvalues descending.
void symmetric_eigen(const ad::Mat& sym, std::vector<double>& eigenvalues,
                     ad::Mat& eigenvectors);

// Everything a run needs to embed data.
struct Model {
  VisionEncoderConfig vision;
  TextEncoderConfig text;
  Vocabulary vocab;
  ParamMap params;
};

}  // namespace goalign::enc
