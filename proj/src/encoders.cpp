#include "goalign/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "goalign/errors.hpp"
#include "goalign/rng.hpp"

namespace goalign::enc {

using ad::Graph;
using ad::Mat;
using ad::Node;

void VisionEncoderConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
    throw DataError("VisionEncoderConfig: image_size must be a multiple of patch_size");
  if (dim <= 0 || heads <= 0 || dim % heads != 0)
    throw DataError("VisionEncoderConfig: dim must be a multiple of heads");
  if (depth < 1) throw DataError("VisionEncoderConfig: depth must be >= 1");
}

void TextEncoderConfig::validate() const {
  if (vocab_size < 4) throw DataError("TextEncoderConfig: vocab_size too small");
  if (max_len < pe_base_len)
    throw DataError("TextEncoderConfig: max_len must be >= pe_base_len");
  if (pe_keep >= pe_base_len)
    throw DataError("TextEncoderConfig: pe_keep must be < pe_base_len");
  if (dim <= 0 || heads <= 0 || dim % heads != 0)
    throw DataError("TextEncoderConfig: dim must be a multiple of heads");
  if (depth < 1) throw DataError("TextEncoderConfig: depth must be >= 1");
}

namespace {

Mat normal_mat(int r, int c, double stddev, rng::Rng& rg) {
  Mat m(r, c);
  for (double& v : m.a) v = rg.normal(0.0, stddev);
  return m;
}

void init_block(ParamMap& p, const std::string& pfx, int dim, rng::Rng& rg) {
  double w_std = 1.0 / std::sqrt(static_cast<double>(dim));
  int hidden = 4 * dim;
  p[pfx + ".ln1.g"] = Mat(1, dim, 1.0);
  p[pfx + ".ln1.b"] = Mat(1, dim, 0.0);
  p[pfx + ".attn.wq"] = normal_mat(dim, dim, w_std, rg);
  p[pfx + ".attn.bq"] = Mat(1, dim, 0.0);
  p[pfx + ".attn.wk"] = normal_mat(dim, dim, w_std, rg);
  p[pfx + ".attn.bk"] = Mat(1, dim, 0.0);
  p[pfx + ".attn.wv"] = normal_mat(dim, dim, w_std, rg);
  p[pfx + ".attn.bv"] = Mat(1, dim, 0.0);
  p[pfx + ".attn.wo"] = normal_mat(dim, dim, w_std, rg);
  p[pfx + ".attn.bo"] = Mat(1, dim, 0.0);
  p[pfx + ".ln2.g"] = Mat(1, dim, 1.0);
  p[pfx + ".ln2.b"] = Mat(1, dim, 0.0);
  p[pfx + ".mlp.w1"] = normal_mat(dim, hidden, w_std, rg);
  p[pfx + ".mlp.b1"] = Mat(1, hidden, 0.0);
  p[pfx + ".mlp.w2"] = normal_mat(hidden, dim, 1.0 / std::sqrt(static_cast<double>(hidden)), rg);
  p[pfx + ".mlp.b2"] = Mat(1, dim, 0.0);
}

Node* lookup(const LeafMap& leaves, const std::string& name) {
  auto it = leaves.find(name);
  ad::check(it != leaves.end(), "missing parameter leaf: " + name);
  return it->second;
}

Node* attention(Graph& g, const LeafMap& L, const std::string& pfx, Node* x, int heads,
                const Mat* mask, std::vector<Mat>* attn_out) {
  int dim = x->val.cols;
  int dh = dim / heads;
  Node* q = g.add_rowvec(g.matmul(x, lookup(L, pfx + ".wq")), lookup(L, pfx + ".bq"));
  Node* k = g.add_rowvec(g.matmul(x, lookup(L, pfx + ".wk")), lookup(L, pfx + ".bk"));
  Node* v = g.add_rowvec(g.matmul(x, lookup(L, pfx + ".wv")), lookup(L, pfx + ".bv"));
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Node*> head_outs;
  for (int h = 0; h < heads; ++h) {
    Node* qh = g.slice_cols(q, h * dh, dh);
    Node* kh = g.slice_cols(k, h * dh, dh);
    Node* vh = g.slice_cols(v, h * dh, dh);
    Node* scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt);
    Node* probs = g.softmax_rows(scores, mask);
    if (attn_out) attn_out->push_back(probs->val);
    head_outs.push_back(g.matmul(probs, vh));
  }
  Node* merged = g.concat_cols(head_outs);
  return g.add_rowvec(g.matmul(merged, lookup(L, pfx + ".wo")), lookup(L, pfx + ".bo"));
}

Node* mlp(Graph& g, const LeafMap& L, const std::string& pfx, Node* x) {
  Node* h = g.gelu(g.add_rowvec(g.matmul(x, lookup(L, pfx + ".w1")), lookup(L, pfx + ".b1")));
  return g.add_rowvec(g.matmul(h, lookup(L, pfx + ".w2")), lookup(L, pfx + ".b2"));
}

// pre-norm transformer stack with a final layernorm
Node* transformer(Graph& g, const LeafMap& L, const std::string& pfx, Node* x, int depth,
                  int heads, const Mat* mask, std::vector<Mat>* attn_last) {
  for (int i = 0; i < depth; ++i) {
    std::string lp = pfx + ".l" + std::to_string(i);
    std::vector<Mat>* capture = (attn_last && i == depth - 1) ? attn_last : nullptr;
    Node* normed = g.layernorm_rows(x, lookup(L, lp + ".ln1.g"), lookup(L, lp + ".ln1.b"));
    x = g.add(x, attention(g, L, lp + ".attn", normed, heads, mask, capture));
    Node* normed2 = g.layernorm_rows(x, lookup(L, lp + ".ln2.g"), lookup(L, lp + ".ln2.b"));
    x = g.add(x, mlp(g, L, lp + ".mlp", normed2));
  }
  return g.layernorm_rows(x, lookup(L, pfx + ".lnf.g"), lookup(L, pfx + ".lnf.b"));
}

}  // namespace

ParamMap init_params(const VisionEncoderConfig& vcfg, const TextEncoderConfig& tcfg,
                     double temperature_init, uint64_t seed) {
  vcfg.validate();
  tcfg.validate();
  ad::check(temperature_init > 0.0, "init_params: temperature must be positive");
  rng::Rng rg(seed);
  ParamMap p;

  double vd = 1.0 / std::sqrt(static_cast<double>(vcfg.patch_dim()));
  p["vis.patch_proj.w"] = normal_mat(vcfg.patch_dim(), vcfg.dim, vd, rg);
  p["vis.patch_proj.b"] = Mat(1, vcfg.dim, 0.0);
  p["vis.cls"] = normal_mat(1, vcfg.dim, 0.02, rg);
  p["vis.pos"] = normal_mat(vcfg.n_patches() + 1, vcfg.dim, 0.01, rg);
  for (int i = 0; i < vcfg.depth; ++i) init_block(p, "vis.l" + std::to_string(i), vcfg.dim, rg);
  p["vis.lnf.g"] = Mat(1, vcfg.dim, 1.0);
  p["vis.lnf.b"] = Mat(1, vcfg.dim, 0.0);

  p["txt.embed"] = normal_mat(tcfg.vocab_size, tcfg.dim, 0.02, rg);
  Mat pe_base = normal_mat(tcfg.pe_base_len, tcfg.dim, 0.01, rg);
  p["txt.pos"] = interpolate_positional(pe_base, tcfg.max_len, tcfg.pe_keep);
  for (int i = 0; i < tcfg.depth; ++i) init_block(p, "txt.l" + std::to_string(i), tcfg.dim, rg);
  p["txt.lnf.g"] = Mat(1, tcfg.dim, 1.0);
  p["txt.lnf.b"] = Mat(1, tcfg.dim, 0.0);

  double pd = 1.0 / std::sqrt(static_cast<double>(vcfg.dim));
  p["proj.text.w"] = normal_mat(tcfg.dim, tcfg.dim, pd, rg);
  p["proj.text.b"] = Mat(1, tcfg.dim, 0.0);
  p["proj.vis.w"] = normal_mat(vcfg.dim, vcfg.dim, pd, rg);
  p["proj.vis.b"] = Mat(1, vcfg.dim, 0.0);

  Mat ls(1, 1);
  ls.at(0, 0) = std::log(1.0 / temperature_init);
  p["loss.logit_scale"] = ls;
  return p;
}

LeafMap make_leaves(Graph& g, const ParamMap& params) {
  LeafMap leaves;
  for (const auto& [name, mat] : params) leaves[name] = g.leaf(mat);
  return leaves;
}

EncodeNodes encode_image_nodes(Graph& g, const LeafMap& leaves, const VisionEncoderConfig& cfg,
                               const img::Image& image, std::vector<Mat>* attn_last) {
  cfg.validate();
  ad::check(image.h == cfg.image_size && image.w == cfg.image_size,
            "encode_image: image shape does not match config");
  int gridn = cfg.grid();
  Mat patches(cfg.n_patches(), cfg.patch_dim());
  for (int pr = 0; pr < gridn; ++pr)
    for (int pc = 0; pc < gridn; ++pc) {
      int row = pr * gridn + pc;
      int col = 0;
      for (int y = 0; y < cfg.patch_size; ++y)
        for (int x = 0; x < cfg.patch_size; ++x)
          for (int c = 0; c < 3; ++c)
            patches.at(row, col++) =
                image.at(pr * cfg.patch_size + y, pc * cfg.patch_size + x, c);
    }
  Node* px = g.constant(std::move(patches));
  Node* embedded = g.add_rowvec(g.matmul(px, lookup(leaves, "vis.patch_proj.w")),
                                lookup(leaves, "vis.patch_proj.b"));
  Node* x = g.concat_rows({lookup(leaves, "vis.cls"), embedded});
  x = g.add(x, lookup(leaves, "vis.pos"));
  Node* y = transformer(g, leaves, "vis", x, cfg.depth, cfg.heads, nullptr, attn_last);
  EncodeNodes out;
  out.cls = g.slice_rows(y, 0, 1);
  out.tokens = g.slice_rows(y, 1, cfg.n_patches());
  return out;
}

EncodeNodes encode_text_nodes(Graph& g, const LeafMap& leaves, const TextEncoderConfig& cfg,
                              const Tokenization& tok, std::vector<Mat>* attn_last) {
  cfg.validate();
  int m = tok.length();
  ad::check(m >= 2 && m <= cfg.max_len, "encode_text: bad token count");
  for (int id : tok.ids)
    ad::check(id >= 0 && id < cfg.vocab_size, "encode_text: token id out of range");
  Node* emb = g.gather_rows(lookup(leaves, "txt.embed"), tok.ids);
  Node* pos = g.slice_rows(lookup(leaves, "txt.pos"), 0, m);
  Node* x = g.add(emb, pos);
  Mat mask(m, m, 0.0);
  for (int r = 0; r < m; ++r)
    for (int c = r + 1; c < m; ++c) mask.at(r, c) = -1e30;
  Node* y = transformer(g, leaves, "txt", x, cfg.depth, cfg.heads, &mask, attn_last);
  EncodeNodes out;
  out.cls = g.slice_rows(y, tok.eos_position(), 1);
  out.tokens = y;
  return out;
}

EncoderOutput encode_image(const img::Image& image, const ParamMap& params,
                           const VisionEncoderConfig& cfg) {
  Graph g;
  LeafMap leaves = make_leaves(g, params);
  EncoderOutput out;
  EncodeNodes nodes = encode_image_nodes(g, leaves, cfg, image, &out.attn_last);
  out.cls = nodes.cls->val;
  out.tokens = nodes.tokens->val;
  ad::check(out.cls.all_finite() && out.tokens.all_finite(),
            "encode_image: non-finite output");
  return out;
}

EncoderOutput encode_text(const Tokenization& tok, const ParamMap& params,
                          const TextEncoderConfig& cfg) {
  Graph g;
  LeafMap leaves = make_leaves(g, params);
  EncoderOutput out;
  EncodeNodes nodes = encode_text_nodes(g, leaves, cfg, tok, &out.attn_last);
  out.cls = nodes.cls->val;
  out.tokens = nodes.tokens->val;
  ad::check(out.cls.all_finite() && out.tokens.all_finite(), "encode_text: non-finite output");
  return out;
}

Mat interpolate_positional(const Mat& pe, int new_len, int keep) {
  int old_len = pe.rows;
  if (keep >= old_len) throw DataError("interpolate_positional: keep must be < table length");
  if (keep < 0) throw DataError("interpolate_positional: keep must be >= 0");
  if (new_len < old_len)
    throw DataError("interpolate_positional: new_len must be >= table length");
  Mat out(new_len, pe.cols);
  for (int r = 0; r < keep; ++r)
    for (int c = 0; c < pe.cols; ++c) out.at(r, c) = pe.at(r, c);
  int denom = new_len - 1 - keep;
  for (int r = keep; r < new_len; ++r) {
    double s;
    if (denom == 0) {
      s = static_cast<double>(old_len - 1);
    } else {
      s = keep + static_cast<double>(r - keep) * (old_len - 1 - keep) / denom;
    }
    int i0 = static_cast<int>(std::floor(s));
    int i1 = std::min(i0 + 1, old_len - 1);
    double f = s - i0;
    for (int c = 0; c < pe.cols; ++c)
      out.at(r, c) = (f == 0.0) ? pe.at(i0, c) : (1.0 - f) * pe.at(i0, c) + f * pe.at(i1, c);
  }
  return out;
}

void symmetric_eigen(const Mat& sym, std::vector<double>& eigenvalues, Mat& eigenvectors) {
  ad::check(sym.rows == sym.cols, "symmetric_eigen: not square");
  int n = sym.rows;
  Mat a = sym;
  eigenvectors = Mat(n, n);
  for (int i = 0; i < n; ++i) eigenvectors.at(i, i) = 1.0;

  double frob = 0.0;
  for (double v : a.a) frob += v * v;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off <= 1e-30 * (frob + 1e-300)) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double tau = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        double app = a.at(p, p), aqq = a.at(q, q);
        a.at(p, p) = app - t * apq;
        a.at(q, q) = aqq + t * apq;
        a.at(p, q) = 0.0;
        a.at(q, p) = 0.0;
        for (int r = 0; r < n; ++r) {
          if (r != p && r != q) {
            double arp = a.at(r, p), arq = a.at(r, q);
            a.at(r, p) = c * arp - s * arq;
            a.at(p, r) = a.at(r, p);
            a.at(r, q) = s * arp + c * arq;
            a.at(q, r) = a.at(r, q);
          }
          double vrp = eigenvectors.at(r, p), vrq = eigenvectors.at(r, q);
          eigenvectors.at(r, p) = c * vrp - s * vrq;
          eigenvectors.at(r, q) = s * vrp + c * vrq;
        }
      }
  }
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return a.at(x, x) > a.at(y, y); });
  eigenvalues.resize(n);
  Mat sorted(n, n);
  for (int j = 0; j < n; ++j) {
    eigenvalues[j] = a.at(order[j], order[j]);
    for (int i = 0; i < n; ++i) sorted.at(i, j) = eigenvectors.at(i, order[j]);
  }
  eigenvectors = std::move(sorted);
}

PcaResult attention_pca(const Mat& tokens, int k) {
  int n = tokens.rows, d = tokens.cols;
  ad::check(n > k && k >= 1, "attention_pca: need more tokens than components");
  Mat centered = tokens;
  for (int c = 0; c < d; ++c) {
    double mu = 0.0;
    for (int r = 0; r < n; ++r) mu += tokens.at(r, c);
    mu /= n;
    for (int r = 0; r < n; ++r) centered.at(r, c) -= mu;
  }
  Mat cov(d, d);
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < d; ++i) {
      double ci = centered.at(r, i);
      if (ci == 0.0) continue;
      for (int j = i; j < d; ++j) cov.at(i, j) += ci * centered.at(r, j);
    }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < i; ++j) cov.at(i, j) = cov.at(j, i);
  for (double& v : cov.a) v /= (n - 1);

  PcaResult res;
  Mat vecs;
  symmetric_eigen(cov, res.eigenvalues, vecs);

  double lead = std::max(res.eigenvalues.empty() ? 0.0 : res.eigenvalues[0], 0.0);
  int usable = 0;
  for (int j = 0; j < k && j < d; ++j)
    if (res.eigenvalues[j] > std::max(lead * 1e-12, 1e-30)) ++usable;
  res.components_used = usable;
  res.degenerate = usable < k;

  res.projections = Mat(n, k);
  for (int j = 0; j < usable; ++j) {
    // deterministic sign: largest-magnitude loading positive
    int arg = 0;
    for (int i = 1; i < d; ++i)
      if (std::abs(vecs.at(i, j)) > std::abs(vecs.at(arg, j))) arg = i;
    double sign = vecs.at(arg, j) >= 0 ? 1.0 : -1.0;
    double lo = 1e300, hi = -1e300;
    for (int r = 0; r < n; ++r) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) s += centered.at(r, i) * vecs.at(i, j);
      s *= sign;
      res.projections.at(r, j) = s;
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    double range = hi - lo;
    for (int r = 0; r < n; ++r)
      res.projections.at(r, j) =
          range > 0.0 ? (res.projections.at(r, j) - lo) / range : 0.0;
  }
  return res;
}

}  // namespace goalign::enc
