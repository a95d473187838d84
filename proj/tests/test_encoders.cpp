#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "goalign/encoders.hpp"
#include "goalign/errors.hpp"
#include "goalign/rng.hpp"

using namespace goalign;
using ad::Mat;
using enc::TextEncoderConfig;
using enc::VisionEncoderConfig;

namespace {

VisionEncoderConfig tiny_vision() {
  VisionEncoderConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.depth = 1;
  c.dim = 16;
  c.heads = 2;
  return c;
}

TextEncoderConfig tiny_text(int vocab_size) {
  TextEncoderConfig c;
  c.vocab_size = vocab_size;
  c.max_len = 16;
  c.depth = 1;
  c.dim = 16;
  c.heads = 2;
  c.pe_base_len = 8;
  c.pe_keep = 4;
  return c;
}

img::Image random_image(int size, uint64_t seed) {
  rng::Rng rg(seed);
  img::Image im(size, size);
  for (double& v : im.px) v = rg.uniform();
  return im;
}

}  // namespace

TEST_CASE("tokenize: forced word positions") {
  enc::Vocabulary vocab = enc::Vocabulary::build({"red circle"});
  enc::Tokenization t = enc::tokenize("red circle", vocab, 16);
  REQUIRE(t.ids.size() == 4);
  CHECK(t.ids[0] == enc::Vocabulary::kBos);
  CHECK(t.ids[3] == enc::Vocabulary::kEos);
  CHECK(t.ids[1] == vocab.id_of("red"));
  CHECK(t.ids[2] == vocab.id_of("circle"));
  CHECK(t.token_for_char(0) == 1);
  CHECK(t.token_for_char(4) == 2);
  CHECK(!t.truncated);
}

TEST_CASE("tokenize: unknown words map to <unk>, empty text errors") {
  enc::Vocabulary vocab = enc::Vocabulary::build({"red circle"});
  enc::Tokenization t = enc::tokenize("blue circle", vocab, 16);
  CHECK(t.ids[1] == enc::Vocabulary::kUnk);
  CHECK(t.ids[2] == vocab.id_of("circle"));
  CHECK_THROWS_AS(enc::tokenize("", vocab, 16), DataError);
  CHECK_THROWS_AS(enc::tokenize("...!!!", vocab, 16), DataError);
}

TEST_CASE("tokenize: truncation at max_len") {
  std::string text;
  for (int i = 0; i < 300; ++i) text += "word ";
  enc::Vocabulary vocab = enc::Vocabulary::build({text});
  enc::Tokenization t = enc::tokenize(text, vocab, 128);
  CHECK(t.truncated);
  CHECK(t.ids.size() == 128);
  CHECK(t.ids.back() == enc::Vocabulary::kEos);
}

TEST_CASE("char_to_token is monotone") {
  enc::Vocabulary vocab = enc::Vocabulary::build({"a bb ccc dddd"});
  enc::Tokenization t = enc::tokenize("a bb ccc dddd", vocab, 16);
  int prev = 0;
  for (int off = 0; off < 13; ++off) {
    int tok = t.token_for_char(off);
    if (tok >= 0) {
      CHECK(tok >= prev);
      prev = tok;
    }
  }
}

TEST_CASE("encode_image: shape contract and determinism") {
  VisionEncoderConfig vcfg;  // 64 px, patch 16 -> 16 patches
  TextEncoderConfig tcfg = tiny_text(10);
  tcfg.dim = vcfg.dim;
  tcfg.heads = vcfg.heads;
  enc::ParamMap params = enc::init_params(vcfg, tcfg, 0.07, 5);
  img::Image im = random_image(64, 1);
  enc::EncoderOutput a = enc::encode_image(im, params, vcfg);
  enc::EncoderOutput b = enc::encode_image(im, params, vcfg);
  CHECK(a.tokens.rows == 16);
  CHECK(a.tokens.cols == vcfg.dim);
  CHECK(a.cls.rows == 1);
  CHECK(a.cls.cols == vcfg.dim);
  CHECK(a.cls.a == b.cls.a);
  CHECK(a.tokens.a == b.tokens.a);
  CHECK(a.attn_last.size() == static_cast<size_t>(vcfg.heads));
  CHECK(a.attn_last[0].rows == 17);  // cls + patches
  CHECK(a.cls.all_finite());
  CHECK(a.tokens.all_finite());

  img::Image bad(32, 32);
  CHECK_THROWS(enc::encode_image(bad, params, vcfg));
}

TEST_CASE("encode_text: shapes, eos cls, position sensitivity") {
  VisionEncoderConfig vcfg = tiny_vision();
  enc::Vocabulary vocab = enc::Vocabulary::build({"red circle sits here"});
  TextEncoderConfig tcfg = tiny_text(vocab.size());
  enc::ParamMap params = enc::init_params(vcfg, tcfg, 0.07, 6);

  enc::Tokenization t = enc::tokenize("red circle", vocab, 16);
  enc::EncoderOutput out = enc::encode_text(t, params, tcfg);
  CHECK(out.tokens.rows == 4);
  CHECK(out.tokens.cols == tcfg.dim);

  // permuting two non-eos tokens must change the cls embedding
  enc::Tokenization swapped = t;
  std::swap(swapped.ids[1], swapped.ids[2]);
  enc::EncoderOutput out2 = enc::encode_text(swapped, params, tcfg);
  bool differs = false;
  for (size_t i = 0; i < out.cls.size(); ++i)
    if (out.cls.a[i] != out2.cls.a[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("causal masking: future tokens cannot influence earlier rows") {
  VisionEncoderConfig vcfg = tiny_vision();
  enc::Vocabulary vocab = enc::Vocabulary::build({"one two three four five"});
  TextEncoderConfig tcfg = tiny_text(vocab.size());
  enc::ParamMap params = enc::init_params(vcfg, tcfg, 0.07, 8);
  enc::Tokenization a = enc::tokenize("one two three", vocab, 16);
  enc::Tokenization b = a;
  b.ids[3] = vocab.id_of("five");  // replace the last word (index 3 of [bos,1,2,3,eos])
  enc::EncoderOutput oa = enc::encode_text(a, params, tcfg);
  enc::EncoderOutput ob = enc::encode_text(b, params, tcfg);
  for (int r = 0; r < 3; ++r)  // rows before the change are untouched
    for (int c = 0; c < tcfg.dim; ++c)
      CHECK(oa.tokens.at(r, c) == ob.tokens.at(r, c));
}

TEST_CASE("gradient of cls sum w.r.t. params matches central differences") {
  VisionEncoderConfig vcfg = tiny_vision();
  enc::Vocabulary vocab = enc::Vocabulary::build({"tiny scene with words"});
  TextEncoderConfig tcfg = tiny_text(vocab.size());
  enc::ParamMap params = enc::init_params(vcfg, tcfg, 0.07, 9);
  img::Image im = random_image(16, 2);
  enc::Tokenization tok = enc::tokenize("tiny scene with words", vocab, 16);

  for (bool image_side : {true, false}) {
    // analytic
    ad::Graph g;
    enc::LeafMap leaves = enc::make_leaves(g, params);
    enc::EncodeNodes n = image_side ? enc::encode_image_nodes(g, leaves, vcfg, im)
                                    : enc::encode_text_nodes(g, leaves, tcfg, tok);
    ad::Node* loss = g.mean_all(n.cls);
    g.backward(loss);

    const double h = 1e-5;
    std::vector<std::string> probe = image_side
        ? std::vector<std::string>{"vis.patch_proj.w", "vis.cls", "vis.pos",
                                   "vis.l0.attn.wq", "vis.l0.mlp.w2", "vis.lnf.g"}
        : std::vector<std::string>{"txt.embed", "txt.pos", "txt.l0.attn.wv",
                                   "txt.l0.mlp.w1", "txt.lnf.b"};
    rng::Rng pick(42);
    for (const std::string& name : probe) {
      const Mat& grad = leaves.at(name)->grad;
      REQUIRE(grad.size() > 0);
      for (int trial = 0; trial < 4; ++trial) {
        int i = pick.uniform_int(0, static_cast<int>(grad.size()) - 1);
        auto eval = [&](double delta) {
          enc::ParamMap shifted = params;
          shifted[name].a[i] += delta;
          ad::Graph g2;
          enc::LeafMap lv = enc::make_leaves(g2, shifted);
          enc::EncodeNodes n2 = image_side ? enc::encode_image_nodes(g2, lv, vcfg, im)
                                           : enc::encode_text_nodes(g2, lv, tcfg, tok);
          return g2.mean_all(n2.cls)->val.at(0, 0);
        };
        double numeric = (eval(h) - eval(-h)) / (2.0 * h);
        double analytic = grad.a[i];
        double rel = std::abs(analytic - numeric) /
                     std::max(std::abs(analytic) + std::abs(numeric), 1e-4);
        INFO(name, "[", i, "] analytic=", analytic, " numeric=", numeric);
        CHECK(rel < 1e-4);
      }
    }
  }
}

TEST_CASE("interpolate_positional: identity, endpoints, prefix") {
  rng::Rng rg(3);
  Mat pe(4, 5);
  for (double& v : pe.a) v = rg.normal();

  Mat same = enc::interpolate_positional(pe, 4, 2);
  CHECK(same.a == pe.a);

  Mat stretched = enc::interpolate_positional(pe, 6, 2);
  CHECK(stretched.rows == 6);
  for (int c = 0; c < 5; ++c) {
    CHECK(stretched.at(0, c) == pe.at(0, c));  // prefix bit-exact
    CHECK(stretched.at(1, c) == pe.at(1, c));
    CHECK(stretched.at(2, c) == pe.at(2, c));  // first stretched row = input row 2
    CHECK(stretched.at(5, c) == pe.at(3, c));  // last row = input row 3
  }

  CHECK_THROWS_AS(enc::interpolate_positional(pe, 6, 4), DataError);  // keep >= L_old
  CHECK_THROWS_AS(enc::interpolate_positional(pe, 3, 2), DataError);  // new_len < L_old
}

TEST_CASE("interpolate_positional: interior rows are linear interpolations") {
  Mat pe(4, 1);
  pe.at(0, 0) = 0.0;
  pe.at(1, 0) = 1.0;
  pe.at(2, 0) = 2.0;
  pe.at(3, 0) = 5.0;
  Mat out = enc::interpolate_positional(pe, 6, 2);
  // stretched source positions: rows 2..5 -> s = 2 + (j-2)/3
  CHECK(out.at(3, 0) == doctest::Approx(2.0 + 3.0 * (1.0 / 3.0)).epsilon(1e-12));
  CHECK(out.at(4, 0) == doctest::Approx(2.0 + 3.0 * (2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("symmetric_eigen recovers a known decomposition") {
  // A = Q diag(3,1) Q^T with Q a rotation by 30 degrees
  double cth = std::cos(0.5235987755982988), sth = std::sin(0.5235987755982988);
  Mat a(2, 2);
  a.at(0, 0) = 3 * cth * cth + 1 * sth * sth;
  a.at(0, 1) = (3 - 1) * cth * sth;
  a.at(1, 0) = a.at(0, 1);
  a.at(1, 1) = 3 * sth * sth + 1 * cth * cth;
  std::vector<double> vals;
  Mat vecs;
  enc::symmetric_eigen(a, vals, vecs);
  CHECK(vals[0] == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(vals[1] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(vecs.at(0, 0)) == doctest::Approx(cth).epsilon(1e-10));
}

TEST_CASE("attention_pca: degenerate, colinear, shape") {
  Mat constant(8, 4, 0.7);
  enc::PcaResult flat = enc::attention_pca(constant, 3);
  CHECK(flat.degenerate);
  for (double v : flat.projections.a) CHECK(v == 0.0);

  // tokens on a line: one component explains >= 99.9% of variance
  rng::Rng rg(5);
  Mat line(10, 6);
  Mat dir(1, 6);
  for (double& v : dir.a) v = rg.normal();
  for (int r = 0; r < 10; ++r) {
    double t = rg.uniform(-2, 2);
    for (int c = 0; c < 6; ++c) line.at(r, c) = t * dir.at(0, c);
  }
  enc::PcaResult lr = enc::attention_pca(line, 1);
  double total = 0.0;
  for (double e : lr.eigenvalues) total += std::max(0.0, e);
  CHECK(lr.eigenvalues[0] / total >= 0.999);

  Mat random(12, 5);
  for (double& v : random.a) v = rg.normal();
  enc::PcaResult r3 = enc::attention_pca(random, 3);
  CHECK(r3.projections.rows == 12);
  CHECK(r3.projections.cols == 3);
  CHECK(!r3.degenerate);
  for (double v : r3.projections.a) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  CHECK_THROWS(enc::attention_pca(Mat(2, 4), 3));  // N <= k
}

TEST_CASE("config invariants are enforced") {
  VisionEncoderConfig v = tiny_vision();
  v.image_size = 17;
  CHECK_THROWS_AS(v.validate(), DataError);
  v = tiny_vision();
  v.dim = 15;
  CHECK_THROWS_AS(v.validate(), DataError);

  TextEncoderConfig t = tiny_text(10);
  t.pe_keep = t.pe_base_len;
  CHECK_THROWS_AS(t.validate(), DataError);
  t = tiny_text(10);
  t.max_len = t.pe_base_len - 1;
  CHECK_THROWS_AS(t.validate(), DataError);
}
