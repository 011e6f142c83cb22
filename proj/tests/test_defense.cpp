#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "radapt/data.hpp"
#include "radapt/defense.hpp"
#include "radapt/fourier.hpp"
#include "radapt/grad.hpp"
#include "radapt/rng.hpp"

using namespace radapt;

namespace {

// Independent oracle: the filter as explicit circular convolution with the
// spatial kernel obtained by inverse-transforming the spectral gain.
Tensor circular_conv_oracle(const Tensor& chw, double d0) {
  const std::size_t c = chw.extent(0), h = chw.extent(1), w = chw.extent(2);
  // spatial kernel = IDFT of the (unshifted) gain
  Tensor dist = centered_distance_matrix(h, w);
  Tensor gain_centered({h, w});
  for (std::size_t i = 0; i < gain_centered.size(); ++i) {
    gain_centered[i] = std::exp(-dist[i] * dist[i] / (2.0 * d0 * d0));
  }
  Tensor gain = ifftshift(gain_centered);
  ComplexGrid g(h, w);
  for (std::size_t i = 0; i < h * w; ++i) g.re[i] = gain[i];
  ComplexGrid kernel = idft2(g);

  Tensor out(chw.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < h; ++ky) {
          for (std::size_t kx = 0; kx < w; ++kx) {
            const std::size_t sy = (y + h - ky) % h;
            const std::size_t sx = (x + w - kx) % w;
            acc += kernel.re[kernel.idx(ky, kx)] * chw(ch, sy, sx);
          }
        }
        out(ch, y, x) = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

Tensor random_image(std::size_t res, Rng& rng) {
  Tensor img({3, res, res});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  return img;
}

ModelConfig micro_cfg() {
  ModelConfig cfg;
  cfg.resolution = 16;
  cfg.patch_size = 4;
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.num_classes = 4;
  return cfg;
}

}  // namespace

TEST_CASE("GIF equals the circular convolution oracle") {
  Rng rng(77);
  for (double d0 : {4.0, 6.0, 10.0}) {
    for (int rep = 0; rep < 10; ++rep) {
      Tensor img = random_image(32, rng);
      Tensor fast = gif_filter_image(img, d0);
      Tensor slow = circular_conv_oracle(img, d0);
      double max_err = 0.0;
      for (std::size_t i = 0; i < fast.size(); ++i) {
        max_err = std::max(max_err, std::abs(fast[i] - slow[i]));
      }
      CHECK(max_err < 1e-8);
    }
  }
}

TEST_CASE("GIF output stays in range and preserves the DC of a flat image") {
  Rng rng(3);
  Tensor img = random_image(16, rng);
  Tensor out = gif_filter_image(img, 3.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i] >= 0.0);
    CHECK(out[i] <= 1.0);
  }
  // a constant image passes through untouched (gain at DC is 1)
  Tensor flat({3, 16, 16});
  flat.fill(0.5);
  Tensor same = gif_filter_image(flat, 3.0);
  for (std::size_t i = 0; i < same.size(); ++i) {
    CHECK(same[i] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("filtering twice composes the spectral gains") {
  // On a smooth, mid-range image the clamp never fires, so two passes at
  // cutoff D0 equal one pass with gain exp(-D^2/D0^2), i.e. cutoff D0/sqrt(2).
  Rng rng(4);
  Tensor img({3, 16, 16});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = 0.5 + 0.1 * rng.uniform();
  const double d0 = 4.0;
  Tensor twice = gif_filter_image(gif_filter_image(img, d0), d0);
  Tensor once = gif_filter_image(img, d0 / std::sqrt(2.0));
  for (std::size_t i = 0; i < twice.size(); ++i) {
    CHECK(std::abs(twice[i] - once[i]) < 1e-9);
  }
}

TEST_CASE("GIF backward is the adjoint of the linearized filter") {
  // <F(x), y> = <x, F(y)> for the unclamped operator; with the clamp inactive
  // the recorded mask is all-ones and gif_filter_backward applies exactly F.
  Rng rng(5);
  Tensor x({3, 8, 8}), y({3, 8, 8});
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = 0.4 + 0.2 * rng.uniform();
    y[i] = rng.uniform(-1.0, 1.0);
  }
  Tensor mask;
  Tensor fx = gif_filter_image(x, 2.0, &mask);
  for (std::size_t i = 0; i < mask.size(); ++i) REQUIRE(mask[i] == 1.0);
  Tensor fy = gif_filter_backward(y, mask, 2.0);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lhs += fx[i] * y[i];
    rhs += x[i] * fy[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("cutoff scales linearly with resolution") {
  CHECK(default_cutoff(224) == 40.0);
  CHECK(default_cutoff(32) == 6.0);
  CHECK(default_cutoff(16) == 3.0);
  GifConfig bad{0.0, true};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("white input and anchor extraction") {
  ModelConfig cfg = micro_cfg();
  Tensor white = white_input(cfg);
  CHECK(white.shape() == std::vector<std::size_t>{1, 3, 16, 16});
  for (std::size_t i = 0; i < white.size(); ++i) CHECK(white[i] == 1.0);

  VitModel m = init_model(cfg, 1);
  Anchor a = extract_anchor(m, false);
  CHECK(a.values.shape() == std::vector<std::size_t>{cfg.tokens(), cfg.embed_dim});
  CHECK(a.source_digest == params_digest(m));
  CHECK(a.alpha == 1.2);
  CHECK(a.beta == -0.8);
  Anchor guided = extract_anchor(m, false, {}, AnchorProvenance::kModelGuided);
  CHECK(guided.alpha == 1.2);
  CHECK(guided.beta == 0.0);

  // GIF leaves the all-ones image intact, so both extractions agree
  GifConfig gif{2.0, true};
  Anchor with_gif = extract_anchor(m, true, gif);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    CHECK(with_gif.values[i] == doctest::Approx(a.values[i]).epsilon(1e-10));
  }
}

TEST_CASE("FRA identity: alpha 0 beta 1 with GIF off reproduces the base") {
  ModelConfig cfg = micro_cfg();
  VitModel m = init_model(cfg, 2);
  Anchor a = extract_anchor(m, false);
  a.alpha = 0.0;
  a.beta = 1.0;
  GifConfig gif{2.0, false};
  AdaptedModel adapted = inject_fra(m, a, gif);

  Dataset d = generate_shapes(9, 4, 16, 4);
  std::vector<Tensor> imgs;
  for (const auto& img : d.images) imgs.push_back(img.pixels);
  Tensor batch = pack_batch(imgs);
  ForwardTrace base = forward(m, batch);
  ForwardTrace same = forward(adapted.ref(), batch);
  for (std::size_t i = 0; i < base.logits.size(); ++i) {
    CHECK(same.logits[i] == base.logits[i]);
  }
}

TEST_CASE("beta 0 makes the block-1 output input-independent") {
  ModelConfig cfg = micro_cfg();
  VitModel m = init_model(cfg, 3);
  GifConfig gif{2.0, true};
  Anchor a = extract_anchor(m, true, gif, AnchorProvenance::kModelGuided);
  REQUIRE(a.beta == 0.0);
  AdaptedModel adapted = inject_fra(m, a, gif);

  Dataset d = generate_shapes(10, 6, 16, 4);
  TraceOptions opts;
  opts.block1_attn_out = true;
  std::vector<Tensor> imgs;
  for (const auto& img : d.images) imgs.push_back(img.pixels);
  ForwardTrace t = forward(adapted.ref(), pack_batch(imgs), opts);
  // cosine similarity across any two inputs is exactly 1
  const std::size_t per = t.block1_attn_out.size() / imgs.size();
  for (std::size_t i = 1; i < imgs.size(); ++i) {
    double dot = 0.0, n0 = 0.0, ni = 0.0;
    for (std::size_t j = 0; j < per; ++j) {
      const double u = t.block1_attn_out[j];
      const double v = t.block1_attn_out[i * per + j];
      dot += u * v;
      n0 += u * u;
      ni += v * v;
    }
    CHECK(dot / std::sqrt(n0 * ni) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("anchor container round trip is bit-exact") {
  ModelConfig cfg = micro_cfg();
  VitModel m = init_model(cfg, 4);
  GifConfig gif{2.5, true};
  Anchor a = extract_anchor(m, true, gif, AnchorProvenance::kDataDriven);
  a.optimization_budget = 1234;
  const std::string path =
      (std::filesystem::temp_directory_path() / "radapt_test_anchor.ckpt").string();
  save_anchor(a, gif, path);
  auto [back, gif_back] = load_anchor(path);
  CHECK(back.alpha == a.alpha);
  CHECK(back.beta == a.beta);
  CHECK(back.provenance == a.provenance);
  CHECK(back.source_digest == a.source_digest);
  CHECK(back.optimization_budget == 1234);
  CHECK(gif_back.cutoff == 2.5);
  CHECK(gif_back.enabled);
  REQUIRE(back.values.same_shape(a.values));
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    CHECK(back.values[i] == a.values[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("inject_fra validates the anchor shape") {
  VitModel m = init_model(micro_cfg(), 5);
  Anchor bad;
  bad.values = Tensor({2, 2});
  CHECK_THROWS_AS(inject_fra(m, bad, GifConfig{2.0, true}), std::invalid_argument);
}

TEST_CASE("optimize_anchor runs, logs losses and only changes the anchor") {
  VitModel m = init_model(micro_cfg(), 6);
  const std::string before = params_digest(m);
  Dataset d = generate_shapes(20, 16, 16, 4);
  AnchorBudget budget;
  budget.epochs = 2;
  budget.batch_size = 8;
  AttackConfig attack;
  attack.steps = 1;
  attack.step_size = attack.epsilon;
  GifConfig gif{2.0, true};
  AnchorOptResult r = optimize_anchor(m, d, budget, attack, gif, 0.8, 0.2, 11);
  CHECK(params_digest(m) == before);  // base frozen
  REQUIRE(r.epoch_loss.size() == 3);  // pre-update + 2 epochs
  for (double l : r.epoch_loss) CHECK(std::isfinite(l));
  CHECK(r.anchor.provenance == AnchorProvenance::kDataDriven);
  CHECK(r.anchor.optimization_budget == 16 * 2);
  // the anchor moved
  Anchor init = extract_anchor(m, true, gif, AnchorProvenance::kDataDriven);
  double diff = 0.0;
  for (std::size_t i = 0; i < init.values.size(); ++i) {
    diff = std::max(diff, std::abs(init.values[i] - r.anchor.values[i]));
  }
  CHECK(diff > 0.0);
  // determinism
  AnchorOptResult r2 = optimize_anchor(m, d, budget, attack, gif, 0.8, 0.2, 11);
  for (std::size_t i = 0; i < r.anchor.values.size(); ++i) {
    CHECK(r2.anchor.values[i] == r.anchor.values[i]);
  }
}
