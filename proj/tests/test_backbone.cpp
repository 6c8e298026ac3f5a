#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pgr/backbone.hpp"
#include "testutil.hpp"

using namespace pgr;
using testutil::random_tensor;

namespace {

RoiInstance instance(real r, real cx, real cy, int h, int w, real rho, int index) {
  RoiPrior p;
  p.r = r;
  p.cx = cx;
  p.cy = cy;
  return make_roi_instance(p, h, w, 0.5, rho, index);
}

}  // namespace

TEST_CASE("window_bbox worked examples") {
  // r=1 covers the full layer
  WindowBBox full = window_bbox(1.0, 0.5, 0.5, 32, 32);
  CHECK(full.side == 32);
  CHECK(full.x0 == 0);
  CHECK(full.y0 == 0);

  // r=0.25 at H=32 centered -> 8x8 at rows/cols 12..19
  WindowBBox mid = window_bbox(0.25, 0.5, 0.5, 32, 32);
  CHECK(mid.side == 8);
  CHECK(mid.x0 == 12);
  CHECK(mid.y0 == 12);

  // near a corner with r=0.5: side preserved, shifted inward
  WindowBBox corner = window_bbox(0.5, 0.03, 0.05, 32, 32);
  CHECK(corner.side == 16);
  CHECK(corner.x0 == 0);
  CHECK(corner.y0 == 0);

  CHECK_THROWS_AS(window_bbox(0.02, 0.5, 0.5, 32, 32), std::domain_error);
}

TEST_CASE("window extraction is idempotent on a clamped bbox") {
  WindowBBox a = window_bbox(0.5, 0.02, 0.5, 64, 64);
  // re-extracting using the clamped window's own center reproduces the bbox
  real cx = (a.x0 + a.side / 2 + 0.5) / 64.0;
  real cy = (a.y0 + a.side / 2 + 0.5) / 64.0;
  WindowBBox b = window_bbox(0.5, cx, cy, 64, 64);
  CHECK(a.side == b.side);
  CHECK(a.x0 == b.x0);
  CHECK(a.y0 == b.y0);
}

TEST_CASE("extract_window flattens the raster with channels as embedding") {
  Rng rng(3);
  Tensor f = random_tensor({3, 16, 16}, rng);
  RoiInstance roi = instance(0.5, 0.5, 0.5, 16, 16, 1.0, 0);
  RoiWindow w = extract_window(f, roi, 2);
  CHECK(w.bbox.side == 8);
  CHECK(w.sequence.shape() == Shape{64, 3});
  // sequence row t = window pixel (t / side, t % side)
  for (int t : {0, 7, 33, 63}) {
    int wy = t / 8, wx = t % 8;
    for (int c = 0; c < 3; ++c)
      CHECK(w.sequence.data()[static_cast<std::size_t>(t) * 3 + c] ==
            f.data()[(static_cast<std::size_t>(c) * 16 + w.bbox.y0 + wy) * 16 + w.bbox.x0 + wx]);
  }
}

TEST_CASE("run_window: 1x1-equivalent minimal window and shape contract") {
  Rng rng(5);
  RetentionBlock block = make_retention_block(4, 2, rng);
  Tensor f = random_tensor({4, 12, 12}, rng);
  for (real r : {0.2, 0.5, 1.0}) {
    RoiInstance roi = instance(r, 0.5, 0.5, 12, 12, 1.0, 0);
    RoiWindow w = extract_window(f, roi, 1);
    Tensor out = run_window(w, block, 4);
    CHECK(out.shape() == Shape{4, w.bbox.side, w.bbox.side});
  }
}

TEST_CASE("gradient reaches nearly all window positions") {
  Rng rng(7);
  RetentionBlock block = make_retention_block(4, 1, rng);
  Tensor f = random_tensor({4, 12, 12}, rng, 1.0, true);
  RoiInstance roi = instance(0.5, 0.5, 0.5, 12, 12, 1.0, 0);

  Tape tape;
  {
    Tape::Scope scope(tape);
    RoiWindow w = extract_window(f, roi, 1);
    Tensor out = run_window(w, block, 4);
    Tensor weights = random_tensor({4, w.bbox.side, w.bbox.side}, rng);
    backward(sum_all(mul(out, weights)));
  }
  auto g = f.grad_view();
  RoiWindow w = extract_window(f, roi, 1);
  int nonzero = 0, total = 0;
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < w.bbox.side; ++y)
      for (int x = 0; x < w.bbox.side; ++x) {
        ++total;
        if (g[(static_cast<std::size_t>(c) * 12 + w.bbox.y0 + y) * 12 + w.bbox.x0 + x] != 0) ++nonzero;
      }
  CHECK(nonzero >= total * 95 / 100);
}

TEST_CASE("fusion weights") {
  auto w = fusion_weights({0.9, 0.1}, 5.0);
  CHECK(w[0] == doctest::Approx(std::exp(4.5) / (std::exp(4.5) + std::exp(0.5))).epsilon(1e-9));
  CHECK(w[0] == doctest::Approx(0.9820137900).epsilon(1e-6));

  auto eq = fusion_weights({0.4, 0.4}, 5.0);
  CHECK(eq[0] == doctest::Approx(0.5));
  CHECK(eq[1] == doctest::Approx(0.5));

  // probability vector for any rho и gamma
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<real> rho(static_cast<std::size_t>(rng.uniform_int(1, 6)));
    for (real& v : rho) v = rng.uniform(-2, 2);
    auto probs = fusion_weights(rho, rng.uniform(0.5, 10.0));
    real total = 0;
    for (real p : probs) {
      CHECK(p >= 0);
      total += p;
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("fuse_windows: single candidate covers its bbox, base elsewhere") {
  Rng rng(11);
  Tensor base = random_tensor({2, 10, 10}, rng);
  WindowResult wr;
  wr.bbox = WindowBBox{2, 3, 4};
  wr.output = random_tensor({2, 4, 4}, rng);
  Tensor rho = Tensor::from({1}, {0.7});
  Tensor fused = fuse_windows({wr}, rho, 5.0, base);

  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 10; ++x) {
        real got = fused.data()[(static_cast<std::size_t>(c) * 10 + y) * 10 + x];
        bool inside = y >= 2 && y < 6 && x >= 3 && x < 7;
        if (inside)
          CHECK(got == doctest::Approx(wr.output.data()[(static_cast<std::size_t>(c) * 4 + y - 2) * 4 + x - 3]).epsilon(1e-12));
        else
          CHECK(got == base.data()[(static_cast<std::size_t>(c) * 10 + y) * 10 + x]);
      }
}

TEST_CASE("fuse_windows: scatter conservation at single-coverage pixels") {
  Rng rng(13);
  Tensor base = random_tensor({1, 12, 12}, rng);
  WindowResult a, b;
  a.bbox = WindowBBox{0, 0, 6};
  a.output = random_tensor({1, 6, 6}, rng);
  b.bbox = WindowBBox{4, 4, 6};
  b.output = random_tensor({1, 6, 6}, rng);
  Tensor rho = Tensor::from({2}, {0.9, 0.2});
  Tensor fused = fuse_windows({a, b}, rho, 5.0, base);

  auto w = fusion_weights({0.9, 0.2}, 5.0);
  // single coverage: window a only, e.g. (1,1)
  CHECK(fused.data()[1 * 12 + 1] == doctest::Approx(a.output.data()[1 * 6 + 1]).epsilon(1e-9));
  // single coverage: window b only, e.g. (9,9)
  CHECK(fused.data()[9 * 12 + 9] == doctest::Approx(b.output.data()[5 * 6 + 5]).epsilon(1e-9));
  // overlap, e.g. (5,5): omega-weighted average
  real expect = (w[0] * a.output.data()[5 * 6 + 5] + w[1] * b.output.data()[1 * 6 + 1]) / (w[0] + w[1]);
  CHECK(fused.data()[5 * 12 + 5] == doctest::Approx(expect).epsilon(1e-9));
  // uncovered, e.g. (11,0)
  CHECK(fused.data()[11 * 12 + 0] == base.data()[11 * 12 + 0]);
}

TEST_CASE("fuse_windows: candidate permutation invariance") {
  Rng rng(17);
  Tensor base = random_tensor({2, 12, 12}, rng);
  WindowResult a, b, c;
  a.bbox = WindowBBox{0, 0, 5};
  a.output = random_tensor({2, 5, 5}, rng);
  b.bbox = WindowBBox{3, 3, 5};
  b.output = random_tensor({2, 5, 5}, rng);
  c.bbox = WindowBBox{6, 2, 5};
  c.output = random_tensor({2, 5, 5}, rng);

  Tensor rho_abc = Tensor::from({3}, {0.8, 0.3, 0.5});
  Tensor rho_cab = Tensor::from({3}, {0.5, 0.8, 0.3});
  Tensor f1 = fuse_windows({a, b, c}, rho_abc, 4.0, base);
  Tensor f2 = fuse_windows({c, a, b}, rho_cab, 4.0, base);
  for (int i = 0; i < f1.numel(); ++i)
    CHECK(std::abs(f1.data()[static_cast<std::size_t>(i)] - f2.data()[static_cast<std::size_t>(i)]) <= 1e-6);
}

TEST_CASE("encode_layer: locked output is exactly the fused window path") {
  Rng rng(19);
  RetentionBlock block = make_retention_block(4, 2, rng);
  Tensor f = random_tensor({4, 16, 16}, rng);
  RoiInstance roi = instance(0.5, 0.5, 0.5, 16, 16, 0.9, 0);
  Tensor rho = Tensor::from({1}, {0.9});
  Tensor guidance = decayed_unit_template(roi, 16, 16, 0.25 * roi.radius);

  EncodeLayerStats stats{};
  Tensor locked_out = encode_layer(f, {roi}, rho, block, guidance, 1.0, 5.0, true, &roi, &stats);
  CHECK(stats.hard_mask_ops == 1);

  // reproduce F_hat independently
  RoiWindow w = extract_window(f, roi, 1);
  WindowResult wr;
  wr.bbox = w.bbox;
  wr.output = run_window(w, block, 4);
  Tensor f_hat = fuse_windows({wr}, rho, 5.0, f);
  REQUIRE(locked_out.shape() == f_hat.shape());
  for (int i = 0; i < f_hat.numel(); ++i)
    CHECK(locked_out.data()[static_cast<std::size_t>(i)] == f_hat.data()[static_cast<std::size_t>(i)]);
}

TEST_CASE("encode_layer: lambda=0 with zeroed block projections keeps pass-through structure") {
  Rng rng(23);
  RetentionBlock block = make_retention_block(4, 2, rng);
  for (auto& v : block.retention.w_o.data()) v = 0;
  for (auto& v : block.ffn_w2.data()) v = 0;
  for (auto& v : block.ffn_b2.data()) v = 0;

  Tensor f = random_tensor({4, 16, 16}, rng);
  RoiInstance roi = instance(0.5, 0.5, 0.5, 16, 16, 1.0, 0);
  Tensor rho = Tensor::from({1}, {1.0});
  Tensor guidance = Tensor::zeros({16, 16});

  Tensor out = encode_layer(f, {roi}, rho, block, guidance, 0.0, 5.0, false, nullptr);
  // F_hat == F (block passes through, fusion conserves), F_tilde == F -> out = 2F
  for (int i = 0; i < f.numel(); ++i)
    CHECK(out.data()[static_cast<std::size_t>(i)] == doctest::Approx(2 * f.data()[static_cast<std::size_t>(i)]).epsilon(1e-9));
}

TEST_CASE("encode_layer gradcheck on 16x16") {
  Rng rng(29);
  RetentionBlock block = make_retention_block(4, 2, rng);
  Tensor f = random_tensor({4, 16, 16}, rng, 1.0, true);
  RoiInstance r1 = instance(0.4, 0.35, 0.4, 16, 16, 0.7, 0);
  RoiInstance r2 = instance(0.3, 0.65, 0.6, 16, 16, 0.3, 1);
  Tensor rho = Tensor::from({2}, {0.7, 0.3}, true);
  Tensor guidance = decayed_unit_template(r1, 16, 16, 0.25 * r1.radius);
  Tensor weights = random_tensor({4, 16, 16}, rng);

  auto eval = [&]() {
    Tensor out = encode_layer(f, {r1, r2}, rho, block, guidance, 0.8, 5.0, false, nullptr);
    return sum_all(mul(out, weights));
  };
  const pgr::real h = 1e-5;
  CHECK(testutil::gradcheck_leaf(f, eval, h) < 1e-4);
  CHECK(testutil::gradcheck_leaf(rho, eval, h) < 1e-4);
  CHECK(testutil::gradcheck_leaf(block.retention.w_v, eval, h) < 1e-4);
}
