#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "nms_reference.hpp"
#include "stargan/dataset.hpp"
#include "stargan/errors.hpp"
#include "stargan/facepipe.hpp"

using namespace stargan;
using stargan::testing::brute_force_nms;

namespace {

BBox random_box(std::mt19937_64& rng, double extent = 100.0) {
  std::uniform_real_distribution<double> pos(0.0, extent), len(1.0, extent / 3.0);
  const double x = pos(rng), y = pos(rng);
  return {x, y, x + len(rng), y + len(rng)};
}

std::vector<Candidate> random_candidates(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(1, 20);
  std::uniform_int_distribution<int> coarse(0, 9);
  std::vector<Candidate> c(static_cast<std::size_t>(count(rng)));
  for (auto& x : c) {
    x.bbox = random_box(rng, 60.0);
    x.score = coarse(rng) / 10.0;  // frequent ties
  }
  return c;
}

Image backdrop(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> colour) {
  Image img(w, h);
  for (std::size_t p = 0; p < w * h; ++p) std::copy(colour.begin(), colour.end(), img.rgb.begin() + p * 3);
  return img;
}

}  // namespace

TEST_CASE("iou anchors and properties") {
  const BBox a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, {10, 0, 20, 10}) == 0.0);
  // direct area oracle: intersection 9 * 9, union 100 + 100 - 81
  CHECK(std::abs(iou(a, {1, 1, 11, 11}) - 81.0 / 119.0) < 1e-12);
  CHECK(std::abs(iou(a, {1, 1, 11, 11}) - 0.6806) < 1e-4);
  CHECK(overlap_min(a, {2, 2, 5, 5}) == 1.0);

  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    BBox p = random_box(rng), q = random_box(rng);
    const double v = iou(p, q);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == iou(q, p));
    CHECK(iou(p, p) == doctest::Approx(1.0));
  }
}

TEST_CASE("nms small cases") {
  std::vector<Candidate> one{{BBox{0, 0, 5, 5}, 0.3, {}, std::nullopt}};
  CHECK(nms(one, 0.5, NmsMode::Union).size() == 1);
  std::vector<Candidate> twins{{BBox{0, 0, 10, 10}, 0.8, {}, std::nullopt}, {BBox{0, 0, 10, 10}, 0.9, {}, std::nullopt}};
  auto kept = nms(twins, 0.5, NmsMode::Union);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);
  // equal scores: the earlier index wins
  twins[0].score = 0.9;
  CHECK(nms_indices(twins, 0.5, NmsMode::Union) == std::vector<std::size_t>{0});
  CHECK(nms({}, 0.5, NmsMode::Min).empty());
  CHECK_THROWS_AS(nms(twins, 1.0, NmsMode::Union), ContractError);
}

TEST_CASE("nms matches the exhaustive reference on 1000 random sets") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> thr(0.05, 0.95);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto c = random_candidates(rng);
    const double t = thr(rng);
    const NmsMode mode = trial % 2 ? NmsMode::Union : NmsMode::Min;
    if (nms_indices(c, t, mode) != brute_force_nms(c, t, mode)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("nms output is an ordered, idempotent subset") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto c = random_candidates(rng);
    for (NmsMode mode : {NmsMode::Union, NmsMode::Min}) {
      auto idx = nms_indices(c, 0.4, mode);
      for (std::size_t k = 1; k < idx.size(); ++k) {
        CHECK((c[idx[k - 1]].score > c[idx[k]].score ||
               (c[idx[k - 1]].score == c[idx[k]].score && idx[k - 1] < idx[k])));
      }
      auto once = nms(c, 0.4, mode);
      auto twice = nms(once, 0.4, mode);
      REQUIRE(once.size() == twice.size());
      for (std::size_t k = 0; k < once.size(); ++k) CHECK(once[k].bbox == twice[k].bbox);
    }
  }
}

TEST_CASE("bounding box regression") {
  Candidate c{BBox{0, 0, 10, 10}, 0.9, {}, std::nullopt};
  CHECK(*apply_regression(c) == c.bbox);
  c.regression = {0.1, 0.1, -0.1, -0.1};
  const BBox r = *apply_regression(c);
  CHECK(r.x1 == doctest::Approx(1.0));
  CHECK(r.y1 == doctest::Approx(1.0));
  CHECK(r.x2 == doctest::Approx(9.0));
  CHECK(r.y2 == doctest::Approx(9.0));
  c.regression = {0.6, 0.0, -0.6, 0.0};
  CHECK_FALSE(apply_regression(c).has_value());

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> off(-0.3, 0.3);
  for (int i = 0; i < 500; ++i) {
    Candidate k{random_box(rng), 0.5, {off(rng), off(rng), off(rng), off(rng)}, std::nullopt};
    const double w = k.bbox.x2 - k.bbox.x1, h = k.bbox.y2 - k.bbox.y1;
    auto b = apply_regression(k);
    REQUIRE(b.has_value());
    CHECK(std::abs(b->x1 - (k.bbox.x1 + k.regression[0] * w)) < 1e-12);
    CHECK(std::abs(b->y1 - (k.bbox.y1 + k.regression[1] * h)) < 1e-12);
    CHECK(std::abs(b->x2 - (k.bbox.x2 + k.regression[2] * w)) < 1e-12);
    CHECK(std::abs(b->y2 - (k.bbox.y2 + k.regression[3] * h)) < 1e-12);
  }
}

TEST_CASE("cascade on blank and reject-all inputs") {
  TemplateScorer tmpl;
  RejectAllScorer reject;
  Image blank = backdrop(120, 90, {80, 90, 100});
  CHECK(cascade_detect(blank, tmpl, tmpl, tmpl).empty());

  std::mt19937_64 rng(5);
  SpriteIdentity id = random_identity(rng);
  Image scene = backdrop(120, 90, id.background);
  draw_sprite(scene, {30, 20, 80, 70}, id, ExpressionLabel::Happy);
  CHECK(cascade_detect(scene, reject, reject, reject).empty());
  CHECK(cascade_detect(Image(10, 10), tmpl, tmpl, tmpl).empty());
}

TEST_CASE("cascade finds a single sprite") {
  TemplateScorer tmpl;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> size(28.0, 60.0);
  for (int trial = 0; trial < 21; ++trial) {
    SpriteIdentity id = random_identity(rng);
    Image scene = backdrop(128, 96, id.background);
    const double s = size(rng);
    std::uniform_real_distribution<double> px(2.0, 126.0 - s), py(2.0, 94.0 - s);
    const BBox gt{px(rng), py(rng), 0, 0};
    const BBox box{gt.x1, gt.y1, gt.x1 + s, gt.y1 + s};
    draw_sprite(scene, box, id, expression_from_index(trial % 7));
    auto dets = cascade_detect(scene, tmpl, tmpl, tmpl);
    REQUIRE(dets.size() == 1);
    CHECK(iou(dets[0].box, box) >= 0.5);
    const double cx = 0.5 * (box.x1 + box.x2), cy = 0.5 * (box.y1 + box.y2);
    CHECK((dets[0].box.x1 < cx && cx < dets[0].box.x2 && dets[0].box.y1 < cy && cy < dets[0].box.y2));
    CHECK(dets[0].score >= 0.7);
  }
}

TEST_CASE("cascade separates two sprites and is deterministic") {
  TemplateScorer tmpl;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 7; ++trial) {
    SpriteIdentity a = random_identity(rng), b = random_identity(rng);
    b.background = a.background;
    Image scene = backdrop(160, 80, a.background);
    const BBox ba{10, 12, 60, 62}, bb{95, 20, 145, 70};
    draw_sprite(scene, ba, a, expression_from_index(trial));
    draw_sprite(scene, bb, b, expression_from_index((trial + 3) % 7));
    auto dets = cascade_detect(scene, tmpl, tmpl, tmpl);
    REQUIRE(dets.size() == 2);
    const bool matched = (iou(dets[0].box, ba) >= 0.5 && iou(dets[1].box, bb) >= 0.5) ||
                         (iou(dets[0].box, bb) >= 0.5 && iou(dets[1].box, ba) >= 0.5);
    CHECK(matched);
    auto again = cascade_detect(scene, tmpl, tmpl, tmpl);
    REQUIRE(again.size() == dets.size());
    for (std::size_t k = 0; k < dets.size(); ++k) {
      CHECK(again[k].box == dets[k].box);
      CHECK(again[k].score == dets[k].score);
    }
  }
}

TEST_CASE("full-frame sprites are found with border padding") {
  TemplateScorer tmpl;
  CascadeConfig cfg;
  cfg.border_pad = 0.25;
  std::mt19937_64 rng(8);
  for (std::size_t side : {32, 64}) {
    for (int trial = 0; trial < 14; ++trial) {
      SpriteIdentity id = random_identity(rng);
      Image frame = backdrop(side, side, id.background);
      const double s = static_cast<double>(side);
      const BBox box{0.02 * s, 0.03 * s, 1.0 * s, 1.01 * s};
      draw_sprite(frame, box, id, expression_from_index(trial % 7));
      auto dets = cascade_detect(frame, tmpl, tmpl, tmpl, cfg);
      REQUIRE(dets.size() == 1);
      CHECK(iou(dets[0].box, box) >= 0.5);
    }
  }
}

TEST_CASE("similarity estimation anchors") {
  const Landmarks5 t = canonical_template();
  Similarity same = estimate_similarity(t, t);
  CHECK(landmark_rmse(t, t) == 0.0);
  Landmarks5 mapped;
  for (std::size_t i = 0; i < 5; ++i) mapped[i] = same.apply(t[i]);
  CHECK(landmark_rmse(mapped, t) < 1e-9);
  CHECK(std::abs(same.scale() - 1.0) < 1e-12);

  // template rotated by 90 degrees and scaled 2x
  const Similarity fwd = Similarity::from(2.0, std::numbers::pi / 2.0, 3.0, -4.0);
  Landmarks5 moved;
  for (std::size_t i = 0; i < 5; ++i) moved[i] = fwd.apply(t[i]);
  Similarity back = estimate_similarity(moved, t);
  for (std::size_t i = 0; i < 5; ++i) mapped[i] = back.apply(moved[i]);
  CHECK(landmark_rmse(mapped, t) < 1e-6);
  CHECK(std::abs(back.scale() - 0.5) < 1e-12);
  CHECK(std::abs(back.angle() + std::numbers::pi / 2.0) < 1e-12);

  // pure translation
  Landmarks5 shifted = t;
  for (auto& p : shifted) p = {p.x + 5.0, p.y + 3.0};
  Similarity tr = estimate_similarity(t, shifted);
  CHECK(tr.tx == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(tr.ty == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(tr.a == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(tr.b) < 1e-14);

  Landmarks5 collapsed;
  collapsed.fill({4.0, 4.0});
  CHECK_THROWS_AS(estimate_similarity(collapsed, t), DomainError);
}

TEST_CASE("random similarity transforms are recovered") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> rot(-std::numbers::pi / 4.0, std::numbers::pi / 4.0), scale(0.5, 2.0),
      shift(-10.0, 10.0);
  const Landmarks5 t = canonical_template();
  for (int trial = 0; trial < 200; ++trial) {
    const Similarity fwd = Similarity::from(scale(rng), rot(rng), shift(rng), shift(rng));
    Landmarks5 moved;
    for (std::size_t i = 0; i < 5; ++i) moved[i] = fwd.apply(t[i]);
    const Similarity back = estimate_similarity(moved, t);
    Landmarks5 mapped;
    for (std::size_t i = 0; i < 5; ++i) mapped[i] = back.apply(moved[i]);
    CHECK(landmark_rmse(mapped, t) < 1e-6);
    const Similarity expected = fwd.inverse();
    CHECK(std::abs(back.scale() / expected.scale() - 1.0) < 1e-6);
    CHECK(std::abs(back.angle() - expected.angle()) < 1e-6);
  }
}

TEST_CASE("align_face undoes a known warp of a rendered face") {
  std::mt19937_64 rng(10);
  SpriteIdentity id = random_identity(rng);
  Image canon = backdrop(64, 64, id.background);
  auto geo = draw_sprite(canon, {0, 0, 64, 64}, id, ExpressionLabel::Neutral);
  const Similarity fwd = Similarity::from(1.5, 0.3, 20.0, 8.0);
  Image warped = warp_similarity(canon, fwd, 140);
  Landmarks5 moved;
  for (std::size_t i = 0; i < 5; ++i) moved[i] = fwd.apply(geo.landmarks[i]);
  AlignedFace face = align_face(warped, moved, geo.landmarks, 64);
  CHECK(face.image.width == 64);
  CHECK(std::abs(face.transform.scale() / (1.0 / 1.5) - 1.0) < 1e-9);
  CHECK(std::abs(face.transform.angle() + 0.3) < 1e-9);
  // resampled twice, so compare loosely away from the border
  double diff = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 8; y < 56; ++y) {
    for (std::size_t x = 8; x < 56; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        diff += std::abs(face.image.at(x, y, c) - canon.at(x, y, c));
        ++n;
      }
    }
  }
  CHECK(diff / static_cast<double>(n) < 12.0);
}
