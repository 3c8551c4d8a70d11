#include "stargan/facepipe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stargan/errors.hpp"

namespace stargan {

StageOutput RejectAllScorer::score(const Image&) const { return {}; }

// ---------------------------------------------------------------------------
// template scorer

namespace {

// Extent of the face oval inside its square sprite box.
constexpr double kOvalCx = 0.5, kOvalCy = 0.53, kOvalRx = 0.40, kOvalRy = 0.47;
constexpr double kOvalTop = kOvalCy - kOvalRy;  // 0.06
constexpr double kOvalBottom = kOvalCy + kOvalRy;  // 1.00

}  // namespace

StageOutput TemplateScorer::score(const Image& patch) const {
  StageOutput out;
  const std::size_t w = patch.width, h = patch.height;
  if (w < 3 || h < 3) return out;

  // background = per-channel median of the one-pixel border ring
  std::array<std::vector<int>, 3> ring;
  auto take = [&](std::size_t x, std::size_t y) {
    for (std::size_t c = 0; c < 3; ++c) ring[c].push_back(patch.at(x, y, c));
  };
  for (std::size_t x = 0; x < w; ++x) {
    take(x, 0);
    take(x, h - 1);
  }
  for (std::size_t y = 1; y + 1 < h; ++y) {
    take(0, y);
    take(w - 1, y);
  }
  std::array<double, 3> bg{};
  for (std::size_t c = 0; c < 3; ++c) {
    auto mid = ring[c].begin() + static_cast<std::ptrdiff_t>(ring[c].size() / 2);
    std::nth_element(ring[c].begin(), mid, ring[c].end());
    bg[c] = *mid;
  }

  // foreground mask with each row filled between its outermost hits
  std::vector<char> mask(w * h, 0);
  std::size_t fg = 0;
  std::size_t fx1 = w, fx2 = 0, fy1 = h, fy2 = 0;
  for (std::size_t y = 0; y < h; ++y) {
    std::size_t lo = w, hi = 0;
    for (std::size_t x = 0; x < w; ++x) {
      double d = 0.0;
      for (std::size_t c = 0; c < 3; ++c) d += std::abs(patch.at(x, y, c) - bg[c]);
      if (d > threshold_) {
        lo = std::min(lo, x);
        hi = x + 1;
      }
    }
    if (lo >= hi) continue;
    for (std::size_t x = lo; x < hi; ++x) mask[y * w + x] = 1;
    fg += hi - lo;
    fx1 = std::min(fx1, lo);
    fx2 = std::max(fx2, hi);
    fy1 = std::min(fy1, y);
    fy2 = y + 1;
  }
  const double area = static_cast<double>(w * h);
  if (fg < 0.05 * area || fg == w * h) return out;

  // normalized cross-correlation against the oval occupying the whole patch
  double sm = 0, st = 0, smm = 0, stt = 0, smt = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (x + 0.5) / w, v = (y + 0.5) / h;
      const double du = (u - kOvalCx) / kOvalRx, dv = (v - kOvalCy) / kOvalRy;
      const double t = du * du + dv * dv <= 1.0 ? 1.0 : 0.0;
      const double m = mask[y * w + x];
      sm += m;
      st += t;
      smm += m * m;
      stt += t * t;
      smt += m * t;
    }
  }
  const double cov = smt - sm * st / area;
  const double var_m = smm - sm * sm / area, var_t = stt - st * st / area;
  if (var_m <= 0.0 || var_t <= 0.0) return out;
  out.score = std::clamp(cov / std::sqrt(var_m * var_t), 0.0, 1.0);

  // face box implied by the foreground extent
  const bool left = fx1 == 0, right = fx2 == w, top = fy1 == 0, bottom = fy2 == h;
  std::vector<double> sides;
  if (!left && !right) sides.push_back((fx2 - fx1) / (2.0 * kOvalRx));
  if (!top && !bottom) sides.push_back((fy2 - fy1) / (kOvalBottom - kOvalTop));
  const double side = sides.empty() ? static_cast<double>(std::max(w, h))
                                    : std::accumulate(sides.begin(), sides.end(), 0.0) / sides.size();
  double cx = 0.5 * w;
  if (!left && !right) cx = 0.5 * (fx1 + fx2);
  else if (left && !right) cx = fx2 - kOvalRx * side;
  else if (right && !left) cx = fx1 + kOvalRx * side;
  double y1 = 0.5 * (h - side);
  if (!top) y1 = fy1 - kOvalTop * side;
  else if (!bottom) y1 = fy2 - kOvalBottom * side;
  const double x1 = cx - 0.5 * side;

  out.regression = {x1 / w, y1 / h, (x1 + side - w) / w, (y1 + side - h) / h};
  Landmarks5 lm = canonical_landmarks(1.0);
  for (auto& p : lm) p = {(x1 + p.x * side) / w, (y1 + p.y * side) / h};
  out.landmarks = lm;
  return out;
}

// ---------------------------------------------------------------------------
// boxes

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double overlap_min(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double smaller = std::min(a.area(), b.area());
  return smaller > 0.0 ? std::clamp(iw * ih / smaller, 0.0, 1.0) : 0.0;
}

std::vector<std::size_t> nms_indices(const std::vector<Candidate>& candidates, double threshold, NmsMode mode) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("nms: threshold must lie in (0, 1)");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return candidates[i].score > candidates[j].score; });
  std::vector<char> suppressed(candidates.size(), 0);
  std::vector<std::size_t> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (suppressed[j]) continue;
      const double o = mode == NmsMode::Union ? iou(candidates[i].bbox, candidates[j].bbox)
                                              : overlap_min(candidates[i].bbox, candidates[j].bbox);
      if (o > threshold) suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<Candidate> nms(const std::vector<Candidate>& candidates, double threshold, NmsMode mode) {
  std::vector<Candidate> out;
  for (std::size_t i : nms_indices(candidates, threshold, mode)) out.push_back(candidates[i]);
  return out;
}

std::optional<BBox> apply_regression(const Candidate& c) {
  const double w = c.bbox.width(), h = c.bbox.height();
  BBox b{c.bbox.x1 + c.regression[0] * w, c.bbox.y1 + c.regression[1] * h, c.bbox.x2 + c.regression[2] * w,
         c.bbox.y2 + c.regression[3] * h};
  if (!b.valid() || !std::isfinite(b.x1 + b.y1 + b.x2 + b.y2)) return std::nullopt;
  return b;
}

BBox make_square(const BBox& b) {
  const double side = std::max(b.width(), b.height());
  const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
  return {cx - 0.5 * side, cy - 0.5 * side, cx + 0.5 * side, cy + 0.5 * side};
}

namespace {

Image resample(const Image& image, const BBox& box, std::size_t out_w, std::size_t out_h) {
  Image out(out_w, out_h);
  const double sx = box.width() / static_cast<double>(out_w), sy = box.height() / static_cast<double>(out_h);
  const double max_x = static_cast<double>(image.width - 1), max_y = static_cast<double>(image.height - 1);
  for (std::size_t v = 0; v < out_h; ++v) {
    const double py = std::clamp(box.y1 + (v + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(py);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = py - static_cast<double>(y0);
    for (std::size_t u = 0; u < out_w; ++u) {
      const double px = std::clamp(box.x1 + (u + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(px);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = px - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = image.at(x0, y0, c) + (image.at(x1, y0, c) - image.at(x0, y0, c)) * fx;
        const double bot = image.at(x0, y1, c) + (image.at(x1, y1, c) - image.at(x0, y1, c)) * fx;
        out.at(u, v, c) = static_cast<std::uint8_t>(std::lround(top + (bot - top) * fy));
      }
    }
  }
  return out;
}

}  // namespace

Image crop_resize(const Image& image, const BBox& box, std::size_t side) {
  if (image.width == 0 || image.height == 0) throw DimensionError("crop_resize: empty image");
  return resample(image, box, side, side);
}

// ---------------------------------------------------------------------------
// cascade

void CascadeConfig::validate() const {
  if (!(min_face > 0.0)) throw ContractError("cascade: min_face must be positive");
  if (!(scale_factor > 0.0 && scale_factor < 1.0)) throw ContractError("cascade: scale_factor must lie in (0, 1)");
  if (stride == 0) throw ContractError("cascade: stride must be positive");
  if (!(border_pad >= 0.0 && border_pad <= 1.0)) throw ContractError("cascade: border_pad must lie in [0, 1]");
  for (std::size_t s : stage_sizes) {
    if (s < 3) throw ContractError("cascade: stage sizes must be at least 3");
  }
  for (double t : thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("cascade: thresholds must lie in [0, 1]");
  }
  for (double t : {nms_per_scale, nms_cross_scale, nms_refine, nms_output}) {
    if (!(t > 0.0 && t < 1.0)) throw ContractError("cascade: NMS thresholds must lie in (0, 1)");
  }
}

namespace {

std::vector<Candidate> propose(const Image& image, const StageScorer& scorer, const CascadeConfig& cfg) {
  const std::size_t cell = cfg.stage_sizes[0];
  const double min_side = static_cast<double>(std::min(image.width, image.height));
  std::vector<Candidate> all;
  for (double s = static_cast<double>(cell) / cfg.min_face; min_side * s >= static_cast<double>(cell);
       s *= cfg.scale_factor) {
    const auto ws = static_cast<std::size_t>(std::ceil(image.width * s));
    const auto hs = static_cast<std::size_t>(std::ceil(image.height * s));
    if (ws < cell || hs < cell) break;
    const Image scaled = resample(
        image, {0.0, 0.0, static_cast<double>(image.width), static_cast<double>(image.height)}, ws, hs);
    const double rx = static_cast<double>(image.width) / ws, ry = static_cast<double>(image.height) / hs;
    std::vector<Candidate> level;
    Image patch(cell, cell);
    for (std::size_t y = 0; y + cell <= hs; y += cfg.stride) {
      for (std::size_t x = 0; x + cell <= ws; x += cfg.stride) {
        for (std::size_t r = 0; r < cell; ++r) {
          std::copy_n(&scaled.rgb[((y + r) * ws + x) * 3], cell * 3, &patch.rgb[r * cell * 3]);
        }
        StageOutput o = scorer.score(patch);
        if (o.score < cfg.thresholds[0]) continue;
        Candidate c;
        c.bbox = {x * rx, y * ry, (x + cell) * rx, (y + cell) * ry};
        c.score = o.score;
        c.regression = o.regression;
        level.push_back(c);
      }
    }
    for (auto& c : nms(level, cfg.nms_per_scale, NmsMode::Union)) all.push_back(std::move(c));
  }
  return nms(all, cfg.nms_cross_scale, NmsMode::Union);
}

}  // namespace

std::vector<Detection> cascade_detect(const Image& image, const StageScorer& proposal, const StageScorer& refine,
                                      const StageScorer& output, const CascadeConfig& config, CascadeStats* stats) {
  config.validate();
  CascadeStats local;
  CascadeStats& st = stats ? *stats : local;
  st = {};
  std::vector<Detection> detections;
  if (image.width == 0 || static_cast<double>(std::min(image.width, image.height)) < config.min_face) {
    return detections;
  }
  if (config.border_pad > 0.0) {
    const auto margin = static_cast<std::size_t>(
        std::lround(config.border_pad * static_cast<double>(std::min(image.width, image.height))));
    CascadeConfig inner = config;
    inner.border_pad = 0.0;
    detections = cascade_detect(pad_with_border_colour(image, margin), proposal, refine, output, inner, &st);
    const double m = static_cast<double>(margin);
    for (auto& d : detections) {
      d.box = {d.box.x1 - m, d.box.y1 - m, d.box.x2 - m, d.box.y2 - m};
      for (auto& p : d.landmarks) p = {p.x - m, p.y - m};
    }
    return detections;
  }

  auto calibrate = [&](std::vector<Candidate>& cands) {
    std::vector<Candidate> kept;
    for (auto& c : cands) {
      auto b = apply_regression(c);
      if (!b) {
        ++st.degenerate_dropped;
        continue;
      }
      c.bbox = make_square(*b);
      c.regression = {};
      kept.push_back(std::move(c));
    }
    cands = std::move(kept);
  };

  // stage 1: dense proposals over the pyramid
  std::vector<Candidate> cands = propose(image, proposal, config);
  calibrate(cands);
  st.proposals = cands.size();

  // stage 2: refine
  std::vector<Candidate> refined;
  for (const auto& c : cands) {
    StageOutput o = refine.score(crop_resize(image, c.bbox, config.stage_sizes[1]));
    if (o.score < config.thresholds[1]) continue;
    refined.push_back({c.bbox, o.score, o.regression, std::nullopt});
  }
  refined = nms(refined, config.nms_refine, NmsMode::Union);
  calibrate(refined);
  st.refined = refined.size();

  // stage 3: output boxes and landmarks
  std::vector<Candidate> finals;
  for (const auto& c : refined) {
    StageOutput o = output.score(crop_resize(image, c.bbox, config.stage_sizes[2]));
    if (o.score < config.thresholds[2]) continue;
    Candidate f{c.bbox, o.score, o.regression, std::nullopt};
    if (o.landmarks) {
      Landmarks5 lm = *o.landmarks;
      for (auto& p : lm) p = {c.bbox.x1 + p.x * c.bbox.width(), c.bbox.y1 + p.y * c.bbox.height()};
      f.landmarks = lm;
    }
    auto b = apply_regression(f);
    if (!b) {
      ++st.degenerate_dropped;
      continue;
    }
    f.bbox = *b;
    finals.push_back(std::move(f));
  }
  for (auto& f : nms(finals, config.nms_output, NmsMode::Min)) {
    Detection d;
    d.box = f.bbox;
    d.score = f.score;
    if (f.landmarks) {
      d.landmarks = *f.landmarks;
    } else {
      // no landmark estimate: fall back to the canonical layout inside the box
      d.landmarks = canonical_landmarks(1.0);
      for (auto& p : d.landmarks) p = {f.bbox.x1 + p.x * f.bbox.width(), f.bbox.y1 + p.y * f.bbox.height()};
    }
    detections.push_back(d);
  }
  return detections;
}

// ---------------------------------------------------------------------------
// alignment

double Similarity::scale() const { return std::hypot(a, b); }
double Similarity::angle() const { return std::atan2(b, a); }

Similarity Similarity::inverse() const {
  const double n = a * a + b * b;
  if (!(n > 0.0)) throw DomainError("similarity: zero scale has no inverse");
  Similarity inv;
  inv.a = a / n;
  inv.b = -b / n;
  inv.tx = -(inv.a * tx - inv.b * ty);
  inv.ty = -(inv.b * tx + inv.a * ty);
  return inv;
}

Similarity Similarity::from(double scale, double angle, double tx, double ty) {
  return {scale * std::cos(angle), scale * std::sin(angle), tx, ty};
}

Similarity estimate_similarity(const Landmarks5& from, const Landmarks5& to) {
  Point2 mf{}, mt{};
  for (std::size_t i = 0; i < 5; ++i) {
    if (!std::isfinite(from[i].x) || !std::isfinite(from[i].y) || !std::isfinite(to[i].x) || !std::isfinite(to[i].y)) {
      throw DomainError("estimate_similarity: non-finite landmark");
    }
    mf.x += from[i].x / 5.0;
    mf.y += from[i].y / 5.0;
    mt.x += to[i].x / 5.0;
    mt.y += to[i].y / 5.0;
  }
  // M = sum t_c f_c^T; the rotation is the polar factor of M restricted to
  // proper rotations, which in 2-D reduces to the angle of (p, q) below.
  double m11 = 0, m12 = 0, m21 = 0, m22 = 0, var_f = 0, spread = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double fx = from[i].x - mf.x, fy = from[i].y - mf.y;
    const double tx = to[i].x - mt.x, ty = to[i].y - mt.y;
    m11 += tx * fx;
    m12 += tx * fy;
    m21 += ty * fx;
    m22 += ty * fy;
    var_f += fx * fx + fy * fy;
    spread += std::abs(from[i].x) + std::abs(from[i].y);
  }
  const double p = m11 + m22, q = m21 - m12;
  if (var_f <= 1e-24 * (1.0 + spread * spread) || std::hypot(p, q) == 0.0) {
    throw DomainError("estimate_similarity: landmarks are degenerate");
  }
  Similarity s;
  s.a = p / var_f;
  s.b = q / var_f;
  s.tx = mt.x - (s.a * mf.x - s.b * mf.y);
  s.ty = mt.y - (s.b * mf.x + s.a * mf.y);
  return s;
}

Image warp_similarity(const Image& image, const Similarity& to_output, std::size_t out_size) {
  const Similarity back = to_output.inverse();
  Image out(out_size, out_size);
  const auto w = static_cast<long>(image.width), h = static_cast<long>(image.height);
  for (std::size_t v = 0; v < out_size; ++v) {
    for (std::size_t u = 0; u < out_size; ++u) {
      const Point2 src = back.apply({u + 0.5, v + 0.5});
      const double px = src.x - 0.5, py = src.y - 0.5;
      const double fx0 = std::floor(px), fy0 = std::floor(py);
      const auto x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      const double fx = px - fx0, fy = py - fy0;
      for (std::size_t c = 0; c < 3; ++c) {
        auto tap = [&](long x, long y) -> double {
          return x >= 0 && y >= 0 && x < w && y < h
                     ? image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c)
                     : 0.0;
        };
        const double top = tap(x0, y0) + (tap(x0 + 1, y0) - tap(x0, y0)) * fx;
        const double bot = tap(x0, y0 + 1) + (tap(x0 + 1, y0 + 1) - tap(x0, y0 + 1)) * fx;
        out.at(u, v, c) = static_cast<std::uint8_t>(std::clamp(std::lround(top + (bot - top) * fy), 0L, 255L));
      }
    }
  }
  return out;
}

AlignedFace align_face(const Image& image, const Landmarks5& landmarks, const Landmarks5& target,
                       std::size_t out_size) {
  if (out_size == 0) throw ContractError("align_face: output size must be positive");
  AlignedFace face;
  face.transform = estimate_similarity(landmarks, target);
  face.image = warp_similarity(image, face.transform, out_size);
  return face;
}

Image pad_with_border_colour(const Image& image, std::size_t margin) {
  if (image.width == 0 || image.height == 0) throw DimensionError("pad: empty image");
  std::array<std::vector<int>, 3> ring;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      if (y != 0 && x != 0 && y + 1 != image.height && x + 1 != image.width) continue;
      for (std::size_t c = 0; c < 3; ++c) ring[c].push_back(image.at(x, y, c));
    }
  }
  std::array<std::uint8_t, 3> fill{};
  for (std::size_t c = 0; c < 3; ++c) {
    auto mid = ring[c].begin() + static_cast<std::ptrdiff_t>(ring[c].size() / 2);
    std::nth_element(ring[c].begin(), mid, ring[c].end());
    fill[c] = static_cast<std::uint8_t>(*mid);
  }
  Image out(image.width + 2 * margin, image.height + 2 * margin);
  for (std::size_t p = 0; p < out.width * out.height; ++p) std::copy(fill.begin(), fill.end(), out.rgb.begin() + p * 3);
  for (std::size_t y = 0; y < image.height; ++y) {
    std::copy_n(&image.rgb[y * image.width * 3], image.width * 3, &out.rgb[((y + margin) * out.width + margin) * 3]);
  }
  return out;
}

double landmark_rmse(const Landmarks5& a, const Landmarks5& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double dx = a[i].x - b[i].x, dy = a[i].y - b[i].y;
    s += dx * dx + dy * dy;
  }
  return std::sqrt(s / 5.0);
}

}  // namespace stargan
