#include "stargan/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "stargan/errors.hpp"

namespace stargan {

namespace {

constexpr std::array<std::string_view, kExpressionCount> kNames = {"angry",   "disgust", "fear",     "happy",
                                                                   "neutral", "sad",     "surprised"};

}  // namespace

const std::array<ExpressionLabel, kExpressionCount>& all_expressions() {
  static const std::array<ExpressionLabel, kExpressionCount> labels = {
      ExpressionLabel::Angry,   ExpressionLabel::Disgust, ExpressionLabel::Fear,     ExpressionLabel::Happy,
      ExpressionLabel::Neutral, ExpressionLabel::Sad,     ExpressionLabel::Surprised};
  return labels;
}

std::string_view expression_name(ExpressionLabel label) { return kNames.at(static_cast<std::size_t>(label)); }

ExpressionLabel parse_expression(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<ExpressionLabel>(i);
  }
  throw ValidationError("unknown expression '" + std::string(name) + "'");
}

ExpressionLabel expression_from_index(int index) {
  if (index < 0 || index >= static_cast<int>(kExpressionCount)) {
    throw ContractError("domain index out of range: " + std::to_string(index));
  }
  return static_cast<ExpressionLabel>(index);
}

ValenceArousal va_prototype(ExpressionLabel label) {
  switch (label) {
    case ExpressionLabel::Angry: return {-0.57, 0.63};
    case ExpressionLabel::Disgust: return {-0.68, 0.25};
    case ExpressionLabel::Fear: return {-0.61, 0.72};
    case ExpressionLabel::Happy: return {0.76, 0.48};
    case ExpressionLabel::Neutral: return {0.0, 0.0};
    case ExpressionLabel::Sad: return {-0.63, -0.45};
    case ExpressionLabel::Surprised: return {0.10, 0.80};
  }
  throw ContractError("invalid expression label");
}

bool quadrant_consistent(ExpressionLabel label, double valence, double arousal) {
  switch (label) {
    case ExpressionLabel::Happy: return valence > 0.0;
    case ExpressionLabel::Angry:
    case ExpressionLabel::Fear:
    case ExpressionLabel::Disgust: return valence < 0.0;
    case ExpressionLabel::Sad: return valence < 0.0 && arousal < 0.0;
    case ExpressionLabel::Surprised: return arousal > 0.0;
    case ExpressionLabel::Neutral: return std::abs(valence) <= 0.2 && std::abs(arousal) <= 0.2;
  }
  return false;
}

namespace {

void check_field(const std::string& value, const char* what) {
  if (value.empty()) throw ValidationError(std::string(what) + " is empty");
  if (value.find_first_of(",\"\r\n") != std::string::npos) {
    throw ValidationError(std::string(what) + " contains a comma, quote or line break: " + value);
  }
}

}  // namespace

void AnnotationRecord::validate() const {
  check_field(frame_path, "frame_path");
  check_field(video_id, "video_id");
  if (!std::isfinite(valence) || valence < -1.0 || valence > 1.0) {
    throw ValidationError("valence out of [-1, 1]: " + std::to_string(valence));
  }
  if (!std::isfinite(arousal) || arousal < -1.0 || arousal > 1.0) {
    throw ValidationError("arousal out of [-1, 1]: " + std::to_string(arousal));
  }
  if (!quadrant_consistent(expression, valence, arousal)) {
    throw ValidationError("(" + std::to_string(valence) + ", " + std::to_string(arousal) + ") is outside the " +
                          std::string(expression_name(expression)) + " region");
  }
}

std::array<std::size_t, kExpressionCount> DatasetManifest::counts() const {
  std::array<std::size_t, kExpressionCount> c{};
  for (const auto& r : records) ++c[static_cast<std::size_t>(r.expression)];
  return c;
}

std::vector<std::string> DatasetManifest::identities() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (seen.insert(r.video_id).second) ids.push_back(r.video_id);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, std::size_t line, const char* what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
    throw ValidationError("manifest line " + std::to_string(line) + ": " + what + " is not a number: '" +
                          std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_commas(std::string_view row) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = row.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(row.substr(start));
      return fields;
    }
    fields.push_back(row.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& r : manifest.records) {
    r.validate();
    out += r.frame_path;
    out += ',';
    out += r.video_id;
    out += ',';
    out += expression_name(r.expression);
    out += ',';
    out += format_double(r.valence);
    out += ',';
    out += format_double(r.arousal);
    out += '\n';
  }
  return out;
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root) {
  DatasetManifest manifest;
  manifest.root = root;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kManifestHeader) {
        throw ValidationError("manifest line 1: expected header '" + std::string(kManifestHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != 5) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": expected 5 fields, found " +
                            std::to_string(fields.size()));
    }
    AnnotationRecord r;
    r.frame_path = std::string(fields[0]);
    r.video_id = std::string(fields[1]);
    try {
      r.expression = parse_expression(fields[2]);
    } catch (const ValidationError& e) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    r.valence = parse_double(fields[3], line_no, "valence");
    r.arousal = parse_double(fields[4], line_no, "arousal");
    try {
      r.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    manifest.records.push_back(std::move(r));
  }
  if (!header_seen) throw ValidationError("manifest line 1: missing header");
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_manifest(buffer.str(), path.parent_path());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  const std::string text = format_manifest(manifest);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// sprites

namespace {

using Color = std::array<std::uint8_t, 3>;

struct ExpressionShape {
  double brow_tilt;   // > 0 lowers the inner brow ends
  double brow_raise;  // upward brow shift, fraction of box
  double eye_open;    // eye height multiplier
  double mouth_curve; // > 0 smiles
  double mouth_open;  // gap between lips, fraction of box
  double mouth_width; // corner spread multiplier
  double mouth_skew;  // raises the right corner
  std::array<double, 3> tint;  // per-channel skin gain
};

ExpressionShape shape_of(ExpressionLabel label) {
  switch (label) {
    case ExpressionLabel::Angry: return {0.45, -0.02, 0.55, -0.03, 0.0, 0.85, 0.0, {1.12, 0.88, 0.86}};
    case ExpressionLabel::Disgust: return {0.20, 0.0, 0.45, -0.04, 0.0, 0.90, 0.05, {0.94, 1.04, 0.86}};
    case ExpressionLabel::Fear: return {-0.35, 0.06, 1.45, -0.02, 0.06, 1.05, 0.0, {0.9, 0.94, 1.04}};
    case ExpressionLabel::Happy: return {0.0, 0.02, 0.75, 0.12, 0.05, 1.2, 0.0, {1.1, 1.0, 0.92}};
    case ExpressionLabel::Neutral: return {0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, {1.0, 1.0, 1.0}};
    case ExpressionLabel::Sad: return {-0.45, 0.01, 0.70, -0.11, 0.0, 0.90, 0.0, {0.86, 0.9, 1.02}};
    case ExpressionLabel::Surprised: return {0.0, 0.08, 1.50, 0.0, 0.14, 0.70, 0.0, {1.04, 1.04, 1.06}};
  }
  throw ContractError("invalid expression label");
}

ExpressionShape blend(const ExpressionShape& a, const ExpressionShape& b, double t) {
  auto mix = [t](double x, double y) { return x + t * (y - x); };
  return {mix(a.brow_tilt, b.brow_tilt),     mix(a.brow_raise, b.brow_raise), mix(a.eye_open, b.eye_open),
          mix(a.mouth_curve, b.mouth_curve), mix(a.mouth_open, b.mouth_open), mix(a.mouth_width, b.mouth_width),
          mix(a.mouth_skew, b.mouth_skew),
          {mix(a.tint[0], b.tint[0]), mix(a.tint[1], b.tint[1]), mix(a.tint[2], b.tint[2])}};
}

constexpr int kSuper = 4;

// Paints `color` over every pixel of `region` weighted by the fraction of its
// kSuper x kSuper subsamples for which inside(x, y) holds.
void paint(Image& canvas, const BBox& region, const std::function<bool(double, double)>& inside, const Color& color) {
  const long x0 = std::max(0L, static_cast<long>(std::floor(region.x1)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(region.y1)));
  const long x1 = std::min(static_cast<long>(canvas.width), static_cast<long>(std::ceil(region.x2)));
  const long y1 = std::min(static_cast<long>(canvas.height), static_cast<long>(std::ceil(region.y2)));
  for (long py = y0; py < y1; ++py) {
    for (long px = x0; px < x1; ++px) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          if (inside(px + (sx + 0.5) / kSuper, py + (sy + 0.5) / kSuper)) ++hits;
        }
      }
      if (hits == 0) continue;
      const double cover = static_cast<double>(hits) / (kSuper * kSuper);
      for (std::size_t c = 0; c < 3; ++c) {
        std::uint8_t& dst = canvas.at(static_cast<std::size_t>(px), static_cast<std::size_t>(py), c);
        dst = static_cast<std::uint8_t>(std::lround(dst * (1.0 - cover) + color[c] * cover));
      }
    }
  }
}

double segment_distance(double px, double py, Point2 a, Point2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (a.x + t * dx), py - (a.y + t * dy));
}

BBox around(Point2 c, double rx, double ry) { return {c.x - rx - 1, c.y - ry - 1, c.x + rx + 1, c.y + ry + 1}; }

Color scaled(const Color& c, double f) {
  Color out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(c[i] * f), 0L, 255L));
  return out;
}

}  // namespace

SpriteIdentity random_identity(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto lerp = [](double a, double b, double t) { return static_cast<std::uint8_t>(std::lround(a + (b - a) * t)); };
  SpriteIdentity id;
  const double tone = unit(rng);
  id.skin = {lerp(240, 115, tone), lerp(205, 78, tone), lerp(175, 52, tone)};
  const double h = unit(rng);
  id.hair = {lerp(20, 200, h), lerp(15, 150, h * h), lerp(10, 80, h * h * h)};
  // keep the face clearly separable from the backdrop
  do {
    id.background = {static_cast<std::uint8_t>(40 + 120 * unit(rng)), static_cast<std::uint8_t>(40 + 120 * unit(rng)),
                     static_cast<std::uint8_t>(40 + 120 * unit(rng))};
  } while (std::abs(id.background[0] - id.skin[0]) + std::abs(id.background[1] - id.skin[1]) +
               std::abs(id.background[2] - id.skin[2]) <
           120);
  id.iris = {lerp(30, 90, unit(rng)), lerp(30, 110, unit(rng)), lerp(40, 160, unit(rng))};
  id.face_width = 0.92 + 0.12 * unit(rng);
  id.face_height = 0.94 + 0.08 * unit(rng);
  id.eye_spacing = 0.92 + 0.16 * unit(rng);
  id.hair_line = 0.14 + 0.1 * unit(rng);
  return id;
}

SpriteGeometry draw_sprite(Image& canvas, const BBox& box, const SpriteIdentity& identity, ExpressionLabel expression,
                           double intensity) {
  if (!box.valid()) throw ContractError("draw_sprite: empty box");
  const double w = box.width();
  const auto at = [&](double u, double v) { return Point2{box.x1 + u * w, box.y1 + v * w}; };
  const ExpressionShape s = blend(shape_of(ExpressionLabel::Neutral), shape_of(expression), intensity);
  const Landmarks5 base = canonical_landmarks(1.0);

  // face and hair
  const Point2 centre = at(0.5, 0.53);
  const double rx = 0.40 * identity.face_width * w, ry = 0.47 * identity.face_height * w;
  auto in_oval = [=](double x, double y) {
    const double dx = (x - centre.x) / rx, dy = (y - centre.y) / ry;
    return dx * dx + dy * dy <= 1.0;
  };
  Color skin;
  for (std::size_t c = 0; c < 3; ++c) skin[c] = static_cast<std::uint8_t>(std::clamp(std::lround(identity.skin[c] * s.tint[c]), 0L, 255L));
  paint(canvas, around(centre, rx, ry), in_oval, skin);
  const double hair_y = box.y1 + identity.hair_line * w;
  paint(canvas, around(centre, rx, ry), [=](double x, double y) { return y < hair_y && in_oval(x, y); },
        identity.hair);

  // eyes
  const double half_gap = (base[1].x - base[0].x) / 2.0 * identity.eye_spacing;
  const Point2 eyes[2] = {at(0.5 - half_gap, base[0].y), at(0.5 + half_gap, base[1].y)};
  const double erx = 0.095 * w, ery = std::max(0.015, 0.065 * s.eye_open) * w;
  for (const Point2& e : eyes) {
    auto in_eye = [=](double x, double y) {
      const double dx = (x - e.x) / erx, dy = (y - e.y) / ery;
      return dx * dx + dy * dy <= 1.0;
    };
    paint(canvas, around(e, erx, ery), in_eye, Color{245, 245, 245});
    const double ir = 0.045 * w;
    paint(canvas, around(e, ir, ir), [=](double x, double y) { return in_eye(x, y) && std::hypot(x - e.x, y - e.y) <= ir; },
          identity.iris);
  }

  // brows; the inner end is the one closer to the face midline
  const double brow_r = 0.03 * w;
  for (int side = 0; side < 2; ++side) {
    const double dir = side == 0 ? 1.0 : -1.0;  // towards the midline
    const Point2 e = eyes[side];
    const double by = e.y - (0.12 + s.brow_raise) * w;
    const Point2 outer{e.x - dir * 0.085 * w, by};
    const Point2 inner{e.x + dir * 0.075 * w, by + s.brow_tilt * 0.12 * w};
    BBox region{std::min(outer.x, inner.x) - brow_r - 1, std::min(outer.y, inner.y) - brow_r - 1,
                std::max(outer.x, inner.x) + brow_r + 1, std::max(outer.y, inner.y) + brow_r + 1};
    paint(canvas, region, [=](double x, double y) { return segment_distance(x, y, outer, inner) <= brow_r; },
          scaled(identity.hair, 0.6));
  }

  // nose
  const Point2 nose = at(base[2].x, base[2].y);
  paint(canvas, around(nose, 0.035 * w, 0.025 * w),
        [=](double x, double y) {
          const double dx = (x - nose.x) / (0.035 * w), dy = (y - nose.y) / (0.025 * w);
          return dx * dx + dy * dy <= 1.0;
        },
        scaled(skin, 0.78));

  // mouth: lips follow a parabola between the corners, optionally parted
  const double half_mouth = (base[4].x - base[3].x) / 2.0 * s.mouth_width;
  const Point2 left = at(0.5 - half_mouth, base[3].y);
  const Point2 right = at(0.5 + half_mouth, base[4].y - s.mouth_skew);
  const double bend = s.mouth_curve * w, gap = s.mouth_open * w / 2.0;
  const double lip_r = 0.032 * w;
  auto centre_line = [=](double t) {
    return Point2{left.x + t * (right.x - left.x), left.y + t * (right.y - left.y) + bend * 4.0 * t * (1.0 - t)};
  };
  BBox mouth_region{left.x - lip_r - 1, std::min(left.y, right.y) - std::abs(bend) - gap - lip_r - 1,
                    right.x + lip_r + 1, std::max(left.y, right.y) + std::abs(bend) + gap + lip_r + 1};
  auto in_mouth = [=](double x, double y) {
    const double t = (x - left.x) / (right.x - left.x);
    if (t < 0.0 || t > 1.0) return std::hypot(x - (t < 0.0 ? left.x : right.x), y - (t < 0.0 ? left.y : right.y)) <= lip_r;
    const Point2 c = centre_line(t);
    const double open = gap * 4.0 * t * (1.0 - t);
    return std::abs(y - c.y) <= open + lip_r;
  };
  paint(canvas, mouth_region, in_mouth, Color{150, 40, 50});
  if (gap > 0.0) {
    paint(canvas, mouth_region,
          [=](double x, double y) {
            const double t = (x - left.x) / (right.x - left.x);
            if (t <= 0.0 || t >= 1.0) return false;
            const Point2 c = centre_line(t);
            return std::abs(y - c.y) <= gap * 4.0 * t * (1.0 - t) - lip_r * 0.5;
          },
          Color{45, 15, 20});
  }

  SpriteGeometry geo;
  geo.box = box;
  geo.landmarks = {eyes[0], eyes[1], nose, left, right};
  return geo;
}

DatasetManifest synth_sprites(std::size_t n_identities, std::size_t frames_per_identity, std::size_t image_size,
                              std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (n_identities == 0) throw ContractError("synth_sprites: need at least one identity");
  if (frames_per_identity == 0) throw ContractError("synth_sprites: need at least one frame");
  if (image_size < 16) throw ContractError("synth_sprites: image_size must be at least 16");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DatasetManifest manifest;
  manifest.root = out_dir;
  const double size = static_cast<double>(image_size);

  for (std::size_t i = 0; i < n_identities; ++i) {
    char id_buf[32];
    std::snprintf(id_buf, sizeof(id_buf), "id%03zu", i);
    const std::string video_id = id_buf;
    const SpriteIdentity identity = random_identity(rng);
    std::filesystem::create_directories(out_dir / video_id, ec);
    if (ec) throw IoError("cannot create " + (out_dir / video_id).string() + ": " + ec.message());

    for (ExpressionLabel label : all_expressions()) {
      const ValenceArousal proto = va_prototype(label);
      for (std::size_t f = 0; f < frames_per_identity; ++f) {
        const double scale = 0.96 + 0.08 * unit(rng);
        const double shift_x = (unit(rng) - 0.5) * 0.08 * size;
        const double shift_y = (unit(rng) - 0.5) * 0.08 * size;
        const double intensity = 0.85 + 0.3 * unit(rng);
        const double dv = (2.0 * unit(rng) - 1.0) * kVaJitter;
        const double da = (2.0 * unit(rng) - 1.0) * kVaJitter;

        Image frame(image_size, image_size);
        for (std::size_t p = 0; p < image_size * image_size; ++p) {
          std::copy(identity.background.begin(), identity.background.end(), frame.rgb.begin() + p * 3);
        }
        const double side = size * scale;
        const double x1 = (size - side) / 2.0 + shift_x, y1 = (size - side) / 2.0 + shift_y;
        draw_sprite(frame, {x1, y1, x1 + side, y1 + side}, identity, label, intensity);

        char name[64];
        std::snprintf(name, sizeof(name), "%s_%03zu.png", std::string(expression_name(label)).c_str(), f);
        const std::string rel = video_id + "/" + name;
        write_png(out_dir / rel, frame);

        AnnotationRecord r;
        r.frame_path = rel;
        r.video_id = video_id;
        r.expression = label;
        r.valence = std::clamp(proto.valence + dv, -1.0, 1.0);
        r.arousal = std::clamp(proto.arousal + da, -1.0, 1.0);
        r.validate();
        manifest.records.push_back(std::move(r));
      }
    }
  }
  save_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

// ---------------------------------------------------------------------------
// batches

Batch load_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& indices, std::size_t image_size) {
  if (indices.empty()) throw ContractError("load_batch: empty index list");
  if (image_size == 0) throw ContractError("load_batch: image_size must be positive");
  const std::size_t per = 3 * image_size * image_size;
  std::vector<double> values(indices.size() * per);
  Batch batch;
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const std::size_t idx = indices[n];
    if (idx >= manifest.records.size()) {
      throw ContractError("load_batch: index " + std::to_string(idx) + " out of range");
    }
    Tensor t = image_to_tensor(read_png(manifest.frame(idx)));
    if (t.dim(1) != image_size || t.dim(2) != image_size) t = resize_bilinear(t, image_size, image_size);
    std::copy(t.data().begin(), t.data().end(), values.begin() + static_cast<std::ptrdiff_t>(n * per));
    batch.labels.push_back(domain_index(manifest.records[idx].expression));
  }
  batch.images = Tensor({indices.size(), 3, image_size, image_size}, std::move(values));
  return batch;
}

}  // namespace stargan
