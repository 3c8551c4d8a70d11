#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "stargan/geometry.hpp"
#include "stargan/imaging.hpp"
#include "stargan/tensor.hpp"

namespace stargan {

/// Domain indices follow alphabetical order of the names.
enum class ExpressionLabel : int { Angry = 0, Disgust, Fear, Happy, Neutral, Sad, Surprised };

inline constexpr std::size_t kExpressionCount = 7;

const std::array<ExpressionLabel, kExpressionCount>& all_expressions();
std::string_view expression_name(ExpressionLabel label);
/// Lower-case name -> label; ValidationError otherwise.
ExpressionLabel parse_expression(std::string_view name);
inline int domain_index(ExpressionLabel label) { return static_cast<int>(label); }
ExpressionLabel expression_from_index(int index);

struct ValenceArousal {
  double valence = 0.0;
  double arousal = 0.0;
  bool operator==(const ValenceArousal&) const = default;
};

/// Default annotation point of each expression in the valence/arousal plane.
ValenceArousal va_prototype(ExpressionLabel label);

/// True when (valence, arousal) lies in the region expected for the label.
bool quadrant_consistent(ExpressionLabel label, double valence, double arousal);

struct AnnotationRecord {
  std::string frame_path;
  std::string video_id;
  ExpressionLabel expression = ExpressionLabel::Neutral;
  double valence = 0.0;
  double arousal = 0.0;

  /// Range, quadrant and field-syntax checks; throws ValidationError.
  void validate() const;
  bool operator==(const AnnotationRecord&) const = default;
};

struct DatasetManifest {
  /// Directory that frame paths are relative to.
  std::filesystem::path root;
  std::vector<AnnotationRecord> records;

  std::array<std::size_t, kExpressionCount> counts() const;
  std::filesystem::path frame(std::size_t index) const { return root / records.at(index).frame_path; }
  /// Distinct video ids in first-appearance order.
  std::vector<std::string> identities() const;
  bool empty() const { return records.empty(); }
};

inline constexpr std::string_view kManifestHeader = "frame_path,video_id,expression,valence,arousal";

/// CSV text, LF line endings, shortest round-trip decimal formatting.
std::string format_manifest(const DatasetManifest& manifest);
/// Parses CSV text; errors name the offending line.
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root);
/// The manifest root becomes the directory containing the file.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// synthetic sprites

struct SpriteIdentity {
  std::array<std::uint8_t, 3> skin{};
  std::array<std::uint8_t, 3> hair{};
  std::array<std::uint8_t, 3> background{};
  std::array<std::uint8_t, 3> iris{};
  double face_width = 1.0;   // relative oval width
  double face_height = 1.0;  // relative oval height
  double eye_spacing = 1.0;  // relative inter-ocular distance
  double hair_line = 0.2;    // hair covers the oval above this fraction of the box
};

SpriteIdentity random_identity(std::mt19937_64& rng);

/// Where a sprite was drawn; landmarks follow the canonical frontal layout
/// scaled into `box`.
struct SpriteGeometry {
  BBox box;
  Landmarks5 landmarks;
};

/// Draws one face into the square `box` of `canvas`. `intensity` scales the
/// expression-specific deformation (1 = prototype).
SpriteGeometry draw_sprite(Image& canvas, const BBox& box, const SpriteIdentity& identity, ExpressionLabel expression,
                           double intensity = 1.0);

/// Renders identities x 7 expressions x frames to <out_dir>/<video_id>/<frame>.png
/// and writes <out_dir>/manifest.csv. Returns the manifest (root = out_dir).
DatasetManifest synth_sprites(std::size_t n_identities, std::size_t frames_per_identity, std::size_t image_size,
                              std::uint64_t seed, const std::filesystem::path& out_dir);

inline constexpr double kVaJitter = 0.05;

// ---------------------------------------------------------------------------
// batches

struct Batch {
  /// [N, 3, S, S] in [-1, 1].
  Tensor images;
  std::vector<int> labels;
};

Batch load_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& indices, std::size_t image_size);

}  // namespace stargan
