#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "stargan/geometry.hpp"
#include "stargan/imaging.hpp"

namespace stargan {

struct Candidate {
  BBox bbox;
  double score = 0.0;
  /// (dx1, dy1, dx2, dy2), each normalized by the box width or height.
  std::array<double, 4> regression{};
  std::optional<Landmarks5> landmarks;
};

/// What a stage says about one square patch. Regression offsets are relative
/// to the patch side; landmarks are in patch-normalized [0, 1] coordinates.
struct StageOutput {
  double score = 0.0;
  std::array<double, 4> regression{};
  std::optional<Landmarks5> landmarks;
};

/// Scores square RGB patches. Implementations must be deterministic.
class StageScorer {
 public:
  virtual ~StageScorer() = default;
  virtual StageOutput score(const Image& patch) const = 0;
};

/// Scores every patch 0.
class RejectAllScorer : public StageScorer {
 public:
  StageOutput score(const Image& patch) const override;
};

/// Heuristic scorer for the synthetic sprites. The patch is split into
/// foreground and background (background = median colour of the patch border),
/// the foreground mask is correlated with the canonical face oval, and the
/// foreground extent gives the box regression and landmark estimates.
class TemplateScorer : public StageScorer {
 public:
  /// Minimum L1 RGB distance from the background colour to count as foreground.
  explicit TemplateScorer(double foreground_threshold = 48.0) : threshold_(foreground_threshold) {}
  StageOutput score(const Image& patch) const override;

 private:
  double threshold_;
};

double iou(const BBox& a, const BBox& b);
/// Intersection over the smaller area.
double overlap_min(const BBox& a, const BBox& b);

enum class NmsMode { Union, Min };

/// Greedy suppression in descending score order (ties keep the earlier index).
/// Returns indices into `candidates` of the kept entries, in keep order.
std::vector<std::size_t> nms_indices(const std::vector<Candidate>& candidates, double threshold, NmsMode mode);
std::vector<Candidate> nms(const std::vector<Candidate>& candidates, double threshold, NmsMode mode);

/// Calibrated box, or nullopt when the offsets collapse it.
std::optional<BBox> apply_regression(const Candidate& c);
/// Square box with the same centre and the longer side.
BBox make_square(const BBox& b);

/// Bilinear crop of `box` resampled to side x side; samples outside the image
/// repeat the nearest edge pixel.
Image crop_resize(const Image& image, const BBox& box, std::size_t side);

struct CascadeConfig {
  double min_face = 20.0;
  double scale_factor = 0.709;
  std::array<std::size_t, 3> stage_sizes{12, 24, 48};
  std::array<double, 3> thresholds{0.6, 0.7, 0.7};
  double nms_per_scale = 0.5;
  double nms_cross_scale = 0.7;
  double nms_refine = 0.7;
  double nms_output = 0.7;
  std::size_t stride = 2;
  /// Margin, as a fraction of the shorter image side, added on every side
  /// before detection and filled with the median border colour. Lets faces
  /// that fill the frame be seen by windows larger than the face.
  double border_pad = 0.0;

  void validate() const;
};

struct Detection {
  BBox box;
  Landmarks5 landmarks;
  double score = 0.0;
};

struct CascadeStats {
  std::size_t proposals = 0;
  std::size_t refined = 0;
  std::size_t degenerate_dropped = 0;
};

std::vector<Detection> cascade_detect(const Image& image, const StageScorer& proposal, const StageScorer& refine,
                                      const StageScorer& output, const CascadeConfig& config = {},
                                      CascadeStats* stats = nullptr);

/// x' = a x - b y + tx,  y' = b x + a y + ty.
struct Similarity {
  double a = 1.0, b = 0.0, tx = 0.0, ty = 0.0;

  Point2 apply(Point2 p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }
  double scale() const;
  double angle() const;
  Similarity inverse() const;
  static Similarity from(double scale, double angle, double tx, double ty);
};

/// Least-squares similarity taking `from` onto `to`, solved in closed form from
/// the centred cross-covariance. Throws DomainError for degenerate input.
Similarity estimate_similarity(const Landmarks5& from, const Landmarks5& to);

/// Output pixel (u, v) samples the source at T^-1(u + 0.5, v + 0.5) bilinearly;
/// samples outside the source are black.
Image warp_similarity(const Image& image, const Similarity& to_output, std::size_t out_size);

struct AlignedFace {
  Image image;
  Similarity transform;  // source -> output frame
};

AlignedFace align_face(const Image& image, const Landmarks5& landmarks, const Landmarks5& target, std::size_t out_size);

inline constexpr std::size_t kAlignedSize = 64;
inline Landmarks5 canonical_template(double size = kAlignedSize) { return canonical_landmarks(size); }

/// Surrounds the image with `margin` pixels of its median border colour.
Image pad_with_border_colour(const Image& image, std::size_t margin);

double landmark_rmse(const Landmarks5& a, const Landmarks5& b);

}  // namespace stargan
