#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "dce/types.hpp"

namespace dce::geometry {

/// Thresholds for every geometric derivation. The detector confidence cut and
/// the NMS IoU threshold are fixed operating points; the remaining fractions
/// tune the relation heuristics and can be varied per experiment.
struct GeometryConfig {
    double nms_iou_threshold = 0.75;
    double detection_confidence_threshold = 0.5;
    double near_distance_fraction = 0.15;   // of the image diagonal
    double depth_margin_fraction = 0.05;    // of the image's depth range
    double size_small_fraction = 0.02;
    double size_large_fraction = 0.20;
    double crop_expand_factor = 0.20;
    int pair_count = 2;
    std::uint64_t rng_seed = 0;
};

std::int64_t area(const BoundingBox& box);

/// Intersection over union; 0 when the union has zero area.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Greedy class-agnostic NMS. Candidates are visited by confidence descending
/// (ties: larger area, then lexicographic category, then input order) and kept
/// iff their IoU with every already-kept detection is < iou_threshold.
std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold);

/// Concatenates both detector outputs, drops detections below the confidence
/// threshold (the threshold value itself is kept), then applies NMS.
std::vector<Detection> merge_detections(const std::vector<Detection>& in_domain,
                                        const std::vector<Detection>& open_world,
                                        const GeometryConfig& cfg);

/// Average depth over map pixels whose centers fall inside the box after
/// proportional scaling from image to map coordinates. Falls back to the
/// single nearest pixel when no center is covered.
/// Throws std::invalid_argument on an empty depth map.
double mean_depth(const DepthMap& map, const BoundingBox& box, const ImageRef& image);

/// Classifies the box center on a 3x3 thirds grid. Centers exactly on a grid
/// line belong to the lower-index band (left/top).
AbsoluteRegion absolute_location(const BoundingBox& box, const ImageRef& image);

/// Relation of a with respect to b: next_to when the center distance is under
/// near_distance_fraction of the image diagonal, otherwise the dominant-axis
/// direction. Throws std::invalid_argument when a and b are the same box and
/// category.
Relation2D relative_2d(const Detection& a, const Detection& b, const ImageRef& image,
                       const GeometryConfig& cfg);

/// Depth ordering of a with respect to b (smaller depth = closer). Returns
/// nullopt when the difference is within depth_margin_fraction of the range.
std::optional<Relation3D> relative_3d(double mean_depth_a, double mean_depth_b,
                                      double depth_range, const GeometryConfig& cfg);

std::map<std::string, int> count_objects(const std::vector<Detection>& detections);

struct SizeInfo {
    SizeBucket bucket = SizeBucket::small;
    double area_fraction = 0.0;
};

SizeInfo size_bucket(std::int64_t area, const ImageRef& image, const GeometryConfig& cfg);

/// Grows each side of the box by factor x that box dimension, rounding
/// outward, clamped to the image bounds.
BoundingBox expand_crop(const BoundingBox& box, const ImageRef& image, double factor);

/// Samples up to cfg.pair_count distinct index pairs among the top-6
/// detections by prominence (confidence x area fraction). Each returned pair
/// lists the more prominent detection first. Deterministic for a given
/// cfg.rng_seed and image id.
std::vector<std::pair<int, int>> select_prominent_pairs(const std::vector<Detection>& detections,
                                                        const ImageRef& image,
                                                        const GeometryConfig& cfg);

}  // namespace dce::geometry
