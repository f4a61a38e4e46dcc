#include "dce/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace dce::geometry {

std::int64_t area(const BoundingBox& box) {
    return static_cast<std::int64_t>(box.width()) * box.height();
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const int ix1 = std::max(a.x1, b.x1);
    const int iy1 = std::max(a.y1, b.y1);
    const int ix2 = std::min(a.x2, b.x2);
    const int iy2 = std::min(a.y2, b.y2);
    const std::int64_t iw = std::max(0, ix2 - ix1);
    const std::int64_t ih = std::max(0, iy2 - iy1);
    const std::int64_t inter = iw * ih;
    const std::int64_t uni = area(a) + area(b) - inter;
    if (uni <= 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

// Visit order for greedy NMS: confidence desc, area desc, category asc,
// then original position.
std::vector<std::size_t> nms_order(const std::vector<Detection>& dets) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&dets](std::size_t i, std::size_t j) {
        const Detection& a = dets[i];
        const Detection& b = dets[j];
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        const std::int64_t aa = area(a.box);
        const std::int64_t ab = area(b.box);
        if (aa != ab) return aa > ab;
        if (a.category != b.category) return a.category < b.category;
        return i < j;
    });
    return order;
}

}  // namespace

std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold) {
    std::vector<Detection> kept;
    for (std::size_t idx : nms_order(detections)) {
        const Detection& cand = detections[idx];
        bool keep = true;
        for (const Detection& k : kept) {
            if (iou(cand.box, k.box) >= iou_threshold) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(cand);
    }
    return kept;
}

std::vector<Detection> merge_detections(const std::vector<Detection>& in_domain,
                                        const std::vector<Detection>& open_world,
                                        const GeometryConfig& cfg) {
    std::vector<Detection> pool;
    pool.reserve(in_domain.size() + open_world.size());
    for (const auto& d : in_domain)
        if (d.confidence >= cfg.detection_confidence_threshold) pool.push_back(d);
    for (const auto& d : open_world)
        if (d.confidence >= cfg.detection_confidence_threshold) pool.push_back(d);
    return nms(pool, cfg.nms_iou_threshold);
}

double mean_depth(const DepthMap& map, const BoundingBox& box, const ImageRef& image) {
    if (map.empty()) throw std::invalid_argument("empty depth map");

    const double sx = static_cast<double>(map.width) / image.width;
    const double sy = static_cast<double>(map.height) / image.height;
    const double mx1 = box.x1 * sx;
    const double mx2 = box.x2 * sx;
    const double my1 = box.y1 * sy;
    const double my2 = box.y2 * sy;

    double sum = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < map.height; ++y) {
        const double cy = y + 0.5;
        if (cy < my1 || cy >= my2) continue;
        for (int x = 0; x < map.width; ++x) {
            const double cx = x + 0.5;
            if (cx < mx1 || cx >= mx2) continue;
            sum += map.at(x, y);
            ++count;
        }
    }
    if (count > 0) return sum / static_cast<double>(count);

    // No pixel center covered: take the pixel nearest the box center.
    const double bx = (mx1 + mx2) / 2.0;
    const double by = (my1 + my2) / 2.0;
    const int px = std::clamp(static_cast<int>(std::floor(bx)), 0, map.width - 1);
    const int py = std::clamp(static_cast<int>(std::floor(by)), 0, map.height - 1);
    return map.at(px, py);
}

AbsoluteRegion absolute_location(const BoundingBox& box, const ImageRef& image) {
    // Center doubled to stay in integers: cx = (x1+x2)/2, compare against
    // thirds via 3*(x1+x2) vs 2*width / 4*width. Ties go to the lower band.
    const std::int64_t cx2 = static_cast<std::int64_t>(box.x1) + box.x2;
    const std::int64_t cy2 = static_cast<std::int64_t>(box.y1) + box.y2;
    const std::int64_t w = image.width;
    const std::int64_t h = image.height;

    const int hband = 3 * cx2 <= 2 * w ? 0 : (3 * cx2 <= 4 * w ? 1 : 2);
    const int vband = 3 * cy2 <= 2 * h ? 0 : (3 * cy2 <= 4 * h ? 1 : 2);

    static constexpr AbsoluteRegion grid[3][3] = {
        {AbsoluteRegion::top_left, AbsoluteRegion::top, AbsoluteRegion::top_right},
        {AbsoluteRegion::left, AbsoluteRegion::center, AbsoluteRegion::right},
        {AbsoluteRegion::bottom_left, AbsoluteRegion::bottom, AbsoluteRegion::bottom_right}};
    return grid[vband][hband];
}

Relation2D relative_2d(const Detection& a, const Detection& b, const ImageRef& image,
                       const GeometryConfig& cfg) {
    if (a.box == b.box && a.category == b.category)
        throw std::invalid_argument("self relation");

    const double acx = (a.box.x1 + a.box.x2) / 2.0;
    const double acy = (a.box.y1 + a.box.y2) / 2.0;
    const double bcx = (b.box.x1 + b.box.x2) / 2.0;
    const double bcy = (b.box.y1 + b.box.y2) / 2.0;
    const double dx = acx - bcx;
    const double dy = acy - bcy;
    const double dist = std::hypot(dx, dy);
    const double diagonal = std::hypot(static_cast<double>(image.width),
                                       static_cast<double>(image.height));
    if (dist < cfg.near_distance_fraction * diagonal) return Relation2D::next_to;

    if (std::abs(dx) >= std::abs(dy) && dx != 0.0)
        return dx < 0.0 ? Relation2D::left_of : Relation2D::right_of;
    if (dy != 0.0) return dy < 0.0 ? Relation2D::above : Relation2D::below;
    return Relation2D::next_to;  // coincident centers
}

std::optional<Relation3D> relative_3d(double mean_depth_a, double mean_depth_b,
                                      double depth_range, const GeometryConfig& cfg) {
    const double diff = mean_depth_a - mean_depth_b;
    if (std::abs(diff) <= cfg.depth_margin_fraction * depth_range) return std::nullopt;
    return diff < 0.0 ? Relation3D::in_front_of : Relation3D::behind_of;
}

std::map<std::string, int> count_objects(const std::vector<Detection>& detections) {
    std::map<std::string, int> counts;
    for (const auto& d : detections) ++counts[d.category];
    return counts;
}

SizeInfo size_bucket(std::int64_t area, const ImageRef& image, const GeometryConfig& cfg) {
    const double image_area = static_cast<double>(image.width) * image.height;
    const double fraction = image_area > 0.0 ? static_cast<double>(area) / image_area : 0.0;
    SizeBucket bucket = SizeBucket::medium;
    if (fraction < cfg.size_small_fraction)
        bucket = SizeBucket::small;
    else if (fraction >= cfg.size_large_fraction)
        bucket = SizeBucket::large;
    return SizeInfo{bucket, fraction};
}

BoundingBox expand_crop(const BoundingBox& box, const ImageRef& image, double factor) {
    const double gx = factor * box.width();
    const double gy = factor * box.height();
    BoundingBox out;
    out.x1 = std::max(0, static_cast<int>(std::floor(box.x1 - gx)));
    out.y1 = std::max(0, static_cast<int>(std::floor(box.y1 - gy)));
    out.x2 = std::min(image.width, static_cast<int>(std::ceil(box.x2 + gx)));
    out.y2 = std::min(image.height, static_cast<int>(std::ceil(box.y2 + gy)));
    return out;
}

std::vector<std::pair<int, int>> select_prominent_pairs(const std::vector<Detection>& detections,
                                                        const ImageRef& image,
                                                        const GeometryConfig& cfg) {
    const int n = static_cast<int>(detections.size());
    if (n < 2 || cfg.pair_count <= 0) return {};

    std::vector<int> ranked(n);
    std::iota(ranked.begin(), ranked.end(), 0);
    const double image_area = static_cast<double>(image.width) * image.height;
    auto prominence = [&](int i) {
        const double frac = image_area > 0.0 ? area(detections[i].box) / image_area : 0.0;
        return detections[i].confidence * frac;
    };
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](int i, int j) { return prominence(i) > prominence(j); });

    const int top = std::min(6, n);
    std::vector<std::pair<int, int>> candidates;
    for (int i = 0; i < top; ++i)
        for (int j = i + 1; j < top; ++j)
            candidates.emplace_back(ranked[i], ranked[j]);

    // Partial Fisher-Yates with a seeded engine; the raw mt19937_64 stream is
    // standardized, so selection is stable across platforms.
    std::mt19937_64 rng(cfg.rng_seed ^ static_cast<std::uint64_t>(image.id));
    const std::size_t take = std::min<std::size_t>(cfg.pair_count, candidates.size());
    for (std::size_t k = 0; k < take; ++k) {
        const std::size_t pick = k + rng() % (candidates.size() - k);
        std::swap(candidates[k], candidates[pick]);
    }
    candidates.resize(take);
    return candidates;
}

}  // namespace dce::geometry
