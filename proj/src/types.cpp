#include "dce/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace dce {

namespace {

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

[[noreturn]] void bad_enum(const char* type, const std::string& s) {
    throw std::invalid_argument(std::string("unknown ") + type + " value: '" + s + "'");
}

}  // namespace

const char* to_string(DetectionSource v) {
    switch (v) {
        case DetectionSource::in_domain: return "in_domain";
        case DetectionSource::open_world: return "open_world";
        case DetectionSource::oracle_file: return "oracle_file";
    }
    return "in_domain";
}

const char* to_string(SizeBucket v) {
    switch (v) {
        case SizeBucket::small: return "small";
        case SizeBucket::medium: return "medium";
        case SizeBucket::large: return "large";
    }
    return "small";
}

const char* to_string(Provenance v) {
    switch (v) {
        case Provenance::extracted: return "extracted";
        case Provenance::skipped_by_gating: return "skipped_by_gating";
        case Provenance::unavailable: return "unavailable";
    }
    return "extracted";
}

const char* to_string(AbsoluteRegion v) {
    switch (v) {
        case AbsoluteRegion::left: return "left";
        case AbsoluteRegion::right: return "right";
        case AbsoluteRegion::top: return "top";
        case AbsoluteRegion::bottom: return "bottom";
        case AbsoluteRegion::center: return "center";
        case AbsoluteRegion::top_left: return "top_left";
        case AbsoluteRegion::bottom_left: return "bottom_left";
        case AbsoluteRegion::top_right: return "top_right";
        case AbsoluteRegion::bottom_right: return "bottom_right";
    }
    return "center";
}

const char* to_string(Relation2D v) {
    switch (v) {
        case Relation2D::left_of: return "left_of";
        case Relation2D::right_of: return "right_of";
        case Relation2D::above: return "above";
        case Relation2D::below: return "below";
        case Relation2D::next_to: return "next_to";
    }
    return "next_to";
}

const char* to_string(Relation3D v) {
    switch (v) {
        case Relation3D::in_front_of: return "in_front_of";
        case Relation3D::behind_of: return "behind_of";
    }
    return "in_front_of";
}

const char* to_string(RecordStatus v) {
    switch (v) {
        case RecordStatus::ok: return "ok";
        case RecordStatus::degraded: return "degraded";
        case RecordStatus::failed: return "failed";
    }
    return "ok";
}

DetectionSource detection_source_from_string(const std::string& s) {
    if (s == "in_domain") return DetectionSource::in_domain;
    if (s == "open_world") return DetectionSource::open_world;
    if (s == "oracle_file") return DetectionSource::oracle_file;
    bad_enum("DetectionSource", s);
}

SizeBucket size_bucket_from_string(const std::string& s) {
    if (s == "small") return SizeBucket::small;
    if (s == "medium") return SizeBucket::medium;
    if (s == "large") return SizeBucket::large;
    bad_enum("SizeBucket", s);
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "extracted") return Provenance::extracted;
    if (s == "skipped_by_gating") return Provenance::skipped_by_gating;
    if (s == "unavailable") return Provenance::unavailable;
    bad_enum("Provenance", s);
}

AbsoluteRegion absolute_region_from_string(const std::string& s) {
    if (s == "left") return AbsoluteRegion::left;
    if (s == "right") return AbsoluteRegion::right;
    if (s == "top") return AbsoluteRegion::top;
    if (s == "bottom") return AbsoluteRegion::bottom;
    if (s == "center") return AbsoluteRegion::center;
    if (s == "top_left") return AbsoluteRegion::top_left;
    if (s == "bottom_left") return AbsoluteRegion::bottom_left;
    if (s == "top_right") return AbsoluteRegion::top_right;
    if (s == "bottom_right") return AbsoluteRegion::bottom_right;
    bad_enum("AbsoluteRegion", s);
}

Relation2D relation_2d_from_string(const std::string& s) {
    if (s == "left_of") return Relation2D::left_of;
    if (s == "right_of") return Relation2D::right_of;
    if (s == "above") return Relation2D::above;
    if (s == "below") return Relation2D::below;
    if (s == "next_to") return Relation2D::next_to;
    bad_enum("Relation2D", s);
}

Relation3D relation_3d_from_string(const std::string& s) {
    if (s == "in_front_of") return Relation3D::in_front_of;
    if (s == "behind_of") return Relation3D::behind_of;
    bad_enum("Relation3D", s);
}

RecordStatus record_status_from_string(const std::string& s) {
    if (s == "ok") return RecordStatus::ok;
    if (s == "degraded") return RecordStatus::degraded;
    if (s == "failed") return RecordStatus::failed;
    bad_enum("RecordStatus", s);
}

namespace {

bool box_well_formed(const BoundingBox& b) {
    return b.x1 >= 0 && b.y1 >= 0 && b.x1 <= b.x2 && b.y1 <= b.y2;
}

bool box_inside(const BoundingBox& b, const ImageRef& image) {
    return b.x2 <= image.width && b.y2 <= image.height;
}

void check_detection(const Detection& d, const ImageRef& image, const std::string& where,
                     std::vector<std::string>& out) {
    if (!box_well_formed(d.box)) out.push_back(where + ": malformed box");
    if (box_well_formed(d.box) && !box_inside(d.box, image))
        out.push_back(where + ": box exceeds image bounds");
    if (d.confidence < 0.0 || d.confidence > 1.0)
        out.push_back(where + ": confidence outside [0,1]");
    if (d.category.empty()) out.push_back(where + ": empty category");
}

}  // namespace

std::vector<std::string> validate_record(const CaptionRecord& record) {
    std::vector<std::string> violations;

    if (record.image.width <= 0 || record.image.height <= 0)
        violations.push_back("image: non-positive dimensions");

    for (std::size_t i = 0; i < record.detections.size(); ++i)
        check_detection(record.detections[i], record.image, "detections[" + std::to_string(i) + "]",
                        violations);

    for (std::size_t i = 0; i < record.object_attributes.size(); ++i) {
        const auto& a = record.object_attributes[i];
        const std::string where = "object_attributes[" + std::to_string(i) + "]";
        check_detection(a.detection, record.image, where + ".detection", violations);
        const std::int64_t box_area = static_cast<std::int64_t>(a.detection.box.width()) *
                                      a.detection.box.height();
        if (a.area != box_area) violations.push_back(where + ": area does not match box");
        if (a.area_fraction < 0.0 || a.area_fraction > 1.0)
            violations.push_back(where + ": area_fraction outside [0,1]");
        if (a.emotion.has_value() && lowercase(a.detection.category) != "person")
            violations.push_back(where + ": emotion present for non-person category");
        for (const auto& name : attribute_names())
            if (!a.provenance.count(name))
                violations.push_back(where + ": provenance missing '" + name + "'");
    }

    const auto& rel = record.relation_attributes;
    int count_sum = 0;
    for (const auto& [cat, n] : rel.counts) {
        if (n < 0) violations.push_back("counts['" + cat + "']: negative");
        count_sum += n;
    }
    if (count_sum != static_cast<int>(record.detections.size()))
        violations.push_back("count mismatch: counts sum != detection count");

    const int n_det = static_cast<int>(record.detections.size());
    auto index_ok = [n_det](int i) { return i >= 0 && i < n_det; };
    for (const auto& e : rel.absolute_locations)
        if (!index_ok(e.index)) violations.push_back("absolute_locations: index out of range");
    for (const auto& e : rel.relative_2d)
        if (!index_ok(e.a) || !index_ok(e.b)) violations.push_back("relative_2d: index out of range");
    for (const auto& e : rel.relative_3d)
        if (!index_ok(e.a) || !index_ok(e.b)) violations.push_back("relative_3d: index out of range");
    for (const auto& t : rel.hoi)
        if (t.verb.empty()) violations.push_back("hoi: empty verb");

    if (record.region_captions.size() != record.object_attributes.size())
        violations.push_back("region_captions length != object_attributes length");

    const bool failed = record.status == RecordStatus::failed;
    if (failed != record.image_caption.empty())
        violations.push_back("status/caption mismatch");

    return violations;
}

}  // namespace dce
