#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dce {

inline constexpr const char* kEngineVersion = "0.1.0";

/// Image identity within a dataset index. Pixels are never stored, only
/// referenced by file_name relative to the dataset root.
struct ImageRef {
    std::int64_t id = 0;
    std::string file_name;
    int width = 0;
    int height = 0;

    bool operator==(const ImageRef&) const = default;
};

/// Half-open pixel box: covers x1 <= x < x2, y1 <= y < y2.
/// Origin top-left, x rightward, y downward. Zero width/height is legal.
struct BoundingBox {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const { return x2 - x1; }
    int height() const { return y2 - y1; }

    bool operator==(const BoundingBox&) const = default;
};

enum class DetectionSource { in_domain, open_world, oracle_file };

struct Detection {
    BoundingBox box;
    std::string category;
    double confidence = 0.0;
    DetectionSource source = DetectionSource::in_domain;

    bool operator==(const Detection&) const = default;
};

/// Relative depth grid, row-major. Smaller value = closer to the camera.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    bool empty() const { return values.empty(); }

    bool operator==(const DepthMap&) const = default;
};

enum class SizeBucket { small, medium, large };
enum class Provenance { extracted, skipped_by_gating, unavailable };

struct OcrItem {
    std::string text;
    BoundingBox box;

    bool operator==(const OcrItem&) const = default;
};

struct FineGrainedLabel {
    std::string label;
    double confidence = 0.0;

    bool operator==(const FineGrainedLabel&) const = default;
};

/// Names of the per-object attributes tracked in ObjectAttributes::provenance.
inline const std::vector<std::string>& attribute_names() {
    static const std::vector<std::string> names = {
        "size", "depth", "emotion", "ocr", "fine_grained", "reference_caption"};
    return names;
}

struct ObjectAttributes {
    Detection detection;
    std::int64_t area = 0;
    double area_fraction = 0.0;
    SizeBucket size_bucket = SizeBucket::small;
    std::optional<double> mean_depth;
    std::optional<std::string> emotion;
    std::vector<OcrItem> ocr_items;
    std::optional<FineGrainedLabel> fine_grained;
    std::optional<std::string> reference_caption;
    std::map<std::string, Provenance> provenance;

    bool operator==(const ObjectAttributes&) const = default;
};

struct HoiTriple {
    BoundingBox person_box;
    BoundingBox object_box;
    std::string verb;
    double confidence = 0.0;

    bool operator==(const HoiTriple&) const = default;
};

enum class AbsoluteRegion {
    left,
    right,
    top,
    bottom,
    center,
    top_left,
    bottom_left,
    top_right,
    bottom_right
};

enum class Relation2D { left_of, right_of, above, below, next_to };
enum class Relation3D { in_front_of, behind_of };

struct AbsoluteLocationEntry {
    int index = 0;
    AbsoluteRegion region = AbsoluteRegion::center;

    bool operator==(const AbsoluteLocationEntry&) const = default;
};

struct Relation2DEntry {
    int a = 0;
    int b = 0;
    Relation2D relation = Relation2D::next_to;

    bool operator==(const Relation2DEntry&) const = default;
};

struct Relation3DEntry {
    int a = 0;
    int b = 0;
    Relation3D relation = Relation3D::in_front_of;

    bool operator==(const Relation3DEntry&) const = default;
};

struct RelationAttributes {
    std::vector<HoiTriple> hoi;
    std::map<std::string, int> counts;
    std::vector<AbsoluteLocationEntry> absolute_locations;
    std::vector<Relation2DEntry> relative_2d;
    std::vector<Relation3DEntry> relative_3d;

    bool operator==(const RelationAttributes&) const = default;
};

enum class RecordStatus { ok, degraded, failed };

/// One annotated image: the persisted unit of the engine's output.
struct CaptionRecord {
    ImageRef image;
    std::vector<Detection> detections;
    std::vector<ObjectAttributes> object_attributes;
    RelationAttributes relation_attributes;
    std::vector<std::string> region_captions;
    std::string image_caption;
    RecordStatus status = RecordStatus::ok;
    std::string engine_version = kEngineVersion;

    bool operator==(const CaptionRecord&) const = default;
};

// enum <-> text, used by the JSON codec and the wire protocol
const char* to_string(DetectionSource v);
const char* to_string(SizeBucket v);
const char* to_string(Provenance v);
const char* to_string(AbsoluteRegion v);
const char* to_string(Relation2D v);
const char* to_string(Relation3D v);
const char* to_string(RecordStatus v);

DetectionSource detection_source_from_string(const std::string& s);
SizeBucket size_bucket_from_string(const std::string& s);
Provenance provenance_from_string(const std::string& s);
AbsoluteRegion absolute_region_from_string(const std::string& s);
Relation2D relation_2d_from_string(const std::string& s);
Relation3D relation_3d_from_string(const std::string& s);
RecordStatus record_status_from_string(const std::string& s);

/// Checks every record invariant; returns one message per violation.
/// Violations are data, not errors: an empty result means the record is valid.
std::vector<std::string> validate_record(const CaptionRecord& record);

}  // namespace dce
