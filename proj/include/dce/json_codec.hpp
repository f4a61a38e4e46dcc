#pragma once

#include <json.hpp>

#include "dce/types.hpp"

// JSONL schema for persisted records: one object per line, snake_case field
// names. Boxes serialize as integer arrays [x1,y1,x2,y2]; optional fields as
// null; tuple-shaped relation entries as [index, "label"] / [[a,b], "label"].

namespace dce {

nlohmann::json to_json(const ImageRef& v);
nlohmann::json to_json(const BoundingBox& v);
nlohmann::json to_json(const Detection& v);
nlohmann::json to_json(const ObjectAttributes& v);
nlohmann::json to_json(const HoiTriple& v);
nlohmann::json to_json(const RelationAttributes& v);
nlohmann::json to_json(const CaptionRecord& v);

ImageRef image_ref_from_json(const nlohmann::json& j);
BoundingBox bounding_box_from_json(const nlohmann::json& j);
Detection detection_from_json(const nlohmann::json& j);
ObjectAttributes object_attributes_from_json(const nlohmann::json& j);
HoiTriple hoi_triple_from_json(const nlohmann::json& j);
RelationAttributes relation_attributes_from_json(const nlohmann::json& j);
CaptionRecord caption_record_from_json(const nlohmann::json& j);

/// One-line JSON form used for JSONL output (no trailing newline).
std::string record_to_jsonl(const CaptionRecord& record);
CaptionRecord record_from_jsonl(const std::string& line);

}  // namespace dce
