#include "dce/json_codec.hpp"

#include <json.hpp>

namespace dce {

using nlohmann::json;

namespace {

json optional_string(const std::optional<std::string>& v) {
    return v ? json(*v) : json(nullptr);
}

std::optional<std::string> optional_string_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<std::string>();
}

}  // namespace

json to_json(const ImageRef& v) {
    return json{{"id", v.id}, {"file_name", v.file_name}, {"width", v.width}, {"height", v.height}};
}

json to_json(const BoundingBox& v) {
    return json::array({v.x1, v.y1, v.x2, v.y2});
}

json to_json(const Detection& v) {
    return json{{"box", to_json(v.box)},
                {"category", v.category},
                {"confidence", v.confidence},
                {"source", to_string(v.source)}};
}

json to_json(const ObjectAttributes& v) {
    json ocr = json::array();
    for (const auto& item : v.ocr_items)
        ocr.push_back(json{{"text", item.text}, {"box", to_json(item.box)}});
    json provenance = json::object();
    for (const auto& [name, p] : v.provenance) provenance[name] = to_string(p);
    return json{{"detection", to_json(v.detection)},
                {"area", v.area},
                {"area_fraction", v.area_fraction},
                {"size_bucket", to_string(v.size_bucket)},
                {"mean_depth", v.mean_depth ? json(*v.mean_depth) : json(nullptr)},
                {"emotion", optional_string(v.emotion)},
                {"ocr_items", ocr},
                {"fine_grained", v.fine_grained
                                     ? json{{"label", v.fine_grained->label},
                                            {"confidence", v.fine_grained->confidence}}
                                     : json(nullptr)},
                {"reference_caption", optional_string(v.reference_caption)},
                {"provenance", provenance}};
}

json to_json(const HoiTriple& v) {
    return json{{"person_box", to_json(v.person_box)},
                {"object_box", to_json(v.object_box)},
                {"verb", v.verb},
                {"confidence", v.confidence}};
}

json to_json(const RelationAttributes& v) {
    json hoi = json::array();
    for (const auto& t : v.hoi) hoi.push_back(to_json(t));
    json counts = json::object();
    for (const auto& [cat, n] : v.counts) counts[cat] = n;
    json abs_loc = json::array();
    for (const auto& e : v.absolute_locations)
        abs_loc.push_back(json::array({e.index, to_string(e.region)}));
    json rel2d = json::array();
    for (const auto& e : v.relative_2d)
        rel2d.push_back(json::array({json::array({e.a, e.b}), to_string(e.relation)}));
    json rel3d = json::array();
    for (const auto& e : v.relative_3d)
        rel3d.push_back(json::array({json::array({e.a, e.b}), to_string(e.relation)}));
    return json{{"hoi", hoi},
                {"counts", counts},
                {"absolute_locations", abs_loc},
                {"relative_2d", rel2d},
                {"relative_3d", rel3d}};
}

json to_json(const CaptionRecord& v) {
    json attrs = json::array();
    for (const auto& a : v.object_attributes) attrs.push_back(to_json(a));
    json dets = json::array();
    for (const auto& d : v.detections) dets.push_back(to_json(d));
    return json{{"image", to_json(v.image)},
                {"detections", dets},
                {"object_attributes", attrs},
                {"relation_attributes", to_json(v.relation_attributes)},
                {"region_captions", v.region_captions},
                {"image_caption", v.image_caption},
                {"status", to_string(v.status)},
                {"engine_version", v.engine_version}};
}

ImageRef image_ref_from_json(const json& j) {
    ImageRef v;
    v.id = j.at("id").get<std::int64_t>();
    v.file_name = j.at("file_name").get<std::string>();
    v.width = j.at("width").get<int>();
    v.height = j.at("height").get<int>();
    return v;
}

BoundingBox bounding_box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must be [x1,y1,x2,y2]");
    return BoundingBox{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

Detection detection_from_json(const json& j) {
    Detection v;
    v.box = bounding_box_from_json(j.at("box"));
    v.category = j.at("category").get<std::string>();
    v.confidence = j.at("confidence").get<double>();
    v.source = detection_source_from_string(j.at("source").get<std::string>());
    return v;
}

ObjectAttributes object_attributes_from_json(const json& j) {
    ObjectAttributes v;
    v.detection = detection_from_json(j.at("detection"));
    v.area = j.at("area").get<std::int64_t>();
    v.area_fraction = j.at("area_fraction").get<double>();
    v.size_bucket = size_bucket_from_string(j.at("size_bucket").get<std::string>());
    if (!j.at("mean_depth").is_null()) v.mean_depth = j.at("mean_depth").get<double>();
    v.emotion = optional_string_from(j.at("emotion"));
    for (const auto& item : j.at("ocr_items"))
        v.ocr_items.push_back(
            OcrItem{item.at("text").get<std::string>(), bounding_box_from_json(item.at("box"))});
    if (!j.at("fine_grained").is_null()) {
        const auto& fg = j.at("fine_grained");
        v.fine_grained = FineGrainedLabel{fg.at("label").get<std::string>(),
                                          fg.at("confidence").get<double>()};
    }
    v.reference_caption = optional_string_from(j.at("reference_caption"));
    for (const auto& [name, p] : j.at("provenance").items())
        v.provenance[name] = provenance_from_string(p.get<std::string>());
    return v;
}

HoiTriple hoi_triple_from_json(const json& j) {
    HoiTriple v;
    v.person_box = bounding_box_from_json(j.at("person_box"));
    v.object_box = bounding_box_from_json(j.at("object_box"));
    v.verb = j.at("verb").get<std::string>();
    v.confidence = j.at("confidence").get<double>();
    return v;
}

RelationAttributes relation_attributes_from_json(const json& j) {
    RelationAttributes v;
    for (const auto& t : j.at("hoi")) v.hoi.push_back(hoi_triple_from_json(t));
    for (const auto& [cat, n] : j.at("counts").items()) v.counts[cat] = n.get<int>();
    for (const auto& e : j.at("absolute_locations"))
        v.absolute_locations.push_back(AbsoluteLocationEntry{
            e.at(0).get<int>(), absolute_region_from_string(e.at(1).get<std::string>())});
    for (const auto& e : j.at("relative_2d"))
        v.relative_2d.push_back(Relation2DEntry{e.at(0).at(0).get<int>(), e.at(0).at(1).get<int>(),
                                                relation_2d_from_string(e.at(1).get<std::string>())});
    for (const auto& e : j.at("relative_3d"))
        v.relative_3d.push_back(Relation3DEntry{e.at(0).at(0).get<int>(), e.at(0).at(1).get<int>(),
                                                relation_3d_from_string(e.at(1).get<std::string>())});
    return v;
}

CaptionRecord caption_record_from_json(const json& j) {
    CaptionRecord v;
    v.image = image_ref_from_json(j.at("image"));
    for (const auto& d : j.at("detections")) v.detections.push_back(detection_from_json(d));
    for (const auto& a : j.at("object_attributes"))
        v.object_attributes.push_back(object_attributes_from_json(a));
    v.relation_attributes = relation_attributes_from_json(j.at("relation_attributes"));
    v.region_captions = j.at("region_captions").get<std::vector<std::string>>();
    v.image_caption = j.at("image_caption").get<std::string>();
    v.status = record_status_from_string(j.at("status").get<std::string>());
    v.engine_version = j.at("engine_version").get<std::string>();
    return v;
}

std::string record_to_jsonl(const CaptionRecord& record) {
    return to_json(record).dump();
}

CaptionRecord record_from_jsonl(const std::string& line) {
    return caption_record_from_json(json::parse(line));
}

}  // namespace dce
