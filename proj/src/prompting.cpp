#include "dce/prompting.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dce::prompting {

namespace {

std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TemplateError("template file not readable: " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::string checksum_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t hash = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

std::vector<std::string> extract_placeholders(const std::string& body) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < body.size(); ++i) {
        if (body[i] != '{') continue;
        auto close = body.find('}', i + 1);
        if (close == std::string::npos) {
            throw TemplateError("unterminated placeholder at byte " + std::to_string(i));
        }
        std::string name = body.substr(i + 1, close - i - 1);
        if (name.empty() || name.find('{') != std::string::npos) {
            throw TemplateError("malformed placeholder \"{" + name + "}\"");
        }
        if (seen.insert(name).second) out.push_back(name);
        i = close;
    }
    return out;
}

std::string render(const PromptTemplate& tmpl, const Bindings& bindings) {
    std::string out;
    out.reserve(tmpl.body.size());
    std::set<std::string> used;
    for (std::size_t i = 0; i < tmpl.body.size(); ++i) {
        char c = tmpl.body[i];
        if (c != '{') {
            out.push_back(c);
            continue;
        }
        auto close = tmpl.body.find('}', i + 1);
        if (close == std::string::npos) {
            throw RenderError("template \"" + tmpl.id + "\": unterminated placeholder");
        }
        std::string name = tmpl.body.substr(i + 1, close - i - 1);
        auto it = bindings.find(name);
        if (it == bindings.end()) {
            throw RenderError("template \"" + tmpl.id + "\": unresolved placeholder \"" + name + "\"");
        }
        out += it->second;
        used.insert(name);
        i = close;
    }
    for (const auto& [key, value] : bindings) {
        if (!used.count(key)) {
            throw RenderError("template \"" + tmpl.id + "\": unknown binding key \"" + key + "\"");
        }
    }
    return out;
}

TemplateLibrary TemplateLibrary::load(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw TemplateError("template manifest not readable: " + manifest_path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw TemplateError("template manifest " + manifest_path.string() + ": " + e.what());
    }
    auto templates = doc.find("templates");
    if (templates == doc.end() || !templates->is_array()) {
        throw TemplateError("template manifest " + manifest_path.string() +
                            ": missing \"templates\" array");
    }

    TemplateLibrary lib;
    for (const auto& entry : *templates) {
        PromptTemplate tmpl;
        try {
            tmpl.id = entry.at("id").get<std::string>();
            tmpl.version = entry.at("version").get<std::string>();
            tmpl.placeholders = entry.at("placeholders").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw TemplateError("template manifest " + manifest_path.string() + ": " + e.what());
        }
        const auto file = dir / (tmpl.id + "." + tmpl.version + ".txt");
        tmpl.body = read_file_bytes(file);

        const std::string want = entry.value("fnv1a64", std::string());
        const std::string got = checksum_hex(fnv1a64(tmpl.body));
        if (want != got) {
            throw TemplateError("template " + file.string() + ": checksum mismatch (manifest " +
                                want + ", file " + got + ")");
        }

        auto found = extract_placeholders(tmpl.body);
        auto sorted_found = found;
        auto sorted_declared = tmpl.placeholders;
        std::sort(sorted_found.begin(), sorted_found.end());
        std::sort(sorted_declared.begin(), sorted_declared.end());
        if (sorted_found != sorted_declared) {
            throw TemplateError("template " + file.string() +
                                ": placeholders do not match the manifest");
        }

        if (!lib.templates_.emplace(tmpl.id, std::move(tmpl)).second) {
            throw TemplateError("template manifest " + manifest_path.string() +
                                ": duplicate id \"" + entry.at("id").get<std::string>() + "\"");
        }
    }
    return lib;
}

const PromptTemplate& TemplateLibrary::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw TemplateError("no template with id \"" + id + "\"");
    return it->second;
}

std::string format_box(const BoundingBox& box) {
    return "[" + std::to_string(box.x1) + "," + std::to_string(box.y1) + "," +
           std::to_string(box.x2) + "," + std::to_string(box.y2) + "]";
}

std::string relation_2d_text(Relation2D r) {
    switch (r) {
        case Relation2D::left_of: return "to the left of";
        case Relation2D::right_of: return "to the right of";
        case Relation2D::above: return "above";
        case Relation2D::below: return "below";
        case Relation2D::next_to: return "next to";
    }
    return "next to";
}

std::string relation_3d_text(Relation3D r) {
    return r == Relation3D::in_front_of ? "in front of" : "behind of";
}

std::string absolute_region_text(AbsoluteRegion r) {
    std::string s = to_string(r);
    std::replace(s.begin(), s.end(), '_', ' ');
    return s;
}

std::string render_reference_prompt(const TemplateLibrary& lib, const std::string& category) {
    if (category.empty()) throw RenderError("reference prompt: empty category");
    return render(lib.get("reference_caption"), {{"category_name", category}});
}

std::string render_subclass_clause(const TemplateLibrary& lib, const std::string& cat_name,
                                   const std::string& fine_label) {
    if (cat_name.empty()) throw RenderError("subclass clause: empty cat_name");
    if (fine_label.empty()) throw RenderError("subclass clause: empty fine_label");
    return render(lib.get("subclass_clause"),
                  {{"cat_name", cat_name}, {"fine_label", fine_label}});
}

std::string render_3d_relation_sentence(const TemplateLibrary& lib, const std::string& category_0,
                                        const BoundingBox& bbox_0, Relation3D relation,
                                        const std::string& category_1, const BoundingBox& bbox_1) {
    return render(lib.get("relation_3d"), {{"category_0", category_0},
                                           {"bbox_0", format_box(bbox_0)},
                                           {"3d_relation", relation_3d_text(relation)},
                                           {"category_1", category_1},
                                           {"bbox_1", format_box(bbox_1)}});
}

std::string render_2d_relation_sentence(const TemplateLibrary& lib, const std::string& category_0,
                                        const BoundingBox& bbox_0, Relation2D relation,
                                        const std::string& category_1, const BoundingBox& bbox_1) {
    return render(lib.get("relation_2d"), {{"category_0", category_0},
                                           {"bbox_0", format_box(bbox_0)},
                                           {"2d_relation", relation_2d_text(relation)},
                                           {"category_1", category_1},
                                           {"bbox_1", format_box(bbox_1)}});
}

std::string render_absolute_location_sentence(const TemplateLibrary& lib,
                                              const std::string& category,
                                              const BoundingBox& bbox, AbsoluteRegion region) {
    return render(lib.get("absolute_location"), {{"category", category},
                                                 {"bbox", format_box(bbox)},
                                                 {"region", absolute_region_text(region)}});
}

std::string render_hoi_sentence(const TemplateLibrary& lib, const HoiTriple& triple,
                                const std::string& object_category) {
    return render(lib.get("hoi"), {{"person_bbox", format_box(triple.person_box)},
                                   {"verb", triple.verb},
                                   {"category", object_category},
                                   {"object_bbox", format_box(triple.object_box)}});
}

std::string build_region_prompt(const TemplateLibrary& lib, const ObjectAttributes& attrs) {
    if (!attrs.reference_caption) {
        throw PromptAssemblyError("region prompt requires a reference caption");
    }
    std::string lines;
    if (attrs.area > 0) {
        lines += "The region is a " + std::string(to_string(attrs.size_bucket)) +
                 " object covering " + fmt4(attrs.area_fraction) + " of the image.\n";
    }
    if (attrs.mean_depth) {
        lines += "The region's mean depth is " + fmt4(*attrs.mean_depth) +
                 "; smaller values are closer to the camera.\n";
    }
    if (attrs.emotion) {
        lines += "The person in the region appears " + *attrs.emotion + ".\n";
    }
    for (const auto& item : attrs.ocr_items) {
        lines += "the region contains the text '" + item.text + "'\n";
    }
    if (attrs.fine_grained) {
        lines += render_subclass_clause(lib, attrs.detection.category, attrs.fine_grained->label) +
                 "\n";
    }
    return render(lib.get("region_caption"), {{"reference_caption", *attrs.reference_caption},
                                              {"attribute_lines", lines}});
}

std::string build_image_prompt(const TemplateLibrary& lib, const std::vector<RegionLine>& regions,
                               const RelationAttributes& relations, const ImageRef& image,
                               const std::optional<std::string>& reference_caption) {
    if (regions.empty() && !reference_caption) {
        throw PromptAssemblyError("image prompt requires regions or a reference caption");
    }
    auto region_at = [&](int index) -> const RegionLine& {
        if (index < 0 || static_cast<std::size_t>(index) >= regions.size()) {
            throw PromptAssemblyError("relation index " + std::to_string(index) +
                                      " out of range for " + std::to_string(regions.size()) +
                                      " regions");
        }
        return regions[static_cast<std::size_t>(index)];
    };
    auto category_of_box = [&](const BoundingBox& box) -> std::string {
        for (const auto& r : regions) {
            if (r.box == box) return r.category;
        }
        return "object";
    };

    std::string sections;
    if (reference_caption) {
        sections += "Reference caption for the image: " + *reference_caption + "\n";
    }
    for (const auto& r : regions) {
        sections += "region " + format_box(r.box) + ": " + r.caption + "\n";
    }
    if (!relations.counts.empty()) {
        sections += "Category counts: ";
        bool first = true;
        for (const auto& [category, n] : relations.counts) {
            if (!first) sections += ", ";
            sections += category + "=" + std::to_string(n);
            first = false;
        }
        sections += ".\n";
    }
    for (const auto& triple : relations.hoi) {
        sections += render_hoi_sentence(lib, triple, category_of_box(triple.object_box)) + "\n";
    }
    for (const auto& entry : relations.absolute_locations) {
        const auto& r = region_at(entry.index);
        sections += render_absolute_location_sentence(lib, r.category, r.box, entry.region) + "\n";
    }
    for (const auto& entry : relations.relative_2d) {
        const auto& a = region_at(entry.a);
        const auto& b = region_at(entry.b);
        sections +=
            render_2d_relation_sentence(lib, a.category, a.box, entry.relation, b.category, b.box) +
            "\n";
    }
    for (const auto& entry : relations.relative_3d) {
        const auto& a = region_at(entry.a);
        const auto& b = region_at(entry.b);
        sections +=
            render_3d_relation_sentence(lib, a.category, a.box, entry.relation, b.category, b.box) +
            "\n";
    }
    return render(lib.get("image_caption"), {{"width", std::to_string(image.width)},
                                             {"height", std::to_string(image.height)},
                                             {"sections", sections}});
}

}  // namespace dce::prompting
