#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dce/types.hpp"

namespace dce::prompting {

class RenderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PromptAssemblyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PromptTemplate {
    std::string id;
    std::string version;
    std::string body;                       // contains {placeholder} tokens
    std::vector<std::string> placeholders;  // exactly the tokens appearing in body
};

using Bindings = std::map<std::string, std::string>;

/// Single-pass substitution: every {name} in body is replaced by
/// bindings.at(name); substituted values are not re-scanned. Strict in both
/// directions: an unresolved placeholder or an unused binding key raises
/// RenderError naming the offender.
std::string render(const PromptTemplate& tmpl, const Bindings& bindings);

/// FNV-1a 64-bit over raw bytes; the checksum recorded in the template manifest.
std::uint64_t fnv1a64(std::string_view bytes);

/// Placeholder names appearing in body, in first-appearance order, deduplicated.
std::vector<std::string> extract_placeholders(const std::string& body);

/// Immutable set of versioned templates loaded from a directory containing
/// manifest.json plus one {id}.{version}.txt file per entry. Loading verifies
/// each file's checksum and that its placeholders match the manifest.
class TemplateLibrary {
public:
    static TemplateLibrary load(const std::filesystem::path& dir);

    const PromptTemplate& get(const std::string& id) const;  // TemplateError if absent
    std::size_t size() const { return templates_.size(); }

private:
    std::map<std::string, PromptTemplate> templates_;
};

/// "[x1,y1,x2,y2]" integer pixels.
std::string format_box(const BoundingBox& box);

/// Human text for relation labels as they appear inside prompts.
std::string relation_2d_text(Relation2D r);   // "to the left of", ...
std::string relation_3d_text(Relation3D r);   // "in front of" / "behind of"
std::string absolute_region_text(AbsoluteRegion r);  // "top left", ...

std::string render_reference_prompt(const TemplateLibrary& lib, const std::string& category);

std::string render_subclass_clause(const TemplateLibrary& lib, const std::string& cat_name,
                                   const std::string& fine_label);

std::string render_3d_relation_sentence(const TemplateLibrary& lib, const std::string& category_0,
                                        const BoundingBox& bbox_0, Relation3D relation,
                                        const std::string& category_1, const BoundingBox& bbox_1);

std::string render_2d_relation_sentence(const TemplateLibrary& lib, const std::string& category_0,
                                        const BoundingBox& bbox_0, Relation2D relation,
                                        const std::string& category_1, const BoundingBox& bbox_1);

std::string render_absolute_location_sentence(const TemplateLibrary& lib,
                                              const std::string& category,
                                              const BoundingBox& bbox, AbsoluteRegion region);

std::string render_hoi_sentence(const TemplateLibrary& lib, const HoiTriple& triple,
                                const std::string& object_category);

/// Region prompt sections, fixed order: reference caption, size + area
/// fraction, mean depth, emotion, OCR lines, subclass clause, closing
/// instruction. Requires attrs.reference_caption.
std::string build_region_prompt(const TemplateLibrary& lib, const ObjectAttributes& attrs);

struct RegionLine {
    BoundingBox box;
    std::string category;
    std::string caption;
};

/// Image prompt sections, fixed order: coordinate-format explanation,
/// whole-image reference caption (if any), one "region [box]: caption" line
/// per region, category counts, HOI sentences, absolute-location sentences,
/// 2D then 3D relation sentences, then the de-duplication and completeness
/// instructions. Relation indices refer to positions in regions.
std::string build_image_prompt(const TemplateLibrary& lib, const std::vector<RegionLine>& regions,
                               const RelationAttributes& relations, const ImageRef& image,
                               const std::optional<std::string>& reference_caption);

}  // namespace dce::prompting
