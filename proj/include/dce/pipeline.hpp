#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dce/dataset_io.hpp"
#include "dce/geometry.hpp"
#include "dce/prompting.hpp"
#include "dce/specialists.hpp"
#include "dce/types.hpp"

namespace dce::pipeline {

enum class FailPolicy { degrade, abort };

const char* to_string(FailPolicy policy);
FailPolicy fail_policy_from_string(const std::string& s);

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PipelineConfig {
    geometry::GeometryConfig geometry;
    std::map<specialists::SpecialistKind, specialists::SpecialistEndpoint> endpoints;
    int region_concurrency = 8;  // max concurrent specialist calls per image
    int image_concurrency = 4;
    FailPolicy fail_policy = FailPolicy::degrade;

    std::filesystem::path images_root;    // prefixed to ImageRef.file_name
    std::filesystem::path depth_base_dir;  // resolves relative depth_uri values

    std::shared_ptr<const prompting::TemplateLibrary> templates;  // required
    std::shared_ptr<const specialists::FixtureStore> fixtures;    // for fixture backends
    std::shared_ptr<const specialists::FineGrainedRouter> router;  // defaults when null
    // When set, detector endpoints are bypassed and these detections feed the
    // merge step instead.
    std::shared_ptr<const std::map<std::int64_t, std::vector<Detection>>> oracle_detections;
};

struct RunSummary {
    std::size_t images_total = 0;
    std::size_t ok = 0;
    std::size_t degraded = 0;
    std::size_t failed = 0;
    std::size_t skipped_resume = 0;
    double wall_time = 0.0;  // seconds
};

/// Orchestrates the full flow for one image: detect and merge, fetch depth
/// once, extract per-region attributes concurrently, caption each region,
/// derive relations, compose the final caption. Construction validates that
/// every specialist kind has an endpoint and builds shareable clients.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg);

    CaptionRecord process_image(const ImageRef& image) const;

    /// Appends one record per image as JSONL; with resume, ids already in the
    /// output are skipped (a malformed trailing line is truncated first, with
    /// a warning). Progress goes to stderr, one line per completed image.
    RunSummary run_batch(const io::DatasetIndex& index, const std::filesystem::path& output_path,
                         bool resume) const;

    const PipelineConfig& config() const { return cfg_; }

private:
    const specialists::SpecialistClient& client(specialists::SpecialistKind kind) const;
    std::string image_path_for(const ImageRef& image) const;

    PipelineConfig cfg_;
    std::map<specialists::SpecialistKind, std::unique_ptr<specialists::SpecialistClient>> clients_;
    std::shared_ptr<const specialists::FineGrainedRouter> router_;
};

CaptionRecord process_image(const ImageRef& image, const PipelineConfig& cfg);

RunSummary run_batch(const io::DatasetIndex& index, const PipelineConfig& cfg,
                     const std::filesystem::path& output_path, bool resume);

}  // namespace dce::pipeline
