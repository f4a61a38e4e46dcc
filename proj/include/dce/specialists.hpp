#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dce/types.hpp"

namespace dce::specialists {

enum class SpecialistKind {
    detector_in_domain,
    detector_open_world,
    depth,
    emotion,
    ocr,
    fg_animal,
    fg_plant,
    fg_aircraft,
    fg_logo,
    fg_landmark,
    fg_food,
    fg_celebrity,
    hoi,
    vlm_region,
    llm_compose
};

const char* to_string(SpecialistKind kind);
SpecialistKind specialist_kind_from_string(const std::string& s);
const std::vector<SpecialistKind>& all_specialist_kinds();

enum class Backend { remote, fixture };

struct SpecialistEndpoint {
    SpecialistKind kind = SpecialistKind::detector_in_domain;
    Backend backend = Backend::fixture;
    std::optional<std::string> base_url;  // required for remote
    std::string model_name;               // recorded for provenance only
    int timeout_ms = 10000;
    int max_retries = 3;
};

/// Wire request: POST /v1/{kind} with this body as JSON.
struct SpecialistRequest {
    std::int64_t image_id = 0;
    std::string image_path;
    std::optional<BoundingBox> box;
    std::optional<std::string> category;
    std::optional<std::string> prompt;
};

nlohmann::json request_to_json(const SpecialistRequest& req);
SpecialistRequest request_from_json(const nlohmann::json& j);

/// Lookup key for canned responses: kind, image id, box, and the category as
/// the extra discriminator. Prompt text is deliberately excluded so fixtures
/// stay stable across prompt revisions.
std::string fixture_fingerprint(SpecialistKind kind, const SpecialistRequest& req);

class SpecialistError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SpecialistUnavailable : public SpecialistError {
public:
    using SpecialistError::SpecialistError;
};

class SpecialistProtocolError : public SpecialistError {
public:
    using SpecialistError::SpecialistError;
};

class FixtureMiss : public SpecialistError {
public:
    using SpecialistError::SpecialistError;
};

// Typed response documents, one shape per kind family.
struct DetectionsResponse {
    std::vector<Detection> detections;
};

struct DepthResponse {
    int width = 0;
    int height = 0;
    std::string depth_uri;  // names a depth-map file in the engine's binary format
};

struct LabelResponse {  // emotion and all fine-grained kinds
    std::string label;
    double confidence = 0.0;
};

struct OcrResponseItem {
    std::string text;
    BoundingBox box;  // absolute image pixels
    double confidence = 0.0;
};

struct OcrResponse {
    std::vector<OcrResponseItem> items;
};

struct HoiResponse {
    std::vector<HoiTriple> triples;
};

struct TextResponse {  // vlm_region and llm_compose
    std::string text;
};

using SpecialistResponse = std::variant<DetectionsResponse, DepthResponse, LabelResponse,
                                        OcrResponse, HoiResponse, TextResponse>;

/// Validates a raw response body against the kind's schema.
/// Throws SpecialistProtocolError on any missing or ill-typed field.
SpecialistResponse parse_specialist_response(SpecialistKind kind, const nlohmann::json& body,
                                             DetectionSource detection_source);

/// Immutable set of canned responses keyed by fixture_fingerprint.
class FixtureStore {
public:
    static FixtureStore load(const std::filesystem::path& path);

    void put(SpecialistKind kind, const SpecialistRequest& req, nlohmann::json response);
    const nlohmann::json* find(const std::string& fingerprint) const;
    std::size_t size() const { return responses_.size(); }

private:
    std::map<std::string, nlohmann::json> responses_;
};

/// One client per endpoint; shareable across threads. Remote calls retry on
/// transport failure with exponential backoff (base 500 ms, x2); well-formed
/// error responses are never retried.
class SpecialistClient {
public:
    explicit SpecialistClient(SpecialistEndpoint endpoint,
                              std::shared_ptr<const FixtureStore> store = nullptr);

    SpecialistResponse call(const SpecialistRequest& req) const;

    const SpecialistEndpoint& endpoint() const { return endpoint_; }
    std::uint64_t calls() const { return calls_.load(); }
    std::uint64_t retries() const { return retries_.load(); }

private:
    nlohmann::json fetch_fixture(const SpecialistRequest& req) const;
    nlohmann::json fetch_remote(const SpecialistRequest& req) const;

    SpecialistEndpoint endpoint_;
    std::shared_ptr<const FixtureStore> store_;
    mutable std::atomic<std::uint64_t> calls_{0};
    mutable std::atomic<std::uint64_t> retries_{0};
};

SpecialistResponse call_specialist(const SpecialistEndpoint& endpoint,
                                   const SpecialistRequest& req,
                                   std::shared_ptr<const FixtureStore> store = nullptr);

/// Maps a coarse detector category to the fine-grained recognizer responsible
/// for it, if any. The table is a loadable asset; defaults are shipped.
class FineGrainedRouter {
public:
    static FineGrainedRouter defaults();
    static FineGrainedRouter load(const std::filesystem::path& path);

    std::optional<SpecialistKind> route(const std::string& coarse_category) const;

private:
    std::map<std::string, SpecialistKind> table_;  // lowercase category
};

/// Routing with the shipped default table.
std::optional<SpecialistKind> route_fine_grained(const std::string& coarse_category);

/// Emotion extraction applies only to "person" regions (case-insensitive).
bool gate_emotion(const std::string& category);

/// HTTP server answering the wire protocol from a fixture store. Unknown
/// fingerprints get 404 with a FixtureMiss body. port 0 binds an ephemeral
/// port.
class FixtureServer {
public:
    FixtureServer(std::shared_ptr<const FixtureStore> store, int port);
    ~FixtureServer();

    FixtureServer(const FixtureServer&) = delete;
    FixtureServer& operator=(const FixtureServer&) = delete;

    int port() const { return port_; }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    void stop();
    void wait();  // blocks until stop() is called (used by the CLI)

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

std::unique_ptr<FixtureServer> serve_fixtures(std::shared_ptr<const FixtureStore> store, int port);

}  // namespace dce::specialists
