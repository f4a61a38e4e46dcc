#include "dce/specialists.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <thread>
#include <utility>

#include <httplib.h>

namespace dce::specialists {

namespace {

constexpr std::pair<SpecialistKind, const char*> kKindNames[] = {
    {SpecialistKind::detector_in_domain, "detector_in_domain"},
    {SpecialistKind::detector_open_world, "detector_open_world"},
    {SpecialistKind::depth, "depth"},
    {SpecialistKind::emotion, "emotion"},
    {SpecialistKind::ocr, "ocr"},
    {SpecialistKind::fg_animal, "fg_animal"},
    {SpecialistKind::fg_plant, "fg_plant"},
    {SpecialistKind::fg_aircraft, "fg_aircraft"},
    {SpecialistKind::fg_logo, "fg_logo"},
    {SpecialistKind::fg_landmark, "fg_landmark"},
    {SpecialistKind::fg_food, "fg_food"},
    {SpecialistKind::fg_celebrity, "fg_celebrity"},
    {SpecialistKind::hoi, "hoi"},
    {SpecialistKind::vlm_region, "vlm_region"},
    {SpecialistKind::llm_compose, "llm_compose"},
};

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

const nlohmann::json& require_field(const nlohmann::json& j, const char* key,
                                    const std::string& ctx) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        throw SpecialistProtocolError(ctx + ": missing field \"" + key + "\"");
    }
    return *it;
}

std::string require_string(const nlohmann::json& j, const char* key, const std::string& ctx,
                           bool allow_empty = false) {
    const auto& v = require_field(j, key, ctx);
    if (!v.is_string()) throw SpecialistProtocolError(ctx + ": field \"" + key + "\" must be a string");
    auto s = v.get<std::string>();
    if (s.empty() && !allow_empty) {
        throw SpecialistProtocolError(ctx + ": field \"" + key + "\" must be non-empty");
    }
    return s;
}

double require_confidence(const nlohmann::json& j, const char* key, const std::string& ctx) {
    const auto& v = require_field(j, key, ctx);
    if (!v.is_number()) throw SpecialistProtocolError(ctx + ": field \"" + key + "\" must be a number");
    double c = v.get<double>();
    if (c < 0.0 || c > 1.0) {
        throw SpecialistProtocolError(ctx + ": field \"" + key + "\" out of range [0,1]");
    }
    return c;
}

BoundingBox require_box(const nlohmann::json& v, const std::string& ctx) {
    if (!v.is_array() || v.size() != 4) {
        throw SpecialistProtocolError(ctx + ": box must be an array [x1,y1,x2,y2]");
    }
    for (const auto& e : v) {
        if (!e.is_number_integer()) {
            throw SpecialistProtocolError(ctx + ": box coordinates must be integers");
        }
    }
    BoundingBox b{v[0].get<int>(), v[1].get<int>(), v[2].get<int>(), v[3].get<int>()};
    if (b.x1 >= b.x2 || b.y1 >= b.y2) {
        throw SpecialistProtocolError(ctx + ": box is not well-formed");
    }
    return b;
}

BoundingBox require_box_field(const nlohmann::json& j, const char* key, const std::string& ctx) {
    return require_box(require_field(j, key, ctx), ctx + " \"" + key + "\"");
}

nlohmann::json box_to_json(const BoundingBox& b) {
    return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2});
}

}  // namespace

const char* to_string(SpecialistKind kind) {
    for (const auto& [k, name] : kKindNames) {
        if (k == kind) return name;
    }
    return "unknown";
}

SpecialistKind specialist_kind_from_string(const std::string& s) {
    for (const auto& [k, name] : kKindNames) {
        if (s == name) return k;
    }
    throw std::invalid_argument("unknown specialist kind: " + s);
}

const std::vector<SpecialistKind>& all_specialist_kinds() {
    static const std::vector<SpecialistKind> kinds = [] {
        std::vector<SpecialistKind> v;
        for (const auto& [k, name] : kKindNames) v.push_back(k);
        return v;
    }();
    return kinds;
}

nlohmann::json request_to_json(const SpecialistRequest& req) {
    nlohmann::json j;
    j["image_id"] = req.image_id;
    j["image_path"] = req.image_path;
    if (req.box) j["box"] = box_to_json(*req.box);
    if (req.category) j["category"] = *req.category;
    if (req.prompt) j["prompt"] = *req.prompt;
    return j;
}

SpecialistRequest request_from_json(const nlohmann::json& j) {
    const std::string ctx = "specialist request";
    SpecialistRequest req;
    const auto& id = require_field(j, "image_id", ctx);
    if (!id.is_number_integer()) {
        throw SpecialistProtocolError(ctx + ": field \"image_id\" must be an integer");
    }
    req.image_id = id.get<std::int64_t>();
    req.image_path = require_string(j, "image_path", ctx, /*allow_empty=*/true);
    if (auto it = j.find("box"); it != j.end() && !it->is_null()) {
        req.box = require_box(*it, ctx + " \"box\"");
    }
    if (auto it = j.find("category"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw SpecialistProtocolError(ctx + ": field \"category\" must be a string");
        req.category = it->get<std::string>();
    }
    if (auto it = j.find("prompt"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw SpecialistProtocolError(ctx + ": field \"prompt\" must be a string");
        req.prompt = it->get<std::string>();
    }
    return req;
}

std::string fixture_fingerprint(SpecialistKind kind, const SpecialistRequest& req) {
    std::string fp = to_string(kind);
    fp += '|';
    fp += std::to_string(req.image_id);
    fp += '|';
    if (req.box) {
        fp += std::to_string(req.box->x1) + ',' + std::to_string(req.box->y1) + ',' +
              std::to_string(req.box->x2) + ',' + std::to_string(req.box->y2);
    } else {
        fp += '-';
    }
    fp += '|';
    if (req.category) fp += *req.category;
    return fp;
}

SpecialistResponse parse_specialist_response(SpecialistKind kind, const nlohmann::json& body,
                                             DetectionSource detection_source) {
    const std::string ctx = std::string(to_string(kind)) + " response";
    if (!body.is_object()) throw SpecialistProtocolError(ctx + ": body must be a JSON object");

    switch (kind) {
        case SpecialistKind::detector_in_domain:
        case SpecialistKind::detector_open_world: {
            DetectionsResponse out;
            const auto& dets = require_field(body, "detections", ctx);
            if (!dets.is_array()) throw SpecialistProtocolError(ctx + ": \"detections\" must be an array");
            for (const auto& d : dets) {
                Detection det;
                det.box = require_box_field(d, "box", ctx);
                det.category = require_string(d, "category", ctx);
                det.confidence = require_confidence(d, "confidence", ctx);
                det.source = detection_source;
                out.detections.push_back(std::move(det));
            }
            return out;
        }
        case SpecialistKind::depth: {
            DepthResponse out;
            const auto& w = require_field(body, "width", ctx);
            const auto& h = require_field(body, "height", ctx);
            if (!w.is_number_integer() || !h.is_number_integer()) {
                throw SpecialistProtocolError(ctx + ": width/height must be integers");
            }
            out.width = w.get<int>();
            out.height = h.get<int>();
            if (out.width <= 0 || out.height <= 0) {
                throw SpecialistProtocolError(ctx + ": width/height must be positive");
            }
            out.depth_uri = require_string(body, "depth_uri", ctx);
            return out;
        }
        case SpecialistKind::emotion:
        case SpecialistKind::fg_animal:
        case SpecialistKind::fg_plant:
        case SpecialistKind::fg_aircraft:
        case SpecialistKind::fg_logo:
        case SpecialistKind::fg_landmark:
        case SpecialistKind::fg_food:
        case SpecialistKind::fg_celebrity: {
            LabelResponse out;
            out.label = require_string(body, "label", ctx);
            out.confidence = require_confidence(body, "confidence", ctx);
            return out;
        }
        case SpecialistKind::ocr: {
            OcrResponse out;
            const auto& items = require_field(body, "items", ctx);
            if (!items.is_array()) throw SpecialistProtocolError(ctx + ": \"items\" must be an array");
            for (const auto& item : items) {
                OcrResponseItem o;
                o.text = require_string(item, "text", ctx);
                o.box = require_box_field(item, "box", ctx);
                o.confidence = require_confidence(item, "confidence", ctx);
                out.items.push_back(std::move(o));
            }
            return out;
        }
        case SpecialistKind::hoi: {
            HoiResponse out;
            const auto& triples = require_field(body, "triples", ctx);
            if (!triples.is_array()) throw SpecialistProtocolError(ctx + ": \"triples\" must be an array");
            for (const auto& t : triples) {
                HoiTriple triple;
                triple.person_box = require_box_field(t, "person_box", ctx);
                triple.object_box = require_box_field(t, "object_box", ctx);
                triple.verb = require_string(t, "verb", ctx);
                triple.confidence = require_confidence(t, "confidence", ctx);
                out.triples.push_back(std::move(triple));
            }
            return out;
        }
        case SpecialistKind::vlm_region:
        case SpecialistKind::llm_compose: {
            TextResponse out;
            out.text = require_string(body, "text", ctx, /*allow_empty=*/true);
            return out;
        }
    }
    throw SpecialistProtocolError(ctx + ": unhandled kind");
}

FixtureStore FixtureStore::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("fixture file not readable: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("fixture file " + path.string() + ": " + e.what());
    }
    const auto& fixtures = doc.find("fixtures");
    if (fixtures == doc.end() || !fixtures->is_array()) {
        throw std::runtime_error("fixture file " + path.string() + ": missing \"fixtures\" array");
    }
    FixtureStore store;
    std::size_t index = 0;
    for (const auto& f : *fixtures) {
        const std::string ctx = "fixture file " + path.string() + " fixtures[" + std::to_string(index) + "]";
        try {
            SpecialistKind kind = specialist_kind_from_string(require_string(f, "kind", ctx));
            SpecialistRequest req;
            const auto& id = require_field(f, "image_id", ctx);
            if (!id.is_number_integer()) throw std::runtime_error(ctx + ": image_id must be an integer");
            req.image_id = id.get<std::int64_t>();
            if (auto it = f.find("box"); it != f.end() && !it->is_null()) {
                req.box = require_box(*it, ctx);
            }
            if (auto it = f.find("category"); it != f.end() && !it->is_null()) {
                req.category = it->get<std::string>();
            }
            store.responses_[fixture_fingerprint(kind, req)] = require_field(f, "response", ctx);
        } catch (const SpecialistProtocolError& e) {
            throw std::runtime_error(e.what());
        }
        ++index;
    }
    return store;
}

void FixtureStore::put(SpecialistKind kind, const SpecialistRequest& req, nlohmann::json response) {
    responses_[fixture_fingerprint(kind, req)] = std::move(response);
}

const nlohmann::json* FixtureStore::find(const std::string& fingerprint) const {
    auto it = responses_.find(fingerprint);
    return it == responses_.end() ? nullptr : &it->second;
}

SpecialistClient::SpecialistClient(SpecialistEndpoint endpoint,
                                   std::shared_ptr<const FixtureStore> store)
    : endpoint_(std::move(endpoint)), store_(std::move(store)) {
    if (endpoint_.backend == Backend::remote && !endpoint_.base_url) {
        throw std::invalid_argument("remote endpoint requires base_url");
    }
    if (endpoint_.backend == Backend::fixture && !store_) {
        throw std::invalid_argument("fixture endpoint requires a fixture store");
    }
}

nlohmann::json SpecialistClient::fetch_fixture(const SpecialistRequest& req) const {
    const std::string fp = fixture_fingerprint(endpoint_.kind, req);
    const nlohmann::json* found = store_->find(fp);
    if (!found) throw FixtureMiss("no fixture for " + fp);
    return *found;
}

nlohmann::json SpecialistClient::fetch_remote(const SpecialistRequest& req) const {
    const std::string path = std::string("/v1/") + to_string(endpoint_.kind);
    const std::string body = request_to_json(req).dump();
    std::chrono::milliseconds timeout(endpoint_.timeout_ms);
    std::chrono::milliseconds backoff(500);
    std::string last_error;

    for (int attempt = 0;; ++attempt) {
        httplib::Client cli(*endpoint_.base_url);
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        cli.set_write_timeout(timeout);
        auto res = cli.Post(path, body, "application/json");
        if (res) {
            if (res->status == 200) {
                try {
                    return nlohmann::json::parse(res->body);
                } catch (const nlohmann::json::exception& e) {
                    throw SpecialistProtocolError(std::string(to_string(endpoint_.kind)) +
                                                  " response: invalid JSON: " + e.what());
                }
            }
            if (res->status == 404) {
                throw FixtureMiss(std::string(to_string(endpoint_.kind)) + " " + path +
                                  ": 404 fixture miss");
            }
            throw SpecialistUnavailable(std::string(to_string(endpoint_.kind)) + " " + path +
                                        ": HTTP " + std::to_string(res->status));
        }
        last_error = httplib::to_string(res.error());
        if (attempt >= endpoint_.max_retries) break;
        retries_.fetch_add(1);
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
    throw SpecialistUnavailable(std::string(to_string(endpoint_.kind)) + " " + path +
                                ": transport failed after " +
                                std::to_string(endpoint_.max_retries + 1) +
                                " attempts (" + last_error + ")");
}

SpecialistResponse SpecialistClient::call(const SpecialistRequest& req) const {
    calls_.fetch_add(1);
    nlohmann::json body = endpoint_.backend == Backend::fixture ? fetch_fixture(req)
                                                                : fetch_remote(req);
    DetectionSource source = endpoint_.kind == SpecialistKind::detector_open_world
                                 ? DetectionSource::open_world
                                 : DetectionSource::in_domain;
    return parse_specialist_response(endpoint_.kind, body, source);
}

SpecialistResponse call_specialist(const SpecialistEndpoint& endpoint,
                                   const SpecialistRequest& req,
                                   std::shared_ptr<const FixtureStore> store) {
    return SpecialistClient(endpoint, std::move(store)).call(req);
}

FineGrainedRouter FineGrainedRouter::defaults() {
    static const std::pair<const char*, SpecialistKind> kRoutes[] = {
        {"dog", SpecialistKind::fg_animal},         {"cat", SpecialistKind::fg_animal},
        {"bird", SpecialistKind::fg_animal},        {"horse", SpecialistKind::fg_animal},
        {"sheep", SpecialistKind::fg_animal},       {"cow", SpecialistKind::fg_animal},
        {"elephant", SpecialistKind::fg_animal},    {"bear", SpecialistKind::fg_animal},
        {"zebra", SpecialistKind::fg_animal},       {"giraffe", SpecialistKind::fg_animal},
        {"animal", SpecialistKind::fg_animal},      {"potted plant", SpecialistKind::fg_plant},
        {"plant", SpecialistKind::fg_plant},        {"tree", SpecialistKind::fg_plant},
        {"flower", SpecialistKind::fg_plant},       {"airplane", SpecialistKind::fg_aircraft},
        {"aircraft", SpecialistKind::fg_aircraft},  {"pizza", SpecialistKind::fg_food},
        {"cake", SpecialistKind::fg_food},          {"sandwich", SpecialistKind::fg_food},
        {"banana", SpecialistKind::fg_food},        {"apple", SpecialistKind::fg_food},
        {"orange", SpecialistKind::fg_food},        {"broccoli", SpecialistKind::fg_food},
        {"carrot", SpecialistKind::fg_food},        {"hot dog", SpecialistKind::fg_food},
        {"donut", SpecialistKind::fg_food},         {"food", SpecialistKind::fg_food},
        {"person", SpecialistKind::fg_celebrity},
    };
    FineGrainedRouter router;
    for (const auto& [category, kind] : kRoutes) router.table_[category] = kind;
    return router;
}

FineGrainedRouter FineGrainedRouter::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("routing file not readable: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("routing file " + path.string() + ": " + e.what());
    }
    auto routes = doc.find("routes");
    if (routes == doc.end() || !routes->is_object()) {
        throw std::runtime_error("routing file " + path.string() + ": missing \"routes\" object");
    }
    FineGrainedRouter router;
    for (const auto& [category, kind] : routes->items()) {
        if (!kind.is_string()) {
            throw std::runtime_error("routing file " + path.string() + ": route \"" + category +
                                     "\" must name a specialist kind");
        }
        router.table_[lowercase(category)] = specialist_kind_from_string(kind.get<std::string>());
    }
    return router;
}

std::optional<SpecialistKind> FineGrainedRouter::route(const std::string& coarse_category) const {
    auto it = table_.find(lowercase(coarse_category));
    if (it == table_.end()) return std::nullopt;
    return it->second;
}

std::optional<SpecialistKind> route_fine_grained(const std::string& coarse_category) {
    static const FineGrainedRouter router = FineGrainedRouter::defaults();
    return router.route(coarse_category);
}

bool gate_emotion(const std::string& category) {
    return lowercase(category) == "person";
}

struct FixtureServer::Impl {
    std::shared_ptr<const FixtureStore> store;
    httplib::Server server;
    std::thread listener;
};

FixtureServer::FixtureServer(std::shared_ptr<const FixtureStore> store, int port)
    : impl_(std::make_unique<Impl>()) {
    if (!store) throw std::invalid_argument("fixture server requires a store");
    impl_->store = std::move(store);

    impl_->server.Post(R"(/v1/([a-z_]+))", [impl = impl_.get()](const httplib::Request& req,
                                                                httplib::Response& res) {
        auto reply = [&res](int status, const nlohmann::json& body) {
            res.status = status;
            res.set_content(body.dump(), "application/json");
        };
        SpecialistKind kind;
        try {
            kind = specialist_kind_from_string(req.matches[1].str());
        } catch (const std::invalid_argument&) {
            reply(404, {{"error", "FixtureMiss"}, {"detail", "unknown kind"}});
            return;
        }
        SpecialistRequest request;
        try {
            request = request_from_json(nlohmann::json::parse(req.body));
        } catch (const std::exception& e) {
            reply(400, {{"error", "BadRequest"}, {"detail", e.what()}});
            return;
        }
        const std::string fp = fixture_fingerprint(kind, request);
        const nlohmann::json* found = impl->store->find(fp);
        if (!found) {
            reply(404, {{"error", "FixtureMiss"}, {"fingerprint", fp}});
            return;
        }
        reply(200, *found);
    });

    const char* host = "127.0.0.1";
    if (port == 0) {
        port_ = impl_->server.bind_to_any_port(host);
        if (port_ < 0) throw std::runtime_error("fixture server: failed to bind an ephemeral port");
    } else {
        if (!impl_->server.bind_to_port(host, port)) {
            throw std::runtime_error("fixture server: failed to bind port " + std::to_string(port));
        }
        port_ = port;
    }
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

FixtureServer::~FixtureServer() {
    stop();
    if (impl_->listener.joinable()) impl_->listener.join();
}

void FixtureServer::stop() { impl_->server.stop(); }

void FixtureServer::wait() {
    if (impl_->listener.joinable()) impl_->listener.join();
}

std::unique_ptr<FixtureServer> serve_fixtures(std::shared_ptr<const FixtureStore> store, int port) {
    return std::make_unique<FixtureServer>(std::move(store), port);
}

}  // namespace dce::specialists
