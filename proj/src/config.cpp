#include "dce/config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace dce::config {

namespace {

std::string ltrim(std::string s) {
    s.erase(s.begin(), std::find_if(s.begin(), s.end(),
                                    [](unsigned char c) { return !std::isspace(c); }));
    return s;
}

std::string rtrim(std::string s) {
    s.erase(std::find_if(s.rbegin(), s.rend(), [](unsigned char c) { return !std::isspace(c); })
                .base(),
            s.end());
    return s;
}

bool is_bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

[[noreturn]] void fail(std::size_t line_no, const std::string& message) {
    throw ConfigError("line " + std::to_string(line_no) + ": " + message);
}

// Remainder of a line after a value: only whitespace or a comment is allowed.
void expect_line_end(const std::string& rest, std::size_t line_no) {
    std::string tail = ltrim(rest);
    if (!tail.empty() && tail[0] != '#') fail(line_no, "unexpected trailing content: " + tail);
}

std::string parse_basic_string(const std::string& line, std::size_t& pos, std::size_t line_no) {
    std::string out;
    ++pos;  // opening quote
    while (pos < line.size()) {
        char c = line[pos];
        if (c == '"') {
            ++pos;
            return out;
        }
        if (c == '\\') {
            ++pos;
            if (pos >= line.size()) fail(line_no, "dangling escape in string");
            switch (line[pos]) {
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                default: fail(line_no, std::string("unsupported escape \\") + line[pos]);
            }
            ++pos;
            continue;
        }
        out += c;
        ++pos;
    }
    fail(line_no, "unterminated string");
}

TomlValue parse_scalar(const std::string& token, std::size_t line_no) {
    if (token == "true") return true;
    if (token == "false") return false;
    const bool looks_float = token.find_first_of(".eE") != std::string::npos;
    errno = 0;
    char* end = nullptr;
    if (looks_float) {
        double d = std::strtod(token.c_str(), &end);
        if (errno != 0 || end != token.c_str() + token.size()) {
            fail(line_no, "invalid number: " + token);
        }
        return d;
    }
    long long v = std::strtoll(token.c_str(), &end, 10);
    if (errno != 0 || end != token.c_str() + token.size() || end == token.c_str()) {
        fail(line_no, "invalid value: " + token);
    }
    return static_cast<std::int64_t>(v);
}

const char* type_name(const TomlValue& v) {
    switch (v.index()) {
        case 0: return "string";
        case 1: return "integer";
        case 2: return "float";
        default: return "boolean";
    }
}

}  // namespace

void TomlDocument::set(const std::string& key, TomlValue value) {
    if (!values_.emplace(key, std::move(value)).second) {
        throw ConfigError("duplicate key: " + key);
    }
}

bool TomlDocument::has(const std::string& key) const { return values_.count(key) != 0; }

const TomlValue* TomlDocument::find(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

std::string TomlDocument::get_string(const std::string& key) const {
    const TomlValue* v = find(key);
    if (!v) throw ConfigError("missing key: " + key);
    if (!std::holds_alternative<std::string>(*v)) {
        throw ConfigError("key " + key + " must be a string, got " + type_name(*v));
    }
    return std::get<std::string>(*v);
}

std::int64_t TomlDocument::get_int(const std::string& key) const {
    const TomlValue* v = find(key);
    if (!v) throw ConfigError("missing key: " + key);
    if (!std::holds_alternative<std::int64_t>(*v)) {
        throw ConfigError("key " + key + " must be an integer, got " + type_name(*v));
    }
    return std::get<std::int64_t>(*v);
}

double TomlDocument::get_double(const std::string& key) const {
    const TomlValue* v = find(key);
    if (!v) throw ConfigError("missing key: " + key);
    if (std::holds_alternative<double>(*v)) return std::get<double>(*v);
    if (std::holds_alternative<std::int64_t>(*v)) {
        return static_cast<double>(std::get<std::int64_t>(*v));
    }
    throw ConfigError("key " + key + " must be a number, got " + type_name(*v));
}

bool TomlDocument::get_bool(const std::string& key) const {
    const TomlValue* v = find(key);
    if (!v) throw ConfigError("missing key: " + key);
    if (!std::holds_alternative<bool>(*v)) {
        throw ConfigError("key " + key + " must be a boolean, got " + type_name(*v));
    }
    return std::get<bool>(*v);
}

std::string TomlDocument::get_string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
}

std::int64_t TomlDocument::get_int_or(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double TomlDocument::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool TomlDocument::get_bool_or(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
}

std::vector<std::string> TomlDocument::keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (auto it = values_.lower_bound(prefix); it != values_.end(); ++it) {
        if (it->first.compare(0, prefix.size(), prefix) != 0) break;
        out.push_back(it->first);
    }
    return out;
}

TomlDocument parse_toml(const std::string& text) {
    TomlDocument doc;
    std::istringstream in(text);
    std::string line;
    std::string prefix;
    std::size_t line_no = 0;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string body = ltrim(line);
        if (body.empty() || body[0] == '#') continue;

        if (body[0] == '[') {
            auto close = body.find(']');
            if (close == std::string::npos) fail(line_no, "unterminated table header");
            std::string name = rtrim(ltrim(body.substr(1, close - 1)));
            if (name.empty()) fail(line_no, "empty table name");
            for (char c : name) {
                if (!is_bare_key_char(c) && c != '.') {
                    fail(line_no, std::string("invalid character in table name: ") + c);
                }
            }
            if (name.front() == '.' || name.back() == '.' ||
                name.find("..") != std::string::npos) {
                fail(line_no, "malformed table name: " + name);
            }
            expect_line_end(body.substr(close + 1), line_no);
            prefix = name;
            continue;
        }

        std::size_t pos = 0;
        while (pos < body.size() && is_bare_key_char(body[pos])) ++pos;
        if (pos == 0) fail(line_no, "expected a key");
        std::string key = body.substr(0, pos);
        while (pos < body.size() && std::isspace(static_cast<unsigned char>(body[pos]))) ++pos;
        if (pos >= body.size() || body[pos] != '=') fail(line_no, "expected '=' after key " + key);
        ++pos;
        while (pos < body.size() && std::isspace(static_cast<unsigned char>(body[pos]))) ++pos;
        if (pos >= body.size()) fail(line_no, "missing value for key " + key);

        TomlValue value;
        if (body[pos] == '"') {
            value = parse_basic_string(body, pos, line_no);
            expect_line_end(body.substr(pos), line_no);
        } else {
            std::size_t end = pos;
            while (end < body.size() && body[end] != '#' &&
                   !std::isspace(static_cast<unsigned char>(body[end]))) {
                ++end;
            }
            value = parse_scalar(body.substr(pos, end - pos), line_no);
            expect_line_end(body.substr(end), line_no);
        }

        const std::string full = prefix.empty() ? key : prefix + "." + key;
        if (doc.has(full)) fail(line_no, "duplicate key: " + full);
        doc.set(full, std::move(value));
    }
    return doc;
}

TomlDocument load_toml(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config file not readable: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_toml(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

pipeline::PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    const TomlDocument doc = load_toml(path);
    const std::filesystem::path base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp = p;
        return fp.is_absolute() ? fp : base / fp;
    };

    std::set<std::string> known;
    auto know = [&](const std::string& key) {
        known.insert(key);
        return key;
    };

    pipeline::PipelineConfig cfg;
    auto& geo = cfg.geometry;
    geo.nms_iou_threshold = doc.get_double_or(know("geometry.nms_iou_threshold"),
                                              geo.nms_iou_threshold);
    geo.detection_confidence_threshold = doc.get_double_or(
        know("geometry.detection_confidence_threshold"), geo.detection_confidence_threshold);
    geo.near_distance_fraction =
        doc.get_double_or(know("geometry.near_distance_fraction"), geo.near_distance_fraction);
    geo.depth_margin_fraction =
        doc.get_double_or(know("geometry.depth_margin_fraction"), geo.depth_margin_fraction);
    geo.size_small_fraction =
        doc.get_double_or(know("geometry.size_small_fraction"), geo.size_small_fraction);
    geo.size_large_fraction =
        doc.get_double_or(know("geometry.size_large_fraction"), geo.size_large_fraction);
    geo.crop_expand_factor =
        doc.get_double_or(know("geometry.crop_expand_factor"), geo.crop_expand_factor);
    geo.pair_count = static_cast<int>(doc.get_int_or(know("geometry.pair_count"), geo.pair_count));
    geo.rng_seed = static_cast<std::uint64_t>(
        doc.get_int_or(know("geometry.rng_seed"), static_cast<std::int64_t>(geo.rng_seed)));

    for (const char* key :
         {"geometry.nms_iou_threshold", "geometry.detection_confidence_threshold",
          "geometry.near_distance_fraction", "geometry.depth_margin_fraction",
          "geometry.size_small_fraction", "geometry.size_large_fraction",
          "geometry.crop_expand_factor"}) {
        double v = doc.get_double_or(key, 0.0);
        if (doc.has(key) && (v < 0.0 || v > 1.0)) {
            throw ConfigError(std::string(key) + " must lie in [0,1]");
        }
    }
    if (geo.size_small_fraction >= geo.size_large_fraction) {
        throw ConfigError("geometry.size_small_fraction must be below size_large_fraction");
    }
    if (geo.pair_count < 0) throw ConfigError("geometry.pair_count must be non-negative");

    cfg.region_concurrency =
        static_cast<int>(doc.get_int_or(know("pipeline.region_concurrency"), 8));
    cfg.image_concurrency = static_cast<int>(doc.get_int_or(know("pipeline.image_concurrency"), 4));
    try {
        cfg.fail_policy =
            pipeline::fail_policy_from_string(doc.get_string_or(know("pipeline.fail_policy"),
                                                                "degrade"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    const std::string template_dir = doc.get_string(know("pipeline.template_dir"));
    cfg.templates = std::make_shared<const prompting::TemplateLibrary>(
        prompting::TemplateLibrary::load(resolve(template_dir)));

    if (doc.has(know("pipeline.fixtures"))) {
        cfg.fixtures = std::make_shared<const specialists::FixtureStore>(
            specialists::FixtureStore::load(resolve(doc.get_string("pipeline.fixtures"))));
    }
    if (doc.has(know("pipeline.depth_base_dir"))) {
        cfg.depth_base_dir = resolve(doc.get_string("pipeline.depth_base_dir"));
    }
    if (doc.has(know("pipeline.routing"))) {
        cfg.router = std::make_shared<const specialists::FineGrainedRouter>(
            specialists::FineGrainedRouter::load(resolve(doc.get_string("pipeline.routing"))));
    }

    std::set<std::string> endpoint_tables;
    for (const auto& key : doc.keys_with_prefix("endpoints.")) {
        auto rest = key.substr(std::string("endpoints.").size());
        auto dot = rest.find('.');
        if (dot == std::string::npos) {
            throw ConfigError("malformed endpoint key: " + key);
        }
        endpoint_tables.insert(rest.substr(0, dot));
    }
    for (const auto& name : endpoint_tables) {
        specialists::SpecialistKind kind;
        try {
            kind = specialists::specialist_kind_from_string(name);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        const std::string t = "endpoints." + name + ".";
        specialists::SpecialistEndpoint ep;
        ep.kind = kind;
        const std::string backend = doc.get_string(know(t + "backend"));
        if (backend == "fixture") {
            ep.backend = specialists::Backend::fixture;
        } else if (backend == "remote") {
            ep.backend = specialists::Backend::remote;
        } else {
            throw ConfigError(t + "backend must be \"fixture\" or \"remote\", got \"" + backend +
                              "\"");
        }
        if (doc.has(know(t + "base_url"))) ep.base_url = doc.get_string(t + "base_url");
        if (ep.backend == specialists::Backend::remote && !ep.base_url) {
            throw ConfigError(t + "base_url is required for a remote backend");
        }
        ep.model_name = doc.get_string_or(know(t + "model_name"), "");
        ep.timeout_ms = static_cast<int>(doc.get_int_or(know(t + "timeout_ms"), ep.timeout_ms));
        ep.max_retries = static_cast<int>(doc.get_int_or(know(t + "max_retries"), ep.max_retries));
        if (ep.timeout_ms <= 0) throw ConfigError(t + "timeout_ms must be positive");
        if (ep.max_retries < 0) throw ConfigError(t + "max_retries must be non-negative");
        cfg.endpoints[kind] = ep;
    }

    for (const auto& [key, value] : doc.entries()) {
        (void)value;
        if (!known.count(key)) throw ConfigError("unknown key: " + key);
    }
    return cfg;
}

}  // namespace dce::config
