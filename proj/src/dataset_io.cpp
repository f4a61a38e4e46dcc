#include "dce/dataset_io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <set>

#include "dce/json_codec.hpp"

namespace dce::io {

using nlohmann::json;

DatasetIndex load_coco_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IndexError("cannot open index file: " + path.string());

    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw IndexError("malformed JSON in " + path.string() + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array())
        throw IndexError("index file has no \"images\" array: " + path.string());

    DatasetIndex index;
    index.root = path.parent_path();
    std::set<std::int64_t> seen;
    std::size_t entry_no = 0;
    for (const auto& e : doc["images"]) {
        ++entry_no;
        const std::string where = "images[" + std::to_string(entry_no - 1) + "]";
        for (const char* field : {"id", "file_name", "width", "height"})
            if (!e.contains(field))
                throw IndexError(where + " missing field \"" + field + "\"");
        ImageRef ref;
        try {
            ref.id = e["id"].get<std::int64_t>();
            ref.file_name = e["file_name"].get<std::string>();
            ref.width = e["width"].get<int>();
            ref.height = e["height"].get<int>();
        } catch (const json::exception& ex) {
            throw IndexError(where + " has a field of the wrong type: " + ex.what());
        }
        if (ref.file_name.empty()) throw IndexError(where + " has empty file_name");
        if (ref.width <= 0 || ref.height <= 0)
            throw IndexError(where + " has non-positive dimensions");
        if (!seen.insert(ref.id).second)
            throw IndexError(where + " duplicates image id " + std::to_string(ref.id));
        index.images.push_back(std::move(ref));
    }
    return index;
}

namespace {

constexpr char kDepthMagic[4] = {'D', 'C', 'E', 'D'};
constexpr unsigned char kDepthVersion = 0x01;

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {
        static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8 & 0xff),
        static_cast<unsigned char>(v >> 16 & 0xff), static_cast<unsigned char>(v >> 24 & 0xff)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

float float_from_le(const unsigned char* p) {
    const std::uint32_t bits = read_u32_le(p);
    float f;
    static_assert(sizeof(f) == 4);
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

DepthMap load_depth_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open depth map: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < 13 || std::memcmp(bytes.data(), kDepthMagic, 4) != 0)
        throw FormatError("bad depth map magic in " + path.string());
    if (bytes[4] != kDepthVersion)
        throw FormatError("unsupported depth map version in " + path.string());

    DepthMap map;
    map.width = static_cast<int>(read_u32_le(bytes.data() + 5));
    map.height = static_cast<int>(read_u32_le(bytes.data() + 9));
    const std::size_t n = static_cast<std::size_t>(map.width) * map.height;
    if (bytes.size() != 13 + n * 4)
        throw FormatError("depth map payload size mismatch in " + path.string());

    map.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float v = float_from_le(bytes.data() + 13 + i * 4);
        if (!std::isfinite(v) || v < 0.0f)
            throw FormatError("non-finite or negative depth value in " + path.string());
        map.values[i] = v;
    }
    return map;
}

void write_depth_map(const std::filesystem::path& path, const DepthMap& map) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open depth map for writing: " + path.string());
    out.write(kDepthMagic, 4);
    out.put(static_cast<char>(kDepthVersion));
    write_u32_le(out, static_cast<std::uint32_t>(map.width));
    write_u32_le(out, static_cast<std::uint32_t>(map.height));
    for (float v : map.values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32_le(out, bits);
    }
    if (!out) throw FormatError("write failed: " + path.string());
}

std::map<std::int64_t, std::vector<Detection>> load_oracle_detections(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open oracle detections: " + path.string());

    std::map<std::int64_t, std::vector<Detection>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(where + ": malformed JSON: " + e.what());
        }
        try {
            const auto image_id = doc.at("image_id").get<std::int64_t>();
            std::vector<Detection> dets;
            for (const auto& d : doc.at("detections")) {
                Detection det;
                det.box = bounding_box_from_json(d.at("box"));
                det.category = d.at("category").get<std::string>();
                det.confidence = d.at("confidence").get<double>();
                det.source = DetectionSource::oracle_file;
                if (d.contains("source") &&
                    d["source"].get<std::string>() != "oracle_file")
                    throw FormatError(where + ": source must be \"oracle_file\"");
                if (det.confidence < 0.0 || det.confidence > 1.0)
                    throw FormatError(where + ": confidence outside [0,1]");
                if (det.category.empty()) throw FormatError(where + ": empty category");
                dets.push_back(std::move(det));
            }
            out[image_id] = std::move(dets);
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    return out;
}

ReadRecordsResult read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open records file: " + path.string());

    ReadRecordsResult result;
    std::string line;
    std::size_t line_no = 0;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::uint64_t line_start = offset;
        offset += line.size();
        if (!in.eof()) ++offset;  // the newline getline consumed
        if (line.empty()) continue;
        try {
            result.records.push_back(record_from_jsonl(line));
        } catch (const std::exception& e) {
            result.malformed.push_back(MalformedLine{line_no, line_start, e.what()});
        }
    }
    result.total_lines = line_no;
    return result;
}

RecordWriter::RecordWriter(const std::filesystem::path& path, bool truncate) : path_(path) {
    int flags = O_WRONLY | O_CREAT | O_APPEND;
    if (truncate) flags |= O_TRUNC;
    fd_ = ::open(path.c_str(), flags, 0644);
    if (fd_ < 0)
        throw FormatError("cannot open output for append: " + path.string() + ": " +
                          std::strerror(errno));
}

RecordWriter::~RecordWriter() {
    if (fd_ >= 0) ::close(fd_);
}

void RecordWriter::append(const CaptionRecord& record) {
    std::string line = record_to_jsonl(record);
    line.push_back('\n');
    std::lock_guard<std::mutex> lock(mutex_);
    if (!written_ids_.insert(record.image.id).second)
        throw std::logic_error("duplicate record for image id " +
                               std::to_string(record.image.id));
    // Single write(2) of the whole line keeps concurrent appends line-atomic.
    const char* data = line.data();
    std::size_t remaining = line.size();
    while (remaining > 0) {
        const ssize_t n = ::write(fd_, data, remaining);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw FormatError("write failed: " + path_.string() + ": " + std::strerror(errno));
        }
        data += n;
        remaining -= static_cast<std::size_t>(n);
    }
}

void RecordWriter::mark_existing(std::int64_t image_id) {
    std::lock_guard<std::mutex> lock(mutex_);
    written_ids_.insert(image_id);
}

}  // namespace dce::io
