#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dce/types.hpp"

namespace dce::io {

class IndexError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DatasetIndex {
    std::vector<ImageRef> images;
    std::filesystem::path root;
};

/// Parses the "images" array of a COCO-style annotation file. Every entry
/// needs id, file_name, width, height; other sections are ignored.
DatasetIndex load_coco_index(const std::filesystem::path& path);

// Depth maps use a small binary container: magic "DCED", version byte 0x01,
// u32 LE width, u32 LE height, then width*height float32 LE row-major values.
DepthMap load_depth_map(const std::filesystem::path& path);
void write_depth_map(const std::filesystem::path& path, const DepthMap& map);

/// JSONL of {image_id, detections:[{box, category, confidence, source?}]};
/// detections load with source oracle_file.
std::map<std::int64_t, std::vector<Detection>> load_oracle_detections(
    const std::filesystem::path& path);

struct MalformedLine {
    std::size_t line_number = 0;   // 1-based
    std::uint64_t byte_offset = 0;  // offset of the line's first byte
    std::string error;
};

struct ReadRecordsResult {
    std::vector<CaptionRecord> records;
    std::vector<MalformedLine> malformed;  // reported, never silently dropped
    std::size_t total_lines = 0;
};

ReadRecordsResult read_records(const std::filesystem::path& path);

/// Line-atomic JSONL appender with a per-run image-id uniqueness check.
/// Thread-safe; the pipeline funnels all workers through one writer.
class RecordWriter {
public:
    explicit RecordWriter(const std::filesystem::path& path, bool truncate = false);
    ~RecordWriter();

    RecordWriter(const RecordWriter&) = delete;
    RecordWriter& operator=(const RecordWriter&) = delete;

    /// Appends one record as a single line. Throws std::logic_error if a
    /// record for the same image id was already written in this run.
    void append(const CaptionRecord& record);

    /// Marks ids already present in the file so the uniqueness check covers
    /// resumed runs too.
    void mark_existing(std::int64_t image_id);

private:
    std::filesystem::path path_;
    int fd_ = -1;
    std::mutex mutex_;
    std::set<std::int64_t> written_ids_;
};

}  // namespace dce::io
