#include "dce/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <mutex>
#include <set>
#include <thread>
#include <variant>

#include "dce/json_codec.hpp"

namespace dce::pipeline {

namespace {

using specialists::Backend;
using specialists::DetectionsResponse;
using specialists::DepthResponse;
using specialists::FineGrainedRouter;
using specialists::HoiResponse;
using specialists::LabelResponse;
using specialists::OcrResponse;
using specialists::SpecialistError;
using specialists::SpecialistKind;
using specialists::SpecialistRequest;
using specialists::TextResponse;

/// Runs fn(0..n-1) on at most `concurrency` worker threads. Results must be
/// written to per-index slots by the caller. The first exception stops the
/// claim loop and is rethrown after all workers join.
void parallel_for(std::size_t n, int concurrency, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t workers = std::min<std::size_t>(std::max(concurrency, 1), n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex error_mutex;
    std::exception_ptr first_error;

    auto body = [&] {
        while (!stop.load()) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                fn(i);
            } catch (...) {
                {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
                stop.store(true);
                break;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

const char* to_string(FailPolicy policy) {
    return policy == FailPolicy::degrade ? "degrade" : "abort";
}

FailPolicy fail_policy_from_string(const std::string& s) {
    if (s == "degrade") return FailPolicy::degrade;
    if (s == "abort") return FailPolicy::abort;
    throw std::invalid_argument("unknown fail policy: " + s);
}

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.templates) throw PipelineError("pipeline requires a template library");
    if (cfg_.region_concurrency < 1) throw PipelineError("region_concurrency must be positive");
    if (cfg_.image_concurrency < 1) throw PipelineError("image_concurrency must be positive");

    std::string missing;
    for (SpecialistKind kind : specialists::all_specialist_kinds()) {
        auto it = cfg_.endpoints.find(kind);
        if (it == cfg_.endpoints.end()) {
            if (!missing.empty()) missing += ", ";
            missing += specialists::to_string(kind);
            continue;
        }
        if (it->second.kind != kind) {
            throw PipelineError(std::string("endpoint registered under ") +
                                specialists::to_string(kind) + " declares kind " +
                                specialists::to_string(it->second.kind));
        }
        try {
            clients_[kind] =
                std::make_unique<specialists::SpecialistClient>(it->second, cfg_.fixtures);
        } catch (const std::invalid_argument& e) {
            throw PipelineError(std::string("endpoint ") + specialists::to_string(kind) + ": " +
                                e.what());
        }
    }
    if (!missing.empty()) throw PipelineError("missing specialist endpoints: " + missing);

    router_ = cfg_.router ? cfg_.router
                          : std::make_shared<const FineGrainedRouter>(FineGrainedRouter::defaults());
}

const specialists::SpecialistClient& Pipeline::client(SpecialistKind kind) const {
    return *clients_.at(kind);
}

std::string Pipeline::image_path_for(const ImageRef& image) const {
    if (cfg_.images_root.empty()) return image.file_name;
    return (cfg_.images_root / image.file_name).string();
}

CaptionRecord Pipeline::process_image(const ImageRef& image) const {
    const bool abort_on_error = cfg_.fail_policy == FailPolicy::abort;
    const auto& lib = *cfg_.templates;
    const double accept_threshold = cfg_.geometry.detection_confidence_threshold;
    const std::string image_path = image_path_for(image);

    CaptionRecord rec;
    rec.image = image;
    rec.engine_version = std::string(kEngineVersion);
    std::atomic<bool> degraded{false};

    auto make_request = [&](std::optional<BoundingBox> box, std::optional<std::string> category,
                            std::optional<std::string> prompt) {
        SpecialistRequest req;
        req.image_id = image.id;
        req.image_path = image_path;
        req.box = std::move(box);
        req.category = std::move(category);
        req.prompt = std::move(prompt);
        return req;
    };

    try {
        // Stage 1: both detectors, merged. Oracle detections bypass the wire.
        std::vector<Detection> in_domain;
        std::vector<Detection> open_world;
        if (cfg_.oracle_detections) {
            auto it = cfg_.oracle_detections->find(image.id);
            if (it != cfg_.oracle_detections->end()) in_domain = it->second;
        } else {
            auto detect = [&](SpecialistKind kind, std::vector<Detection>& out) {
                try {
                    auto resp = client(kind).call(make_request(std::nullopt, std::nullopt,
                                                               std::nullopt));
                    out = std::get<DetectionsResponse>(resp).detections;
                } catch (const SpecialistError&) {
                    if (abort_on_error) throw;
                    degraded.store(true);
                }
            };
            detect(SpecialistKind::detector_in_domain, in_domain);
            detect(SpecialistKind::detector_open_world, open_world);
        }
        rec.detections = geometry::merge_detections(in_domain, open_world, cfg_.geometry);
        const std::size_t n = rec.detections.size();

        // Stage 2: one depth map per image, shared by every region.
        std::optional<DepthMap> depth;
        if (n > 0) {
            try {
                auto resp = client(SpecialistKind::depth)
                                .call(make_request(std::nullopt, std::nullopt, std::nullopt));
                const auto& dr = std::get<DepthResponse>(resp);
                std::filesystem::path uri = dr.depth_uri;
                if (uri.is_relative() && !cfg_.depth_base_dir.empty()) {
                    uri = cfg_.depth_base_dir / uri;
                }
                DepthMap map = io::load_depth_map(uri);
                if (map.width != dr.width || map.height != dr.height) {
                    throw specialists::SpecialistProtocolError(
                        "depth response: file dimensions disagree with width/height");
                }
                depth = std::move(map);
            } catch (const SpecialistError&) {
                if (abort_on_error) throw;
                degraded.store(true);
            } catch (const io::FormatError&) {
                if (abort_on_error) throw;
                degraded.store(true);
            }
        }
        double depth_range = 0.0;
        if (depth && !depth->values.empty()) {
            auto [mn, mx] = std::minmax_element(depth->values.begin(), depth->values.end());
            depth_range = static_cast<double>(*mx) - static_cast<double>(*mn);
        }

        // Stage 3: per-region attributes, bounded fan-out.
        rec.object_attributes.assign(n, ObjectAttributes{});
        parallel_for(n, cfg_.region_concurrency, [&](std::size_t i) {
            const Detection& det = rec.detections[i];
            ObjectAttributes a;
            a.detection = det;
            a.area = geometry::area(det.box);
            auto size = geometry::size_bucket(a.area, image, cfg_.geometry);
            a.size_bucket = size.bucket;
            a.area_fraction = size.area_fraction;
            a.provenance["size"] = Provenance::extracted;

            if (depth) {
                a.mean_depth = geometry::mean_depth(*depth, det.box, image);
                a.provenance["depth"] = Provenance::extracted;
            } else {
                a.provenance["depth"] = Provenance::unavailable;
            }

            if (specialists::gate_emotion(det.category)) {
                try {
                    auto resp = client(SpecialistKind::emotion)
                                    .call(make_request(det.box, det.category, std::nullopt));
                    a.emotion = std::get<LabelResponse>(resp).label;
                    a.provenance["emotion"] = Provenance::extracted;
                } catch (const SpecialistError&) {
                    if (abort_on_error) throw;
                    a.provenance["emotion"] = Provenance::unavailable;
                    degraded.store(true);
                }
            } else {
                a.provenance["emotion"] = Provenance::skipped_by_gating;
            }

            const BoundingBox crop =
                geometry::expand_crop(det.box, image, cfg_.geometry.crop_expand_factor);
            try {
                auto resp = client(SpecialistKind::ocr)
                                .call(make_request(crop, std::nullopt, std::nullopt));
                for (const auto& item : std::get<OcrResponse>(resp).items) {
                    if (item.confidence >= accept_threshold) {
                        a.ocr_items.push_back(OcrItem{item.text, item.box});
                    }
                }
                a.provenance["ocr"] = Provenance::extracted;
            } catch (const SpecialistError&) {
                if (abort_on_error) throw;
                a.provenance["ocr"] = Provenance::unavailable;
                degraded.store(true);
            }

            if (auto fg_kind = router_->route(det.category)) {
                try {
                    auto resp =
                        client(*fg_kind).call(make_request(det.box, det.category, std::nullopt));
                    const auto& label = std::get<LabelResponse>(resp);
                    if (label.confidence >= accept_threshold) {
                        a.fine_grained = FineGrainedLabel{label.label, label.confidence};
                        a.provenance["fine_grained"] = Provenance::extracted;
                    } else {
                        a.provenance["fine_grained"] = Provenance::skipped_by_gating;
                    }
                } catch (const SpecialistError&) {
                    if (abort_on_error) throw;
                    a.provenance["fine_grained"] = Provenance::unavailable;
                    degraded.store(true);
                }
            } else {
                a.provenance["fine_grained"] = Provenance::skipped_by_gating;
            }

            try {
                auto prompt = prompting::render_reference_prompt(lib, det.category);
                auto resp = client(SpecialistKind::vlm_region)
                                .call(make_request(crop, det.category, prompt));
                a.reference_caption = std::get<TextResponse>(resp).text;
                a.provenance["reference_caption"] = Provenance::extracted;
            } catch (const SpecialistError&) {
                if (abort_on_error) throw;
                a.provenance["reference_caption"] = Provenance::unavailable;
                degraded.store(true);
            }

            rec.object_attributes[i] = std::move(a);
        });

        for (std::size_t i = 0; i < n; ++i) {
            rec.relation_attributes.absolute_locations.push_back(AbsoluteLocationEntry{
                static_cast<int>(i), geometry::absolute_location(rec.detections[i].box, image)});
        }

        // Stage 4: one caption per region; falls back to the reference
        // caption, then to the bare category.
        rec.region_captions.assign(n, std::string());
        parallel_for(n, cfg_.region_concurrency, [&](std::size_t i) {
            const auto& a = rec.object_attributes[i];
            std::string caption;
            if (a.reference_caption) {
                try {
                    auto prompt = prompting::build_region_prompt(lib, a);
                    const BoundingBox crop = geometry::expand_crop(
                        a.detection.box, image, cfg_.geometry.crop_expand_factor);
                    auto resp = client(SpecialistKind::vlm_region)
                                    .call(make_request(crop, std::nullopt, prompt));
                    caption = std::get<TextResponse>(resp).text;
                } catch (const SpecialistError&) {
                    if (abort_on_error) throw;
                    degraded.store(true);
                    caption = *a.reference_caption;
                }
            } else {
                caption = a.detection.category;
            }
            rec.region_captions[i] = std::move(caption);
        });

        // Stage 5: relation attributes.
        if (n > 0) {
            try {
                auto resp = client(SpecialistKind::hoi)
                                .call(make_request(std::nullopt, std::nullopt, std::nullopt));
                rec.relation_attributes.hoi = std::get<HoiResponse>(resp).triples;
            } catch (const SpecialistError&) {
                if (abort_on_error) throw;
                degraded.store(true);
            }
            rec.relation_attributes.counts = geometry::count_objects(rec.detections);
            auto pairs = geometry::select_prominent_pairs(rec.detections, image, cfg_.geometry);
            for (const auto& [i, j] : pairs) {
                rec.relation_attributes.relative_2d.push_back(Relation2DEntry{
                    i, j,
                    geometry::relative_2d(rec.detections[static_cast<std::size_t>(i)],
                                          rec.detections[static_cast<std::size_t>(j)], image,
                                          cfg_.geometry)});
                const auto& da = rec.object_attributes[static_cast<std::size_t>(i)].mean_depth;
                const auto& db = rec.object_attributes[static_cast<std::size_t>(j)].mean_depth;
                if (da && db) {
                    if (auto r3 = geometry::relative_3d(*da, *db, depth_range, cfg_.geometry)) {
                        rec.relation_attributes.relative_3d.push_back(Relation3DEntry{i, j, *r3});
                    }
                }
            }
        }

        // Stage 6: compose the image caption. Detection-free images get a
        // whole-image reference caption so the composer still has substance.
        std::optional<std::string> whole_image_reference;
        if (n == 0) {
            try {
                BoundingBox full{0, 0, image.width, image.height};
                auto prompt = prompting::render_reference_prompt(lib, "scene");
                auto resp = client(SpecialistKind::vlm_region)
                                .call(make_request(full, std::string("scene"), prompt));
                whole_image_reference = std::get<TextResponse>(resp).text;
            } catch (const SpecialistError&) {
                if (abort_on_error) throw;
                degraded.store(true);
            }
        }

        std::vector<prompting::RegionLine> regions;
        regions.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            regions.push_back(prompting::RegionLine{rec.detections[i].box,
                                                    rec.detections[i].category,
                                                    rec.region_captions[i]});
        }
        std::string caption;
        try {
            auto prompt = prompting::build_image_prompt(lib, regions, rec.relation_attributes,
                                                        image, whole_image_reference);
            auto resp = client(SpecialistKind::llm_compose)
                            .call(make_request(std::nullopt, std::nullopt, prompt));
            caption = std::get<TextResponse>(resp).text;
        } catch (const SpecialistError&) {
            caption.clear();
        } catch (const prompting::PromptAssemblyError&) {
            caption.clear();
        }
        rec.image_caption = std::move(caption);
        rec.status = rec.image_caption.empty()
                         ? RecordStatus::failed
                         : (degraded.load() ? RecordStatus::degraded : RecordStatus::ok);
        return rec;
    } catch (const SpecialistError&) {
        // abort policy: drop partial work, keep the deterministic prefix
        CaptionRecord failed;
        failed.image = image;
        failed.engine_version = rec.engine_version;
        failed.detections = rec.detections;
        failed.status = RecordStatus::failed;
        return failed;
    } catch (const io::FormatError&) {
        CaptionRecord failed;
        failed.image = image;
        failed.engine_version = rec.engine_version;
        failed.detections = rec.detections;
        failed.status = RecordStatus::failed;
        return failed;
    }
}

RunSummary Pipeline::run_batch(const io::DatasetIndex& index,
                               const std::filesystem::path& output_path, bool resume) const {
    const auto start = std::chrono::steady_clock::now();
    RunSummary summary;
    summary.images_total = index.images.size();

    std::set<std::int64_t> existing;
    if (resume && std::filesystem::exists(output_path)) {
        auto prior = io::read_records(output_path);
        if (!prior.malformed.empty()) {
            const auto& bad = prior.malformed.back();
            if (prior.malformed.size() == 1 && bad.line_number == prior.total_lines) {
                std::fprintf(stderr,
                             "warning: truncating malformed trailing line %zu of %s\n",
                             bad.line_number, output_path.string().c_str());
                if (::truncate(output_path.c_str(), static_cast<off_t>(bad.byte_offset)) != 0) {
                    throw PipelineError("cannot truncate partial line in " + output_path.string());
                }
            } else {
                throw PipelineError("output file " + output_path.string() + " has " +
                                    std::to_string(prior.malformed.size()) +
                                    " malformed line(s) before the end; refusing to resume");
            }
        }
        for (const auto& r : prior.records) existing.insert(r.image.id);
    }

    io::RecordWriter writer(output_path, /*truncate=*/!resume);
    for (std::int64_t id : existing) writer.mark_existing(id);

    std::vector<const ImageRef*> pending;
    pending.reserve(index.images.size());
    for (const auto& image : index.images) {
        if (existing.count(image.id)) {
            ++summary.skipped_resume;
        } else {
            pending.push_back(&image);
        }
    }

    PipelineConfig effective = cfg_;
    const Pipeline* self = this;
    std::unique_ptr<Pipeline> rerooted;
    if (cfg_.images_root.empty() && !index.root.empty()) {
        effective.images_root = index.root;
        rerooted = std::make_unique<Pipeline>(std::move(effective));
        self = rerooted.get();
    }

    std::atomic<std::size_t> ok{0};
    std::atomic<std::size_t> degraded{0};
    std::atomic<std::size_t> failed{0};
    std::mutex progress_mutex;

    parallel_for(pending.size(), cfg_.image_concurrency, [&](std::size_t k) {
        const ImageRef& image = *pending[k];
        const auto t0 = std::chrono::steady_clock::now();
        CaptionRecord record = self->process_image(image);
        writer.append(record);
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        switch (record.status) {
            case RecordStatus::ok: ok.fetch_add(1); break;
            case RecordStatus::degraded: degraded.fetch_add(1); break;
            case RecordStatus::failed: failed.fetch_add(1); break;
        }
        std::lock_guard<std::mutex> lock(progress_mutex);
        std::fprintf(stderr, "image %lld: %s (%lld ms)\n",
                     static_cast<long long>(image.id), to_string(record.status),
                     static_cast<long long>(ms));
    });

    summary.ok = ok.load();
    summary.degraded = degraded.load();
    summary.failed = failed.load();
    summary.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return summary;
}

CaptionRecord process_image(const ImageRef& image, const PipelineConfig& cfg) {
    return Pipeline(cfg).process_image(image);
}

RunSummary run_batch(const io::DatasetIndex& index, const PipelineConfig& cfg,
                     const std::filesystem::path& output_path, bool resume) {
    return Pipeline(cfg).run_batch(index, output_path, resume);
}

}  // namespace dce::pipeline
