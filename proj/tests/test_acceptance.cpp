// End-to-end acceptance gate: one pass/fail line per criterion, nonzero exit
// if any criterion fails. Each criterion rechecks the engine against an
// independent oracle or a committed artifact rather than against the library's
// own intermediate state.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dce/analysis.hpp"
#include "dce/config.hpp"
#include "dce/dataset_io.hpp"
#include "dce/geometry.hpp"
#include "dce/pipeline.hpp"
#include "dce/prompting.hpp"

using namespace dce;
namespace fs = std::filesystem;

namespace {

const char* kSceneDir = DCE_FIXTURES_DIR "/scene5";

void check(bool condition, const std::string& detail) {
    if (!condition) throw std::runtime_error(detail);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    check(static_cast<bool>(in), "cannot read " + p.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

fs::path temp_file(const std::string& stem) {
    static int counter = 0;
    return fs::temp_directory_path() /
           (stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Independent greedy NMS: full sort with the documented tie-breaks, then an
// O(n^2) keep scan against every already-kept box.
std::vector<Detection> nms_oracle(const std::vector<Detection>& dets, double threshold) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        const auto& a = dets[i];
        const auto& b = dets[j];
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        const auto area_a = geometry::area(a.box);
        const auto area_b = geometry::area(b.box);
        if (area_a != area_b) return area_a > area_b;
        if (a.category != b.category) return a.category < b.category;
        return i < j;
    });
    std::vector<Detection> kept;
    for (std::size_t i : order) {
        bool keep = true;
        for (const auto& k : kept) {
            if (geometry::iou(dets[i].box, k.box) >= threshold) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(dets[i]);
    }
    return kept;
}

std::vector<Detection> random_detections(std::mt19937_64& rng, int max_n) {
    std::uniform_int_distribution<int> n_dist(0, max_n);
    std::uniform_int_distribution<int> coord(0, 399);
    std::uniform_int_distribution<int> extent(1, 200);
    std::uniform_int_distribution<int> conf_steps(0, 20);  // coarse grid forces ties
    std::uniform_int_distribution<int> cat(0, 3);
    static const char* kCats[] = {"person", "dog", "car", "animal"};

    std::vector<Detection> dets(n_dist(rng));
    for (auto& d : dets) {
        const int x1 = coord(rng);
        const int y1 = coord(rng);
        d.box = BoundingBox{x1, y1, x1 + extent(rng), y1 + extent(rng)};
        d.category = kCats[cat(rng)];
        d.confidence = conf_steps(rng) / 20.0;
        d.source = DetectionSource::open_world;
    }
    return dets;
}

double mean_depth_oracle(const DepthMap& map, const BoundingBox& box, const ImageRef& image) {
    const double sx = static_cast<double>(map.width) / image.width;
    const double sy = static_cast<double>(map.height) / image.height;
    double sum = 0.0;
    int count = 0;
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            const double cx = x + 0.5;
            const double cy = y + 0.5;
            if (cx >= box.x1 * sx && cx < box.x2 * sx && cy >= box.y1 * sy && cy < box.y2 * sy) {
                sum += map.at(x, y);
                ++count;
            }
        }
    }
    if (count == 0) {
        const double bx = (box.x1 * sx + box.x2 * sx) / 2.0;
        const double by = (box.y1 * sy + box.y2 * sy) / 2.0;
        const int px = std::clamp(static_cast<int>(std::floor(bx)), 0, map.width - 1);
        const int py = std::clamp(static_cast<int>(std::floor(by)), 0, map.height - 1);
        return map.at(px, py);
    }
    return sum / count;
}

// Criteria 1 and 2 share one random corpus.
const std::vector<std::vector<Detection>>& shared_corpus() {
    static const std::vector<std::vector<Detection>> corpus = [] {
        std::mt19937_64 rng(20240817);
        std::vector<std::vector<Detection>> sets(600);
        for (auto& s : sets) s = random_detections(rng, 50);
        return sets;
    }();
    return corpus;
}

pipeline::PipelineConfig scene_config() {
    return config::load_pipeline_config(fs::path(kSceneDir) / "config.toml");
}

io::DatasetIndex scene_index() {
    return io::load_coco_index(fs::path(kSceneDir) / "annotations.json");
}

std::vector<CaptionRecord> sorted_by_id(std::vector<CaptionRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const auto& a, const auto& b) { return a.image.id < b.image.id; });
    return records;
}

std::vector<CaptionRecord> run_scene(const pipeline::PipelineConfig& cfg, const fs::path& out) {
    pipeline::Pipeline pipeline(cfg);
    pipeline.run_batch(scene_index(), out, false);
    auto result = io::read_records(out);
    check(result.malformed.empty(), "run produced malformed output lines");
    return result.records;
}

void criterion_nms_oracle() {
    const auto start = std::chrono::steady_clock::now();
    std::size_t sets = 0;
    for (const auto& dets : shared_corpus()) {
        auto got = geometry::nms(dets, 0.75);
        auto want = nms_oracle(dets, 0.75);
        check(got == want, "nms disagrees with the brute-force oracle on set " +
                               std::to_string(sets) + " (n=" + std::to_string(dets.size()) + ")");
        ++sets;
    }
    check(sets >= 500, "corpus smaller than 500 sets");
    const double elapsed = seconds_since(start);
    check(elapsed < 5.0, "nms sweep took " + std::to_string(elapsed) + " s (budget 5 s)");
}

void criterion_thresholds() {
    geometry::GeometryConfig cfg;
    for (const auto& dets : shared_corpus()) {
        const std::size_t half = dets.size() / 2;
        std::vector<Detection> in_domain(dets.begin(), dets.begin() + half);
        std::vector<Detection> open_world(dets.begin() + half, dets.end());
        auto merged = geometry::merge_detections(in_domain, open_world, cfg);
        for (const auto& d : merged) {
            check(d.confidence >= 0.5, "merged output kept confidence " +
                                           std::to_string(d.confidence) + " below 0.5");
        }
        for (std::size_t i = 0; i < merged.size(); ++i) {
            for (std::size_t j = i + 1; j < merged.size(); ++j) {
                const double overlap = geometry::iou(merged[i].box, merged[j].box);
                check(overlap < 0.75, "surviving pair has IoU " + std::to_string(overlap));
            }
        }
    }
}

void criterion_absolute_partition() {
    const auto start = std::chrono::steady_clock::now();
    const ImageRef image{1, "grid.png", 60, 60};
    std::map<AbsoluteRegion, std::vector<std::pair<int, int>>> preimages;
    for (int y = 0; y < 60; ++y) {
        for (int x = 0; x < 60; ++x) {
            const auto label = geometry::absolute_location(BoundingBox{x, y, x + 1, y + 1}, image);
            preimages[label].push_back({x, y});
        }
    }
    check(preimages.size() == 9, "sweep hit " + std::to_string(preimages.size()) +
                                     " of 9 location labels");
    std::size_t covered = 0;
    for (const auto& [label, cells] : preimages) {
        int min_x = 60, max_x = -1, min_y = 60, max_y = -1;
        for (const auto& [x, y] : cells) {
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
        }
        const std::size_t rect =
            static_cast<std::size_t>(max_x - min_x + 1) * static_cast<std::size_t>(max_y - min_y + 1);
        check(cells.size() == rect,
              std::string("preimage of ") + to_string(label) + " is not a contiguous rectangle");
        covered += cells.size();
    }
    check(covered == 3600, "preimages cover " + std::to_string(covered) + " of 3600 cells");
    const double elapsed = seconds_since(start);
    check(elapsed < 1.0, "sweep took " + std::to_string(elapsed) + " s (budget 1 s)");
}

void criterion_depth_algebra() {
    geometry::GeometryConfig cfg;
    std::mt19937_64 rng(7041);
    std::uniform_real_distribution<double> depth(0.0, 10.0);
    std::uniform_real_distribution<double> range(0.0, 10.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double a = depth(rng);
        const double b = depth(rng);
        const double r = range(rng);
        const auto ab = geometry::relative_3d(a, b, r, cfg);
        const auto ba = geometry::relative_3d(b, a, r, cfg);
        const bool suppressed = std::abs(a - b) <= cfg.depth_margin_fraction * r;
        if (suppressed) {
            check(!ab.has_value() && !ba.has_value(), "margin suppression violated");
        } else {
            check(ab.has_value() && ba.has_value(), "non-marginal pair returned no relation");
            check((*ab == Relation3D::in_front_of) == (a < b), "ordering disagrees with depths");
            check(*ab != *ba, "antisymmetry violated");
        }
    }

    std::uniform_int_distribution<int> dim(1, 64);
    std::uniform_real_distribution<float> value(0.f, 5.f);
    for (int trial = 0; trial < 200; ++trial) {
        DepthMap map;
        map.width = dim(rng);
        map.height = dim(rng);
        map.values.resize(static_cast<std::size_t>(map.width) * map.height);
        for (auto& v : map.values) v = value(rng);
        const ImageRef image{1, "img.png", map.width * 10, map.height * 10};
        std::uniform_int_distribution<int> cx(0, image.width - 1);
        std::uniform_int_distribution<int> cy(0, image.height - 1);
        const int x1 = cx(rng);
        const int y1 = cy(rng);
        std::uniform_int_distribution<int> x2(x1 + 1, image.width);
        std::uniform_int_distribution<int> y2(y1 + 1, image.height);
        const BoundingBox box{x1, y1, x2(rng), y2(rng)};
        const double got = geometry::mean_depth(map, box, image);
        const double want = mean_depth_oracle(map, box, image);
        check(std::abs(got - want) <= 1e-9,
              "mean depth " + std::to_string(got) + " vs oracle " + std::to_string(want));
    }
}

void criterion_prompt_fidelity() {
    const auto lib = prompting::TemplateLibrary::load(DCE_ASSETS_DIR "/prompts");
    const std::string all_bodies = lib.get("reference_caption").body +
                                   lib.get("subclass_clause").body + lib.get("relation_3d").body;
    for (const char* fragment : {"You glimpsed the image and saw a", "'s subclass; use",
                                 "Relative to the camera, the"}) {
        check(all_bodies.find(fragment) != std::string::npos,
              std::string("missing template fragment: ") + fragment);
    }
    const std::string sentence = prompting::render_3d_relation_sentence(
        lib, "person", {10, 10, 50, 90}, Relation3D::in_front_of, "car", {60, 20, 200, 90});
    check(sentence ==
              "Relative to the camera, the person in [10,10,50,90] in the image is in front of "
              "car in [60,20,200,90]",
          "worked 3d sentence is \"" + sentence + "\"");
}

void criterion_determinism() {
    const auto start = std::chrono::steady_clock::now();
    const auto out1 = temp_file("dce_accept_run1");
    const auto out2 = temp_file("dce_accept_run2");
    auto first = run_scene(scene_config(), out1);
    auto second = run_scene(scene_config(), out2);
    check(sorted_by_id(first) == sorted_by_id(second), "two runs disagree");

    auto golden = io::read_records(fs::path(kSceneDir) / "golden.jsonl");
    check(golden.malformed.empty(), "golden file has malformed lines");
    check(sorted_by_id(first) == sorted_by_id(golden.records),
          "run disagrees with the committed golden file");
    check(slurp(out1) == slurp(fs::path(kSceneDir) / "golden.jsonl"),
          "run output bytes differ from the committed golden file");
    fs::remove(out1);
    fs::remove(out2);
    const double elapsed = seconds_since(start);
    check(elapsed < 10.0, "two runs took " + std::to_string(elapsed) + " s (budget 10 s)");
}

void criterion_degradation_isolation() {
    auto cfg = scene_config();
    auto& emotion = cfg.endpoints[specialists::SpecialistKind::emotion];
    emotion.backend = specialists::Backend::remote;
    emotion.base_url = "http://127.0.0.1:9";  // connection refused
    emotion.timeout_ms = 500;
    emotion.max_retries = 0;

    const auto out = temp_file("dce_accept_degraded");
    auto degraded = sorted_by_id(run_scene(cfg, out));
    fs::remove(out);
    auto golden = sorted_by_id(io::read_records(fs::path(kSceneDir) / "golden.jsonl").records);
    check(degraded.size() == golden.size(), "record counts differ");

    bool any_emotion_lost = false;
    for (std::size_t i = 0; i < golden.size(); ++i) {
        CaptionRecord patched = degraded[i];
        bool changed = false;
        check(patched.object_attributes.size() == golden[i].object_attributes.size(),
              "attribute counts differ for image " + std::to_string(golden[i].image.id));
        for (std::size_t k = 0; k < patched.object_attributes.size(); ++k) {
            auto& d = patched.object_attributes[k];
            const auto& g = golden[i].object_attributes[k];
            if (d.emotion != g.emotion) {
                check(!d.emotion.has_value(), "degraded run invented an emotion");
                d.emotion = g.emotion;
                changed = true;
            }
            auto it = d.provenance.find("emotion");
            auto git = g.provenance.find("emotion");
            if (it != d.provenance.end() && git != g.provenance.end() &&
                it->second != git->second) {
                check(it->second == Provenance::unavailable,
                      "emotion provenance changed to something other than unavailable");
                it->second = git->second;
                changed = true;
            }
        }
        if (changed) {
            check(patched.status == RecordStatus::degraded,
                  "record with lost emotion is not marked degraded");
            patched.status = golden[i].status;
            any_emotion_lost = true;
        }
        check(patched == golden[i],
              "image " + std::to_string(golden[i].image.id) +
                  " differs from golden outside emotion, provenance, and status");
    }
    check(any_emotion_lost, "scene contains no emotion-bearing record; criterion is vacuous");
}

void criterion_resume() {
    const auto out = temp_file("dce_accept_resume");
    pipeline::Pipeline pipeline(scene_config());
    pipeline.run_batch(scene_index(), out, false);
    const std::string before = slurp(out);
    auto summary = pipeline.run_batch(scene_index(), out, true);
    check(summary.skipped_resume == 5,
          "resume skipped " + std::to_string(summary.skipped_resume) + " of 5");
    check(summary.ok == 0 && summary.degraded == 0 && summary.failed == 0,
          "resume reprocessed images");
    check(slurp(out) == before, "resume changed the output file");
    fs::remove(out);
}

void criterion_analysis_oracles() {
    using analysis::TokenMode;
    check(analysis::average_token_length({"a b c", "a b c d e"}, TokenMode::whitespace) == 4.0,
          "ATL of {3,5} tokens is not 4.0");
    check(analysis::average_token_length({"one two"}, TokenMode::whitespace) == 2.0,
          "ATL of a single 2-token caption is not 2.0");
    check(analysis::average_token_length({"", "four tokens right here"}, TokenMode::whitespace) ==
              2.0,
          "ATL of {0,4} tokens is not 2.0");

    const auto lexicon = analysis::AttributeLexicon::defaults();
    check(!analysis::attribute_occurrence("he feels leftover pizza", lexicon)
               .at("spatial_relation"),
          "\"leftover\" triggered spatial_relation");
    analysis::AttributeLexicon bare;
    bare.attributes = {{"spatial_relation", {"left"}}};
    check(!analysis::attribute_occurrence("he feels leftover pizza", bare).at("spatial_relation"),
          "\"leftover\" matched the bare phrase \"left\"");
    check(analysis::attribute_occurrence("turn left here", bare).at("spatial_relation"),
          "\"left\" failed to match on a word boundary");

    std::mt19937_64 rng(515);
    static const char* words[] = {"a", "the", "dog", "cat", "ball", "holding", "left", "of"};
    std::uniform_int_distribution<int> n_caps(1, 6);
    std::uniform_int_distribution<int> n_words(0, 15);
    std::uniform_int_distribution<int> pick(0, 7);
    const auto& stopwords = analysis::default_stopwords();
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::string> corpus;
        long long expected = 0;
        const int caps = n_caps(rng);
        for (int c = 0; c < caps; ++c) {
            std::string caption;
            const int n = n_words(rng);
            for (int w = 0; w < n; ++w) {
                const std::string word = words[pick(rng)];
                if (!stopwords.count(word)) ++expected;
                if (!caption.empty()) caption += ' ';
                caption += word;
            }
            corpus.push_back(caption);
        }
        long long counted = 0;
        for (const auto& [word, count] : analysis::word_frequencies(corpus, stopwords)) {
            counted += count;
        }
        check(counted == expected, "word frequency total " + std::to_string(counted) +
                                       " != non-stopword token count " + std::to_string(expected));
    }
}

void criterion_fixture_server_equivalence() {
    auto base_cfg = scene_config();
    const auto out_local = temp_file("dce_accept_local");
    auto local = run_scene(base_cfg, out_local);
    fs::remove(out_local);

    auto server = specialists::serve_fixtures(base_cfg.fixtures, 0);
    auto remote_cfg = base_cfg;
    remote_cfg.fixtures = nullptr;
    for (auto& [kind, endpoint] : remote_cfg.endpoints) {
        endpoint.backend = specialists::Backend::remote;
        endpoint.base_url = server->base_url();
    }
    const auto out_remote = temp_file("dce_accept_remote");
    auto remote = run_scene(remote_cfg, out_remote);
    fs::remove(out_remote);
    server->stop();

    check(local.size() == remote.size(), "record counts differ");
    auto sorted_local = sorted_by_id(local);
    auto sorted_remote = sorted_by_id(remote);
    for (std::size_t i = 0; i < sorted_local.size(); ++i) {
        check(sorted_local[i] == sorted_remote[i],
              "image " + std::to_string(sorted_local[i].image.id) +
                  " differs between loopback and in-process runs");
    }
}

struct Criterion {
    int number;
    const char* label;
    std::function<void()> body;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "nms equals the brute-force oracle on 600 random sets", criterion_nms_oracle},
        {2, "merge respects the confidence and IoU thresholds", criterion_thresholds},
        {3, "absolute locations partition a 60x60 center sweep", criterion_absolute_partition},
        {4, "3d relations and mean depth match independent oracles", criterion_depth_algebra},
        {5, "prompt assets carry the pinned fragments and worked sentence",
         criterion_prompt_fidelity},
        {6, "the fixture scene reproduces the committed golden file", criterion_determinism},
        {7, "a failing emotion endpoint degrades only emotion fields",
         criterion_degradation_isolation},
        {8, "resume skips all five images and preserves the file", criterion_resume},
        {9, "analysis metrics match hand-computed oracles", criterion_analysis_oracles},
        {10, "loopback fixture serving equals the in-process run",
         criterion_fixture_server_equivalence},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        try {
            c.body();
            std::printf("PASS criterion %d: %s\n", c.number, c.label);
        } catch (const std::exception& e) {
            ++failures;
            std::printf("FAIL criterion %d: %s: %s\n", c.number, c.label, e.what());
        }
        std::fflush(stdout);
    }
    if (failures != 0) {
        std::printf("%d of %zu criteria failed\n", failures, criteria.size());
        return 1;
    }
    std::printf("all %zu criteria passed\n", criteria.size());
    return 0;
}
