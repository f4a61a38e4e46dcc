#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dce/config.hpp"
#include "dce/json_codec.hpp"
#include "dce/pipeline.hpp"

using namespace dce;
using namespace dce::pipeline;
namespace fs = std::filesystem;

namespace {

const char* kSceneDir = DCE_FIXTURES_DIR "/scene5";

PipelineConfig scene_config() {
    return config::load_pipeline_config(fs::path(kSceneDir) / "config.toml");
}

io::DatasetIndex scene_index() {
    return io::load_coco_index(fs::path(kSceneDir) / "annotations.json");
}

std::vector<CaptionRecord> golden_records() {
    auto result = io::read_records(fs::path(kSceneDir) / "golden.jsonl");
    REQUIRE(result.malformed.empty());
    REQUIRE(result.records.size() == 5);
    return result.records;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

fs::path temp_file(const std::string& stem) {
    static std::atomic<int> counter{0};
    return fs::temp_directory_path() / (stem + "_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter.fetch_add(1)));
}

specialists::SpecialistEndpoint dead_endpoint(specialists::SpecialistKind kind) {
    specialists::SpecialistEndpoint ep;
    ep.kind = kind;
    ep.backend = specialists::Backend::remote;
    ep.base_url = "http://127.0.0.1:9";  // nothing listens on the discard port
    ep.timeout_ms = 500;
    ep.max_retries = 0;
    return ep;
}

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const std::string command = std::string(DCE_CLI_PATH) + " " + args + " 2>&1";
    FILE* stream = ::popen(command.c_str(), "r");
    REQUIRE(stream != nullptr);
    CliResult result;
    char buf[512];
    while (std::fgets(buf, sizeof(buf), stream)) result.output += buf;
    int status = ::pclose(stream);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

}  // namespace

TEST_CASE("fail policy names") {
    CHECK(std::string(to_string(FailPolicy::degrade)) == "degrade");
    CHECK(std::string(to_string(FailPolicy::abort)) == "abort");
    CHECK(fail_policy_from_string("degrade") == FailPolicy::degrade);
    CHECK(fail_policy_from_string("abort") == FailPolicy::abort);
    CHECK_THROWS_AS(fail_policy_from_string("retry"), std::invalid_argument);
}

TEST_CASE("pipeline construction validates its wiring") {
    {
        PipelineConfig cfg = scene_config();
        cfg.templates = nullptr;
        CHECK_THROWS_WITH_AS(Pipeline{cfg}, doctest::Contains("template"), PipelineError);
    }
    {
        PipelineConfig cfg = scene_config();
        cfg.endpoints.erase(specialists::SpecialistKind::hoi);
        CHECK_THROWS_WITH_AS(Pipeline{cfg}, doctest::Contains("missing specialist endpoints: hoi"),
                             PipelineError);
    }
    {
        PipelineConfig cfg = scene_config();
        auto wrong = cfg.endpoints.at(specialists::SpecialistKind::emotion);
        cfg.endpoints[specialists::SpecialistKind::hoi] = wrong;
        CHECK_THROWS_WITH_AS(Pipeline{cfg}, doctest::Contains("declares kind"), PipelineError);
    }
    {
        PipelineConfig cfg = scene_config();
        cfg.fixtures = nullptr;  // fixture backends now lack their store
        CHECK_THROWS_AS(Pipeline{cfg}, PipelineError);
    }
    {
        PipelineConfig cfg = scene_config();
        cfg.region_concurrency = 0;
        CHECK_THROWS_AS(Pipeline{cfg}, PipelineError);
    }
}

TEST_CASE("processing one image reproduces the committed record") {
    Pipeline pipeline(scene_config());
    auto golden = golden_records();
    auto index = scene_index();
    REQUIRE(index.images.size() == 5);

    auto record = pipeline.process_image(index.images[0]);
    CHECK(record == golden[0]);
    CHECK(validate_record(record).empty());

    // the detection-free image exercises the whole-image fallback
    auto empty_scene = pipeline.process_image(index.images[1]);
    CHECK(empty_scene == golden[1]);
    CHECK(empty_scene.detections.empty());
    CHECK(!empty_scene.image_caption.empty());
}

TEST_CASE("a batch run reproduces the committed file byte for byte") {
    Pipeline pipeline(scene_config());
    const auto out = temp_file("dce_batch");
    std::ofstream(out) << "stale content that a fresh run must replace\n";

    auto summary = pipeline.run_batch(scene_index(), out, /*resume=*/false);
    CHECK(summary.images_total == 5);
    CHECK(summary.ok == 5);
    CHECK(summary.degraded == 0);
    CHECK(summary.failed == 0);
    CHECK(summary.skipped_resume == 0);
    CHECK(summary.ok + summary.degraded + summary.failed + summary.skipped_resume ==
          summary.images_total);
    CHECK(summary.wall_time >= 0.0);

    CHECK(slurp(out) == slurp(fs::path(kSceneDir) / "golden.jsonl"));

    // a second run is deterministic
    const auto out2 = temp_file("dce_batch");
    pipeline.run_batch(scene_index(), out2, false);
    CHECK(slurp(out2) == slurp(out));

    fs::remove(out);
    fs::remove(out2);
}

TEST_CASE("image concurrency changes schedule, not content") {
    PipelineConfig cfg = scene_config();
    cfg.image_concurrency = 4;
    Pipeline pipeline(cfg);
    const auto out = temp_file("dce_parallel");
    auto summary = pipeline.run_batch(scene_index(), out, false);
    CHECK(summary.ok == 5);

    auto records = io::read_records(out).records;
    std::sort(records.begin(), records.end(),
              [](const auto& a, const auto& b) { return a.image.id < b.image.id; });
    CHECK(records == golden_records());
    fs::remove(out);
}

TEST_CASE("an empty index yields an empty run") {
    Pipeline pipeline(scene_config());
    const auto out = temp_file("dce_empty");
    io::DatasetIndex index;
    auto summary = pipeline.run_batch(index, out, false);
    CHECK(summary.images_total == 0);
    CHECK(summary.ok == 0);
    CHECK(summary.degraded == 0);
    CHECK(summary.failed == 0);
    CHECK(summary.skipped_resume == 0);
    CHECK(fs::exists(out));
    CHECK(fs::file_size(out) == 0);
    fs::remove(out);
}

TEST_CASE("resume skips completed images and leaves the file untouched") {
    Pipeline pipeline(scene_config());
    const auto out = temp_file("dce_resume");
    pipeline.run_batch(scene_index(), out, false);
    const std::string before = slurp(out);

    auto summary = pipeline.run_batch(scene_index(), out, /*resume=*/true);
    CHECK(summary.images_total == 5);
    CHECK(summary.ok == 0);
    CHECK(summary.skipped_resume == 5);
    CHECK(slurp(out) == before);
    fs::remove(out);
}

TEST_CASE("resume truncates a partial trailing line and finishes the batch") {
    const std::string golden_bytes = slurp(fs::path(kSceneDir) / "golden.jsonl");
    auto first_two_end = golden_bytes.find('\n', golden_bytes.find('\n') + 1) + 1;
    auto third_end = golden_bytes.find('\n', first_two_end) + 1;
    // two intact records plus half of the third
    const std::string partial =
        golden_bytes.substr(0, first_two_end) +
        golden_bytes.substr(first_two_end, (third_end - first_two_end) / 2);

    const auto out = temp_file("dce_partial");
    std::ofstream(out, std::ios::binary) << partial;

    Pipeline pipeline(scene_config());
    auto summary = pipeline.run_batch(scene_index(), out, true);
    CHECK(summary.skipped_resume == 2);
    CHECK(summary.ok == 3);
    CHECK(slurp(out) == golden_bytes);
    fs::remove(out);
}

TEST_CASE("resume refuses a file with malformed interior lines") {
    const std::string golden_bytes = slurp(fs::path(kSceneDir) / "golden.jsonl");
    auto first_end = golden_bytes.find('\n') + 1;
    const auto out = temp_file("dce_broken");
    std::ofstream(out, std::ios::binary)
        << golden_bytes.substr(0, first_end) << "{oops\n"
        << golden_bytes.substr(first_end);

    Pipeline pipeline(scene_config());
    CHECK_THROWS_WITH_AS(pipeline.run_batch(scene_index(), out, true),
                         doctest::Contains("refusing to resume"), PipelineError);
    fs::remove(out);
}

TEST_CASE("oracle detections bypass the detector endpoints") {
    auto golden = golden_records();
    auto oracle = std::make_shared<std::map<std::int64_t, std::vector<Detection>>>();
    auto seeded = golden[0].detections;
    for (auto& det : seeded) det.source = DetectionSource::oracle_file;
    (*oracle)[1] = seeded;

    PipelineConfig cfg = scene_config();
    cfg.oracle_detections = oracle;
    Pipeline pipeline(cfg);
    auto record = pipeline.process_image(scene_index().images[0]);

    CaptionRecord expected = golden[0];
    for (auto& det : expected.detections) det.source = DetectionSource::oracle_file;
    for (auto& attrs : expected.object_attributes) {
        attrs.detection.source = DetectionSource::oracle_file;
    }
    CHECK(record == expected);
}

TEST_CASE("a dead emotion endpoint degrades only the affected fields") {
    PipelineConfig cfg = scene_config();
    cfg.endpoints[specialists::SpecialistKind::emotion] =
        dead_endpoint(specialists::SpecialistKind::emotion);
    Pipeline pipeline(cfg);

    auto golden = golden_records();
    auto record = pipeline.process_image(scene_index().images[0]);

    CaptionRecord expected = golden[0];
    expected.status = RecordStatus::degraded;
    auto& person = expected.object_attributes[0];
    REQUIRE(person.detection.category == "person");
    person.emotion.reset();
    person.provenance["emotion"] = Provenance::unavailable;
    CHECK(record == expected);

    const auto out = temp_file("dce_degraded");
    auto summary = pipeline.run_batch(scene_index(), out, false);
    CHECK(summary.ok == 3);        // images without person regions are untouched
    CHECK(summary.degraded == 2);  // both images with persons degrade
    CHECK(summary.failed == 0);
    fs::remove(out);
}

TEST_CASE("a dead depth endpoint removes depth-derived fields") {
    PipelineConfig cfg = scene_config();
    cfg.endpoints[specialists::SpecialistKind::depth] =
        dead_endpoint(specialists::SpecialistKind::depth);
    Pipeline pipeline(cfg);

    auto golden = golden_records();
    auto record = pipeline.process_image(scene_index().images[0]);

    CaptionRecord expected = golden[0];
    expected.status = RecordStatus::degraded;
    for (auto& attrs : expected.object_attributes) {
        attrs.mean_depth.reset();
        attrs.provenance["depth"] = Provenance::unavailable;
    }
    expected.relation_attributes.relative_3d.clear();
    CHECK(record == expected);
}

TEST_CASE("the abort policy yields a minimal failed record") {
    PipelineConfig cfg = scene_config();
    cfg.fail_policy = FailPolicy::abort;
    cfg.endpoints[specialists::SpecialistKind::emotion] =
        dead_endpoint(specialists::SpecialistKind::emotion);
    Pipeline pipeline(cfg);

    auto golden = golden_records();
    auto record = pipeline.process_image(scene_index().images[0]);

    CaptionRecord expected;
    expected.image = golden[0].image;
    expected.detections = golden[0].detections;
    expected.engine_version = golden[0].engine_version;
    expected.status = RecordStatus::failed;
    CHECK(record == expected);
    CHECK(record.object_attributes.empty());
    CHECK(record.image_caption.empty());

    const auto out = temp_file("dce_abort");
    auto summary = pipeline.run_batch(scene_index(), out, false);
    CHECK(summary.failed == 2);
    CHECK(summary.ok == 3);
    fs::remove(out);
}

TEST_CASE("a dead composer keeps attributes but fails the record") {
    PipelineConfig cfg = scene_config();
    cfg.endpoints[specialists::SpecialistKind::llm_compose] =
        dead_endpoint(specialists::SpecialistKind::llm_compose);
    Pipeline pipeline(cfg);

    auto golden = golden_records();
    auto record = pipeline.process_image(scene_index().images[0]);

    CaptionRecord expected = golden[0];
    expected.image_caption.clear();
    expected.status = RecordStatus::failed;
    CHECK(record == expected);
    CHECK(record.detections.size() == golden[0].detections.size());
    CHECK(record.region_captions == golden[0].region_captions);
}

TEST_CASE("cli: argument errors exit with 2") {
    CHECK(run_cli("run").exit_code == 2);
    CHECK(run_cli("no-such-command").exit_code == 2);
    CHECK(run_cli("analyze").exit_code == 2);
}

TEST_CASE("cli: --help exits cleanly") {
    auto help = run_cli("--help");
    CHECK(help.exit_code == 0);
    CHECK(help.output.find("run") != std::string::npos);
    CHECK(help.output.find("analyze") != std::string::npos);
}

TEST_CASE("cli: validate-config accepts the committed scene") {
    auto ok = run_cli(std::string("validate-config --config ") + kSceneDir + "/config.toml");
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("config ok: 15 endpoints, 8 templates, fail_policy=degrade") !=
          std::string::npos);
}

TEST_CASE("cli: validate-config names missing endpoints") {
    auto path = temp_file("dce_cfg_missing_hoi");
    std::ofstream cfg(path);
    cfg << "[pipeline]\ntemplate_dir = \"" << DCE_ASSETS_DIR << "/prompts\"\n";
    for (auto kind : specialists::all_specialist_kinds()) {
        if (kind == specialists::SpecialistKind::hoi) continue;
        cfg << "[endpoints." << specialists::to_string(kind) << "]\n"
            << "backend = \"remote\"\n"
            << "base_url = \"http://127.0.0.1:1\"\n";
    }
    cfg.close();

    auto result = run_cli("validate-config --config " + path.string());
    CHECK(result.exit_code == 1);
    CHECK(result.output.find("missing specialist endpoints: hoi") != std::string::npos);
    fs::remove(path);
}

TEST_CASE("cli: run and stats round-trip the scene") {
    const auto out = temp_file("dce_cli_run");
    auto run = run_cli(std::string("run --config ") + kSceneDir + "/config.toml --annotations " +
                       kSceneDir + "/annotations.json --images " + kSceneDir + " --out " +
                       out.string());
    CHECK(run.exit_code == 0);
    CHECK(run.output.find("processed 5 images: 5 ok, 0 degraded, 0 failed, 0 skipped (resume)") !=
          std::string::npos);
    CHECK(slurp(out) == slurp(fs::path(kSceneDir) / "golden.jsonl"));

    auto resumed = run_cli(std::string("run --config ") + kSceneDir +
                           "/config.toml --annotations " + kSceneDir + "/annotations.json" +
                           " --images " + kSceneDir + " --out " + out.string() + " --resume");
    CHECK(resumed.exit_code == 0);
    CHECK(resumed.output.find("0 ok, 0 degraded, 0 failed, 5 skipped (resume)") !=
          std::string::npos);

    auto stats = run_cli("stats --captions " + out.string());
    CHECK(stats.exit_code == 0);
    CHECK(stats.output.find("records: 5") != std::string::npos);
    CHECK(stats.output.find("ok: 5") != std::string::npos);
    CHECK(stats.output.find("malformed_lines: 0") != std::string::npos);
    fs::remove(out);
}
