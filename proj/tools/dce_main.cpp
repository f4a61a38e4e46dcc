#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dce/analysis.hpp"
#include "dce/config.hpp"
#include "dce/dataset_io.hpp"
#include "dce/pipeline.hpp"
#include "dce/specialists.hpp"

namespace {

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel g_log_level = LogLevel::info;

void init_log_level() {
    const char* raw = std::getenv("DCE_LOG");
    if (!raw) return;
    std::string v = raw;
    if (v == "error") {
        g_log_level = LogLevel::error;
    } else if (v == "info") {
        g_log_level = LogLevel::info;
    } else if (v == "debug") {
        g_log_level = LogLevel::debug;
    } else {
        std::fprintf(stderr, "ignoring DCE_LOG=%s (expected error, info or debug)\n", v.c_str());
    }
}

void log_info(const std::string& msg) {
    if (g_log_level >= LogLevel::info) std::fprintf(stderr, "%s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
    if (g_log_level >= LogLevel::debug) std::fprintf(stderr, "%s\n", msg.c_str());
}

int cmd_run(const std::string& config_path, const std::string& annotations,
            const std::string& images, const std::string& out, bool resume,
            const std::string& oracle_path, const std::optional<std::int64_t>& seed,
            const std::optional<int>& image_concurrency) {
    auto cfg = dce::config::load_pipeline_config(config_path);
    cfg.images_root = images;
    if (seed) cfg.geometry.rng_seed = static_cast<std::uint64_t>(*seed);
    if (image_concurrency) cfg.image_concurrency = *image_concurrency;
    if (!oracle_path.empty()) {
        cfg.oracle_detections =
            std::make_shared<const std::map<std::int64_t, std::vector<dce::Detection>>>(
                dce::io::load_oracle_detections(oracle_path));
        log_info("loaded oracle detections for " +
                 std::to_string(cfg.oracle_detections->size()) + " images");
    }
    log_debug("config: " + std::to_string(cfg.endpoints.size()) + " endpoints, fail_policy=" +
              dce::pipeline::to_string(cfg.fail_policy) +
              ", image_concurrency=" + std::to_string(cfg.image_concurrency) +
              ", region_concurrency=" + std::to_string(cfg.region_concurrency));

    const auto index = dce::io::load_coco_index(annotations);
    log_info("indexed " + std::to_string(index.images.size()) + " images from " + annotations);

    dce::pipeline::Pipeline pipeline(cfg);
    const auto summary = pipeline.run_batch(index, out, resume);
    std::printf("processed %zu images: %zu ok, %zu degraded, %zu failed, %zu skipped (resume), %.2f s\n",
                summary.images_total, summary.ok, summary.degraded, summary.failed,
                summary.skipped_resume, summary.wall_time);
    return summary.failed == 0 ? 0 : 1;
}

int cmd_analyze(const std::string& captions_path, const std::string& lexicon_path,
                const std::string& out_dir) {
    const auto result = dce::io::read_records(captions_path);
    for (const auto& bad : result.malformed) {
        std::fprintf(stderr, "skipping malformed line %zu: %s\n", bad.line_number,
                     bad.error.c_str());
    }
    std::vector<std::string> captions;
    for (const auto& record : result.records) {
        if (!record.image_caption.empty()) captions.push_back(record.image_caption);
    }
    if (captions.empty()) {
        std::fprintf(stderr, "error: no non-empty captions in %s\n", captions_path.c_str());
        return 1;
    }
    const auto lexicon = lexicon_path.empty()
                             ? dce::analysis::AttributeLexicon::defaults()
                             : dce::analysis::AttributeLexicon::load(lexicon_path);
    const auto report =
        dce::analysis::analyze_corpus(captions, lexicon, dce::analysis::TokenMode::whitespace,
                                      dce::analysis::default_stopwords());
    dce::analysis::write_report_csv(report, out_dir);
    std::printf("analyzed %zu captions -> %s\n", report.caption_count, out_dir.c_str());
    return 0;
}

int cmd_validate_config(const std::string& config_path) {
    const auto cfg = dce::config::load_pipeline_config(config_path);
    dce::pipeline::Pipeline pipeline(cfg);  // validates endpoint coverage
    std::printf("config ok: %zu endpoints, %zu templates, fail_policy=%s\n",
                cfg.endpoints.size(), cfg.templates ? cfg.templates->size() : 0,
                dce::pipeline::to_string(cfg.fail_policy));
    return 0;
}

int cmd_mock_serve(const std::string& fixtures_path, int port) {
    auto store = std::make_shared<const dce::specialists::FixtureStore>(
        dce::specialists::FixtureStore::load(fixtures_path));

    sigset_t mask;
    sigemptyset(&mask);
    sigaddset(&mask, SIGINT);
    sigaddset(&mask, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &mask, nullptr);  // before the listener thread spawns

    auto server = dce::specialists::serve_fixtures(store, port);
    std::printf("serving %zu fixtures at %s\n", store->size(), server->base_url().c_str());
    std::fflush(stdout);

    int sig = 0;
    sigwait(&mask, &sig);
    log_info(std::string("received ") + (sig == SIGINT ? "SIGINT" : "SIGTERM") + ", shutting down");
    server->stop();
    return 0;
}

int cmd_stats(const std::string& captions_path) {
    const auto result = dce::io::read_records(captions_path);
    std::size_t ok = 0, degraded = 0, failed = 0;
    std::vector<std::string> captions;
    for (const auto& record : result.records) {
        switch (record.status) {
            case dce::RecordStatus::ok: ++ok; break;
            case dce::RecordStatus::degraded: ++degraded; break;
            case dce::RecordStatus::failed: ++failed; break;
        }
        if (!record.image_caption.empty()) captions.push_back(record.image_caption);
    }
    std::printf("records: %zu\n", result.records.size());
    std::printf("ok: %zu\n", ok);
    std::printf("degraded: %zu\n", degraded);
    std::printf("failed: %zu\n", failed);
    std::printf("malformed_lines: %zu\n", result.malformed.size());
    std::printf("captions: %zu\n", captions.size());
    if (!captions.empty()) {
        std::printf("average_token_length: %.4f\n",
                    dce::analysis::average_token_length(captions,
                                                        dce::analysis::TokenMode::whitespace));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    init_log_level();

    CLI::App app{"caption enhancement engine: detect regions, query visual specialists, compose dense captions"};
    app.require_subcommand(1);

    std::string run_config, run_annotations, run_images, run_out, run_oracle;
    bool run_resume = false;
    std::int64_t run_seed = 0;
    int run_image_concurrency = 0;
    auto* run = app.add_subcommand("run", "process a dataset into caption records");
    run->add_option("--config", run_config, "pipeline config (TOML)")->required();
    run->add_option("--annotations", run_annotations, "COCO-style annotation index")->required();
    run->add_option("--images", run_images, "image root directory")->required();
    run->add_option("--out", run_out, "output JSONL path")->required();
    run->add_flag("--resume", run_resume, "skip image ids already present in the output");
    run->add_option("--oracle-detections", run_oracle, "bypass detectors with canned detections");
    auto* seed_opt = run->add_option("--seed", run_seed, "override geometry.rng_seed");
    auto* conc_opt =
        run->add_option("--image-concurrency", run_image_concurrency, "parallel images")
            ->check(CLI::PositiveNumber);

    std::string an_captions, an_lexicon, an_token_mode = "whitespace", an_out_dir;
    auto* analyze = app.add_subcommand("analyze", "report token and attribute statistics");
    analyze->add_option("--captions", an_captions, "caption records (JSONL)")->required();
    analyze->add_option("--lexicon", an_lexicon, "attribute lexicon (JSON)");
    analyze->add_option("--token-mode", an_token_mode, "tokenizer")
        ->check(CLI::IsMember({"whitespace"}));
    analyze->add_option("--out-dir", an_out_dir, "directory for CSV reports")->required();

    std::string vc_config;
    auto* validate = app.add_subcommand("validate-config", "load a config and check coverage");
    validate->add_option("--config", vc_config, "pipeline config (TOML)")->required();

    std::string ms_fixtures;
    int ms_port = 0;
    auto* mock = app.add_subcommand("mock-serve", "serve fixture responses over HTTP");
    mock->add_option("--fixtures", ms_fixtures, "fixture store (JSON)")->required();
    mock->add_option("--port", ms_port, "listen port (0 picks one)")->required();

    std::string st_captions;
    auto* stats = app.add_subcommand("stats", "summarize a caption records file");
    stats->add_option("--captions", st_captions, "caption records (JSONL)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(run)) {
            std::optional<std::int64_t> seed;
            if (seed_opt->count() > 0) seed = run_seed;
            std::optional<int> concurrency;
            if (conc_opt->count() > 0) concurrency = run_image_concurrency;
            return cmd_run(run_config, run_annotations, run_images, run_out, run_resume,
                           run_oracle, seed, concurrency);
        }
        if (app.got_subcommand(analyze)) return cmd_analyze(an_captions, an_lexicon, an_out_dir);
        if (app.got_subcommand(validate)) return cmd_validate_config(vc_config);
        if (app.got_subcommand(mock)) return cmd_mock_serve(ms_fixtures, ms_port);
        if (app.got_subcommand(stats)) return cmd_stats(st_captions);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
