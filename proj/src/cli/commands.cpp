#include "serpeval/cli.hpp"
#include "serpeval/store.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <ostream>
#include <pthread.h>
#include <sstream>

namespace serpeval::cli {

namespace fs = std::filesystem;
using collector::AdapterKind;

namespace {

const char* kSampleFile = "sample.tsv";

std::string plural(std::size_t n, const std::string& word) {
    return std::to_string(n) + " " + word + (n == 1 ? "" : "s");
}

sampler::LabelFile load_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read labels " + path.string());
    return sampler::parse_label_file(in);
}

sampler::FrequencyTable load_log(const PipelineConfig& c) {
    std::ifstream in(c.log_path);
    if (!in) throw ValidationError("cannot read query log " + c.log_path.string());
    return sampler::ingest_log(in, c.log_format);
}

std::vector<sampler::Candidate> draw_all(const PipelineConfig& c, const std::vector<sampler::PopularitySegment>& segments) {
    std::vector<sampler::Candidate> out;
    for (const auto& s : segments) {
        auto seed = derive_seed(c.seed, "candidates/" + std::to_string(s.index));
        for (auto& text : sampler::draw_candidates(s, c.candidates_per_segment, seed)) out.push_back({text, s.index});
    }
    return out;
}

std::vector<sampler::SampledQuery> load_sample(const PipelineConfig& c, const store::Store& store) {
    auto bytes = store.get_document("samples", c.study_id, kSampleFile);
    if (!bytes) throw ValidationError("no sample for study " + c.study_id + "; run `serpeval sample` first");
    std::istringstream in(*bytes);
    return sampler::read_sample_tsv(in);
}

collector::CollectionRun load_collected_run(const PipelineConfig& c, const store::Store& store) {
    auto run = collector::load_run(store, c.run_id);
    if (!run) throw ValidationError("no collected run " + c.run_id + "; run `serpeval collect` first");
    return *run;
}

study::StudyConfig study_config(const PipelineConfig& c) {
    study::StudyConfig s;
    s.study_id = c.study_id;
    s.seed = c.seed;
    s.access_code_hashes = c.access_code_hashes;
    s.lease = c.lease;
    s.threshold = c.voucher_threshold;
    return s;
}

void record_study(store::Store& store, const PipelineConfig& c, const std::string& status,
                  const std::optional<std::string>& run_ref) {
    store::StudyRecord record;
    if (auto existing = store.get_study(c.study_id)) record = *existing;
    record.study_id = c.study_id;
    record.seed = c.seed;
    record.sample_ref = kSampleFile;
    if (record.created_at.empty()) record.created_at = format_timestamp(SystemClock().now());
    if (run_ref && std::find(record.run_refs.begin(), record.run_refs.end(), *run_ref) == record.run_refs.end()) {
        record.run_refs.push_back(*run_ref);
    }
    record.status = status;
    store.put_study(record);
}

}  // namespace

fs::path sample_dir(const PipelineConfig& config) { return config.store_dir / "samples" / config.study_id; }
fs::path report_dir(const PipelineConfig& config) { return config.store_dir / "reports" / config.study_id; }

// ---------------------------------------------------------------------------

std::vector<std::string> cmd_validate(const PipelineConfig& c, std::ostream& log) {
    std::vector<std::string> problems, warnings;
    auto attempt = [&](const std::string& what, auto&& f) {
        try {
            f();
        } catch (const std::exception& e) {
            problems.push_back(what + ": " + e.what());
        }
    };

    std::optional<sampler::FrequencyTable> table;
    attempt("query log", [&] {
        table = load_log(c);
        if (table->entries.empty()) throw ValidationError("empty log");
        if (!table->rejects.empty()) {
            warnings.push_back(plural(table->rejects.size(), "malformed log line") + " in " + c.log_path.string());
        }
        log << "query log: " << table->entries.size() << " distinct queries, " << table->total_instances
            << " instances\n";
    });
    std::optional<sampler::LabelFile> labels;
    attempt("labels", [&] {
        labels = load_labels(c.labels_path);
        log << "labels: " << labels->labels.size() << " labeled queries\n";
    });
    if (table && labels && !table->entries.empty()) {
        attempt("sampling", [&] {
            auto segments = sampler::segment_by_popularity(table->entries, c.segments);
            auto labeled = sampler::apply_intent_labels(draw_all(c, segments), *labels, c.label_mode);
            if (!labeled.missing.empty()) warnings.push_back(plural(labeled.missing.size(), "unlabeled candidate"));
            auto sample = sampler::build_sample(labeled.labeled, c.target_per_intent, c.seed);
            for (const auto& s : sample.shortfalls) {
                warnings.push_back("segment " + std::to_string(s.segment_index) + " has " +
                                   std::to_string(s.available) + " " + std::string(to_string(s.intent)) +
                                   " candidates for a target of " + std::to_string(s.target));
            }
            log << "sample (dry run): " << sample.queries.size() << " queries over " << segments.size()
                << " segments\n";
        });
    }
    for (const auto& e : c.engines) {
        if (e.adapter != AdapterKind::replay_fixture) continue;
        attempt("engine " + e.engine_id, [&] {
            auto fixture = collector::ReplayFixture::load(e.fixture_path);
            if (fixture.engine_id != e.engine_id) {
                throw ValidationError("fixture " + e.fixture_path.string() + " records engine '" + fixture.engine_id +
                                      "'");
            }
            log << "engine " << e.engine_id << ": " << fixture.records.size() << " recorded results\n";
        });
    }
    if (c.admin_token_hash.empty()) warnings.push_back("no admin token configured; admin routes are disabled");
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return warnings;
}

std::vector<std::string> cmd_sample(const PipelineConfig& c, std::ostream& log) {
    std::vector<std::string> warnings;
    store::Store store(c.store_dir);
    // Checked before anything is written: a study's seed never changes.
    if (auto existing = store.get_study(c.study_id); existing && existing->seed != c.seed) {
        throw ValidationError("study " + c.study_id + " was sampled with seed " + std::to_string(existing->seed) +
                              ", not " + std::to_string(c.seed));
    }
    auto table = load_log(c);
    if (table.entries.empty()) throw ValidationError("empty log");
    log << "ingested " << table.total_instances << " instances of " << table.entries.size() << " distinct queries\n";

    std::ostringstream rejects;
    rejects << "line\treason\n";
    for (const auto& r : table.rejects) rejects << r.line_number << '\t' << r.reason << '\n';
    if (!table.rejects.empty()) warnings.push_back(plural(table.rejects.size(), "malformed log line"));

    auto segments = sampler::segment_by_popularity(table.entries, c.segments);
    auto candidates = draw_all(c, segments);
    auto labels = load_labels(c.labels_path);

    std::ostringstream seg;
    sampler::write_segments_tsv(seg, segments);
    std::ostringstream cand;
    cand << "query\tsegment\n";
    for (const auto& x : candidates) cand << x.text << '\t' << x.segment_index << '\n';
    store.put_document("samples", c.study_id, "segments.tsv", seg.str());
    store.put_document("samples", c.study_id, "candidates.tsv", cand.str());
    store.put_document("samples", c.study_id, "rejects.tsv", rejects.str());

    sampler::LabelingResult labeled;
    std::ostringstream gaps;
    gaps << "query\tsegment\n";
    try {
        labeled = sampler::apply_intent_labels(candidates, labels, c.label_mode);
    } catch (const sampler::LabelGapError& e) {
        for (const auto& m : e.missing()) gaps << m.text << '\t' << m.segment_index << '\n';
        store.put_document("samples", c.study_id, "label_gaps.tsv", gaps.str());
        throw;
    }
    for (const auto& m : labeled.missing) gaps << m.text << '\t' << m.segment_index << '\n';
    store.put_document("samples", c.study_id, "label_gaps.tsv", gaps.str());
    if (!labeled.missing.empty()) warnings.push_back(plural(labeled.missing.size(), "unlabeled candidate"));

    auto sample = sampler::build_sample(labeled.labeled, c.target_per_intent, c.seed);
    std::ostringstream out, excluded, shortfalls;
    sampler::write_sample_tsv(out, sample);
    excluded << "query\tsegment\tintent\n";
    for (const auto& x : sample.excluded) {
        excluded << x.text << '\t' << x.segment_index << '\t' << to_string(x.intent) << '\n';
    }
    shortfalls << "segment\tintent\tavailable\ttarget\n";
    for (const auto& s : sample.shortfalls) {
        shortfalls << s.segment_index << '\t' << to_string(s.intent) << '\t' << s.available << '\t' << s.target << '\n';
        warnings.push_back("segment " + std::to_string(s.segment_index) + ": " + std::to_string(s.available) + " of " +
                           std::to_string(s.target) + " " + std::string(to_string(s.intent)) + " queries");
    }
    store.put_document("samples", c.study_id, "excluded.tsv", excluded.str());
    store.put_document("samples", c.study_id, "shortfalls.tsv", shortfalls.str());
    store.put_document("samples", c.study_id, kSampleFile, out.str());
    record_study(store, c, "sampled", std::nullopt);

    std::size_t informational = 0;
    for (const auto& q : sample.queries) informational += q.intent == Intent::informational;
    log << "sampled " << informational << " informational and " << sample.queries.size() - informational
        << " navigational queries from " << segments.size() << " segments into " << sample_dir(c).string() << "\n";
    return warnings;
}

std::vector<std::string> cmd_collect(const PipelineConfig& c, std::ostream& log) {
    std::vector<std::string> warnings;
    store::Store store(c.store_dir);
    auto sample = load_sample(c, store);

    std::unique_ptr<Clock> clock;
    if (c.pinned_time) {
        clock = std::make_unique<ManualClock>(*c.pinned_time);
    } else {
        clock = std::make_unique<SystemClock>();
    }

    std::vector<collector::EngineBinding> engines;
    auto replay_docs = std::make_unique<collector::ReplayDocumentFetcher>();
    bool any_live = false;
    for (const auto& e : c.engines) {
        collector::EngineBinding b{e, nullptr};
        if (e.adapter == AdapterKind::replay_fixture) {
            auto fixture = std::make_shared<const collector::ReplayFixture>(collector::ReplayFixture::load(e.fixture_path));
            replay_docs->add(*fixture);
            b.adapter = std::make_shared<collector::ReplaySerpAdapter>(fixture);
        } else {
            any_live = true;
            b.adapter = std::make_shared<collector::LiveScrapeAdapter>(e, c.fetch, *clock);
        }
        engines.push_back(std::move(b));
    }
    std::unique_ptr<collector::DocumentFetcher> fetcher;
    if (any_live) {
        fetcher = std::make_unique<collector::HttpDocumentFetcher>(c.fetch);
    } else {
        fetcher = std::move(replay_docs);
    }

    collector::CollectionOptions options;
    options.run_id = c.run_id;
    options.sample_ref = c.study_id + "/" + kSampleFile;
    options.depth = c.depth;
    options.concurrency = c.concurrency;
    options.degraded_threshold = c.degraded_threshold;
    options.tracking = c.tracking;
    log << "collecting " << sample.size() << " queries from " << plural(engines.size(), "engine") << "\n";
    auto run = collector::run_collection(sample, engines, *fetcher, store, *clock, options);
    record_study(store, c, "collected", c.run_id);

    const auto& t = run.totals;
    log << "run " << run.run_id << ": " << t.succeeded << " of " << t.attempted << " captures ok, "
        << run.snapshots.size() << " documents\n";
    if (t.failed > 0) warnings.push_back(plural(t.failed, "capture") + " failed");
    if (t.short_captures > 0) warnings.push_back(plural(t.short_captures, "short capture"));
    if (t.unresolvable > 0) warnings.push_back(plural(t.unresolvable, "unresolvable tracking URL"));
    if (run.degraded) warnings.push_back("run " + run.run_id + " is degraded");
    return warnings;
}

std::vector<std::string> cmd_report(const PipelineConfig& c, std::ostream& log) {
    store::Store store(c.store_dir);
    auto run = load_collected_run(c, store);
    SystemClock clock;
    study::StudyService service(store, run, study_config(c), clock);

    auto judgments = service.effective_judgments();
    auto verdicts = service.verdicts();
    metrics::ReportInputs in;
    in.run = &service.run();
    in.tasks = &service.tasks();
    in.judgments = &judgments;
    in.verdicts = &verdicts;
    in.study_id = c.study_id;
    in.seed = c.seed;
    for (const auto& t : service.tasks()) {
        if (service.task_status(t.task_id) == study::TaskStatus::complete) in.complete_tasks.insert(t.task_id);
    }
    auto report = metrics::build_report(in);
    metrics::write_exports(report, report_dir(c));
    for (const auto& e : report.engines) {
        log << e.engine_id << ": overall relevant "
            << (e.overall.micro ? e.overall.micro->to_string() : std::string("n/a")) << ", navigational success "
            << (e.navigational.success_rate ? e.navigational.success_rate->to_string() : std::string("n/a")) << "\n";
    }
    log << "report written to " << report_dir(c).string() << "\n";
    return report.warnings;
}

// ---------------------------------------------------------------------------

ServeSession::ServeSession(const PipelineConfig& config, Clock& clock) : config_(config) {
    store_ = std::make_unique<store::Store>(config_.store_dir);
    auto run = load_collected_run(config_, *store_);
    service_ = std::make_unique<study::StudyService>(*store_, std::move(run), study_config(config_), clock);
    server_ = std::make_unique<study::StudyServer>(*service_, study::ServerOptions{config_.admin_token_hash});
}

ServeSession::~ServeSession() { stop(); }

int ServeSession::bind() {
    auto [host, port] = parse_listen(config_.listen);
    return server_->bind(host, port);
}

void ServeSession::start() { server_->start(); }
void ServeSession::listen() { server_->listen(); }
void ServeSession::stop() {
    if (server_) server_->stop();
}

void cmd_serve(const PipelineConfig& config, std::ostream& log) {
    // Block the signals before any server thread exists so they all inherit
    // the mask, then wait for one synchronously.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    SystemClock clock;
    ServeSession session(config, clock);
    int port = session.bind();
    auto [host, configured] = parse_listen(config.listen);
    session.start();
    log << "study " << config.study_id << " serving " << session.service().tasks().size() << " tasks on " << host
        << ":" << port << std::endl;
    int received = 0;
    sigwait(&signals, &received);
    log << "shutting down" << std::endl;
    session.stop();
}

// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Search engine retrieval effectiveness studies: sample, collect, serve, report."};
    app.name("serpeval");
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> store_dir, fixtures_dir, listen;
    app.add_option("--config", config_path, "study config file")->required();
    app.add_option("--seed", seed, "override the study seed");
    app.add_option("--store", store_dir, "override the store directory");
    app.add_option("--fixtures", fixtures_dir, "override the fixtures directory");

    auto* validate = app.add_subcommand("validate", "check the config and its inputs without writing anything");
    auto* sample = app.add_subcommand("sample", "build the stratified query sample");
    auto* collect = app.add_subcommand("collect", "collect results and document snapshots (resumable)");
    auto* serve = app.add_subcommand("serve", "run the juror study service");
    auto* report = app.add_subcommand("report", "compute metrics and write exports");
    serve->add_option("--listen", listen, "host:port to listen on");
    for (auto* sub : {validate, sample, collect, serve, report}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        Overrides overrides;
        overrides.seed = seed;
        if (store_dir) overrides.store = *store_dir;
        if (fixtures_dir) overrides.fixtures = *fixtures_dir;
        overrides.listen = listen;
        auto config = load_config(config_path, overrides);

        std::vector<std::string> warnings;
        if (validate->parsed()) {
            warnings = cmd_validate(config, err);
        } else if (sample->parsed()) {
            warnings = cmd_sample(config, err);
        } else if (collect->parsed()) {
            warnings = cmd_collect(config, err);
        } else if (serve->parsed()) {
            cmd_serve(config, err);
        } else if (report->parsed()) {
            warnings = cmd_report(config, err);
        }
        for (const auto& w : warnings) err << "warning: " << w << "\n";
        if (validate->parsed()) err << "config ok, " << plural(warnings.size(), "warning") << "\n";
        return 0;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace serpeval::cli
