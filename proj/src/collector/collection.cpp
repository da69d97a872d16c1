#include "serpeval/collector.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <future>
#include <set>
#include <thread>

namespace serpeval::collector {

int DepthPolicy::depth_for(Intent intent) const {
    switch (intent) {
        case Intent::navigational: return navigational;
        case Intent::informational: return informational;
        default: throw ValidationError("no collection depth for intent " + std::string(to_string(intent)));
    }
}

Capture collect_serp(SerpAdapter& adapter, const std::string& engine_id, const std::string& query, int k,
                     const std::vector<url::TrackingPattern>& tracking, Clock& clock) {
    if (k < 1) throw ValidationError("collection depth must be >= 1");
    Capture capture;
    std::vector<RawResult> raws;
    try {
        raws = adapter.fetch_results(query, k);
    } catch (const AdapterError& e) {
        capture.ok = false;
        capture.reason = std::string("adapter failure: ") + e.what();
        return capture;
    }

    for (std::size_t i = 0; i < raws.size(); ++i) {
        const int expected = static_cast<int>(i) + 1;
        if (raws[i].rank == expected) continue;
        capture.ok = false;
        capture.reason = raws[i].rank < expected ? "parse error: duplicate rank " + std::to_string(raws[i].rank)
                                                 : "parse error: missing rank " + std::to_string(expected);
        return capture;
    }
    if (raws.size() > static_cast<std::size_t>(k)) raws.resize(static_cast<std::size_t>(k));

    const auto captured_at = format_timestamp(clock.now());
    for (const auto& raw : raws) {
        SerpResult r;
        r.engine_id = engine_id;
        r.query = query;
        r.rank = raw.rank;
        r.raw_url = raw.raw_url;
        r.title = raw.title;
        r.snippet = raw.snippet;
        r.captured_at = captured_at;
        try {
            auto resolution = url::resolve(raw.raw_url, tracking);
            if (resolution.status == url::ResolutionStatus::unresolvable) {
                r.unresolvable = true;
                r.normalized_url = url::normalize(raw.raw_url);
                ++capture.unresolvable;
            } else {
                r.resolved_url = resolution.url;
                r.normalized_url = url::normalize(resolution.url);
            }
        } catch (const url::UrlError&) {
            capture.ok = false;
            capture.reason = "parse error: invalid url at rank " + std::to_string(raw.rank);
            capture.results.clear();
            capture.unresolvable = 0;
            return capture;
        }
        capture.results.push_back(std::move(r));
    }
    if (capture.results.size() < static_cast<std::size_t>(k)) {
        capture.short_capture = true;
        capture.reason = capture.results.empty()
                             ? "no results"
                             : "short capture: " + std::to_string(capture.results.size()) + " of " + std::to_string(k);
    }
    return capture;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json to_json(const SerpResult& r) {
    return json{{"rank", r.rank},
                {"raw_url", r.raw_url},
                {"resolved_url", r.resolved_url},
                {"normalized_url", r.normalized_url},
                {"unresolvable", r.unresolvable},
                {"title", r.title},
                {"snippet", r.snippet},
                {"captured_at", r.captured_at}};
}

SerpResult result_from_json(const json& j, const std::string& engine_id, const std::string& query) {
    SerpResult r;
    r.engine_id = engine_id;
    r.query = query;
    r.rank = j.at("rank").get<int>();
    r.raw_url = j.at("raw_url").get<std::string>();
    r.resolved_url = j.value("resolved_url", "");
    r.normalized_url = j.at("normalized_url").get<std::string>();
    r.unresolvable = j.value("unresolvable", false);
    r.title = j.value("title", "");
    r.snippet = j.value("snippet", "");
    r.captured_at = j.value("captured_at", "");
    return r;
}

json to_json(const CaptureRecord& c) {
    json results = json::array();
    for (const auto& r : c.results) results.push_back(to_json(r));
    return json{{"type", "capture"},
                {"query", c.query},
                {"intent", to_string(c.intent)},
                {"engine_id", c.engine_id},
                {"depth", c.depth},
                {"status", c.ok ? "ok" : "failed"},
                {"reason", c.reason},
                {"short_capture", c.short_capture},
                {"unresolvable", c.unresolvable},
                {"captured_at", c.captured_at},
                {"results", results}};
}

CaptureRecord capture_from_json(const json& j) {
    CaptureRecord c;
    c.query = j.at("query").get<std::string>();
    auto intent = parse_intent(j.at("intent").get<std::string>());
    if (!intent) throw ValidationError("capture record with unknown intent");
    c.intent = *intent;
    c.engine_id = j.at("engine_id").get<std::string>();
    c.depth = j.at("depth").get<int>();
    c.ok = j.at("status").get<std::string>() == "ok";
    c.reason = j.value("reason", "");
    c.short_capture = j.value("short_capture", false);
    c.unresolvable = j.value("unresolvable", 0);
    c.captured_at = j.value("captured_at", "");
    for (const auto& r : j.at("results")) c.results.push_back(result_from_json(r, c.engine_id, c.query));
    return c;
}

json to_json(const DocumentSnapshot& s) {
    return json{{"type", "snapshot"},
                {"url", s.normalized_url},
                {"snapshot_id", s.snapshot_id},
                {"status", to_string(s.status)},
                {"http_code", s.http_code},
                {"content_hash", s.content_hash},
                {"content_type", s.content_type},
                {"fetched_at", s.fetched_at}};
}

DocumentSnapshot snapshot_from_json(const json& j) {
    DocumentSnapshot s;
    s.normalized_url = j.at("url").get<std::string>();
    s.snapshot_id = j.value("snapshot_id", snapshot_id_for(s.normalized_url));
    auto status = parse_fetch_status(j.at("status").get<std::string>());
    if (!status) throw ValidationError("snapshot record with unknown status");
    s.status = *status;
    s.http_code = j.value("http_code", 0);
    s.content_hash = j.value("content_hash", "");
    s.content_type = j.value("content_type", "");
    s.fetched_at = j.value("fetched_at", "");
    return s;
}

json header_json(const std::string& run_id, const std::string& sample_ref, const std::vector<EngineInfo>& engines,
                 const DepthPolicy& depth, double degraded_threshold) {
    json e = json::array();
    for (const auto& info : engines) e.push_back({{"engine_id", info.engine_id}, {"display_name", info.display_name}});
    return json{{"type", "run"},
                {"run_id", run_id},
                {"sample_ref", sample_ref},
                {"engines", e},
                {"depth", {{"navigational", depth.navigational}, {"informational", depth.informational}}},
                {"degraded_threshold", degraded_threshold}};
}

void compute_totals(CollectionRun& run, double degraded_threshold) {
    run.totals = {};
    for (const auto& c : run.captures) {
        ++run.totals.attempted;
        if (c.ok) {
            ++run.totals.succeeded;
        } else {
            ++run.totals.failed;
        }
        if (c.short_capture) ++run.totals.short_captures;
        run.totals.unresolvable += static_cast<std::size_t>(c.unresolvable);
    }
    run.degraded = run.totals.attempted > 0 &&
                   static_cast<double>(run.totals.failed) / static_cast<double>(run.totals.attempted) > degraded_threshold;
}

void sort_captures(std::vector<CaptureRecord>& captures) {
    std::sort(captures.begin(), captures.end(), [](const CaptureRecord& a, const CaptureRecord& b) {
        return std::tie(a.query, a.engine_id) < std::tie(b.query, b.engine_id);
    });
}

}  // namespace

const CaptureRecord* CollectionRun::find(std::string_view query, std::string_view engine_id) const {
    for (const auto& c : captures) {
        if (c.query == query && c.engine_id == engine_id) return &c;
    }
    return nullptr;
}

const DocumentSnapshot* CollectionRun::snapshot(std::string_view normalized_url) const {
    auto it = snapshots.find(std::string(normalized_url));
    return it == snapshots.end() ? nullptr : &it->second;
}

std::vector<std::string> CollectionRun::queries(Intent intent) const {
    std::set<std::string> out;
    for (const auto& c : captures) {
        if (c.intent == intent) out.insert(c.query);
    }
    return {out.begin(), out.end()};
}

json to_json(const CollectionRun& run) {
    json engines = json::array();
    for (const auto& e : run.engines) engines.push_back({{"engine_id", e.engine_id}, {"display_name", e.display_name}});
    json captures = json::array();
    for (const auto& c : run.captures) {
        auto j = to_json(c);
        j.erase("type");
        captures.push_back(std::move(j));
    }
    json snapshots = json::array();
    for (const auto& [u, s] : run.snapshots) {
        auto j = to_json(s);
        j.erase("type");
        snapshots.push_back(std::move(j));
    }
    return json{{"run_id", run.run_id},
                {"sample_ref", run.sample_ref},
                {"engines", engines},
                {"depth", {{"navigational", run.depth.navigational}, {"informational", run.depth.informational}}},
                {"captures", captures},
                {"snapshots", snapshots},
                {"totals",
                 {{"attempted", run.totals.attempted},
                  {"succeeded", run.totals.succeeded},
                  {"failed", run.totals.failed},
                  {"short_captures", run.totals.short_captures},
                  {"unresolvable", run.totals.unresolvable}}},
                {"degraded", run.degraded}};
}

CollectionRun run_from_json(const json& j) {
    CollectionRun run;
    run.run_id = j.at("run_id").get<std::string>();
    run.sample_ref = j.value("sample_ref", "");
    for (const auto& e : j.at("engines")) {
        run.engines.push_back({e.at("engine_id").get<std::string>(), e.value("display_name", "")});
    }
    run.depth.navigational = j.at("depth").at("navigational").get<int>();
    run.depth.informational = j.at("depth").at("informational").get<int>();
    for (const auto& c : j.at("captures")) run.captures.push_back(capture_from_json(c));
    for (const auto& s : j.at("snapshots")) {
        auto snap = snapshot_from_json(s);
        run.snapshots[snap.normalized_url] = snap;
    }
    const auto& t = j.at("totals");
    run.totals = {t.at("attempted").get<std::size_t>(), t.at("succeeded").get<std::size_t>(),
                  t.at("failed").get<std::size_t>(), t.at("short_captures").get<std::size_t>(),
                  t.at("unresolvable").get<std::size_t>()};
    run.degraded = j.at("degraded").get<bool>();
    return run;
}

std::string serialize(const CollectionRun& run) { return to_json(run).dump(2) + "\n"; }

CollectionRun load_run_from_ledger(store::Store& store, std::string_view run_id) {
    auto& ledger = store.log("runs", run_id, "ledger.jsonl");
    auto records = ledger.read_all();
    if (records.empty() || records.front().value("type", "") != "run") {
        throw NotFoundError("no collection run " + std::string(run_id));
    }
    const auto& header = records.front();
    CollectionRun run;
    run.run_id = header.at("run_id").get<std::string>();
    run.sample_ref = header.value("sample_ref", "");
    for (const auto& e : header.at("engines")) {
        run.engines.push_back({e.at("engine_id").get<std::string>(), e.value("display_name", "")});
    }
    run.depth.navigational = header.at("depth").at("navigational").get<int>();
    run.depth.informational = header.at("depth").at("informational").get<int>();
    std::set<std::pair<std::string, std::string>> seen;
    for (std::size_t i = 1; i < records.size(); ++i) {
        const auto& rec = records[i];
        auto type = rec.value("type", "");
        if (type == "snapshot") {
            auto snap = snapshot_from_json(rec);
            run.snapshots.emplace(snap.normalized_url, snap);
        } else if (type == "capture") {
            auto c = capture_from_json(rec);
            if (seen.emplace(c.query, c.engine_id).second) run.captures.push_back(std::move(c));
        }
    }
    sort_captures(run.captures);
    compute_totals(run, header.value("degraded_threshold", 0.25));
    return run;
}

std::optional<CollectionRun> load_run(const store::Store& store, std::string_view run_id) {
    auto bytes = store.get_document("runs", run_id, "run.json");
    if (!bytes) return std::nullopt;
    return run_from_json(json::parse(*bytes));
}

// ---------------------------------------------------------------------------

namespace {

class RunState {
public:
    RunState(store::AppendLog& ledger, store::Store& store, DocumentFetcher& fetcher, Clock& clock,
             const CollectionOptions& options)
        : ledger_(ledger), store_(store), fetcher_(fetcher), clock_(clock), options_(options) {}

    void load(const std::vector<json>& records) {
        for (std::size_t i = 1; i < records.size(); ++i) {
            const auto& rec = records[i];
            auto type = rec.value("type", "");
            if (type == "snapshot") {
                auto snap = snapshot_from_json(rec);
                snapshots_.emplace(snap.normalized_url, snap);
            } else if (type == "capture") {
                done_.emplace(rec.at("query").get<std::string>(), rec.at("engine_id").get<std::string>());
            }
        }
    }

    bool done(const std::string& query, const std::string& engine) {
        std::lock_guard lock(mutex_);
        return done_.count({query, engine}) > 0;
    }

    void ensure_snapshot(const SerpResult& result) {
        std::promise<void> promise;
        std::shared_future<void> pending;
        {
            std::lock_guard lock(mutex_);
            if (snapshots_.count(result.normalized_url)) return;
            if (auto it = inflight_.find(result.normalized_url); it != inflight_.end()) {
                pending = it->second;
            } else {
                inflight_[result.normalized_url] = promise.get_future().share();
            }
        }
        if (pending.valid()) {
            pending.get();
            return;
        }
        try {
            auto snap = fetch(result);
            ledger_.append(to_json(snap));
            hook("snapshot_recorded");
            std::lock_guard lock(mutex_);
            snapshots_.emplace(snap.normalized_url, snap);
            inflight_.erase(result.normalized_url);
            promise.set_value();
        } catch (...) {
            {
                std::lock_guard lock(mutex_);
                inflight_.erase(result.normalized_url);
            }
            promise.set_exception(std::current_exception());
            throw;
        }
    }

    void record(const CaptureRecord& capture) {
        std::lock_guard lock(mutex_);
        if (!done_.emplace(capture.query, capture.engine_id).second) return;
        ledger_.append(to_json(capture));
    }

    void hook(std::string_view point) const {
        if (options_.fault_hook) options_.fault_hook(point);
    }

private:
    DocumentSnapshot fetch(const SerpResult& result) {
        DocumentSnapshot snap;
        snap.normalized_url = result.normalized_url;
        snap.snapshot_id = snapshot_id_for(result.normalized_url);
        if (result.unresolvable) {
            snap.status = FetchStatus::unresolvable;
        } else {
            auto outcome = fetcher_.fetch(result.normalized_url);
            snap.status = outcome.status;
            snap.http_code = outcome.http_code;
            if (outcome.status == FetchStatus::ok && outcome.content.empty()) {
                snap.status = FetchStatus::http_error;
            }
            if (snap.status == FetchStatus::ok) {
                snap.content_type = outcome.content_type;
                snap.content_hash = store_.put_object(outcome.content, outcome.content_type);
                hook("object_written");
            }
        }
        snap.fetched_at = format_timestamp(clock_.now());
        return snap;
    }

    store::AppendLog& ledger_;
    store::Store& store_;
    DocumentFetcher& fetcher_;
    Clock& clock_;
    const CollectionOptions& options_;
    std::mutex mutex_;
    std::set<std::pair<std::string, std::string>> done_;
    std::map<std::string, DocumentSnapshot> snapshots_;
    std::map<std::string, std::shared_future<void>> inflight_;
};

}  // namespace

CollectionRun run_collection(const std::vector<sampler::SampledQuery>& sample,
                             const std::vector<EngineBinding>& engines, DocumentFetcher& fetcher,
                             store::Store& store, Clock& clock, const CollectionOptions& options) {
    if (sample.empty()) throw ValidationError("sample is empty");
    if (engines.empty()) throw ValidationError("no engines configured");
    if (options.concurrency < 1) throw ValidationError("concurrency limit must be >= 1");
    std::set<std::string> ids;
    std::vector<EngineInfo> infos;
    for (const auto& e : engines) {
        if (!ids.insert(e.config.engine_id).second) throw ValidationError("duplicate engine id " + e.config.engine_id);
        if (!e.adapter) throw ValidationError("engine " + e.config.engine_id + " has no adapter");
        infos.push_back({e.config.engine_id, e.config.display_name});
    }

    // Debris of an interrupted earlier attempt.
    store.sweep_temp_files();
    auto& ledger = store.log("runs", options.run_id, "ledger.jsonl");
    auto header = header_json(options.run_id, options.sample_ref, infos, options.depth, options.degraded_threshold);
    auto records = ledger.read_all();
    if (records.empty()) {
        ledger.append(header);
        records = ledger.read_all();
    } else {
        auto existing = records.front();
        existing.erase("seq");
        if (existing != header) throw ValidationError("run " + options.run_id + " exists with a different configuration");
    }

    RunState state(ledger, store, fetcher, clock, options);
    state.load(records);

    struct WorkItem {
        const sampler::SampledQuery* query;
        const EngineBinding* engine;
    };
    std::vector<WorkItem> work;
    std::set<std::string> seen_queries;
    for (const auto& q : sample) {
        if (!is_study_intent(q.intent)) continue;
        if (!seen_queries.insert(q.text).second) throw ValidationError("duplicate query in sample: " + q.text);
        for (const auto& e : engines) {
            if (!state.done(q.text, e.config.engine_id)) work.push_back({&q, &e});
        }
    }

    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        while (true) {
            {
                std::lock_guard lock(error_mutex);
                if (first_error) return;
            }
            auto i = next.fetch_add(1);
            if (i >= work.size()) return;
            const auto& item = work[i];
            try {
                const int k = options.depth.depth_for(item.query->intent);
                auto capture = collect_serp(*item.engine->adapter, item.engine->config.engine_id, item.query->text, k,
                                            options.tracking, clock);
                state.hook("serp_fetched");
                for (const auto& r : capture.results) state.ensure_snapshot(r);
                CaptureRecord record;
                record.query = item.query->text;
                record.intent = item.query->intent;
                record.engine_id = item.engine->config.engine_id;
                record.depth = k;
                record.ok = capture.ok;
                record.reason = capture.reason;
                record.short_capture = capture.short_capture;
                record.unresolvable = capture.unresolvable;
                record.results = std::move(capture.results);
                record.captured_at = format_timestamp(clock.now());
                state.record(record);
                state.hook("capture_recorded");
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    const auto workers = std::min(options.concurrency, std::max<std::size_t>(work.size(), 1));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    auto run = load_run_from_ledger(store, options.run_id);
    store.put_document("runs", options.run_id, "run.json", serialize(run));
    return run;
}

}  // namespace serpeval::collector
