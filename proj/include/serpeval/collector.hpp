#pragma once

// Result collection: engine adapters (live scrape or recorded replay),
// tracking-URL resolution, document snapshots and the resumable collection run.

#include "serpeval/core.hpp"
#include "serpeval/sampler.hpp"
#include "serpeval/store.hpp"
#include "serpeval/url.hpp"

#include <json.hpp>

#include <chrono>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace serpeval::collector {

using json = nlohmann::json;

enum class AdapterKind { live_scrape, replay_fixture };

std::string_view to_string(AdapterKind kind);
std::optional<AdapterKind> parse_adapter_kind(std::string_view token);

// Extraction rules for a live results page. Regions matching any exclude
// pattern (ads, news boxes, other vertical inserts) are cut out before the
// result pattern is applied; each match of the result pattern is one organic
// result, in page order.
struct SelectorSpec {
    std::vector<std::string> exclude_patterns;
    std::string result_pattern;
    int url_group = 1;
    int title_group = 2;
    int snippet_group = 3;
};

struct EngineConfig {
    std::string engine_id;
    std::string display_name;
    AdapterKind adapter = AdapterKind::replay_fixture;
    std::string endpoint_template;  // live: "https://host/search?q={query}&n={k}"
    std::filesystem::path fixture_path;
    int rate_limit_per_minute = 60;
    SelectorSpec selector;
};

struct SerpResult {
    std::string engine_id;
    std::string query;
    int rank = 0;
    std::string raw_url;
    std::string resolved_url;  // empty when the tracking URL could not be resolved
    std::string normalized_url;
    bool unresolvable = false;
    std::string title;
    std::string snippet;
    std::string captured_at;

    bool operator==(const SerpResult&) const = default;
};

enum class FetchStatus { ok, http_error, timeout, unresolvable };

std::string_view to_string(FetchStatus status);
std::optional<FetchStatus> parse_fetch_status(std::string_view token);

struct FetchOutcome {
    FetchStatus status = FetchStatus::ok;
    int http_code = 0;
    std::string content;
    std::string content_type;
};

struct DocumentSnapshot {
    std::string normalized_url;
    std::string snapshot_id;   // stable public handle derived from the URL
    std::string content_hash;  // object key; empty unless status == ok
    std::string content_type;
    FetchStatus status = FetchStatus::ok;
    int http_code = 0;
    std::string fetched_at;

    bool operator==(const DocumentSnapshot&) const = default;
};

std::string snapshot_id_for(std::string_view normalized_url);

// ---------------------------------------------------------------------------
// Adapters

class AdapterError : public Error {
public:
    using Error::Error;
};

struct RawResult {
    int rank = 0;
    std::string raw_url;
    std::string title;
    std::string snippet;
};

class SerpAdapter {
public:
    virtual ~SerpAdapter() = default;
    // Results in rank order, at most k. Throws AdapterError on failure.
    virtual std::vector<RawResult> fetch_results(const std::string& query, int k) = 0;
};

class DocumentFetcher {
public:
    virtual ~DocumentFetcher() = default;
    virtual FetchOutcome fetch(const std::string& url) = 0;
};

struct FixtureRecord {
    std::string query;
    int rank = 0;
    std::string raw_url;
    std::string title;
    std::string snippet;
};

// One recorded engine: SERP records, an optional per-query failure map and
// the URL -> document map used for snapshots.
struct ReplayFixture {
    std::string engine_id;
    std::vector<FixtureRecord> records;
    std::map<std::string, std::string> failures;  // normalized query -> reason
    std::map<std::string, FetchOutcome> documents;  // normalized url -> outcome

    static ReplayFixture load(const std::filesystem::path& path);
    static ReplayFixture from_json(const json& j);
};

class ReplaySerpAdapter final : public SerpAdapter {
public:
    explicit ReplaySerpAdapter(std::shared_ptr<const ReplayFixture> fixture);
    std::vector<RawResult> fetch_results(const std::string& query, int k) override;

private:
    std::shared_ptr<const ReplayFixture> fixture_;
};

// Documents from every replay fixture in the run. URLs without a recorded
// document come back as HTTP 404.
class ReplayDocumentFetcher final : public DocumentFetcher {
public:
    void add(const ReplayFixture& fixture);
    FetchOutcome fetch(const std::string& url) override;

private:
    std::map<std::string, FetchOutcome> documents_;
};

// At most `per_minute` acquisitions in any 60 s window, shared by all callers.
class RateLimiter {
public:
    RateLimiter(int per_minute, Clock& clock);
    void acquire();

private:
    int per_minute_;
    Clock& clock_;
    std::mutex mutex_;
    std::deque<Timestamp> recent_;
};

struct FetchPolicy {
    std::chrono::milliseconds timeout{10'000};
    int retries = 1;
    std::string user_agent = "serpeval/1.0";
};

class LiveScrapeAdapter final : public SerpAdapter {
public:
    LiveScrapeAdapter(EngineConfig config, FetchPolicy policy, Clock& clock);
    std::vector<RawResult> fetch_results(const std::string& query, int k) override;

private:
    EngineConfig config_;
    FetchPolicy policy_;
    RateLimiter limiter_;
};

// Applies a selector spec to a results page.
std::vector<RawResult> extract_results(const std::string& page, const SelectorSpec& selector, int k);

class HttpDocumentFetcher final : public DocumentFetcher {
public:
    explicit HttpDocumentFetcher(FetchPolicy policy);
    FetchOutcome fetch(const std::string& url) override;

private:
    FetchPolicy policy_;
};

// ---------------------------------------------------------------------------
// Capture

struct Capture {
    bool ok = true;
    std::string reason;  // failure reason, or a note such as "short capture"
    std::vector<SerpResult> results;
    bool short_capture = false;
    int unresolvable = 0;
};

Capture collect_serp(SerpAdapter& adapter, const std::string& engine_id, const std::string& query, int k,
                     const std::vector<url::TrackingPattern>& tracking, Clock& clock);

struct DepthPolicy {
    int navigational = 1;
    int informational = 10;

    int depth_for(Intent intent) const;
};

struct CaptureRecord {
    std::string query;
    Intent intent = Intent::informational;
    std::string engine_id;
    int depth = 0;
    bool ok = true;
    std::string reason;
    bool short_capture = false;
    int unresolvable = 0;
    std::vector<SerpResult> results;
    std::string captured_at;

    bool operator==(const CaptureRecord&) const = default;
};

struct EngineInfo {
    std::string engine_id;
    std::string display_name;

    bool operator==(const EngineInfo&) const = default;
};

struct LedgerTotals {
    std::size_t attempted = 0;
    std::size_t succeeded = 0;
    std::size_t failed = 0;
    std::size_t short_captures = 0;
    std::size_t unresolvable = 0;

    bool operator==(const LedgerTotals&) const = default;
};

struct CollectionRun {
    std::string run_id;
    std::string sample_ref;
    std::vector<EngineInfo> engines;
    DepthPolicy depth;
    std::vector<CaptureRecord> captures;                 // sorted by (query, engine_id)
    std::map<std::string, DocumentSnapshot> snapshots;   // by normalized url
    LedgerTotals totals;
    bool degraded = false;

    const CaptureRecord* find(std::string_view query, std::string_view engine_id) const;
    const DocumentSnapshot* snapshot(std::string_view normalized_url) const;
    std::vector<std::string> queries(Intent intent) const;
};

json to_json(const CollectionRun& run);
CollectionRun run_from_json(const json& j);
std::string serialize(const CollectionRun& run);  // canonical bytes

struct EngineBinding {
    EngineConfig config;
    std::shared_ptr<SerpAdapter> adapter;
};

struct CollectionOptions {
    std::string run_id = "run-1";
    std::string sample_ref;
    DepthPolicy depth;
    std::size_t concurrency = 1;
    double degraded_threshold = 0.25;  // failed / attempted above this marks the run degraded
    std::vector<url::TrackingPattern> tracking;
    // Called at named points ("serp_fetched", "object_written",
    // "snapshot_recorded", "capture_recorded") for crash-injection tests.
    std::function<void(std::string_view)> fault_hook;
};

// Attempts every (query, engine) pair not already in the run ledger, then
// writes runs/<run_id>/run.json. Safe to call again after an interruption.
CollectionRun run_collection(const std::vector<sampler::SampledQuery>& sample,
                             const std::vector<EngineBinding>& engines, DocumentFetcher& fetcher,
                             store::Store& store, Clock& clock, const CollectionOptions& options);

// Rebuilds the run view from the ledger alone.
CollectionRun load_run_from_ledger(store::Store& store, std::string_view run_id);
std::optional<CollectionRun> load_run(const store::Store& store, std::string_view run_id);

}  // namespace serpeval::collector
