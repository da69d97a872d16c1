#include "serpeval/collector.hpp"
#include "serpeval/http.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace serpeval;
using namespace serpeval::collector;
using serpeval::testing::TempDir;

namespace {

const Timestamp kT0 = *parse_timestamp("2026-03-01T10:00:00.000Z");
const std::vector<url::TrackingPattern> kTracking{{"redirect.search.example", "/url", "url"}};

json fixture_json(const std::string& engine, const std::map<std::string, int>& counts) {
    json results = json::array();
    json documents = json::object();
    for (const auto& [q, n] : counts) {
        for (int r = 1; r <= n; ++r) {
            auto u = "https://" + engine + ".example/" + std::to_string(r) + "?q=" + url::percent_encode(q);
            if (r == 2) u = "https://shared.example/" + url::percent_encode(q);  // returned by every engine
            results.push_back({{"query", q}, {"rank", r}, {"raw_url", u}, {"title", "t"}, {"snippet", "s"}});
            documents[u] = {{"body", "<p>" + u + "</p>"}, {"content_type", "text/html"}};
        }
    }
    return {{"engine_id", engine}, {"results", results}, {"documents", documents}};
}

std::shared_ptr<ReplayFixture> make_fixture(const json& j) {
    return std::make_shared<ReplayFixture>(ReplayFixture::from_json(j));
}

struct Bench {
    TempDir tmp;
    store::Store store{tmp.path()};
    ManualClock clock{kT0};
    std::vector<EngineBinding> engines;
    ReplayDocumentFetcher fetcher;

    void add(const json& fixture) {
        auto f = make_fixture(fixture);
        fetcher.add(*f);
        EngineConfig cfg;
        cfg.engine_id = f->engine_id;
        cfg.display_name = f->engine_id;
        engines.push_back({cfg, std::make_shared<ReplaySerpAdapter>(f)});
    }
};

std::vector<sampler::SampledQuery> sample_of(const std::vector<std::pair<std::string, Intent>>& qs) {
    std::vector<sampler::SampledQuery> out;
    for (const auto& [t, i] : qs) out.push_back({t, 1, i, 1});
    return out;
}

class CountingFetcher final : public DocumentFetcher {
public:
    explicit CountingFetcher(DocumentFetcher& inner) : inner_(inner) {}
    FetchOutcome fetch(const std::string& u) override {
        std::lock_guard lock(mutex_);
        ++calls[u];
        return inner_.fetch(u);
    }
    std::map<std::string, int> calls;

private:
    DocumentFetcher& inner_;
    std::mutex mutex_;
};

void check_rank_integrity(const CollectionRun& run) {
    for (const auto& c : run.captures) {
        EXPECT_LE(static_cast<int>(c.results.size()), c.depth);
        for (std::size_t i = 0; i < c.results.size(); ++i) EXPECT_EQ(c.results[i].rank, static_cast<int>(i) + 1);
    }
}

}  // namespace

TEST(CollectSerp, FullCapture) {
    auto f = make_fixture(fixture_json("g", {{"q", 10}}));
    ReplaySerpAdapter a(f);
    ManualClock clock(kT0);
    auto c = collect_serp(a, "g", "q", 10, {}, clock);
    EXPECT_TRUE(c.ok);
    EXPECT_FALSE(c.short_capture);
    ASSERT_EQ(c.results.size(), 10u);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(c.results[i].rank, i + 1);
    EXPECT_EQ(c.results[0].captured_at, "2026-03-01T10:00:00.000Z");
}

TEST(CollectSerp, ShortCapture) {
    auto f = make_fixture(fixture_json("g", {{"q", 3}}));
    ReplaySerpAdapter a(f);
    ManualClock clock(kT0);
    auto c = collect_serp(a, "g", "q", 10, {}, clock);
    EXPECT_TRUE(c.ok);
    EXPECT_TRUE(c.short_capture);
    EXPECT_EQ(c.results.size(), 3u);
    EXPECT_EQ(c.reason, "short capture: 3 of 10");

    auto none = collect_serp(a, "g", "unknown", 10, {}, clock);
    EXPECT_TRUE(none.short_capture);
    EXPECT_EQ(none.reason, "no results");
}

TEST(CollectSerp, DuplicateRankIsAParseError) {
    json j{{"engine_id", "g"}, {"results", json::array()}};
    for (int r : {1, 2, 2, 4}) {
        j["results"].push_back({{"query", "q"}, {"rank", r}, {"raw_url", "https://a.de/" + std::to_string(r)}});
    }
    ReplaySerpAdapter a(make_fixture(j));
    ManualClock clock(kT0);
    auto c = collect_serp(a, "g", "q", 10, {}, clock);
    EXPECT_FALSE(c.ok);
    EXPECT_EQ(c.reason, "parse error: duplicate rank 2");
    EXPECT_TRUE(c.results.empty());
}

TEST(CollectSerp, MissingRankAndBadUrlAreParseErrors) {
    json gap{{"engine_id", "g"},
             {"results", {{{"query", "q"}, {"rank", 1}, {"raw_url", "https://a.de/"}},
                          {{"query", "q"}, {"rank", 3}, {"raw_url", "https://b.de/"}}}}};
    ManualClock clock(kT0);
    ReplaySerpAdapter a(make_fixture(gap));
    EXPECT_EQ(collect_serp(a, "g", "q", 10, {}, clock).reason, "parse error: missing rank 2");

    json bad{{"engine_id", "g"}, {"results", {{{"query", "q"}, {"rank", 1}, {"raw_url", "not a url"}}}}};
    ReplaySerpAdapter b(make_fixture(bad));
    auto c = collect_serp(b, "g", "q", 10, {}, clock);
    EXPECT_FALSE(c.ok);
    EXPECT_EQ(c.reason, "parse error: invalid url at rank 1");
}

TEST(CollectSerp, AdapterFailureIsRecordedNotEmpty) {
    json j{{"engine_id", "g"}, {"results", json::array()}, {"failures", {{"q", "captcha page"}}}};
    ReplaySerpAdapter a(make_fixture(j));
    ManualClock clock(kT0);
    auto c = collect_serp(a, "g", "q", 10, {}, clock);
    EXPECT_FALSE(c.ok);
    EXPECT_EQ(c.reason, "adapter failure: captcha page");
}

TEST(CollectSerp, TrackingUrlsAreResolvedOrFlagged) {
    json j{{"engine_id", "g"},
           {"results",
            {{{"query", "q"}, {"rank", 1}, {"raw_url", "https://redirect.search.example/url?url=https%3A%2F%2FSite.de%2Fa%23x"}},
             {{"query", "q"}, {"rank", 2}, {"raw_url", "https://redirect.search.example/url?sa=t"}},
             {{"query", "q"}, {"rank", 3}, {"raw_url", "HTTPS://Plain.de:443"}}}}};
    ReplaySerpAdapter a(make_fixture(j));
    ManualClock clock(kT0);
    auto c = collect_serp(a, "g", "q", 3, kTracking, clock);
    ASSERT_TRUE(c.ok);
    ASSERT_EQ(c.results.size(), 3u);
    EXPECT_EQ(c.results[0].resolved_url, "https://Site.de/a#x");
    EXPECT_EQ(c.results[0].normalized_url, "https://site.de/a");
    EXPECT_TRUE(c.results[1].unresolvable);
    EXPECT_EQ(c.results[1].resolved_url, "");
    EXPECT_EQ(c.unresolvable, 1);
    EXPECT_EQ(c.results[2].normalized_url, "https://plain.de/");
}

TEST(ReplayFixture, DocumentsMustHaveBodyExactlyWhenOk) {
    json ok_without_body{{"engine_id", "g"}, {"results", json::array()}, {"documents", {{"https://a.de/", json::object()}}}};
    EXPECT_THROW(ReplayFixture::from_json(ok_without_body), ValidationError);
    json timeout_with_body{{"engine_id", "g"},
                           {"results", json::array()},
                           {"documents", {{"https://a.de/", {{"status", "timeout"}, {"body", "x"}}}}}};
    EXPECT_THROW(ReplayFixture::from_json(timeout_with_body), ValidationError);
}

TEST(ReplayFetcher, OutcomesFollowFixture) {
    json j{{"engine_id", "g"},
           {"results", json::array()},
           {"documents",
            {{"https://a.de/ok", {{"body", "<b>hi</b>"}, {"content_type", "text/html"}}},
             {"https://a.de/slow", {{"status", "timeout"}}},
             {"https://a.de/gone", {{"status", "http-error"}, {"code", 410}}}}}};
    ReplayDocumentFetcher f;
    f.add(ReplayFixture::from_json(j));
    auto ok = f.fetch("HTTPS://a.de/ok");
    EXPECT_EQ(ok.status, FetchStatus::ok);
    EXPECT_EQ(ok.content, "<b>hi</b>");
    auto slow = f.fetch("https://a.de/slow");
    EXPECT_EQ(slow.status, FetchStatus::timeout);
    EXPECT_TRUE(slow.content.empty());
    EXPECT_EQ(f.fetch("https://a.de/gone").http_code, 410);
    EXPECT_EQ(f.fetch("https://a.de/unknown").http_code, 404);
}

TEST(RunCollection, TwoByTwoAtDepthTen) {
    Bench b;
    b.add(fixture_json("g", {{"alpha", 10}, {"beta", 7}}));
    b.add(fixture_json("b", {{"alpha", 10}, {"beta", 10}}));
    auto sample = sample_of({{"alpha", Intent::informational}, {"beta", Intent::informational}});
    auto run = run_collection(sample, b.engines, b.fetcher, b.store, b.clock, {});
    ASSERT_EQ(run.captures.size(), 4u);
    std::size_t results = 0;
    for (const auto& c : run.captures) results += c.results.size();
    EXPECT_LE(results, 40u);
    EXPECT_EQ(results, 37u);
    EXPECT_EQ(run.totals.attempted, 4u);
    EXPECT_EQ(run.totals.succeeded + run.totals.failed, run.totals.attempted);
    EXPECT_EQ(run.totals.short_captures, 1u);
    check_rank_integrity(run);
    EXPECT_EQ(load_run(b.store, "run-1").has_value(), true);
    EXPECT_EQ(serialize(*load_run(b.store, "run-1")), serialize(run));
}

TEST(RunCollection, SharedUrlIsFetchedAndStoredOnce) {
    Bench b;
    b.add(fixture_json("g", {{"alpha", 3}}));
    b.add(fixture_json("b", {{"alpha", 3}}));
    CountingFetcher counting(b.fetcher);
    auto run = run_collection(sample_of({{"alpha", Intent::informational}}), b.engines, counting, b.store, b.clock, {});
    for (const auto& [u, n] : counting.calls) EXPECT_EQ(n, 1) << u;
    EXPECT_EQ(counting.calls.size(), 5u);  // 2 unique per engine + 1 shared
    EXPECT_EQ(run.snapshots.size(), 5u);
    auto* shared = run.snapshot("https://shared.example/alpha");
    ASSERT_NE(shared, nullptr);
    EXPECT_EQ(shared->status, FetchStatus::ok);
    auto obj = b.store.get_object(shared->content_hash);
    ASSERT_TRUE(obj);
    EXPECT_EQ(obj->content, "<p>https://shared.example/alpha</p>");
}

TEST(RunCollection, SnapshotFailuresAreRecordedNotFatal) {
    Bench b;
    json j{{"engine_id", "g"},
           {"results",
            {{{"query", "q"}, {"rank", 1}, {"raw_url", "https://a.de/slow"}},
             {{"query", "q"}, {"rank", 2}, {"raw_url", "https://a.de/missing"}},
             {{"query", "q"}, {"rank", 3}, {"raw_url", "https://redirect.search.example/url?x=1"}}}},
           {"documents", {{"https://a.de/slow", {{"status", "timeout"}}}}}};
    b.add(j);
    CollectionOptions opts;
    opts.tracking = kTracking;
    auto run = run_collection(sample_of({{"q", Intent::informational}}), b.engines, b.fetcher, b.store, b.clock, opts);
    EXPECT_EQ(run.snapshot("https://a.de/slow")->status, FetchStatus::timeout);
    EXPECT_TRUE(run.snapshot("https://a.de/slow")->content_hash.empty());
    EXPECT_EQ(run.snapshot("https://a.de/missing")->status, FetchStatus::http_error);
    EXPECT_EQ(run.snapshot("https://a.de/missing")->http_code, 404);
    EXPECT_EQ(run.snapshot("https://redirect.search.example/url?x=1")->status, FetchStatus::unresolvable);
    EXPECT_EQ(run.totals.unresolvable, 1u);
    EXPECT_EQ(run.totals.succeeded, 1u);
}

TEST(RunCollection, NavigationalCapturesHoldAtMostOneResult) {
    Bench b;
    b.add(fixture_json("g", {{"n1", 10}, {"n2", 4}, {"i1", 10}}));
    b.add(fixture_json("b", {{"n1", 10}, {"n2", 0}, {"i1", 10}}));
    auto sample = sample_of({{"n1", Intent::navigational}, {"n2", Intent::navigational}, {"i1", Intent::informational}});
    auto run = run_collection(sample, b.engines, b.fetcher, b.store, b.clock, {});
    for (const auto& c : run.captures) {
        if (c.intent == Intent::navigational) {
            EXPECT_LE(c.results.size(), 1u);
            EXPECT_EQ(c.depth, 1);
        } else {
            EXPECT_EQ(c.results.size(), 10u);
        }
    }
    EXPECT_EQ(run.queries(Intent::navigational), (std::vector<std::string>{"n1", "n2"}));
}

TEST(RunCollection, OtherIntentsAreNotCollected) {
    Bench b;
    b.add(fixture_json("g", {{"a", 2}, {"t", 2}}));
    auto run = run_collection(sample_of({{"a", Intent::informational}, {"t", Intent::transactional}}), b.engines,
                              b.fetcher, b.store, b.clock, {});
    EXPECT_EQ(run.captures.size(), 1u);
}

TEST(RunCollection, ResumeAfterInterruptAddsOnlyMissingCaptures) {
    Bench b;
    b.add(fixture_json("g", {{"alpha", 10}, {"beta", 10}}));
    b.add(fixture_json("b", {{"alpha", 10}, {"beta", 10}}));
    auto sample = sample_of({{"alpha", Intent::informational}, {"beta", Intent::informational}});
    CollectionOptions opts;
    int recorded = 0;
    opts.fault_hook = [&](std::string_view point) {
        if (point == "capture_recorded" && ++recorded == 3) throw std::runtime_error("interrupted");
    };
    EXPECT_THROW(run_collection(sample, b.engines, b.fetcher, b.store, b.clock, opts), std::runtime_error);
    EXPECT_EQ(load_run_from_ledger(b.store, "run-1").captures.size(), 3u);

    CountingFetcher counting(b.fetcher);
    opts.fault_hook = nullptr;
    auto run = run_collection(sample, b.engines, counting, b.store, b.clock, opts);
    EXPECT_EQ(run.captures.size(), 4u);
    std::size_t capture_records = 0;
    for (const auto& rec : b.store.log("runs", "run-1", "ledger.jsonl").read_all()) {
        capture_records += rec.value("type", "") == "capture";
    }
    EXPECT_EQ(capture_records, 4u);
    // The resumed capture shares one URL with already-snapshotted captures.
    std::size_t fetched = 0;
    for (const auto& [u, n] : counting.calls) fetched += static_cast<std::size_t>(n);
    EXPECT_LE(fetched, 9u);

    // Nothing left to do on a third call.
    auto again = run_collection(sample, b.engines, b.fetcher, b.store, b.clock, opts);
    EXPECT_EQ(serialize(again), serialize(run));
}

TEST(RunCollection, ResumeMatchesUninterruptedRunAtEveryHookPoint) {
    auto build = [](Bench& b) {
        b.add(fixture_json("g", {{"alpha", 5}, {"beta", 3}, {"gamma", 1}}));
        b.add(fixture_json("b", {{"alpha", 4}, {"beta", 5}, {"gamma", 2}}));
    };
    auto sample = sample_of(
        {{"alpha", Intent::informational}, {"beta", Intent::informational}, {"gamma", Intent::navigational}});
    Bench ref;
    build(ref);
    auto expected = serialize(run_collection(sample, ref.engines, ref.fetcher, ref.store, ref.clock, {}));

    for (int crash_at = 1; crash_at < 40; ++crash_at) {
        Bench b;
        build(b);
        CollectionOptions opts;
        int n = 0;
        opts.fault_hook = [&](std::string_view) {
            if (++n == crash_at) throw std::runtime_error("crash");
        };
        bool crashed = false;
        try {
            run_collection(sample, b.engines, b.fetcher, b.store, b.clock, opts);
        } catch (const std::runtime_error&) {
            crashed = true;
        }
        opts.fault_hook = nullptr;
        auto resumed = serialize(run_collection(sample, b.engines, b.fetcher, b.store, b.clock, opts));
        EXPECT_EQ(resumed, expected) << "crash at hook " << crash_at;
        if (!crashed) break;
    }
}

TEST(RunCollection, ConcurrentRunsAreDeterministic) {
    std::vector<std::string> outputs;
    for (std::size_t concurrency : {1u, 4u, 8u}) {
        Bench b;
        std::map<std::string, int> counts;
        std::vector<std::pair<std::string, Intent>> qs;
        for (int i = 0; i < 20; ++i) {
            auto q = "query " + std::to_string(i);
            counts[q] = 1 + i % 10;
            qs.push_back({q, i % 3 == 0 ? Intent::navigational : Intent::informational});
        }
        b.add(fixture_json("g", counts));
        b.add(fixture_json("b", counts));
        CollectionOptions opts;
        opts.concurrency = concurrency;
        CountingFetcher counting(b.fetcher);
        auto run = run_collection(sample_of(qs), b.engines, counting, b.store, b.clock, opts);
        for (const auto& [u, n] : counting.calls) EXPECT_EQ(n, 1) << u;
        EXPECT_EQ(run.totals.attempted, 40u);
        check_rank_integrity(run);
        outputs.push_back(serialize(run));
    }
    EXPECT_EQ(outputs[0], outputs[1]);
    EXPECT_EQ(outputs[0], outputs[2]);
}

TEST(RunCollection, DegradedAboveThreshold) {
    Bench b;
    json j = fixture_json("g", {{"a", 2}, {"b", 2}, {"c", 2}, {"d", 2}});
    j["failures"] = {{"a", "blocked"}, {"b", "blocked"}};
    b.add(j);
    auto sample = sample_of({{"a", Intent::informational},
                             {"b", Intent::informational},
                             {"c", Intent::informational},
                             {"d", Intent::informational}});
    CollectionOptions opts;
    opts.degraded_threshold = 0.5;
    auto at = run_collection(sample, b.engines, b.fetcher, b.store, b.clock, opts);
    EXPECT_EQ(at.totals.failed, 2u);
    EXPECT_FALSE(at.degraded);

    opts.run_id = "run-2";
    opts.degraded_threshold = 0.25;
    auto above = run_collection(sample, b.engines, b.fetcher, b.store, b.clock, opts);
    EXPECT_TRUE(above.degraded);
}

TEST(RunCollection, RejectsChangedConfigurationOnResume) {
    Bench b;
    b.add(fixture_json("g", {{"a", 2}}));
    auto sample = sample_of({{"a", Intent::informational}});
    run_collection(sample, b.engines, b.fetcher, b.store, b.clock, {});
    CollectionOptions opts;
    opts.depth.informational = 5;
    EXPECT_THROW(run_collection(sample, b.engines, b.fetcher, b.store, b.clock, opts), ValidationError);
}

TEST(RunCollection, RejectsBadInputs) {
    Bench b;
    EXPECT_THROW(run_collection({}, b.engines, b.fetcher, b.store, b.clock, {}), ValidationError);
    EXPECT_THROW(run_collection(sample_of({{"a", Intent::informational}}), b.engines, b.fetcher, b.store, b.clock, {}),
                 ValidationError);
    b.add(fixture_json("g", {{"a", 2}}));
    b.add(fixture_json("g", {{"a", 2}}));
    EXPECT_THROW(run_collection(sample_of({{"a", Intent::informational}}), b.engines, b.fetcher, b.store, b.clock, {}),
                 ValidationError);
}

TEST(RateLimiter, NeverExceedsLimitInAnyWindow) {
    ManualClock clock(kT0);
    RateLimiter limiter(5, clock);
    std::vector<Timestamp> grants;
    for (int i = 0; i < 23; ++i) {
        limiter.acquire();
        grants.push_back(clock.now());
        clock.advance(std::chrono::seconds(3));
    }
    for (std::size_t i = 0; i < grants.size(); ++i) {
        int in_window = 0;
        for (std::size_t j = i; j < grants.size() && grants[j] - grants[i] < std::chrono::minutes(1); ++j) ++in_window;
        EXPECT_LE(in_window, 5);
    }
    EXPECT_GE(grants.back() - grants.front(), std::chrono::minutes(4));
    EXPECT_THROW(RateLimiter(0, clock), ValidationError);
}

// ---------------------------------------------------------------------------
// Live adapter against a local server

namespace {

class LocalServer {
public:
    LocalServer() {
        server_.Get("/search", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            last_query = req.get_param_value("q");
            if (last_query == "fail") {
                res.status = 503;
                return;
            }
            res.set_content(R"(<html><div class="ad"><a href="https://ads.example/buy">Ad</a></div>
<li class="r"><a href="https://redirect.search.example/url?url=https%3A%2F%2Fone.de%2F">One &amp; only</a><p>first <b>hit</b></p></li>
<div class="news"><li class="r"><a href="https://news.example/">News</a><p>n</p></li></div>
<li class="r"><a href="https://two.de/x?a=1&amp;b=2">Two</a><p>second</p></li>
<li class="r"><a href="https://three.de/">Three</a><p>third</p></li></html>)",
                            "text/html");
        });
        server_.Get("/doc", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("<h1>doc</h1>", "text/html; charset=utf-8");
        });
        server_.Get("/empty", [](const httplib::Request&, httplib::Response& res) { res.set_content("", "text/html"); });
        server_.Get("/slow", [](const httplib::Request&, httplib::Response& res) {
            std::this_thread::sleep_for(std::chrono::milliseconds(700));
            res.set_content("late", "text/plain");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    std::string base() const { return "http://127.0.0.1:" + std::to_string(port_); }

    std::atomic<int> hits{0};
    std::string last_query;

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

EngineConfig live_config(const std::string& base) {
    EngineConfig cfg;
    cfg.engine_id = "live";
    cfg.adapter = AdapterKind::live_scrape;
    cfg.endpoint_template = base + "/search?q={query}&num={k}";
    cfg.rate_limit_per_minute = 100;
    cfg.selector.exclude_patterns = {R"(<div class="ad">[\s\S]*?</div>)", R"(<div class="news">[\s\S]*?</div>)"};
    cfg.selector.result_pattern = R"re(<li class="r"><a href="([^"]*)">([\s\S]*?)</a><p>([\s\S]*?)</p></li>)re";
    return cfg;
}

}  // namespace

TEST(LiveScrape, ExtractsOrganicResultsOnly) {
    LocalServer server;
    SystemClock clock;
    LiveScrapeAdapter adapter(live_config(server.base()), FetchPolicy{std::chrono::milliseconds(2000), 0, "t"}, clock);
    auto c = collect_serp(adapter, "live", "caf\xc3\xa9 & co", 10, kTracking, clock);
    EXPECT_EQ(server.last_query, "caf\xc3\xa9 & co");
    ASSERT_TRUE(c.ok) << c.reason;
    ASSERT_EQ(c.results.size(), 3u);
    EXPECT_EQ(c.results[0].normalized_url, "https://one.de/");
    EXPECT_EQ(c.results[0].title, "One & only");
    EXPECT_EQ(c.results[0].snippet, "first hit");
    EXPECT_EQ(c.results[1].raw_url, "https://two.de/x?a=1&b=2");
    EXPECT_EQ(c.results[2].rank, 3);
    for (const auto& r : c.results) {
        EXPECT_EQ(r.raw_url.find("ads.example"), std::string::npos);
        EXPECT_EQ(r.raw_url.find("news.example"), std::string::npos);
    }
    EXPECT_TRUE(c.short_capture);

    auto one = collect_serp(adapter, "live", "x", 1, kTracking, clock);
    EXPECT_EQ(one.results.size(), 1u);
}

TEST(LiveScrape, ServerErrorsAreRetriedThenReported) {
    LocalServer server;
    SystemClock clock;
    LiveScrapeAdapter adapter(live_config(server.base()), FetchPolicy{std::chrono::milliseconds(2000), 1, "t"}, clock);
    auto c = collect_serp(adapter, "live", "fail", 10, {}, clock);
    EXPECT_FALSE(c.ok);
    EXPECT_EQ(c.reason, "adapter failure: http status 503");
    EXPECT_EQ(server.hits.load(), 2);
}

TEST(LiveScrape, RateLimitIsEnforcedThroughTheClock) {
    LocalServer server;
    ManualClock clock(kT0);
    auto cfg = live_config(server.base());
    cfg.rate_limit_per_minute = 2;
    LiveScrapeAdapter adapter(cfg, FetchPolicy{std::chrono::milliseconds(2000), 0, "t"}, clock);
    for (int i = 0; i < 5; ++i) adapter.fetch_results("q", 10);
    EXPECT_EQ(server.hits.load(), 5);
    EXPECT_GE(clock.now() - kT0, std::chrono::minutes(2));
}

TEST(HttpFetcher, Outcomes) {
    LocalServer server;
    HttpDocumentFetcher fetcher(FetchPolicy{std::chrono::milliseconds(300), 0, "t"});
    auto ok = fetcher.fetch(server.base() + "/doc");
    EXPECT_EQ(ok.status, FetchStatus::ok);
    EXPECT_EQ(ok.content, "<h1>doc</h1>");
    EXPECT_EQ(ok.content_type, "text/html; charset=utf-8");
    auto missing = fetcher.fetch(server.base() + "/nothing");
    EXPECT_EQ(missing.status, FetchStatus::http_error);
    EXPECT_EQ(missing.http_code, 404);
    EXPECT_EQ(fetcher.fetch(server.base() + "/empty").status, FetchStatus::http_error);
    auto slow = fetcher.fetch(server.base() + "/slow");
    EXPECT_EQ(slow.status, FetchStatus::timeout);
    EXPECT_TRUE(slow.content.empty());
    auto refused = fetcher.fetch("http://127.0.0.1:1/");
    EXPECT_EQ(refused.status, FetchStatus::http_error);
    EXPECT_EQ(refused.http_code, 0);
}
