#include "serpeval/collector.hpp"
#include "serpeval/http.hpp"

#include <algorithm>
#include <regex>

namespace serpeval::collector {

std::string_view to_string(AdapterKind kind) {
    return kind == AdapterKind::live_scrape ? "live-scrape" : "replay-fixture";
}

std::optional<AdapterKind> parse_adapter_kind(std::string_view token) {
    if (token == "live-scrape") return AdapterKind::live_scrape;
    if (token == "replay-fixture") return AdapterKind::replay_fixture;
    return std::nullopt;
}

std::string_view to_string(FetchStatus status) {
    switch (status) {
        case FetchStatus::ok: return "ok";
        case FetchStatus::http_error: return "http-error";
        case FetchStatus::timeout: return "timeout";
        case FetchStatus::unresolvable: return "unresolvable";
    }
    return "http-error";
}

std::optional<FetchStatus> parse_fetch_status(std::string_view token) {
    if (token == "ok") return FetchStatus::ok;
    if (token == "http-error") return FetchStatus::http_error;
    if (token == "timeout") return FetchStatus::timeout;
    if (token == "unresolvable") return FetchStatus::unresolvable;
    return std::nullopt;
}

std::string snapshot_id_for(std::string_view normalized_url) {
    return sha256_hex(normalized_url).substr(0, 24);
}

// ---------------------------------------------------------------------------
// Replay

ReplayFixture ReplayFixture::from_json(const json& j) {
    ReplayFixture f;
    f.engine_id = j.at("engine_id").get<std::string>();
    for (const auto& r : j.at("results")) {
        FixtureRecord rec;
        rec.query = sampler::normalize_query(r.at("query").get<std::string>());
        rec.rank = r.at("rank").get<int>();
        rec.raw_url = r.at("raw_url").get<std::string>();
        rec.title = r.value("title", "");
        rec.snippet = r.value("snippet", "");
        if (rec.rank < 1) throw ValidationError("fixture " + f.engine_id + ": rank must be >= 1");
        f.records.push_back(std::move(rec));
    }
    if (j.contains("failures")) {
        for (const auto& [query, reason] : j.at("failures").items()) {
            f.failures[sampler::normalize_query(query)] = reason.get<std::string>();
        }
    }
    if (j.contains("documents")) {
        for (const auto& [raw, doc] : j.at("documents").items()) {
            FetchOutcome out;
            auto status = parse_fetch_status(doc.value("status", "ok"));
            if (!status) throw ValidationError("fixture " + f.engine_id + ": unknown document status for " + raw);
            out.status = *status;
            out.http_code = doc.value("code", out.status == FetchStatus::ok ? 200 : 0);
            out.content = doc.value("body", "");
            out.content_type = doc.value("content_type", "text/html; charset=utf-8");
            if ((out.status == FetchStatus::ok) != !out.content.empty()) {
                throw ValidationError("fixture " + f.engine_id + ": document " + raw +
                                      " must have a body exactly when its status is ok");
            }
            f.documents[url::normalize(raw)] = std::move(out);
        }
    }
    return f;
}

ReplayFixture ReplayFixture::load(const std::filesystem::path& path) {
    auto bytes = store::read_file(path);
    if (!bytes) throw NotFoundError("fixture not found: " + path.string());
    try {
        return from_json(json::parse(*bytes));
    } catch (const json::exception& e) {
        throw ValidationError("fixture " + path.string() + ": " + e.what());
    }
}

ReplaySerpAdapter::ReplaySerpAdapter(std::shared_ptr<const ReplayFixture> fixture) : fixture_(std::move(fixture)) {}

std::vector<RawResult> ReplaySerpAdapter::fetch_results(const std::string& query, int k) {
    auto q = sampler::normalize_query(query);
    if (auto it = fixture_->failures.find(q); it != fixture_->failures.end()) throw AdapterError(it->second);
    std::vector<RawResult> out;
    for (const auto& r : fixture_->records) {
        if (r.query == q && r.rank <= k) out.push_back({r.rank, r.raw_url, r.title, r.snippet});
    }
    std::stable_sort(out.begin(), out.end(), [](const RawResult& a, const RawResult& b) { return a.rank < b.rank; });
    return out;
}

void ReplayDocumentFetcher::add(const ReplayFixture& fixture) {
    for (const auto& [u, doc] : fixture.documents) {
        auto [it, inserted] = documents_.emplace(u, doc);
        if (!inserted && (it->second.status != doc.status || it->second.content != doc.content)) {
            throw ValidationError("conflicting fixture documents for " + u);
        }
    }
}

FetchOutcome ReplayDocumentFetcher::fetch(const std::string& u) {
    auto it = documents_.find(url::normalize(u));
    if (it == documents_.end()) return {FetchStatus::http_error, 404, {}, {}};
    return it->second;
}

// ---------------------------------------------------------------------------
// Live

RateLimiter::RateLimiter(int per_minute, Clock& clock) : per_minute_(per_minute), clock_(clock) {
    if (per_minute_ < 1) throw ValidationError("rate limit must be >= 1 per minute");
}

void RateLimiter::acquire() {
    std::lock_guard lock(mutex_);
    const auto window = std::chrono::minutes(1);
    while (true) {
        auto now = clock_.now();
        while (!recent_.empty() && now - recent_.front() >= window) recent_.pop_front();
        if (recent_.size() < static_cast<std::size_t>(per_minute_)) {
            recent_.push_back(now);
            return;
        }
        clock_.sleep_until(recent_.front() + window);
    }
}

namespace {

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

std::string decode_entities(std::string s) {
    s = replace_all(std::move(s), "&lt;", "<");
    s = replace_all(std::move(s), "&gt;", ">");
    s = replace_all(std::move(s), "&quot;", "\"");
    s = replace_all(std::move(s), "&#39;", "'");
    s = replace_all(std::move(s), "&nbsp;", " ");
    return replace_all(std::move(s), "&amp;", "&");
}

std::string strip_tags(const std::string& s) {
    static const std::regex tag("<[^>]*>");
    auto text = decode_entities(std::regex_replace(s, tag, " "));
    std::string out;
    bool space = false;
    for (char c : text) {
        if (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
            space = !out.empty();
            continue;
        }
        if (space) out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

struct Target {
    std::string origin;  // scheme://host[:port]
    std::string path;    // path[?query]
};

Target split_target(const std::string& u) {
    auto parsed = url::parse(u);
    Target t;
    t.origin = parsed.scheme + "://" + parsed.host + (parsed.port.empty() ? "" : ":" + parsed.port);
    t.path = parsed.path.empty() ? "/" : parsed.path;
    if (parsed.query) t.path += "?" + *parsed.query;
    return t;
}

bool is_timeout(httplib::Error e) {
    return e == httplib::Error::ConnectionTimeout || e == httplib::Error::Read || e == httplib::Error::Write;
}

void configure(httplib::Client& client, const FetchPolicy& policy) {
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(policy.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(policy.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    client.set_follow_location(true);
}

}  // namespace

std::vector<RawResult> extract_results(const std::string& page, const SelectorSpec& selector, int k) {
    std::string organic = page;
    try {
        for (const auto& pattern : selector.exclude_patterns) {
            organic = std::regex_replace(organic, std::regex(pattern), "");
        }
        std::regex result(selector.result_pattern);
        std::vector<RawResult> out;
        for (auto it = std::sregex_iterator(organic.begin(), organic.end(), result);
             it != std::sregex_iterator() && static_cast<int>(out.size()) < k; ++it) {
            const auto& m = *it;
            auto group = [&](int g) { return g > 0 && static_cast<std::size_t>(g) < m.size() ? m[g].str() : std::string{}; };
            RawResult r;
            r.rank = static_cast<int>(out.size()) + 1;
            r.raw_url = decode_entities(group(selector.url_group));
            r.title = strip_tags(group(selector.title_group));
            r.snippet = strip_tags(group(selector.snippet_group));
            if (r.raw_url.empty()) throw AdapterError("selector matched a result without a url");
            out.push_back(std::move(r));
        }
        return out;
    } catch (const std::regex_error& e) {
        throw AdapterError(std::string("bad selector pattern: ") + e.what());
    }
}

LiveScrapeAdapter::LiveScrapeAdapter(EngineConfig config, FetchPolicy policy, Clock& clock)
    : config_(std::move(config)), policy_(std::move(policy)), limiter_(config_.rate_limit_per_minute, clock) {}

std::vector<RawResult> LiveScrapeAdapter::fetch_results(const std::string& query, int k) {
    auto request = replace_all(config_.endpoint_template, "{query}", url::percent_encode(query));
    request = replace_all(std::move(request), "{k}", std::to_string(k));
    Target target;
    try {
        target = split_target(request);
    } catch (const url::UrlError& e) {
        throw AdapterError(std::string("bad endpoint: ") + e.what());
    }
    std::string last_error;
    for (int attempt = 0; attempt <= policy_.retries; ++attempt) {
        limiter_.acquire();
        httplib::Client client(target.origin);
        configure(client, policy_);
        auto res = client.Get(target.path, {{"User-Agent", policy_.user_agent}});
        if (!res) {
            last_error = "request failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "http status " + std::to_string(res->status);
            if (res->status >= 500) continue;
            break;
        }
        return extract_results(res->body, config_.selector, k);
    }
    throw AdapterError(last_error);
}

HttpDocumentFetcher::HttpDocumentFetcher(FetchPolicy policy) : policy_(std::move(policy)) {}

FetchOutcome HttpDocumentFetcher::fetch(const std::string& u) {
    Target target;
    try {
        target = split_target(u);
    } catch (const url::UrlError&) {
        return {FetchStatus::unresolvable, 0, {}, {}};
    }
    FetchOutcome outcome{FetchStatus::timeout, 0, {}, {}};
    for (int attempt = 0; attempt <= policy_.retries; ++attempt) {
        httplib::Client client(target.origin);
        configure(client, policy_);
        auto res = client.Get(target.path, {{"User-Agent", policy_.user_agent}});
        if (!res) {
            // Connection failures other than timeouts have no HTTP status; code 0.
            outcome = {is_timeout(res.error()) ? FetchStatus::timeout : FetchStatus::http_error, 0, {}, {}};
            continue;
        }
        if (res->status == 200 && !res->body.empty()) {
            auto type = res->get_header_value("Content-Type");
            return {FetchStatus::ok, 200, res->body, type.empty() ? "application/octet-stream" : type};
        }
        outcome = {FetchStatus::http_error, res->status, {}, {}};
        if (res->status < 500) break;
    }
    return outcome;
}

}  // namespace serpeval::collector
