#include "serpeval/cli.hpp"
#include "serpeval/store.hpp"

#include <regex>

namespace serpeval::cli {

namespace fs = std::filesystem;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
    std::string out = "invalid config (" + std::to_string(problems.size()) + " problem" +
                      (problems.size() == 1 ? "" : "s") + ")";
    for (const auto& p : problems) out += "\n  " + p;
    return out;
}

bool is_sha256_hex(const std::string& s) {
    return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) {
               return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
}

// Walks one JSON object, recording problems instead of throwing, and flags
// keys nobody asked for.
class Reader {
public:
    Reader(const json* node, std::string path, std::vector<std::string>& problems)
        : node_(node), path_(std::move(path)), problems_(problems) {
        if (node_ && !node_->is_object()) {
            problem(path_.empty() ? "config must be a JSON object" : path_ + " must be an object");
            node_ = nullptr;
        }
    }
    ~Reader() {
        if (!node_) return;
        for (const auto& [key, value] : node_->items()) {
            if (!seen_.count(key)) problem("unknown key " + where(key));
        }
    }
    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;

    const json* get(const std::string& key) {
        seen_.insert(key);
        if (!node_) return nullptr;
        auto it = node_->find(key);
        return it == node_->end() || it->is_null() ? nullptr : &*it;
    }
    bool has(const std::string& key) { return get(key) != nullptr; }

    void problem(const std::string& text) { problems_.push_back(text); }
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    std::optional<std::string> string(const std::string& key, bool required = false) {
        const auto* v = get(key);
        if (!v) {
            if (required) problem("missing " + where(key));
            return std::nullopt;
        }
        if (!v->is_string() || v->get<std::string>().empty()) {
            problem(where(key) + " must be a non-empty string");
            return std::nullopt;
        }
        return v->get<std::string>();
    }

    template <typename Int>
    std::optional<Int> integer(const std::string& key, Int min, bool required = false) {
        const auto* v = get(key);
        if (!v) {
            if (required) problem("missing " + where(key));
            return std::nullopt;
        }
        auto bad = [&] {
            problem(where(key) + " must be an integer >= " + std::to_string(min));
            return std::nullopt;
        };
        if (!v->is_number_integer()) return bad();
        if (v->is_number_unsigned()) {
            if (v->get<std::uint64_t>() > static_cast<std::uint64_t>(std::numeric_limits<Int>::max())) {
                problem(where(key) + " is too large");
                return std::nullopt;
            }
        } else if (v->get<std::int64_t>() < static_cast<std::int64_t>(min)) {
            return bad();
        }
        auto n = v->get<Int>();
        if (n < min) return bad();
        return n;
    }

    std::optional<double> number(const std::string& key, double lo, double hi) {
        const auto* v = get(key);
        if (!v) return std::nullopt;
        if (!v->is_number() || v->get<double>() < lo || v->get<double>() > hi) {
            problem(where(key) + " must be a number in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
            return std::nullopt;
        }
        return v->get<double>();
    }

    std::vector<std::string> strings(const std::string& key) {
        std::vector<std::string> out;
        const auto* v = get(key);
        if (!v) return out;
        if (!v->is_array()) {
            problem(where(key) + " must be an array of strings");
            return out;
        }
        for (const auto& x : *v) {
            if (!x.is_string()) {
                problem(where(key) + " must be an array of strings");
                return {};
            }
            out.push_back(x.get<std::string>());
        }
        return out;
    }

private:
    const json* node_;
    std::string path_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
};

fs::path resolve_path(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : ValidationError(join_problems(problems)), problems_(std::move(problems)) {}

std::optional<Fraction> parse_threshold(std::string_view text) {
    auto digits = [](std::string_view s) {
        return !s.empty() && s.size() <= 9 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    std::optional<Fraction> f;
    if (auto slash = text.find('/'); slash != std::string_view::npos) {
        auto n = text.substr(0, slash), d = text.substr(slash + 1);
        if (!digits(n) || !digits(d) || std::stoll(std::string(d)) == 0) return std::nullopt;
        f = Fraction(std::stoll(std::string(n)), std::stoll(std::string(d)));
    } else {
        auto dot = text.find('.');
        auto whole = text.substr(0, dot);
        auto frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
        if (!digits(whole) || (dot != std::string_view::npos && !digits(frac))) return std::nullopt;
        std::int64_t scale = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
        auto num = std::stoll(std::string(whole)) * scale + (frac.empty() ? 0 : std::stoll(std::string(frac)));
        f = Fraction(num, scale);
    }
    if (*f > Fraction(1, 1)) return std::nullopt;
    return f;
}

std::pair<std::string, int> parse_listen(std::string_view text) {
    std::string host = "127.0.0.1";
    std::string_view port = text;
    if (auto colon = text.rfind(':'); colon != std::string_view::npos) {
        host = std::string(text.substr(0, colon));
        port = text.substr(colon + 1);
    }
    if (host.empty() || port.empty() || port.size() > 5 ||
        !std::all_of(port.begin(), port.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw ValidationError("listen address must be host:port, got '" + std::string(text) + "'");
    }
    auto p = std::stoi(std::string(port));
    if (p > 65535) throw ValidationError("port out of range in '" + std::string(text) + "'");
    return {host, p};
}

PipelineConfig parse_config(const json& j, const fs::path& config_path, const Overrides& overrides) {
    std::vector<std::string> problems;
    PipelineConfig c;
    c.config_path = config_path;
    const auto base = config_path.parent_path().empty() ? fs::path(".") : config_path.parent_path();
    {
        Reader root(&j, "", problems);
        if (auto v = root.integer<int>("version", 0, true); v && *v != kConfigVersion) {
            root.problem("unsupported config version " + std::to_string(*v) + " (expected " +
                         std::to_string(kConfigVersion) + ")");
        }
        if (auto v = root.string("study_id", true)) {
            c.study_id = *v;
            try {
                store::check_key(*v);
            } catch (const Error& e) {
                root.problem("study_id: " + std::string(e.what()));
            }
        }
        if (auto v = root.integer<std::uint64_t>("seed", 0, !overrides.seed)) c.seed = *v;
        if (overrides.seed) c.seed = *overrides.seed;

        if (auto v = root.string("store", !overrides.store)) c.store_dir = resolve_path(base, *v);
        if (overrides.store) c.store_dir = fs::absolute(*overrides.store).lexically_normal();
        c.fixtures_dir = base;
        if (auto v = root.string("fixtures")) c.fixtures_dir = resolve_path(base, *v);
        if (overrides.fixtures) c.fixtures_dir = fs::absolute(*overrides.fixtures).lexically_normal();

        {
            Reader s(root.get("sampling"), "sampling", problems);
            if (!root.has("sampling")) root.problem("missing sampling");
            if (auto v = s.string("log", root.has("sampling"))) c.log_path = resolve_path(base, *v);
            if (auto v = s.string("log_format")) {
                if (*v == "aggregate") {
                    c.log_format = sampler::LogFormat::aggregate;
                } else if (*v == "instances") {
                    c.log_format = sampler::LogFormat::instances;
                } else {
                    s.problem("sampling.log_format must be \"aggregate\" or \"instances\"");
                }
            }
            if (auto v = s.string("labels", root.has("sampling"))) c.labels_path = resolve_path(base, *v);
            if (auto v = s.integer<int>("segments", 1)) c.segments = *v;
            if (auto v = s.integer<std::size_t>("candidates_per_segment", 1)) c.candidates_per_segment = *v;
            if (auto v = s.integer<std::size_t>("target_per_intent", 1)) c.target_per_intent = *v;
            if (auto v = s.string("label_mode")) {
                if (*v == "strict") {
                    c.label_mode = sampler::LabelMode::strict;
                } else if (*v == "partial") {
                    c.label_mode = sampler::LabelMode::partial;
                } else {
                    s.problem("sampling.label_mode must be \"strict\" or \"partial\"");
                }
            }
        }

        {
            Reader col(root.get("collection"), "collection", problems);
            if (auto v = col.string("run_id")) {
                c.run_id = *v;
                try {
                    store::check_key(*v);
                } catch (const Error& e) {
                    col.problem("collection.run_id: " + std::string(e.what()));
                }
            }
            {
                Reader d(col.get("depth"), "collection.depth", problems);
                if (auto v = d.integer<int>("informational", 1)) c.depth.informational = *v;
                if (auto v = d.integer<int>("navigational", 1)) c.depth.navigational = *v;
            }
            if (auto v = col.integer<std::size_t>("concurrency", 1)) c.concurrency = *v;
            if (auto v = col.number("degraded_threshold", 0.0, 1.0)) c.degraded_threshold = *v;
            if (auto v = col.integer<int>("timeout_ms", 1)) c.fetch.timeout = std::chrono::milliseconds(*v);
            if (auto v = col.integer<int>("retries", 0)) c.fetch.retries = *v;
            if (auto v = col.string("user_agent")) c.fetch.user_agent = *v;
            if (auto v = col.string("pinned_time")) {
                c.pinned_time = parse_timestamp(*v);
                if (!c.pinned_time) col.problem("collection.pinned_time must be an ISO-8601 UTC timestamp");
            }
            if (const auto* t = col.get("tracking")) {
                if (!t->is_array()) {
                    col.problem("collection.tracking must be an array");
                } else {
                    for (std::size_t i = 0; i < t->size(); ++i) {
                        Reader p(&(*t)[i], "collection.tracking[" + std::to_string(i) + "]", problems);
                        url::TrackingPattern pattern;
                        if (auto v = p.string("host", true)) pattern.host = *v;
                        if (auto v = p.string("path_prefix")) pattern.path_prefix = *v;
                        if (auto v = p.string("target_param", true)) pattern.target_param = *v;
                        c.tracking.push_back(pattern);
                    }
                }
            }
        }

        const auto* engines = root.get("engines");
        if (!engines || !engines->is_array() || engines->empty()) {
            root.problem("engines must be a non-empty array");
        } else {
            std::set<std::string> ids;
            for (std::size_t i = 0; i < engines->size(); ++i) {
                auto path = "engines[" + std::to_string(i) + "]";
                Reader e(&(*engines)[i], path, problems);
                collector::EngineConfig ec;
                if (auto v = e.string("engine_id", true)) {
                    ec.engine_id = *v;
                    try {
                        store::check_key(*v);
                    } catch (const Error& err) {
                        e.problem(path + ".engine_id: " + err.what());
                    }
                    if (!ids.insert(*v).second) e.problem("duplicate engine_id '" + *v + "'");
                }
                ec.display_name = e.string("display_name").value_or(ec.engine_id);
                if (auto v = e.string("adapter", true)) {
                    if (auto kind = collector::parse_adapter_kind(*v)) {
                        ec.adapter = *kind;
                    } else {
                        e.problem(path + ".adapter must be \"replay-fixture\" or \"live-scrape\"");
                    }
                }
                if (auto v = e.integer<int>("rate_limit_per_minute", 1)) ec.rate_limit_per_minute = *v;
                auto fixture = e.string("fixture");
                auto endpoint = e.string("endpoint");
                Reader sel(e.get("selector"), path + ".selector", problems);
                if (ec.adapter == collector::AdapterKind::replay_fixture) {
                    if (!fixture) e.problem("missing " + path + ".fixture for a replay engine");
                    if (fixture) ec.fixture_path = resolve_path(c.fixtures_dir, *fixture);
                } else {
                    if (!endpoint || endpoint->find("{query}") == std::string::npos) {
                        e.problem(path + ".endpoint must contain {query} for a live engine");
                    } else {
                        ec.endpoint_template = *endpoint;
                    }
                    if (!e.has("selector")) e.problem("missing " + path + ".selector for a live engine");
                }
                ec.selector.exclude_patterns = sel.strings("exclude");
                if (auto v = sel.string("result", e.has("selector"))) ec.selector.result_pattern = *v;
                if (auto v = sel.integer<int>("url_group", 1)) ec.selector.url_group = *v;
                if (auto v = sel.integer<int>("title_group", 0)) ec.selector.title_group = *v;
                if (auto v = sel.integer<int>("snippet_group", 0)) ec.selector.snippet_group = *v;
                auto patterns = ec.selector.exclude_patterns;
                if (!ec.selector.result_pattern.empty()) patterns.push_back(ec.selector.result_pattern);
                for (const auto& p : patterns) {
                    try {
                        std::regex re(p);
                    } catch (const std::regex_error&) {
                        e.problem(path + ".selector: invalid pattern '" + p + "'");
                    }
                }
                c.engines.push_back(std::move(ec));
            }
        }

        {
            Reader st(root.get("study"), "study", problems);
            if (!root.has("study")) root.problem("missing study");
            c.access_code_hashes = st.strings("access_code_sha256");
            if (root.has("study") && c.access_code_hashes.empty()) {
                st.problem("study.access_code_sha256 must list at least one code hash");
            }
            for (const auto& h : c.access_code_hashes) {
                if (!is_sha256_hex(h)) st.problem("study.access_code_sha256 entries must be lower-case sha256 hex");
            }
            if (auto v = st.string("admin_token_sha256")) {
                if (!is_sha256_hex(*v)) st.problem("study.admin_token_sha256 must be lower-case sha256 hex");
                c.admin_token_hash = *v;
            }
            if (auto v = st.integer<int>("lease_minutes", 1)) c.lease = std::chrono::minutes(*v);
            if (const auto* t = st.get("voucher_threshold")) {
                auto text = t->is_string() ? t->get<std::string>() : t->is_number() ? t->dump() : std::string();
                auto f = parse_threshold(text);
                if (!f || *f == Fraction(1, 1)) {
                    st.problem("study.voucher_threshold must be a fraction in [0, 1), e.g. \"0.9\" or \"9/10\"");
                } else {
                    c.voucher_threshold = *f;
                }
            }
            if (auto v = st.string("listen")) c.listen = *v;
        }
        if (overrides.listen) c.listen = *overrides.listen;
        try {
            parse_listen(c.listen);
        } catch (const ValidationError& e) {
            problems.push_back(e.what());
        }
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return c;
}

PipelineConfig load_config(const fs::path& path, const Overrides& overrides) {
    auto bytes = store::read_file(path);
    if (!bytes) throw ConfigError({"cannot read config " + path.string()});
    auto j = json::parse(*bytes, nullptr, false);
    if (j.is_discarded()) throw ConfigError({"config " + path.string() + " is not valid JSON"});
    return parse_config(j, fs::absolute(path).lexically_normal(), overrides);
}

}  // namespace serpeval::cli
