#include "serpeval/cli.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace serpeval;
using namespace serpeval::cli;
using serpeval::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kDemoConfig = fs::path(SERPEVAL_DEMO_DIR) / "config.json";

json demo_json() {
    std::ifstream in(kDemoConfig);
    return json::parse(in);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> problems_of(const json& j, const Overrides& o = {}) {
    try {
        parse_config(j, "/cfg/config.json", o);
    } catch (const ConfigError& e) {
        return e.problems();
    }
    return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& text) {
    return std::any_of(problems.begin(), problems.end(),
                       [&](const std::string& p) { return p.find(text) != std::string::npos; });
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
    args.insert(args.begin(), "serpeval");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return code;
}

}  // namespace

TEST(Threshold, DecimalsAndFractionsAreExact) {
    EXPECT_EQ(parse_threshold("0.9"), Fraction(9, 10));
    EXPECT_EQ(parse_threshold("0.90"), Fraction(9, 10));
    EXPECT_EQ(parse_threshold("9/10"), Fraction(9, 10));
    EXPECT_EQ(parse_threshold("18/20"), Fraction(9, 10));
    EXPECT_EQ(parse_threshold("0.333"), Fraction(333, 1000));
    EXPECT_EQ(parse_threshold("1"), Fraction(1, 1));
    EXPECT_EQ(parse_threshold("0"), Fraction(0, 1));
    for (const char* bad : {"", "1.5", "3/2", "1/0", ".5", "5.", "-0.1", "0.9x", "a/b", "0,9"}) {
        EXPECT_FALSE(parse_threshold(bad)) << bad;
    }
}

TEST(Listen, HostPortAndBarePort) {
    EXPECT_EQ(parse_listen("8080"), (std::pair<std::string, int>{"127.0.0.1", 8080}));
    EXPECT_EQ(parse_listen("0.0.0.0:9000"), (std::pair<std::string, int>{"0.0.0.0", 9000}));
    EXPECT_EQ(parse_listen("localhost:0"), (std::pair<std::string, int>{"localhost", 0}));
    for (const char* bad : {"", ":80", "host:", "host:99999", "host:8o", "host:123456"}) {
        EXPECT_THROW(parse_listen(bad), ValidationError) << bad;
    }
}

TEST(Config, DemoConfigParses) {
    auto c = load_config(kDemoConfig);
    const auto dir = kDemoConfig.parent_path().lexically_normal();
    EXPECT_EQ(c.study_id, "demo");
    EXPECT_EQ(c.seed, 20110917u);
    EXPECT_EQ(c.store_dir, dir / "store");
    EXPECT_EQ(c.log_path, dir / "log.tsv");
    EXPECT_EQ(c.segments, 3);
    EXPECT_EQ(c.candidates_per_segment, 100u);
    EXPECT_EQ(c.target_per_intent, 10u);
    EXPECT_EQ(c.depth.informational, 10);
    EXPECT_EQ(c.depth.navigational, 1);
    ASSERT_EQ(c.engines.size(), 2u);
    EXPECT_EQ(c.engines[0].engine_id, "north");
    EXPECT_EQ(c.engines[0].fixture_path, dir / "north.json");
    EXPECT_EQ(c.engines[1].adapter, collector::AdapterKind::replay_fixture);
    ASSERT_EQ(c.tracking.size(), 1u);
    EXPECT_EQ(c.tracking[0].target_param, "u");
    EXPECT_EQ(c.voucher_threshold, Fraction(9, 10));
    EXPECT_EQ(format_timestamp(*c.pinned_time), "2026-03-01T10:00:00.000Z");
    EXPECT_EQ(c.access_code_hashes, std::vector<std::string>{sha256_hex("demo-juror")});
    EXPECT_EQ(c.admin_token_hash, sha256_hex("demo-admin"));
}

TEST(Config, OverridesReplaceAndSatisfyRequiredKeys) {
    auto j = demo_json();
    j.erase("seed");
    j.erase("store");
    EXPECT_TRUE(mentions(problems_of(j), "missing seed"));
    EXPECT_TRUE(mentions(problems_of(j), "missing store"));

    Overrides o;
    o.seed = 5;
    o.store = "/elsewhere/store";
    o.fixtures = "/fx";
    o.listen = "127.0.0.1:0";
    auto c = parse_config(j, "/cfg/config.json", o);
    EXPECT_EQ(c.seed, 5u);
    EXPECT_EQ(c.store_dir, "/elsewhere/store");
    EXPECT_EQ(c.engines[0].fixture_path, "/fx/north.json");
    EXPECT_EQ(c.log_path, "/cfg/log.tsv");
    EXPECT_EQ(c.listen, "127.0.0.1:0");
}

TEST(Config, EveryProblemIsReportedAtOnce) {
    auto j = demo_json();
    j.erase("study_id");
    j["colour"] = "blue";
    j["sampling"]["segments"] = 0;
    j["sampling"]["log_format"] = "csv";
    j["collection"]["pinned_time"] = "yesterday";
    j["engines"][0]["adapter"] = "replay_fixture";
    j["engines"][1]["engine_id"] = "north";
    j["study"]["voucher_threshold"] = "1";
    j["study"]["access_code_sha256"] = {"demo-juror"};
    auto problems = problems_of(j);
    EXPECT_EQ(problems.size(), 9u);
    for (const char* text : {"missing study_id", "unknown key colour", "sampling.segments", "sampling.log_format",
                             "pinned_time", "engines[0].adapter", "duplicate engine_id", "voucher_threshold",
                             "access_code_sha256"}) {
        EXPECT_TRUE(mentions(problems, text)) << text;
    }
}

TEST(Config, LiveEnginesNeedEndpointAndSelector) {
    auto j = demo_json();
    j["engines"][0] = {{"engine_id", "live"}, {"adapter", "live-scrape"}, {"endpoint", "https://search.example/"}};
    auto problems = problems_of(j);
    EXPECT_TRUE(mentions(problems, "{query}"));
    EXPECT_TRUE(mentions(problems, "selector"));

    j["engines"][0]["endpoint"] = "https://search.example/?q={query}";
    j["engines"][0]["selector"] = {{"result", "<a href=\"([^\"]+)\""}, {"exclude", {"(unclosed"}}};
    problems = problems_of(j);
    ASSERT_EQ(problems.size(), 1u);
    EXPECT_TRUE(mentions(problems, "invalid pattern '(unclosed'"));
}

TEST(Config, UnreadableAndMalformedFiles) {
    TempDir tmp;
    EXPECT_THROW(load_config(tmp.path() / "absent.json"), ConfigError);
    std::ofstream(tmp.path() / "bad.json") << "{ not json";
    EXPECT_THROW(load_config(tmp.path() / "bad.json"), ConfigError);
    std::ofstream(tmp.path() / "array.json") << "[]";
    try {
        load_config(tmp.path() / "array.json");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_TRUE(mentions(e.problems(), "config must be a JSON object"));
    }
}

TEST(Commands, ValidateDemoHasNoWarnings) {
    TempDir tmp;
    Overrides o;
    o.store = tmp.path();
    std::ostringstream log;
    EXPECT_TRUE(cmd_validate(load_config(kDemoConfig, o), log).empty()) << log.str();
    EXPECT_FALSE(fs::exists(tmp.path() / "samples")) << "validate must not write";
}

TEST(Commands, SampleIsDeterministicAndSeedIsImmutable) {
    TempDir a, b;
    Overrides oa, ob;
    oa.store = a.path();
    ob.store = b.path();
    std::ostringstream log;
    auto ca = load_config(kDemoConfig, oa);
    cmd_sample(ca, log);
    cmd_sample(ca, log);
    cmd_sample(load_config(kDemoConfig, ob), log);
    for (const char* f : {"sample.tsv", "segments.tsv", "candidates.tsv", "excluded.tsv", "shortfalls.tsv"}) {
        EXPECT_EQ(slurp(sample_dir(ca) / f), slurp(b.path() / "samples" / "demo" / f)) << f;
    }
    std::istringstream sample(slurp(sample_dir(ca) / "sample.tsv"));
    auto queries = sampler::read_sample_tsv(sample);
    EXPECT_EQ(queries.size(), 60u);

    const auto before = slurp(sample_dir(ca) / "sample.tsv");
    oa.seed = 1;
    EXPECT_THROW(cmd_sample(load_config(kDemoConfig, oa), log), ValidationError);
    EXPECT_EQ(slurp(sample_dir(ca) / "sample.tsv"), before);
}

TEST(Commands, CollectRequiresSampleAndReportRequiresRun) {
    TempDir tmp;
    Overrides o;
    o.store = tmp.path();
    auto c = load_config(kDemoConfig, o);
    std::ostringstream log;
    EXPECT_THROW(cmd_collect(c, log), Error);
    cmd_sample(c, log);
    EXPECT_THROW(cmd_report(c, log), Error);
    auto warnings = cmd_collect(c, log);
    EXPECT_TRUE(mentions(warnings, "2 captures failed"));
    EXPECT_TRUE(mentions(warnings, "unresolvable tracking URL"));
    cmd_report(c, log);
    EXPECT_TRUE(fs::exists(report_dir(c) / "report.json"));
    EXPECT_EQ(report_dir(c), tmp.path() / "reports" / "demo");
}

TEST(Run, ExitCodes) {
    TempDir tmp;
    std::string out, err;
    EXPECT_EQ(run_cli({"--help"}, &out), 0);
    EXPECT_NE(out.find("validate"), std::string::npos);
    EXPECT_EQ(run_cli({"validate"}, nullptr, &err), 1);
    EXPECT_NE(err.find("--config"), std::string::npos);
    EXPECT_EQ(run_cli({"frobnicate", "--config", kDemoConfig.string()}), 1);

    EXPECT_EQ(run_cli({"validate", "--config", kDemoConfig.string(), "--store", tmp.path().string()}, nullptr, &err), 0);
    EXPECT_NE(err.find("config ok, 0 warnings"), std::string::npos) << err;

    auto bad = tmp.path() / "bad.json";
    std::ofstream(bad) << R"({"version": 2})";
    EXPECT_EQ(run_cli({"validate", "--config", bad.string()}, nullptr, &err), 2);
    EXPECT_NE(err.find("unsupported config version 2"), std::string::npos) << err;
    EXPECT_NE(err.find("missing study_id"), std::string::npos) << err;

    // Steps out of order are input problems, not runtime failures.
    EXPECT_EQ(run_cli({"report", "--config", kDemoConfig.string(), "--store", (tmp.path() / "empty").string()}, nullptr, &err),
              2);
    EXPECT_NE(err.find("run `serpeval collect` first"), std::string::npos) << err;

    // A store that cannot be created is a runtime failure.
    std::ofstream(tmp.path() / "file") << "x";
    EXPECT_EQ(run_cli({"sample", "--config", kDemoConfig.string(), "--store", (tmp.path() / "file" / "store").string()}), 3);
}
