#pragma once

// Pipeline configuration and the sample / collect / serve / report / validate
// commands behind the serpeval executable.

#include "serpeval/collector.hpp"
#include "serpeval/core.hpp"
#include "serpeval/metrics.hpp"
#include "serpeval/sampler.hpp"
#include "serpeval/server.hpp"
#include "serpeval/study.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace serpeval::cli {

using json = nlohmann::json;

inline constexpr int kConfigVersion = 1;

// Every problem found in a config, not just the first.
class ConfigError : public ValidationError {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

struct PipelineConfig {
    std::filesystem::path config_path;
    std::string study_id;
    std::uint64_t seed = 0;
    std::filesystem::path store_dir;
    std::filesystem::path fixtures_dir;

    std::filesystem::path log_path;
    sampler::LogFormat log_format = sampler::LogFormat::aggregate;
    std::filesystem::path labels_path;
    int segments = 10;
    std::size_t candidates_per_segment = 360;
    std::size_t target_per_intent = 100;
    sampler::LabelMode label_mode = sampler::LabelMode::strict;

    std::string run_id = "run-1";
    collector::DepthPolicy depth;
    std::size_t concurrency = 4;
    double degraded_threshold = 0.25;
    collector::FetchPolicy fetch;
    std::vector<url::TrackingPattern> tracking;
    std::optional<Timestamp> pinned_time;  // collection clock for reproducible timestamps
    std::vector<collector::EngineConfig> engines;

    std::vector<std::string> access_code_hashes;
    std::string admin_token_hash;
    std::chrono::minutes lease{60};
    Fraction voucher_threshold{9, 10};
    std::string listen = "127.0.0.1:8080";
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> store;
    std::optional<std::filesystem::path> fixtures;
    std::optional<std::string> listen;
};

// Relative paths resolve against the config file's directory. Throws
// ConfigError listing every problem.
PipelineConfig parse_config(const json& j, const std::filesystem::path& config_path, const Overrides& overrides = {});
PipelineConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

// Exact decimal or "n/d" text to a fraction in [0, 1].
std::optional<Fraction> parse_threshold(std::string_view text);

// "host:port"; a bare port binds 127.0.0.1.
std::pair<std::string, int> parse_listen(std::string_view text);

// Commands write only under the store directory and report progress to `log`.
// Each returns its warnings.
std::vector<std::string> cmd_validate(const PipelineConfig& config, std::ostream& log);
std::vector<std::string> cmd_sample(const PipelineConfig& config, std::ostream& log);
std::vector<std::string> cmd_collect(const PipelineConfig& config, std::ostream& log);
std::vector<std::string> cmd_report(const PipelineConfig& config, std::ostream& log);

// The study service and its HTTP server for a configured, collected run.
class ServeSession {
public:
    ServeSession(const PipelineConfig& config, Clock& clock);
    ~ServeSession();

    int bind();  // returns the bound port
    void start();
    void listen();
    void stop();

    study::StudyService& service() { return *service_; }

private:
    PipelineConfig config_;
    std::unique_ptr<store::Store> store_;
    std::unique_ptr<study::StudyService> service_;
    std::unique_ptr<study::StudyServer> server_;
};

// Blocks until SIGINT or SIGTERM.
void cmd_serve(const PipelineConfig& config, std::ostream& log);

// Paths of command outputs inside the store.
std::filesystem::path sample_dir(const PipelineConfig& config);
std::filesystem::path report_dir(const PipelineConfig& config);

// Entry point of the executable. Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace serpeval::cli
