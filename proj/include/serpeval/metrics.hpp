#pragma once

// Effectiveness measures over a judged study. Every value is an exact
// Fraction; an undefined value (empty denominator) is nullopt, never zero.

#include "serpeval/collector.hpp"
#include "serpeval/core.hpp"
#include "serpeval/study.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace serpeval::metrics {

using json = nlohmann::json;

struct JudgedEntry {
    int rank = 0;
    std::string normalized_url;
    std::string pooled_id;
    bool displayable = true;  // snapshot fetched ok
    std::optional<bool> relevant;
    std::optional<int> graded;
    bool skipped = false;
};

struct JudgedResultList {
    std::string engine_id;
    std::string query;
    std::vector<JudgedEntry> entries;  // ranks 1..m
};

// task_id -> pooled_id -> judgment, as returned by StudyService::effective_judgments.
using TaskJudgments = std::map<std::string, std::map<std::string, study::Judgment>>;

// Rebuilds every engine's informational result lists with the pooled
// judgments attached. Keyed by engine id; lists in query order. Failed
// captures yield empty lists. Throws ValidationError on a judgment whose task
// or pooled result is not part of the run.
std::map<std::string, std::vector<JudgedResultList>> unpool(const collector::CollectionRun& run,
                                                            const std::vector<study::JudgmentTask>& tasks,
                                                            const TaskJudgments& judgments);

std::optional<Fraction> precision_at_k(const JudgedResultList& list, int k);

struct Averaged {
    std::size_t numerator = 0;    // summed over all lists
    std::size_t denominator = 0;
    std::optional<Fraction> micro;
    std::optional<Fraction> macro;  // mean of the per-list values that are defined
    std::size_t lists = 0;          // lists contributing to macro
};

Averaged precision_at_k(const std::vector<JudgedResultList>& lists, int k);
Averaged overall_relevant_ratio(const std::vector<JudgedResultList>& lists);

struct PositionMean {
    int rank = 0;
    std::size_t count = 0;  // graded entries at this rank
    std::int64_t sum = 0;
    std::optional<Fraction> mean;
    std::size_t cumulative_count = 0;  // graded entries at ranks <= rank
    std::int64_t cumulative_sum = 0;
    std::optional<Fraction> cumulative;
};

std::vector<PositionMean> mean_graded_by_position(const std::vector<JudgedResultList>& lists, int max_rank);

struct GradeHistogram {
    std::array<std::size_t, 5> counts{};
    std::size_t total = 0;
    std::array<std::optional<Fraction>, 5> ratios;
};

GradeHistogram grade_distribution(const std::vector<JudgedResultList>& lists);

// Correct verdicts over the engine's verdicts. Throws ValidationError("no verdicts").
Fraction navigational_success_rate(const std::vector<study::NavigationalVerdict>& verdicts,
                                   const std::string& engine_id);

struct TargetList {
    std::string query;
    std::vector<bool> target;  // per rank, rank 1 first
};

// Throws ValidationError when a list flags more than one target or n < 1.
std::optional<Fraction> success_at_n(const std::vector<TargetList>& lists, int n);
std::optional<Fraction> mean_reciprocal_rank(const std::vector<TargetList>& lists);

// The target of a navigational query is the first result an assessor marked
// correct for any engine. Each engine's navigational capture is flagged
// against it. Throws ValidationError when a query has two distinct correct URLs.
std::vector<TargetList> navigational_targets(const collector::CollectionRun& run,
                                             const std::vector<study::NavigationalVerdict>& verdicts,
                                             const std::string& engine_id);

struct Overlap {
    std::size_t queries = 0;  // queries where both engines returned something
    std::optional<Fraction> mean;
};

// Mean Jaccard overlap of the top-k normalized URLs over queries of the given
// intent captured by both engines.
Overlap url_overlap(const collector::CollectionRun& run, const std::string& engine_a, const std::string& engine_b,
                    int k, Intent intent = Intent::informational);

// ---------------------------------------------------------------------------
// Report

struct Coverage {
    std::size_t queries = 0;         // informational queries in the run
    std::size_t failed_captures = 0;
    std::size_t empty_lists = 0;     // captured but no results
    std::size_t entries = 0;
    std::size_t judged = 0;          // displayable, with a binary or graded value
    std::size_t binary = 0;
    std::size_t graded = 0;
    std::size_t skipped = 0;         // displayable but skipped
    std::size_t failed = 0;          // not displayable
    std::size_t unjudged = 0;        // displayable, no judgment yet
};

struct PrecisionPoint {
    int k = 0;
    Averaged value;
};

struct NavigationalSummary {
    std::size_t queries = 0;
    std::size_t verdicts = 0;
    std::size_t correct = 0;
    std::optional<Fraction> success_rate;
    std::vector<std::optional<Fraction>> success_at;  // n = 1..depth
    std::optional<Fraction> mrr;
};

struct EngineReport {
    std::string engine_id;
    std::string display_name;
    Coverage coverage;
    Averaged overall;
    std::vector<PrecisionPoint> precision;
    std::vector<PositionMean> graded_by_position;
    GradeHistogram grades;
    NavigationalSummary navigational;
};

struct OverlapRow {
    std::string engine_a;
    std::string engine_b;
    int k = 0;
    Overlap overlap;
};

struct MetricsReport {
    std::string run_id;
    std::string study_id;
    std::uint64_t seed = 0;
    std::size_t tasks = 0;
    std::size_t tasks_complete = 0;
    std::size_t unanswered_queries = 0;  // informational queries no engine answered
    std::vector<EngineReport> engines;
    std::vector<OverlapRow> overlap;
    std::vector<std::string> warnings;
};

struct ReportInputs {
    const collector::CollectionRun* run = nullptr;
    const std::vector<study::JudgmentTask>* tasks = nullptr;
    const TaskJudgments* judgments = nullptr;
    const std::vector<study::NavigationalVerdict>* verdicts = nullptr;
    std::set<std::string> complete_tasks;
    std::string study_id;
    std::uint64_t seed = 0;
};

MetricsReport build_report(const ReportInputs& inputs);

inline constexpr int kExportSchemaVersion = 1;

json to_json(const MetricsReport& report);
// File name -> bytes: report.json plus one CSV per measure family.
std::map<std::string, std::string> render_exports(const MetricsReport& report);
void write_exports(const MetricsReport& report, const std::filesystem::path& dir);

}  // namespace serpeval::metrics
