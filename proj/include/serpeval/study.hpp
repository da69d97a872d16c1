#pragma once

// Judgment study: pooling of collected results into anonymous tasks, juror
// sessions with leased tasks, judgments, completion and voucher events, and
// the single-assessor navigational verdict path.

#include "serpeval/collector.hpp"
#include "serpeval/core.hpp"
#include "serpeval/store.hpp"

#include <json.hpp>

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace serpeval::study {

using json = nlohmann::json;

class AuthError : public Error {
public:
    using Error::Error;
};

// Request is well-formed but not allowed in the current state (foreign task,
// completed task, expired lease, duplicate verdict).
class ConflictError : public Error {
public:
    using Error::Error;
};

struct Provenance {
    std::string engine_id;
    int rank = 0;

    bool operator==(const Provenance&) const = default;
};

struct PooledResult {
    std::string pooled_id;
    std::string normalized_url;
    std::string snapshot_id;
    bool judgeable = false;  // snapshot fetched ok; others can only be skipped
    std::vector<Provenance> provenance;
};

enum class TaskStatus { open, in_progress, complete };
std::string_view to_string(TaskStatus status);

struct JudgmentTask {
    std::string task_id;
    std::string query;
    Intent intent = Intent::informational;
    std::vector<PooledResult> pooled;             // sorted by pooled_id
    std::vector<std::size_t> presentation_order;  // indices into pooled

    const PooledResult* find(std::string_view pooled_id) const;
};

std::string task_id_for(std::string_view query);
std::string pooled_id_for(std::string_view task_id, std::string_view normalized_url);

// Merges per-engine lists by normalized URL. Each list is one engine's
// capture in rank order.
JudgmentTask pool_results(const std::string& query, const std::vector<std::vector<collector::SerpResult>>& lists,
                          std::uint64_t seed);

// One task per informational query of the run, judgeable flags taken from
// the run's snapshots. Sorted by task_id.
std::vector<JudgmentTask> build_tasks(const collector::CollectionRun& run, std::uint64_t seed);

struct Judgment {
    std::uint64_t seq = 0;
    std::string session_id;
    std::string task_id;
    std::string pooled_id;
    std::optional<bool> relevant;
    std::optional<int> graded;
    bool skipped = false;
    std::string recorded_at;
    std::optional<std::uint64_t> supersedes;
};

// skipped excludes both scales; graded in 0..4; something must be given.
void validate_judgment(const std::optional<bool>& relevant, const std::optional<int>& graded, bool skipped);

struct Completion {
    std::size_t pooled = 0;
    std::size_t judgeable = 0;
    std::size_t visited = 0;  // judged or skipped
    std::size_t graded = 0;   // judgeable results with a grade
    std::optional<Fraction> fraction;  // graded / judgeable
    bool all_visited = false;
    bool complete = false;
    bool voucher = false;
};

// Judgments keyed by pooled_id (latest per result).
Completion compute_completion(const JudgmentTask& task, const std::map<std::string, Judgment>& judgments,
                              const Fraction& threshold);

struct NavItem {
    std::string item_id;
    std::string query;
    std::string normalized_url;
    std::string snapshot_id;
    bool displayable = false;
    bool unresolvable = false;
    std::vector<std::string> engines;  // engines whose first result this is; never served
};

struct NavigationalVerdict {
    std::uint64_t seq = 0;
    std::string query;
    std::string engine_id;
    bool correct = false;
    std::string assessor;
    std::string reason;
    std::string item_id;
    std::string recorded_at;
};

// First results of navigational queries, one item per distinct (query, url).
std::vector<NavItem> build_nav_items(const collector::CollectionRun& run);

struct VoucherEvent {
    std::string session_id;
    std::string task_id;
    std::string issued_at;
    std::string contact;
    bool acknowledged = false;
};

struct StudyConfig {
    std::string study_id = "study";
    std::uint64_t seed = 0;
    std::vector<std::string> access_code_hashes;  // sha256 hex of each valid code
    std::chrono::minutes lease{60};
    Fraction threshold{9, 10};
};

struct JudgmentInput {
    std::string pooled_id;
    std::optional<bool> relevant;
    std::optional<int> graded;
    bool skipped = false;
};

struct JudgmentAck {
    std::uint64_t seq = 0;
    Completion completion;
    TaskStatus status = TaskStatus::in_progress;
    bool voucher_issued = false;
};

// State lives in append logs under studies/<study_id>/ and is rebuilt from
// them on construction. Every call is linearized by one mutex; each state
// change is durable before the call returns.
class StudyService {
public:
    StudyService(store::Store& store, collector::CollectionRun run, StudyConfig config, Clock& clock);

    const StudyConfig& config() const { return config_; }
    const collector::CollectionRun& run() const { return run_; }
    const std::vector<JudgmentTask>& tasks() const { return tasks_; }
    const std::vector<NavItem>& nav_items() const { return nav_items_; }

    std::string open_session(std::string_view access_code);
    void set_contact(const std::string& session_id, const std::string& contact);

    // The session's current task, or a newly leased one; nullopt when none remain.
    std::optional<std::string> next_task(const std::string& session_id);
    JudgmentAck record_judgment(const std::string& session_id, const JudgmentInput& input);

    TaskStatus task_status(const std::string& task_id) const;
    Completion task_completion(const std::string& task_id) const;

    // Juror-facing payloads. Contain no engine identity, rank or URL.
    json session_payload(const std::string& session_id) const;
    json task_payload(const std::string& session_id, const std::string& task_id) const;
    json ack_payload(const JudgmentAck& ack) const;

    // Snapshot bytes for a displayable result of this study.
    std::optional<store::StoredObject> snapshot(std::string_view snapshot_id) const;

    // Navigational assessor path.
    json nav_items_payload() const;
    void record_verdict(const std::string& item_id, bool correct, const std::string& assessor);
    void record_navigational_verdict(const std::string& query, const std::string& engine_id, bool correct,
                                     const std::string& assessor);
    std::vector<NavigationalVerdict> verdicts() const;

    std::vector<VoucherEvent> pending_vouchers() const;
    std::vector<VoucherEvent> vouchers() const;
    void acknowledge_voucher(const std::string& session_id, const std::string& task_id);

    json progress() const;

    // Judgments that count for each task: the completing session's, or the
    // latest lease holder's while the task is unfinished. task_id -> pooled_id -> judgment.
    std::map<std::string, std::map<std::string, Judgment>> effective_judgments() const;

private:
    struct Session {
        std::string started_at;
        std::string contact;
        std::set<std::string> assigned;
        std::optional<std::string> current;
        std::size_t completed = 0;
        std::size_t judgments = 0;
    };
    struct TaskState {
        std::optional<std::string> holder;
        Timestamp lease_expires{};
        bool complete = false;
        std::set<std::string> touched;  // pooled ids with any judgment, any session
    };

    void replay();
    void record_no_result_verdicts();
    const JudgmentTask& task_ref(const std::string& task_id) const;
    bool lease_active(const TaskState& state, Timestamp now) const;
    Completion completion_locked(const std::string& task_id, const std::string& session_id) const;
    void append_verdict(const NavigationalVerdict& verdict);
    json verdict_json(const NavigationalVerdict& verdict) const;
    std::optional<std::string> current_task_locked(const std::string& session_id, Timestamp now);

    store::Store& store_;
    collector::CollectionRun run_;
    StudyConfig config_;
    Clock& clock_;
    std::vector<JudgmentTask> tasks_;
    std::map<std::string, std::size_t> task_index_;
    std::map<std::string, std::string> pooled_task_;  // pooled_id -> task_id
    std::vector<NavItem> nav_items_;
    std::map<std::string, std::string> displayable_snapshots_;  // snapshot_id -> content hash

    mutable std::mutex mutex_;
    store::AppendLog* sessions_log_;
    store::AppendLog* leases_log_;
    store::AppendLog* judgments_log_;
    store::AppendLog* verdicts_log_;
    store::AppendLog* vouchers_log_;

    std::map<std::string, Session> sessions_;
    std::map<std::string, TaskState> task_states_;
    // (session, task) -> pooled_id -> latest judgment
    std::map<std::pair<std::string, std::string>, std::map<std::string, Judgment>> judgments_;
    std::map<std::pair<std::string, std::string>, NavigationalVerdict> verdicts_;  // (query, engine)
    std::vector<VoucherEvent> vouchers_;
    std::map<std::string, std::string> completed_by_;  // task -> session
};

}  // namespace serpeval::study
