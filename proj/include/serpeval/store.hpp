#pragma once

// Durable single-directory store.
//
//   <root>/studies/<study_id>.json         StudyRecord
//   <root>/studies/<study_id>/             study logs (sessions, leases, judgments, verdicts, vouchers)
//   <root>/samples/<study_id>/             segments.tsv, candidates.tsv, sample.tsv, ...
//   <root>/runs/<run_id>/ledger.jsonl      collection ledger
//   <root>/runs/<run_id>/run.json          collection run serialization
//   <root>/objects/<h[0:2]>/<h>            snapshot bytes, keyed by sha256
//   <root>/objects/<h[0:2]>/<h>.meta.json  content type sidecar
//   <root>/reports/<study_id>/             metric exports
//
// Every write is flushed to disk before it returns. Append logs are JSON lines
// with a gap-free 1-based "seq"; a torn final line left by a crash is dropped
// on open.

#include "serpeval/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace serpeval::store {

using json = nlohmann::json;

class StoreError : public Error {
public:
    using Error::Error;
};

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::optional<std::string> read_file(const std::filesystem::path& path);

class AppendLog {
public:
    explicit AppendLog(std::filesystem::path path);
    ~AppendLog();
    AppendLog(const AppendLog&) = delete;
    AppendLog& operator=(const AppendLog&) = delete;

    // Assigns the next sequence number to record["seq"], writes and syncs.
    // The returned sequence number is the acknowledgment.
    std::uint64_t append(json record);

    std::vector<json> read_all() const;
    std::uint64_t size() const;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    int fd_ = -1;
    std::uint64_t next_seq_ = 1;
};

struct StudyRecord {
    std::string study_id;
    std::string sample_ref;
    std::vector<std::string> run_refs;
    std::uint64_t seed = 0;
    std::string created_at;
    std::string status;
};

json to_json(const StudyRecord& record);
StudyRecord study_from_json(const json& j);

struct StoredObject {
    std::string content;
    std::string content_type;
};

class Store {
public:
    explicit Store(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }

    // Directory for a record family (and optional sub-key), created on demand.
    std::filesystem::path dir(std::string_view family, std::string_view key = {}) const;

    void put_document(std::string_view family, std::string_view key, std::string_view name, std::string_view bytes);
    std::optional<std::string> get_document(std::string_view family, std::string_view key,
                                            std::string_view name) const;

    // Rejects a changed seed for an existing study and references to absent samples or runs.
    void put_study(const StudyRecord& record);
    std::optional<StudyRecord> get_study(std::string_view study_id) const;

    std::string put_object(std::string_view bytes, std::string_view content_type);
    std::optional<StoredObject> get_object(std::string_view hash) const;
    bool has_object(std::string_view hash) const;

    AppendLog& log(std::string_view family, std::string_view key, std::string_view name);

    // Removes temp files left by atomic writes whose writing process is gone.
    // Returns how many were removed.
    std::size_t sweep_temp_files();

private:
    std::filesystem::path object_path(std::string_view hash) const;

    std::filesystem::path root_;
    std::mutex logs_mutex_;
    std::map<std::string, std::unique_ptr<AppendLog>> logs_;
};

// Store keys become path components; only [A-Za-z0-9._-] is accepted and
// "." / ".." are refused so nothing resolves outside the root.
void check_key(std::string_view key);

}  // namespace serpeval::store
