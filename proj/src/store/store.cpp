#include "serpeval/store.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

namespace serpeval::store {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void throw_errno(const std::string& what, const fs::path& path) {
    throw StoreError(what + " " + path.string() + ": " + std::strerror(errno));
}

void write_all(int fd, std::string_view bytes, const fs::path& path) {
    while (!bytes.empty()) {
        auto n = ::write(fd, bytes.data(), bytes.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            throw_errno("write", path);
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
}

void sync_dir(const fs::path& dir) {
    int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    fs::create_directories(path.parent_path());
    static std::atomic<std::uint64_t> counter{0};
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw_errno("open", tmp);
    try {
        write_all(fd, bytes, tmp);
        if (::fsync(fd) != 0) throw_errno("fsync", tmp);
    } catch (...) {
        ::close(fd);
        throw;
    }
    ::close(fd);
    if (::rename(tmp.c_str(), path.c_str()) != 0) throw_errno("rename", path);
    sync_dir(path.parent_path());
}

std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------

AppendLog::AppendLog(fs::path path) : path_(std::move(path)) {
    fs::create_directories(path_.parent_path());
    auto existing = read_file(path_).value_or("");

    // Keep every complete line; drop a trailing fragment without newline.
    std::size_t committed = 0;
    std::size_t pos = 0;
    while (pos < existing.size()) {
        auto nl = existing.find('\n', pos);
        if (nl == std::string::npos) break;
        std::string_view line(existing.data() + pos, nl - pos);
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error&) {
            throw StoreError("corrupt record in " + path_.string() + " at byte " + std::to_string(pos));
        }
        auto seq = record.value("seq", std::uint64_t{0});
        if (seq != next_seq_) {
            throw StoreError("sequence gap in " + path_.string() + ": expected " + std::to_string(next_seq_) +
                             ", found " + std::to_string(seq));
        }
        ++next_seq_;
        pos = nl + 1;
        committed = pos;
    }

    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw_errno("open", path_);
    if (committed != existing.size()) {
        if (::ftruncate(fd_, static_cast<off_t>(committed)) != 0) throw_errno("truncate", path_);
        ::fsync(fd_);
    }
    if (::lseek(fd_, 0, SEEK_END) < 0) throw_errno("seek", path_);
}

AppendLog::~AppendLog() {
    if (fd_ >= 0) ::close(fd_);
}

std::uint64_t AppendLog::append(json record) {
    std::lock_guard lock(mutex_);
    auto seq = next_seq_;
    record["seq"] = seq;
    auto line = record.dump() + "\n";
    write_all(fd_, line, path_);
    if (::fdatasync(fd_) != 0) throw_errno("fdatasync", path_);
    ++next_seq_;
    return seq;
}

std::vector<json> AppendLog::read_all() const {
    std::lock_guard lock(mutex_);
    std::vector<json> out;
    std::ifstream in(path_);
    std::string line;
    while (out.size() + 1 < next_seq_ && std::getline(in, line)) out.push_back(json::parse(line));
    return out;
}

std::uint64_t AppendLog::size() const {
    std::lock_guard lock(mutex_);
    return next_seq_ - 1;
}

// ---------------------------------------------------------------------------

json to_json(const StudyRecord& r) {
    return json{{"study_id", r.study_id}, {"sample_ref", r.sample_ref}, {"run_refs", r.run_refs},
                {"seed", r.seed},         {"created_at", r.created_at}, {"status", r.status}};
}

StudyRecord study_from_json(const json& j) {
    StudyRecord r;
    r.study_id = j.at("study_id").get<std::string>();
    r.sample_ref = j.value("sample_ref", "");
    r.run_refs = j.value("run_refs", std::vector<std::string>{});
    r.seed = j.at("seed").get<std::uint64_t>();
    r.created_at = j.value("created_at", "");
    r.status = j.value("status", "");
    return r;
}

void check_key(std::string_view key) {
    if (key.empty() || key == "." || key == "..") throw StoreError("invalid store key '" + std::string(key) + "'");
    for (unsigned char c : key) {
        if (!(std::isalnum(c) || c == '.' || c == '_' || c == '-')) {
            throw StoreError("invalid store key '" + std::string(key) + "'");
        }
    }
}

Store::Store(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path Store::dir(std::string_view family, std::string_view key) const {
    check_key(family);
    auto d = root_ / std::string(family);
    if (!key.empty()) {
        check_key(key);
        d /= std::string(key);
    }
    fs::create_directories(d);
    return d;
}

void Store::put_document(std::string_view family, std::string_view key, std::string_view name,
                         std::string_view bytes) {
    check_key(name);
    write_file_atomic(dir(family, key) / std::string(name), bytes);
}

std::optional<std::string> Store::get_document(std::string_view family, std::string_view key,
                                               std::string_view name) const {
    check_key(family);
    check_key(name);
    auto d = root_ / std::string(family);
    if (!key.empty()) {
        check_key(key);
        d /= std::string(key);
    }
    return read_file(d / std::string(name));
}

void Store::put_study(const StudyRecord& record) {
    check_key(record.study_id);
    if (auto existing = get_study(record.study_id); existing && existing->seed != record.seed) {
        throw StoreError("study " + record.study_id + " was created with seed " + std::to_string(existing->seed) +
                         "; the seed is immutable");
    }
    if (!record.sample_ref.empty() && !get_document("samples", record.study_id, record.sample_ref)) {
        throw StoreError("study references absent sample " + record.sample_ref);
    }
    for (const auto& run : record.run_refs) {
        if (!get_document("runs", run, "ledger.jsonl")) throw StoreError("study references absent run " + run);
    }
    put_document("studies", {}, record.study_id + ".json", to_json(record).dump(2) + "\n");
}

std::optional<StudyRecord> Store::get_study(std::string_view study_id) const {
    check_key(study_id);
    auto bytes = read_file(root_ / "studies" / (std::string(study_id) + ".json"));
    if (!bytes) return std::nullopt;
    return study_from_json(json::parse(*bytes));
}

fs::path Store::object_path(std::string_view hash) const {
    if (hash.size() != 64) throw StoreError("invalid object hash '" + std::string(hash) + "'");
    for (char c : hash) {
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) {
            throw StoreError("invalid object hash '" + std::string(hash) + "'");
        }
    }
    return root_ / "objects" / std::string(hash.substr(0, 2)) / std::string(hash);
}

std::string Store::put_object(std::string_view bytes, std::string_view content_type) {
    auto hash = sha256_hex(bytes);
    auto path = object_path(hash);
    auto meta = path;
    meta += ".meta.json";
    if (!fs::exists(path)) write_file_atomic(path, bytes);
    if (!fs::exists(meta)) {
        json m{{"content_type", content_type}, {"size", bytes.size()}};
        write_file_atomic(meta, m.dump() + "\n");
    }
    return hash;
}

bool Store::has_object(std::string_view hash) const {
    auto path = object_path(hash);
    auto meta = path;
    meta += ".meta.json";
    return fs::exists(path) && fs::exists(meta);
}

std::optional<StoredObject> Store::get_object(std::string_view hash) const {
    if (!has_object(hash)) return std::nullopt;
    auto path = object_path(hash);
    auto meta = path;
    meta += ".meta.json";
    auto content = read_file(path);
    auto m = read_file(meta);
    if (!content || !m) return std::nullopt;
    return StoredObject{*content, json::parse(*m).value("content_type", "application/octet-stream")};
}

AppendLog& Store::log(std::string_view family, std::string_view key, std::string_view name) {
    check_key(name);
    auto path = dir(family, key) / std::string(name);
    std::lock_guard lock(logs_mutex_);
    auto& slot = logs_[path.string()];
    if (!slot) slot = std::make_unique<AppendLog>(path);
    return *slot;
}

std::size_t Store::sweep_temp_files() {
    static const std::regex kTemp(R"(.*\.tmp\.(\d+)\.\d+)");
    std::vector<fs::path> orphans;
    std::error_code ec;
    for (auto it = fs::recursive_directory_iterator(root_, ec); !ec && it != fs::recursive_directory_iterator();
         it.increment(ec)) {
        if (!it->is_regular_file()) continue;
        std::smatch m;
        auto name = it->path().filename().string();
        if (!std::regex_match(name, m, kTemp)) continue;
        auto pid = static_cast<pid_t>(std::stoll(m[1].str()));
        if (pid != ::getpid() && ::kill(pid, 0) != 0 && errno == ESRCH) orphans.push_back(it->path());
    }
    std::size_t removed = 0;
    for (const auto& p : orphans) removed += fs::remove(p, ec);
    return removed;
}

}  // namespace serpeval::store
