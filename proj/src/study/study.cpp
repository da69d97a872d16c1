#include "serpeval/study.hpp"

#include <algorithm>

namespace serpeval::study {

using collector::CollectionRun;
using collector::FetchStatus;
using collector::SerpResult;

std::string_view to_string(TaskStatus status) {
    switch (status) {
        case TaskStatus::open: return "open";
        case TaskStatus::in_progress: return "in_progress";
        case TaskStatus::complete: return "complete";
    }
    return "open";
}

const PooledResult* JudgmentTask::find(std::string_view pooled_id) const {
    auto it = std::lower_bound(pooled.begin(), pooled.end(), pooled_id,
                               [](const PooledResult& p, std::string_view id) { return p.pooled_id < id; });
    return it != pooled.end() && it->pooled_id == pooled_id ? &*it : nullptr;
}

std::string task_id_for(std::string_view query) {
    return sha256_hex("task\n" + std::string(query)).substr(0, 16);
}

std::string pooled_id_for(std::string_view task_id, std::string_view normalized_url) {
    return sha256_hex(std::string(task_id) + "\n" + std::string(normalized_url)).substr(0, 16);
}

JudgmentTask pool_results(const std::string& query, const std::vector<std::vector<SerpResult>>& lists,
                          std::uint64_t seed) {
    JudgmentTask task;
    task.task_id = task_id_for(query);
    task.query = query;
    std::map<std::string, PooledResult> by_url;
    for (const auto& list : lists) {
        for (const auto& r : list) {
            auto& p = by_url[r.normalized_url];
            if (p.pooled_id.empty()) {
                p.pooled_id = pooled_id_for(task.task_id, r.normalized_url);
                p.normalized_url = r.normalized_url;
                p.snapshot_id = collector::snapshot_id_for(r.normalized_url);
            }
            // A URL repeated within one list keeps its best rank only.
            bool seen = std::any_of(p.provenance.begin(), p.provenance.end(),
                                    [&](const Provenance& x) { return x.engine_id == r.engine_id; });
            if (!seen) p.provenance.push_back({r.engine_id, r.rank});
        }
    }
    for (auto& [u, p] : by_url) task.pooled.push_back(std::move(p));
    std::sort(task.pooled.begin(), task.pooled.end(),
              [](const PooledResult& a, const PooledResult& b) { return a.pooled_id < b.pooled_id; });
    task.presentation_order.resize(task.pooled.size());
    for (std::size_t i = 0; i < task.pooled.size(); ++i) task.presentation_order[i] = i;
    SeededRng rng(derive_seed(seed, "present/" + task.task_id));
    rng.shuffle(std::span<std::size_t>(task.presentation_order));
    return task;
}

std::vector<JudgmentTask> build_tasks(const CollectionRun& run, std::uint64_t seed) {
    std::vector<JudgmentTask> tasks;
    for (const auto& q : run.queries(Intent::informational)) {
        std::vector<std::vector<SerpResult>> lists;
        for (const auto& e : run.engines) {
            const auto* c = run.find(q, e.engine_id);
            lists.push_back(c && c->ok ? c->results : std::vector<SerpResult>{});
        }
        auto task = pool_results(q, lists, seed);
        for (auto& p : task.pooled) {
            const auto* snap = run.snapshot(p.normalized_url);
            p.judgeable = snap && snap->status == FetchStatus::ok;
        }
        tasks.push_back(std::move(task));
    }
    std::sort(tasks.begin(), tasks.end(),
              [](const JudgmentTask& a, const JudgmentTask& b) { return a.task_id < b.task_id; });
    return tasks;
}

void validate_judgment(const std::optional<bool>& relevant, const std::optional<int>& graded, bool skipped) {
    if (skipped && (relevant || graded)) {
        throw ValidationError("a skipped judgment carries neither a binary nor a graded value");
    }
    if (graded && (*graded < 0 || *graded > 4)) throw ValidationError("graded must be an integer from 0 to 4");
    if (!skipped && !relevant && !graded) throw ValidationError("judgment carries no value; skip instead");
}

Completion compute_completion(const JudgmentTask& task, const std::map<std::string, Judgment>& judgments,
                              const Fraction& threshold) {
    Completion c;
    c.pooled = task.pooled.size();
    for (const auto& p : task.pooled) {
        auto it = judgments.find(p.pooled_id);
        if (p.judgeable) ++c.judgeable;
        if (it == judgments.end()) continue;
        ++c.visited;
        if (p.judgeable && !it->second.skipped && it->second.graded) ++c.graded;
    }
    c.fraction = ratio(static_cast<std::int64_t>(c.graded), static_cast<std::int64_t>(c.judgeable));
    c.all_visited = c.visited == c.pooled;
    const bool over = c.fraction && threshold < *c.fraction;
    c.voucher = c.all_visited && over;
    // A task with nothing to grade completes once visited, without a voucher.
    c.complete = c.all_visited && (over || c.judgeable == 0);
    return c;
}

std::vector<NavItem> build_nav_items(const CollectionRun& run) {
    std::map<std::pair<std::string, std::string>, NavItem> items;
    for (const auto& q : run.queries(Intent::navigational)) {
        for (const auto& e : run.engines) {
            const auto* c = run.find(q, e.engine_id);
            if (!c || !c->ok || c->results.empty()) continue;
            const auto& first = c->results.front();
            auto& item = items[{q, first.normalized_url}];
            if (item.item_id.empty()) {
                item.item_id = sha256_hex("nav\n" + q + "\n" + first.normalized_url).substr(0, 16);
                item.query = q;
                item.normalized_url = first.normalized_url;
                item.snapshot_id = collector::snapshot_id_for(first.normalized_url);
                const auto* snap = run.snapshot(first.normalized_url);
                item.displayable = snap && snap->status == FetchStatus::ok;
                item.unresolvable = first.unresolvable;
            }
            item.engines.push_back(e.engine_id);
        }
    }
    std::vector<NavItem> out;
    for (auto& [k, item] : items) out.push_back(std::move(item));
    std::sort(out.begin(), out.end(), [](const NavItem& a, const NavItem& b) { return a.item_id < b.item_id; });
    return out;
}

// ---------------------------------------------------------------------------

namespace {

json judgment_json(const Judgment& j) {
    json out{{"type", "judgment"},
             {"session_id", j.session_id},
             {"task_id", j.task_id},
             {"pooled_id", j.pooled_id},
             {"binary", j.relevant ? json(*j.relevant ? "relevant" : "not-relevant") : json(nullptr)},
             {"graded", j.graded ? json(*j.graded) : json(nullptr)},
             {"skipped", j.skipped},
             {"recorded_at", j.recorded_at},
             {"supersedes", j.supersedes ? json(*j.supersedes) : json(nullptr)}};
    return out;
}

Judgment judgment_from_json(const json& r) {
    Judgment j;
    j.seq = r.at("seq").get<std::uint64_t>();
    j.session_id = r.at("session_id").get<std::string>();
    j.task_id = r.at("task_id").get<std::string>();
    j.pooled_id = r.at("pooled_id").get<std::string>();
    if (!r.at("binary").is_null()) j.relevant = r.at("binary").get<std::string>() == "relevant";
    if (!r.at("graded").is_null()) j.graded = r.at("graded").get<int>();
    j.skipped = r.at("skipped").get<bool>();
    j.recorded_at = r.at("recorded_at").get<std::string>();
    if (!r.at("supersedes").is_null()) j.supersedes = r.at("supersedes").get<std::uint64_t>();
    return j;
}

json fraction_json(const std::optional<Fraction>& f) { return f ? json(f->value()) : json(nullptr); }
json fraction_exact_json(const std::optional<Fraction>& f) { return f ? json(f->to_string()) : json(nullptr); }

json completion_json(const Completion& c) {
    return json{{"total", c.pooled},
                {"visited", c.visited},
                {"judgeable", c.judgeable},
                {"graded", c.graded},
                {"fraction", fraction_json(c.fraction)},
                {"fraction_exact", fraction_exact_json(c.fraction)},
                {"complete", c.complete}};
}

Timestamp must_parse(const std::string& text) {
    auto t = parse_timestamp(text);
    if (!t) throw store::StoreError("bad timestamp in study log: " + text);
    return *t;
}

}  // namespace

StudyService::StudyService(store::Store& store, CollectionRun run, StudyConfig config, Clock& clock)
    : store_(store), run_(std::move(run)), config_(std::move(config)), clock_(clock) {
    store::check_key(config_.study_id);
    if (config_.lease.count() < 1) throw ValidationError("lease must be at least one minute");
    tasks_ = build_tasks(run_, config_.seed);
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        task_index_[tasks_[i].task_id] = i;
        task_states_[tasks_[i].task_id];
        for (const auto& p : tasks_[i].pooled) pooled_task_[p.pooled_id] = tasks_[i].task_id;
    }
    nav_items_ = build_nav_items(run_);
    for (const auto& [u, snap] : run_.snapshots) {
        if (snap.status == FetchStatus::ok) displayable_snapshots_[snap.snapshot_id] = snap.content_hash;
    }
    sessions_log_ = &store_.log("studies", config_.study_id, "sessions.jsonl");
    leases_log_ = &store_.log("studies", config_.study_id, "leases.jsonl");
    judgments_log_ = &store_.log("studies", config_.study_id, "judgments.jsonl");
    verdicts_log_ = &store_.log("studies", config_.study_id, "verdicts.jsonl");
    vouchers_log_ = &store_.log("studies", config_.study_id, "vouchers.jsonl");
    std::lock_guard lock(mutex_);
    replay();
    record_no_result_verdicts();
}

void StudyService::replay() {
    for (const auto& r : sessions_log_->read_all()) {
        auto id = r.at("session_id").get<std::string>();
        if (r.at("type") == "session") {
            sessions_[id].started_at = r.at("started_at").get<std::string>();
        } else if (r.at("type") == "contact") {
            sessions_[id].contact = r.at("contact").get<std::string>();
        }
    }
    for (const auto& r : leases_log_->read_all()) {
        auto task = r.at("task_id").get<std::string>();
        auto session = r.at("session_id").get<std::string>();
        auto& state = task_states_.at(task);
        state.holder = session;
        state.lease_expires = must_parse(r.at("expires_at").get<std::string>());
        sessions_[session].assigned.insert(task);
        sessions_[session].current = task;
    }
    for (const auto& r : judgments_log_->read_all()) {
        auto j = judgment_from_json(r);
        auto& state = task_states_.at(j.task_id);
        state.touched.insert(j.pooled_id);
        ++sessions_[j.session_id].judgments;
        if (state.holder == j.session_id) {
            state.lease_expires = std::max(state.lease_expires, must_parse(j.recorded_at) + config_.lease);
        }
        judgments_[{j.session_id, j.task_id}][j.pooled_id] = std::move(j);
    }
    for (const auto& task : tasks_) {
        auto& state = task_states_.at(task.task_id);
        if (task.pooled.empty()) {
            state.complete = true;
            continue;
        }
        if (!state.holder) continue;
        if (completion_locked(task.task_id, *state.holder).complete) {
            state.complete = true;
            completed_by_[task.task_id] = *state.holder;
            ++sessions_[*state.holder].completed;
        }
    }
    for (const auto& r : vouchers_log_->read_all()) {
        auto session = r.at("session_id").get<std::string>();
        auto task = r.at("task_id").get<std::string>();
        if (r.at("type") == "voucher") {
            vouchers_.push_back({session, task, r.at("issued_at").get<std::string>(), {}, false});
        } else if (r.at("type") == "ack") {
            for (auto& v : vouchers_) {
                if (v.session_id == session && v.task_id == task) v.acknowledged = true;
            }
        }
    }
    // A crash between the completing judgment and its voucher leaves the
    // voucher owed; issue it now.
    for (const auto& [task, session] : completed_by_) {
        if (!completion_locked(task, session).voucher) continue;
        bool issued = false;
        for (const auto& v : vouchers_) issued |= v.task_id == task && v.session_id == session;
        if (issued) continue;
        VoucherEvent v{session, task, format_timestamp(clock_.now()), {}, false};
        vouchers_log_->append({{"type", "voucher"}, {"session_id", v.session_id}, {"task_id", v.task_id}, {"issued_at", v.issued_at}});
        vouchers_.push_back(v);
    }
    for (const auto& r : verdicts_log_->read_all()) {
        NavigationalVerdict v;
        v.seq = r.at("seq").get<std::uint64_t>();
        v.query = r.at("query").get<std::string>();
        v.engine_id = r.at("engine_id").get<std::string>();
        v.correct = r.at("correct").get<bool>();
        v.assessor = r.at("assessor").get<std::string>();
        v.reason = r.value("reason", "");
        v.item_id = r.value("item_id", "");
        v.recorded_at = r.at("recorded_at").get<std::string>();
        verdicts_[{v.query, v.engine_id}] = v;
    }
}

void StudyService::record_no_result_verdicts() {
    for (const auto& q : run_.queries(Intent::navigational)) {
        for (const auto& e : run_.engines) {
            if (verdicts_.count({q, e.engine_id})) continue;
            const auto* c = run_.find(q, e.engine_id);
            if (c && c->ok && !c->results.empty()) continue;
            NavigationalVerdict v;
            v.query = q;
            v.engine_id = e.engine_id;
            v.correct = false;
            v.assessor = "system";
            v.reason = c && !c->ok ? "capture failed" : "no result";
            v.recorded_at = format_timestamp(clock_.now());
            append_verdict(v);
        }
    }
}

const JudgmentTask& StudyService::task_ref(const std::string& task_id) const {
    auto it = task_index_.find(task_id);
    if (it == task_index_.end()) throw NotFoundError("unknown task");
    return tasks_[it->second];
}

bool StudyService::lease_active(const TaskState& state, Timestamp now) const {
    return state.holder && !state.complete && now < state.lease_expires;
}

Completion StudyService::completion_locked(const std::string& task_id, const std::string& session_id) const {
    static const std::map<std::string, Judgment> none;
    auto it = judgments_.find({session_id, task_id});
    return compute_completion(task_ref(task_id), it == judgments_.end() ? none : it->second, config_.threshold);
}

std::string StudyService::open_session(std::string_view access_code) {
    auto hash = sha256_hex(access_code);
    bool ok = false;
    for (const auto& h : config_.access_code_hashes) ok |= constant_time_equal(hash, h);
    if (!ok) throw AuthError("invalid code");
    std::lock_guard lock(mutex_);
    std::string id;
    do {
        id = random_token(16);
    } while (sessions_.count(id));
    auto started = format_timestamp(clock_.now());
    sessions_log_->append({{"type", "session"}, {"session_id", id}, {"started_at", started}});
    sessions_[id].started_at = started;
    return id;
}

void StudyService::set_contact(const std::string& session_id, const std::string& contact) {
    if (contact.empty() || contact.size() > 256 || !is_valid_utf8(contact)) {
        throw ValidationError("contact must be 1 to 256 bytes of UTF-8");
    }
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError("unknown session");
    sessions_log_->append({{"type", "contact"}, {"session_id", session_id}, {"contact", contact}});
    it->second.contact = contact;
}

std::optional<std::string> StudyService::current_task_locked(const std::string& session_id, Timestamp now) {
    auto& session = sessions_.at(session_id);
    if (!session.current) return std::nullopt;
    const auto& state = task_states_.at(*session.current);
    if (lease_active(state, now) && state.holder == session_id) return session.current;
    session.current.reset();
    return std::nullopt;
}

std::optional<std::string> StudyService::next_task(const std::string& session_id) {
    std::lock_guard lock(mutex_);
    auto sit = sessions_.find(session_id);
    if (sit == sessions_.end()) throw NotFoundError("unknown session");
    auto& session = sit->second;
    const auto now = clock_.now();
    if (auto current = current_task_locked(session_id, now)) return current;

    // Least-judged first; ties in task order. A session never receives a
    // task it has held before.
    const JudgmentTask* best = nullptr;
    std::size_t best_touched = 0;
    for (const auto& task : tasks_) {
        const auto& state = task_states_.at(task.task_id);
        if (state.complete || lease_active(state, now) || session.assigned.count(task.task_id)) continue;
        if (!best || state.touched.size() < best_touched) {
            best = &task;
            best_touched = state.touched.size();
        }
    }
    if (!best) return std::nullopt;
    auto expires = now + config_.lease;
    leases_log_->append({{"type", "lease"},
                         {"task_id", best->task_id},
                         {"session_id", session_id},
                         {"leased_at", format_timestamp(now)},
                         {"expires_at", format_timestamp(expires)}});
    auto& state = task_states_.at(best->task_id);
    state.holder = session_id;
    state.lease_expires = expires;
    session.assigned.insert(best->task_id);
    session.current = best->task_id;
    return best->task_id;
}

JudgmentAck StudyService::record_judgment(const std::string& session_id, const JudgmentInput& input) {
    validate_judgment(input.relevant, input.graded, input.skipped);
    std::lock_guard lock(mutex_);
    auto sit = sessions_.find(session_id);
    if (sit == sessions_.end()) throw NotFoundError("unknown session");
    auto& session = sit->second;
    const auto now = clock_.now();

    auto owner = pooled_task_.find(input.pooled_id);
    if (owner == pooled_task_.end() || !session.assigned.count(owner->second)) {
        throw ConflictError("result does not belong to the session's task");
    }
    const auto& task_id = owner->second;
    auto& state = task_states_.at(task_id);
    if (state.complete) throw ConflictError("task is already complete");
    auto current = current_task_locked(session_id, now);
    if (current != task_id) throw ConflictError("lease on this task has expired");
    const auto& pooled = *task_ref(task_id).find(input.pooled_id);
    if (!pooled.judgeable && !input.skipped) {
        throw ValidationError("result could not be displayed; it can only be skipped");
    }

    auto& mine = judgments_[{session_id, task_id}];
    Judgment j;
    j.session_id = session_id;
    j.task_id = task_id;
    j.pooled_id = input.pooled_id;
    j.relevant = input.relevant;
    j.graded = input.graded;
    j.skipped = input.skipped;
    j.recorded_at = format_timestamp(now);
    if (auto prev = mine.find(input.pooled_id); prev != mine.end()) j.supersedes = prev->second.seq;
    j.seq = judgments_log_->append(judgment_json(j));
    mine[input.pooled_id] = j;
    state.touched.insert(input.pooled_id);
    state.lease_expires = std::max(state.lease_expires, now + config_.lease);
    ++session.judgments;

    JudgmentAck ack;
    ack.seq = j.seq;
    ack.completion = completion_locked(task_id, session_id);
    ack.status = TaskStatus::in_progress;
    if (ack.completion.complete) {
        state.complete = true;
        completed_by_[task_id] = session_id;
        session.current.reset();
        ++session.completed;
        ack.status = TaskStatus::complete;
        if (ack.completion.voucher) {
            VoucherEvent v{session_id, task_id, format_timestamp(now), {}, false};
            vouchers_log_->append(
                {{"type", "voucher"}, {"session_id", v.session_id}, {"task_id", v.task_id}, {"issued_at", v.issued_at}});
            vouchers_.push_back(v);
            ack.voucher_issued = true;
        }
    }
    return ack;
}

TaskStatus StudyService::task_status(const std::string& task_id) const {
    std::lock_guard lock(mutex_);
    task_ref(task_id);
    const auto& state = task_states_.at(task_id);
    if (state.complete) return TaskStatus::complete;
    return lease_active(state, clock_.now()) ? TaskStatus::in_progress : TaskStatus::open;
}

Completion StudyService::task_completion(const std::string& task_id) const {
    std::lock_guard lock(mutex_);
    const auto& state = task_states_.at(task_ref(task_id).task_id);
    if (auto it = completed_by_.find(task_id); it != completed_by_.end()) return completion_locked(task_id, it->second);
    return completion_locked(task_id, state.holder.value_or(std::string{}));
}

json StudyService::session_payload(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw NotFoundError("unknown session");
    return json{{"session_id", session_id},
                {"started_at", it->second.started_at},
                {"tasks_completed", it->second.completed},
                {"contact_set", !it->second.contact.empty()}};
}

json StudyService::task_payload(const std::string& session_id, const std::string& task_id) const {
    std::lock_guard lock(mutex_);
    if (!sessions_.count(session_id)) throw NotFoundError("unknown session");
    const auto& task = task_ref(task_id);
    const auto& state = task_states_.at(task_id);
    static const std::map<std::string, Judgment> none;
    auto jit = judgments_.find({session_id, task_id});
    const auto& mine = jit == judgments_.end() ? none : jit->second;
    json results = json::array();
    for (std::size_t pos = 0; pos < task.presentation_order.size(); ++pos) {
        const auto& p = task.pooled[task.presentation_order[pos]];
        json judgment = nullptr;
        if (auto it = mine.find(p.pooled_id); it != mine.end()) {
            const auto& j = it->second;
            judgment = {{"binary", j.relevant ? json(*j.relevant ? "relevant" : "not-relevant") : json(nullptr)},
                        {"graded", j.graded ? json(*j.graded) : json(nullptr)},
                        {"skipped", j.skipped}};
        }
        results.push_back({{"pooled_id", p.pooled_id},
                           {"position", pos + 1},
                           {"displayable", p.judgeable},
                           {"snapshot", p.judgeable ? json("/snapshots/" + p.snapshot_id) : json(nullptr)},
                           {"judgment", judgment}});
    }
    auto status = state.complete ? TaskStatus::complete
                                 : (lease_active(state, clock_.now()) ? TaskStatus::in_progress : TaskStatus::open);
    return json{{"task_id", task.task_id},
                {"query", task.query},
                {"status", to_string(status)},
                {"lease_expires_at", format_timestamp(state.lease_expires)},
                {"results", results},
                {"progress", completion_json(compute_completion(task, mine, config_.threshold))}};
}

json StudyService::ack_payload(const JudgmentAck& ack) const {
    return json{{"seq", ack.seq},
                {"status", to_string(ack.status)},
                {"voucher_issued", ack.voucher_issued},
                {"progress", completion_json(ack.completion)}};
}

std::optional<store::StoredObject> StudyService::snapshot(std::string_view snapshot_id) const {
    auto it = displayable_snapshots_.find(std::string(snapshot_id));
    if (it == displayable_snapshots_.end()) return std::nullopt;
    return store_.get_object(it->second);
}

json StudyService::nav_items_payload() const {
    std::lock_guard lock(mutex_);
    json items = json::array();
    for (const auto& item : nav_items_) {
        json verdict = nullptr;
        auto it = verdicts_.find({item.query, item.engines.front()});
        if (it != verdicts_.end()) verdict = {{"correct", it->second.correct}, {"assessor", it->second.assessor}};
        items.push_back({{"item_id", item.item_id},
                         {"query", item.query},
                         {"url", item.unresolvable ? json(nullptr) : json(item.normalized_url)},
                         {"displayable", item.displayable},
                         {"snapshot", item.displayable ? json("/snapshots/" + item.snapshot_id) : json(nullptr)},
                         {"verdict", verdict}});
    }
    return items;
}

json StudyService::verdict_json(const NavigationalVerdict& v) const {
    return json{{"type", "verdict"},
                {"query", v.query},
                {"engine_id", v.engine_id},
                {"correct", v.correct},
                {"assessor", v.assessor},
                {"reason", v.reason},
                {"item_id", v.item_id},
                {"recorded_at", v.recorded_at}};
}

void StudyService::append_verdict(const NavigationalVerdict& verdict) {
    auto v = verdict;
    v.seq = verdicts_log_->append(verdict_json(v));
    verdicts_[{v.query, v.engine_id}] = v;
}

namespace {

void check_assessor(const std::string& assessor) {
    if (assessor.empty() || assessor.size() > 128 || !is_valid_utf8(assessor)) {
        throw ValidationError("assessor must be 1 to 128 bytes of UTF-8");
    }
}

}  // namespace

void StudyService::record_verdict(const std::string& item_id, bool correct, const std::string& assessor) {
    check_assessor(assessor);
    std::lock_guard lock(mutex_);
    auto it = std::find_if(nav_items_.begin(), nav_items_.end(), [&](const NavItem& i) { return i.item_id == item_id; });
    if (it == nav_items_.end()) throw NotFoundError("unknown item");
    for (const auto& e : it->engines) {
        if (verdicts_.count({it->query, e})) throw ConflictError("verdict already recorded");
    }
    const auto now = format_timestamp(clock_.now());
    for (const auto& e : it->engines) append_verdict({0, it->query, e, correct, assessor, {}, item_id, now});
}

void StudyService::record_navigational_verdict(const std::string& query, const std::string& engine_id, bool correct,
                                               const std::string& assessor) {
    check_assessor(assessor);
    std::lock_guard lock(mutex_);
    auto nav = run_.queries(Intent::navigational);
    if (!std::binary_search(nav.begin(), nav.end(), query)) throw NotFoundError("not a navigational query of this run");
    if (std::none_of(run_.engines.begin(), run_.engines.end(),
                     [&](const collector::EngineInfo& e) { return e.engine_id == engine_id; })) {
        throw NotFoundError("unknown engine");
    }
    if (verdicts_.count({query, engine_id})) throw ConflictError("verdict already recorded");
    std::string item_id;
    for (const auto& item : nav_items_) {
        if (item.query == query && std::count(item.engines.begin(), item.engines.end(), engine_id)) item_id = item.item_id;
    }
    append_verdict({0, query, engine_id, correct, assessor, {}, item_id, format_timestamp(clock_.now())});
}

std::vector<NavigationalVerdict> StudyService::verdicts() const {
    std::lock_guard lock(mutex_);
    std::vector<NavigationalVerdict> out;
    for (const auto& [k, v] : verdicts_) out.push_back(v);
    return out;
}

std::vector<VoucherEvent> StudyService::vouchers() const {
    std::lock_guard lock(mutex_);
    auto out = vouchers_;
    for (auto& v : out) {
        if (auto it = sessions_.find(v.session_id); it != sessions_.end()) v.contact = it->second.contact;
    }
    return out;
}

std::vector<VoucherEvent> StudyService::pending_vouchers() const {
    auto all = vouchers();
    std::erase_if(all, [](const VoucherEvent& v) { return v.acknowledged; });
    return all;
}

void StudyService::acknowledge_voucher(const std::string& session_id, const std::string& task_id) {
    std::lock_guard lock(mutex_);
    auto it = std::find_if(vouchers_.begin(), vouchers_.end(), [&](const VoucherEvent& v) {
        return v.session_id == session_id && v.task_id == task_id;
    });
    if (it == vouchers_.end()) throw NotFoundError("no such voucher");
    if (it->acknowledged) return;
    vouchers_log_->append({{"type", "ack"},
                           {"session_id", session_id},
                           {"task_id", task_id},
                           {"acked_at", format_timestamp(clock_.now())}});
    it->acknowledged = true;
}

json StudyService::progress() const {
    std::lock_guard lock(mutex_);
    const auto now = clock_.now();
    json tasks = json::array();
    std::size_t open = 0, in_progress = 0, complete = 0, empty = 0;
    std::size_t judged = 0, skipped = 0, unjudgeable = 0;
    for (const auto& task : tasks_) {
        const auto& state = task_states_.at(task.task_id);
        std::string session;
        if (auto it = completed_by_.find(task.task_id); it != completed_by_.end()) {
            session = it->second;
        } else if (state.holder) {
            session = *state.holder;
        }
        auto c = completion_locked(task.task_id, session);
        auto status = state.complete ? TaskStatus::complete
                                     : (lease_active(state, now) ? TaskStatus::in_progress : TaskStatus::open);
        if (status == TaskStatus::open) ++open;
        if (status == TaskStatus::in_progress) ++in_progress;
        if (status == TaskStatus::complete) ++complete;
        if (task.pooled.empty()) ++empty;
        for (const auto& p : task.pooled) unjudgeable += !p.judgeable;
        if (auto jit = judgments_.find({session, task.task_id}); jit != judgments_.end()) {
            for (const auto& [pid, j] : jit->second) (j.skipped ? skipped : judged)++;
        }
        tasks.push_back({{"task_id", task.task_id},
                         {"query", task.query},
                         {"status", to_string(status)},
                         {"pooled", c.pooled},
                         {"judgeable", c.judgeable},
                         {"visited", c.visited},
                         {"graded", c.graded},
                         {"fraction", fraction_json(c.fraction)}});
    }
    json jurors = json::array();
    for (const auto& [id, s] : sessions_) {
        jurors.push_back({{"session_id", id},
                          {"started_at", s.started_at},
                          {"tasks_completed", s.completed},
                          {"judgments", s.judgments}});
    }
    json failures = json::array();
    for (const auto& c : run_.captures) {
        if (!c.ok) failures.push_back({{"query", c.query}, {"engine_id", c.engine_id}, {"reason", c.reason}});
    }
    std::size_t pending_vouchers = 0;
    for (const auto& v : vouchers_) pending_vouchers += !v.acknowledged;
    std::size_t nav_pending = 0;
    for (const auto& item : nav_items_) nav_pending += !verdicts_.count({item.query, item.engines.front()});
    const auto& t = run_.totals;
    return json{{"study_id", config_.study_id},
                {"run_id", run_.run_id},
                {"collection",
                 {{"attempted", t.attempted},
                  {"succeeded", t.succeeded},
                  {"failed", t.failed},
                  {"short_captures", t.short_captures},
                  {"unresolvable", t.unresolvable},
                  {"degraded", run_.degraded},
                  {"failures", failures}}},
                {"totals",
                 {{"tasks", tasks_.size()},
                  {"open", open},
                  {"in_progress", in_progress},
                  {"complete", complete},
                  {"empty", empty}}},
                {"coverage", {{"judged", judged}, {"skipped", skipped}, {"not_displayable", unjudgeable}}},
                {"tasks", tasks},
                {"jurors", jurors},
                {"vouchers", {{"issued", vouchers_.size()}, {"pending", pending_vouchers}}},
                {"navigational",
                 {{"items", nav_items_.size()}, {"pending_items", nav_pending}, {"verdicts", verdicts_.size()}}}};
}

std::map<std::string, std::map<std::string, Judgment>> StudyService::effective_judgments() const {
    std::lock_guard lock(mutex_);
    std::map<std::string, std::map<std::string, Judgment>> out;
    for (const auto& task : tasks_) {
        const auto& state = task_states_.at(task.task_id);
        std::optional<std::string> session = state.holder;
        if (auto it = completed_by_.find(task.task_id); it != completed_by_.end()) session = it->second;
        auto& slot = out[task.task_id];
        if (!session) continue;
        if (auto it = judgments_.find({*session, task.task_id}); it != judgments_.end()) slot = it->second;
    }
    return out;
}

}  // namespace serpeval::study
