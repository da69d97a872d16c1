#include "serpeval/metrics.hpp"
#include "serpeval/store.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace serpeval::metrics {

using collector::CollectionRun;
using collector::FetchStatus;
using study::JudgmentTask;
using study::NavigationalVerdict;

namespace {

std::optional<Fraction> mean_of(const std::vector<Fraction>& values) {
    if (values.empty()) return std::nullopt;
    Fraction sum;
    for (const auto& v : values) sum = sum + v;
    return sum / static_cast<std::int64_t>(values.size());
}

std::int64_t as_int(std::size_t n) { return static_cast<std::int64_t>(n); }

}  // namespace

std::map<std::string, std::vector<JudgedResultList>> unpool(const CollectionRun& run,
                                                            const std::vector<JudgmentTask>& tasks,
                                                            const TaskJudgments& judgments) {
    std::map<std::string, const JudgmentTask*> by_query;
    std::map<std::string, const JudgmentTask*> by_id;
    for (const auto& t : tasks) {
        by_query[t.query] = &t;
        by_id[t.task_id] = &t;
    }
    for (const auto& [task_id, per_task] : judgments) {
        auto it = by_id.find(task_id);
        if (it == by_id.end()) {
            if (per_task.empty()) continue;
            throw ValidationError("judgments reference unknown task " + task_id);
        }
        for (const auto& [pooled_id, j] : per_task) {
            if (!it->second->find(pooled_id)) {
                throw ValidationError("judgment references unknown pooled result " + pooled_id);
            }
        }
    }

    std::map<std::string, std::vector<JudgedResultList>> out;
    for (const auto& e : run.engines) out[e.engine_id];
    for (const auto& q : run.queries(Intent::informational)) {
        auto task_it = by_query.find(q);
        const JudgmentTask* task = task_it == by_query.end() ? nullptr : task_it->second;
        const std::map<std::string, study::Judgment>* per_task = nullptr;
        if (task) {
            if (auto j = judgments.find(task->task_id); j != judgments.end()) per_task = &j->second;
        }
        for (const auto& e : run.engines) {
            JudgedResultList list;
            list.engine_id = e.engine_id;
            list.query = q;
            const auto* capture = run.find(q, e.engine_id);
            if (capture && capture->ok) {
                for (const auto& r : capture->results) {
                    if (!task) throw ValidationError("no task for query '" + q + "'");
                    auto pid = study::pooled_id_for(task->task_id, r.normalized_url);
                    const auto* pooled = task->find(pid);
                    if (!pooled) throw ValidationError("result not pooled: " + r.normalized_url);
                    JudgedEntry entry;
                    entry.rank = r.rank;
                    entry.normalized_url = r.normalized_url;
                    entry.pooled_id = pid;
                    entry.displayable = pooled->judgeable;
                    if (per_task) {
                        if (auto j = per_task->find(pid); j != per_task->end()) {
                            entry.relevant = j->second.relevant;
                            entry.graded = j->second.graded;
                            entry.skipped = j->second.skipped;
                        }
                    }
                    list.entries.push_back(std::move(entry));
                }
            }
            out[e.engine_id].push_back(std::move(list));
        }
    }
    return out;
}

std::optional<Fraction> precision_at_k(const JudgedResultList& list, int k) {
    if (k < 1) throw ValidationError("k must be at least 1");
    std::int64_t relevant = 0, judged = 0;
    for (const auto& e : list.entries) {
        if (e.rank > k || e.skipped || !e.relevant) continue;
        ++judged;
        if (*e.relevant) ++relevant;
    }
    return ratio(relevant, judged);
}

Averaged precision_at_k(const std::vector<JudgedResultList>& lists, int k) {
    if (k < 1) throw ValidationError("k must be at least 1");
    Averaged a;
    std::vector<Fraction> per_list;
    for (const auto& list : lists) {
        for (const auto& e : list.entries) {
            if (e.rank > k || e.skipped || !e.relevant) continue;
            ++a.denominator;
            if (*e.relevant) ++a.numerator;
        }
        if (auto p = precision_at_k(list, k)) per_list.push_back(*p);
    }
    a.micro = ratio(as_int(a.numerator), as_int(a.denominator));
    a.macro = mean_of(per_list);
    a.lists = per_list.size();
    return a;
}

Averaged overall_relevant_ratio(const std::vector<JudgedResultList>& lists) {
    int deepest = 1;
    for (const auto& list : lists) {
        for (const auto& e : list.entries) deepest = std::max(deepest, e.rank);
    }
    return precision_at_k(lists, deepest);
}

std::vector<PositionMean> mean_graded_by_position(const std::vector<JudgedResultList>& lists, int max_rank) {
    std::vector<PositionMean> out(static_cast<std::size_t>(std::max(max_rank, 0)));
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i) + 1;
    for (const auto& list : lists) {
        for (const auto& e : list.entries) {
            if (e.skipped || !e.graded || e.rank < 1 || e.rank > max_rank) continue;
            auto& p = out[static_cast<std::size_t>(e.rank - 1)];
            ++p.count;
            p.sum += *e.graded;
        }
    }
    std::size_t count = 0;
    std::int64_t sum = 0;
    for (auto& p : out) {
        count += p.count;
        sum += p.sum;
        p.mean = ratio(p.sum, as_int(p.count));
        p.cumulative_count = count;
        p.cumulative_sum = sum;
        p.cumulative = ratio(sum, as_int(count));
    }
    return out;
}

GradeHistogram grade_distribution(const std::vector<JudgedResultList>& lists) {
    GradeHistogram h;
    for (const auto& list : lists) {
        for (const auto& e : list.entries) {
            if (e.skipped || !e.graded) continue;
            ++h.counts[static_cast<std::size_t>(*e.graded)];
            ++h.total;
        }
    }
    for (std::size_t g = 0; g < 5; ++g) h.ratios[g] = ratio(as_int(h.counts[g]), as_int(h.total));
    return h;
}

Fraction navigational_success_rate(const std::vector<NavigationalVerdict>& verdicts, const std::string& engine_id) {
    std::int64_t total = 0, correct = 0;
    for (const auto& v : verdicts) {
        if (v.engine_id != engine_id) continue;
        ++total;
        if (v.correct) ++correct;
    }
    if (total == 0) throw ValidationError("no verdicts");
    return Fraction(correct, total);
}

namespace {

// 1-based rank of the single flagged target, 0 when absent.
int target_rank(const TargetList& list) {
    int rank = 0;
    for (std::size_t i = 0; i < list.target.size(); ++i) {
        if (!list.target[i]) continue;
        if (rank != 0) throw ValidationError("query '" + list.query + "' has more than one target");
        rank = static_cast<int>(i) + 1;
    }
    return rank;
}

}  // namespace

std::optional<Fraction> success_at_n(const std::vector<TargetList>& lists, int n) {
    if (n < 1) throw ValidationError("n must be at least 1");
    std::int64_t hits = 0;
    for (const auto& list : lists) {
        int r = target_rank(list);
        if (r != 0 && r <= n) ++hits;
    }
    return ratio(hits, as_int(lists.size()));
}

std::optional<Fraction> mean_reciprocal_rank(const std::vector<TargetList>& lists) {
    if (lists.empty()) return std::nullopt;
    Fraction sum;
    for (const auto& list : lists) {
        if (int r = target_rank(list)) sum = sum + Fraction(1, r);
    }
    return sum / as_int(lists.size());
}

std::vector<TargetList> navigational_targets(const CollectionRun& run, const std::vector<NavigationalVerdict>& verdicts,
                                             const std::string& engine_id) {
    std::map<std::string, std::set<std::string>> correct_urls;
    for (const auto& v : verdicts) {
        if (!v.correct) continue;
        const auto* c = run.find(v.query, v.engine_id);
        if (!c || !c->ok || c->results.empty()) continue;
        correct_urls[v.query].insert(c->results.front().normalized_url);
    }
    std::vector<TargetList> out;
    for (const auto& q : run.queries(Intent::navigational)) {
        const auto& urls = correct_urls[q];
        if (urls.size() > 1) throw ValidationError("query '" + q + "' has more than one correct result");
        TargetList list;
        list.query = q;
        const auto* c = run.find(q, engine_id);
        if (c && c->ok) {
            bool seen = false;
            for (const auto& r : c->results) {
                bool hit = !seen && urls.count(r.normalized_url) > 0;
                seen = seen || hit;
                list.target.push_back(hit);
            }
        }
        out.push_back(std::move(list));
    }
    return out;
}

Overlap url_overlap(const CollectionRun& run, const std::string& engine_a, const std::string& engine_b, int k,
                    Intent intent) {
    if (k < 1) throw ValidationError("k must be at least 1");
    auto top = [&](const collector::CaptureRecord& c) {
        std::set<std::string> s;
        for (const auto& r : c.results) {
            if (r.rank <= k) s.insert(r.normalized_url);
        }
        return s;
    };
    Overlap o;
    std::vector<Fraction> values;
    for (const auto& q : run.queries(intent)) {
        const auto* a = run.find(q, engine_a);
        const auto* b = run.find(q, engine_b);
        if (!a || !b || !a->ok || !b->ok) continue;
        auto sa = top(*a), sb = top(*b);
        std::set<std::string> both, either;
        std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(both, both.end()));
        std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(either, either.end()));
        if (either.empty()) continue;
        values.push_back(Fraction(as_int(both.size()), as_int(either.size())));
    }
    o.queries = values.size();
    o.mean = mean_of(values);
    return o;
}

// ---------------------------------------------------------------------------

MetricsReport build_report(const ReportInputs& in) {
    if (!in.run || !in.tasks || !in.judgments || !in.verdicts) throw ValidationError("incomplete report inputs");
    const auto& run = *in.run;
    MetricsReport report;
    report.run_id = run.run_id;
    report.study_id = in.study_id;
    report.seed = in.seed;
    report.tasks = in.tasks->size();
    for (const auto& t : *in.tasks) {
        if (in.complete_tasks.count(t.task_id)) ++report.tasks_complete;
        if (t.pooled.empty()) ++report.unanswered_queries;
    }
    if (report.tasks_complete < report.tasks) {
        report.warnings.push_back(std::to_string(report.tasks - report.tasks_complete) + " of " +
                                  std::to_string(report.tasks) + " judgment tasks are not complete");
    }

    auto lists = unpool(run, *in.tasks, *in.judgments);
    const int depth = std::max(run.depth.informational, 1);
    const int nav_depth = std::max(run.depth.navigational, 1);
    const auto nav_queries = run.queries(Intent::navigational);

    std::optional<std::string> target_error;
    std::map<std::string, std::vector<TargetList>> targets;
    try {
        for (const auto& e : run.engines) targets[e.engine_id] = navigational_targets(run, *in.verdicts, e.engine_id);
    } catch (const ValidationError& err) {
        target_error = err.what();
        report.warnings.push_back(std::string("navigational targets unavailable: ") + err.what());
    }

    for (const auto& e : run.engines) {
        EngineReport er;
        er.engine_id = e.engine_id;
        er.display_name = e.display_name;
        const auto& mine = lists[e.engine_id];

        auto& cov = er.coverage;
        cov.queries = mine.size();
        for (const auto& list : mine) {
            const auto* c = run.find(list.query, e.engine_id);
            if (!c || !c->ok) {
                ++cov.failed_captures;
            } else if (list.entries.empty()) {
                ++cov.empty_lists;
            }
            for (const auto& entry : list.entries) {
                ++cov.entries;
                if (!entry.displayable) {
                    ++cov.failed;
                } else if (entry.skipped) {
                    ++cov.skipped;
                } else if (entry.relevant || entry.graded) {
                    ++cov.judged;
                    cov.binary += entry.relevant.has_value();
                    cov.graded += entry.graded.has_value();
                } else {
                    ++cov.unjudged;
                }
            }
        }
        if (cov.unjudged > 0) {
            report.warnings.push_back(e.engine_id + ": " + std::to_string(cov.unjudged) + " results not yet judged");
        }

        er.overall = overall_relevant_ratio(mine);
        for (int k = 1; k <= depth; ++k) er.precision.push_back({k, precision_at_k(mine, k)});
        er.graded_by_position = mean_graded_by_position(mine, depth);
        er.grades = grade_distribution(mine);

        auto& nav = er.navigational;
        nav.queries = nav_queries.size();
        for (const auto& v : *in.verdicts) {
            if (v.engine_id != e.engine_id) continue;
            ++nav.verdicts;
            nav.correct += v.correct;
        }
        nav.success_rate = ratio(as_int(nav.correct), as_int(nav.verdicts));
        if (nav.verdicts < nav.queries) {
            report.warnings.push_back(e.engine_id + ": " + std::to_string(nav.queries - nav.verdicts) +
                                      " navigational queries without a verdict");
        }
        if (!target_error) {
            const auto& t = targets[e.engine_id];
            for (int n = 1; n <= nav_depth; ++n) nav.success_at.push_back(success_at_n(t, n));
            nav.mrr = mean_reciprocal_rank(t);
        } else {
            nav.success_at.assign(static_cast<std::size_t>(nav_depth), std::nullopt);
        }
        report.engines.push_back(std::move(er));
    }

    for (std::size_t i = 0; i < run.engines.size(); ++i) {
        for (std::size_t j = i + 1; j < run.engines.size(); ++j) {
            const auto& a = run.engines[i].engine_id;
            const auto& b = run.engines[j].engine_id;
            report.overlap.push_back({a, b, depth, url_overlap(run, a, b, depth)});
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Exports

namespace {

json value_json(const std::optional<Fraction>& f) {
    if (!f) return nullptr;
    return {{"exact", f->to_string()}, {"value", f->value()}};
}

json averaged_json(const Averaged& a) {
    return {{"numerator", a.numerator},
            {"denominator", a.denominator},
            {"micro", value_json(a.micro)},
            {"macro", value_json(a.macro)},
            {"macro_lists", a.lists}};
}

const char* kAbsent = "NA";

std::string decimal(const std::optional<Fraction>& f) {
    if (!f) return kAbsent;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", f->value());
    return buf;
}

std::string exact(const std::optional<Fraction>& f) { return f ? f->to_string() : kAbsent; }

class Csv {
public:
    Csv(const MetricsReport& report, std::initializer_list<std::string_view> columns)
        : prefix_(report.run_id + "," + std::to_string(report.seed)) {
        out_ << "run_id,seed";
        for (auto c : columns) out_ << ',' << c;
        out_ << '\n';
    }
    template <typename... T>
    void row(const T&... cells) {
        out_ << prefix_;
        ((out_ << ',' << cell(cells)), ...);
        out_ << '\n';
    }
    std::string str() const { return out_.str(); }

private:
    static std::string cell(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    }
    static std::string cell(const char* s) { return cell(std::string(s)); }
    template <typename N>
    static std::string cell(N n) {
        return std::to_string(n);
    }

    std::string prefix_;
    std::ostringstream out_;
};

}  // namespace

json to_json(const MetricsReport& report) {
    json engines = json::array();
    for (const auto& e : report.engines) {
        const auto& c = e.coverage;
        json precision = json::array();
        for (const auto& p : e.precision) {
            auto j = averaged_json(p.value);
            j["k"] = p.k;
            precision.push_back(j);
        }
        json positions = json::array();
        for (const auto& p : e.graded_by_position) {
            positions.push_back({{"rank", p.rank},
                                 {"count", p.count},
                                 {"mean", value_json(p.mean)},
                                 {"cumulative_count", p.cumulative_count},
                                 {"cumulative", value_json(p.cumulative)}});
        }
        json counts = json::array(), ratios = json::array();
        for (std::size_t g = 0; g < 5; ++g) {
            counts.push_back(e.grades.counts[g]);
            ratios.push_back(value_json(e.grades.ratios[g]));
        }
        json success_at = json::array();
        for (const auto& s : e.navigational.success_at) success_at.push_back(value_json(s));
        engines.push_back({
            {"engine_id", e.engine_id},
            {"display_name", e.display_name},
            {"coverage",
             {{"queries", c.queries},
              {"failed_captures", c.failed_captures},
              {"empty_lists", c.empty_lists},
              {"entries", c.entries},
              {"judged", c.judged},
              {"binary", c.binary},
              {"graded", c.graded},
              {"skipped", c.skipped},
              {"failed", c.failed},
              {"unjudged", c.unjudged}}},
            {"overall_relevant", averaged_json(e.overall)},
            {"precision_at_k", precision},
            {"graded_by_position", positions},
            {"grade_histogram", {{"counts", counts}, {"ratios", ratios}, {"total", e.grades.total}}},
            {"navigational",
             {{"queries", e.navigational.queries},
              {"verdicts", e.navigational.verdicts},
              {"correct", e.navigational.correct},
              {"success_rate", value_json(e.navigational.success_rate)},
              {"success_at", success_at},
              {"mrr", value_json(e.navigational.mrr)}}},
        });
    }
    json overlap = json::array();
    for (const auto& o : report.overlap) {
        overlap.push_back({{"engine_a", o.engine_a},
                           {"engine_b", o.engine_b},
                           {"k", o.k},
                           {"queries", o.overlap.queries},
                           {"mean", value_json(o.overlap.mean)}});
    }
    return {{"schema_version", kExportSchemaVersion},
            {"run_id", report.run_id},
            {"study_id", report.study_id},
            {"seed", report.seed},
            {"tasks", report.tasks},
            {"tasks_complete", report.tasks_complete},
            {"unanswered_queries", report.unanswered_queries},
            {"engines", engines},
            {"overlap", overlap},
            {"warnings", report.warnings}};
}

std::map<std::string, std::string> render_exports(const MetricsReport& report) {
    std::map<std::string, std::string> files;
    files["report.json"] = to_json(report).dump(2) + "\n";

    Csv precision(report, {"engine_id", "k", "relevant", "judged", "micro", "micro_exact", "macro", "macro_exact",
                           "macro_lists"});
    for (const auto& e : report.engines) {
        for (const auto& p : e.precision) {
            const auto& v = p.value;
            precision.row(e.engine_id, std::to_string(p.k), v.numerator, v.denominator, decimal(v.micro),
                          exact(v.micro), decimal(v.macro), exact(v.macro), v.lists);
        }
        const auto& v = e.overall;
        precision.row(e.engine_id, "all", v.numerator, v.denominator, decimal(v.micro), exact(v.micro),
                      decimal(v.macro), exact(v.macro), v.lists);
    }
    files["precision.csv"] = precision.str();

    Csv positions(report, {"engine_id", "rank", "count", "mean", "mean_exact", "cumulative_count", "cumulative",
                           "cumulative_exact"});
    for (const auto& e : report.engines) {
        for (const auto& p : e.graded_by_position) {
            positions.row(e.engine_id, p.rank, p.count, decimal(p.mean), exact(p.mean), p.cumulative_count,
                          decimal(p.cumulative), exact(p.cumulative));
        }
    }
    files["graded_by_position.csv"] = positions.str();

    Csv grades(report, {"engine_id", "grade", "count", "ratio", "ratio_exact"});
    for (const auto& e : report.engines) {
        for (int g = 0; g < 5; ++g) {
            const auto& r = e.grades.ratios[static_cast<std::size_t>(g)];
            grades.row(e.engine_id, g, e.grades.counts[static_cast<std::size_t>(g)], decimal(r), exact(r));
        }
    }
    files["grade_histogram.csv"] = grades.str();

    Csv nav(report, {"engine_id", "measure", "value", "value_exact", "correct", "verdicts", "queries"});
    for (const auto& e : report.engines) {
        const auto& n = e.navigational;
        nav.row(e.engine_id, "success_rate", decimal(n.success_rate), exact(n.success_rate), n.correct, n.verdicts,
                n.queries);
        for (std::size_t i = 0; i < n.success_at.size(); ++i) {
            nav.row(e.engine_id, "success@" + std::to_string(i + 1), decimal(n.success_at[i]),
                    exact(n.success_at[i]), n.correct, n.verdicts, n.queries);
        }
        nav.row(e.engine_id, "mrr", decimal(n.mrr), exact(n.mrr), n.correct, n.verdicts, n.queries);
    }
    files["navigational.csv"] = nav.str();

    Csv overlap(report, {"engine_a", "engine_b", "k", "queries", "mean", "mean_exact"});
    for (const auto& o : report.overlap) {
        overlap.row(o.engine_a, o.engine_b, o.k, o.overlap.queries, decimal(o.overlap.mean), exact(o.overlap.mean));
    }
    files["overlap.csv"] = overlap.str();

    Csv coverage(report, {"engine_id", "queries", "failed_captures", "empty_lists", "entries", "judged", "binary",
                          "graded", "skipped", "failed", "unjudged"});
    for (const auto& e : report.engines) {
        const auto& c = e.coverage;
        coverage.row(e.engine_id, c.queries, c.failed_captures, c.empty_lists, c.entries, c.judged, c.binary,
                     c.graded, c.skipped, c.failed, c.unjudged);
    }
    files["coverage.csv"] = coverage.str();
    return files;
}

void write_exports(const MetricsReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, bytes] : render_exports(report)) store::write_file_atomic(dir / name, bytes);
}

}  // namespace serpeval::metrics
