#pragma once

// Brute-force recomputation of the report measures straight from raw
// per-engine lists and per-URL judgments, with its own rational type. Shares
// no code with the metrics library beyond the report structs it compares to.

#include "run_builder.hpp"

#include "serpeval/core.hpp"
#include "serpeval/metrics.hpp"
#include "serpeval/study.hpp"

#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace serpeval::testing {

// Rational with den == 0 meaning undefined.
struct Q {
    __int128 n = 0;
    __int128 d = 0;

    static Q of(__int128 n, __int128 d) {
        Q q{n, d};
        if (d != 0) {
            __int128 a = n < 0 ? -n : n, b = d;
            while (b != 0) {
                auto t = a % b;
                a = b;
                b = t;
            }
            if (a != 0) {
                q.n /= a;
                q.d /= a;
            }
        }
        return q;
    }
    bool defined() const { return d != 0; }
    Q plus(const Q& o) const { return of(n * o.d + o.n * d, d * o.d); }
    Q over(__int128 k) const { return k == 0 ? Q{} : of(n, d * k); }
};

inline bool same(const Q& q, const std::optional<Fraction>& f) {
    if (!q.defined()) return !f.has_value();
    return f && q.n * f->den() == static_cast<__int128>(f->num()) * q.d;
}

struct RawJudgment {
    std::optional<bool> relevant;
    std::optional<int> graded;
    bool skipped = false;
};

struct RawStudy {
    std::vector<std::string> engines;
    std::vector<std::string> queries;  // informational
    std::map<std::pair<std::string, std::string>, std::vector<std::string>> lists;  // (engine, query) -> urls
    std::map<std::pair<std::string, std::string>, RawJudgment> judgments;          // (query, url)
    std::set<std::string> failed_urls;
    int depth = 10;
};

// Random study of up to 5 queries x 5 results per engine, with overlap,
// undisplayable pages, skips, binary-only, graded-only and unjudged results.
inline RawStudy generate_micro_study(SeededRng& rng) {
    RawStudy s;
    s.engines = {"alpha", "beta"};
    auto nq = 1 + rng.below(5);
    for (std::uint64_t q = 0; q < nq; ++q) {
        auto query = "query " + std::to_string(q);
        s.queries.push_back(query);
        std::set<std::string> seen;
        for (const auto& e : s.engines) {
            auto n = rng.below(6);
            std::vector<std::string> list;
            while (list.size() < n) {
                auto u = "https://d" + std::to_string(rng.below(7)) + ".example/" + std::to_string(q);
                if (std::find(list.begin(), list.end(), u) == list.end()) list.push_back(u);
            }
            for (const auto& u : list) seen.insert(u);
            s.lists[{e, query}] = list;
        }
        for (const auto& u : seen) {
            bool failed = rng.below(8) == 0;
            if (failed) s.failed_urls.insert(u);
            RawJudgment j;
            auto roll = rng.below(10);
            if (failed || roll == 0) {
                if (rng.below(2) == 0) continue;  // never visited
                j.skipped = true;
            } else if (roll == 1) {
                continue;
            } else {
                if (roll != 2) j.relevant = rng.below(2) == 0;
                if (roll != 3) j.graded = static_cast<int>(rng.below(5));
            }
            s.judgments[{query, u}] = j;
        }
    }
    return s;
}

inline CollectionRun to_run(const RawStudy& s) {
    RunBuilder b;
    b.run.engines.clear();
    for (const auto& e : s.engines) b.run.engines.push_back({e, "Engine " + e});
    b.run.depth.informational = s.depth;
    for (const auto& q : s.queries) {
        std::vector<std::vector<std::string>> per_engine;
        for (const auto& e : s.engines) per_engine.push_back(s.lists.at({e, q}));
        b.add(q, Intent::informational, per_engine);
    }
    b.failed = s.failed_urls;
    return b.build(nullptr);
}

inline metrics::TaskJudgments to_judgments(const RawStudy& s) {
    metrics::TaskJudgments out;
    std::uint64_t seq = 0;
    for (const auto& [key, raw] : s.judgments) {
        auto task_id = study::task_id_for(key.first);
        study::Judgment j;
        j.seq = ++seq;
        j.session_id = "oracle";
        j.task_id = task_id;
        j.pooled_id = study::pooled_id_for(task_id, key.second);
        j.relevant = raw.relevant;
        j.graded = raw.graded;
        j.skipped = raw.skipped;
        out[task_id][j.pooled_id] = j;
    }
    return out;
}

struct OracleEngine {
    std::vector<Q> micro, macro;       // index k-1
    Q overall_micro, overall_macro;
    std::vector<Q> position_mean, cumulative_mean;
    std::array<std::size_t, 5> counts{};
    std::array<Q, 5> ratios;
    std::size_t judged = 0, skipped = 0, failed = 0, unjudged = 0;
};

inline const RawJudgment* raw_judgment(const RawStudy& s, const std::string& q, const std::string& u) {
    auto it = s.judgments.find({q, u});
    return it == s.judgments.end() ? nullptr : &it->second;
}

inline OracleEngine oracle_engine(const RawStudy& s, const std::string& engine) {
    OracleEngine o;
    auto precision = [&](int k, Q& micro, Q& macro) {
        __int128 rel = 0, judged = 0;
        Q sum = Q::of(0, 1);
        __int128 lists = 0;
        for (const auto& q : s.queries) {
            const auto& list = s.lists.at({engine, q});
            __int128 r = 0, d = 0;
            for (int i = 0; i < static_cast<int>(list.size()) && i < k; ++i) {
                const auto* j = raw_judgment(s, q, list[static_cast<std::size_t>(i)]);
                if (!j || j->skipped || !j->relevant) continue;
                ++d;
                if (*j->relevant) ++r;
            }
            rel += r;
            judged += d;
            if (d > 0) {
                sum = sum.plus(Q::of(r, d));
                ++lists;
            }
        }
        micro = judged ? Q::of(rel, judged) : Q{};
        macro = sum.over(lists);
    };
    for (int k = 1; k <= s.depth; ++k) {
        Q mi, ma;
        precision(k, mi, ma);
        o.micro.push_back(mi);
        o.macro.push_back(ma);
    }
    precision(1000, o.overall_micro, o.overall_macro);

    __int128 cum_sum = 0, cum_count = 0;
    for (int r = 1; r <= s.depth; ++r) {
        __int128 sum = 0, count = 0;
        for (const auto& q : s.queries) {
            const auto& list = s.lists.at({engine, q});
            if (static_cast<int>(list.size()) < r) continue;
            const auto* j = raw_judgment(s, q, list[static_cast<std::size_t>(r - 1)]);
            if (!j || j->skipped || !j->graded) continue;
            sum += *j->graded;
            ++count;
        }
        cum_sum += sum;
        cum_count += count;
        o.position_mean.push_back(count ? Q::of(sum, count) : Q{});
        o.cumulative_mean.push_back(cum_count ? Q::of(cum_sum, cum_count) : Q{});
    }

    std::size_t total = 0;
    for (const auto& q : s.queries) {
        for (const auto& u : s.lists.at({engine, q})) {
            const auto* j = raw_judgment(s, q, u);
            if (s.failed_urls.count(u)) {
                ++o.failed;
            } else if (j && j->skipped) {
                ++o.skipped;
            } else if (j) {
                ++o.judged;
            } else {
                ++o.unjudged;
            }
            if (j && !j->skipped && j->graded) {
                ++o.counts[static_cast<std::size_t>(*j->graded)];
                ++total;
            }
        }
    }
    for (std::size_t g = 0; g < 5; ++g) o.ratios[g] = total ? Q::of(o.counts[g], total) : Q{};
    return o;
}

inline Q oracle_overlap(const RawStudy& s, const std::string& a, const std::string& b, int k) {
    Q sum = Q::of(0, 1);
    __int128 n = 0;
    for (const auto& q : s.queries) {
        std::set<std::string> sa, sb;
        const auto& la = s.lists.at({a, q});
        const auto& lb = s.lists.at({b, q});
        for (int i = 0; i < k && i < static_cast<int>(la.size()); ++i) sa.insert(la[static_cast<std::size_t>(i)]);
        for (int i = 0; i < k && i < static_cast<int>(lb.size()); ++i) sb.insert(lb[static_cast<std::size_t>(i)]);
        std::size_t inter = 0;
        for (const auto& u : sa) inter += sb.count(u);
        std::size_t uni = sa.size() + sb.size() - inter;
        if (uni == 0) continue;
        sum = sum.plus(Q::of(inter, uni));
        ++n;
    }
    return sum.over(n);
}

// Compares a report built from `s` against the oracle; returns mismatch descriptions.
inline std::vector<std::string> compare_with_oracle(const metrics::MetricsReport& report, const RawStudy& s) {
    std::vector<std::string> bad;
    auto check = [&](bool ok, const std::string& what) {
        if (!ok) bad.push_back(what);
    };
    for (const auto& er : report.engines) {
        auto o = oracle_engine(s, er.engine_id);
        const auto& e = er.engine_id;
        check(er.precision.size() == static_cast<std::size_t>(s.depth), e + " precision length");
        for (std::size_t i = 0; i < er.precision.size() && i < o.micro.size(); ++i) {
            check(same(o.micro[i], er.precision[i].value.micro), e + " micro p@" + std::to_string(i + 1));
            check(same(o.macro[i], er.precision[i].value.macro), e + " macro p@" + std::to_string(i + 1));
        }
        check(same(o.overall_micro, er.overall.micro), e + " overall micro");
        check(same(o.overall_macro, er.overall.macro), e + " overall macro");
        for (std::size_t i = 0; i < er.graded_by_position.size() && i < o.position_mean.size(); ++i) {
            check(same(o.position_mean[i], er.graded_by_position[i].mean), e + " mean grade @" + std::to_string(i + 1));
            check(same(o.cumulative_mean[i], er.graded_by_position[i].cumulative),
                  e + " cumulative grade @" + std::to_string(i + 1));
        }
        for (std::size_t g = 0; g < 5; ++g) {
            check(o.counts[g] == er.grades.counts[g], e + " grade count " + std::to_string(g));
            check(same(o.ratios[g], er.grades.ratios[g]), e + " grade ratio " + std::to_string(g));
        }
        check(o.judged == er.coverage.judged, e + " judged count");
        check(o.skipped == er.coverage.skipped, e + " skipped count");
        check(o.failed == er.coverage.failed, e + " failed count");
        check(o.unjudged == er.coverage.unjudged, e + " unjudged count");
    }
    for (const auto& row : report.overlap) {
        check(same(oracle_overlap(s, row.engine_a, row.engine_b, row.k), row.overlap.mean), "overlap");
    }
    return bad;
}

}  // namespace serpeval::testing
