#include "serpeval/sampler.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <unordered_map>

namespace serpeval::sampler {

namespace {

bool is_ascii_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
}

template <typename Int>
std::optional<Int> parse_int(std::string_view text) {
    Int value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
    return value;
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::string normalize_query(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        auto c = static_cast<unsigned char>(raw[i]);
        bool space = is_ascii_space(c);
        // U+00A0 no-break space
        if (c == 0xc2 && i + 1 < raw.size() && static_cast<unsigned char>(raw[i + 1]) == 0xa0) {
            space = true;
            ++i;
        }
        if (space) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        if (c >= 'A' && c <= 'Z') {
            out.push_back(static_cast<char>(c + ('a' - 'A')));
        } else if (c == 0xc3 && i + 1 < raw.size()) {
            auto next = static_cast<unsigned char>(raw[i + 1]);
            // U+00C0..U+00DE map to U+00E0..U+00FE, except U+00D7 (multiplication sign)
            if (next >= 0x80 && next <= 0x9e && next != 0x97) next = static_cast<unsigned char>(next + 0x20);
            out.push_back(static_cast<char>(c));
            out.push_back(static_cast<char>(next));
            ++i;
        } else {
            out.push_back(static_cast<char>(c));
        }
    }
    return out;
}

FrequencyTable ingest_log(std::istream& in, LogFormat format) {
    FrequencyTable table;
    std::unordered_map<std::string, std::uint64_t> counts;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        strip_cr(line);
        if (!is_valid_utf8(line)) {
            table.rejects.push_back({line_number, "invalid UTF-8"});
            continue;
        }
        std::string_view query = line;
        std::uint64_t count = 1;
        if (format == LogFormat::aggregate) {
            auto tab = line.rfind('\t');
            if (tab == std::string::npos) {
                table.rejects.push_back({line_number, "missing count column"});
                continue;
            }
            auto parsed = parse_int<std::uint64_t>(std::string_view(line).substr(tab + 1));
            if (!parsed || *parsed == 0) {
                table.rejects.push_back({line_number, "count is not a positive integer"});
                continue;
            }
            count = *parsed;
            query = std::string_view(line).substr(0, tab);
        }
        auto text = normalize_query(query);
        if (text.empty()) {
            table.rejects.push_back({line_number, "empty query"});
            continue;
        }
        counts[std::move(text)] += count;
        table.total_instances += count;
    }
    if (counts.empty()) throw ValidationError("empty log");

    table.entries.reserve(counts.size());
    for (auto& [text, freq] : counts) table.entries.push_back({text, freq});
    std::sort(table.entries.begin(), table.entries.end(), [](const QueryLogEntry& a, const QueryLogEntry& b) {
        if (a.frequency != b.frequency) return a.frequency > b.frequency;
        return a.text < b.text;
    });
    return table;
}

std::vector<PopularitySegment> segment_by_popularity(const std::vector<QueryLogEntry>& table, int segments) {
    if (segments < 1) throw ValidationError("segment count must be >= 1");
    if (table.empty()) throw ValidationError("empty frequency table");
    const auto k = static_cast<std::size_t>(segments);
    if (k > table.size()) throw ValidationError("too few distinct queries");

    __int128 total = 0;
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& e = table[i];
        if (e.frequency == 0) throw ValidationError("frequency must be >= 1");
        if (i > 0) {
            const auto& prev = table[i - 1];
            if (prev.frequency < e.frequency || (prev.frequency == e.frequency && !(prev.text < e.text))) {
                throw ValidationError("frequency table is not popularity-sorted");
            }
        }
        total += e.frequency;
    }

    std::vector<PopularitySegment> out;
    out.reserve(k);
    out.push_back(PopularitySegment{1, {}, 0});
    __int128 cumulative = 0;
    const __int128 kk = static_cast<__int128>(k);
    auto abs128 = [](__int128 v) { return v < 0 ? -v : v; };

    for (std::size_t idx = 0; idx < table.size(); ++idx) {
        const auto& entry = table[idx];
        auto& current = out.back();
        const auto seg = static_cast<std::size_t>(current.index);
        if (seg < k && !current.entries.empty()) {
            const std::size_t remaining_items = table.size() - idx;
            const std::size_t segments_after = k - seg;
            // Deviations scaled by K to stay in integers: |K*c - i*T|.
            const __int128 goal = static_cast<__int128>(seg) * total;
            const __int128 close_dev = abs128(kk * cumulative - goal);
            const __int128 join_dev = abs128(kk * (cumulative + entry.frequency) - goal);
            if (remaining_items == segments_after || join_dev > close_dev) {
                out.push_back(PopularitySegment{static_cast<int>(seg + 1), {}, 0});
            }
        }
        auto& target = out.back();
        target.entries.push_back(entry);
        target.instance_count += entry.frequency;
        cumulative += entry.frequency;
    }
    return out;
}

std::vector<std::string> draw_candidates(const PopularitySegment& segment, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ValidationError("candidate count must be >= 1");
    SeededRng rng(seed);
    std::vector<std::string> out;
    if (segment.entries.size() <= n) {
        for (const auto& e : segment.entries) out.push_back(e.text);
        return out;
    }
    for (auto i : rng.choose(segment.entries.size(), n)) out.push_back(segment.entries[i].text);
    return out;
}

// ---------------------------------------------------------------------------

LabelFile parse_label_file(std::istream& in) {
    LabelFile file;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        strip_cr(line);
        if (line.empty() || line.front() == '#') continue;
        auto tab = line.rfind('\t');
        if (tab == std::string::npos) {
            throw ValidationError("label file line " + std::to_string(line_number) + ": missing intent column");
        }
        auto token = std::string_view(line).substr(tab + 1);
        auto intent = parse_intent(token);
        if (!intent) {
            throw ValidationError("label file line " + std::to_string(line_number) + ": unknown label '" +
                                  std::string(token) + "'");
        }
        auto text = normalize_query(std::string_view(line).substr(0, tab));
        if (text.empty()) {
            throw ValidationError("label file line " + std::to_string(line_number) + ": empty query");
        }
        auto [it, inserted] = file.labels.emplace(text, *intent);
        if (!inserted && it->second != *intent) {
            throw ValidationError("label file line " + std::to_string(line_number) + ": conflicting label for '" +
                                  text + "'");
        }
    }
    return file;
}

std::optional<Intent> intent_hint(std::string_view query) {
    auto q = normalize_query(query);
    if (q.find(' ') != std::string::npos) return std::nullopt;
    if (q.starts_with("www.") || q.starts_with("http://") || q.starts_with("https://")) return Intent::navigational;
    static constexpr std::string_view tlds[] = {".de", ".com", ".org", ".net", ".at", ".ch", ".eu", ".info"};
    for (auto tld : tlds) {
        if (q.size() > tld.size() && q.ends_with(tld)) return Intent::navigational;
    }
    return std::nullopt;
}

LabelGapError::LabelGapError(std::vector<Candidate> missing)
    : ValidationError(std::to_string(missing.size()) + " candidate(s) have no intent label"),
      missing_(std::move(missing)) {}

LabelingResult apply_intent_labels(const std::vector<Candidate>& candidates, const LabelFile& labels,
                                   LabelMode mode) {
    LabelingResult result;
    for (const auto& c : candidates) {
        auto it = labels.labels.find(normalize_query(c.text));
        if (it == labels.labels.end()) {
            result.missing.push_back(c);
            continue;
        }
        result.labeled.push_back({c.text, c.segment_index, it->second});
    }
    if (mode == LabelMode::strict && !result.missing.empty()) throw LabelGapError(result.missing);
    return result;
}

// ---------------------------------------------------------------------------

Sample build_sample(const std::vector<LabeledCandidate>& labeled, std::size_t target_per_intent, std::uint64_t seed) {
    if (target_per_intent < 1) throw ValidationError("target per intent must be >= 1");
    std::map<int, std::vector<const LabeledCandidate*>> by_segment;
    for (const auto& c : labeled) by_segment[c.segment_index].push_back(&c);

    Sample sample;
    for (const auto& [segment, members] : by_segment) {
        for (Intent intent : {Intent::informational, Intent::navigational}) {
            std::vector<const LabeledCandidate*> matching;
            for (const auto* c : members) {
                if (c->intent == intent) matching.push_back(c);
            }
            std::vector<std::size_t> keep;
            if (matching.size() > target_per_intent) {
                SeededRng rng(derive_seed(seed, "sample/" + std::to_string(segment) + "/" + std::string(to_string(intent))));
                keep = rng.choose(matching.size(), target_per_intent);
            } else {
                keep.resize(matching.size());
                std::iota(keep.begin(), keep.end(), std::size_t{0});
                if (matching.size() < target_per_intent) {
                    sample.shortfalls.push_back({segment, intent, matching.size(), target_per_intent});
                }
            }
            for (auto i : keep) sample.queries.push_back({matching[i]->text, segment, intent, seed});
        }
        for (const auto* c : members) {
            if (!is_study_intent(c->intent)) sample.excluded.push_back(*c);
        }
    }
    return sample;
}

void write_sample_tsv(std::ostream& out, const Sample& sample) {
    for (const auto& q : sample.queries) {
        out << q.text << '\t' << q.segment_index << '\t' << to_string(q.intent) << '\t' << q.draw_seed << '\n';
    }
}

std::vector<SampledQuery> read_sample_tsv(std::istream& in) {
    std::vector<SampledQuery> out;
    std::string line;
    std::size_t line_number = 0;
    auto fail = [&](const std::string& why) {
        return ValidationError("sample line " + std::to_string(line_number) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++line_number;
        strip_cr(line);
        if (line.empty()) continue;
        std::vector<std::string_view> cols;
        std::string_view rest = line;
        while (true) {
            auto tab = rest.find('\t');
            cols.push_back(rest.substr(0, tab));
            if (tab == std::string_view::npos) break;
            rest = rest.substr(tab + 1);
        }
        if (cols.size() != 4) throw fail("expected 4 columns");
        auto segment = parse_int<int>(cols[1]);
        auto intent = parse_intent(cols[2]);
        auto seed = parse_int<std::uint64_t>(cols[3]);
        if (!segment || *segment < 1) throw fail("bad segment");
        if (!intent) throw fail("unknown intent");
        if (!seed) throw fail("bad seed");
        if (cols[0].empty()) throw fail("empty query");
        out.push_back({std::string(cols[0]), *segment, *intent, *seed});
    }
    return out;
}

void write_segments_tsv(std::ostream& out, const std::vector<PopularitySegment>& segments) {
    std::uint64_t cumulative = 0;
    out << "segment\tdistinct\tinstances\tcumulative_instances\n";
    for (const auto& s : segments) {
        cumulative += s.instance_count;
        out << s.index << '\t' << s.distinct_count() << '\t' << s.instance_count << '\t' << cumulative << '\n';
    }
}

}  // namespace serpeval::sampler
