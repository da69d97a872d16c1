#pragma once

// Popularity-stratified query sampling from a raw query log.
//
// The log is reduced to a frequency table, cut into K contiguous segments of
// (approximately) equal instance volume, candidates are drawn uniformly per
// segment, labeled with a human intent file, and down-sampled to a target
// count per intent per segment.

#include "serpeval/core.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace serpeval::sampler {

struct QueryLogEntry {
    std::string text;
    std::uint64_t frequency = 0;

    bool operator==(const QueryLogEntry&) const = default;
};

enum class LogFormat {
    instances,  // one query per line
    aggregate,  // query<TAB>count
};

struct RejectedLine {
    std::size_t line_number = 0;
    std::string reason;
};

struct FrequencyTable {
    std::vector<QueryLogEntry> entries;  // frequency desc, then text asc
    std::uint64_t total_instances = 0;
    std::vector<RejectedLine> rejects;
};

struct PopularitySegment {
    int index = 0;  // 1-based
    std::vector<QueryLogEntry> entries;
    std::uint64_t instance_count = 0;

    std::size_t distinct_count() const { return entries.size(); }
};

// Trim, collapse internal whitespace runs to one space, case-fold.
// Case folding covers ASCII and the Latin-1 supplement (umlauts etc.).
std::string normalize_query(std::string_view raw);

// Throws ValidationError("empty log") when no line is accepted.
FrequencyTable ingest_log(std::istream& in, LogFormat format);

// Walks the popularity-sorted table and closes segment i as soon as adding the
// next query would move the cumulative instance count further from i*T/K than
// stopping. Queries are never split.
std::vector<PopularitySegment> segment_by_popularity(const std::vector<QueryLogEntry>& table, int segments);

// Uniform draw without replacement over the segment's distinct queries.
// Returned in segment (popularity) order; all queries when n >= distinct_count.
std::vector<std::string> draw_candidates(const PopularitySegment& segment, std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Intent labels

struct LabelFile {
    std::map<std::string, Intent> labels;  // keyed by normalized query
};

// Tab-separated query<TAB>intent; '#' comment lines and blank lines ignored.
// Unknown intent tokens raise ValidationError naming the line.
LabelFile parse_label_file(std::istream& in);

// Rule-based hint for pre-filling label templates; never authoritative.
std::optional<Intent> intent_hint(std::string_view query);

struct Candidate {
    std::string text;
    int segment_index = 0;
};

struct LabeledCandidate {
    std::string text;
    int segment_index = 0;
    Intent intent = Intent::other;
};

struct LabelingResult {
    std::vector<LabeledCandidate> labeled;
    std::vector<Candidate> missing;  // gap report
};

class LabelGapError : public ValidationError {
public:
    explicit LabelGapError(std::vector<Candidate> missing);
    const std::vector<Candidate>& missing() const { return missing_; }

private:
    std::vector<Candidate> missing_;
};

enum class LabelMode { strict, partial };

// Strict mode throws LabelGapError when any candidate lacks a label.
LabelingResult apply_intent_labels(const std::vector<Candidate>& candidates, const LabelFile& labels,
                                   LabelMode mode = LabelMode::strict);

// ---------------------------------------------------------------------------
// Sample

struct SampledQuery {
    std::string text;
    int segment_index = 0;
    Intent intent = Intent::informational;
    std::uint64_t draw_seed = 0;

    bool operator==(const SampledQuery&) const = default;
};

struct Shortfall {
    int segment_index = 0;
    Intent intent = Intent::informational;
    std::size_t available = 0;
    std::size_t target = 0;
};

struct Sample {
    std::vector<SampledQuery> queries;      // segment asc, informational before navigational
    std::vector<LabeledCandidate> excluded;  // transactional / other candidates
    std::vector<Shortfall> shortfalls;
};

Sample build_sample(const std::vector<LabeledCandidate>& labeled, std::size_t target_per_intent, std::uint64_t seed);

// query<TAB>segment<TAB>intent<TAB>seed
void write_sample_tsv(std::ostream& out, const Sample& sample);
std::vector<SampledQuery> read_sample_tsv(std::istream& in);

// index<TAB>distinct<TAB>instances<TAB>cumulative_instances
void write_segments_tsv(std::ostream& out, const std::vector<PopularitySegment>& segments);

}  // namespace serpeval::sampler
