#ifndef KGNER_EVALUATE_HPP
#define KGNER_EVALUATE_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgner/corpus.hpp"

namespace kgner {

inline constexpr double kDefaultZ = 1.9599;  // two-sided 95%

// Spans predicted for one record; derived from text-range tags only.
struct Prediction {
    std::string record_id;
    std::vector<EntitySpan> spans;
    std::vector<BioTag> tags;
};

struct MetricRow {
    std::string scope;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Recomputes precision/recall/f1 from the counts, with the
// zero-denominator convention (0, not undefined).
void finish_metric_row(MetricRow& row);

// Maximal chunks B I* become spans; a dangling I opens a new span.
// Single left-to-right pass.
std::vector<EntitySpan> decode_spans(std::span<const BioTag> tags, const std::string& type_name);

// Same, reusing the output vector's capacity (for the timing probe).
void decode_spans_into(std::span<const BioTag> tags, const std::string& type_name,
                       std::vector<EntitySpan>& out);

// Exact (start, end) span matching within one (record, entity type).
MetricRow exact_match(const std::vector<EntitySpan>& gold, const std::vector<EntitySpan>& predicted);

// Micro-aggregation: sums tp/fp/fn then recomputes precision/recall/f1.
MetricRow aggregate(std::span<const MetricRow> rows, const std::string& scope);

struct WilsonInterval {
    double p_hat = 0.0;
    long n = 0;
    double z = kDefaultZ;
    double lower = 0.0;
    double upper = 0.0;
};

WilsonInterval wilson(double p_hat, long n, double z = kDefaultZ);

struct SignificanceResult {
    bool significant = false;
    WilsonInterval interval_a;
    WilsonInterval interval_b;
};

// Treats each F1 as a proportion over n_gold trials; significant iff the
// Wilson intervals are disjoint.
SignificanceResult significance(double f1_a, double f1_b, long n_gold, double z = kDefaultZ);

struct TimingCell {
    int k = 0;        // entity types
    long n = 0;       // tokens per stream
    double seconds = 0.0;  // per decode pass over all k streams
};

// Measures span decoding over a (k, N) grid of synthetic tag streams.
std::vector<TimingCell> timing_probe(const std::vector<int>& ks, const std::vector<long>& ns,
                                     uint64_t seed);

// One evaluation table: fine-grained (corpus, type) rows plus type,
// corpus and global aggregates, each with a Wilson interval on F1 over
// the gold-entity count of the scope.
struct EvalReportRow {
    MetricRow metrics;
    long n_gold = 0;
    std::optional<WilsonInterval> interval;  // absent when n_gold = 0
};

struct EvalReport {
    std::vector<EvalReportRow> rows;

    const EvalReportRow* find(const std::string& scope) const;
    double global_f1() const;

    std::string to_tsv() const;
    std::string to_json() const;
};

// Gold/predicted spans of one scored record.
struct ScoredRecord {
    std::string corpus_id;
    std::string entity_type;
    std::vector<EntitySpan> gold;
    std::vector<EntitySpan> predicted;
};

EvalReport build_report(const std::vector<ScoredRecord>& records, double z = kDefaultZ);

}  // namespace kgner

#endif  // KGNER_EVALUATE_HPP
