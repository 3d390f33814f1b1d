#ifndef KGNER_DATASET_HPP
#define KGNER_DATASET_HPP

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "kgner/corpus.hpp"
#include "kgner/knowledge.hpp"

namespace kgner {

// One (sentence, knowledge context) pair with per-token labels over
// context tokens ++ text tokens. Context tokens always carry O.
struct TrainingRecord {
    std::string record_id;
    std::string corpus_id;
    TaggedSentence sentence;
    KnowledgeContext context;
    std::vector<BioTag> labels;
    std::vector<std::string> answers;
    std::vector<EntitySpan> spans;  // spans of this record's entity type
    long n_answers = 0;

    bool positive() const { return n_answers > 0; }
    bool operator==(const TrainingRecord&) const = default;
};

struct SplitSpec {
    double train_fraction = 0.7;
    double dev_fraction = 0.3;
    uint64_t seed = 0;
};

struct DatasetStatsRow {
    long entity_mentions = 0;
    long train_pos = 0, train_neg = 0;
    long dev_pos = 0, dev_neg = 0;
    long test_pos = 0, test_neg = 0;
};

struct DatasetStats {
    // (corpus_id, entity-type name) -> counts
    std::map<std::pair<std::string, std::string>, DatasetStatsRow> rows;

    void merge(const DatasetStats& other);
    // Columns mirror the distribution table: dataset, entity, mentions,
    // then +/- counts per split.
    std::string to_tsv() const;
};

struct SplitSentences {
    std::vector<TaggedSentence> train;
    std::vector<TaggedSentence> dev;
    std::vector<TaggedSentence> test;
};

struct RecordSet {
    std::vector<TrainingRecord> train;
    std::vector<TrainingRecord> dev;
    std::vector<TrainingRecord> test;
};

// Emits one record per (sentence, declared entity type); positive iff
// the sentence has at least one span of the type. `contexts` keys are
// the declared entity types.
RecordSet build_records(const SplitSentences& splits,
                        const std::map<std::string, KnowledgeContext>& contexts,
                        const std::string& corpus_id, DatasetStats* stats = nullptr);

// Sentence-level holdout split, uniform without replacement, floor(dev
// fraction * n) dev sentences. Deterministic under the seed.
std::pair<std::vector<TaggedSentence>, std::vector<TaggedSentence>> split_holdout(
    const std::vector<TaggedSentence>& sentences, const SplitSpec& spec);

// Per (corpus_id, entity_type): down-samples negatives uniformly to the
// positive count. Positives untouched; original order preserved.
std::vector<TrainingRecord> balance(const std::vector<TrainingRecord>& records, uint64_t seed);

// Stratified by (corpus_id, entity_type, polarity): keeps
// ceil(fraction * group size) records per group, original order.
std::vector<TrainingRecord> subsample_for_curve(const std::vector<TrainingRecord>& records,
                                                double fraction, uint64_t seed);

struct SyntheticConfig {
    std::vector<std::string> type_names;
    long n_train = 1000;
    long n_dev = 200;
    long n_test = 200;
    int filler_vocab = 50;
    int trigger_vocab = 12;  // per entity type
    double span_rate = 0.5;  // probability a (sentence, type) pair is positive
    int min_sentence_len = 8;
    int max_sentence_len = 16;
    uint64_t seed = 0;
};

struct SyntheticCorpus {
    SplitSentences splits;
    std::vector<std::string> type_names;
    DefinitionRegistry definitions;  // one synthetic definition per type
    std::string corpus_id;
};

// Each entity type owns a disjoint trigger vocabulary derived from its
// name; filler tokens are shared. Mentions are 1-3 trigger tokens.
SyntheticCorpus generate_synthetic(const SyntheticConfig& config,
                                   const std::string& corpus_id = "syn");

// Line-delimited serialization; read(write(x)) == x.
std::string write_records(const std::vector<TrainingRecord>& records);
void write_records_file(const std::vector<TrainingRecord>& records,
                        const std::filesystem::path& path);
std::vector<TrainingRecord> read_records(std::istream& input);
std::vector<TrainingRecord> read_records_file(const std::filesystem::path& path);

// CoNLL serialization of parsed/synthesized sentences.
std::string sentences_to_conll(const std::vector<TaggedSentence>& sentences);

}  // namespace kgner

#endif  // KGNER_DATASET_HPP
