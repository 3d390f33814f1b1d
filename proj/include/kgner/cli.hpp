#ifndef KGNER_CLI_HPP
#define KGNER_CLI_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kgner/dataset.hpp"
#include "kgner/trainer.hpp"

namespace kgner {

inline constexpr const char* kToolkitVersion = "kgner 0.1.0";

// Exit code contract: 0 success, 1 usage error, 2 data error, 3 numeric
// failure.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitNumeric = 3,
};

struct ManifestInput {
    std::string path;
    std::string role;  // train | dev | test | definitions | model | corpus
    uint64_t digest = 0;
};

// Snapshot of one run: resolved configuration, input digests, seeds and
// output paths. Re-running a manifest reproduces the metric tables byte
// for byte.
struct RunManifest {
    std::string command;
    std::string config_json;  // resolved flag snapshot, JSON object text
    std::vector<ManifestInput> inputs;
    std::vector<uint64_t> seeds;
    std::vector<std::string> outputs;

    void add_input(const std::filesystem::path& path, const std::string& role);
    std::string to_json() const;
    void write(const std::filesystem::path& path) const;
};

// One corpus with its split sentences and declared entity types.
struct CorpusBundle {
    std::string corpus_id;
    SplitSentences splits;
    std::vector<std::string> type_names;
};

struct CorpusLoadOptions {
    std::string format = "conll";  // conll | standoff
    double dev_fraction = 0.3;     // used when the corpus has no dev split
    uint64_t seed = 0;
};

// Loads train/dev/test files from a directory; a missing dev split is
// held out from train at `dev_fraction`.
CorpusBundle load_corpus_dir(const std::string& corpus_id, const std::filesystem::path& dir,
                             const CorpusLoadOptions& options,
                             std::vector<std::string>* warnings = nullptr);

// Renders one knowledge context per declared type, mining examples from
// the train split.
std::map<std::string, KnowledgeContext> make_contexts(const CorpusBundle& corpus,
                                                      const DefinitionRegistry& definitions,
                                                      ContextKind kind,
                                                      bool allow_empty_examples = false);

// Records for one corpus and context kind.
RecordSet build_corpus_records(const CorpusBundle& corpus, const DefinitionRegistry& definitions,
                               ContextKind kind, DatasetStats* stats = nullptr,
                               bool allow_empty_examples = false);

// Merges per-corpus record sets ordered by (corpus_id, record_id).
RecordSet merge_record_sets(std::vector<RecordSet> sets);

// Entity-specific regime: drops the knowledge context and its label
// prefix, keeping only text labels.
std::vector<TrainingRecord> strip_contexts(std::vector<TrainingRecord> records);

std::vector<TrainingRecord> filter_by_type(const std::vector<TrainingRecord>& records,
                                           const std::string& entity_type);

enum class ExperimentKind {
    ContextCompare,
    MultitaskVsIndividual,
    LearningCurve,
    KnowledgeVsEntitySpecific,
    Transfer,
    BalancedVsFull,
};

ExperimentKind experiment_kind_from_name(const std::string& name);
std::string experiment_kind_name(ExperimentKind kind);

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::ContextCompare;
    // corpus_id -> directory
    std::vector<std::pair<std::string, std::filesystem::path>> corpora;
    std::filesystem::path definitions_path;
    std::vector<ContextKind> context_kinds = {ContextKind::Question};
    std::vector<double> fractions = {0.05, 0.25, 1.0};
    std::vector<uint64_t> seeds = {1, 2, 3};
    std::string target_corpus;  // transfer
    std::vector<std::string> entity_types;  // transfer / knowledge-vs-entity-specific
    CorpusLoadOptions load_options;
    ModelConfig model_config;
    TrainConfig train_config;
    bool allow_empty_examples = false;
    bool parallel = false;
    int workers = 2;

    void validate() const;
};

struct ExperimentResult {
    std::string table_tsv;
    std::string selection_tsv;  // context-compare only; empty otherwise
};

ExperimentResult run_experiment(const ExperimentSpec& spec);

// Subcommand entry point used by the binary; returns a process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace kgner

#endif  // KGNER_CLI_HPP
