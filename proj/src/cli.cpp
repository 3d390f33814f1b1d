#include "kgner/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace kgner {

void RunManifest::add_input(const std::filesystem::path& path, const std::string& role) {
    inputs.push_back({path.string(), role, fnv1a64_file(path)});
}

std::string RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["version"] = kToolkitVersion;
    j["command"] = command;
    j["config"] = nlohmann::ordered_json::parse(config_json.empty() ? "{}" : config_json);
    nlohmann::ordered_json in = nlohmann::ordered_json::array();
    for (const ManifestInput& input : inputs) {
        char digest[24];
        std::snprintf(digest, sizeof(digest), "%016llx",
                      static_cast<unsigned long long>(input.digest));
        in.push_back({{"path", input.path}, {"role", input.role}, {"fnv1a64", digest}});
    }
    j["inputs"] = std::move(in);
    j["seeds"] = seeds;
    j["outputs"] = outputs;
    return j.dump(2) + "\n";
}

void RunManifest::write(const std::filesystem::path& path) const {
    write_file_atomic(path, to_json());
}

CorpusBundle load_corpus_dir(const std::string& corpus_id, const std::filesystem::path& dir,
                             const CorpusLoadOptions& options,
                             std::vector<std::string>* warnings) {
    CorpusBundle bundle;
    bundle.corpus_id = corpus_id;

    auto parse_split = [&](const std::string& split) -> std::vector<TaggedSentence> {
        if (options.format == "conll") {
            std::filesystem::path path = dir / (split + ".conll");
            if (!std::filesystem::exists(path)) return {};
            std::ifstream in(path);
            CorpusParseResult parsed = parse_conll(in, corpus_id);
            if (warnings) {
                warnings->insert(warnings->end(), parsed.warnings.begin(), parsed.warnings.end());
            }
            return std::move(parsed.sentences);
        }
        if (options.format == "standoff") {
            std::filesystem::path text_path = dir / (split + ".txt");
            std::filesystem::path ann_path = dir / (split + ".ann");
            if (!std::filesystem::exists(text_path)) return {};
            std::ifstream text(text_path);
            std::ifstream ann(ann_path);
            if (!ann) throw ParseError("missing annotation file: " + ann_path.string());
            return parse_standoff(text, ann, corpus_id);
        }
        throw ConfigError("unknown corpus format: " + options.format);
    };

    bundle.splits.train = parse_split("train");
    bundle.splits.dev = parse_split("dev");
    bundle.splits.test = parse_split("test");
    if (bundle.splits.train.empty()) {
        throw ParseError("corpus `" + corpus_id + "` has no train split under " + dir.string());
    }
    if (bundle.splits.dev.empty()) {
        SplitSpec spec;
        spec.dev_fraction = options.dev_fraction;
        spec.seed = options.seed;
        auto [train, dev] = split_holdout(bundle.splits.train, spec);
        bundle.splits.train = std::move(train);
        bundle.splits.dev = std::move(dev);
    }

    std::set<std::string> names;
    for (const auto* split : {&bundle.splits.train, &bundle.splits.dev, &bundle.splits.test}) {
        for (const std::string& name : collect_type_names(*split)) names.insert(name);
    }
    bundle.type_names.assign(names.begin(), names.end());
    if (bundle.type_names.empty()) {
        throw ParseError("corpus `" + corpus_id + "` declares no entity types");
    }
    return bundle;
}

std::map<std::string, KnowledgeContext> make_contexts(const CorpusBundle& corpus,
                                                      const DefinitionRegistry& definitions,
                                                      ContextKind kind,
                                                      bool allow_empty_examples) {
    std::map<std::string, KnowledgeContext> contexts;
    for (const std::string& name : corpus.type_names) {
        EntityType type{name, corpus.corpus_id};
        ExampleList examples = mine_examples(corpus.splits.train, type);
        contexts[name] = render_context(kind, type, definitions, examples, allow_empty_examples);
    }
    return contexts;
}

RecordSet build_corpus_records(const CorpusBundle& corpus, const DefinitionRegistry& definitions,
                               ContextKind kind, DatasetStats* stats,
                               bool allow_empty_examples) {
    return build_records(corpus.splits,
                         make_contexts(corpus, definitions, kind, allow_empty_examples),
                         corpus.corpus_id, stats);
}

namespace {

void sort_records(std::vector<TrainingRecord>& records) {
    std::sort(records.begin(), records.end(), [](const TrainingRecord& a, const TrainingRecord& b) {
        return std::tie(a.corpus_id, a.record_id) < std::tie(b.corpus_id, b.record_id);
    });
}

}  // namespace

RecordSet merge_record_sets(std::vector<RecordSet> sets) {
    RecordSet merged;
    for (RecordSet& set : sets) {
        merged.train.insert(merged.train.end(), std::make_move_iterator(set.train.begin()),
                            std::make_move_iterator(set.train.end()));
        merged.dev.insert(merged.dev.end(), std::make_move_iterator(set.dev.begin()),
                          std::make_move_iterator(set.dev.end()));
        merged.test.insert(merged.test.end(), std::make_move_iterator(set.test.begin()),
                           std::make_move_iterator(set.test.end()));
    }
    sort_records(merged.train);
    sort_records(merged.dev);
    sort_records(merged.test);
    return merged;
}

std::vector<TrainingRecord> strip_contexts(std::vector<TrainingRecord> records) {
    for (TrainingRecord& record : records) {
        const size_t context_len = record.context.tokens.size();
        record.labels.erase(record.labels.begin(),
                            record.labels.begin() + static_cast<long>(context_len));
        record.context.tokens.clear();
    }
    return records;
}

std::vector<TrainingRecord> filter_by_type(const std::vector<TrainingRecord>& records,
                                           const std::string& entity_type) {
    std::vector<TrainingRecord> out;
    for (const TrainingRecord& record : records) {
        if (record.context.entity_type == entity_type) out.push_back(record);
    }
    return out;
}

ExperimentKind experiment_kind_from_name(const std::string& name) {
    if (name == "context-compare") return ExperimentKind::ContextCompare;
    if (name == "multitask-vs-individual") return ExperimentKind::MultitaskVsIndividual;
    if (name == "learning-curve") return ExperimentKind::LearningCurve;
    if (name == "knowledge-vs-entity-specific") return ExperimentKind::KnowledgeVsEntitySpecific;
    if (name == "transfer") return ExperimentKind::Transfer;
    if (name == "balanced-vs-full") return ExperimentKind::BalancedVsFull;
    throw ConfigError("unknown experiment kind: " + name);
}

std::string experiment_kind_name(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::ContextCompare: return "context-compare";
        case ExperimentKind::MultitaskVsIndividual: return "multitask-vs-individual";
        case ExperimentKind::LearningCurve: return "learning-curve";
        case ExperimentKind::KnowledgeVsEntitySpecific: return "knowledge-vs-entity-specific";
        case ExperimentKind::Transfer: return "transfer";
        case ExperimentKind::BalancedVsFull: return "balanced-vs-full";
    }
    return "?";
}

void ExperimentSpec::validate() const {
    if (corpora.empty()) throw ConfigError("experiment needs at least one corpus");
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (context_kinds.empty()) throw ConfigError("experiment needs a context kind");
    if (kind == ExperimentKind::LearningCurve) {
        double prev = 0.0;
        for (double f : fractions) {
            if (f <= 0.0 || f > 1.0 || f <= prev) {
                throw ConfigError("learning-curve fractions must be ascending within (0,1]");
            }
            prev = f;
        }
        if (fractions.empty()) throw ConfigError("learning-curve needs fractions");
    }
    if (kind == ExperimentKind::Transfer) {
        if (target_corpus.empty()) throw ConfigError("transfer needs --target");
        bool found = false;
        for (const auto& [id, dir] : corpora) found = found || id == target_corpus;
        if (!found) throw ConfigError("transfer target `" + target_corpus + "` not among corpora");
        if (corpora.size() < 2) {
            throw ConfigError("transfer needs a non-empty source set besides the target");
        }
        if (entity_types.empty()) throw ConfigError("transfer needs --entity");
    }
    model_config.validate();
    train_config.validate();
}

namespace {

struct Prf {
    double p = 0.0, r = 0.0, f = 0.0;
};

Prf scope_prf(const EvalReport& report, const std::string& scope) {
    const EvalReportRow* row = report.find(scope);
    if (!row) return {};
    return {row->metrics.precision, row->metrics.recall, row->metrics.f1};
}

Prf mean_prf(const std::vector<Prf>& values) {
    Prf out;
    for (const Prf& v : values) {
        out.p += v.p;
        out.r += v.r;
        out.f += v.f;
    }
    const double n = values.empty() ? 1.0 : static_cast<double>(values.size());
    out.p /= n;
    out.r /= n;
    out.f /= n;
    return out;
}

std::string prf_cells(const Prf& v) {
    return format_double(v.p) + "\t" + format_double(v.r) + "\t" + format_double(v.f);
}

void run_jobs(std::vector<std::function<void()>>& jobs, bool parallel, int workers) {
    if (!parallel || workers < 2 || jobs.size() < 2) {
        for (auto& job : jobs) job();
        return;
    }
    size_t next = 0;
    while (next < jobs.size()) {
        std::vector<std::future<void>> batch;
        for (int w = 0; w < workers && next < jobs.size(); ++w, ++next) {
            batch.push_back(std::async(std::launch::async, jobs[next]));
        }
        for (auto& f : batch) f.get();
    }
}

struct LoadedExperiment {
    std::vector<CorpusBundle> corpora;
    DefinitionRegistry definitions;
};

LoadedExperiment load_experiment_inputs(const ExperimentSpec& spec) {
    LoadedExperiment loaded;
    {
        std::ifstream in(spec.definitions_path);
        if (!in) {
            throw ParseError("cannot open definitions file: " + spec.definitions_path.string());
        }
        loaded.definitions = DefinitionRegistry::load(in);
    }
    for (const auto& [id, dir] : spec.corpora) {
        loaded.corpora.push_back(load_corpus_dir(id, dir, spec.load_options));
    }
    return loaded;
}

RecordSet build_joint_records(const LoadedExperiment& loaded, const ExperimentSpec& spec,
                              ContextKind kind) {
    std::vector<RecordSet> sets;
    for (const CorpusBundle& corpus : loaded.corpora) {
        sets.push_back(build_corpus_records(corpus, loaded.definitions, kind, nullptr,
                                            spec.allow_empty_examples));
    }
    return merge_record_sets(std::move(sets));
}

// ---- context-compare (per-kind joint training, dev-based selection) ----

ExperimentResult run_context_compare(const ExperimentSpec& spec,
                                     const LoadedExperiment& loaded) {
    struct Cell {
        Prf dev, test;
        long n_gold = 0;
    };
    // corpus -> kind -> mean cell
    std::map<std::string, std::map<std::string, Cell>> table;

    struct KindOutcome {
        std::map<std::string, std::vector<Prf>> dev, test;
        std::map<std::string, long> n_gold;
    };
    std::vector<KindOutcome> outcomes(spec.context_kinds.size());
    std::vector<std::function<void()>> jobs;
    for (size_t ki = 0; ki < spec.context_kinds.size(); ++ki) {
        jobs.push_back([&, ki]() {
            ContextKind kind = spec.context_kinds[ki];
            RecordSet records = build_joint_records(loaded, spec, kind);
            for (uint64_t seed : spec.seeds) {
                TrainResult run =
                    train(records.train, records.dev, spec.model_config, spec.train_config, seed);
                EvalReport dev_report = evaluate_records(records.dev, run.best_params,
                                                         spec.model_config, run.vocab);
                EvalReport test_report = evaluate_records(records.test, run.best_params,
                                                          spec.model_config, run.vocab);
                for (const CorpusBundle& corpus : loaded.corpora) {
                    const std::string scope = "corpus:" + corpus.corpus_id;
                    outcomes[ki].dev[corpus.corpus_id].push_back(scope_prf(dev_report, scope));
                    outcomes[ki].test[corpus.corpus_id].push_back(scope_prf(test_report, scope));
                    const EvalReportRow* row = test_report.find(scope);
                    outcomes[ki].n_gold[corpus.corpus_id] = row ? row->n_gold : 0;
                }
            }
        });
    }
    run_jobs(jobs, spec.parallel, spec.workers);

    for (size_t ki = 0; ki < spec.context_kinds.size(); ++ki) {
        const std::string kind_name = context_kind_name(spec.context_kinds[ki]);
        for (const CorpusBundle& corpus : loaded.corpora) {
            Cell cell;
            cell.dev = mean_prf(outcomes[ki].dev[corpus.corpus_id]);
            cell.test = mean_prf(outcomes[ki].test[corpus.corpus_id]);
            cell.n_gold = outcomes[ki].n_gold[corpus.corpus_id];
            table[corpus.corpus_id][kind_name] = cell;
        }
    }

    ExperimentResult result;
    result.table_tsv =
        "corpus\tkind\tdev_f1\ttest_precision\ttest_recall\ttest_f1\tselected\n";
    result.selection_tsv =
        "corpus\tselected_kind\trunner_up_kind\tselected_test_f1\trunner_up_test_f1\tn_gold\tsignificant\n";
    for (const auto& [corpus_id, kinds] : table) {
        // Selection by dev F1; ties keep the first kind in listed order.
        std::string selected;
        double best_dev = -1.0;
        for (ContextKind kind : spec.context_kinds) {
            const Cell& cell = kinds.at(context_kind_name(kind));
            if (cell.dev.f > best_dev) {
                best_dev = cell.dev.f;
                selected = context_kind_name(kind);
            }
        }
        std::string runner_up;
        double best_other = -1.0;
        for (ContextKind kind : spec.context_kinds) {
            const std::string name = context_kind_name(kind);
            if (name == selected) continue;
            if (kinds.at(name).test.f > best_other) {
                best_other = kinds.at(name).test.f;
                runner_up = name;
            }
        }
        for (ContextKind kind : spec.context_kinds) {
            const std::string name = context_kind_name(kind);
            const Cell& cell = kinds.at(name);
            result.table_tsv += corpus_id + "\t" + name + "\t" + format_double(cell.dev.f) +
                                "\t" + prf_cells(cell.test) + "\t" +
                                (name == selected ? "1" : "0") + "\n";
        }
        if (!runner_up.empty() && kinds.at(selected).n_gold > 0) {
            const Cell& win = kinds.at(selected);
            const Cell& other = kinds.at(runner_up);
            SignificanceResult sig = significance(win.test.f, other.test.f, win.n_gold);
            result.selection_tsv += corpus_id + "\t" + selected + "\t" + runner_up + "\t" +
                                    format_double(win.test.f) + "\t" +
                                    format_double(other.test.f) + "\t" +
                                    std::to_string(win.n_gold) + "\t" +
                                    (sig.significant ? "yes" : "no") + "\n";
        } else {
            result.selection_tsv += corpus_id + "\t" + selected + "\t-\t" +
                                    format_double(kinds.at(selected).test.f) + "\t-\t" +
                                    std::to_string(kinds.at(selected).n_gold) + "\t-\n";
        }
    }
    return result;
}

// ---- multitask-vs-individual ----

ExperimentResult run_multitask_vs_individual(const ExperimentSpec& spec,
                                             const LoadedExperiment& loaded) {
    ContextKind kind = spec.context_kinds.front();
    RecordSet joint = build_joint_records(loaded, spec, kind);

    std::map<std::string, std::vector<Prf>> joint_prf, individual_prf;
    std::vector<std::function<void()>> jobs;
    std::vector<std::map<std::string, Prf>> joint_slots(spec.seeds.size());
    std::vector<std::map<std::string, Prf>> individual_slots(spec.seeds.size());

    for (size_t si = 0; si < spec.seeds.size(); ++si) {
        jobs.push_back([&, si]() {
            const uint64_t seed = spec.seeds[si];
            TrainResult run =
                train(joint.train, joint.dev, spec.model_config, spec.train_config, seed);
            EvalReport report =
                evaluate_records(joint.test, run.best_params, spec.model_config, run.vocab);
            for (const CorpusBundle& corpus : loaded.corpora) {
                joint_slots[si][corpus.corpus_id] =
                    scope_prf(report, "corpus:" + corpus.corpus_id);
            }
        });
        for (const CorpusBundle& corpus : loaded.corpora) {
            jobs.push_back([&, si, &corpus_ref = corpus]() {
                const uint64_t seed = spec.seeds[si];
                RecordSet records = build_corpus_records(corpus_ref, loaded.definitions, kind,
                                                         nullptr, spec.allow_empty_examples);
                TrainResult run =
                    train(records.train, records.dev, spec.model_config, spec.train_config, seed);
                EvalReport report =
                    evaluate_records(records.test, run.best_params, spec.model_config, run.vocab);
                individual_slots[si][corpus_ref.corpus_id] =
                    scope_prf(report, "corpus:" + corpus_ref.corpus_id);
            });
        }
    }
    run_jobs(jobs, spec.parallel, spec.workers);
    for (size_t si = 0; si < spec.seeds.size(); ++si) {
        for (const CorpusBundle& corpus : loaded.corpora) {
            joint_prf[corpus.corpus_id].push_back(joint_slots[si][corpus.corpus_id]);
            individual_prf[corpus.corpus_id].push_back(individual_slots[si][corpus.corpus_id]);
        }
    }

    ExperimentResult result;
    result.table_tsv = "corpus\tprecision\tdelta_p\trecall\tdelta_r\tf1\tdelta_f\n";
    for (const CorpusBundle& corpus : loaded.corpora) {
        Prf ind = mean_prf(individual_prf[corpus.corpus_id]);
        Prf joint_mean = mean_prf(joint_prf[corpus.corpus_id]);
        result.table_tsv += corpus.corpus_id + "\t" + format_double(ind.p) + "\t" +
                            format_double(ind.p - joint_mean.p) + "\t" + format_double(ind.r) +
                            "\t" + format_double(ind.r - joint_mean.r) + "\t" +
                            format_double(ind.f) + "\t" + format_double(ind.f - joint_mean.f) +
                            "\n";
    }
    return result;
}

// ---- learning-curve ----

ExperimentResult run_learning_curve(const ExperimentSpec& spec, const LoadedExperiment& loaded) {
    ExperimentResult result;
    result.table_tsv = "kind\tfraction\tprecision\trecall\tf1\n";
    const uint64_t data_seed = spec.seeds.front();

    for (ContextKind kind : spec.context_kinds) {
        RecordSet records = build_joint_records(loaded, spec, kind);
        std::vector<TrainingRecord> balanced = balance(records.train, data_seed);
        std::vector<std::function<void()>> jobs;
        std::vector<std::vector<Prf>> slots(spec.fractions.size(),
                                            std::vector<Prf>(spec.seeds.size()));
        for (size_t fi = 0; fi < spec.fractions.size(); ++fi) {
            for (size_t si = 0; si < spec.seeds.size(); ++si) {
                jobs.push_back([&, fi, si]() {
                    std::vector<TrainingRecord> sampled =
                        subsample_for_curve(balanced, spec.fractions[fi], data_seed);
                    TrainResult run = train(sampled, records.dev, spec.model_config,
                                            spec.train_config, spec.seeds[si]);
                    EvalReport report = evaluate_records(records.dev, run.best_params,
                                                         spec.model_config, run.vocab);
                    slots[fi][si] = scope_prf(report, "global");
                });
            }
        }
        run_jobs(jobs, spec.parallel, spec.workers);
        for (size_t fi = 0; fi < spec.fractions.size(); ++fi) {
            Prf mean_value = mean_prf(slots[fi]);
            result.table_tsv += context_kind_name(kind) + "\t" +
                                format_double(spec.fractions[fi], 4) + "\t" +
                                prf_cells(mean_value) + "\n";
        }
    }
    return result;
}

// ---- knowledge-vs-entity-specific ----

ExperimentResult run_knowledge_vs_entity_specific(const ExperimentSpec& spec,
                                                  const LoadedExperiment& loaded) {
    ContextKind kind = spec.context_kinds.front();
    RecordSet joint = build_joint_records(loaded, spec, kind);

    std::vector<std::string> types = spec.entity_types;
    if (types.empty()) {
        std::set<std::string> names;
        for (const CorpusBundle& corpus : loaded.corpora) {
            names.insert(corpus.type_names.begin(), corpus.type_names.end());
        }
        types.assign(names.begin(), names.end());
    }

    std::vector<std::map<std::string, Prf>> k_slots(spec.seeds.size());
    std::vector<std::map<std::string, Prf>> nok_slots(spec.seeds.size());
    std::vector<std::function<void()>> jobs;
    for (size_t si = 0; si < spec.seeds.size(); ++si) {
        jobs.push_back([&, si]() {
            TrainResult run = train(joint.train, joint.dev, spec.model_config, spec.train_config,
                                    spec.seeds[si]);
            EvalReport report =
                evaluate_records(joint.test, run.best_params, spec.model_config, run.vocab);
            for (const std::string& type : types) {
                k_slots[si][type] = scope_prf(report, "type:" + type);
            }
        });
        for (const std::string& type : types) {
            jobs.push_back([&, si, type]() {
                std::vector<TrainingRecord> train_records =
                    strip_contexts(filter_by_type(joint.train, type));
                std::vector<TrainingRecord> dev_records =
                    strip_contexts(filter_by_type(joint.dev, type));
                std::vector<TrainingRecord> test_records =
                    strip_contexts(filter_by_type(joint.test, type));
                TrainResult run = train(train_records, dev_records, spec.model_config,
                                        spec.train_config, spec.seeds[si]);
                EvalReport report = evaluate_records(test_records, run.best_params,
                                                     spec.model_config, run.vocab);
                nok_slots[si][type] = scope_prf(report, "type:" + type);
            });
        }
    }
    run_jobs(jobs, spec.parallel, spec.workers);

    ExperimentResult result;
    result.table_tsv =
        "entity\tnok_precision\tnok_recall\tnok_f1\tk_precision\tk_recall\tk_f1\n";
    for (const std::string& type : types) {
        std::vector<Prf> k_values, nok_values;
        for (size_t si = 0; si < spec.seeds.size(); ++si) {
            k_values.push_back(k_slots[si][type]);
            nok_values.push_back(nok_slots[si][type]);
        }
        result.table_tsv +=
            type + "\t" + prf_cells(mean_prf(nok_values)) + "\t" + prf_cells(mean_prf(k_values)) + "\n";
    }
    return result;
}

// ---- transfer ----

ExperimentResult run_transfer(const ExperimentSpec& spec, const LoadedExperiment& loaded) {
    ContextKind kind = spec.context_kinds.front();
    ExperimentResult result;
    result.table_tsv = "entity\ttarget_corpus\tsrc_f1\ttgt_f1\n";

    for (const std::string& type : spec.entity_types) {
        std::vector<RecordSet> source_sets;
        RecordSet target_set;
        bool target_has_type = false;
        for (const CorpusBundle& corpus : loaded.corpora) {
            const bool declares =
                std::find(corpus.type_names.begin(), corpus.type_names.end(), type) !=
                corpus.type_names.end();
            if (!declares) continue;
            RecordSet records = build_corpus_records(corpus, loaded.definitions, kind, nullptr,
                                                     spec.allow_empty_examples);
            RecordSet typed;
            typed.train = filter_by_type(records.train, type);
            typed.dev = filter_by_type(records.dev, type);
            typed.test = filter_by_type(records.test, type);
            if (corpus.corpus_id == spec.target_corpus) {
                target_set = std::move(typed);
                target_has_type = true;
            } else {
                source_sets.push_back(std::move(typed));
            }
        }
        if (!target_has_type) {
            throw ConfigError("transfer: target corpus does not declare entity `" + type + "`");
        }
        if (source_sets.empty()) {
            throw ConfigError("transfer: no source corpus declares entity `" + type + "`");
        }
        RecordSet source = merge_record_sets(std::move(source_sets));

        std::vector<double> src_f1, tgt_f1;
        for (uint64_t seed : spec.seeds) {
            TrainResult run =
                train(source.train, source.dev, spec.model_config, spec.train_config, seed);
            src_f1.push_back(
                evaluate_records(source.test, run.best_params, spec.model_config, run.vocab)
                    .global_f1());
            tgt_f1.push_back(
                evaluate_records(target_set.test, run.best_params, spec.model_config, run.vocab)
                    .global_f1());
        }
        result.table_tsv += type + "\t" + spec.target_corpus + "\t" + format_double(mean(src_f1)) +
                            "\t" + format_double(mean(tgt_f1)) + "\n";
    }
    return result;
}

// ---- balanced-vs-full ----

ExperimentResult run_balanced_vs_full(const ExperimentSpec& spec,
                                      const LoadedExperiment& loaded) {
    ContextKind kind = spec.context_kinds.front();
    RecordSet records = build_joint_records(loaded, spec, kind);
    std::vector<TrainingRecord> balanced = balance(records.train, spec.seeds.front());

    std::map<std::string, std::vector<Prf>> balanced_prf, full_prf;
    for (uint64_t seed : spec.seeds) {
        TrainResult balanced_run =
            train(balanced, records.dev, spec.model_config, spec.train_config, seed);
        EvalReport balanced_report = evaluate_records(records.test, balanced_run.best_params,
                                                      spec.model_config, balanced_run.vocab);
        TrainResult full_run =
            train(records.train, records.dev, spec.model_config, spec.train_config, seed);
        EvalReport full_report = evaluate_records(records.test, full_run.best_params,
                                                  spec.model_config, full_run.vocab);
        for (const CorpusBundle& corpus : loaded.corpora) {
            const std::string scope = "corpus:" + corpus.corpus_id;
            balanced_prf[corpus.corpus_id].push_back(scope_prf(balanced_report, scope));
            full_prf[corpus.corpus_id].push_back(scope_prf(full_report, scope));
        }
    }

    ExperimentResult result;
    result.table_tsv = "corpus\tprecision\tdelta_p\trecall\tdelta_r\tf1\tdelta_f\n";
    for (const CorpusBundle& corpus : loaded.corpora) {
        Prf bal = mean_prf(balanced_prf[corpus.corpus_id]);
        Prf full = mean_prf(full_prf[corpus.corpus_id]);
        result.table_tsv += corpus.corpus_id + "\t" + format_double(bal.p) + "\t" +
                            format_double(bal.p - full.p) + "\t" + format_double(bal.r) + "\t" +
                            format_double(bal.r - full.r) + "\t" + format_double(bal.f) + "\t" +
                            format_double(bal.f - full.f) + "\n";
    }
    return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    LoadedExperiment loaded = load_experiment_inputs(spec);
    switch (spec.kind) {
        case ExperimentKind::ContextCompare: return run_context_compare(spec, loaded);
        case ExperimentKind::MultitaskVsIndividual:
            return run_multitask_vs_individual(spec, loaded);
        case ExperimentKind::LearningCurve: return run_learning_curve(spec, loaded);
        case ExperimentKind::KnowledgeVsEntitySpecific:
            return run_knowledge_vs_entity_specific(spec, loaded);
        case ExperimentKind::Transfer: return run_transfer(spec, loaded);
        case ExperimentKind::BalancedVsFull: return run_balanced_vs_full(spec, loaded);
    }
    throw ConfigError("unhandled experiment kind");
}

// ---------------------------------------------------------------------
// Command-line surface
// ---------------------------------------------------------------------

namespace {

std::filesystem::path resolve_out(const std::string& out) {
    std::filesystem::path path(out);
    const char* root = std::getenv("KGNER_OUT_ROOT");
    if (root && *root && path.is_relative()) return std::filesystem::path(root) / path;
    return path;
}

int env_workers(int fallback) {
    const char* value = std::getenv("KGNER_WORKERS");
    if (!value || !*value) return fallback;
    try {
        return std::max(1, std::stoi(value));
    } catch (const std::exception&) {
        return fallback;
    }
}

std::vector<std::pair<std::string, std::filesystem::path>> parse_corpus_specs(
    const std::vector<std::string>& specs) {
    std::vector<std::pair<std::string, std::filesystem::path>> out;
    for (const std::string& spec : specs) {
        size_t eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 >= spec.size()) {
            throw ConfigError("corpus spec must be `id=dir`, got `" + spec + "`");
        }
        out.push_back({spec.substr(0, eq), spec.substr(eq + 1)});
    }
    return out;
}

std::vector<ContextKind> parse_kinds(const std::string& csv) {
    std::vector<ContextKind> kinds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) kinds.push_back(context_kind_from_name(item));
    }
    if (kinds.empty()) throw ConfigError("no context kinds given");
    return kinds;
}

void add_model_options(CLI::App* cmd, ModelConfig& config) {
    cmd->add_option("--d-model", config.d_model, "embedding width");
    cmd->add_option("--n-heads", config.n_heads, "attention heads");
    cmd->add_option("--n-layers", config.n_layers, "encoder layers");
    cmd->add_option("--ffn-dim", config.ffn_dim, "feed-forward width");
    cmd->add_option("--max-seq-len", config.max_seq_len, "packed length budget (128 or 256)");
    cmd->add_option("--dropout", config.dropout, "dropout rate");
    cmd->add_option("--classifier-hidden", config.classifier_hidden, "classifier hidden width");
    cmd->add_option("--conv-channels", config.conv.out_channels, "conv output channels");
    cmd->add_option("--conv-kernel-h", config.conv.kernel_h, "conv kernel height (<=5)");
    cmd->add_option("--conv-kernel-w", config.conv.kernel_w, "conv kernel width (<=5)");
    cmd->add_option("--conv-stride-h", config.conv.stride_h, "conv stride along tokens");
    cmd->add_option("--conv-stride-w", config.conv.stride_w, "conv stride along embedding");
}

void add_train_options(CLI::App* cmd, TrainConfig& config) {
    cmd->add_option("--lr", config.learning_rate,
                    "learning rate (1e-3 default; 5e-5 suits large pre-trained backbones)");
    cmd->add_option("--batch-size", config.batch_size, "mini-batch size");
    cmd->add_option("--patience", config.patience, "early-stopping patience in epochs");
    cmd->add_option("--max-epochs", config.max_epochs, "epoch cap");
    cmd->add_option("--weight-decay", config.weight_decay, "decoupled weight decay");
    cmd->add_option("--warmup-steps", config.warmup_steps,
                    "linear warmup steps (enables linear decay)");
}

std::string model_config_snapshot(const ModelConfig& model, const TrainConfig* train_config) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(model.to_json());
    if (train_config) {
        j["learning_rate"] = train_config->learning_rate;
        j["batch_size"] = train_config->batch_size;
        j["patience"] = train_config->patience;
        j["max_epochs"] = train_config->max_epochs;
        j["weight_decay"] = train_config->weight_decay;
        j["warmup_steps"] = train_config->warmup_steps;
    }
    return j.dump();
}

// ---- synthesize ----

struct SynthesizeArgs {
    std::string out;
    std::string types = "alpha,beta";
    SyntheticConfig config;
    std::string corpus_id = "syn";
};

int cmd_synthesize(const SynthesizeArgs& args) {
    SyntheticConfig config = args.config;
    std::stringstream ss(args.types);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) config.type_names.push_back(item);
    }
    SyntheticCorpus corpus = generate_synthetic(config, args.corpus_id);

    std::filesystem::path out = resolve_out(args.out);
    write_file_atomic(out / "train.conll", sentences_to_conll(corpus.splits.train));
    write_file_atomic(out / "dev.conll", sentences_to_conll(corpus.splits.dev));
    write_file_atomic(out / "test.conll", sentences_to_conll(corpus.splits.test));
    write_file_atomic(out / "definitions.tsv", corpus.definitions.serialize());

    RunManifest manifest;
    manifest.command = "synthesize";
    nlohmann::ordered_json config_json;
    config_json["corpus_id"] = args.corpus_id;
    config_json["types"] = corpus.type_names;
    config_json["n_train"] = config.n_train;
    config_json["n_dev"] = config.n_dev;
    config_json["n_test"] = config.n_test;
    config_json["filler_vocab"] = config.filler_vocab;
    config_json["trigger_vocab"] = config.trigger_vocab;
    config_json["span_rate"] = config.span_rate;
    manifest.config_json = config_json.dump();
    manifest.seeds = {config.seed};
    for (const char* name : {"train.conll", "dev.conll", "test.conll", "definitions.tsv"}) {
        manifest.outputs.push_back((out / name).string());
    }
    manifest.write(out / "manifest.json");
    return kExitOk;
}

// ---- build-data ----

struct BuildDataArgs {
    std::vector<std::string> corpus_specs;
    std::string definitions;
    std::string kind = "question";
    std::string out;
    std::string format = "conll";
    bool balance_train = false;
    bool allow_empty_examples = false;
    double dev_fraction = 0.3;
    uint64_t seed = 0;
};

int cmd_build_data(const BuildDataArgs& args) {
    DefinitionRegistry definitions;
    {
        std::ifstream in(args.definitions);
        if (!in) throw ParseError("cannot open definitions file: " + args.definitions);
        definitions = DefinitionRegistry::load(in);
    }
    ContextKind kind = context_kind_from_name(args.kind);
    CorpusLoadOptions load_options;
    load_options.format = args.format;
    load_options.dev_fraction = args.dev_fraction;
    load_options.seed = args.seed;

    RunManifest manifest;
    manifest.command = "build-data";
    manifest.seeds = {args.seed};
    manifest.add_input(args.definitions, "definitions");

    DatasetStats stats;
    std::vector<RecordSet> sets;
    std::vector<std::string> warnings;
    std::string examples_tsv = "corpus\tentity\trank\tsurface\tcount\n";
    for (const auto& [id, dir] : parse_corpus_specs(args.corpus_specs)) {
        CorpusBundle corpus = load_corpus_dir(id, dir, load_options, &warnings);
        for (const std::string split : {"train", "dev", "test"}) {
            std::filesystem::path path =
                dir / (split + (args.format == "conll" ? std::string(".conll")
                                                       : std::string(".txt")));
            if (std::filesystem::exists(path)) manifest.add_input(path, split);
        }
        for (const std::string& type : corpus.type_names) {
            ExampleList examples = mine_examples(corpus.splits.train, {type, id});
            for (size_t rank = 0; rank < examples.examples.size(); ++rank) {
                examples_tsv += id + "\t" + type + "\t" + std::to_string(rank + 1) + "\t" +
                                examples.examples[rank].first + "\t" +
                                std::to_string(examples.examples[rank].second) + "\n";
            }
        }
        sets.push_back(build_corpus_records(corpus, definitions, kind, &stats,
                                            args.allow_empty_examples));
    }
    for (const std::string& warning : warnings) std::cerr << "warning: " << warning << "\n";
    std::cerr << warnings.size() << " parser warning(s)\n";

    RecordSet merged = merge_record_sets(std::move(sets));
    if (args.balance_train) merged.train = balance(merged.train, args.seed);

    std::filesystem::path out = resolve_out(args.out);
    write_records_file(merged.train, out / "records.train.jsonl");
    write_records_file(merged.dev, out / "records.dev.jsonl");
    write_records_file(merged.test, out / "records.test.jsonl");
    write_file_atomic(out / "stats.tsv", stats.to_tsv());
    write_file_atomic(out / "examples.tsv", examples_tsv);

    nlohmann::ordered_json config_json;
    config_json["kind"] = args.kind;
    config_json["format"] = args.format;
    config_json["balance"] = args.balance_train;
    config_json["dev_fraction"] = args.dev_fraction;
    config_json["allow_empty_examples"] = args.allow_empty_examples;
    manifest.config_json = config_json.dump();
    for (const char* name :
         {"records.train.jsonl", "records.dev.jsonl", "records.test.jsonl", "stats.tsv",
          "examples.tsv"}) {
        manifest.outputs.push_back((out / name).string());
    }
    manifest.write(out / "manifest.json");
    return kExitOk;
}

// ---- train ----

struct TrainArgs {
    std::string data;
    std::string out;
    ModelConfig model_config;
    TrainConfig train_config;
    uint64_t seed = 1;
};

int cmd_train(const TrainArgs& args) {
    std::filesystem::path data(args.data);
    std::filesystem::path train_path = data / "records.train.jsonl";
    std::filesystem::path dev_path = data / "records.dev.jsonl";
    std::vector<TrainingRecord> train_records = read_records_file(train_path);
    std::vector<TrainingRecord> dev_records = read_records_file(dev_path);

    TrainResult result =
        train(train_records, dev_records, args.model_config, args.train_config, args.seed);

    std::filesystem::path out = resolve_out(args.out);
    {
        std::ostringstream checkpoint;
        result.best_params.save(checkpoint);
        write_file_atomic(out / "checkpoint.txt", checkpoint.str());
    }
    {
        std::ostringstream vocab;
        result.vocab.save(vocab);
        write_file_atomic(out / "vocab.txt", vocab.str());
    }
    write_file_atomic(out / "model_config.json", args.model_config.to_json());
    write_file_atomic(out / "trainlog.tsv", result.log.to_tsv());
    for (const EpochLog& e : result.log.epochs) {
        std::cerr << "epoch " << e.epoch << " loss " << format_double(e.train_loss) << " dev_f1 "
                  << format_double(e.dev_f1) << " (" << format_double(e.seconds, 2) << "s)\n";
    }

    RunManifest manifest;
    manifest.command = "train";
    manifest.add_input(train_path, "train");
    manifest.add_input(dev_path, "dev");
    manifest.seeds = {args.seed};
    manifest.config_json = model_config_snapshot(args.model_config, &args.train_config);
    for (const char* name : {"checkpoint.txt", "vocab.txt", "model_config.json", "trainlog.tsv"}) {
        manifest.outputs.push_back((out / name).string());
    }
    manifest.write(out / "manifest.json");
    return kExitOk;
}

// ---- eval ----

struct EvalArgs {
    std::string records;
    std::string model;
    std::string out;
    double z = kDefaultZ;
};

struct LoadedModel {
    ModelConfig config;
    Vocab vocab;
    ModelParams params;
};

LoadedModel load_model_dir(const std::filesystem::path& dir) {
    LoadedModel model;
    model.config = ModelConfig::from_json(read_file(dir / "model_config.json"));
    {
        std::ifstream in(dir / "vocab.txt");
        if (!in) throw ParseError("cannot open vocab: " + (dir / "vocab.txt").string());
        model.vocab = Vocab::load(in);
    }
    {
        std::ifstream in(dir / "checkpoint.txt");
        if (!in) throw ParseError("cannot open checkpoint: " + (dir / "checkpoint.txt").string());
        model.params = ModelParams::load(in, model.config, model.vocab.size());
    }
    return model;
}

int cmd_eval(const EvalArgs& args) {
    LoadedModel model = load_model_dir(args.model);
    std::vector<TrainingRecord> records = read_records_file(args.records);
    EvalReport report =
        evaluate_records(records, model.params, model.config, model.vocab, args.z);

    std::filesystem::path out = resolve_out(args.out);
    write_file_atomic(out / "report.tsv", report.to_tsv());
    write_file_atomic(out / "report.json", report.to_json());

    RunManifest manifest;
    manifest.command = "eval";
    manifest.add_input(args.records, "test");
    manifest.add_input(std::filesystem::path(args.model) / "checkpoint.txt", "model");
    nlohmann::ordered_json config_json;
    config_json["z"] = args.z;
    manifest.config_json = config_json.dump();
    manifest.outputs = {(out / "report.tsv").string(), (out / "report.json").string()};
    manifest.write(out / "manifest.json");
    return kExitOk;
}

// ---- probe ----

struct ProbeArgs {
    std::string model;
    std::string entity_type;
    std::string sentence;
    std::string out;
};

std::string matrix_tsv(const std::vector<std::string>& header, const std::vector<double>& flat,
                       int rows, int cols) {
    std::string out = join(header, "\t") + "\n";
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            if (j) out += "\t";
            out += format_double(flat[static_cast<size_t>(i) * cols + j]);
        }
        out += "\n";
    }
    return out;
}

int cmd_probe(const ProbeArgs& args) {
    LoadedModel model = load_model_dir(args.model);
    std::vector<std::string> text_tokens = split_whitespace(args.sentence);
    if (text_tokens.empty()) throw ConfigError("probe: empty sentence");

    EntityType type{to_lower(args.entity_type), "probe"};
    validate_entity_type_name(type.name);
    DefinitionRegistry empty_registry;
    ExampleList empty_examples;
    std::vector<std::string> question =
        render_context(ContextKind::Question, type, empty_registry, empty_examples, true).tokens;
    std::vector<std::string> name_tokens = split_whitespace(type.name);

    // The four standard probes: full question, entity-type-only,
    // "what"-only, and the question with the type removed.
    std::vector<std::pair<std::string, std::vector<std::string>>> probes;
    probes.push_back({"full", question});
    probes.push_back({"entity", name_tokens});
    probes.push_back({"what", {"what"}});
    std::vector<std::string> no_type;
    for (size_t i = 0; i < question.size();) {
        bool at_name = i + name_tokens.size() <= question.size();
        for (size_t j = 0; at_name && j < name_tokens.size(); ++j) {
            at_name = question[i + j] == name_tokens[j];
        }
        if (at_name) {
            i += name_tokens.size();
        } else {
            no_type.push_back(question[i]);
            ++i;
        }
    }
    probes.push_back({"no-type", no_type});

    std::vector<ProbeResult> results =
        probe_attention(model.params, model.config, model.vocab, probes, text_tokens);

    std::filesystem::path out = resolve_out(args.out);
    RunManifest manifest;
    manifest.command = "probe";
    manifest.add_input(std::filesystem::path(args.model) / "checkpoint.txt", "model");
    nlohmann::ordered_json config_json;
    config_json["entity_type"] = type.name;
    config_json["sentence"] = text_tokens;
    manifest.config_json = config_json.dump();

    for (const ProbeResult& result : results) {
        const int t = result.trace.seq_len;
        const int m = result.input.knowledge_len;
        const int n = result.input.text_len;
        std::vector<std::string> text_header(
            result.trace.tokens.begin() + result.input.text_begin,
            result.trace.tokens.begin() + result.input.text_begin + n);
        for (size_t layer = 0; layer < result.trace.weights.size(); ++layer) {
            for (size_t head = 0; head < result.trace.weights[layer].size(); ++head) {
                std::string base = result.probe_name + "_L" + std::to_string(layer) + "H" +
                                   std::to_string(head);
                write_file_atomic(out / ("trace_" + base + ".tsv"),
                                  matrix_tsv(result.trace.tokens,
                                             result.trace.weights[layer][head], t, t));
                manifest.outputs.push_back((out / ("trace_" + base + ".tsv")).string());
                if (m > 0) {
                    write_file_atomic(out / ("ktext_" + base + ".tsv"),
                                      matrix_tsv(text_header,
                                                 result.knowledge_to_text[layer][head], m, n));
                    manifest.outputs.push_back((out / ("ktext_" + base + ".tsv")).string());
                }
            }
        }
    }
    manifest.write(out / "manifest.json");
    return kExitOk;
}

// ---- experiment ----

struct ExperimentArgs {
    std::string kind;
    std::vector<std::string> corpus_specs;
    std::string definitions;
    std::string kinds_csv = "question";
    std::string fractions_csv = "0.05,0.25,1.0";
    std::vector<uint64_t> seeds = {1, 2, 3};
    std::string target;
    std::vector<std::string> entities;
    std::string out;
    std::string format = "conll";
    double dev_fraction = 0.3;
    bool allow_empty_examples = false;
    bool parallel = false;
    int workers = 2;
    ModelConfig model_config;
    TrainConfig train_config;
};

int cmd_experiment(const ExperimentArgs& args) {
    ExperimentSpec spec;
    spec.kind = experiment_kind_from_name(args.kind);
    spec.corpora = parse_corpus_specs(args.corpus_specs);
    spec.definitions_path = args.definitions;
    spec.context_kinds = parse_kinds(args.kinds_csv);
    spec.fractions.clear();
    {
        std::stringstream ss(args.fractions_csv);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) spec.fractions.push_back(std::stod(item));
        }
    }
    spec.seeds = args.seeds;
    spec.target_corpus = args.target;
    spec.entity_types = args.entities;
    spec.load_options.format = args.format;
    spec.load_options.dev_fraction = args.dev_fraction;
    spec.load_options.seed = args.seeds.empty() ? 0 : args.seeds.front();
    spec.model_config = args.model_config;
    spec.train_config = args.train_config;
    spec.allow_empty_examples = args.allow_empty_examples;
    spec.parallel = args.parallel;
    spec.workers = env_workers(args.workers);

    ExperimentResult result = run_experiment(spec);

    std::filesystem::path out = resolve_out(args.out);
    write_file_atomic(out / "table.tsv", result.table_tsv);
    RunManifest manifest;
    manifest.command = "experiment";
    manifest.add_input(args.definitions, "definitions");
    for (const auto& [id, dir] : spec.corpora) {
        for (const std::string split : {"train", "dev", "test"}) {
            std::filesystem::path path = dir / (split + std::string(".conll"));
            if (std::filesystem::exists(path)) manifest.add_input(path, split);
        }
    }
    manifest.seeds = spec.seeds;
    nlohmann::ordered_json config_json =
        nlohmann::ordered_json::parse(model_config_snapshot(spec.model_config, &spec.train_config));
    config_json["experiment"] = args.kind;
    config_json["kinds"] = args.kinds_csv;
    config_json["fractions"] = args.fractions_csv;
    config_json["target"] = args.target;
    config_json["entities"] = args.entities;
    manifest.config_json = config_json.dump();
    manifest.outputs.push_back((out / "table.tsv").string());
    if (!result.selection_tsv.empty()) {
        write_file_atomic(out / "selection.tsv", result.selection_tsv);
        manifest.outputs.push_back((out / "selection.tsv").string());
    }
    manifest.write(out / "manifest.json");
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"knowledge-guided multi-answer NER toolkit"};
    app.require_subcommand(1);

    SynthesizeArgs synthesize_args;
    CLI::App* synthesize = app.add_subcommand("synthesize", "generate a synthetic BIO corpus");
    synthesize->add_option("--out", synthesize_args.out, "output directory")->required();
    synthesize->add_option("--types", synthesize_args.types, "comma-separated entity type names");
    synthesize->add_option("--corpus-id", synthesize_args.corpus_id, "corpus identifier");
    synthesize->add_option("--n-train", synthesize_args.config.n_train, "train sentences");
    synthesize->add_option("--n-dev", synthesize_args.config.n_dev, "dev sentences");
    synthesize->add_option("--n-test", synthesize_args.config.n_test, "test sentences");
    synthesize->add_option("--filler-vocab", synthesize_args.config.filler_vocab, "filler tokens");
    synthesize->add_option("--trigger-vocab", synthesize_args.config.trigger_vocab,
                           "trigger tokens per type");
    synthesize->add_option("--span-rate", synthesize_args.config.span_rate,
                           "positive rate per (sentence, type)");
    synthesize->add_option("--min-len", synthesize_args.config.min_sentence_len,
                           "min filler tokens per sentence");
    synthesize->add_option("--max-len", synthesize_args.config.max_sentence_len,
                           "max filler tokens per sentence");
    synthesize->add_option("--seed", synthesize_args.config.seed, "generator seed");

    BuildDataArgs build_args;
    CLI::App* build = app.add_subcommand("build-data", "build training records from corpora");
    build->add_option("--corpus", build_args.corpus_specs, "corpus as id=dir (repeatable)")
        ->required();
    build->add_option("--definitions", build_args.definitions, "definition registry file")
        ->required();
    build->add_option("--kind", build_args.kind,
                      "context kind: entity|question|definition|examples|all");
    build->add_option("--out", build_args.out, "output directory")->required();
    build->add_option("--format", build_args.format, "corpus format: conll|standoff");
    build->add_flag("--balance", build_args.balance_train, "balance train negatives per type");
    build->add_flag("--allow-empty-examples", build_args.allow_empty_examples,
                    "permit empty example lists in rendered contexts");
    build->add_option("--dev-fraction", build_args.dev_fraction,
                      "holdout fraction when a corpus has no dev split");
    build->add_option("--seed", build_args.seed, "seed for holdout/balancing");

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "train a tagger on built records");
    train_cmd->add_option("--data", train_args.data, "directory with records.*.jsonl")->required();
    train_cmd->add_option("--out", train_args.out, "output directory")->required();
    train_cmd->add_option("--seed", train_args.seed, "training seed");
    add_model_options(train_cmd, train_args.model_config);
    add_train_options(train_cmd, train_args.train_config);

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a records file");
    eval_cmd->add_option("--records", eval_args.records, "records file with gold spans")
        ->required();
    eval_cmd->add_option("--model", eval_args.model, "model directory from `train`")->required();
    eval_cmd->add_option("--out", eval_args.out, "output directory")->required();
    eval_cmd->add_option("--z", eval_args.z, "Wilson z value");

    ProbeArgs probe_args;
    CLI::App* probe_cmd = app.add_subcommand("probe", "export attention matrices for probes");
    probe_cmd->add_option("--model", probe_args.model, "model directory from `train`")->required();
    probe_cmd->add_option("--type", probe_args.entity_type, "entity type name")->required();
    probe_cmd->add_option("--sentence", probe_args.sentence, "whitespace-tokenized sentence")
        ->required();
    probe_cmd->add_option("--out", probe_args.out, "output directory")->required();

    ExperimentArgs experiment_args;
    CLI::App* experiment_cmd = app.add_subcommand("experiment", "run an ablation protocol");
    experiment_cmd->add_option("--kind", experiment_args.kind,
                               "context-compare|multitask-vs-individual|learning-curve|"
                               "knowledge-vs-entity-specific|transfer|balanced-vs-full")
        ->required();
    experiment_cmd->add_option("--corpus", experiment_args.corpus_specs, "corpus as id=dir")
        ->required();
    experiment_cmd->add_option("--definitions", experiment_args.definitions,
                               "definition registry file")
        ->required();
    experiment_cmd->add_option("--out", experiment_args.out, "output directory")->required();
    experiment_cmd->add_option("--kinds", experiment_args.kinds_csv, "context kinds (csv)");
    experiment_cmd->add_option("--fractions", experiment_args.fractions_csv,
                               "learning-curve fractions (csv)");
    experiment_cmd->add_option("--seeds", experiment_args.seeds, "training seeds");
    experiment_cmd->add_option("--target", experiment_args.target, "transfer target corpus id");
    experiment_cmd->add_option("--entity", experiment_args.entities,
                               "entity type (repeatable)");
    experiment_cmd->add_option("--format", experiment_args.format, "corpus format");
    experiment_cmd->add_option("--dev-fraction", experiment_args.dev_fraction,
                               "holdout fraction for corpora without dev");
    experiment_cmd->add_flag("--allow-empty-examples", experiment_args.allow_empty_examples,
                             "permit empty example lists");
    experiment_cmd->add_flag("--parallel", experiment_args.parallel,
                             "run independent grid cells in parallel");
    experiment_cmd->add_option("--workers", experiment_args.workers, "parallel worker cap");
    add_model_options(experiment_cmd, experiment_args.model_config);
    add_train_options(experiment_cmd, experiment_args.train_config);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (synthesize->parsed()) return cmd_synthesize(synthesize_args);
        if (build->parsed()) return cmd_build_data(build_args);
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (eval_cmd->parsed()) return cmd_eval(eval_args);
        if (probe_cmd->parsed()) return cmd_probe(probe_args);
        if (experiment_cmd->parsed()) return cmd_experiment(experiment_args);
        std::cerr << "no subcommand\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}

}  // namespace kgner
