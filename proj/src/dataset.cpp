#include "kgner/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kgner {

void DatasetStats::merge(const DatasetStats& other) {
    for (const auto& [key, row] : other.rows) {
        DatasetStatsRow& mine = rows[key];
        mine.entity_mentions += row.entity_mentions;
        mine.train_pos += row.train_pos;
        mine.train_neg += row.train_neg;
        mine.dev_pos += row.dev_pos;
        mine.dev_neg += row.dev_neg;
        mine.test_pos += row.test_pos;
        mine.test_neg += row.test_neg;
    }
}

std::string DatasetStats::to_tsv() const {
    std::string out =
        "dataset\tentity\tentity_mentions\ttrain_pos\ttrain_neg\tdev_pos\tdev_neg\ttest_pos\ttest_neg\n";
    for (const auto& [key, row] : rows) {
        out += key.first + "\t" + key.second + "\t" + std::to_string(row.entity_mentions) + "\t" +
               std::to_string(row.train_pos) + "\t" + std::to_string(row.train_neg) + "\t" +
               std::to_string(row.dev_pos) + "\t" + std::to_string(row.dev_neg) + "\t" +
               std::to_string(row.test_pos) + "\t" + std::to_string(row.test_neg) + "\n";
    }
    return out;
}

namespace {

TrainingRecord make_record(const TaggedSentence& sentence, const KnowledgeContext& context,
                           const std::string& corpus_id, const std::string& split,
                           size_t sentence_index) {
    TrainingRecord record;
    record.corpus_id = corpus_id;
    record.record_id = corpus_id + ":" + split + ":" + std::to_string(sentence_index) + ":" +
                       context.entity_type;
    record.sentence = sentence;
    record.context = context;

    std::vector<BioTag> text_tags = spans_to_tags(sentence, context.entity_type);
    record.labels.assign(context.tokens.size(), BioTag::O);
    record.labels.insert(record.labels.end(), text_tags.begin(), text_tags.end());

    for (const EntitySpan& span : sentence.spans) {
        if (span.type != context.entity_type) continue;
        record.spans.push_back({span.start, span.end, span.type});
        std::string surface = sentence.tokens[static_cast<size_t>(span.start)];
        for (int i = span.start + 1; i <= span.end; ++i) {
            surface += " ";
            surface += sentence.tokens[static_cast<size_t>(i)];
        }
        record.answers.push_back(std::move(surface));
    }
    std::sort(record.spans.begin(), record.spans.end());
    record.n_answers = static_cast<long>(record.spans.size());
    return record;
}

}  // namespace

RecordSet build_records(const SplitSentences& splits,
                        const std::map<std::string, KnowledgeContext>& contexts,
                        const std::string& corpus_id, DatasetStats* stats) {
    if (contexts.empty()) {
        throw ConfigError("no knowledge contexts declared for corpus `" + corpus_id + "`");
    }
    // Every span type occurring in the data must have a context.
    auto check_types = [&](const std::vector<TaggedSentence>& sentences) {
        for (const TaggedSentence& s : sentences) {
            for (const EntitySpan& span : s.spans) {
                if (!contexts.count(span.type)) {
                    throw ConfigError("no knowledge context for entity type `" + span.type +
                                      "` of corpus `" + corpus_id + "`");
                }
            }
        }
    };
    check_types(splits.train);
    check_types(splits.dev);
    check_types(splits.test);

    DatasetStats local;
    RecordSet out;
    auto build_split = [&](const std::vector<TaggedSentence>& sentences, const std::string& split,
                           std::vector<TrainingRecord>& dest) {
        for (size_t i = 0; i < sentences.size(); ++i) {
            for (const auto& [type_name, context] : contexts) {
                TrainingRecord record = make_record(sentences[i], context, corpus_id, split, i);
                DatasetStatsRow& row = local.rows[{corpus_id, type_name}];
                row.entity_mentions += record.n_answers;
                long& pos = split == "train" ? row.train_pos
                            : split == "dev" ? row.dev_pos
                                             : row.test_pos;
                long& neg = split == "train" ? row.train_neg
                            : split == "dev" ? row.dev_neg
                                             : row.test_neg;
                (record.positive() ? pos : neg) += 1;
                dest.push_back(std::move(record));
            }
        }
    };
    build_split(splits.train, "train", out.train);
    build_split(splits.dev, "dev", out.dev);
    build_split(splits.test, "test", out.test);
    if (stats) stats->merge(local);
    return out;
}

std::pair<std::vector<TaggedSentence>, std::vector<TaggedSentence>> split_holdout(
    const std::vector<TaggedSentence>& sentences, const SplitSpec& spec) {
    if (spec.dev_fraction <= 0.0 || spec.dev_fraction >= 1.0) {
        throw ConfigError("dev_fraction must be in (0,1), got " +
                          std::to_string(spec.dev_fraction));
    }
    size_t n = sentences.size();
    size_t n_dev = static_cast<size_t>(std::floor(spec.dev_fraction * static_cast<double>(n)));
    if (n - n_dev < 1) {
        throw ConfigError("holdout split would leave no training sentences (n=" +
                          std::to_string(n) + ", dev_fraction=" +
                          std::to_string(spec.dev_fraction) + ")");
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(splitmix64(spec.seed));
    rng.shuffle(order);

    std::vector<bool> is_dev(n, false);
    for (size_t i = 0; i < n_dev; ++i) is_dev[order[i]] = true;
    std::pair<std::vector<TaggedSentence>, std::vector<TaggedSentence>> result;
    for (size_t i = 0; i < n; ++i) {
        (is_dev[i] ? result.second : result.first).push_back(sentences[i]);
    }
    return result;
}

namespace {

// Keyed selection shared by balance and subsample: chooses a subset of
// indices per group, then re-emits records in their original order.
std::vector<TrainingRecord> select_by_index(const std::vector<TrainingRecord>& records,
                                            std::vector<size_t> keep) {
    std::sort(keep.begin(), keep.end());
    std::vector<TrainingRecord> out;
    out.reserve(keep.size());
    for (size_t idx : keep) out.push_back(records[idx]);
    return out;
}

}  // namespace

std::vector<TrainingRecord> balance(const std::vector<TrainingRecord>& records, uint64_t seed) {
    std::map<std::pair<std::string, std::string>, std::pair<std::vector<size_t>, std::vector<size_t>>>
        groups;  // (corpus, type) -> (positive indices, negative indices)
    for (size_t i = 0; i < records.size(); ++i) {
        auto& group = groups[{records[i].corpus_id, records[i].context.entity_type}];
        (records[i].positive() ? group.first : group.second).push_back(i);
    }
    std::vector<size_t> keep;
    Rng rng(splitmix64(seed));
    for (auto& [key, group] : groups) {
        auto& [pos, neg] = group;
        keep.insert(keep.end(), pos.begin(), pos.end());
        if (neg.size() > pos.size()) {
            rng.shuffle(neg);
            neg.resize(pos.size());
        }
        keep.insert(keep.end(), neg.begin(), neg.end());
    }
    return select_by_index(records, std::move(keep));
}

std::vector<TrainingRecord> subsample_for_curve(const std::vector<TrainingRecord>& records,
                                                double fraction, uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) {
        throw ConfigError("subsample fraction must be in (0,1], got " + std::to_string(fraction));
    }
    std::map<std::tuple<std::string, std::string, bool>, std::vector<size_t>> groups;
    for (size_t i = 0; i < records.size(); ++i) {
        groups[{records[i].corpus_id, records[i].context.entity_type, records[i].positive()}]
            .push_back(i);
    }
    std::vector<size_t> keep;
    Rng rng(splitmix64(seed));
    for (auto& [key, indices] : groups) {
        size_t take = static_cast<size_t>(
            std::ceil(fraction * static_cast<double>(indices.size())));
        rng.shuffle(indices);
        indices.resize(std::min(take, indices.size()));
        keep.insert(keep.end(), indices.begin(), indices.end());
    }
    return select_by_index(records, std::move(keep));
}

namespace {

std::string synthetic_definition(const std::string& type_name) {
    return type_name + " means a mention composed of " + type_name + " trigger tokens";
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticConfig& config, const std::string& corpus_id) {
    if (config.type_names.empty()) throw ConfigError("synthetic corpus needs at least one type");
    if (config.filler_vocab < 1 || config.trigger_vocab < 1) {
        throw ConfigError("vocabulary too small for disjoint trigger vocabularies");
    }
    if (config.min_sentence_len < 1 || config.max_sentence_len < config.min_sentence_len) {
        throw ConfigError("invalid sentence length bounds");
    }
    {
        std::set<std::string> unique(config.type_names.begin(), config.type_names.end());
        if (unique.size() != config.type_names.size()) {
            throw ConfigError("duplicate entity type names break trigger-vocabulary disjointness");
        }
        for (const std::string& name : config.type_names) validate_entity_type_name(name);
    }

    // Trigger tokens carry the type name, so vocabularies are disjoint
    // across types and shared across corpora that share a type.
    auto trigger_token = [&](const std::string& type, int i) {
        return type + ".e" + std::to_string(i);
    };
    auto filler_token = [](int i) { return "f" + std::to_string(i); };

    SyntheticCorpus corpus;
    corpus.corpus_id = corpus_id;
    corpus.type_names = config.type_names;
    for (const std::string& type : config.type_names) {
        corpus.definitions.add(corpus_id, type, synthetic_definition(type));
    }

    Rng rng(splitmix64(config.seed));
    auto make_sentence = [&](size_t index) {
        TaggedSentence s;
        s.corpus_id = corpus_id;
        s.doc_id = std::to_string(index);
        int len = config.min_sentence_len +
                  static_cast<int>(rng.uniform_int(config.max_sentence_len -
                                                   config.min_sentence_len + 1));
        for (int i = 0; i < len; ++i) {
            s.tokens.push_back(filler_token(static_cast<int>(rng.uniform_int(config.filler_vocab))));
        }
        // Insert mention blocks one at a time; positions are chosen
        // outside existing mentions so spans stay well-formed.
        for (const std::string& type : config.type_names) {
            if (rng.uniform() >= config.span_rate) continue;
            int mentions = 1 + static_cast<int>(rng.uniform_int(2));
            for (int m = 0; m < mentions; ++m) {
                int mention_len = 1 + static_cast<int>(rng.uniform_int(3));
                std::vector<std::string> mention;
                for (int i = 0; i < mention_len; ++i) {
                    mention.push_back(trigger_token(
                        type, static_cast<int>(rng.uniform_int(config.trigger_vocab))));
                }
                // Valid gaps: token boundaries not inside any existing span.
                std::vector<int> gaps;
                for (int pos = 0; pos <= static_cast<int>(s.tokens.size()); ++pos) {
                    bool inside = false;
                    for (const EntitySpan& span : s.spans) {
                        if (pos > span.start && pos <= span.end) inside = true;
                    }
                    if (!inside) gaps.push_back(pos);
                }
                int pos = gaps[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(gaps.size())))];
                s.tokens.insert(s.tokens.begin() + pos, mention.begin(), mention.end());
                for (EntitySpan& span : s.spans) {
                    if (span.start >= pos) {
                        span.start += mention_len;
                        span.end += mention_len;
                    }
                }
                s.spans.push_back({pos, pos + mention_len - 1, type});
            }
        }
        validate_sentence(s);
        return s;
    };

    for (long i = 0; i < config.n_train; ++i) corpus.splits.train.push_back(make_sentence(static_cast<size_t>(i)));
    for (long i = 0; i < config.n_dev; ++i) corpus.splits.dev.push_back(make_sentence(static_cast<size_t>(i)));
    for (long i = 0; i < config.n_test; ++i) corpus.splits.test.push_back(make_sentence(static_cast<size_t>(i)));
    return corpus;
}

namespace {

nlohmann::ordered_json record_to_json(const TrainingRecord& record) {
    nlohmann::ordered_json j;
    j["record_id"] = record.record_id;
    j["corpus_id"] = record.corpus_id;
    j["kind"] = context_kind_name(record.context.kind);
    j["entity_type"] = record.context.entity_type;
    nlohmann::ordered_json sentence;
    sentence["doc_id"] = record.sentence.doc_id;
    sentence["corpus_id"] = record.sentence.corpus_id;
    sentence["tokens"] = record.sentence.tokens;
    nlohmann::ordered_json sentence_spans = nlohmann::ordered_json::array();
    for (const EntitySpan& span : record.sentence.spans) {
        sentence_spans.push_back({span.start, span.end, span.type});
    }
    sentence["spans"] = std::move(sentence_spans);
    j["sentence"] = std::move(sentence);
    j["context"] = record.context.tokens;
    std::string labels;
    for (BioTag t : record.labels) labels += bio_tag_char(t);
    j["labels"] = labels;
    j["answers"] = record.answers;
    nlohmann::ordered_json spans = nlohmann::ordered_json::array();
    for (const EntitySpan& span : record.spans) spans.push_back({span.start, span.end});
    j["spans"] = std::move(spans);
    j["n_answers"] = record.n_answers;
    return j;
}

TrainingRecord record_from_json(const nlohmann::json& j) {
    TrainingRecord record;
    record.record_id = j.at("record_id").get<std::string>();
    record.corpus_id = j.at("corpus_id").get<std::string>();
    record.context.kind = context_kind_from_name(j.at("kind").get<std::string>());
    record.context.entity_type = j.at("entity_type").get<std::string>();
    const auto& sentence = j.at("sentence");
    record.sentence.doc_id = sentence.at("doc_id").get<std::string>();
    record.sentence.corpus_id = sentence.at("corpus_id").get<std::string>();
    record.sentence.tokens = sentence.at("tokens").get<std::vector<std::string>>();
    for (const auto& span : sentence.at("spans")) {
        record.sentence.spans.push_back(
            {span.at(0).get<int>(), span.at(1).get<int>(), span.at(2).get<std::string>()});
    }
    record.context.tokens = j.at("context").get<std::vector<std::string>>();
    for (char c : j.at("labels").get<std::string>()) {
        record.labels.push_back(bio_tag_from_char(c));
    }
    record.answers = j.at("answers").get<std::vector<std::string>>();
    for (const auto& span : j.at("spans")) {
        record.spans.push_back(
            {span.at(0).get<int>(), span.at(1).get<int>(), record.context.entity_type});
    }
    record.n_answers = j.at("n_answers").get<long>();
    return record;
}

}  // namespace

std::string write_records(const std::vector<TrainingRecord>& records) {
    std::string out;
    for (const TrainingRecord& record : records) {
        out += record_to_json(record).dump();
        out += "\n";
    }
    return out;
}

void write_records_file(const std::vector<TrainingRecord>& records,
                        const std::filesystem::path& path) {
    write_file_atomic(path, write_records(records));
}

std::vector<TrainingRecord> read_records(std::istream& input) {
    std::vector<TrainingRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(input, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("records line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

std::vector<TrainingRecord> read_records_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open records file: " + path.string());
    return read_records(in);
}

std::string sentences_to_conll(const std::vector<TaggedSentence>& sentences) {
    std::string out;
    for (const TaggedSentence& sentence : sentences) {
        // A single tag column cannot represent cross-type nesting.
        std::vector<std::string> column(sentence.tokens.size(), "O");
        for (const EntitySpan& span : sentence.spans) {
            for (int i = span.start; i <= span.end; ++i) {
                if (column[static_cast<size_t>(i)] != "O") {
                    throw ConfigError("cannot serialize nested spans to a BIO column (doc " +
                                      sentence.doc_id + ")");
                }
                column[static_cast<size_t>(i)] =
                    (i == span.start ? "B-" : "I-") + span.type;
            }
        }
        for (size_t i = 0; i < sentence.tokens.size(); ++i) {
            out += sentence.tokens[i] + "\t" + column[i] + "\n";
        }
        out += "\n";
    }
    return out;
}

}  // namespace kgner
