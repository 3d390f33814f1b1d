#include "kgner/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace kgner {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
}

std::string TrainLog::to_tsv() const {
    std::string out = "epoch\ttrain_loss\tdev_f1\n";
    for (const EpochLog& e : epochs) {
        out += std::to_string(e.epoch) + "\t" + format_double(e.train_loss) + "\t" +
               format_double(e.dev_f1) + "\n";
    }
    out += "# best_epoch\t" + std::to_string(best_epoch) + "\n";
    out += "# stop_reason\t" + stop_reason + "\n";
    return out;
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopper::observe(double dev_metric) {
    ++epoch_;
    if (dev_metric > best_metric_) {
        best_metric_ = dev_metric;
        best_epoch_ = epoch_;
        stale_ = 0;
    } else {
        ++stale_;
    }
    return stale_ >= patience_;
}

AdamOptimizer::AdamOptimizer(const TrainConfig& config, size_t total_steps_hint)
    : config_(config), total_steps_hint_(total_steps_hint) {}

void AdamOptimizer::step(ModelParams& params) {
    if (m_.empty()) {
        m_.resize(params.items.size());
        v_.resize(params.items.size());
        for (size_t i = 0; i < params.items.size(); ++i) {
            m_[i].assign(params.items[i].second.size(), 0.0);
            v_[i].assign(params.items[i].second.size(), 0.0);
        }
    }
    ++t_;
    double lr = config_.learning_rate;
    if (config_.warmup_steps > 0) {
        if (t_ <= config_.warmup_steps) {
            lr *= static_cast<double>(t_) / config_.warmup_steps;
        } else if (total_steps_hint_ > static_cast<size_t>(config_.warmup_steps)) {
            const double span = static_cast<double>(total_steps_hint_) - config_.warmup_steps;
            const double progress = (static_cast<double>(t_) - config_.warmup_steps) / span;
            lr *= std::max(0.0, 1.0 - progress);
        }
    }
    const double bc1 = 1.0 - std::pow(config_.adam_beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.adam_beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.items.size(); ++i) {
        Tensor& p = params.items[i].second;
        const std::vector<double>& g = p.grad();
        std::vector<double>& data = p.raw_data();
        for (size_t j = 0; j < data.size(); ++j) {
            m_[i][j] = config_.adam_beta1 * m_[i][j] + (1.0 - config_.adam_beta1) * g[j];
            v_[i][j] = config_.adam_beta2 * v_[i][j] + (1.0 - config_.adam_beta2) * g[j] * g[j];
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            data[j] -= lr * (mhat / (std::sqrt(vhat) + config_.adam_eps) +
                             config_.weight_decay * data[j]);
        }
    }
}

std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(splitmix64(splitmix64(seed) ^ static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    return order;
}

namespace {

// Gold labels over the packed sequence: CLS, knowledge and SEP tokens
// carry O; text labels come from the record (truncated if packing did).
std::vector<int> packed_labels(const TrainingRecord& record, const PackedInput& input) {
    std::vector<int> labels(input.ids.size(), static_cast<int>(BioTag::O));
    const size_t context_len = record.context.tokens.size();
    for (int i = 0; i < input.text_len; ++i) {
        labels[static_cast<size_t>(input.text_begin + i)] =
            static_cast<int>(record.labels[context_len + static_cast<size_t>(i)]);
    }
    return labels;
}

const KnowledgeContext* record_context(const TrainingRecord& record) {
    return record.context.tokens.empty() ? nullptr : &record.context;
}

}  // namespace

EvalReport evaluate_records(const std::vector<TrainingRecord>& records, const ModelParams& params,
                            const ModelConfig& config, const Vocab& vocab, double z) {
    std::vector<ScoredRecord> scored;
    scored.reserve(records.size());
    for (const TrainingRecord& record : records) {
        PackedInput input = pack(record_context(record), record.sentence.tokens, vocab,
                                 config.max_seq_len);
        ModelOutput output = model_forward(input, params, config, false);
        std::vector<BioTag> tags = logits_to_text_tags(output.logits, input);
        ScoredRecord s;
        s.corpus_id = record.corpus_id;
        s.entity_type = record.context.entity_type;
        s.gold = record.spans;
        s.predicted = decode_spans(tags, record.context.entity_type);
        scored.push_back(std::move(s));
    }
    return build_report(scored, z);
}

TrainResult train(const std::vector<TrainingRecord>& train_records,
                  const std::vector<TrainingRecord>& dev_records, const ModelConfig& model_config,
                  const TrainConfig& train_config, uint64_t seed) {
    model_config.validate();
    train_config.validate();
    if (train_records.empty()) throw ConfigError("train: no training records");

    Vocab vocab = Vocab::build(train_records);
    Rng init_rng(splitmix64(seed));
    ModelParams params = ModelParams::init(model_config, vocab.size(), init_rng);
    const size_t batches_per_epoch =
        (train_records.size() + static_cast<size_t>(train_config.batch_size) - 1) /
        static_cast<size_t>(train_config.batch_size);
    AdamOptimizer optimizer(train_config,
                            batches_per_epoch * static_cast<size_t>(train_config.max_epochs));
    EarlyStopper stopper(train_config.patience);
    Rng dropout_rng(splitmix64(seed ^ 0x5eed));

    TrainResult result;
    result.best_params = params.clone();
    result.log.stop_reason = "max_epochs";

    for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        std::vector<size_t> order = epoch_order(train_records.size(), seed, epoch);
        double loss_sum = 0.0;

        size_t cursor = 0;
        size_t batch_index = 0;
        while (cursor < order.size()) {
            const size_t batch_end =
                std::min(order.size(), cursor + static_cast<size_t>(train_config.batch_size));
            const double batch_count = static_cast<double>(batch_end - cursor);
            params.zero_grad();
            for (size_t b = cursor; b < batch_end; ++b) {
                const TrainingRecord& record = train_records[order[b]];
                PackedInput input = pack(record_context(record), record.sentence.tokens, vocab,
                                         model_config.max_seq_len);
                ModelOutput output =
                    model_forward(input, params, model_config, true, &dropout_rng);
                Tensor loss = cross_entropy(output.logits, packed_labels(record, input));
                const double loss_value = loss.value();
                if (!std::isfinite(loss_value)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(batch_index));
                }
                loss_sum += loss_value;
                // Mean over the batch: scale before accumulating grads.
                scale(loss, 1.0 / batch_count).backward();
            }
            optimizer.step(params);
            cursor = batch_end;
            ++batch_index;
        }

        const double dev_f1 =
            dev_records.empty()
                ? 0.0
                : evaluate_records(dev_records, params, model_config, vocab).global_f1();
        const auto epoch_end = std::chrono::steady_clock::now();

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(train_records.size());
        entry.dev_f1 = dev_f1;
        entry.seconds = std::chrono::duration<double>(epoch_end - epoch_start).count();
        result.log.epochs.push_back(entry);

        const bool improved = stopper.best_epoch() == 0 || dev_f1 > stopper.best_metric();
        const bool stop = stopper.observe(dev_f1);
        if (improved) result.best_params = params.clone();
        if (stop) {
            result.log.stop_reason = "early_stopping";
            break;
        }
    }
    result.log.best_epoch = stopper.best_epoch();
    result.vocab = std::move(vocab);
    return result;
}

double mean(const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("mean of empty sample");
    return std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
}

std::optional<double> sample_stddev(const std::vector<double>& values) {
    if (values.size() < 2) return std::nullopt;
    const double mu = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - mu) * (v - mu);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

MultiSeedResult multi_seed(const std::vector<TrainingRecord>& train_records,
                           const std::vector<TrainingRecord>& dev_records,
                           const std::vector<TrainingRecord>& test_records,
                           const ModelConfig& model_config, const TrainConfig& train_config,
                           const std::vector<uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("multi_seed: need at least one seed");
    MultiSeedResult result;
    result.seeds = seeds;
    for (uint64_t seed : seeds) {
        TrainResult run = train(train_records, dev_records, model_config, train_config, seed);
        EvalReport report =
            evaluate_records(test_records, run.best_params, model_config, run.vocab);
        result.test_f1.push_back(report.global_f1());
    }
    result.mean_f1 = mean(result.test_f1);
    result.stddev_f1 = sample_stddev(result.test_f1);
    return result;
}

}  // namespace kgner
