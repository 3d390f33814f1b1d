#ifndef KGNER_TRAINER_HPP
#define KGNER_TRAINER_HPP

#include <optional>
#include <string>
#include <vector>

#include "kgner/evaluate.hpp"
#include "kgner/model.hpp"

namespace kgner {

struct TrainConfig {
    // 5e-5 suits large pre-trained backbones; 1e-3 is the default for
    // this randomly initialized small model.
    double learning_rate = 1e-3;
    int batch_size = 32;
    int patience = 5;
    int max_epochs = 50;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; off by default
    int warmup_steps = 0;       // >0 enables linear warmup + linear decay

    void validate() const;
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double dev_f1 = 0.0;
    double seconds = 0.0;  // diagnostic only; not part of the reproducible table
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int best_epoch = 0;  // 1-based; 0 means none
    std::string stop_reason;

    // Deterministic table (no wall time): epoch, train_loss, dev_f1.
    std::string to_tsv() const;
};

// Early-stopping bookkeeping: stop after `patience` consecutive epochs
// without improvement over the best dev metric.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience);
    // Returns true when training should stop after this epoch.
    bool observe(double dev_metric);
    int best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_metric_; }

private:
    int patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    double best_metric_ = -1.0;
    int stale_ = 0;
};

// Decoupled-weight-decay Adam over a named parameter set.
class AdamOptimizer {
public:
    AdamOptimizer(const TrainConfig& config, size_t total_steps_hint = 0);
    void step(ModelParams& params);

private:
    TrainConfig config_;
    size_t total_steps_hint_;
    long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// Batch iteration order for one epoch: a pure function of (seed, epoch).
std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch);

struct TrainResult {
    ModelParams best_params;
    TrainLog log;
    Vocab vocab;
};

// Mini-batch training with gradient accumulation per batch, per-epoch
// dev exact-match micro-F1, and early stopping on that metric. The loss
// covers every packed token; knowledge and special tokens carry gold O.
TrainResult train(const std::vector<TrainingRecord>& train_records,
                  const std::vector<TrainingRecord>& dev_records, const ModelConfig& model_config,
                  const TrainConfig& train_config, uint64_t seed);

// Greedy inference over records with an existing model.
EvalReport evaluate_records(const std::vector<TrainingRecord>& records, const ModelParams& params,
                            const ModelConfig& config, const Vocab& vocab,
                            double z = kDefaultZ);

double mean(const std::vector<double>& values);
// Sample standard deviation (n-1); absent for fewer than two values.
std::optional<double> sample_stddev(const std::vector<double>& values);

struct MultiSeedResult {
    std::vector<uint64_t> seeds;
    std::vector<double> test_f1;
    double mean_f1 = 0.0;
    std::optional<double> stddev_f1;
};

// Independent train+test runs, one per seed, aggregated.
MultiSeedResult multi_seed(const std::vector<TrainingRecord>& train_records,
                           const std::vector<TrainingRecord>& dev_records,
                           const std::vector<TrainingRecord>& test_records,
                           const ModelConfig& model_config, const TrainConfig& train_config,
                           const std::vector<uint64_t>& seeds);

}  // namespace kgner

#endif  // KGNER_TRAINER_HPP
