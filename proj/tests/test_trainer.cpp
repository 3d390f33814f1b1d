#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kgner/cli.hpp"
#include "kgner/trainer.hpp"

using namespace kgner;

namespace {

ModelConfig overfit_config() {
    ModelConfig config;
    config.d_model = 16;
    config.n_heads = 2;
    config.n_layers = 1;
    config.ffn_dim = 32;
    config.conv.out_channels = 2;
    config.dropout = 0.0;
    config.classifier_hidden = 16;
    return config;
}

RecordSet small_synthetic_records(long n_train, long n_dev, uint64_t seed) {
    SyntheticConfig config;
    config.type_names = {"alpha", "beta"};
    config.n_train = n_train;
    config.n_dev = n_dev;
    config.n_test = n_dev;
    config.seed = seed;
    SyntheticCorpus corpus = generate_synthetic(config);
    std::map<std::string, KnowledgeContext> contexts;
    for (const std::string& type : corpus.type_names) {
        ExampleList examples = mine_examples(corpus.splits.train, {type, corpus.corpus_id});
        contexts[type] = render_context(ContextKind::Question, {type, corpus.corpus_id},
                                        corpus.definitions, examples, true);
    }
    return build_records(corpus.splits, contexts, corpus.corpus_id);
}

}  // namespace

TEST_CASE("early stopper: monotone decreasing dev metric stops after patience+1 epochs") {
    EarlyStopper stopper(5);
    CHECK_FALSE(stopper.observe(0.9));  // epoch 1, best
    CHECK_FALSE(stopper.observe(0.8));
    CHECK_FALSE(stopper.observe(0.7));
    CHECK_FALSE(stopper.observe(0.6));
    CHECK_FALSE(stopper.observe(0.5));
    CHECK(stopper.observe(0.4));  // epoch 6: fifth consecutive non-improvement
    CHECK(stopper.best_epoch() == 1);
    CHECK(stopper.best_metric() == doctest::Approx(0.9));
}

TEST_CASE("early stopper: ties do not count as improvement") {
    EarlyStopper stopper(2);
    CHECK_FALSE(stopper.observe(0.5));
    CHECK_FALSE(stopper.observe(0.5));
    CHECK(stopper.observe(0.5));
    CHECK(stopper.best_epoch() == 1);
}

TEST_CASE("batch iteration order is a pure function of seed and epoch") {
    auto a = epoch_order(100, 7, 3);
    auto b = epoch_order(100, 7, 3);
    CHECK(a == b);
    CHECK(a != epoch_order(100, 7, 4));
    CHECK(a != epoch_order(100, 8, 3));
}

TEST_CASE("training overfits ten records to near-zero loss") {
    RecordSet records = small_synthetic_records(5, 2, 3);
    std::vector<TrainingRecord> ten(records.train.begin(), records.train.begin() + 10);

    TrainConfig config;
    config.learning_rate = 3e-3;
    config.batch_size = 10;
    config.max_epochs = 200;
    config.patience = 200;
    TrainResult result = train(ten, ten, overfit_config(), config, 11);
    REQUIRE_FALSE(result.log.epochs.empty());
    double best_loss = result.log.epochs.front().train_loss;
    for (const EpochLog& e : result.log.epochs) best_loss = std::min(best_loss, e.train_loss);
    CHECK(best_loss < 0.01);
}

TEST_CASE("identical seeds produce identical train logs") {
    RecordSet records = small_synthetic_records(12, 4, 5);
    TrainConfig config;
    config.batch_size = 8;
    config.max_epochs = 3;
    config.patience = 3;
    ModelConfig model = overfit_config();
    model.dropout = 0.1;  // exercises the dropout rng path
    TrainResult a = train(records.train, records.dev, model, config, 21);
    TrainResult b = train(records.train, records.dev, model, config, 21);
    CHECK(a.log.to_tsv() == b.log.to_tsv());
    CHECK(a.log.epochs.size() == b.log.epochs.size());

    TrainResult c = train(records.train, records.dev, model, config, 22);
    CHECK(a.log.to_tsv() != c.log.to_tsv());
}

TEST_CASE("best checkpoint tracks the maximum logged dev f1") {
    RecordSet records = small_synthetic_records(12, 6, 9);
    TrainConfig config;
    config.batch_size = 8;
    config.max_epochs = 6;
    config.patience = 2;
    TrainResult result = train(records.train, records.dev, overfit_config(), config, 2);
    REQUIRE(result.log.best_epoch >= 1);
    double best = result.log.epochs[static_cast<size_t>(result.log.best_epoch - 1)].dev_f1;
    for (const EpochLog& e : result.log.epochs) CHECK(best >= e.dev_f1);
}

TEST_CASE("non-finite loss aborts with epoch and batch diagnostics") {
    RecordSet records = small_synthetic_records(6, 2, 13);
    TrainConfig config;
    config.learning_rate = 1e200;
    config.batch_size = 4;
    config.max_epochs = 3;
    config.patience = 3;
    CHECK_THROWS_AS(train(records.train, records.dev, overfit_config(), config, 1), NumericError);
}

TEST_CASE("mean and sample stddev helpers") {
    CHECK(mean({0.8, 0.9, 1.0}) == doctest::Approx(0.9));
    auto sd = sample_stddev({0.8, 0.9, 1.0});
    REQUIRE(sd.has_value());
    CHECK(*sd == doctest::Approx(0.1));
    CHECK_FALSE(sample_stddev({0.5}).has_value());
    CHECK_THROWS_AS(mean({}), ConfigError);
}

TEST_CASE("multi_seed: single seed has no deviation, repeated seed has zero deviation") {
    RecordSet records = small_synthetic_records(10, 4, 17);
    TrainConfig config;
    config.batch_size = 8;
    config.max_epochs = 2;
    config.patience = 2;
    ModelConfig model = overfit_config();

    MultiSeedResult single =
        multi_seed(records.train, records.dev, records.test, model, config, {5});
    CHECK(single.test_f1.size() == 1);
    CHECK_FALSE(single.stddev_f1.has_value());
    CHECK(single.mean_f1 == doctest::Approx(single.test_f1[0]));

    MultiSeedResult repeated =
        multi_seed(records.train, records.dev, records.test, model, config, {5, 5, 5});
    REQUIRE(repeated.stddev_f1.has_value());
    CHECK(*repeated.stddev_f1 == doctest::Approx(0.0));
    CHECK(repeated.mean_f1 == doctest::Approx(single.mean_f1));
}

TEST_CASE("warmup and weight decay stay finite and deterministic") {
    RecordSet records = small_synthetic_records(8, 4, 23);
    TrainConfig config;
    config.batch_size = 4;
    config.max_epochs = 3;
    config.patience = 3;
    config.weight_decay = 0.01;
    config.warmup_steps = 4;
    TrainResult a = train(records.train, records.dev, overfit_config(), config, 31);
    TrainResult b = train(records.train, records.dev, overfit_config(), config, 31);
    CHECK(a.log.to_tsv() == b.log.to_tsv());
    for (const EpochLog& e : a.log.epochs) CHECK(std::isfinite(e.train_loss));
}
