#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <sstream>

#include "kgner/model.hpp"

using namespace kgner;

namespace {

KnowledgeContext question_context(const std::string& type) {
    KnowledgeContext context;
    context.kind = ContextKind::Question;
    context.entity_type = type;
    context.tokens = {"what", "are", "the", type, "mentioned", "in", "the", "text", "?"};
    return context;
}

std::vector<TrainingRecord> tiny_records() {
    std::vector<TrainingRecord> records;
    TrainingRecord r;
    r.record_id = "c:train:0:a";
    r.corpus_id = "c";
    r.sentence.tokens = {"the", "pain", "was", "severe", "pain", "pain"};
    r.sentence.spans = {{1, 1, "a"}, {4, 4, "a"}, {5, 5, "a"}};
    r.sentence.doc_id = "0";
    r.sentence.corpus_id = "c";
    r.context = question_context("a");
    r.labels.assign(r.context.tokens.size(), BioTag::O);
    for (const char c : {'O', 'B', 'O', 'O', 'B', 'B'}) r.labels.push_back(bio_tag_from_char(c));
    r.spans = {{1, 1, "a"}, {4, 4, "a"}, {5, 5, "a"}};
    r.answers = {"pain", "pain", "pain"};
    r.n_answers = 3;
    records.push_back(r);
    return records;
}

ModelConfig tiny_config() {
    ModelConfig config;
    config.d_model = 8;
    config.n_heads = 2;
    config.n_layers = 1;
    config.ffn_dim = 16;
    config.max_seq_len = 128;
    config.conv.out_channels = 2;
    config.dropout = 0.0;
    config.classifier_hidden = 8;
    return config;
}

}  // namespace

TEST_CASE("vocab reserves fixed ids and applies the frequency threshold") {
    std::vector<TrainingRecord> records = tiny_records();
    Vocab vocab = Vocab::build(records, 2);
    CHECK(vocab.id("[PAD]") == Vocab::kPad);
    CHECK(vocab.id("[UNK]") == Vocab::kUnk);
    CHECK(vocab.id("[CLS]") == Vocab::kCls);
    CHECK(vocab.id("[SEP]") == Vocab::kSep);
    CHECK(vocab.id("the") > 3);       // count 3 (2 in context + 1 in text)
    CHECK(vocab.id("pain") > 3);      // count 3
    CHECK(vocab.id("severe") == Vocab::kUnk);  // count 1, below threshold
    CHECK(vocab.id("never-seen") == Vocab::kUnk);

    std::ostringstream out;
    vocab.save(out);
    std::istringstream in(out.str());
    Vocab loaded = Vocab::load(in);
    CHECK(loaded.size() == vocab.size());
    CHECK(loaded.id("pain") == vocab.id("pain"));
}

TEST_CASE("pack layout arithmetic") {
    Vocab vocab = Vocab::build(tiny_records(), 1);
    KnowledgeContext context = question_context("a");  // m = 9
    std::vector<std::string> text(12, "pain");         // n = 12
    PackedInput packed = pack(&context, text, vocab, 128);
    CHECK(packed.ids.size() == 24);
    CHECK(packed.knowledge_len == 9);
    CHECK(packed.text_len == 12);
    CHECK(packed.text_begin == 11);
    CHECK(packed.text_end == 22);
    CHECK_FALSE(packed.truncated);
    CHECK(packed.ids.front() == Vocab::kCls);
    CHECK(packed.ids[10] == Vocab::kSep);
    CHECK(packed.ids.back() == Vocab::kSep);
    // segments: knowledge 0 (specials follow), text 1
    for (int i = 0; i <= 10; ++i) CHECK(packed.segment[static_cast<size_t>(i)] == 0);
    for (int i = 11; i <= 23; ++i) CHECK(packed.segment[static_cast<size_t>(i)] == 1);
}

TEST_CASE("pack truncates text from the right and flags it") {
    Vocab vocab = Vocab::build(tiny_records(), 1);
    KnowledgeContext context = question_context("a");
    std::vector<std::string> text(400, "pain");
    PackedInput packed = pack(&context, text, vocab, 128);
    CHECK(packed.truncated);
    CHECK(packed.ids.size() == 128);
    CHECK(packed.text_len == 128 - 9 - 3);

    // knowledge alone exceeding the budget is an error
    KnowledgeContext huge = context;
    huge.tokens.assign(126, "k");
    CHECK_THROWS_AS(pack(&huge, text, vocab, 128), DimensionError);
    CHECK_THROWS_AS(pack(&context, {}, vocab, 128), DimensionError);
}

TEST_CASE("pack without knowledge context") {
    Vocab vocab = Vocab::build(tiny_records(), 1);
    PackedInput packed = pack(nullptr, {"pain", "was"}, vocab, 128);
    CHECK(packed.knowledge_len == 0);
    CHECK(packed.ids.size() == 4);  // CLS text text SEP
    CHECK(packed.text_begin == 1);
    CHECK(packed.text_end == 2);
}

TEST_CASE("forward emits [T x 3] logits and row-stochastic attention") {
    std::vector<TrainingRecord> records = tiny_records();
    Vocab vocab = Vocab::build(records, 1);
    ModelConfig config = tiny_config();
    Rng rng(1);
    ModelParams params = ModelParams::init(config, vocab.size(), rng);

    KnowledgeContext context = question_context("a");
    PackedInput input = pack(&context, records[0].sentence.tokens, vocab, config.max_seq_len);
    ModelOutput output = model_forward(input, params, config, false, nullptr, true, &vocab);

    const int t = static_cast<int>(input.ids.size());
    CHECK(output.logits.shape() == std::vector<int>{t, 3});
    REQUIRE(output.trace.has_value());
    CHECK(output.trace->tokens.size() == static_cast<size_t>(t));
    for (const auto& layer : output.trace->weights) {
        REQUIRE(static_cast<int>(layer.size()) == config.n_heads);
        for (const auto& head : layer) {
            for (int i = 0; i < t; ++i) {
                double row_sum = 0.0;
                for (int j = 0; j < t; ++j) row_sum += head[static_cast<size_t>(i) * t + j];
                CHECK(std::abs(row_sum - 1.0) < 1e-6);
            }
        }
    }
    CHECK(logits_to_text_tags(output.logits, input).size() == static_cast<size_t>(input.text_len));
}

TEST_CASE("inference is deterministic for a fixed seed and input") {
    std::vector<TrainingRecord> records = tiny_records();
    Vocab vocab = Vocab::build(records, 1);
    ModelConfig config = tiny_config();
    Rng rng_a(9);
    Rng rng_b(9);
    ModelParams a = ModelParams::init(config, vocab.size(), rng_a);
    ModelParams b = ModelParams::init(config, vocab.size(), rng_b);
    KnowledgeContext context = question_context("a");
    PackedInput input = pack(&context, records[0].sentence.tokens, vocab, config.max_seq_len);
    Tensor logits_a = model_forward(input, a, config, false).logits;
    Tensor logits_b = model_forward(input, b, config, false).logits;
    REQUIRE(logits_a.size() == logits_b.size());
    CHECK(std::memcmp(logits_a.data().data(), logits_b.data().data(),
                      logits_a.size() * sizeof(double)) == 0);
}

TEST_CASE("full-model loss gradient matches finite differences on a tiny config") {
    std::vector<TrainingRecord> records = tiny_records();
    Vocab vocab = Vocab::build(records, 1);
    ModelConfig config = tiny_config();
    Rng rng(3);
    ModelParams params = ModelParams::init(config, vocab.size(), rng);
    KnowledgeContext context = question_context("a");
    PackedInput input = pack(&context, records[0].sentence.tokens, vocab, config.max_seq_len);
    std::vector<int> labels(input.ids.size(), 2);
    labels[static_cast<size_t>(input.text_begin) + 1] = 0;

    auto loss = [&]() {
        return cross_entropy(model_forward(input, params, config, false).logits, labels);
    };
    std::vector<Tensor> tensors;
    for (auto& [name, tensor] : params.items) tensors.push_back(tensor);
    CHECK(grad_check(loss, tensors) < 1e-4);
}

TEST_CASE("delta-kernel stride-1 conv head reduces to the plain classifier") {
    std::vector<TrainingRecord> records = tiny_records();
    Vocab vocab = Vocab::build(records, 1);
    ModelConfig config = tiny_config();
    config.conv.out_channels = 1;
    config.conv.stride_h = 1;
    config.conv.stride_w = 1;
    Rng rng(4);
    ModelParams params = ModelParams::init(config, vocab.size(), rng);
    // delta kernel: 1 at the center, 0 elsewhere
    Tensor& kernels = params.get("conv.kernels");
    std::fill(kernels.raw_data().begin(), kernels.raw_data().end(), 0.0);
    kernels.raw_data()[static_cast<size_t>(2 * 5 + 2)] = 1.0;

    KnowledgeContext context = question_context("a");
    PackedInput input = pack(&context, records[0].sentence.tokens, vocab, config.max_seq_len);
    Tensor with_head = model_forward(input, params, config, false).logits;
    Tensor baseline = classify_features(encode(input, params, config), params);
    REQUIRE(with_head.size() == baseline.size());
    for (size_t i = 0; i < with_head.size(); ++i) {
        CHECK(with_head.data()[i] == doctest::Approx(baseline.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint shape mismatches are named") {
    std::vector<TrainingRecord> records = tiny_records();
    Vocab vocab = Vocab::build(records, 1);
    ModelConfig config = tiny_config();
    Rng rng(5);
    ModelParams params = ModelParams::init(config, vocab.size(), rng);
    std::ostringstream out;
    params.save(out);

    ModelConfig other = config;
    other.d_model = 16;
    other.classifier_hidden = 16;
    std::istringstream in(out.str());
    CHECK_THROWS_WITH_AS(ModelParams::load(in, other, vocab.size()),
                         doctest::Contains("embed.token"), DimensionError);

    std::istringstream again(out.str());
    ModelParams loaded = ModelParams::load(again, config, vocab.size());
    CHECK(loaded.items.size() == params.items.size());
}

TEST_CASE("probe traces are deterministic and sub-blocks are m x n") {
    std::vector<TrainingRecord> records = tiny_records();
    Vocab vocab = Vocab::build(records, 1);
    ModelConfig config = tiny_config();
    Rng rng(6);
    ModelParams params = ModelParams::init(config, vocab.size(), rng);

    std::vector<std::pair<std::string, std::vector<std::string>>> probes = {
        {"full", question_context("a").tokens},
        {"entity", {"a"}},
    };
    auto once = probe_attention(params, config, vocab, probes, records[0].sentence.tokens);
    auto twice = probe_attention(params, config, vocab, probes, records[0].sentence.tokens);
    REQUIRE(once.size() == 2);
    for (size_t p = 0; p < once.size(); ++p) {
        const int m = once[p].input.knowledge_len;
        const int n = once[p].input.text_len;
        CHECK(m == static_cast<int>(probes[p].second.size()));
        CHECK(n == 6);
        REQUIRE(once[p].knowledge_to_text.size() == static_cast<size_t>(config.n_layers));
        for (const auto& layer : once[p].knowledge_to_text) {
            REQUIRE(layer.size() == static_cast<size_t>(config.n_heads));
            for (const auto& block : layer) {
                CHECK(block.size() == static_cast<size_t>(m) * static_cast<size_t>(n));
            }
        }
        CHECK(once[p].trace.weights == twice[p].trace.weights);
    }
}

TEST_CASE("model config json round trip and validation") {
    ModelConfig config = tiny_config();
    ModelConfig loaded = ModelConfig::from_json(config.to_json());
    CHECK(loaded.d_model == config.d_model);
    CHECK(loaded.conv.stride_w == config.conv.stride_w);

    ModelConfig bad = config;
    bad.d_model = 10;
    bad.n_heads = 4;  // 10 is not divisible by 4
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    ModelConfig bad_len = config;
    bad_len.max_seq_len = 64;
    CHECK_THROWS_AS(bad_len.validate(), ConfigError);
}
