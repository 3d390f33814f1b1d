#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kgner/cli.hpp"

using namespace kgner;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "kgner");
    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "kgner_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

double report_global_f1(const fs::path& report_json) {
    nlohmann::json rows = nlohmann::json::parse(read_file(report_json));
    for (const auto& row : rows) {
        if (row.at("scope") == "global") return std::stod(row.at("f1").get<std::string>());
    }
    FAIL("no global row in report");
    return 0.0;
}

struct Pipeline {
    fs::path corpus;
    fs::path data;
};

// synthesize + build-data, shared by several cases
Pipeline make_pipeline(const std::string& name, const std::string& n_train,
                       const std::string& kind = "question") {
    Pipeline p;
    p.corpus = fresh_dir(name + "_corpus");
    p.data = fresh_dir(name + "_data");
    REQUIRE(run({"synthesize", "--out", p.corpus.string(), "--types", "alpha,beta", "--n-train",
                 n_train, "--n-dev", "10", "--n-test", "10", "--seed", "3"}) == kExitOk);
    REQUIRE(run({"build-data", "--corpus", "syn=" + p.corpus.string(), "--definitions",
                 (p.corpus / "definitions.tsv").string(), "--kind", kind, "--out",
                 p.data.string(), "--seed", "5"}) == kExitOk);
    return p;
}

}  // namespace

TEST_CASE("synthesize then build-data is deterministic and complete") {
    Pipeline p = make_pipeline("det", "20");
    for (const char* name : {"train.conll", "dev.conll", "test.conll", "definitions.tsv"}) {
        CHECK(fs::exists(p.corpus / name));
    }
    for (const char* name : {"records.train.jsonl", "records.dev.jsonl", "records.test.jsonl",
                             "stats.tsv", "examples.tsv", "manifest.json"}) {
        CHECK(fs::exists(p.data / name));
    }

    // 20 train sentences x 2 types = 40 records, one JSON object per line
    std::string records = read_file(p.data / "records.train.jsonl");
    CHECK(std::count(records.begin(), records.end(), '\n') == 40);

    std::string stats = read_file(p.data / "stats.tsv");
    CHECK(stats.find("dataset\tentity\tentity_mentions\ttrain_pos\ttrain_neg\tdev_pos\tdev_neg\t"
                     "test_pos\ttest_neg") == 0);

    // rerun into a second directory: byte-identical outputs
    fs::path data2 = fresh_dir("det_data2");
    REQUIRE(run({"build-data", "--corpus", "syn=" + p.corpus.string(), "--definitions",
                 (p.corpus / "definitions.tsv").string(), "--kind", "question", "--out",
                 data2.string(), "--seed", "5"}) == kExitOk);
    CHECK(read_file(p.data / "records.train.jsonl") == read_file(data2 / "records.train.jsonl"));
    CHECK(read_file(p.data / "stats.tsv") == read_file(data2 / "stats.tsv"));

    fs::path corpus2 = fresh_dir("det_corpus2");
    REQUIRE(run({"synthesize", "--out", corpus2.string(), "--types", "alpha,beta", "--n-train",
                 "20", "--n-dev", "10", "--n-test", "10", "--seed", "3"}) == kExitOk);
    CHECK(read_file(p.corpus / "train.conll") == read_file(corpus2 / "train.conll"));
}

TEST_CASE("usage and data errors map to the exit-code contract") {
    CHECK(run({"synthesize"}) == kExitUsage);        // missing required --out
    CHECK(run({"no-such-command"}) == kExitUsage);
    fs::path out = fresh_dir("err_out");
    CHECK(run({"build-data", "--corpus", "syn=/nonexistent/dir", "--definitions",
               "/nonexistent/defs.tsv", "--out", out.string()}) == kExitData);
}

TEST_CASE("definition contexts require registry entries") {
    fs::path corpus = fresh_dir("defs_corpus");
    REQUIRE(run({"synthesize", "--out", corpus.string(), "--types", "alpha", "--n-train", "10",
                 "--n-dev", "5", "--n-test", "5", "--seed", "1"}) == kExitOk);
    // empty definitions file: question context works, definition context fails
    fs::path empty_defs = corpus / "empty.tsv";
    write_file_atomic(empty_defs, "");
    fs::path out = fresh_dir("defs_out");
    CHECK(run({"build-data", "--corpus", "syn=" + corpus.string(), "--definitions",
               empty_defs.string(), "--kind", "question", "--out", out.string()}) == kExitOk);
    CHECK(run({"build-data", "--corpus", "syn=" + corpus.string(), "--definitions",
               empty_defs.string(), "--kind", "definition", "--out", out.string()}) == kExitData);
}

TEST_CASE("train, eval and probe round trip on a tiny corpus") {
    Pipeline p = make_pipeline("trainflow", "30");
    fs::path model = fresh_dir("trainflow_model");
    REQUIRE(run({"train", "--data", p.data.string(), "--out", model.string(), "--seed", "7",
                 "--d-model", "32", "--n-heads", "4", "--n-layers", "2", "--ffn-dim", "64",
                 "--classifier-hidden", "32", "--conv-channels", "2", "--dropout", "0.0",
                 "--lr", "3e-3", "--batch-size", "16", "--max-epochs", "60", "--patience",
                 "60"}) == kExitOk);
    for (const char* name :
         {"checkpoint.txt", "vocab.txt", "model_config.json", "trainlog.tsv", "manifest.json"}) {
        CHECK(fs::exists(model / name));
    }

    // the training manifest never references test-split data
    nlohmann::json manifest = nlohmann::json::parse(read_file(model / "manifest.json"));
    for (const auto& input : manifest.at("inputs")) {
        CHECK(input.at("role").get<std::string>() != "test");
    }

    // overfit sanity: the train split itself evaluates near-perfectly
    fs::path eval_train = fresh_dir("trainflow_eval_train");
    REQUIRE(run({"eval", "--records", (p.data / "records.train.jsonl").string(), "--model",
                 model.string(), "--out", eval_train.string()}) == kExitOk);
    CHECK(report_global_f1(eval_train / "report.json") >= 0.95);

    // eval twice: identical reports
    fs::path eval_a = fresh_dir("trainflow_eval_a");
    fs::path eval_b = fresh_dir("trainflow_eval_b");
    REQUIRE(run({"eval", "--records", (p.data / "records.test.jsonl").string(), "--model",
                 model.string(), "--out", eval_a.string()}) == kExitOk);
    REQUIRE(run({"eval", "--records", (p.data / "records.test.jsonl").string(), "--model",
                 model.string(), "--out", eval_b.string()}) == kExitOk);
    CHECK(read_file(eval_a / "report.tsv") == read_file(eval_b / "report.tsv"));
    CHECK(read_file(eval_a / "report.json") == read_file(eval_b / "report.json"));

    // probe emits per-(layer, head) trace and knowledge-to-text files
    fs::path probes = fresh_dir("trainflow_probes");
    REQUIRE(run({"probe", "--model", model.string(), "--type", "alpha", "--sentence",
                 "f1 alpha.e0 f2", "--out", probes.string()}) == kExitOk);
    CHECK(fs::exists(probes / "trace_full_L0H0.tsv"));
    CHECK(fs::exists(probes / "trace_full_L0H1.tsv"));
    CHECK(fs::exists(probes / "ktext_full_L0H0.tsv"));
    CHECK(fs::exists(probes / "trace_entity_L0H0.tsv"));
    CHECK(fs::exists(probes / "trace_what_L0H0.tsv"));
    CHECK(fs::exists(probes / "trace_no-type_L0H0.tsv"));
    CHECK(fs::exists(probes / "manifest.json"));

    // the full-question sub-block has m=9 rows and n=3 columns + header
    std::string block = read_file(probes / "ktext_full_L0H0.tsv");
    CHECK(std::count(block.begin(), block.end(), '\n') == 10);

    // checkpoint/config mismatch is a data error naming shapes
    std::string config_text = read_file(model / "model_config.json");
    nlohmann::json config = nlohmann::json::parse(config_text);
    config["d_model"] = 64;
    config["n_heads"] = 4;
    write_file_atomic(model / "model_config.json", config.dump(2) + "\n");
    fs::path eval_bad = fresh_dir("trainflow_eval_bad");
    CHECK(run({"eval", "--records", (p.data / "records.test.jsonl").string(), "--model",
               model.string(), "--out", eval_bad.string()}) == kExitData);
}

TEST_CASE("numeric failures exit with code 3") {
    Pipeline p = make_pipeline("numfail", "8");
    fs::path model = fresh_dir("numfail_model");
    CHECK(run({"train", "--data", p.data.string(), "--out", model.string(), "--seed", "1",
               "--d-model", "8", "--n-heads", "2", "--n-layers", "1", "--ffn-dim", "16",
               "--classifier-hidden", "8", "--conv-channels", "1", "--lr", "1e200",
               "--batch-size", "4", "--max-epochs", "2", "--patience", "2"}) == kExitNumeric);
}

TEST_CASE("balanced build-data equalizes positives and negatives per type") {
    fs::path corpus = fresh_dir("bal_corpus");
    REQUIRE(run({"synthesize", "--out", corpus.string(), "--types", "alpha,beta", "--n-train",
                 "60", "--n-dev", "10", "--n-test", "10", "--span-rate", "0.25", "--seed",
                 "9"}) == kExitOk);
    fs::path out = fresh_dir("bal_out");
    REQUIRE(run({"build-data", "--corpus", "syn=" + corpus.string(), "--definitions",
                 (corpus / "definitions.tsv").string(), "--out", out.string(), "--balance",
                 "--seed", "4"}) == kExitOk);
    auto records = read_records_file(out / "records.train.jsonl");
    std::map<std::string, std::pair<long, long>> counts;
    for (const auto& r : records) {
        auto& [pos, neg] = counts[r.context.entity_type];
        (r.positive() ? pos : neg) += 1;
    }
    for (const auto& [type, c] : counts) {
        CAPTURE(type);
        CHECK(c.first == c.second);
    }
}
