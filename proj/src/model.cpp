#include "kgner/model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kgner {

namespace {
const char* kReserved[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
}

Vocab::Vocab() {
    for (const char* token : kReserved) {
        token_to_id_[token] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(token);
    }
}

Vocab Vocab::build(const std::vector<TrainingRecord>& train_records, int min_count) {
    std::map<std::string, long> counts;
    for (const TrainingRecord& record : train_records) {
        for (const std::string& token : record.context.tokens) ++counts[token];
        for (const std::string& token : record.sentence.tokens) ++counts[token];
    }
    std::vector<std::pair<std::string, long>> ranked;
    for (auto& [token, count] : counts) {
        if (count >= min_count) ranked.push_back({token, count});
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab vocab;
    for (auto& [token, count] : ranked) {
        if (vocab.token_to_id_.count(token)) continue;  // reserved strings
        vocab.token_to_id_[token] = static_cast<int>(vocab.id_to_token_.size());
        vocab.id_to_token_.push_back(token);
    }
    return vocab;
}

int Vocab::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw DimensionError("vocab id out of range");
    return id_to_token_[static_cast<size_t>(id)];
}

void Vocab::save(std::ostream& out) const {
    for (const std::string& token : id_to_token_) out << token << "\n";
}

Vocab Vocab::load(std::istream& in) {
    Vocab vocab;
    std::string line;
    int index = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (index < 4) {
            if (line != kReserved[index]) {
                throw ParseError("vocab file: reserved token mismatch at id " +
                                 std::to_string(index));
            }
        } else {
            if (vocab.token_to_id_.count(line)) {
                throw ParseError("vocab file: duplicate token `" + line + "`");
            }
            vocab.token_to_id_[line] = static_cast<int>(vocab.id_to_token_.size());
            vocab.id_to_token_.push_back(line);
        }
        ++index;
    }
    if (index < 4) throw ParseError("vocab file: missing reserved tokens");
    return vocab;
}

PackedInput pack(const KnowledgeContext* context, const std::vector<std::string>& text_tokens,
                 const Vocab& vocab, int max_seq_len) {
    if (text_tokens.empty()) throw DimensionError("pack: empty text");
    const int m = context ? static_cast<int>(context->tokens.size()) : 0;
    const int overhead = context ? 3 : 2;  // CLS + SEPs
    if (m + overhead >= max_seq_len) {
        throw DimensionError("pack: knowledge context of " + std::to_string(m) +
                             " tokens leaves no room for text within max_seq_len " +
                             std::to_string(max_seq_len));
    }
    PackedInput packed;
    packed.knowledge_len = m;
    int n = static_cast<int>(text_tokens.size());
    const int budget = max_seq_len - m - overhead;
    if (n > budget) {
        n = budget;
        packed.truncated = true;
    }
    packed.text_len = n;
    packed.ids.reserve(static_cast<size_t>(m + n + overhead));
    packed.segment.reserve(packed.ids.capacity());

    packed.ids.push_back(Vocab::kCls);
    packed.segment.push_back(0);
    if (context) {
        for (const std::string& token : context->tokens) {
            packed.ids.push_back(vocab.id(token));
            packed.segment.push_back(0);
        }
        packed.ids.push_back(Vocab::kSep);
        packed.segment.push_back(0);
    }
    packed.text_begin = static_cast<int>(packed.ids.size());
    for (int i = 0; i < n; ++i) {
        packed.ids.push_back(vocab.id(text_tokens[static_cast<size_t>(i)]));
        packed.segment.push_back(1);
    }
    packed.text_end = static_cast<int>(packed.ids.size()) - 1;
    packed.ids.push_back(Vocab::kSep);
    packed.segment.push_back(1);
    return packed;
}

void ModelConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
        throw ConfigError("d_model must be a positive multiple of n_heads");
    }
    if (n_layers < 1) throw ConfigError("n_layers must be positive");
    if (ffn_dim < 1) throw ConfigError("ffn_dim must be positive");
    if (max_seq_len != 128 && max_seq_len != 256) {
        throw ConfigError("max_seq_len must be 128 or 256");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    if (classifier_hidden < 1) throw ConfigError("classifier_hidden must be positive");
    conv.validate();
}

std::string ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["n_layers"] = n_layers;
    j["ffn_dim"] = ffn_dim;
    j["max_seq_len"] = max_seq_len;
    j["conv"] = {{"kernel_h", conv.kernel_h},
                 {"kernel_w", conv.kernel_w},
                 {"stride_h", conv.stride_h},
                 {"stride_w", conv.stride_w},
                 {"out_channels", conv.out_channels}};
    j["dropout"] = dropout;
    j["classifier_hidden"] = classifier_hidden;
    return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ModelConfig config;
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        config.d_model = j.at("d_model").get<int>();
        config.n_heads = j.at("n_heads").get<int>();
        config.n_layers = j.at("n_layers").get<int>();
        config.ffn_dim = j.at("ffn_dim").get<int>();
        config.max_seq_len = j.at("max_seq_len").get<int>();
        const auto& conv = j.at("conv");
        config.conv.kernel_h = conv.at("kernel_h").get<int>();
        config.conv.kernel_w = conv.at("kernel_w").get<int>();
        config.conv.stride_h = conv.at("stride_h").get<int>();
        config.conv.stride_w = conv.at("stride_w").get<int>();
        config.conv.out_channels = conv.at("out_channels").get<int>();
        config.dropout = j.at("dropout").get<double>();
        config.classifier_hidden = j.at("classifier_hidden").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    config.validate();
    return config;
}

Tensor& ModelParams::get(const std::string& name) {
    for (auto& [key, tensor] : items) {
        if (key == name) return tensor;
    }
    throw DimensionError("missing model parameter: " + name);
}

const Tensor& ModelParams::get(const std::string& name) const {
    for (const auto& [key, tensor] : items) {
        if (key == name) return tensor;
    }
    throw DimensionError("missing model parameter: " + name);
}

ModelParams ModelParams::clone() const {
    ModelParams copy;
    copy.items.reserve(items.size());
    for (const auto& [name, tensor] : items) {
        copy.items.emplace_back(name, Tensor::from_data(tensor.shape(), tensor.data(), true));
    }
    return copy;
}

void ModelParams::zero_grad() {
    for (auto& [name, tensor] : items) tensor.zero_grad();
}

namespace {

// Expected parameter names and shapes for one configuration; the single
// source of truth for init, load-time shape checks and Adam state.
std::vector<std::pair<std::string, std::vector<int>>> parameter_plan(const ModelConfig& config,
                                                                     int vocab_size) {
    const int d = config.d_model;
    std::vector<std::pair<std::string, std::vector<int>>> plan;
    plan.push_back({"embed.token", {vocab_size, d}});
    plan.push_back({"embed.position", {config.max_seq_len, d}});
    plan.push_back({"embed.segment", {2, d}});
    plan.push_back({"embed.ln.gain", {d}});
    plan.push_back({"embed.ln.bias", {d}});
    for (int layer = 0; layer < config.n_layers; ++layer) {
        std::string prefix = "enc" + std::to_string(layer) + ".";
        for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
            plan.push_back({prefix + name, {d, d}});
        }
        for (const char* name : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
            plan.push_back({prefix + name, {d}});
        }
        plan.push_back({prefix + "ln1.gain", {d}});
        plan.push_back({prefix + "ln1.bias", {d}});
        plan.push_back({prefix + "ffn.w1", {d, config.ffn_dim}});
        plan.push_back({prefix + "ffn.b1", {config.ffn_dim}});
        plan.push_back({prefix + "ffn.w2", {config.ffn_dim, d}});
        plan.push_back({prefix + "ffn.b2", {d}});
        plan.push_back({prefix + "ln2.gain", {d}});
        plan.push_back({prefix + "ln2.bias", {d}});
    }
    plan.push_back({"conv.kernels",
                    {config.conv.out_channels, config.conv.kernel_h, config.conv.kernel_w}});
    const int conv_features = config.conv.out_channels * config.conv.out_w(d);
    plan.push_back({"cls.w1", {conv_features, config.classifier_hidden}});
    plan.push_back({"cls.b1", {config.classifier_hidden}});
    plan.push_back({"cls.w2", {config.classifier_hidden, 3}});
    plan.push_back({"cls.b2", {3}});
    return plan;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, int vocab_size, Rng& rng) {
    config.validate();
    if (vocab_size < 4) throw ConfigError("vocab must include the reserved tokens");
    ModelParams params;
    for (const auto& [name, shape] : parameter_plan(config, vocab_size)) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        std::vector<double> data(n, 0.0);
        const std::string leaf = name.substr(name.rfind('.') + 1);
        if (leaf == "gain") {
            data.assign(n, 1.0);
        } else if (leaf == "bias" || (!name.starts_with("embed.") && leaf[0] == 'b')) {
            // biases start at zero
        } else if (name == "conv.kernels") {
            // Identity-structured start: each channel passes one stride
            // phase of the center row through, plus small noise. The
            // head begins as a near-identity map and learns its
            // re-contextualization delta from there.
            for (double& v : data) v = rng.normal(0.0, 0.02);
            const int kh = config.conv.kernel_h, kw = config.conv.kernel_w;
            const int center_h = (kh - 1) / 2, center_w = (kw - 1) / 2;
            for (int c = 0; c < config.conv.out_channels; ++c) {
                const int phase = config.conv.stride_w > 1 ? c % config.conv.stride_w : 0;
                const int v_pos = std::min(kw - 1, center_w + phase);
                data[(static_cast<size_t>(c) * kh + center_h) * kw + v_pos] += 1.0;
            }
        } else if (name.starts_with("embed.")) {
            for (double& v : data) v = rng.normal(0.0, 0.1);
        } else {
            // Xavier-uniform over (fan_in, fan_out).
            double fan_in, fan_out;
            if (shape.size() == 3) {
                fan_in = static_cast<double>(shape[1]) * shape[2];
                fan_out = static_cast<double>(shape[0]) * shape[1] * shape[2];
            } else {
                fan_in = static_cast<double>(shape[0]);
                fan_out = static_cast<double>(shape[1]);
            }
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            for (double& v : data) v = (rng.uniform() * 2.0 - 1.0) * bound;
        }
        params.items.emplace_back(name, Tensor::from_data(shape, std::move(data), true));
    }
    return params;
}

void ModelParams::save(std::ostream& out) const { save_checkpoint(out, items); }

ModelParams ModelParams::load(std::istream& in, const ModelConfig& config, int vocab_size) {
    ModelParams params;
    params.items = load_checkpoint(in);
    auto plan = parameter_plan(config, vocab_size);
    if (plan.size() != params.items.size()) {
        throw DimensionError("checkpoint has " + std::to_string(params.items.size()) +
                             " parameters, config expects " + std::to_string(plan.size()));
    }
    for (size_t i = 0; i < plan.size(); ++i) {
        if (params.items[i].first != plan[i].first) {
            throw DimensionError("checkpoint parameter " + std::to_string(i) + " is `" +
                                 params.items[i].first + "`, config expects `" + plan[i].first +
                                 "`");
        }
        if (params.items[i].second.shape() != plan[i].second) {
            std::string expected = "[";
            for (size_t d = 0; d < plan[i].second.size(); ++d) {
                if (d) expected += "x";
                expected += std::to_string(plan[i].second[d]);
            }
            expected += "]";
            throw DimensionError("checkpoint parameter `" + plan[i].first + "` has shape " +
                                 params.items[i].second.shape_string() + ", config expects " +
                                 expected);
        }
    }
    return params;
}

namespace {

// Inverted dropout on a tensor; mask is a constant in the graph.
Tensor apply_dropout(const Tensor& x, double rate, bool train_mode, Rng* rng) {
    if (!train_mode || rate <= 0.0 || rng == nullptr) return x;
    std::vector<double> mask(x.size());
    const double keep = 1.0 - rate;
    for (double& v : mask) v = rng->uniform() < keep ? 1.0 / keep : 0.0;
    return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

struct EncodeResult {
    Tensor hidden;  // [T x d]
    std::vector<std::vector<std::vector<double>>> attention;  // [layer][head][T*T]
};

EncodeResult run_encoder(const PackedInput& input, const ModelParams& params,
                         const ModelConfig& config, bool train_mode, Rng* dropout_rng,
                         bool want_trace) {
    const int t = static_cast<int>(input.ids.size());
    const int d = config.d_model;
    if (t > config.max_seq_len) {
        throw DimensionError("packed length " + std::to_string(t) + " exceeds max_seq_len " +
                             std::to_string(config.max_seq_len));
    }
    std::vector<int> positions(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) positions[static_cast<size_t>(i)] = i;

    Tensor x = add(add(gather_rows(params.get("embed.token"), input.ids),
                       gather_rows(params.get("embed.position"), positions)),
                   gather_rows(params.get("embed.segment"), input.segment));
    x = layer_norm(x, params.get("embed.ln.gain"), params.get("embed.ln.bias"));
    x = apply_dropout(x, config.dropout, train_mode, dropout_rng);

    EncodeResult result;
    const int heads = config.n_heads;
    const int dh = d / heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int layer = 0; layer < config.n_layers; ++layer) {
        const std::string prefix = "enc" + std::to_string(layer) + ".";
        Tensor q = add_bias(matmul(x, params.get(prefix + "attn.wq")), params.get(prefix + "attn.bq"));
        Tensor k = add_bias(matmul(x, params.get(prefix + "attn.wk")), params.get(prefix + "attn.bk"));
        Tensor v = add_bias(matmul(x, params.get(prefix + "attn.wv")), params.get(prefix + "attn.bv"));

        std::vector<std::vector<double>> layer_attention;
        std::vector<Tensor> head_outputs;
        head_outputs.reserve(static_cast<size_t>(heads));
        for (int head = 0; head < heads; ++head) {
            Tensor qh = slice_cols(q, head * dh, dh);
            Tensor kh = slice_cols(k, head * dh, dh);
            Tensor vh = slice_cols(v, head * dh, dh);
            Tensor scores = scale(matmul(qh, transpose(kh)), attn_scale);
            Tensor weights = softmax(scores);
            if (want_trace) layer_attention.push_back(weights.data());
            head_outputs.push_back(matmul(weights, vh));
        }
        if (want_trace) result.attention.push_back(std::move(layer_attention));

        Tensor attn_out = add_bias(matmul(concat(head_outputs, 1), params.get(prefix + "attn.wo")),
                                   params.get(prefix + "attn.bo"));
        attn_out = apply_dropout(attn_out, config.dropout, train_mode, dropout_rng);
        x = layer_norm(add(x, attn_out), params.get(prefix + "ln1.gain"),
                       params.get(prefix + "ln1.bias"));

        Tensor ffn = add_bias(
            matmul(gelu(add_bias(matmul(x, params.get(prefix + "ffn.w1")),
                                 params.get(prefix + "ffn.b1"))),
                   params.get(prefix + "ffn.w2")),
            params.get(prefix + "ffn.b2"));
        ffn = apply_dropout(ffn, config.dropout, train_mode, dropout_rng);
        x = layer_norm(add(x, ffn), params.get(prefix + "ln2.gain"),
                       params.get(prefix + "ln2.bias"));
    }
    result.hidden = x;
    return result;
}

}  // namespace

Tensor classify_features(const Tensor& features, const ModelParams& params) {
    Tensor hidden = gelu(add_bias(matmul(features, params.get("cls.w1")), params.get("cls.b1")));
    return add_bias(matmul(hidden, params.get("cls.w2")), params.get("cls.b2"));
}

Tensor encode(const PackedInput& input, const ModelParams& params, const ModelConfig& config) {
    return run_encoder(input, params, config, false, nullptr, false).hidden;
}

ModelOutput model_forward(const PackedInput& input, const ModelParams& params,
                          const ModelConfig& config, bool train_mode, Rng* dropout_rng,
                          bool want_trace, const Vocab* vocab) {
    EncodeResult encoded = run_encoder(input, params, config, train_mode, dropout_rng, want_trace);
    const int t = static_cast<int>(input.ids.size());

    // The [T x d] encoder output is one 2-D plane for the conv head.
    Tensor plane = reshape(encoded.hidden, {1, t, config.d_model});
    Tensor conv_out = conv2d_circular(plane, params.get("conv.kernels"), config.conv);
    Tensor features = channels_to_rows(conv_out);
    ModelOutput output{classify_features(features, params), std::nullopt};

    if (want_trace) {
        AttentionTrace trace;
        trace.seq_len = t;
        trace.weights = std::move(encoded.attention);
        if (vocab) {
            trace.tokens.reserve(static_cast<size_t>(t));
            for (int id : input.ids) trace.tokens.push_back(vocab->token(id));
        }
        output.trace = std::move(trace);
    }
    return output;
}

std::vector<BioTag> logits_to_text_tags(const Tensor& logits, const PackedInput& input) {
    if (logits.rank() != 2 || logits.shape()[1] != 3 ||
        logits.shape()[0] != static_cast<int>(input.ids.size())) {
        throw DimensionError("logits " + logits.shape_string() + " do not match packed length " +
                             std::to_string(input.ids.size()));
    }
    std::vector<BioTag> tags;
    tags.reserve(static_cast<size_t>(input.text_len));
    for (int i = input.text_begin; i <= input.text_end; ++i) {
        const double* row = logits.data().data() + static_cast<size_t>(i) * 3;
        int best = 0;
        for (int c = 1; c < 3; ++c) {
            if (row[c] > row[best]) best = c;
        }
        tags.push_back(static_cast<BioTag>(best));
    }
    return tags;
}

std::vector<ProbeResult> probe_attention(
    const ModelParams& params, const ModelConfig& config, const Vocab& vocab,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& probes,
    const std::vector<std::string>& text_tokens) {
    std::vector<ProbeResult> results;
    for (const auto& [name, probe_tokens] : probes) {
        KnowledgeContext context;
        context.kind = ContextKind::Question;
        context.entity_type = name;
        context.tokens = probe_tokens;
        ProbeResult result;
        result.probe_name = name;
        result.input = pack(probe_tokens.empty() ? nullptr : &context, text_tokens, vocab,
                            config.max_seq_len);
        ModelOutput output =
            model_forward(result.input, params, config, false, nullptr, true, &vocab);
        result.trace = std::move(*output.trace);

        const int t = result.trace.seq_len;
        const int m = result.input.knowledge_len;
        const int n = result.input.text_len;
        for (const auto& layer : result.trace.weights) {
            std::vector<std::vector<double>> layer_blocks;
            for (const auto& head : layer) {
                std::vector<double> block(static_cast<size_t>(m) * n);
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) {
                        // Knowledge tokens start after CLS.
                        block[static_cast<size_t>(i) * n + j] =
                            head[static_cast<size_t>(1 + i) * t + result.input.text_begin + j];
                    }
                }
                layer_blocks.push_back(std::move(block));
            }
            result.knowledge_to_text.push_back(std::move(layer_blocks));
        }
        results.push_back(std::move(result));
    }
    return results;
}

}  // namespace kgner
