#ifndef KGNER_MODEL_HPP
#define KGNER_MODEL_HPP

#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgner/dataset.hpp"
#include "kgner/tensor.hpp"

namespace kgner {

// Whole-word vocabulary built from the training split. Reserved ids are
// fixed: PAD=0, UNK=1, CLS=2, SEP=3.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;

    // Reserved tokens only.
    Vocab();

    static Vocab build(const std::vector<TrainingRecord>& train_records, int min_count = 2);

    int id(const std::string& token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }

    void save(std::ostream& out) const;
    static Vocab load(std::istream& in);

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

// {CLS} knowledge {SEP} text {SEP} with per-token segment flags
// (knowledge 0, text 1, specials follow the preceding segment, CLS 0).
// knowledge_len = 0 means the no-knowledge packing {CLS} text {SEP}.
struct PackedInput {
    std::vector<int> ids;
    std::vector<int> segment;
    int text_begin = 0;     // inclusive index into ids
    int text_end = 0;       // inclusive
    int knowledge_len = 0;  // m
    int text_len = 0;       // n (tokens kept after truncation)
    bool truncated = false;
};

// Text is truncated from the right when the budget overflows; knowledge
// is never truncated (exceeding the budget is an error).
PackedInput pack(const KnowledgeContext* context, const std::vector<std::string>& text_tokens,
                 const Vocab& vocab, int max_seq_len);

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 2;
    int ffn_dim = 128;
    int max_seq_len = 128;
    ConvSpec conv;
    double dropout = 0.1;
    int classifier_hidden = 64;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// Attention weights per (layer, head): row-stochastic T x T matrices
// aligned with the packed token strings.
struct AttentionTrace {
    int seq_len = 0;
    std::vector<std::string> tokens;
    // weights[layer][head] is a row-major seq_len x seq_len matrix.
    std::vector<std::vector<std::vector<double>>> weights;
};

// Named parameter set; order is fixed so checkpoints are stable.
struct ModelParams {
    std::vector<std::pair<std::string, Tensor>> items;

    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    ModelParams clone() const;
    void zero_grad();

    static ModelParams init(const ModelConfig& config, int vocab_size, Rng& rng);

    void save(std::ostream& out) const;
    // Shape-checks the checkpoint against the config and vocab size.
    static ModelParams load(std::istream& in, const ModelConfig& config, int vocab_size);
};

struct ModelOutput {
    Tensor logits;  // [T x 3]
    std::optional<AttentionTrace> trace;
};

// Embeddings -> encoder blocks -> circular-conv re-contextualization ->
// per-token 3-way classifier. Dropout is active only in train mode.
ModelOutput model_forward(const PackedInput& input, const ModelParams& params,
                          const ModelConfig& config, bool train_mode, Rng* dropout_rng = nullptr,
                          bool want_trace = false, const Vocab* vocab = nullptr);

// Encoder output before the re-contextualization head ([T x d_model]);
// used to isolate the conv head's contribution.
Tensor encode(const PackedInput& input, const ModelParams& params, const ModelConfig& config);
// The classifier applied directly to per-token features.
Tensor classify_features(const Tensor& features, const ModelParams& params);

// Argmax tags over the packed sequence restricted to the text range.
std::vector<BioTag> logits_to_text_tags(const Tensor& logits, const PackedInput& input);

struct ProbeResult {
    std::string probe_name;
    PackedInput input;
    AttentionTrace trace;
    // knowledge-to-text attention sub-blocks per (layer, head):
    // m rows (knowledge positions) x n cols (text positions).
    std::vector<std::vector<std::vector<double>>> knowledge_to_text;
};

// Runs inference with each probe context over one sentence and extracts
// the knowledge-to-text attention sub-blocks.
std::vector<ProbeResult> probe_attention(const ModelParams& params, const ModelConfig& config,
                                         const Vocab& vocab,
                                         const std::vector<std::pair<std::string, std::vector<std::string>>>& probes,
                                         const std::vector<std::string>& text_tokens);

}  // namespace kgner

#endif  // KGNER_MODEL_HPP
