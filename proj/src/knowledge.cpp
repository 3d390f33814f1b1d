#include "kgner/knowledge.hpp"

#include <algorithm>
#include <istream>
#include <sstream>
#include <unordered_map>

namespace kgner {

std::string context_kind_name(ContextKind kind) {
    switch (kind) {
        case ContextKind::EntityName: return "entity";
        case ContextKind::Question: return "question";
        case ContextKind::Definition: return "definition";
        case ContextKind::Examples: return "examples";
        case ContextKind::All: return "all";
    }
    return "?";
}

ContextKind context_kind_from_name(const std::string& name) {
    for (ContextKind k : kAllContextKinds) {
        if (context_kind_name(k) == name) return k;
    }
    throw ConfigError("unknown context kind: " + name);
}

void DefinitionRegistry::add(const std::string& corpus_id, const std::string& type_name,
                             std::string definition) {
    definitions_[{corpus_id, type_name}] = std::move(definition);
}

const std::string& DefinitionRegistry::lookup(const std::string& corpus_id,
                                              const std::string& type_name) const {
    auto it = definitions_.find({corpus_id, type_name});
    if (it == definitions_.end()) {
        throw ConfigError("no definition for entity type `" + type_name + "` of corpus `" +
                          corpus_id + "`");
    }
    return it->second;
}

bool DefinitionRegistry::contains(const std::string& corpus_id,
                                  const std::string& type_name) const {
    return definitions_.count({corpus_id, type_name}) > 0;
}

DefinitionRegistry DefinitionRegistry::load(std::istream& input) {
    DefinitionRegistry registry;
    std::string line;
    size_t line_no = 0;
    while (std::getline(input, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t tab1 = line.find('\t');
        size_t tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) {
            throw ParseError("definitions line " + std::to_string(line_no) +
                             ": expected corpus<TAB>type<TAB>definition");
        }
        std::string corpus = line.substr(0, tab1);
        std::string type = to_lower(line.substr(tab1 + 1, tab2 - tab1 - 1));
        std::string definition = line.substr(tab2 + 1);
        validate_entity_type_name(type);
        registry.add(corpus, type, std::move(definition));
    }
    return registry;
}

std::string DefinitionRegistry::serialize() const {
    std::string out;
    for (const auto& [key, definition] : definitions_) {
        out += key.first + "\t" + key.second + "\t" + definition + "\n";
    }
    return out;
}

ExampleList mine_examples(const std::vector<TaggedSentence>& train_sentences,
                          const EntityType& entity_type) {
    std::unordered_map<std::string, long> counts;
    for (const TaggedSentence& sentence : train_sentences) {
        for (const EntitySpan& span : sentence.spans) {
            if (span.type != entity_type.name) continue;
            std::string surface = sentence.tokens[static_cast<size_t>(span.start)];
            for (int i = span.start + 1; i <= span.end; ++i) {
                surface += " ";
                surface += sentence.tokens[static_cast<size_t>(i)];
            }
            ++counts[surface];
        }
    }
    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > 10) ranked.resize(10);
    return ExampleList{entity_type.name, std::move(ranked)};
}

namespace {

std::string render_question(const std::string& name) {
    return "what are the " + name + " mentioned in the text ?";
}

std::string render_definition(const EntityType& type, const DefinitionRegistry& registry) {
    return type.name + " : " + registry.lookup(type.corpus_id, type.name);
}

std::string render_examples(const EntityType& type, const ExampleList& examples,
                            bool allow_empty) {
    if (examples.examples.empty() && !allow_empty) {
        throw ConfigError("no mined examples for entity type `" + type.name + "` of corpus `" +
                          type.corpus_id + "` (pass the empty-examples override to allow)");
    }
    std::string out = type.name + " examples :";
    for (size_t i = 0; i < examples.examples.size(); ++i) {
        out += i == 0 ? " " : " , ";
        out += examples.examples[i].first;
    }
    return out;
}

}  // namespace

KnowledgeContext render_context(ContextKind kind, const EntityType& entity_type,
                                const DefinitionRegistry& registry, const ExampleList& examples,
                                bool allow_empty_examples) {
    validate_entity_type_name(entity_type.name);
    std::string rendered;
    switch (kind) {
        case ContextKind::EntityName:
            rendered = entity_type.name;
            break;
        case ContextKind::Question:
            rendered = render_question(entity_type.name);
            break;
        case ContextKind::Definition:
            rendered = render_definition(entity_type, registry);
            break;
        case ContextKind::Examples:
            rendered = render_examples(entity_type, examples, allow_empty_examples);
            break;
        case ContextKind::All:
            rendered = render_question(entity_type.name) + " " +
                       render_definition(entity_type, registry) + " " +
                       render_examples(entity_type, examples, allow_empty_examples);
            break;
    }
    KnowledgeContext context;
    context.kind = kind;
    context.entity_type = entity_type.name;
    context.tokens = split_whitespace(to_lower(rendered));
    if (context.tokens.empty()) {
        throw ConfigError("rendered context is empty for entity type `" + entity_type.name + "`");
    }
    return context;
}

bool context_mentions_type(const KnowledgeContext& context) {
    std::vector<std::string> name_tokens = split_whitespace(to_lower(context.entity_type));
    if (name_tokens.empty() || context.tokens.size() < name_tokens.size()) return false;
    for (size_t i = 0; i + name_tokens.size() <= context.tokens.size(); ++i) {
        bool match = true;
        for (size_t j = 0; j < name_tokens.size(); ++j) {
            if (context.tokens[i + j] != name_tokens[j]) {
                match = false;
                break;
            }
        }
        if (match) return true;
    }
    return false;
}

}  // namespace kgner
