#ifndef KGNER_KNOWLEDGE_HPP
#define KGNER_KNOWLEDGE_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kgner/corpus.hpp"

namespace kgner {

enum class ContextKind : uint8_t { EntityName, Question, Definition, Examples, All };

inline constexpr ContextKind kAllContextKinds[] = {
    ContextKind::EntityName, ContextKind::Question, ContextKind::Definition,
    ContextKind::Examples, ContextKind::All};

std::string context_kind_name(ContextKind kind);
ContextKind context_kind_from_name(const std::string& name);

// One rendered knowledge context: lower-cased, whitespace-tokenized, and
// guaranteed to mention the entity-type name.
struct KnowledgeContext {
    ContextKind kind = ContextKind::EntityName;
    std::string entity_type;
    std::vector<std::string> tokens;

    bool operator==(const KnowledgeContext&) const = default;
};

// (corpus_id, entity-type name) -> definition text. Lookups of missing
// entries fail loudly at render time.
class DefinitionRegistry {
public:
    void add(const std::string& corpus_id, const std::string& type_name, std::string definition);
    const std::string& lookup(const std::string& corpus_id, const std::string& type_name) const;
    bool contains(const std::string& corpus_id, const std::string& type_name) const;

    // Line format: corpus_id<TAB>entity_type<TAB>definition text
    static DefinitionRegistry load(std::istream& input);
    std::string serialize() const;

private:
    std::map<std::pair<std::string, std::string>, std::string> definitions_;
};

// Top surface forms of one entity type, most frequent first, ties broken
// lexicographically; at most ten entries.
struct ExampleList {
    std::string entity_type;
    std::vector<std::pair<std::string, long>> examples;

    bool operator==(const ExampleList&) const = default;
};

// Counts surface forms case-sensitively over exact token spans (joined
// by single spaces). Train split only.
ExampleList mine_examples(const std::vector<TaggedSentence>& train_sentences,
                          const EntityType& entity_type);

KnowledgeContext render_context(ContextKind kind, const EntityType& entity_type,
                                const DefinitionRegistry& registry, const ExampleList& examples,
                                bool allow_empty_examples = false);

// True when the type name's token sequence appears contiguously.
bool context_mentions_type(const KnowledgeContext& context);

}  // namespace kgner

#endif  // KGNER_KNOWLEDGE_HPP
