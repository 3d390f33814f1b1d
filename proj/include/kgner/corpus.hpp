#ifndef KGNER_CORPUS_HPP
#define KGNER_CORPUS_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kgner/common.hpp"

namespace kgner {

// Class indices are fixed: B=0, I=1, O=2.
enum class BioTag : uint8_t { B = 0, I = 1, O = 2 };

char bio_tag_char(BioTag t);
BioTag bio_tag_from_char(char c);

// An entity type as declared by one corpus. Names are canonical
// lower-case and never contain tabs or newlines.
struct EntityType {
    std::string name;
    std::string corpus_id;

    bool operator==(const EntityType&) const = default;
};

void validate_entity_type_name(const std::string& name);

// Inclusive token-index span of one entity mention.
struct EntitySpan {
    int start = 0;
    int end = 0;
    std::string type;  // entity-type name

    bool operator==(const EntitySpan&) const = default;
    auto operator<=>(const EntitySpan&) const = default;
};

// A tokenized sentence with its gold spans. Spans are kept sorted by
// (type, start, end); spans of the same type never overlap, spans of
// different types may nest.
struct TaggedSentence {
    std::vector<std::string> tokens;
    std::vector<EntitySpan> spans;
    std::string doc_id;
    std::string corpus_id;

    bool operator==(const TaggedSentence&) const = default;
};

// Sorts spans, rejects duplicate/overlapping same-type spans and
// out-of-range indices, rejects empty sentences.
void validate_sentence(TaggedSentence& sentence);

struct CorpusParseResult {
    std::vector<TaggedSentence> sentences;
    // One line per repaired dangling I tag, for the diagnostic stream.
    std::vector<std::string> warnings;
};

// CoNLL-style BIO column format: `token<TAB or space>tag` lines, blank
// line between sentences, tags O / B-<type> / I-<type>. A dangling
// I-<type> is repaired to B-<type> and reported as a warning.
CorpusParseResult parse_conll(std::istream& input, const std::string& corpus_id);

// Standoff format: text stream has one whitespace-tokenized sentence per
// line; annotation stream lines are `line_index start_tok end_tok type`.
std::vector<TaggedSentence> parse_standoff(std::istream& text,
                                           std::istream& annotations,
                                           const std::string& corpus_id);

// Per-token B/I/O projection of one entity type. Spans of other types
// map to O.
std::vector<BioTag> spans_to_tags(const TaggedSentence& sentence, const std::string& type_name);

// Entity type names present in a sentence collection, sorted unique.
std::vector<std::string> collect_type_names(const std::vector<TaggedSentence>& sentences);

}  // namespace kgner

#endif  // KGNER_CORPUS_HPP
