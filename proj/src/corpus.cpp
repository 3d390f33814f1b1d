#include "kgner/corpus.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <set>
#include <sstream>

namespace kgner {

char bio_tag_char(BioTag t) {
    switch (t) {
        case BioTag::B: return 'B';
        case BioTag::I: return 'I';
        case BioTag::O: return 'O';
    }
    return '?';
}

BioTag bio_tag_from_char(char c) {
    switch (c) {
        case 'B': return BioTag::B;
        case 'I': return BioTag::I;
        case 'O': return BioTag::O;
    }
    throw ParseError(std::string("invalid BIO tag character: '") + c + "'");
}

void validate_entity_type_name(const std::string& name) {
    if (name.empty()) throw ParseError("entity type name is empty");
    if (name.find('\t') != std::string::npos || name.find('\n') != std::string::npos) {
        throw ParseError("entity type name contains tab or newline: " + name);
    }
}

void validate_sentence(TaggedSentence& sentence) {
    if (sentence.tokens.empty()) {
        throw ParseError("sentence has no tokens (doc " + sentence.doc_id + ")");
    }
    std::sort(sentence.spans.begin(), sentence.spans.end(),
              [](const EntitySpan& a, const EntitySpan& b) {
                  return std::tie(a.type, a.start, a.end) < std::tie(b.type, b.start, b.end);
              });
    const int n = static_cast<int>(sentence.tokens.size());
    for (size_t i = 0; i < sentence.spans.size(); ++i) {
        const EntitySpan& s = sentence.spans[i];
        validate_entity_type_name(s.type);
        if (s.start < 0 || s.start > s.end || s.end >= n) {
            throw ParseError("span (" + std::to_string(s.start) + "," + std::to_string(s.end) +
                             "," + s.type + ") out of range for " + std::to_string(n) +
                             " tokens (doc " + sentence.doc_id + ")");
        }
        if (i > 0) {
            const EntitySpan& prev = sentence.spans[i - 1];
            if (prev.type == s.type && s.start <= prev.end) {
                throw ParseError("overlapping spans of type " + s.type + ": (" +
                                 std::to_string(prev.start) + "," + std::to_string(prev.end) +
                                 ") and (" + std::to_string(s.start) + "," +
                                 std::to_string(s.end) + ") (doc " + sentence.doc_id + ")");
            }
        }
    }
}

namespace {

struct RawToken {
    std::string token;
    char tag = 'O';        // B, I, O
    std::string type;      // empty for O
};

// Extracts spans from one sentence's tag column, repairing dangling I
// tags to B. Appends one warning per repair.
TaggedSentence finish_sentence(std::vector<RawToken>& raw, const std::string& corpus_id,
                               size_t sentence_index, size_t first_line,
                               std::vector<std::string>& warnings) {
    TaggedSentence sentence;
    sentence.corpus_id = corpus_id;
    sentence.doc_id = std::to_string(sentence_index);
    sentence.tokens.reserve(raw.size());
    for (const RawToken& t : raw) sentence.tokens.push_back(t.token);

    // Open span per type; IOB2 repair happens here.
    std::map<std::string, std::pair<int, int>> open;  // type -> (start, end)
    std::string open_type;                            // type continued by I at previous token
    for (int i = 0; i < static_cast<int>(raw.size()); ++i) {
        RawToken& t = raw[i];
        if (t.tag == 'I') {
            bool continues = !open_type.empty() && open_type == t.type &&
                             open.count(t.type) && open[t.type].second == i - 1;
            if (!continues) {
                warnings.push_back("repaired dangling I-" + t.type + " at token " +
                                   std::to_string(i) + " of sentence " +
                                   std::to_string(sentence_index) + " (line " +
                                   std::to_string(first_line + static_cast<size_t>(i)) + ")");
                t.tag = 'B';
            }
        }
        if (t.tag == 'B') {
            if (open.count(t.type)) {
                sentence.spans.push_back({open[t.type].first, open[t.type].second, t.type});
            }
            open[t.type] = {i, i};
            open_type = t.type;
        } else if (t.tag == 'I') {
            open[t.type].second = i;
            open_type = t.type;
        } else {
            for (auto& [type, se] : open) {
                sentence.spans.push_back({se.first, se.second, type});
            }
            open.clear();
            open_type.clear();
        }
    }
    for (auto& [type, se] : open) {
        sentence.spans.push_back({se.first, se.second, type});
    }
    validate_sentence(sentence);
    return sentence;
}

bool is_blank(const std::string& line) {
    for (char c : line) {
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

}  // namespace

CorpusParseResult parse_conll(std::istream& input, const std::string& corpus_id) {
    CorpusParseResult result;
    std::vector<RawToken> raw;
    std::string line;
    size_t line_no = 0;
    size_t sentence_first_line = 1;
    size_t sentence_index = 0;

    auto flush = [&]() {
        if (raw.empty()) return;
        result.sentences.push_back(
            finish_sentence(raw, corpus_id, sentence_index, sentence_first_line, result.warnings));
        raw.clear();
        ++sentence_index;
    };

    while (std::getline(input, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (is_blank(line)) {
            flush();
            continue;
        }
        if (raw.empty()) sentence_first_line = line_no;
        std::vector<std::string> fields = split_whitespace(line);
        if (fields.size() != 2) {
            throw ParseError("line " + std::to_string(line_no) + ": expected `token tag`, got " +
                             std::to_string(fields.size()) + " fields");
        }
        RawToken t;
        t.token = fields[0];
        const std::string& tag = fields[1];
        if (tag == "O") {
            t.tag = 'O';
        } else if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
            t.tag = tag[0];
            t.type = to_lower(tag.substr(2));
            validate_entity_type_name(t.type);
        } else {
            throw ParseError("line " + std::to_string(line_no) + ": invalid tag `" + tag + "`");
        }
        raw.push_back(std::move(t));
    }
    flush();
    return result;
}

std::vector<TaggedSentence> parse_standoff(std::istream& text, std::istream& annotations,
                                           const std::string& corpus_id) {
    std::vector<TaggedSentence> sentences;
    std::string line;
    size_t line_no = 0;
    while (std::getline(text, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        TaggedSentence s;
        s.corpus_id = corpus_id;
        s.doc_id = std::to_string(line_no);
        s.tokens = split_whitespace(line);
        if (s.tokens.empty()) {
            throw ParseError("text line " + std::to_string(line_no) + " is empty");
        }
        sentences.push_back(std::move(s));
        ++line_no;
    }

    size_t ann_no = 0;
    while (std::getline(annotations, line)) {
        ++ann_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (is_blank(line)) continue;
        std::vector<std::string> fields = split_whitespace(line);
        if (fields.size() != 4) {
            throw ParseError("annotation " + std::to_string(ann_no) +
                             ": expected `line start end type`, got `" + line + "`");
        }
        long idx, start, end;
        try {
            idx = std::stol(fields[0]);
            start = std::stol(fields[1]);
            end = std::stol(fields[2]);
        } catch (const std::exception&) {
            throw ParseError("annotation " + std::to_string(ann_no) + ": non-numeric index in `" +
                             line + "`");
        }
        if (idx < 0 || idx >= static_cast<long>(sentences.size())) {
            throw ParseError("annotation " + std::to_string(ann_no) + ": line index " +
                             std::to_string(idx) + " out of range (" +
                             std::to_string(sentences.size()) + " lines)");
        }
        TaggedSentence& s = sentences[static_cast<size_t>(idx)];
        long n = static_cast<long>(s.tokens.size());
        if (start < 0 || start > end || end >= n) {
            throw ParseError("annotation " + std::to_string(ann_no) + ": token range " +
                             std::to_string(start) + ".." + std::to_string(end) +
                             " out of range for line " + std::to_string(idx) + " (" +
                             std::to_string(n) + " tokens)");
        }
        std::string type = to_lower(fields[3]);
        validate_entity_type_name(type);
        s.spans.push_back({static_cast<int>(start), static_cast<int>(end), type});
    }

    for (TaggedSentence& s : sentences) validate_sentence(s);
    return sentences;
}

std::vector<BioTag> spans_to_tags(const TaggedSentence& sentence, const std::string& type_name) {
    std::vector<BioTag> tags(sentence.tokens.size(), BioTag::O);
    for (const EntitySpan& span : sentence.spans) {
        if (span.type != type_name) continue;
        tags[static_cast<size_t>(span.start)] = BioTag::B;
        for (int i = span.start + 1; i <= span.end; ++i) {
            tags[static_cast<size_t>(i)] = BioTag::I;
        }
    }
    return tags;
}

std::vector<std::string> collect_type_names(const std::vector<TaggedSentence>& sentences) {
    std::set<std::string> names;
    for (const TaggedSentence& s : sentences) {
        for (const EntitySpan& span : s.spans) names.insert(span.type);
    }
    return {names.begin(), names.end()};
}

}  // namespace kgner
