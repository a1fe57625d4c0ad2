// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace adfg::corpus {

// UTF-8 helpers. Lengths are in code points.
bool valid_utf8(std::string_view text);
std::size_t utf8_length(std::string_view text);
bool is_space(char c);

struct Sentence {
    std::string text;       // starts and ends with a non-space character
    std::string separator;  // whitespace that followed it
};

// leading + Σ (text + separator) reproduces the input exactly.
struct SentenceSplit {
    std::string leading;
    std::vector<Sentence> sentences;

    [[nodiscard]] std::string joined() const;
};

// A sentence ends after a run of . ! ? … (optionally followed by closing quotes)
// when whitespace or the end of input follows.
SentenceSplit split_sentences(std::string_view text);

enum class SentenceRule { too_few_words, word_too_long, bad_terminator, boilerplate };
enum class DocumentRule { too_few_sentences, too_short, too_long, bad_word, not_italian };

std::string_view to_string(SentenceRule rule);
std::string_view to_string(DocumentRule rule);

inline constexpr std::size_t kMinWords = 3;
inline constexpr std::size_t kMaxWordChars = 1000;
inline constexpr std::size_t kMinSentences = 5;
inline constexpr std::size_t kMinChars = 500;
inline constexpr std::size_t kMaxChars = 50000;

// Lowercase substrings marking script code, placeholder text and legal boilerplate.
const std::vector<std::string>& boilerplate_patterns();

// Rules are tried in declaration order; the first failure is returned.
std::optional<SentenceRule> sentence_filter(std::string_view sentence);

using LanguagePredicate = std::function<bool(std::string_view)>;

// Character-trigram rank profiles compared by out-of-place distance against
// built-in profiles for Italian and five other European languages.
class TrigramLanguageId {
public:
    TrigramLanguageId();
    // Closest language code ("it", "en", "es", "fr", "de", "pt").
    [[nodiscard]] std::string identify(std::string_view text) const;
    [[nodiscard]] bool is_italian(std::string_view text) const { return identify(text) == "it"; }

private:
    std::map<std::string, std::map<std::string, std::size_t>> profiles_;
};

LanguagePredicate default_language_predicate();

struct BadWordList {
    std::set<std::string> words;                // single lowercase words
    std::vector<std::vector<std::string>> phrases;  // multi-word entries

    // One entry per line; blank lines and lines starting with '#' are ignored.
    static BadWordList parse(std::string_view text);
    static BadWordList load(const std::string& path);
    [[nodiscard]] bool empty() const { return words.empty() && phrases.empty(); }
    // Whole-word, case-insensitive match.
    [[nodiscard]] bool hit(std::string_view text) const;
};

struct DocumentVerdict {
    std::optional<DocumentRule> rule;  // empty when accepted
    std::string clean_text;            // kept sentences joined by single spaces
    std::size_t kept_sentences = 0;
    std::size_t dropped_sentences = 0;
    std::map<SentenceRule, std::size_t> sentence_rejections;

    [[nodiscard]] bool accepted() const { return !rule.has_value(); }
};

struct FilterOptions {
    BadWordList bad_words;
    LanguagePredicate is_italian;  // null selects the trigram default
    bool keep_trail = true;
};

// Sentence filtering then document rules in fixed order:
// sentence count, minimum length, maximum length, bad words, language.
DocumentVerdict filter_document(std::string_view text, const FilterOptions& options);

struct TrailEntry {
    std::string id;
    bool accepted = false;
    std::string rule;  // empty when accepted
    std::map<std::string, std::size_t> sentence_rules;
};

struct FilterReport {
    std::size_t seen = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::map<std::string, std::size_t> document_rules;
    std::map<std::string, std::size_t> sentence_rules;
    std::vector<TrailEntry> trail;
    // Records that could not be decoded, by 1-based line number.
    std::vector<std::pair<std::size_t, std::string>> errors;

    [[nodiscard]] nlohmann::json to_json() const;
};

// JSONL in, JSONL out; line order is preserved and only one record is held at a time.
// Undecodable lines are reported and skipped.
FilterReport run_pipeline(std::istream& in, std::ostream& out, const FilterOptions& options);

}  // namespace adfg::corpus
