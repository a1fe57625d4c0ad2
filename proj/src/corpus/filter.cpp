// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/corpus/filter.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "adfg/error.hpp"
#include "language_samples.hpp"

namespace adfg::corpus {

namespace {

constexpr std::string_view kEllipsis = "\xE2\x80\xA6";
constexpr std::string_view kGuillemetClose = "\xC2\xBB";
constexpr std::string_view kRightDoubleQuote = "\xE2\x80\x9D";
constexpr std::string_view kRightSingleQuote = "\xE2\x80\x99";

bool starts_with(std::string_view s, std::size_t at, std::string_view prefix) {
    return s.substr(at, prefix.size()) == prefix;
}

// Length of the terminator at `at`, 0 if none.
std::size_t terminator_at(std::string_view s, std::size_t at) {
    const char c = s[at];
    if (c == '.' || c == '!' || c == '?') {
        return 1;
    }
    return starts_with(s, at, kEllipsis) ? kEllipsis.size() : 0;
}

std::size_t closing_quote_at(std::string_view s, std::size_t at) {
    const char c = s[at];
    if (c == '"' || c == '\'' || c == ')' || c == ']') {
        return 1;
    }
    for (const auto q : {kGuillemetClose, kRightDoubleQuote, kRightSingleQuote}) {
        if (starts_with(s, at, q)) {
            return q.size();
        }
    }
    return 0;
}

std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
    }
    return out;
}

std::vector<std::string_view> split_words(std::string_view s) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) {
            ++i;
        }
        const std::size_t start = i;
        while (i < s.size() && !is_space(s[i])) {
            ++i;
        }
        if (i > start) {
            words.push_back(s.substr(start, i - start));
        }
    }
    return words;
}

// Lowercase letter/digit runs; non-ASCII bytes count as letters so accented
// words stay whole.
std::vector<std::string> lexical_tokens(std::string_view s) {
    std::vector<std::string> tokens;
    std::string current;
    for (const char raw : s) {
        const auto u = static_cast<unsigned char>(raw);
        const bool letter = std::isalnum(u) != 0 || u >= 0x80;
        if (letter) {
            current.push_back(static_cast<char>(std::tolower(u)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

std::string last_code_point(std::string_view s) {
    std::size_t i = s.size();
    while (i > 0) {
        --i;
        if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
            break;
        }
    }
    return std::string(s.substr(i));
}

constexpr std::size_t kProfileSize = 300;

// Code points of the text, lowercased, with non-letters folded into single
// word boundaries marked '_'.
std::vector<std::string> normalized_code_points(std::string_view text) {
    std::vector<std::string> out{"_"};
    std::size_t i = 0;
    while (i < text.size()) {
        const auto u = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (u >= 0xF0) {
            len = 4;
        } else if (u >= 0xE0) {
            len = 3;
        } else if (u >= 0xC0) {
            len = 2;
        }
        len = std::min(len, text.size() - i);
        if (len == 1) {
            if (std::isalpha(u) != 0) {
                out.emplace_back(1, static_cast<char>(std::tolower(u)));
            } else if (out.back() != "_") {
                out.emplace_back("_");
            }
        } else {
            // Non-ASCII letters are kept; punctuation such as quotes and dashes is folded.
            const std::string cp(text.substr(i, len));
            const bool punct = cp == kGuillemetClose || cp == "\xC2\xAB" || cp == kRightDoubleQuote ||
                               cp == "\xE2\x80\x9C" || cp == kRightSingleQuote || cp == "\xE2\x80\x98" ||
                               cp == kEllipsis || cp == "\xE2\x80\x93" || cp == "\xE2\x80\x94" || cp == "\xC2\xA0";
            if (!punct) {
                out.push_back(cp);
            } else if (out.back() != "_") {
                out.emplace_back("_");
            }
        }
        i += len;
    }
    if (out.back() != "_") {
        out.emplace_back("_");
    }
    return out;
}

std::map<std::string, std::size_t> trigram_profile(std::string_view text) {
    const auto cps = normalized_code_points(text);
    std::map<std::string, std::size_t> counts;
    for (std::size_t i = 0; i + 2 < cps.size(); ++i) {
        std::string g = cps[i] + cps[i + 1] + cps[i + 2];
        if (g != "___") {
            ++counts[g];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::map<std::string, std::size_t> ranks;
    for (std::size_t r = 0; r < ranked.size() && r < kProfileSize; ++r) {
        ranks.emplace(ranked[r].first, r);
    }
    return ranks;
}

}  // namespace

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto u = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (u < 0x80) {
            ++i;
            continue;
        }
        if ((u & 0xE0) == 0xC0) {
            len = 2;
            cp = u & 0x1F;
        } else if ((u & 0xF0) == 0xE0) {
            len = 3;
            cp = u & 0x0F;
        } else if ((u & 0xF8) == 0xF0) {
            len = 4;
            cp = u & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) {
            return false;
        }
        for (std::size_t k = 1; k < len; ++k) {
            const auto c = static_cast<unsigned char>(s[i + k]);
            if ((c & 0xC0) != 0x80) {
                return false;
            }
            cp = (cp << 6) | (c & 0x3F);
        }
        const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
        if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            return false;
        }
        i += len;
    }
    return true;
}

std::size_t utf8_length(std::string_view s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string SentenceSplit::joined() const {
    std::string out = leading;
    for (const auto& s : sentences) {
        out += s.text;
        out += s.separator;
    }
    return out;
}

SentenceSplit split_sentences(std::string_view text) {
    SentenceSplit split;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n && is_space(text[i])) {
        ++i;
    }
    split.leading = std::string(text.substr(0, i));
    std::size_t start = i;
    std::size_t j = i;
    while (j < n) {
        const std::size_t t = terminator_at(text, j);
        if (t == 0) {
            ++j;
            continue;
        }
        std::size_t k = j + t;
        while (k < n) {
            const std::size_t more = terminator_at(text, k);
            if (more == 0) {
                break;
            }
            k += more;
        }
        while (k < n) {
            const std::size_t q = closing_quote_at(text, k);
            if (q == 0) {
                break;
            }
            k += q;
        }
        if (k < n && !is_space(text[k])) {
            j = k;
            continue;
        }
        std::size_t e = k;
        while (e < n && is_space(text[e])) {
            ++e;
        }
        split.sentences.push_back({std::string(text.substr(start, k - start)), std::string(text.substr(k, e - k))});
        start = e;
        j = e;
    }
    if (start < n) {
        std::size_t e = n;
        while (e > start && is_space(text[e - 1])) {
            --e;
        }
        split.sentences.push_back({std::string(text.substr(start, e - start)), std::string(text.substr(e))});
    }
    return split;
}

std::string_view to_string(SentenceRule rule) {
    switch (rule) {
        case SentenceRule::too_few_words:
            return "too_few_words";
        case SentenceRule::word_too_long:
            return "word_too_long";
        case SentenceRule::bad_terminator:
            return "bad_terminator";
        case SentenceRule::boilerplate:
            return "boilerplate";
    }
    return "unknown";
}

std::string_view to_string(DocumentRule rule) {
    switch (rule) {
        case DocumentRule::too_few_sentences:
            return "too_few_sentences";
        case DocumentRule::too_short:
            return "too_short";
        case DocumentRule::too_long:
            return "too_long";
        case DocumentRule::bad_word:
            return "bad_word";
        case DocumentRule::not_italian:
            return "not_italian";
    }
    return "unknown";
}

const std::vector<std::string>& boilerplate_patterns() {
    static const std::vector<std::string> patterns{
        "javascript", "function(", "function (", "document.", "window.", "var ", "{", "}", "=>", "</", "/>",
        "lorem ipsum", "dolor sit amet", "cookie", "privacy policy", "informativa sulla privacy",
        "informativa privacy", "termini e condizioni", "terms of use", "terms and conditions",
        "tutti i diritti riservati", "all rights reserved", "p.iva", "partita iva",
    };
    return patterns;
}

std::optional<SentenceRule> sentence_filter(std::string_view sentence) {
    const auto words = split_words(sentence);
    if (words.size() < kMinWords) {
        return SentenceRule::too_few_words;
    }
    for (const auto w : words) {
        if (utf8_length(w) > kMaxWordChars) {
            return SentenceRule::word_too_long;
        }
    }
    const std::string last = last_code_point(words.back());
    static const std::set<std::string> terminators{".", "!", "?", std::string(kEllipsis), "\"",
                                                   std::string(kGuillemetClose)};
    if (terminators.count(last) == 0) {
        return SentenceRule::bad_terminator;
    }
    const std::string lower = ascii_lower(sentence);
    for (const auto& p : boilerplate_patterns()) {
        if (lower.find(p) != std::string::npos) {
            return SentenceRule::boilerplate;
        }
    }
    return std::nullopt;
}

TrigramLanguageId::TrigramLanguageId() {
    for (const auto& [code, sample] : detail::kLanguageSamples) {
        profiles_.emplace(std::string(code), trigram_profile(sample));
    }
}

std::string TrigramLanguageId::identify(std::string_view text) const {
    const auto doc = trigram_profile(text);
    std::string best;
    std::size_t best_distance = 0;
    for (const auto& [code, profile] : profiles_) {
        std::size_t d = 0;
        for (const auto& [gram, rank] : doc) {
            const auto it = profile.find(gram);
            d += it == profile.end() ? kProfileSize : (it->second > rank ? it->second - rank : rank - it->second);
        }
        if (best.empty() || d < best_distance) {
            best = code;
            best_distance = d;
        }
    }
    return best;
}

LanguagePredicate default_language_predicate() {
    static const TrigramLanguageId id;
    return [](std::string_view text) { return id.is_italian(text); };
}

BadWordList BadWordList::parse(std::string_view text) {
    BadWordList list;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        auto tokens = lexical_tokens(line);
        if (tokens.size() == 1) {
            list.words.insert(std::move(tokens.front()));
        } else if (tokens.size() > 1) {
            list.phrases.push_back(std::move(tokens));
        }
    }
    return list;
}

BadWordList BadWordList::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open bad-word list: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

bool BadWordList::hit(std::string_view text) const {
    if (empty()) {
        return false;
    }
    const auto tokens = lexical_tokens(text);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (words.count(tokens[i]) != 0) {
            return true;
        }
        for (const auto& p : phrases) {
            if (i + p.size() <= tokens.size() && std::equal(p.begin(), p.end(), tokens.begin() + i)) {
                return true;
            }
        }
    }
    return false;
}

DocumentVerdict filter_document(std::string_view text, const FilterOptions& options) {
    DocumentVerdict v;
    const auto split = split_sentences(text);
    for (const auto& s : split.sentences) {
        if (const auto rule = sentence_filter(s.text)) {
            ++v.sentence_rejections[*rule];
            ++v.dropped_sentences;
            continue;
        }
        if (!v.clean_text.empty()) {
            v.clean_text.push_back(' ');
        }
        v.clean_text += s.text;
        ++v.kept_sentences;
    }
    const std::size_t chars = utf8_length(v.clean_text);
    if (v.kept_sentences < kMinSentences) {
        v.rule = DocumentRule::too_few_sentences;
    } else if (chars < kMinChars) {
        v.rule = DocumentRule::too_short;
    } else if (chars > kMaxChars) {
        v.rule = DocumentRule::too_long;
    } else if (options.bad_words.hit(v.clean_text)) {
        v.rule = DocumentRule::bad_word;
    } else {
        const bool italian =
            options.is_italian ? options.is_italian(v.clean_text) : default_language_predicate()(v.clean_text);
        if (!italian) {
            v.rule = DocumentRule::not_italian;
        }
    }
    return v;
}

nlohmann::json FilterReport::to_json() const {
    nlohmann::json j;
    j["seen"] = seen;
    j["accepted"] = accepted;
    j["rejected"] = rejected;
    j["document_rules"] = document_rules;
    j["sentence_rules"] = sentence_rules;
    auto trail_json = nlohmann::json::array();
    for (const auto& t : trail) {
        nlohmann::json e{{"id", t.id}, {"accepted", t.accepted}, {"sentence_rules", t.sentence_rules}};
        if (!t.accepted) {
            e["rule"] = t.rule;
        }
        trail_json.push_back(std::move(e));
    }
    j["trail"] = std::move(trail_json);
    auto errors_json = nlohmann::json::array();
    for (const auto& [line, message] : errors) {
        errors_json.push_back({{"line", line}, {"error", message}});
    }
    j["errors"] = std::move(errors_json);
    return j;
}

FilterReport run_pipeline(std::istream& in, std::ostream& out, const FilterOptions& options) {
    FilterOptions effective = options;
    if (!effective.is_italian) {
        effective.is_italian = default_language_predicate();
    }
    FilterReport report;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), is_space)) {
            continue;
        }
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            report.errors.emplace_back(line_no, e.what());
            continue;
        }
        if (!record.is_object() || !record.contains("text") || !record["text"].is_string()) {
            report.errors.emplace_back(line_no, "record has no string field \"text\"");
            continue;
        }
        std::string id = "line-" + std::to_string(line_no);
        if (record.contains("id")) {
            id = record["id"].is_string() ? record["id"].get<std::string>() : record["id"].dump();
        }
        const auto verdict = filter_document(record["text"].get<std::string>(), effective);
        ++report.seen;
        std::map<std::string, std::size_t> sentence_rules;
        for (const auto& [rule, count] : verdict.sentence_rejections) {
            sentence_rules[std::string(to_string(rule))] = count;
            report.sentence_rules[std::string(to_string(rule))] += count;
        }
        if (verdict.accepted()) {
            ++report.accepted;
            record["text"] = verdict.clean_text;
            out << record.dump() << '\n';
        } else {
            ++report.rejected;
            ++report.document_rules[std::string(to_string(*verdict.rule))];
        }
        if (options.keep_trail) {
            report.trail.push_back({id, verdict.accepted(),
                                    verdict.accepted() ? std::string() : std::string(to_string(*verdict.rule)),
                                    std::move(sentence_rules)});
        }
    }
    if (in.bad()) {
        throw Error("read failure on corpus input");
    }
    return report;
}

}  // namespace adfg::corpus
