// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "adfg/corpus/filter.hpp"
#include "support/corpus_fixtures.hpp"

using namespace adfg;
using namespace adfg::corpus;
using adfg::testing::italian_sentences;
using adfg::testing::join_sentences;

namespace {

FilterOptions fixture_options() {
    FilterOptions o;
    o.bad_words = testing::fixture_bad_words();
    return o;
}

FilterOptions accept_all_languages() {
    FilterOptions o;
    o.is_italian = [](std::string_view) { return true; };
    return o;
}

}  // namespace

TEST_CASE("sentence split is lossless") {
    const std::vector<std::string> inputs{
        "",
        "   \n ",
        "Ciao a tutti. Come state? Bene!",
        "  Lui disse: «Andiamo.» Poi partì…  E tornò \"presto.\"\n\nFine",
        "Il 3.5 per cento.Non separato. Ultima senza punto   ",
        "Punti... multipli?! Sì.",
    };
    for (const auto& s : inputs) {
        const auto split = split_sentences(s);
        CHECK(split.joined() == s);
        for (const auto& sent : split.sentences) {
            CHECK_FALSE(sent.text.empty());
            CHECK_FALSE(is_space(sent.text.front()));
            CHECK_FALSE(is_space(sent.text.back()));
        }
    }
    const auto split = split_sentences("  Lui disse: «Andiamo.» Poi partì…  E tornò \"presto.\"\n\nFine");
    REQUIRE(split.sentences.size() == 4);
    CHECK(split.leading == "  ");
    CHECK(split.sentences[0].text == "Lui disse: «Andiamo.»");
    CHECK(split.sentences[1].text == "Poi partì…");
    CHECK(split.sentences[1].separator == "  ");
    CHECK(split.sentences[2].text == "E tornò \"presto.\"");
    CHECK(split.sentences[2].separator == "\n\n");
    CHECK(split_sentences("Il 3.5 per cento.Non separato.").sentences.size() == 1);
    CHECK(split_sentences("").sentences.empty());
}

TEST_CASE("sentence rules and their order") {
    CHECK(sentence_filter("Sì davvero.") == SentenceRule::too_few_words);
    CHECK(sentence_filter("Questa frase è valida.") == std::nullopt);
    CHECK(sentence_filter("Una parola " + std::string(1001, 'a') + " lunga.") == SentenceRule::word_too_long);
    CHECK(sentence_filter("Una parola " + std::string(1000, 'a') + " lunga.") == std::nullopt);
    // 1000 code points of two bytes each is still within the limit.
    std::string accented;
    for (int i = 0; i < 1000; ++i) {
        accented += "à";
    }
    CHECK(sentence_filter("Una parola " + accented + " lunga.") == std::nullopt);
    CHECK(sentence_filter("Una frase senza punto") == SentenceRule::bad_terminator);
    CHECK(sentence_filter("Una frase che finisce con virgola,") == SentenceRule::bad_terminator);
    for (const std::string end : {".", "!", "?", "…", "\"", "»"}) {
        CHECK(sentence_filter("Una frase qualsiasi" + end) == std::nullopt);
    }
    CHECK(sentence_filter("Abilita JavaScript per continuare.") == SentenceRule::boilerplate);
    CHECK(sentence_filter("Lorem ipsum dolor sit amet.") == SentenceRule::boilerplate);
    CHECK(sentence_filter("Leggi la Privacy Policy del sito.") == SentenceRule::boilerplate);
    // First failing rule wins: two words and no terminator reports the word count.
    CHECK(sentence_filter("due parole") == SentenceRule::too_few_words);
    CHECK(sentence_filter(std::string(1001, 'a') + " senza punto") == SentenceRule::word_too_long);
    CHECK(sentence_filter("var x = 1 senza punto") == SentenceRule::bad_terminator);
}

TEST_CASE("document thresholds at their boundaries") {
    const auto opts = accept_all_languages();
    CHECK(filter_document(join_sentences(0, 4), opts).rule == DocumentRule::too_few_sentences);
    CHECK(filter_document(join_sentences(0, 5), opts).rule == DocumentRule::too_short);
    CHECK(filter_document(testing::document_of_length(5, 499), opts).rule == DocumentRule::too_short);
    CHECK(filter_document(testing::document_of_length(5, 500), opts).accepted());
    CHECK(filter_document(testing::document_of_length(50, 50000), opts).accepted());
    CHECK(filter_document(testing::document_of_length(50, 50001), opts).rule == DocumentRule::too_long);
    // Length counts code points of the kept text only.
    const auto v = filter_document(testing::document_of_length(5, 500) + " Ok ok.", opts);
    CHECK(v.accepted());
    CHECK(utf8_length(v.clean_text) == 500);
    CHECK(v.dropped_sentences == 1);
}

TEST_CASE("document rules and their order") {
    auto opts = fixture_options();
    const std::string good = join_sentences(0, 8);
    CHECK(filter_document(good, opts).accepted());
    CHECK(filter_document(good + " Una parolaccia qui.", opts).rule == DocumentRule::bad_word);
    CHECK(filter_document(good + " Una Parolaccia, qui.", opts).rule == DocumentRule::bad_word);
    // Whole-word matching only.
    CHECK(filter_document(good + " Le parolacciate non contano.", opts).accepted());
    CHECK(filter_document(good + " Una brutta  parola qui.", opts).rule == DocumentRule::bad_word);
    // Bad words are checked before language.
    CHECK(filter_document(testing::english_document() + " A parolaccia here.", opts).rule == DocumentRule::bad_word);
    CHECK(filter_document(testing::english_document(), opts).rule == DocumentRule::not_italian);
    opts.is_italian = [](std::string_view) { return false; };
    CHECK(filter_document(good, opts).rule == DocumentRule::not_italian);
    // Count comes before length.
    CHECK(filter_document(join_sentences(0, 4) + " " + std::string(60000, 'a') + ".", opts).rule ==
          DocumentRule::too_few_sentences);
}

TEST_CASE("trigram language id") {
    const TrigramLanguageId id;
    CHECK(id.identify(join_sentences(3, 8)) == "it");
    CHECK(id.identify(testing::english_document()) == "en");
    CHECK(id.identify("Los ninos juegan en el parque todos los dias despues de la escuela con sus amigos.") == "es");
    CHECK(id.identify("Die Kinder spielen jeden Tag nach der Schule mit ihren Freunden im Park.") == "de");
    testing::ItalianGenerator gen(3);
    CHECK(id.is_italian(gen.text(600)));
}

TEST_CASE("monotonicity under added violating sentences") {
    const auto opts = fixture_options();
    const std::vector<std::string> violating{"Sì davvero.", "Frase " + std::string(1001, 'z') + " lunga.",
                                             "Senza punto finale", "Accetta i cookie per continuare."};
    for (std::size_t n = 3; n <= 9; ++n) {
        const std::string base = join_sentences(n, n);
        const bool before = filter_document(base, opts).accepted();
        for (const auto& v : violating) {
            for (const bool front : {true, false}) {
                const std::string doc = front ? v + " " + base : base + " " + v;
                if (!before) {
                    CHECK_FALSE(filter_document(doc, opts).accepted());
                }
            }
        }
    }
}

TEST_CASE("pipeline over the labeled fixture") {
    const auto docs = testing::unit_corpus();
    std::istringstream in(testing::to_jsonl(docs));
    std::ostringstream out;
    const auto report = run_pipeline(in, out, fixture_options());
    REQUIRE(report.trail.size() == docs.size());
    std::size_t accepted = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        INFO(docs[i].id);
        CHECK(report.trail[i].id == docs[i].id);
        CHECK(report.trail[i].accepted == docs[i].accepted);
        CHECK(report.trail[i].rule == docs[i].rule);
        CHECK(report.trail[i].sentence_rules == docs[i].sentences);
        accepted += docs[i].accepted;
    }
    CHECK(report.seen == 10);
    CHECK(report.accepted == accepted);
    CHECK(report.rejected == 10 - accepted);
    std::size_t doc_rule_total = 0;
    for (const auto& [rule, count] : report.document_rules) {
        doc_rule_total += count;
    }
    CHECK(doc_rule_total == report.rejected);

    // Output keeps order and schema, with cleaned text.
    std::istringstream lines(out.str());
    std::string line;
    std::vector<std::string> ids;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        ids.push_back(j.at("id").get<std::string>());
        CHECK(j.at("text").get<std::string>().find("Sì davvero.") == std::string::npos);
    }
    CHECK(ids == std::vector<std::string>{"ok", "two-words", "long-word", "terminator", "boilerplate"});

    std::istringstream again(testing::to_jsonl(docs));
    std::ostringstream out2;
    const auto report2 = run_pipeline(again, out2, fixture_options());
    CHECK(out2.str() == out.str());
    CHECK(report2.to_json().dump() == report.to_json().dump());
}

TEST_CASE("pipeline edge cases") {
    std::istringstream empty;
    std::ostringstream out;
    const auto r = run_pipeline(empty, out, {});
    CHECK(out.str().empty());
    CHECK(r.seen == 0);
    CHECK(r.accepted == 0);
    CHECK(r.errors.empty());
    CHECK(r.to_json()["trail"].empty());

    const std::string good = nlohmann::json{{"id", 7}, {"text", join_sentences(0, 8)}, {"url", "u"}}.dump();
    std::istringstream mixed("{not json\n" + good + "\n\n{\"id\":\"x\"}\n\"\xff\"\n");
    std::ostringstream out2;
    const auto r2 = run_pipeline(mixed, out2, accept_all_languages());
    CHECK(r2.seen == 1);
    CHECK(r2.accepted == 1);
    REQUIRE(r2.errors.size() == 3);
    CHECK(r2.errors[0].first == 1);
    CHECK(r2.errors[1].first == 4);
    CHECK(r2.errors[2].first == 5);
    const auto kept = nlohmann::json::parse(out2.str());
    CHECK(kept["url"] == "u");
    CHECK(r2.trail.at(0).id == "7");
}

TEST_CASE("utf8 helpers") {
    CHECK(valid_utf8("città è più"));
    CHECK_FALSE(valid_utf8("\xff"));
    CHECK_FALSE(valid_utf8("\xC0\xAF"));
    CHECK_FALSE(valid_utf8("\xE2\x80"));
    CHECK(utf8_length("città") == 5);
    for (const auto& s : italian_sentences()) {
        CHECK(sentence_filter(s) == std::nullopt);
    }
}
