// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "adfg/error.hpp"
#include "adfg/prompts/templates.hpp"
#include "adfg/rng.hpp"

using namespace adfg;
using namespace adfg::prompts;

namespace {

std::string golden(const std::string& name) {
    std::ifstream in(std::string(ADFG_SOURCE_DIR) + "/tests/golden/" + name, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing golden file " << name);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Five-symbol toy tokenizer: BOS, EOS, letter, space, other byte.
struct ToyTokens {
    std::vector<int> ids;
    std::vector<bool> mask;
};

ToyTokens toy_tokenize(const Rendered& r) {
    ToyTokens t;
    for (const auto& s : r.spans) {
        if (s.kind != SpanKind::text) {
            t.ids.push_back(s.kind == SpanKind::bos ? 0 : 1);
            t.mask.push_back(s.trainable);
            continue;
        }
        for (const char c : s.text) {
            const bool letter = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
            t.ids.push_back(letter ? 2 : (c == ' ' ? 3 : 4));
            t.mask.push_back(s.trainable);
        }
    }
    return t;
}

std::string random_text(Rng& rng, std::size_t max_len) {
    static const std::vector<std::string> atoms{"a", "b", "Z", " ", "  ", "\n", "\n\n", "#", "###", "è", "ù",
                                                "### Input:", "Risposta", ":", "\t", "'", "\""};
    std::string s;
    const std::size_t n = rng.below(max_len + 1);
    for (std::size_t i = 0; i < n; ++i) {
        s += atoms[rng.below(atoms.size())];
    }
    return s;
}

}  // namespace

TEST_CASE("system prompt bytes") {
    const auto s = default_system_prompt();
    CHECK(s.substr(0, 51) == "Sei un assistente disponibile, rispettoso e onesto.");
    CHECK(s.find("sicuro.  Le risposte") != std::string_view::npos);
    CHECK(s.find("piu' utile") != std::string_view::npos);
    CHECK(s.find("non e' coerente") != std::string_view::npos);
    CHECK(s.back() == ' ');
    CHECK(s.substr(s.size() - 7) == "false. ");
}

TEST_CASE("chat golden files") {
    Dialogue one;
    one.system = "S";
    one.turns = {{"U", std::string("A")}};
    CHECK(render_chat(one).text() == "<s>[INST] <<SYS>>\nS\n<</SYS>>\n\nU [/INST] A</s>");
    CHECK(render_chat(one).text() == golden("chat_single.txt"));

    Dialogue two;
    two.turns = {{"Ciao! Come stai?", std::string("Bene, grazie.")},
                 {"Raccontami una storia.", std::string("C'era una volta un piccolo paese.")}};
    const auto r = render_chat(two);
    CHECK(r.text() == golden("chat_two_turns.txt"));
    // The later turn carries no system block.
    const std::string text = r.text();
    CHECK(text.find("<<SYS>>") == text.rfind("<<SYS>>"));
    CHECK(text.find("</s><s>[INST] Raccontami") != std::string::npos);

    Dialogue open;
    open.turns = {{"Ciao!", std::string("Ciao, come posso aiutarti?")}, {"Che ore sono?", std::nullopt}};
    CHECK(render_chat(open).text() == golden("chat_open_turn.txt"));
    CHECK(render_chat(open).text().substr(render_chat(open).text().size() - 8) == "[/INST] ");
}

TEST_CASE("chat loss mask on a toy tokenizer") {
    Dialogue d;
    d.system = "S";
    d.turns = {{"U", std::string("A")}};
    const auto t = toy_tokenize(render_chat(d));
    // <s> "[INST] <<SYS>>\nS\n<</SYS>>\n\nU [/INST] " "A" </s>
    const std::string prompt = "[INST] <<SYS>>\nS\n<</SYS>>\n\nU [/INST] ";
    REQUIRE(t.ids.size() == 1 + prompt.size() + 1 + 1);
    CHECK(t.ids.front() == 0);
    CHECK(t.ids.back() == 1);
    for (std::size_t i = 0; i + 2 < t.ids.size(); ++i) {
        CHECK_FALSE(t.mask[i]);
    }
    CHECK(t.mask[t.ids.size() - 2]);
    CHECK(t.mask.back());

    Dialogue two;
    two.turns = {{"uno", std::string("ab")}, {"due", std::string("cde")}};
    const auto r = render_chat(two);
    const auto t2 = toy_tokenize(r);
    CHECK(t2.mask.size() == t2.ids.size());
    CHECK(std::count(t2.mask.begin(), t2.mask.end(), true) == 2 + 1 + 3 + 1);
    CHECK(r.trainable_text() == "abcde");
}

TEST_CASE("chat validation and json") {
    Dialogue d;
    CHECK_THROWS_AS(render_chat(d), InvalidArgument);
    d.turns = {{"", std::string("x")}};
    CHECK_THROWS_AS(render_chat(d), InvalidArgument);
    d.turns = {{"a", std::nullopt}, {"b", std::string("c")}};
    CHECK_THROWS_AS(render_chat(d), InvalidArgument);

    const auto j = nlohmann::json::parse(R"({"turns":[{"user":"u","assistant":"a"},{"user":"v"}]})");
    const auto parsed = Dialogue::from_json(j);
    CHECK(parsed.system == default_system_prompt());
    CHECK(parsed.turns.size() == 2);
    CHECK_FALSE(parsed.turns[1].assistant.has_value());
    CHECK_THROWS_AS(Dialogue::from_json(nlohmann::json::parse(R"({"turns":[{"assistant":"a"}]})")), FormatError);
    CHECK_THROWS_AS(Dialogue::from_json(nlohmann::json::parse(R"({"system":1,"turns":[]})")), FormatError);
}

TEST_CASE("instruction golden files") {
    const InstructionExample emit{evalita_lookup("EMit"), "Oggi mi sento proprio giù di corda", "tristezza"};
    const auto r = render_instruction(emit);
    CHECK(r.text(false) == golden("instruction_emit.txt"));
    CHECK(r.text() == "<s>" + golden("instruction_emit.txt") + "</s>");
    CHECK(r.text(false).find("### Risposta:\ntristezza") != std::string::npos);
    CHECK(r.trainable_text() == "tristezza");

    const InstructionExample plain{"Scrivi una breve poesia sul mare.", "", "Onde leggere\nsotto il sole."};
    const auto text = render_instruction(plain).text(false);
    CHECK(text == golden("instruction_no_input.txt"));
    CHECK(text.find("### Input:") == std::string::npos);
    CHECK(instruction_prompt(plain) + plain.response == text);
}

TEST_CASE("instruction mask covers the response and EOS only") {
    const InstructionExample e{"Dimmi.", "x", "sì"};
    const auto t = toy_tokenize(render_instruction(e));
    const std::size_t response_tokens = std::string("sì").size() + 1;
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
        CHECK(t.mask[i] == (i + response_tokens >= t.ids.size()));
    }
}

TEST_CASE("parse inverts render on random examples") {
    Rng rng(2024);
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    while (accepted < 100) {
        InstructionExample e{random_text(rng, 12), rng.uniform() < 0.3 ? "" : random_text(rng, 12),
                             random_text(rng, 12)};
        try {
            e.validate();
        } catch (const InvalidArgument&) {
            ++rejected;
            continue;
        }
        CHECK(parse_instruction(render_instruction(e).text(false)) == e);
        ++accepted;
    }
    CHECK(rejected < 100);
    // Whitespace is preserved on all fields.
    const InstructionExample spaced{"  istruzione \n", " \n input\n", "\n risposta  \n"};
    CHECK(parse_instruction(render_instruction(spaced).text(false)) == spaced);
}

TEST_CASE("parse errors") {
    const InstructionExample e{"Fai qualcosa.", "dati", "fatto"};
    std::string text = render_instruction(e).text(false);
    const auto at = text.find("### Risposta:");
    CHECK_THROWS_AS(parse_instruction(text.substr(0, at)), FormatError);
    CHECK_THROWS_AS(parse_instruction("Ciao"), FormatError);
    CHECK_THROWS_AS(parse_instruction(text.substr(1)), FormatError);
    CHECK_THROWS_AS(render_instruction({"", "x", "y"}), InvalidArgument);
    CHECK_THROWS_AS(render_instruction({"a\n\n### Risposta:\nb", "", "y"}), InvalidArgument);
    CHECK_THROWS_AS(render_instruction({"a", "in\n\n### Risposta:\nz", "y"}), InvalidArgument);
    // A marker in the response is fine: parsing takes the first response marker.
    const InstructionExample tricky{"a", "", "x\n\n### Risposta:\ny"};
    CHECK(parse_instruction(render_instruction(tricky).text(false)) == tricky);

    const auto j = nlohmann::json::parse(R"({"instruction":"i","response":"r"})");
    CHECK(InstructionExample::from_json(j) == InstructionExample{"i", "", "r"});
    CHECK_THROWS_AS(InstructionExample::from_json(nlohmann::json::parse(R"({"input":"x"})")), FormatError);
}

TEST_CASE("evalita catalog") {
    const auto& c = evalita_catalog();
    CHECK(c.size() == 15);
    CHECK(evalita_lookup("ACTI (Subtask A)") ==
          "Stabilisci se il seguente testo contiene una teoria del complotto o cospirazione. Rispondi con si o no.");
    CHECK(evalita_lookup("EMit").rfind("Categorizza le emozioni espresse", 0) == 0);
    CHECK_THROWS_AS(evalita_lookup("EMIT"), InvalidArgument);
    std::string tsv;
    for (const auto& [name, instruction] : c) {
        tsv += name + "\t" + instruction + "\n";
    }
    CHECK(tsv == golden("evalita_catalog.tsv"));
}
