// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace adfg::prompts {

// A rendered prompt is a sequence of spans. Text spans are literal bytes; BOS
// and EOS spans become special token ids at tokenization time.
enum class SpanKind { text, bos, eos };

struct Span {
    SpanKind kind = SpanKind::text;
    std::string text;        // empty for bos/eos
    bool trainable = false;  // loss is taken on this span

    bool operator==(const Span&) const = default;
};

inline constexpr std::string_view kBosMarker = "<s>";
inline constexpr std::string_view kEosMarker = "</s>";

struct Rendered {
    std::vector<Span> spans;

    // With specials, BOS/EOS are written as <s> and </s>.
    [[nodiscard]] std::string text(bool with_specials = true) const;
    // Concatenated text of trainable text spans.
    [[nodiscard]] std::string trainable_text() const;
};

// The default Italian safety system prompt, byte-exact (ASCII apostrophes,
// double space after the second sentence, one trailing space).
std::string_view default_system_prompt();

struct Turn {
    std::string user;
    std::optional<std::string> assistant;  // only the final turn may omit it

    bool operator==(const Turn&) const = default;
};

struct Dialogue {
    std::string system{default_system_prompt()};
    std::vector<Turn> turns;

    // Throws InvalidArgument: no turns, empty user message, or a missing
    // assistant answer before the final turn.
    void validate() const;
    // {"system"?: s, "turns": [{"user": u, "assistant"?: a}, ...]}; throws FormatError.
    static Dialogue from_json(const nlohmann::json& j);
    bool operator==(const Dialogue&) const = default;
};

// <s>[INST] <<SYS>>\n{sys}\n<</SYS>>\n\n{u1} [/INST] {a1}</s><s>[INST] {u2} [/INST] {a2}</s>...
// Trainable spans: each assistant answer and its EOS. An open final turn ends
// after "[/INST] ", ready for generation.
Rendered render_chat(const Dialogue& d);

struct InstructionExample {
    std::string instruction;
    std::string input;  // empty omits the input section
    std::string response;

    // Throws InvalidArgument: empty instruction, or instruction/input containing
    // a section marker (which would make parsing ambiguous).
    void validate() const;
    static InstructionExample from_json(const nlohmann::json& j);
    bool operator==(const InstructionExample&) const = default;
};

std::string_view instruction_preamble();
inline constexpr std::string_view kInstructionMarker = "### Istruzione:\n";
inline constexpr std::string_view kInputMarker = "\n\n### Input:\n";
inline constexpr std::string_view kResponseMarker = "\n\n### Risposta:\n";

// BOS, template text, response (trainable), EOS (trainable).
Rendered render_instruction(const InstructionExample& e);
// The untrainable template text preceding the response; the generation prompt.
std::string instruction_prompt(const InstructionExample& e);

// Inverse of render_instruction's text (without specials). No trimming is
// performed. Throws FormatError on a missing preamble or section marker.
InstructionExample parse_instruction(std::string_view text);

// 15 task names with their Italian instructions, in table order.
const std::vector<std::pair<std::string, std::string>>& evalita_catalog();
// Throws InvalidArgument for an unknown task.
const std::string& evalita_lookup(std::string_view task);

}  // namespace adfg::prompts
