// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "adfg/prompts/templates.hpp"
#include "adfg/release/container.hpp"

namespace adfg::datapipe {

// 256 byte ids plus BOS, EOS and PAD.
class ByteTokenizer {
public:
    static constexpr std::int32_t kBos = 256;
    static constexpr std::int32_t kEos = 257;
    static constexpr std::int32_t kPad = 258;
    static constexpr std::size_t kVocabSize = 259;

    [[nodiscard]] std::vector<std::int32_t> encode(std::string_view text) const;
    // Specials are skipped; ids outside the vocabulary throw InvalidArgument.
    [[nodiscard]] std::string decode(std::span<const std::int32_t> ids) const;
    // Stable identifier recorded in dataset caches.
    [[nodiscard]] std::string hash() const;
};

// mask[t] != 0 marks token t as a prediction target.
struct TokenizedExample {
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> mask;

    [[nodiscard]] std::size_t size() const noexcept { return ids.size(); }
    bool operator==(const TokenizedExample&) const = default;
};

// Spans to ids; with loss_on_prompt every token except a leading BOS is a target.
TokenizedExample encode(const prompts::Rendered& r, const ByteTokenizer& tok, bool loss_on_prompt = false);
// Raw adaptation text: BOS + bytes + EOS, every token but BOS a target.
TokenizedExample encode_text(std::string_view text, const ByteTokenizer& tok);

// First max_length tokens; when shortened the last one is EOS.
std::vector<std::int32_t> truncate(std::vector<std::int32_t> tokens, std::size_t max_length);
TokenizedExample truncate(TokenizedExample e, std::size_t max_length);
// SFT truncation never cuts into the prompt: an example whose untrainable
// prefix, one response token and EOS do not fit is rejected (nullopt).
// Otherwise the cut backs off to the end of a trainable run and a trainable
// EOS is appended.
std::optional<TokenizedExample> truncate_sft(TokenizedExample e, std::size_t max_length);

// Segment 0 is padding; examples are numbered from 1 within each pack.
struct PackedSequence {
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> segments;
    std::vector<std::uint8_t> mask;

    [[nodiscard]] std::size_t length() const noexcept { return ids.size(); }
    [[nodiscard]] std::size_t used() const;
    bool operator==(const PackedSequence&) const = default;
};

struct PackStats {
    std::size_t examples = 0;
    std::size_t packs = 0;
    std::size_t tokens = 0;  // non-PAD
    std::size_t capacity = 0;

    [[nodiscard]] double utilization() const {
        return capacity == 0 ? 0.0 : static_cast<double>(tokens) / static_cast<double>(capacity);
    }
};

// Greedy first-fit in input order; examples carry their own EOS. Throws
// InvalidArgument for an empty or overlong example.
std::vector<PackedSequence> pack(const std::vector<TokenizedExample>& examples, std::size_t max_length,
                                 PackStats* stats = nullptr);
std::vector<PackedSequence> pack(const std::vector<std::vector<std::int32_t>>& examples, std::size_t max_length,
                                 PackStats* stats = nullptr);

// Next-token targets for a packed row: position t predicts t+1 when both lie in
// the same non-pad segment and t+1 is a target. The last position never counts.
struct NextTokenTargets {
    std::vector<std::int32_t> targets;
    std::vector<std::uint8_t> mask;

    [[nodiscard]] std::size_t count() const;
};
NextTokenTargets next_token_targets(const PackedSequence& p);

struct BatchPlan {
    std::size_t per_device = 1;
    std::size_t n_devices = 1;
    std::size_t accum_steps = 1;

    [[nodiscard]] std::size_t effective_batch() const { return per_device * n_devices * accum_steps; }
};

// Pack indices for one optimizer step: micro[a · n_devices + d] is the
// micro-batch of virtual device d in accumulation step a.
struct StepBatches {
    std::vector<std::vector<std::size_t>> micro;
};

struct BatchSchedule {
    BatchPlan plan;
    std::size_t effective_batch = 0;
    std::vector<StepBatches> steps;
};

// Epoch e is a shuffle by Rng::derive(seed, e); the concatenated epochs are
// sliced contiguously. steps == 0 means one pass, dropping the remainder.
BatchSchedule make_batches(std::size_t n_packs, const BatchPlan& plan, std::uint64_t seed, std::size_t steps = 0);

struct PackedDataset {
    std::size_t max_length = 0;
    std::string tokenizer_hash;
    std::vector<PackedSequence> packs;
    nlohmann::json stats = nlohmann::json::object();

    [[nodiscard]] release::Container to_container() const;
    // Throws FormatError on a malformed cache.
    static PackedDataset from_container(const release::Container& c);
    void save(const std::string& path) const;
    static PackedDataset load(const std::string& path);
};

enum class Schema { automatic, text, dialogue, instruction };
Schema schema_from_string(std::string_view s);

struct PrepareOptions {
    Schema schema = Schema::automatic;
    std::size_t max_length = 1024;
    bool loss_on_prompt = false;
};

struct PrepareStats {
    std::size_t examples_in = 0;
    std::size_t examples_out = 0;
    std::size_t rejected_overlong = 0;
    std::size_t truncated = 0;
    PackStats pack;

    [[nodiscard]] nlohmann::json to_json() const;
};

// JSONL → rendered → tokenized → truncated → packed. Schema violations throw
// FormatError naming the 1-based line.
PackedDataset prepare_dataset(std::istream& in, const PrepareOptions& options, PrepareStats* stats = nullptr);

// Decodes one JSONL record into a rendered prompt or raw text (schema resolved).
struct Record {
    Schema schema = Schema::text;
    std::string text;             // Schema::text
    prompts::Rendered rendered;   // dialogue / instruction
};
Record parse_record(const nlohmann::json& j, Schema schema);

}  // namespace adfg::datapipe
