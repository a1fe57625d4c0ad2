// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/datapipe/pipeline.hpp"

#include <algorithm>
#include <istream>
#include <numeric>

#include "adfg/error.hpp"
#include "adfg/rng.hpp"

namespace adfg::datapipe {

std::vector<std::int32_t> ByteTokenizer::encode(std::string_view text) const {
    std::vector<std::int32_t> ids;
    ids.reserve(text.size());
    for (const char c : text) {
        ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(c)));
    }
    return ids;
}

std::string ByteTokenizer::decode(std::span<const std::int32_t> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (const auto id : ids) {
        if (id < 0 || id >= static_cast<std::int32_t>(kVocabSize)) {
            throw InvalidArgument("token id " + std::to_string(id) + " is outside the byte vocabulary");
        }
        if (id < 256) {
            out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        }
    }
    return out;
}

std::string ByteTokenizer::hash() const {
    static const std::string kId = "adfg-byte-tokenizer/v1/bos=256,eos=257,pad=258";
    const auto* p = reinterpret_cast<const std::uint8_t*>(kId.data());
    return release::to_hex(release::sha256(std::span(p, kId.size())));
}

TokenizedExample encode(const prompts::Rendered& r, const ByteTokenizer& tok, bool loss_on_prompt) {
    TokenizedExample e;
    for (const auto& s : r.spans) {
        const std::uint8_t m = (s.trainable || loss_on_prompt) ? 1 : 0;
        if (s.kind == prompts::SpanKind::text) {
            const auto ids = tok.encode(s.text);
            e.ids.insert(e.ids.end(), ids.begin(), ids.end());
            e.mask.insert(e.mask.end(), ids.size(), m);
        } else {
            e.ids.push_back(s.kind == prompts::SpanKind::bos ? ByteTokenizer::kBos : ByteTokenizer::kEos);
            e.mask.push_back(m);
        }
    }
    if (loss_on_prompt && !e.ids.empty() && e.ids.front() == ByteTokenizer::kBos) {
        e.mask.front() = 0;
    }
    return e;
}

TokenizedExample encode_text(std::string_view text, const ByteTokenizer& tok) {
    TokenizedExample e;
    e.ids.push_back(ByteTokenizer::kBos);
    const auto ids = tok.encode(text);
    e.ids.insert(e.ids.end(), ids.begin(), ids.end());
    e.ids.push_back(ByteTokenizer::kEos);
    e.mask.assign(e.ids.size(), 1);
    e.mask.front() = 0;
    return e;
}

std::vector<std::int32_t> truncate(std::vector<std::int32_t> tokens, std::size_t max_length) {
    if (tokens.size() <= max_length) {
        return tokens;
    }
    if (max_length == 0) {
        return {};
    }
    tokens.resize(max_length);
    tokens.back() = ByteTokenizer::kEos;
    return tokens;
}

TokenizedExample truncate(TokenizedExample e, std::size_t max_length) {
    if (e.size() <= max_length) {
        return e;
    }
    const bool eos_target = !e.mask.empty() && e.mask.back() != 0;
    e.ids = truncate(std::move(e.ids), max_length);
    e.mask.resize(e.ids.size());
    if (!e.mask.empty()) {
        e.mask.back() = eos_target ? 1 : 0;
    }
    return e;
}

std::optional<TokenizedExample> truncate_sft(TokenizedExample e, std::size_t max_length) {
    if (e.size() <= max_length) {
        return e;
    }
    const auto first = std::find(e.mask.begin(), e.mask.end(), std::uint8_t{1});
    const auto prefix = static_cast<std::size_t>(first - e.mask.begin());
    if (first == e.mask.end() || prefix + 2 > max_length) {
        return std::nullopt;
    }
    std::size_t cut = max_length - 1;
    while (cut > prefix && e.mask[cut - 1] == 0) {
        --cut;
    }
    e.ids.resize(cut);
    e.mask.resize(cut);
    // Backing off to a completed turn already ends on its EOS.
    if (e.ids.back() != ByteTokenizer::kEos) {
        e.ids.push_back(ByteTokenizer::kEos);
        e.mask.push_back(1);
    }
    return e;
}

std::size_t PackedSequence::used() const {
    return static_cast<std::size_t>(std::count_if(segments.begin(), segments.end(), [](auto s) { return s != 0; }));
}

std::vector<PackedSequence> pack(const std::vector<TokenizedExample>& examples, std::size_t max_length,
                                 PackStats* stats) {
    if (max_length == 0) {
        throw InvalidArgument("pack: max_length must be positive");
    }
    std::vector<PackedSequence> packs;
    std::vector<std::size_t> fill;
    std::vector<std::int32_t> next_segment;
    PackStats s;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        if (e.ids.empty() || e.ids.size() != e.mask.size()) {
            throw InvalidArgument("pack: example " + std::to_string(i) + " is empty or has a mismatched mask");
        }
        if (e.size() > max_length) {
            throw InvalidArgument("pack: example " + std::to_string(i) + " has " + std::to_string(e.size()) +
                                  " tokens, more than max_length " + std::to_string(max_length));
        }
        std::size_t target = 0;
        while (target < packs.size() && fill[target] + e.size() > max_length) {
            ++target;
        }
        if (target == packs.size()) {
            packs.push_back({std::vector<std::int32_t>(max_length, ByteTokenizer::kPad),
                             std::vector<std::int32_t>(max_length, 0), std::vector<std::uint8_t>(max_length, 0)});
            fill.push_back(0);
            next_segment.push_back(1);
        }
        auto& p = packs[target];
        std::copy(e.ids.begin(), e.ids.end(), p.ids.begin() + static_cast<std::ptrdiff_t>(fill[target]));
        std::copy(e.mask.begin(), e.mask.end(), p.mask.begin() + static_cast<std::ptrdiff_t>(fill[target]));
        std::fill_n(p.segments.begin() + static_cast<std::ptrdiff_t>(fill[target]), e.size(), next_segment[target]);
        fill[target] += e.size();
        ++next_segment[target];
        s.tokens += e.size();
    }
    s.examples = examples.size();
    s.packs = packs.size();
    s.capacity = packs.size() * max_length;
    if (stats != nullptr) {
        *stats = s;
    }
    return packs;
}

std::vector<PackedSequence> pack(const std::vector<std::vector<std::int32_t>>& examples, std::size_t max_length,
                                 PackStats* stats) {
    std::vector<TokenizedExample> wrapped;
    wrapped.reserve(examples.size());
    for (const auto& ids : examples) {
        wrapped.push_back({ids, std::vector<std::uint8_t>(ids.size(), 1)});
    }
    return pack(wrapped, max_length, stats);
}

std::size_t NextTokenTargets::count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

NextTokenTargets next_token_targets(const PackedSequence& p) {
    const std::size_t n = p.length();
    NextTokenTargets t{std::vector<std::int32_t>(n, 0), std::vector<std::uint8_t>(n, 0)};
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (p.segments[i] != 0 && p.segments[i + 1] == p.segments[i] && p.mask[i + 1] != 0) {
            t.targets[i] = p.ids[i + 1];
            t.mask[i] = 1;
        }
    }
    return t;
}

BatchSchedule make_batches(std::size_t n_packs, const BatchPlan& plan, std::uint64_t seed, std::size_t steps) {
    if (n_packs == 0 || plan.per_device == 0 || plan.n_devices == 0 || plan.accum_steps == 0) {
        throw InvalidArgument("make_batches: all counts must be at least 1");
    }
    BatchSchedule schedule;
    schedule.plan = plan;
    schedule.effective_batch = plan.effective_batch();
    const std::size_t total_steps = steps != 0 ? steps : n_packs / schedule.effective_batch;
    std::vector<std::size_t> order;
    std::uint64_t epoch = 0;
    std::size_t cursor = 0;
    const auto next_index = [&]() {
        if (cursor == order.size()) {
            order.resize(n_packs);
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng rng = Rng::derive(seed, epoch++);
            rng.shuffle(std::span<std::size_t>(order));
            cursor = 0;
        }
        return order[cursor++];
    };
    schedule.steps.resize(total_steps);
    for (auto& step : schedule.steps) {
        step.micro.resize(plan.accum_steps * plan.n_devices);
        for (auto& micro : step.micro) {
            micro.resize(plan.per_device);
            for (auto& idx : micro) {
                idx = next_index();
            }
        }
    }
    return schedule;
}

release::Container PackedDataset::to_container() const {
    release::Container c;
    c.meta = {{"kind", "packed_dataset"},
              {"max_length", max_length},
              {"tokenizer", tokenizer_hash},
              {"stats", stats}};
    std::vector<std::int32_t> ids;
    std::vector<std::int32_t> segments;
    std::vector<std::uint8_t> mask;
    for (const auto& p : packs) {
        if (p.length() != max_length) {
            throw InvalidArgument("packed dataset row length differs from max_length");
        }
        ids.insert(ids.end(), p.ids.begin(), p.ids.end());
        segments.insert(segments.end(), p.segments.begin(), p.segments.end());
        mask.insert(mask.end(), p.mask.begin(), p.mask.end());
    }
    const std::vector<std::size_t> shape{packs.size(), max_length};
    c.put_array<std::int32_t>("ids", shape, ids);
    c.put_array<std::int32_t>("segments", shape, segments);
    c.put_array<std::uint8_t>("mask", shape, mask);
    return c;
}

PackedDataset PackedDataset::from_container(const release::Container& c) {
    PackedDataset d;
    try {
        if (c.meta.at("kind").get<std::string>() != "packed_dataset") {
            throw FormatError("container is not a packed dataset");
        }
        d.max_length = c.meta.at("max_length").get<std::size_t>();
        d.tokenizer_hash = c.meta.at("tokenizer").get<std::string>();
        d.stats = c.meta.value("stats", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("packed dataset metadata: ") + e.what());
    }
    const auto ids = c.get_array<std::int32_t>("ids");
    const auto segments = c.get_array<std::int32_t>("segments");
    const auto mask = c.get_array<std::uint8_t>("mask");
    const auto& shape = c.at("ids").shape;
    if (shape.size() != 2 || shape[1] != d.max_length || c.at("segments").shape != shape ||
        c.at("mask").shape != shape) {
        throw FormatError("packed dataset arrays disagree on shape");
    }
    const std::size_t n = shape[0];
    const std::size_t len = d.max_length;
    d.packs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto from = static_cast<std::ptrdiff_t>(i * len);
        const auto to = static_cast<std::ptrdiff_t>((i + 1) * len);
        d.packs[i].ids.assign(ids.begin() + from, ids.begin() + to);
        d.packs[i].segments.assign(segments.begin() + from, segments.begin() + to);
        d.packs[i].mask.assign(mask.begin() + from, mask.begin() + to);
    }
    return d;
}

void PackedDataset::save(const std::string& path) const { to_container().save(path); }

PackedDataset PackedDataset::load(const std::string& path) {
    return from_container(release::Container::load(path));
}

Schema schema_from_string(std::string_view s) {
    if (s == "auto") {
        return Schema::automatic;
    }
    if (s == "text") {
        return Schema::text;
    }
    if (s == "dialogue") {
        return Schema::dialogue;
    }
    if (s == "instruction") {
        return Schema::instruction;
    }
    throw InvalidArgument("unknown schema: " + std::string(s));
}

nlohmann::json PrepareStats::to_json() const {
    return {{"examples_in", examples_in},
            {"examples_out", examples_out},
            {"rejected_overlong", rejected_overlong},
            {"truncated", truncated},
            {"packs", pack.packs},
            {"tokens", pack.tokens},
            {"utilization", pack.utilization()}};
}

Record parse_record(const nlohmann::json& j, Schema schema) {
    if (!j.is_object()) {
        throw FormatError("record is not a JSON object");
    }
    if (schema == Schema::automatic) {
        if (j.contains("turns")) {
            schema = Schema::dialogue;
        } else if (j.contains("instruction")) {
            schema = Schema::instruction;
        } else if (j.contains("text")) {
            schema = Schema::text;
        } else {
            throw FormatError("record matches no known schema");
        }
    }
    Record r;
    r.schema = schema;
    try {
        switch (schema) {
            case Schema::text:
                if (!j.contains("text") || !j["text"].is_string()) {
                    throw FormatError("text record needs a string \"text\"");
                }
                r.text = j["text"].get<std::string>();
                break;
            case Schema::dialogue:
                r.rendered = prompts::render_chat(prompts::Dialogue::from_json(j));
                break;
            case Schema::instruction:
                r.rendered = prompts::render_instruction(prompts::InstructionExample::from_json(j));
                break;
            case Schema::automatic:
                break;
        }
    } catch (const InvalidArgument& e) {
        throw FormatError(e.what());
    }
    return r;
}

PackedDataset prepare_dataset(std::istream& in, const PrepareOptions& options, PrepareStats* stats) {
    const ByteTokenizer tok;
    PrepareStats s;
    std::vector<TokenizedExample> examples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; })) {
            continue;
        }
        Record rec;
        try {
            rec = parse_record(nlohmann::json::parse(line), options.schema);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
        }
        ++s.examples_in;
        if (rec.schema == Schema::text) {
            auto e = encode_text(rec.text, tok);
            if (e.size() > options.max_length) {
                ++s.truncated;
            }
            examples.push_back(truncate(std::move(e), options.max_length));
        } else {
            auto e = encode(rec.rendered, tok, options.loss_on_prompt);
            const bool longer = e.size() > options.max_length;
            auto kept = truncate_sft(std::move(e), options.max_length);
            if (!kept) {
                ++s.rejected_overlong;
                continue;
            }
            s.truncated += longer ? 1 : 0;
            examples.push_back(std::move(*kept));
        }
    }
    if (in.bad()) {
        throw Error("read failure on dataset input");
    }
    s.examples_out = examples.size();
    PackedDataset d;
    d.max_length = options.max_length;
    d.tokenizer_hash = tok.hash();
    d.packs = pack(examples, options.max_length, &s.pack);
    d.stats = s.to_json();
    if (stats != nullptr) {
        *stats = s;
    }
    return d;
}

}  // namespace adfg::datapipe
