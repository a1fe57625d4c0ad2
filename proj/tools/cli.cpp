// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "adfg/corpus/filter.hpp"
#include "adfg/datapipe/pipeline.hpp"
#include "adfg/error.hpp"
#include "adfg/model/decoder.hpp"
#include "adfg/prompts/templates.hpp"
#include "adfg/release/checkpoint.hpp"
#include "adfg/trainer/trainer.hpp"

namespace adfg::cli {
namespace {

namespace fs = std::filesystem;
using datapipe::ByteTokenizer;
using Model = model::DecoderModel<float>;
using Adapter = adapters::LoraAdapter<float>;

// Bad invocations that CLI11 cannot see, e.g. an unreadable config file.
class UsageError : public Error {
public:
    using Error::Error;
};

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw UsageError("cannot open " + path);
    }
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(path + ": " + e.what());
    }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    const std::string text = j.dump(2) + "\n";
    release::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::ifstream open_input(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw UsageError("cannot open " + path);
    }
    return f;
}

// --seed, then a seed from the config file, then ADFG_SEED, then zero.
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value,
                           std::optional<std::uint64_t> configured = std::nullopt) {
    if (flag->count() > 0) {
        return flag_value;
    }
    if (configured) {
        return *configured;
    }
    if (const char* env = std::getenv("ADFG_SEED"); env != nullptr && *env != '\0') {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used == std::string_view(env).size()) {
                return v;
            }
        } catch (const std::exception&) {
        }
        throw UsageError(std::string("ADFG_SEED is not an unsigned integer: ") + env);
    }
    return 0;
}

Model load_model(const std::string& path) { return release::model_from_container<float>(release::Container::load(path)); }

std::optional<Adapter> load_adapter(const std::string& path, const Model& base) {
    if (path.empty()) {
        return std::nullopt;
    }
    const auto c = release::Container::load(path);
    const auto fp = release::adapter_base_fingerprint(c);
    if (!fp.empty() && fp != release::model_fingerprint(base)) {
        throw FingerprintError("adapter " + path + " was trained on a different base model");
    }
    return release::adapter_from_container<float>(c);
}

model::ModelConfig default_model_config(std::size_t max_length) {
    model::ModelConfig c;
    c.vocab_size = ByteTokenizer::kVocabSize;
    c.d_model = 64;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_ff = 192;
    c.max_positions = max_length;
    return c;
}

// ---- filter-corpus ---------------------------------------------------------

struct FilterArgs {
    std::string input;
    std::string output;
    std::string report;
    std::string bad_words;
    bool trail = false;
};

void add_filter(CLI::App& app, FilterArgs& a) {
    app.add_option("-i,--input", a.input, "Input JSONL with a string \"text\" per record")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("-o,--output", a.output, "Accepted records, cleaned, as JSONL")->required();
    app.add_option("--report", a.report, "Write the rule attribution report as JSON");
    app.add_option("--bad-words", a.bad_words, "Bad-word list, one word or phrase per line")
        ->check(CLI::ExistingFile);
    app.add_flag("--trail", a.trail, "Include a per-document decision trail in the report");
}

int do_filter(const FilterArgs& a, std::ostream& err) {
    corpus::FilterOptions opts;
    if (!a.bad_words.empty()) {
        opts.bad_words = corpus::BadWordList::load(a.bad_words);
    }
    opts.keep_trail = a.trail;
    auto in = open_input(a.input);
    const auto tmp = a.output + ".tmp";
    corpus::FilterReport report;
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + a.output);
        }
        report = corpus::run_pipeline(in, out, opts);
        out.flush();
        if (!out) {
            throw Error("write failure on " + a.output);
        }
    }
    fs::rename(tmp, a.output);
    if (!a.report.empty()) {
        write_json_file(a.report, report.to_json());
    }
    err << "filter-corpus: " << report.seen << " documents, " << report.accepted << " accepted, " << report.rejected
        << " rejected, " << report.errors.size() << " undecodable\n";
    return kExitOk;
}

// ---- prepare-dataset -------------------------------------------------------

struct PrepareArgs {
    std::string input;
    std::string output;
    std::string stats;
    std::string schema = "auto";
    std::size_t max_length = 1024;
    bool loss_on_prompt = false;
};

void add_prepare(CLI::App& app, PrepareArgs& a) {
    app.add_option("-i,--input", a.input, "Input JSONL (text, dialogue or instruction records)")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("-o,--output", a.output, "Packed dataset cache (.adfg)")->required();
    app.add_option("--stats", a.stats, "Write preparation statistics as JSON");
    app.add_option("--schema", a.schema, "Record schema")
        ->check(CLI::IsMember({"auto", "text", "dialogue", "instruction"}))
        ->capture_default_str();
    app.add_option("--max-length", a.max_length, "Packed sequence length (1024 adaptation, 2048 chat)")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20))
        ->capture_default_str();
    app.add_flag("--loss-on-prompt", a.loss_on_prompt, "Train on prompt tokens as well as responses");
}

int do_prepare(const PrepareArgs& a, std::ostream& err) {
    datapipe::PrepareOptions opts;
    opts.schema = a.schema == "auto" ? datapipe::Schema::automatic : datapipe::schema_from_string(a.schema);
    opts.max_length = a.max_length;
    opts.loss_on_prompt = a.loss_on_prompt;
    auto in = open_input(a.input);
    datapipe::PrepareStats stats;
    const auto d = datapipe::prepare_dataset(in, opts, &stats);
    d.save(a.output);
    if (!a.stats.empty()) {
        write_json_file(a.stats, stats.to_json());
    }
    err << "prepare-dataset: " << stats.examples_in << " examples in, " << stats.examples_out << " out, "
        << stats.rejected_overlong << " rejected as overlong, " << stats.pack.packs << " packs, utilization "
        << stats.pack.utilization() << "\n";
    return kExitOk;
}

// ---- train-* ---------------------------------------------------------------

struct TrainArgs {
    trainer::Preset preset = trainer::Preset::adapt;
    trainer::TrainConfig cfg;
    std::string data;
    std::string out;
    std::string model;
    std::string model_config;
    std::string config;
    std::uint64_t seed = 0;
    bool no_segment_masking = false;
    adapters::LoraConfig lora;
    bool full = false;
    bool no_quantize = false;
    std::size_t block_size = quantize::kDefaultBlockSize;
    std::size_t constant_block_size = quantize::kDefaultConstantBlockSize;
    bool no_double_quant = false;

    CLI::Option* seed_opt = nullptr;
    std::vector<std::pair<CLI::Option*, std::function<void(trainer::TrainConfig&)>>> overrides;
};

void add_train(CLI::App& app, TrainArgs& a, trainer::Preset preset) {
    a.preset = preset;
    a.cfg = trainer::TrainConfig::preset(preset);
    auto& c = a.cfg;
    app.add_option("-d,--data", a.data, "Packed dataset cache from prepare-dataset")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("-o,--out", a.out, "Output directory for checkpoints and metrics")->required();
    app.add_option("-m,--model", a.model, "Base model container; omitted means a freshly initialized toy model")
        ->check(CLI::ExistingFile);
    app.add_option("--model-config", a.model_config, "JSON model configuration for a fresh base model")
        ->check(CLI::ExistingFile);
    app.add_option("-c,--config", a.config, "JSON training configuration; flags override its values");
    a.seed_opt = app.add_option("--seed", a.seed, "Random seed (falls back to ADFG_SEED)")->capture_default_str();

    const auto over = [&](CLI::Option* opt, std::function<void(trainer::TrainConfig&)> apply) {
        a.overrides.emplace_back(opt, std::move(apply));
    };
    over(app.add_option("--steps", c.total_steps, "Optimizer steps")->capture_default_str(),
         [&a](auto& t) { t.total_steps = a.cfg.total_steps; });
    over(app.add_option("--lr", c.lr_peak, "Peak learning rate")->capture_default_str(),
         [&a](auto& t) { t.lr_peak = a.cfg.lr_peak; });
    over(app.add_option("--warmup-ratio", c.warmup_ratio, "Share of steps with linear warmup")->capture_default_str(),
         [&a](auto& t) { t.warmup_ratio = a.cfg.warmup_ratio; });
    over(app.add_option("--clip-norm", c.clip_norm, "Global gradient norm limit")->capture_default_str(),
         [&a](auto& t) { t.clip_norm = a.cfg.clip_norm; });
    over(app.add_option("--weight-decay", c.weight_decay, "Decoupled weight decay")->capture_default_str(),
         [&a](auto& t) { t.weight_decay = a.cfg.weight_decay; });
    over(app.add_option("--per-device-batch", c.per_device_batch, "Sequences per device and micro-step")
             ->capture_default_str(),
         [&a](auto& t) { t.per_device_batch = a.cfg.per_device_batch; });
    over(app.add_option("--devices", c.n_devices, "Simulated data-parallel devices")->capture_default_str(),
         [&a](auto& t) { t.n_devices = a.cfg.n_devices; });
    over(app.add_option("--accum-steps", c.accum_steps, "Gradient accumulation steps")->capture_default_str(),
         [&a](auto& t) { t.accum_steps = a.cfg.accum_steps; });
    over(app.add_option("--max-length", c.max_length, "Maximum sequence length")->capture_default_str(),
         [&a](auto& t) { t.max_length = a.cfg.max_length; });
    over(app.add_option("--checkpoint-every", c.checkpoint_every, "Steps between checkpoints (0: final only)")
             ->capture_default_str(),
         [&a](auto& t) { t.checkpoint_every = a.cfg.checkpoint_every; });
    over(app.add_flag("--no-segment-masking", a.no_segment_masking,
                      "Let packed examples attend to each other (ablation)"),
         [&a](auto& t) { t.segment_masking = !a.no_segment_masking; });

    app.add_option("--lora-r", a.lora.r, "Adapter rank")->capture_default_str();
    app.add_option("--lora-alpha", a.lora.alpha, "Adapter scaling numerator")->capture_default_str();
    app.add_option("--lora-dropout", a.lora.dropout, "Dropout on the adapter input")->capture_default_str();
    app.add_option("--targets", a.lora.targets, "Adapted projections")->delimiter(',')->capture_default_str();
    app.add_flag("--full", a.full, "Train every base weight instead of an adapter");
    app.add_flag("--no-quantize", a.no_quantize, "Keep the frozen base in full precision");
    app.add_option("--block-size", a.block_size, "NF4 block size")->capture_default_str();
    app.add_option("--constant-block-size", a.constant_block_size, "Block size for quantizing the absmax constants")
        ->capture_default_str();
    app.add_flag("--no-double-quant", a.no_double_quant, "Store absmax constants in fp32");
}

int do_train(TrainArgs& a, std::ostream& err) {
    trainer::TrainConfig cfg = trainer::TrainConfig::preset(a.preset);
    bool seed_from_file = false;
    if (!a.config.empty()) {
        const auto j = read_json_file(a.config);
        seed_from_file = j.is_object() && j.contains("seed");
        try {
            cfg = trainer::TrainConfig::from_json(j, cfg);
        } catch (const InvalidArgument& e) {
            throw UsageError(a.config + ": " + e.what());
        }
    }
    for (const auto& [opt, apply] : a.overrides) {
        if (opt->count() > 0) {
            apply(cfg);
        }
    }
    cfg.seed = resolve_seed(a.seed_opt, a.seed, seed_from_file ? std::optional(cfg.seed) : std::nullopt);
    try {
        cfg.validate();
        a.lora.validate();
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    if (a.full && a.model.empty() && a.model_config.empty()) {
        err << "train: full fine-tuning of a freshly initialized model\n";
    }
    if (!a.model.empty() && !a.model_config.empty()) {
        throw UsageError("--model and --model-config are mutually exclusive");
    }

    const auto data = datapipe::PackedDataset::load(a.data);
    if (data.tokenizer_hash != ByteTokenizer{}.hash()) {
        throw FormatError(a.data + " was tokenized with a different tokenizer");
    }
    if (data.max_length > cfg.max_length) {
        throw InvalidArgument("dataset sequences (" + std::to_string(data.max_length) +
                              ") are longer than max_length " + std::to_string(cfg.max_length));
    }

    Model base;
    if (!a.model.empty()) {
        base = load_model(a.model);
    } else {
        auto mc = default_model_config(cfg.max_length);
        if (!a.model_config.empty()) {
            try {
                mc = model::ModelConfig::from_json(read_json_file(a.model_config));
            } catch (const InvalidArgument& e) {
                throw UsageError(a.model_config + ": " + e.what());
            }
        }
        base = Model::init(mc, Rng::derive(cfg.seed, fnv1a("base-init")).below(UINT32_MAX));
    }
    fs::create_directories(a.out);

    std::optional<Adapter> adapter;
    if (!a.full) {
        if (!a.no_quantize) {
            bool already = false;
            for (const auto& n : base.names()) {
                already = already || base.is_quantized(n);
            }
            if (!already) {
                base.quantize_projections(a.block_size, !a.no_double_quant, a.constant_block_size);
            }
        }
        adapter = adapters::init_adapter<float>(a.lora, base.target_shapes(a.lora.targets),
                                                Rng::derive(cfg.seed, fnv1a("adapter-init")).below(UINT32_MAX));
        const auto report = adapters::trainable_param_report(base.parameter_count(), &*adapter);
        err << "train: " << report.trainable << " trainable of " << report.trainable + report.frozen
            << " parameters (" << 100.0 * report.ratio() << "%)\n";
    } else {
        base = base.dequantized();
    }
    release::model_to_container(base).save((fs::path(a.out) / "base.adfg").string());
    write_json_file((fs::path(a.out) / "train_config.json").string(), cfg.to_json());

    std::ofstream metrics((fs::path(a.out) / "metrics.jsonl").string(), std::ios::trunc);
    trainer::TrainIo io;
    io.checkpoint_dir = a.out;
    io.metrics = &metrics;
    io.log = &err;
    const auto result = trainer::train(base, adapter ? &*adapter : nullptr, data.packs, cfg, io);
    err << "train: " << result.metrics.size() << " steps, effective batch " << cfg.effective_batch()
        << ", final loss " << (result.metrics.empty() ? 0.0 : result.metrics.back().loss) << ", wrote "
        << result.checkpoints.back() << "\n";
    return kExitOk;
}

// ---- eval-ppl --------------------------------------------------------------

struct EvalArgs {
    std::string model;
    std::string adapter;
    std::string data;
    std::string output;
    bool no_segment_masking = false;
};

void add_eval(CLI::App& app, EvalArgs& a) {
    app.add_option("-m,--model", a.model, "Model container")->required()->check(CLI::ExistingFile);
    app.add_option("-a,--adapter", a.adapter, "Adapter container")->check(CLI::ExistingFile);
    app.add_option("-d,--data", a.data, "Packed dataset cache")->required()->check(CLI::ExistingFile);
    app.add_option("-o,--output", a.output, "Write the result as JSON (default: stdout)");
    app.add_flag("--no-segment-masking", a.no_segment_masking, "Let packed examples attend to each other");
}

int do_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    const auto m = load_model(a.model);
    const auto adapter = load_adapter(a.adapter, m);
    const auto data = datapipe::PackedDataset::load(a.data);
    std::size_t targets = 0;
    for (const auto& p : data.packs) {
        targets += datapipe::next_token_targets(p).count();
    }
    const double ppl =
        trainer::evaluate_perplexity<float>(m, adapter ? &*adapter : nullptr, data.packs, !a.no_segment_masking);
    const nlohmann::json j{{"perplexity", ppl}, {"targets", targets}, {"sequences", data.packs.size()}};
    if (a.output.empty()) {
        out << j.dump() << "\n";
    } else {
        write_json_file(a.output, j);
    }
    err << "eval-ppl: perplexity " << ppl << " over " << targets << " targets\n";
    return kExitOk;
}

// ---- merge / diff / apply --------------------------------------------------

struct MergeArgs {
    std::string model;
    std::string adapter;
    std::string output;
};

int do_merge(const MergeArgs& a, std::ostream& err) {
    const auto m = load_model(a.model);
    const auto c = release::Container::load(a.adapter);
    const auto merged = release::apply_chain(m, {std::get<release::AdapterStep>(release::load_chain_step(c))});
    const auto out = release::model_to_container(merged);
    out.save(a.output);
    err << "merge: wrote " << a.output << " (" << release::to_hex(out.fingerprint()) << ")\n";
    return kExitOk;
}

struct DiffArgs {
    std::string base;
    std::string finetuned;
    std::string output;
};

int do_diff(const DiffArgs& a, std::ostream& err) {
    const auto base = load_model(a.base);
    const auto ft = load_model(a.finetuned);
    release::DiffSummary s;
    const auto d = release::diff(base.dequantized(), ft.dequantized(), &s);
    d.save(a.output);
    err << "diff: " << s.tensors << " tensors, " << s.replaced << " stored as full values\n";
    return kExitOk;
}

struct ApplyArgs {
    std::string base;
    std::vector<std::string> steps;
    std::string output;
};

int do_apply(const ApplyArgs& a, std::ostream& err) {
    const auto base = load_model(a.base);
    std::vector<release::ChainStep> steps;
    for (const auto& p : a.steps) {
        steps.push_back(release::load_chain_step(release::Container::load(p)));
    }
    // Diffs are taken between dense models (see diff), so a quantized base
    // meets a leading diff step in dequantized form.
    const bool leading_diff = !steps.empty() && std::holds_alternative<release::DiffStep>(steps.front());
    const auto result = release::apply_chain(leading_diff ? base.dequantized() : base, steps);
    release::model_to_container(result).save(a.output);
    err << "apply: " << steps.size() << " steps applied, wrote " << a.output << "\n";
    return kExitOk;
}

// ---- generate / chat -------------------------------------------------------

struct GenerateArgs {
    std::string model;
    std::string adapter;
    std::string prompt;
    std::string input;
    std::string system{prompts::default_system_prompt()};
    std::string templ = "chat";
    std::string output;
    std::size_t max_new = 64;
    double temperature = 0.0;
    std::uint64_t seed = 0;
    bool echo_prompt = false;
    CLI::Option* seed_opt = nullptr;
};

void add_generation(CLI::App& app, GenerateArgs& a, bool with_prompt) {
    app.add_option("-m,--model", a.model, "Model container")->required()->check(CLI::ExistingFile);
    app.add_option("-a,--adapter", a.adapter, "Adapter container")->check(CLI::ExistingFile);
    if (with_prompt) {
        app.add_option("-p,--prompt", a.prompt, "User message, instruction or raw text")->required();
        app.add_option("--input", a.input, "Input section for the instruction template");
        app.add_option("--template", a.templ, "Prompt format")
            ->check(CLI::IsMember({"chat", "instruction", "raw"}))
            ->capture_default_str();
        app.add_option("-o,--output", a.output, "Write the completion to a file (default: stdout)");
    }
    app.add_option("--system", a.system, "System prompt for the chat template (default: the Italian assistant)");
    app.add_option("--max-new", a.max_new, "Maximum generated tokens")->capture_default_str();
    app.add_option("--temperature", a.temperature, "Sampling temperature; 0 is greedy")->capture_default_str();
    a.seed_opt = app.add_option("--seed", a.seed, "Sampling seed (falls back to ADFG_SEED)")->capture_default_str();
    app.add_flag("--echo-prompt", a.echo_prompt, "Log the rendered prompt to stderr before generating");
}

std::vector<std::int32_t> prompt_ids(const prompts::Rendered& r) {
    const ByteTokenizer tok;
    return datapipe::encode(r, tok).ids;
}

std::string render_with_specials(const prompts::Dialogue& d) { return prompts::render_chat(d).text(true); }

std::string completion_text(const std::vector<std::int32_t>& ids) { return ByteTokenizer{}.decode(ids); }

int do_generate(const GenerateArgs& a, std::ostream& out, std::ostream& err) {
    const auto m = load_model(a.model);
    const auto adapter = load_adapter(a.adapter, m);
    const ByteTokenizer tok;
    std::vector<std::int32_t> ids;
    std::string shown;
    if (a.templ == "chat") {
        prompts::Dialogue d;
        d.system = a.system;
        d.turns = {{a.prompt, std::nullopt}};
        ids = prompt_ids(prompts::render_chat(d));
        shown = render_with_specials(d);
    } else {
        const std::string body =
            a.templ == "instruction" ? prompts::instruction_prompt({a.prompt, a.input, ""}) : a.prompt;
        ids.push_back(ByteTokenizer::kBos);
        const auto body_ids = tok.encode(body);
        ids.insert(ids.end(), body_ids.begin(), body_ids.end());
        shown = std::string(prompts::kBosMarker) + body;
    }
    if (a.echo_prompt) {
        err << "prompt: " << shown << "\n";
    }
    model::GenerateOptions g;
    g.max_new = a.max_new;
    g.temperature = a.temperature;
    g.seed = resolve_seed(a.seed_opt, a.seed);
    g.eos = ByteTokenizer::kEos;
    if (ids.size() + g.max_new > m.config().max_positions) {
        throw InvalidArgument("prompt of " + std::to_string(ids.size()) + " tokens plus --max-new exceeds the model's " +
                              std::to_string(m.config().max_positions) + " positions");
    }
    const auto text = completion_text(model::generate(m, adapter ? &*adapter : nullptr, ids, g));
    if (a.output.empty()) {
        out << text << "\n";
    } else {
        std::ofstream f(a.output, std::ios::binary | std::ios::trunc);
        f << text;
        if (!f) {
            throw Error("cannot write " + a.output);
        }
    }
    err << "generate: " << ids.size() << " prompt tokens\n";
    return kExitOk;
}

struct ChatArgs {
    GenerateArgs gen;
    std::size_t max_length = 2048;
};

int do_chat(const ChatArgs& a, std::istream& in, std::ostream& out, std::ostream& err) {
    const auto m = load_model(a.gen.model);
    const auto adapter = load_adapter(a.gen.adapter, m);
    const std::size_t budget = std::min(a.max_length, m.config().max_positions);
    if (a.gen.max_new >= budget) {
        throw UsageError("--max-new must be smaller than the context length");
    }
    model::GenerateOptions g;
    g.max_new = a.gen.max_new;
    g.temperature = a.gen.temperature;
    g.seed = resolve_seed(a.gen.seed_opt, a.gen.seed);
    g.eos = ByteTokenizer::kEos;

    std::vector<prompts::Turn> history;
    std::string line;
    std::size_t exchange = 0;
    err << "chat: /reset clears the history, /quit or end of input leaves\n";
    while (true) {
        out << "> " << std::flush;
        if (!std::getline(in, line)) {
            break;
        }
        if (line == "/quit") {
            break;
        }
        if (line == "/reset") {
            history.clear();
            err << "chat: history cleared\n";
            continue;
        }
        if (line.empty()) {
            continue;
        }
        prompts::Dialogue d;
        d.system = a.gen.system;
        std::vector<std::int32_t> ids;
        // Oldest turns are evicted until the prompt and the reply fit.
        while (true) {
            d.turns = history;
            d.turns.push_back({line, std::nullopt});
            ids = prompt_ids(prompts::render_chat(d));
            if (ids.size() + g.max_new <= budget || history.empty()) {
                break;
            }
            history.erase(history.begin());
            err << "chat: evicted the oldest turn\n";
        }
        if (ids.size() + g.max_new > budget) {
            err << "chat: message too long for the context, ignored\n";
            continue;
        }
        if (a.gen.echo_prompt) {
            err << "prompt: " << render_with_specials(d) << "\n";
        }
        model::GenerateOptions step = g;
        step.seed = g.seed + exchange++;
        auto reply_ids = model::generate(m, adapter ? &*adapter : nullptr, ids, step);
        if (!reply_ids.empty() && reply_ids.back() == ByteTokenizer::kEos) {
            reply_ids.pop_back();
        }
        const auto reply = completion_text(reply_ids);
        out << reply << "\n";
        history.push_back({line, reply});
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Language adaptation toolkit: corpus filtering, dataset packing, QLoRA training and release tools",
                 "adfg"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every command");

    FilterArgs filter;
    add_filter(*app.add_subcommand("filter-corpus", "Apply the sentence and document filters to a JSONL corpus"),
               filter);
    PrepareArgs prepare;
    add_prepare(*app.add_subcommand("prepare-dataset", "Render, tokenize, truncate and pack a JSONL dataset"), prepare);

    TrainArgs adapt;
    TrainArgs sft;
    TrainArgs instruct;
    auto* adapt_cmd = app.add_subcommand("train-adapt", "Language adaptation with a QLoRA adapter");
    auto* sft_cmd = app.add_subcommand("train-sft", "Supervised fine-tuning on dialogues");
    auto* instruct_cmd = app.add_subcommand("train-instruct", "Instruction tuning");
    add_train(*adapt_cmd, adapt, trainer::Preset::adapt);
    add_train(*sft_cmd, sft, trainer::Preset::chat);
    add_train(*instruct_cmd, instruct, trainer::Preset::instruct);

    EvalArgs eval;
    add_eval(*app.add_subcommand("eval-ppl", "Held-out perplexity of a model with an optional adapter"), eval);

    MergeArgs merge;
    auto* merge_cmd = app.add_subcommand("merge", "Fold an adapter into its base model");
    merge_cmd->add_option("-m,--model", merge.model, "Base model container")->required()->check(CLI::ExistingFile);
    merge_cmd->add_option("-a,--adapter", merge.adapter, "Adapter container")->required()->check(CLI::ExistingFile);
    merge_cmd->add_option("-o,--output", merge.output, "Merged model container")->required();

    DiffArgs diff;
    auto* diff_cmd = app.add_subcommand("diff", "Weight difference of a fine-tuned model against its base");
    diff_cmd->add_option("-b,--base", diff.base, "Base model container")->required()->check(CLI::ExistingFile);
    diff_cmd->add_option("-f,--finetuned", diff.finetuned, "Fine-tuned model container")
        ->required()
        ->check(CLI::ExistingFile);
    diff_cmd->add_option("-o,--output", diff.output, "Diff container")->required();

    ApplyArgs apply;
    auto* apply_cmd = app.add_subcommand("apply", "Apply adapters and diffs to a base model, left to right");
    apply_cmd->add_option("-b,--base", apply.base, "Base model container")->required()->check(CLI::ExistingFile);
    apply_cmd->add_option("-s,--step", apply.steps, "Adapter or diff container; repeatable, applied in order")
        ->required()
        ->check(CLI::ExistingFile);
    apply_cmd->add_option("-o,--output", apply.output, "Resulting model container")->required();

    GenerateArgs generate;
    add_generation(*app.add_subcommand("generate", "Complete one prompt"), generate, true);
    ChatArgs chat;
    auto* chat_cmd = app.add_subcommand("chat", "Interactive chat on stdin and stdout");
    add_generation(*chat_cmd, chat.gen, false);
    chat_cmd->add_option("--max-length", chat.max_length, "Context length; the oldest turns are evicted beyond it")
        ->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (app.got_subcommand("filter-corpus")) {
            return do_filter(filter, err);
        }
        if (app.got_subcommand("prepare-dataset")) {
            return do_prepare(prepare, err);
        }
        if (adapt_cmd->parsed()) {
            return do_train(adapt, err);
        }
        if (sft_cmd->parsed()) {
            return do_train(sft, err);
        }
        if (instruct_cmd->parsed()) {
            return do_train(instruct, err);
        }
        if (app.got_subcommand("eval-ppl")) {
            return do_eval(eval, out, err);
        }
        if (merge_cmd->parsed()) {
            return do_merge(merge, err);
        }
        if (diff_cmd->parsed()) {
            return do_diff(diff, err);
        }
        if (apply_cmd->parsed()) {
            return do_apply(apply, err);
        }
        if (app.got_subcommand("generate")) {
            return do_generate(generate, out, err);
        }
        if (chat_cmd->parsed()) {
            return do_chat(chat, in, out, err);
        }
    } catch (const UsageError& e) {
        err << "adfg: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "adfg: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace adfg::cli
