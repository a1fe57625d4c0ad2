// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/prompts/templates.hpp"

#include "adfg/error.hpp"

namespace adfg::prompts {

namespace {

Span text_span(std::string text, bool trainable = false) {
    return {SpanKind::text, std::move(text), trainable};
}

struct InstructionParts {
    std::string instruction;
    std::string input;
    std::string response;
    bool has_input = false;
};

InstructionParts split_instruction(std::string_view text) {
    const std::string head = std::string(instruction_preamble()) + "\n\n\n" + std::string(kInstructionMarker);
    if (text.substr(0, head.size()) != head) {
        throw FormatError("instruction text does not start with the preamble and the instruction marker");
    }
    const std::string_view body = text.substr(head.size());
    const std::size_t input_at = body.find(kInputMarker);
    const std::size_t response_at = body.find(kResponseMarker);
    if (response_at == std::string_view::npos) {
        throw FormatError("instruction text has no response marker");
    }
    InstructionParts parts;
    if (input_at != std::string_view::npos && input_at < response_at) {
        parts.has_input = true;
        parts.instruction = std::string(body.substr(0, input_at));
        const std::string_view rest = body.substr(input_at + kInputMarker.size());
        const std::size_t r = rest.find(kResponseMarker);
        parts.input = std::string(rest.substr(0, r));
        parts.response = std::string(rest.substr(r + kResponseMarker.size()));
    } else {
        parts.instruction = std::string(body.substr(0, response_at));
        parts.response = std::string(body.substr(response_at + kResponseMarker.size()));
    }
    return parts;
}

}  // namespace

std::string Rendered::text(bool with_specials) const {
    std::string out;
    for (const auto& s : spans) {
        if (s.kind == SpanKind::text) {
            out += s.text;
        } else if (with_specials) {
            out += s.kind == SpanKind::bos ? kBosMarker : kEosMarker;
        }
    }
    return out;
}

std::string Rendered::trainable_text() const {
    std::string out;
    for (const auto& s : spans) {
        if (s.kind == SpanKind::text && s.trainable) {
            out += s.text;
        }
    }
    return out;
}

std::string_view default_system_prompt() {
    static const std::string prompt =
        "Sei un assistente disponibile, rispettoso e onesto. Rispondi sempre nel modo piu' utile "
        "possibile, pur essendo sicuro.  Le risposte non devono includere contenuti dannosi, non etici, "
        "razzisti, sessisti, tossici, pericolosi o illegali. Assicurati che le tue risposte siano "
        "socialmente imparziali e positive. Se una domanda non ha senso o non e' coerente con i fatti, "
        "spiegane il motivo invece di rispondere in modo non corretto. Se non conosci la risposta a una "
        "domanda, non condividere informazioni false. ";
    return prompt;
}

void Dialogue::validate() const {
    if (turns.empty()) {
        throw InvalidArgument("dialogue has no turns");
    }
    for (std::size_t i = 0; i < turns.size(); ++i) {
        if (turns[i].user.empty()) {
            throw InvalidArgument("dialogue turn " + std::to_string(i) + " has an empty user message");
        }
        if (!turns[i].assistant && i + 1 != turns.size()) {
            throw InvalidArgument("dialogue turn " + std::to_string(i) + " has no assistant answer");
        }
    }
}

Dialogue Dialogue::from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array()) {
        throw FormatError("dialogue record needs a \"turns\" array");
    }
    Dialogue d;
    if (j.contains("system")) {
        if (!j["system"].is_string()) {
            throw FormatError("dialogue \"system\" must be a string");
        }
        d.system = j["system"].get<std::string>();
    }
    for (const auto& t : j["turns"]) {
        if (!t.is_object() || !t.contains("user") || !t["user"].is_string()) {
            throw FormatError("dialogue turn needs a string \"user\"");
        }
        Turn turn{t["user"].get<std::string>(), std::nullopt};
        if (t.contains("assistant") && !t["assistant"].is_null()) {
            if (!t["assistant"].is_string()) {
                throw FormatError("dialogue \"assistant\" must be a string");
            }
            turn.assistant = t["assistant"].get<std::string>();
        }
        d.turns.push_back(std::move(turn));
    }
    return d;
}

Rendered render_chat(const Dialogue& d) {
    d.validate();
    Rendered r;
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
        const auto& t = d.turns[i];
        r.spans.push_back({SpanKind::bos, {}, false});
        std::string prompt = "[INST] ";
        if (i == 0) {
            prompt += "<<SYS>>\n" + d.system + "\n<</SYS>>\n\n";
        }
        prompt += t.user + " [/INST] ";
        r.spans.push_back(text_span(std::move(prompt)));
        if (t.assistant) {
            r.spans.push_back(text_span(*t.assistant, true));
            r.spans.push_back({SpanKind::eos, {}, true});
        }
    }
    return r;
}

std::string_view instruction_preamble() {
    static const std::string preamble =
        "Di seguito è riportata un'istruzione che descrive un'attività, abbinata ad un input che fornisce "
        "ulteriore informazione. Scrivi una risposta che soddisfi adeguatamente la richiesta.";
    return preamble;
}

std::string instruction_prompt(const InstructionExample& e) {
    std::string out = std::string(instruction_preamble()) + "\n\n\n" + std::string(kInstructionMarker) + e.instruction;
    if (!e.input.empty()) {
        out += kInputMarker;
        out += e.input;
    }
    out += kResponseMarker;
    return out;
}

void InstructionExample::validate() const {
    if (instruction.empty()) {
        throw InvalidArgument("instruction example has an empty instruction");
    }
    const auto parts = split_instruction(instruction_prompt(*this));
    if (parts.instruction != instruction || parts.input != input || !parts.response.empty()) {
        throw InvalidArgument("instruction or input contains a section marker");
    }
}

InstructionExample InstructionExample::from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("instruction") || !j["instruction"].is_string()) {
        throw FormatError("instruction record needs a string \"instruction\"");
    }
    InstructionExample e;
    e.instruction = j["instruction"].get<std::string>();
    for (const auto* key : {"input", "response"}) {
        if (j.contains(key) && !j[key].is_null()) {
            if (!j[key].is_string()) {
                throw FormatError(std::string("instruction record field \"") + key + "\" must be a string");
            }
            (std::string_view(key) == "input" ? e.input : e.response) = j[key].get<std::string>();
        }
    }
    return e;
}

Rendered render_instruction(const InstructionExample& e) {
    e.validate();
    Rendered r;
    r.spans.push_back({SpanKind::bos, {}, false});
    r.spans.push_back(text_span(instruction_prompt(e)));
    r.spans.push_back(text_span(e.response, true));
    r.spans.push_back({SpanKind::eos, {}, true});
    return r;
}

InstructionExample parse_instruction(std::string_view text) {
    auto parts = split_instruction(text);
    if (parts.instruction.empty()) {
        throw FormatError("instruction section is empty");
    }
    if (parts.has_input && parts.input.empty()) {
        throw FormatError("input section is present but empty");
    }
    return {std::move(parts.instruction), std::move(parts.input), std::move(parts.response)};
}

const std::vector<std::pair<std::string, std::string>>& evalita_catalog() {
    static const std::vector<std::pair<std::string, std::string>> catalog{
        {"ACTI (Subtask A)",
         "Stabilisci se il seguente testo contiene una teoria del complotto o cospirazione. Rispondi con "
         "si o no."},
        {"ACTI (Subtask B)",
         "Classifica il seguente testo in una di queste quattro categorie di teorie del complotto: Covid, "
         "Qanon, Terra Piatta, Russia."},
        {"CLinkaRT",
         "Trova nel testo in input le menzioni testuali dei test di laboratorio o misurazioni (EVENT) e "
         "collegali ai loro risultati (RML). Le relazioni sono rappresentate da coppie ordinate di "
         "menzioni di entità (RML, EVENT), ciascuna identificata da inizi e fine degli offset carattere. "
         "Per ogni relazione, scrivi '[BREL]', seguito dal risultato seguito da '[SEP]', seguito dal "
         "test, seguito da '[EREL]'. Se non ci sono relazioni, restituisci [NOREL]"},
        {"DisCoTex (Subtask 1)",
         "Classifica la frase in input come 'Coerente' se si integra logicamente e contribuisce a formare "
         "un testo coerente con il paragrafo di contesto. Se la frase target risulta incoerente con il "
         "paragrafo, classificala come 'Incoerente'."},
        {"DisCoTex (Subtask 2)",
         "Predici il punteggio medio di coerenza assegnato dai valutatori umani per il testo in input. "
         "Utilizza una scala ordinale a 5 punti (da 1 a 5) per riflettere la percezione graduale della "
         "coerenza."},
        {"EMit",
         "Categorizza le emozioni espresse nel testo fornito in input o determina l'assenza di emozioni. "
         "Puoi classificare il testo come neutrale o identificare una o più delle seguenti emozioni: "
         "rabbia, anticipazione, disgusto, paura, gioia, tristezza, sorpresa, fiducia, amore."},
        {"GeoLing",
         "Determina la regione di appartenenza, la latitudine e la longitudine dell'autore del tweet in "
         "input."},
        {"HaSpeeDe3 (Subtask A Textual)",
         "Stabilisci se il tweet in input contiene discorsi che incitano all'odio. Rispondi con si o no."},
        {"HaSpeeDe3 (Subtask A Contextual)",
         "Stabilisci se il tweet in input contiene discorsi che incitano all'odio considerando anche il "
         "contesto relativo alle statistiche dell'account. Rispondi con si o no. Contesto: Data: "
         "2018-08-11 Numero di retweet: 0.0 Numero di mi piace: 6.0 Data creazione account: 2018-04-01 "
         "Numero di post: 554.0 Follower: 748.0 Amici: 753.0."},
        {"HODI (Subtask A)",
         "Stabilisci se il testo in input ha contenuti omotransfobici o meno. Rispondi con si o no."},
        {"HODI (Subtask B)",
         "Estrai dal testo in input le parole che denotano concetti omotransfobici. Separa le parole "
         "estratte con [SEP]. Se non ci sono parole estratte, restituisci 'Non omotransfobico'."},
        {"LangLearn",
         "Data in input un coppia di documenti (Documento 1 [SEP] Documeto 2) scritti dallo stesso "
         "studente, stabilisci se il documento 1 è stato scritto prima del documento 2. Rispondi con si o "
         "no."},
        {"NERMuD",
         "Elenca le menzioni di entità presenti nel testo in input, indicandone il tipo: [PER] (persona), "
         "[LOC] (luogo), [ORG] (organizzazione). Se non ci sono entità, resituisci: 'Nessuna menzione'"},
        {"PoliticIT",
         "Indica se l'autore del testo in input è un 'uomo' o una 'donna', seguito dalla sua appartenenza "
         "politica scegliendo tra 'destra', 'sinistra', 'centrodestra', 'centrosinistra'."},
        {"WiC-ITA",
         "Stabilisci nelle due frasi in input la parola 'affare' è usata con lo stesso significato. "
         "Rispondi con si o no."},
    };
    return catalog;
}

const std::string& evalita_lookup(std::string_view task) {
    for (const auto& [name, instruction] : evalita_catalog()) {
        if (name == task) {
            return instruction;
        }
    }
    throw InvalidArgument("unknown task: " + std::string(task));
}

}  // namespace adfg::prompts
