// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

// Italian text for corpus fixtures and the toy adaptation run.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "adfg/rng.hpp"

namespace adfg::testing {

// Hand-written sentences, each 66 to 88 bytes, all passing the sentence filter.
inline const std::vector<std::string>& italian_sentences() {
    static const std::vector<std::string> s{
        "Il treno per Bologna è partito con venti minuti di ritardo a causa della nebbia.",
        "Mia sorella ha deciso di iscriversi a un corso serale di fotografia.",
        "Il panettiere sotto casa apre il negozio ogni giorno alle sei del mattino.",
        "Durante l'estate la spiaggia si riempie di famiglie che arrivano dalla città.",
        "Il professore ha spiegato la lezione con molta pazienza e qualche battuta.",
        "Nel giardino della nonna crescono pomodori, basilico e zucchine profumate.",
        "La biblioteca comunale organizza letture per bambini ogni sabato pomeriggio.",
        "Abbiamo cenato in una piccola trattoria dove servono la pasta fatta a mano.",
        "Il sindaco ha promesso di riparare le strade prima dell'arrivo dell'inverno.",
        "Quando piove i ragazzi restano in casa a giocare con i loro amici.",
        "La squadra locale ha vinto la partita grazie a un gol negli ultimi minuti.",
        "Ogni domenica mio padre legge il giornale seduto al tavolo della cucina.",
        "Il museo della città ha aperto una nuova sala dedicata alla storia del porto.",
        "Dopo il lavoro molte persone si fermano al bar per prendere un caffè.",
        "La vicina di casa coltiva rose bianche e le regala a chi passa davanti.",
        "In autunno le colline si colorano di rosso e di giallo, e i boschi sono pieni di funghi.",
    };
    return s;
}

inline std::string join_sentences(std::size_t first, std::size_t count) {
    const auto& s = italian_sentences();
    std::string out;
    for (std::size_t i = 0; i < count; ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += s[(first + i) % s.size()];
    }
    return out;
}

// Template-composed Italian prose with a fixed vocabulary; statistically
// regular enough for a small byte-level model to learn from.
class ItalianGenerator {
public:
    explicit ItalianGenerator(std::uint64_t seed) : rng_(seed) {}

    std::string sentence() {
        static const std::vector<std::string_view> subjects{
            "Il ragazzo", "La nonna", "Mio fratello", "Il sindaco", "La maestra", "Un turista", "Il medico",
            "La squadra", "Il panettiere", "Mia zia", "Il vicino", "La studentessa", "Il pescatore", "Una bambina"};
        static const std::vector<std::string_view> verbs{
            "prepara", "racconta", "guarda", "compra", "legge", "cerca", "porta", "visita", "ascolta", "scrive",
            "trova", "aspetta"};
        static const std::vector<std::string_view> objects{
            "una lettera", "il pane fresco", "la storia del paese", "un libro antico", "la piazza", "il mercato",
            "una canzone", "il giornale", "la strada di casa", "un regalo", "la vecchia chiesa", "il treno",
            "una ricetta", "il mare"};
        static const std::vector<std::string_view> complements{
            "ogni mattina", "con grande attenzione", "prima di cena", "insieme agli amici", "vicino alla stazione",
            "durante le vacanze", "sotto la pioggia", "dopo il lavoro", "con la famiglia", "nel centro della città",
            "alla fine della giornata", "senza fretta"};
        static const std::vector<std::string_view> connectors{"perché", "mentre", "quando", "anche se"};
        static const std::vector<std::string_view> clauses{
            "il sole splende", "fa freddo", "la gente passeggia", "il paese dorme", "arriva la sera",
            "tutti sono contenti", "il vento soffia", "le campane suonano"};
        std::string s;
        s += pick(subjects);
        s += ' ';
        s += pick(verbs);
        s += ' ';
        s += pick(objects);
        s += ' ';
        s += pick(complements);
        if (rng_.uniform() < 0.4) {
            s += ' ';
            s += pick(connectors);
            s += ' ';
            s += pick(clauses);
        }
        s += rng_.uniform() < 0.9 ? "." : "!";
        return s;
    }

    // Paragraphs of 3 to 7 sentences separated by newlines, about `bytes` long.
    std::string text(std::size_t bytes) {
        std::string out;
        while (out.size() < bytes) {
            const std::size_t n = 3 + rng_.below(5);
            for (std::size_t i = 0; i < n; ++i) {
                if (i > 0) {
                    out += ' ';
                }
                out += sentence();
            }
            out += '\n';
        }
        return out;
    }

private:
    std::string_view pick(const std::vector<std::string_view>& v) { return v[rng_.below(v.size())]; }

    Rng rng_;
};

}  // namespace adfg::testing
