// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

// Short reference texts for the trigram language identifier. Written for this
// project; they only need to be representative of everyday prose.

#pragma once

#include <string_view>
#include <utility>

namespace adfg::corpus::detail {

inline constexpr std::pair<std::string_view, std::string_view> kLanguageSamples[] = {
    {"it",
     "La mattina il mercato del paese si riempie di voci e di colori. I contadini arrivano presto con le "
     "cassette di frutta e verdura, mentre i bambini corrono tra i banchi e le nonne scelgono con cura i "
     "pomodori per il sugo della domenica. Nel pomeriggio la piazza diventa più tranquilla: gli anziani "
     "giocano a carte sotto gli alberi e i ragazzi si ritrovano davanti alla gelateria. Quando il sole "
     "tramonta, le famiglie escono a passeggiare lungo il corso e si fermano a parlare con gli amici. "
     "Questa abitudine, che si ripete da generazioni, è uno dei modi in cui la comunità rimane unita. "
     "Negli ultimi anni molti giovani si sono trasferiti nelle grandi città per studiare o lavorare, "
     "ma durante le vacanze tornano sempre volentieri. Il comune ha deciso di investire nella biblioteca "
     "e nella scuola, perché senza servizi per le famiglie il paese rischia di svuotarsi. Gli abitanti "
     "sperano che queste scelte possano rendere la vita quotidiana più semplice e che nuove attività "
     "aprano presto nel centro storico. Secondo il sindaco, la cosa più importante è ascoltare le "
     "persone e trovare insieme le soluzioni ai problemi di tutti i giorni. Anche la squadra di calcio "
     "locale contribuisce, organizzando tornei estivi che richiamano visitatori dai paesi vicini."},
    {"en",
     "In the morning the village market fills with voices and colours. Farmers arrive early with crates of "
     "fruit and vegetables, while children run between the stalls and grandmothers carefully choose the "
     "tomatoes for the Sunday sauce. In the afternoon the square becomes quieter: the old men play cards "
     "under the trees and teenagers meet in front of the ice cream shop. When the sun goes down, families "
     "walk along the main street and stop to talk with their friends. This habit, which has been repeated "
     "for generations, is one of the ways the community stays together. In recent years many young people "
     "have moved to the big cities to study or work, but they always come back during the holidays. The "
     "council has decided to invest in the library and the school, because without services for families "
     "the village could slowly empty. The residents hope that these choices will make daily life easier "
     "and that new businesses will soon open in the old town. According to the mayor, the most important "
     "thing is to listen to people and find solutions to everyday problems together."},
    {"es",
     "Por la manana el mercado del pueblo se llena de voces y de colores. Los campesinos llegan temprano "
     "con cajas de fruta y verdura, mientras los ninos corren entre los puestos y las abuelas eligen con "
     "cuidado los tomates para la salsa del domingo. Por la tarde la plaza se vuelve mas tranquila: los "
     "ancianos juegan a las cartas bajo los arboles y los jovenes se encuentran delante de la heladeria. "
     "Cuando se pone el sol, las familias salen a pasear por la calle principal y se detienen a hablar con "
     "los amigos. Esta costumbre, que se repite desde hace generaciones, es una de las formas en que la "
     "comunidad permanece unida. En los ultimos anos muchos jovenes se han ido a las grandes ciudades para "
     "estudiar o trabajar, pero durante las vacaciones siempre vuelven con gusto. El ayuntamiento ha "
     "decidido invertir en la biblioteca y en la escuela, porque sin servicios para las familias el "
     "pueblo corre el riesgo de vaciarse. Los vecinos esperan que estas decisiones hagan la vida diaria "
     "mas sencilla y que pronto abran nuevos negocios en el casco antiguo."},
    {"fr",
     "Le matin, le marche du village se remplit de voix et de couleurs. Les paysans arrivent tot avec des "
     "caisses de fruits et de legumes, pendant que les enfants courent entre les etals et que les "
     "grands-meres choisissent avec soin les tomates pour la sauce du dimanche. L'apres-midi, la place "
     "devient plus calme : les anciens jouent aux cartes sous les arbres et les jeunes se retrouvent "
     "devant le glacier. Quand le soleil se couche, les familles se promenent dans la rue principale et "
     "s'arretent pour parler avec leurs amis. Cette habitude, qui se repete depuis des generations, est "
     "l'une des facons dont la communaute reste unie. Ces dernieres annees, beaucoup de jeunes sont partis "
     "dans les grandes villes pour etudier ou travailler, mais ils reviennent toujours volontiers pendant "
     "les vacances. La mairie a decide d'investir dans la bibliotheque et dans l'ecole, parce que sans "
     "services pour les familles le village risque de se vider. Les habitants esperent que ces choix "
     "rendront la vie quotidienne plus simple et que de nouveaux commerces ouvriront bientot."},
    {"de",
     "Am Morgen fuellt sich der Markt des Dorfes mit Stimmen und Farben. Die Bauern kommen frueh mit Kisten "
     "voller Obst und Gemuese, waehrend die Kinder zwischen den Staenden herumlaufen und die Grossmuetter "
     "sorgfaeltig die Tomaten fuer die Sosse am Sonntag auswaehlen. Am Nachmittag wird der Platz ruhiger: "
     "die alten Maenner spielen unter den Baeumen Karten und die Jugendlichen treffen sich vor der "
     "Eisdiele. Wenn die Sonne untergeht, gehen die Familien auf der Hauptstrasse spazieren und bleiben "
     "stehen, um mit ihren Freunden zu sprechen. Diese Gewohnheit, die sich seit Generationen wiederholt, "
     "ist eine der Arten, wie die Gemeinschaft zusammenhaelt. In den letzten Jahren sind viele junge "
     "Menschen in die grossen Staedte gezogen, um zu studieren oder zu arbeiten, aber in den Ferien kommen "
     "sie immer gerne zurueck. Die Gemeinde hat beschlossen, in die Bibliothek und die Schule zu "
     "investieren, denn ohne Angebote fuer Familien koennte sich das Dorf langsam leeren."},
    {"pt",
     "De manha o mercado da aldeia enche-se de vozes e de cores. Os agricultores chegam cedo com caixas de "
     "fruta e legumes, enquanto as criancas correm entre as bancas e as avos escolhem com cuidado os "
     "tomates para o molho de domingo. A tarde a praca fica mais calma: os velhos jogam as cartas debaixo "
     "das arvores e os jovens encontram-se em frente da geladaria. Quando o sol se poe, as familias saem "
     "para passear pela rua principal e param para conversar com os amigos. Este costume, que se repete "
     "ha geracoes, e uma das maneiras como a comunidade se mantem unida. Nos ultimos anos muitos jovens "
     "mudaram-se para as grandes cidades para estudar ou trabalhar, mas durante as ferias voltam sempre com "
     "prazer. A camara decidiu investir na biblioteca e na escola, porque sem servicos para as familias a "
     "aldeia corre o risco de ficar vazia. Os moradores esperam que estas escolhas tornem a vida do dia a "
     "dia mais simples e que novas lojas abram em breve no centro historico."},
};

}  // namespace adfg::corpus::detail
