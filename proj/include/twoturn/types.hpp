#pragma once

// Core domain types for the two-turn advice paradigm: questions, experimental
// conditions, per-option confidence vectors, and full trial records.

#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "twoturn/numeric.hpp"

namespace twoturn {

enum class Display { Shown, Hidden, Wrong };
enum class Advice { Same, Opposite, Neutral };
enum class Attribution { Self, OtherLLM };
enum class Domain {
    latitude,
    latitude_difficult,
    parity,
    divisibility,
    fictitious_latitude,
    simpleqa_mc,
    gsm_mc
};

inline const char* to_string(Display d) {
    switch (d) {
        case Display::Shown: return "shown";
        case Display::Hidden: return "hidden";
        case Display::Wrong: return "wrong";
    }
    return "?";
}

inline const char* to_string(Advice a) {
    switch (a) {
        case Advice::Same: return "same";
        case Advice::Opposite: return "opposite";
        case Advice::Neutral: return "neutral";
    }
    return "?";
}

inline const char* to_string(Attribution a) {
    return a == Attribution::Self ? "self" : "other_llm";
}

inline const char* to_string(Domain d) {
    switch (d) {
        case Domain::latitude: return "latitude";
        case Domain::latitude_difficult: return "latitude_difficult";
        case Domain::parity: return "parity";
        case Domain::divisibility: return "divisibility";
        case Domain::fictitious_latitude: return "fictitious_latitude";
        case Domain::simpleqa_mc: return "simpleqa_mc";
        case Domain::gsm_mc: return "gsm_mc";
    }
    return "?";
}

inline Display display_from_string(const std::string& s) {
    if (s == "shown") return Display::Shown;
    if (s == "hidden") return Display::Hidden;
    if (s == "wrong") return Display::Wrong;
    throw std::invalid_argument("unknown display type: " + s);
}

inline Advice advice_from_string(const std::string& s) {
    if (s == "same") return Advice::Same;
    if (s == "opposite") return Advice::Opposite;
    if (s == "neutral") return Advice::Neutral;
    throw std::invalid_argument("unknown advice type: " + s);
}

inline Attribution attribution_from_string(const std::string& s) {
    if (s == "self") return Attribution::Self;
    if (s == "other_llm") return Attribution::OtherLLM;
    throw std::invalid_argument("unknown attribution: " + s);
}

inline Domain domain_from_string(const std::string& s) {
    for (Domain d : {Domain::latitude, Domain::latitude_difficult, Domain::parity,
                     Domain::divisibility, Domain::fictitious_latitude, Domain::simpleqa_mc,
                     Domain::gsm_mc}) {
        if (s == to_string(d)) return d;
    }
    throw std::invalid_argument("unknown domain tag: " + s);
}

struct Question {
    std::string id;
    std::string stem;
    std::vector<std::string> options;  // length 2 or 4
    int correct_index = 0;
    std::optional<std::string> context_block;  // present iff fictitious_latitude
    Domain domain_tag = Domain::latitude;

    void validate() const {
        if (options.size() != 2 && options.size() != 4)
            throw std::invalid_argument("question " + id + ": option count must be 2 or 4");
        if (correct_index < 0 || correct_index >= static_cast<int>(options.size()))
            throw std::invalid_argument("question " + id + ": correct_index out of range");
        for (size_t i = 0; i < options.size(); ++i)
            for (size_t j = i + 1; j < options.size(); ++j)
                if (options[i] == options[j])
                    throw std::invalid_argument("question " + id + ": duplicate option text");
        bool needs_context = domain_tag == Domain::fictitious_latitude;
        if (needs_context != context_block.has_value())
            throw std::invalid_argument("question " + id +
                                        ": context_block present iff fictitious domain");
    }
};

struct QuestionSet {
    std::vector<Question> questions;
    double chance_level = 0.5;  // 1 / option count
    std::string provenance;

    void validate() const {
        if (chance_level != 0.5 && chance_level != 0.25)
            throw std::invalid_argument("chance_level must be 0.5 or 0.25");
        size_t want = chance_level == 0.5 ? 2 : 4;
        for (const auto& q : questions) {
            q.validate();
            if (q.options.size() != want)
                throw std::invalid_argument("question " + q.id +
                                            ": option count disagrees with chance level");
        }
    }
};

struct Condition {
    Display display = Display::Hidden;
    Advice advice = Advice::Neutral;
    double advice_accuracy = 0.5;
    Attribution attribution = Attribution::Self;

    void validate() const {
        if (advice_accuracy < 0.0 || advice_accuracy > 1.0)
            throw std::invalid_argument("advice_accuracy outside [0,1]");
        // The other-LLM framing narrates a visible answer, so it only composes
        // with displays that actually show one.
        if (attribution == Attribution::OtherLLM && display == Display::Hidden)
            throw std::invalid_argument("other-LLM attribution requires a visible answer display");
    }

    // Stable identifier used for record keys, per-trial seeding, and reports.
    std::string key() const {
        return strfmt("%s|%s|%.4f|%s", to_string(display), to_string(advice), advice_accuracy,
                      to_string(attribution));
    }

    bool operator==(const Condition& o) const {
        return display == o.display && advice == o.advice && attribution == o.attribution &&
               advice_accuracy == o.advice_accuracy;
    }
};

struct ConfidenceVector {
    std::vector<double> probs;

    void validate() const {
        double total = 0.0;
        for (double p : probs) {
            if (p < 0.0 || p > 1.0) throw std::invalid_argument("confidence outside [0,1]");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw std::invalid_argument("confidence vector does not sum to 1");
    }
};

struct AdvicePresentation {
    std::optional<int> advised_index;  // absent for Neutral (rendered "xx")
    double stated_accuracy = 0.5;
};

struct TrialRecord {
    std::string question_id;
    Condition condition;
    int turn1_choice = -1;
    ConfidenceVector turn1_confidence;
    std::string displayed_turn1;  // option label, "xx", or the wrong option's label
    AdvicePresentation advice;
    int turn2_choice = -1;
    ConfidenceVector turn2_confidence;
    bool changed_mind = false;
    bool changed_initial_answer = false;
    std::map<std::string, double> raw_turn1;  // raw per-option-label logits
    std::map<std::string, double> raw_turn2;
    bool parse_ok = true;
    std::string backend_id;
    std::string error;  // set when the backend failed or a turn did not parse

    std::string key() const { return question_id + "#" + condition.key(); }

    // Confidence in the initially chosen option, before and after advice.
    double prior() const { return turn1_confidence.probs.at(static_cast<size_t>(turn1_choice)); }
    double final_conf_initial() const {
        return turn2_confidence.probs.at(static_cast<size_t>(turn1_choice));
    }
    double update() const { return final_conf_initial() - prior(); }
};

// Standard option labels: a/b for binary questions, 1..4 for 4-choice.
inline std::string option_label(size_t index, size_t n_options) {
    if (n_options == 2) return std::string(1, static_cast<char>('a' + index));
    return std::to_string(index + 1);
}

inline int option_index_from_label(const std::string& label, size_t n_options) {
    if (label.size() != 1) return -1;
    char c = label[0];
    if (n_options == 2) {
        char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (lc == 'a') return 0;
        if (lc == 'b') return 1;
        return -1;
    }
    if (c >= '1' && c < static_cast<char>('1' + n_options)) return c - '1';
    return -1;
}

}  // namespace twoturn
