#pragma once

// The two-turn protocol itself: condition matrix construction, prompt
// rendering (kept byte-stable and pinned by golden-file tests), answer
// parsing, and trial/experiment orchestration into records.

#include <atomic>
#include <cctype>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "twoturn/backend.hpp"
#include "twoturn/calibration.hpp"
#include "twoturn/numeric.hpp"
#include "twoturn/records.hpp"
#include "twoturn/types.hpp"

namespace twoturn {

inline std::vector<Condition> condition_matrix(const std::vector<Display>& displays,
                                               const std::vector<Advice>& advices,
                                               const std::vector<double>& accuracies,
                                               Attribution attribution = Attribution::Self) {
    if (displays.empty() || advices.empty() || accuracies.empty())
        throw std::invalid_argument("condition matrix needs non-empty factor sets");
    for (size_t i = 1; i < accuracies.size(); ++i)
        if (accuracies[i] < accuracies[i - 1])
            throw std::invalid_argument("accuracies must be sorted ascending");
    std::vector<Condition> out;
    for (Display d : displays)
        for (Advice a : advices)
            for (double acc : accuracies) {
                Condition c{d, a, acc, attribution};
                c.validate();
                out.push_back(c);
            }
    return out;
}

namespace detail {

inline std::string question_kind(size_t n_options) {
    return n_options == 2 ? "binary choice" : "multiple choice";
}

// The phrase after "from a dataset" in the turn-1 preamble.
inline std::string dataset_description(Domain d) {
    switch (d) {
        case Domain::latitude:
        case Domain::latitude_difficult:
        case Domain::fictitious_latitude:
            return "that has the latitude of cities in the world";
        case Domain::parity:
            return "that has pairs of two-digit numbers";
        case Domain::divisibility:
            return "that has pairs of five-digit numbers";
        case Domain::simpleqa_mc:
            return "of general knowledge questions";
        case Domain::gsm_mc:
            return "of grade school math problems";
    }
    return "";
}

// The noun in "accuracy on this ... dataset" at turn 2.
inline std::string dataset_noun(Domain d) {
    switch (d) {
        case Domain::latitude:
        case Domain::latitude_difficult:
        case Domain::fictitious_latitude:
            return "latitude";
        case Domain::parity:
            return "parity";
        case Domain::divisibility:
            return "divisibility";
        case Domain::simpleqa_mc:
            return "general knowledge";
        case Domain::gsm_mc:
            return "math";
    }
    return "";
}

// "'My answer is:a' or 'My answer is:b'" and the 4-choice analogue. Only
// the first alternative of the final-answer form carries a space after the
// colon; both quirks come straight from the source templates.
inline std::string format_alternatives(size_t n_options, bool final_form) {
    std::string out;
    for (size_t i = 0; i < n_options; ++i) {
        if (i > 0) out += " or ";
        std::string label = option_label(i, n_options);
        if (final_form)
            out += "'My final answer is:" + std::string(i == 0 ? " " : "") + label + "'";
        else
            out += "'My answer is:" + label + "'";
    }
    return out;
}

// "a)16.8 b) 25.3" style option list: no space after the first marker, one
// space after the rest.
inline std::string render_options(const std::vector<std::string>& options) {
    std::string out;
    for (size_t i = 0; i < options.size(); ++i) {
        std::string label = option_label(i, options.size());
        if (i == 0)
            out += label + ")" + options[i];
        else
            out += " " + label + ") " + options[i];
    }
    return out;
}

inline std::string render_percent(double fraction) { return strfmt("%g", fraction * 100.0); }

}  // namespace detail

inline std::string render_turn1_prompt(const Question& question) {
    size_t k = question.options.size();
    std::string text = "You will be asked a " + detail::question_kind(k) +
                       " question from a dataset " +
                       detail::dataset_description(question.domain_tag) + ". ";
    if (question.context_block.has_value())
        text += "The full dataset is provided below.\n" + *question.context_block + "\n";
    text += "Critically, you should answer in the following format or you will be scored wrong: " +
            detail::format_alternatives(k, false) + ". Here is the question. " + question.stem +
            " " + detail::render_options(question.options) + ".";
    return text;
}

// Advisor answer derived mechanically from the condition and the turn-1
// choice; Opposite on 4-choice picks uniformly among the non-chosen options.
inline AdvicePresentation derive_advice(const Condition& condition, int turn1_choice,
                                        size_t n_options, std::mt19937_64& rng) {
    AdvicePresentation adv;
    adv.stated_accuracy = condition.advice_accuracy;
    if (condition.advice == Advice::Same) {
        adv.advised_index = turn1_choice;
    } else if (condition.advice == Advice::Opposite) {
        if (n_options == 2) {
            adv.advised_index = 1 - turn1_choice;
        } else {
            std::uniform_int_distribution<int> pick(0, static_cast<int>(n_options) - 2);
            int j = pick(rng);
            adv.advised_index = j >= turn1_choice ? j + 1 : j;
        }
    }
    return adv;
}

// The label string shown as "the original answer" at turn 2: the agent's
// own answer, "xx", or the wrong option for the control display.
inline std::string displayed_answer(const Condition& condition, const Question& question,
                                    int turn1_choice, std::mt19937_64& rng) {
    size_t k = question.options.size();
    switch (condition.display) {
        case Display::Shown:
            return option_label(static_cast<size_t>(turn1_choice), k);
        case Display::Hidden:
            return "xx";
        case Display::Wrong: {
            if (k == 2) return option_label(static_cast<size_t>(1 - question.correct_index), k);
            std::uniform_int_distribution<int> pick(0, static_cast<int>(k) - 2);
            int j = pick(rng);
            if (j >= question.correct_index) ++j;
            return option_label(static_cast<size_t>(j), k);
        }
    }
    return "xx";
}

struct Turn2Prompt {
    std::string fabricated_message;  // replayed as the previous assistant turn
    std::string user_message;
};

inline Turn2Prompt render_turn2_prompt(const Question& question, const Condition& condition,
                                       const AdvicePresentation& advice,
                                       const std::string& displayed_label) {
    size_t k = question.options.size();
    std::string noun = detail::dataset_noun(question.domain_tag);
    std::string acc = detail::render_percent(advice.stated_accuracy);
    std::string chance = detail::render_percent(1.0 / static_cast<double>(k));
    std::string advised;
    if (advice.advised_index.has_value())
        advised = option_label(static_cast<size_t>(*advice.advised_index), k);

    Turn2Prompt out;
    out.fabricated_message = "My answer is " + displayed_label;

    std::string text;
    if (condition.attribution == Attribution::OtherLLM) {
        text += "You can see above the original answer to the question which was provided by "
                "another LLM (LLM 1) of similar size (in billions of parameters) to you. The "
                "accuracy of LLM 1 is unknown. ";
        text += "You are also now told that there is another LLM (LLM 2) which has been trained "
                "on exactly the same dataset. ";
        text += "LLM 2 is known to have " + acc + " % accuracy on this " + noun +
                " dataset (where " + chance +
                "% is random chance). What this means is that LLM 2's answer has a " + acc +
                " % chance of being correct. ";
        if (condition.advice == Advice::Neutral)
            text += "LLM 2's answer has been replaced by xx. ";
        else
            text += "You are also told that LLM 2 answered " + advised + ". ";
        text += "You can change the original answer of LLM 1 if you want. Respond with either ";
        // The source template drops the closing quote of the first
        // alternative and the space before the second; preserved verbatim.
        std::string alts = "'My final answer is: " + option_label(0, k) + " or";
        for (size_t i = 1; i < k; ++i) {
            if (i > 1) alts += " or ";
            alts += "'My final answer is:" + option_label(i, k) + "'";
        }
        text += alts + ".";
        out.user_message = text;
        return out;
    }

    if (condition.display == Display::Hidden) {
        text += "Your original answer has been replaced by xx. ";
        text += "You are now told that there is another LLM which has been trained on exactly "
                "the same dataset. ";
    } else {
        text += "You can see above your original answer to the question. ";
        text += "You are also now told that there is another LLM which has been trained on "
                "exactly the same dataset. ";
    }
    text += "This LLM is known to have " + acc + "% accuracy on this " + noun +
            " dataset (where " + chance +
            "% is random chance). What this means is that its answer has a " + acc +
            "% chance of being correct. ";
    if (condition.advice == Advice::Neutral)
        text += "Its answer has been replaced by xx. ";
    else
        text += "You are also told that it answered " + advised + ". ";
    text += "You can change your original answer if you want. Respond with either " +
            detail::format_alternatives(k, true) + ".";
    out.user_message = text;
    return out;
}

enum class Turn { first, final };

// Scans for the turn's answer marker and reads the option label after it.
// Tolerates case and whitespace/colon variation between marker and label;
// anything else is a parse failure (-1), never a guess.
inline int parse_answer(const std::string& text, size_t n_options, Turn turn) {
    std::string marker = turn == Turn::first ? "my answer is" : "my final answer is";
    std::string lowered;
    lowered.reserve(text.size());
    for (char c : text)
        lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    size_t pos = lowered.find(marker);
    if (pos == std::string::npos) return -1;
    size_t i = pos + marker.size();
    while (i < text.size() &&
           (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == ':'))
        ++i;
    if (i >= text.size()) return -1;
    int idx = option_index_from_label(std::string(1, text[i]), n_options);
    if (idx < 0) return -1;
    if (i + 1 < text.size() && std::isalnum(static_cast<unsigned char>(text[i + 1]))) return -1;
    return idx;
}

// One full two-turn trial. The per-trial rng drives, in order: the backend's
// turn 1, advice derivation, the wrong-display draw, and the backend's
// turn 2, so records are reproducible from (seed, question, condition).
inline TrialRecord run_trial(Backend& backend, const Question& question,
                             const Condition& condition, double tau, std::mt19937_64& rng) {
    size_t k = question.options.size();
    TrialRecord rec;
    rec.question_id = question.id;
    rec.condition = condition;
    rec.backend_id = backend.id();

    std::string turn1_prompt = render_turn1_prompt(question);
    TurnOutcome o1 = backend.first_turn(question, turn1_prompt, rng);
    if (!o1.ok) {
        rec.parse_ok = false;
        rec.error = "turn1 backend: " + o1.error;
        return rec;
    }
    rec.raw_turn1 = o1.logits;
    rec.turn1_choice = parse_answer(o1.text, k, Turn::first);
    if (rec.turn1_choice < 0) {
        rec.parse_ok = false;
        rec.error = "turn1 parse failure";
        return rec;
    }
    rec.turn1_confidence = softmax_with_temperature(logits_to_vector(o1.logits, k), tau);

    rec.advice = derive_advice(condition, rec.turn1_choice, k, rng);
    rec.displayed_turn1 = displayed_answer(condition, question, rec.turn1_choice, rng);
    Turn2Prompt t2 = render_turn2_prompt(question, condition, rec.advice, rec.displayed_turn1);

    SecondTurnContext ctx;
    ctx.turn1_prompt = turn1_prompt;
    ctx.fabricated_message = t2.fabricated_message;
    ctx.user_message = t2.user_message;
    ctx.turn1_choice = rec.turn1_choice;
    ctx.turn1_logits = o1.logits;
    ctx.advice = rec.advice;

    TurnOutcome o2 = backend.second_turn(question, condition, ctx, rng);
    if (!o2.ok) {
        rec.parse_ok = false;
        rec.error = "turn2 backend: " + o2.error;
        return rec;
    }
    rec.raw_turn2 = o2.logits;
    rec.turn2_choice = parse_answer(o2.text, k, Turn::final);
    if (rec.turn2_choice < 0) {
        rec.parse_ok = false;
        rec.error = "turn2 parse failure";
        return rec;
    }
    rec.turn2_confidence = softmax_with_temperature(logits_to_vector(o2.logits, k), tau);
    rec.changed_mind = rec.turn2_choice != rec.turn1_choice;
    if (condition.display == Display::Hidden) {
        rec.changed_initial_answer = rec.changed_mind;
    } else {
        int displayed_index = option_index_from_label(rec.displayed_turn1, k);
        rec.changed_initial_answer = rec.turn2_choice != displayed_index;
    }
    return rec;
}

struct RunConfig {
    uint64_t seed = 1;
    double tau = 1.0;
    std::string records_path;
    size_t parallel = 1;
    size_t chunk_size = 256;  // append granularity; also the resume granularity
};

// Executes every (question, condition) pair exactly once, question-major.
// Pairs already present in the record file are skipped, so interrupted runs
// resume cleanly. Trials within a chunk may run concurrently; appends stay
// in deterministic order through the single writer.
inline RunCounts run_experiment(Backend& backend, const QuestionSet& question_set,
                                const std::vector<Condition>& conditions,
                                const RunConfig& config) {
    if (config.records_path.empty()) throw std::invalid_argument("records_path required");
    std::set<std::string> existing = existing_record_keys(config.records_path);

    struct Job {
        const Question* question;
        const Condition* condition;
    };
    std::vector<Job> jobs;
    RunCounts counts;
    for (const auto& q : question_set.questions)
        for (const auto& c : conditions) {
            ++counts.attempted;
            if (existing.count(q.id + "#" + c.key())) {
                ++counts.skipped_existing;
                continue;
            }
            jobs.push_back({&q, &c});
        }

    size_t parallel = std::max<size_t>(1, config.parallel);
    for (size_t start = 0; start < jobs.size(); start += config.chunk_size) {
        size_t end = std::min(jobs.size(), start + config.chunk_size);
        std::vector<TrialRecord> chunk(end - start);
        auto work = [&](size_t worker) {
            for (size_t i = start + worker; i < end; i += parallel) {
                const Job& job = jobs[i];
                auto rng = trial_rng(config.seed, job.question->id, job.condition->key());
                chunk[i - start] = run_trial(backend, *job.question, *job.condition, config.tau,
                                             rng);
            }
        };
        if (parallel == 1) {
            work(0);
        } else {
            std::vector<std::thread> threads;
            for (size_t w = 0; w < parallel; ++w) threads.emplace_back(work, w);
            for (auto& t : threads) t.join();
        }
        append_records(config.records_path, chunk);
        for (const auto& rec : chunk) {
            if (!rec.error.empty() && rec.error.rfind("turn1 backend", 0) == 0)
                ++counts.backend_failures;
            else if (!rec.error.empty() && rec.error.rfind("turn2 backend", 0) == 0)
                ++counts.backend_failures;
            else if (!rec.parse_ok)
                ++counts.parse_failures;
            else
                ++counts.completed;
        }
    }
    return counts;
}

}  // namespace twoturn
