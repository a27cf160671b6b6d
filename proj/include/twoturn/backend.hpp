#pragma once

// Answering agents behind a common interface: the parameterized simulated
// agent used as a ground-truth oracle, and the building blocks shared with
// the wire client (chat exchange shape, option-logit extraction).

#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "twoturn/calibration.hpp"
#include "twoturn/numeric.hpp"
#include "twoturn/observer.hpp"
#include "twoturn/types.hpp"

namespace twoturn {

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;
};

struct ChatExchange {
    std::vector<ChatMessage> messages;
    int logprob_request = 20;
    double sampling_temperature = 1.0;
};

struct TopLogprob {
    std::string token;
    double logprob = 0.0;
};

struct PositionLogprobs {
    std::string token;  // the sampled token at this position
    std::vector<TopLogprob> top;
};

inline constexpr double kAbsentLabelLogprob = -13.815510557964274;  // log(1e-6)

// Reads the per-option log-probabilities at the answer position: the token
// whose span covers answer_char_offset in the completion text. Label
// variants with/without a leading space and in either case are folded by
// taking the maximum; labels absent from the top-k get a fixed floor.
inline std::map<std::string, double> extract_option_logits(
    const std::vector<PositionLogprobs>& positions, const std::vector<std::string>& labels,
    size_t answer_char_offset) {
    size_t offset = 0;
    const PositionLogprobs* hit = nullptr;
    for (const auto& pos : positions) {
        size_t next = offset + pos.token.size();
        if (answer_char_offset >= offset && answer_char_offset < next) {
            hit = &pos;
            break;
        }
        offset = next;
    }
    if (!hit) throw std::runtime_error("answer position not covered by returned logprobs");

    auto lower = [](std::string s) {
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    };
    std::map<std::string, double> out;
    for (const auto& label : labels) {
        double best = kAbsentLabelLogprob;
        std::string want = lower(label);
        for (const auto& cand : hit->top) {
            std::string tok = cand.token;
            if (!tok.empty() && tok.front() == ' ') tok.erase(tok.begin());
            if (lower(tok) == want) best = std::max(best, cand.logprob);
        }
        out[label] = best;
    }
    return out;
}

struct TurnOutcome {
    bool ok = true;
    std::string error;
    std::string text;
    std::map<std::string, double> logits;  // per option label
};

struct SecondTurnContext {
    std::string turn1_prompt;
    std::string fabricated_message;  // the assistant turn as replayed to the model
    std::string user_message;        // the turn-2 instruction
    int turn1_choice = -1;
    std::map<std::string, double> turn1_logits;
    AdvicePresentation advice;
};

class Backend {
  public:
    virtual ~Backend() = default;
    virtual std::string id() const = 0;
    virtual TurnOutcome first_turn(const Question& question, const std::string& prompt,
                                   std::mt19937_64& rng) = 0;
    virtual TurnOutcome second_turn(const Question& question, const Condition& condition,
                                    const SecondTurnContext& ctx, std::mt19937_64& rng) = 0;
};

inline std::vector<double> logits_to_vector(const std::map<std::string, double>& logits,
                                            size_t n_options) {
    std::vector<double> out(n_options, kAbsentLabelLogprob);
    for (size_t i = 0; i < n_options; ++i) {
        auto it = logits.find(option_label(i, n_options));
        if (it != logits.end()) out[i] = it->second;
    }
    return out;
}

struct AgentParams {
    double competence = 0.75;       // probability the turn-1 evidence favors the truth
    double evidence_strength = 1.0; // log-odds magnitude of that evidence
    double evidence_noise_sd = 0.0; // per-logit Gaussian noise at turn 1 (spreads priors)
    double gain_opposite = 1.0;     // multiplier on the Bayesian log-odds update
    double gain_same = 1.0;
    double shown_boost = 0.0;       // extra log-odds on the chosen option when it is visible
    double update_noise_sd = 0.0;   // log-odds noise at turn 2
    bool obey_argmax = true;        // final choice = argmax; otherwise sampled from confidence

    void validate() const {
        if (competence < 0.0 || competence > 1.0)
            throw std::invalid_argument("competence outside [0,1]");
        if (gain_opposite <= 0.0 || gain_same <= 0.0)
            throw std::invalid_argument("gains must be positive");
        if (shown_boost < 0.0) throw std::invalid_argument("shown_boost must be >= 0");
        if (update_noise_sd < 0.0 || evidence_noise_sd < 0.0)
            throw std::invalid_argument("noise scales must be >= 0");
    }
};

// Turn 1: latent evidence favors the correct option with probability
// competence, otherwise a random wrong option; logits put +strength/2 on
// the favored option and -strength/2 elsewhere, plus per-logit noise.
inline std::pair<int, std::map<std::string, double>> simulate_turn1(const AgentParams& params,
                                                                    const Question& question,
                                                                    std::mt19937_64& rng) {
    size_t k = question.options.size();
    std::bernoulli_distribution correct_draw(params.competence);
    size_t favored = static_cast<size_t>(question.correct_index);
    if (!correct_draw(rng)) {
        std::uniform_int_distribution<size_t> wrong(0, k - 2);
        size_t w = wrong(rng);
        favored = w >= favored ? w + 1 : w;
    }
    std::normal_distribution<double> noise(0.0, params.evidence_noise_sd);
    std::map<std::string, double> logits;
    int best = 0;
    double best_val = -1e300;
    for (size_t i = 0; i < k; ++i) {
        double v = (i == favored ? 0.5 : -0.5) * params.evidence_strength;
        if (params.evidence_noise_sd > 0.0) v += noise(rng);
        logits[option_label(i, k)] = v;
        if (v > best_val) {
            best_val = v;
            best = static_cast<int>(i);
        }
    }
    return {best, logits};
}

// Turn 2: exact Bayesian posterior from the turn-1 confidence, then a
// log-odds adjustment of the chosen option by (gain-1) times the Bayesian
// update, plus the shown boost and noise; the other options keep their
// relative proportions.
inline std::pair<int, std::map<std::string, double>> simulate_turn2(
    const AgentParams& params, const Condition& condition, const SecondTurnContext& ctx,
    size_t n_options, std::mt19937_64& rng) {
    size_t k = n_options;
    auto chosen = static_cast<size_t>(ctx.turn1_choice);
    std::vector<double> prior = softmax_with_temperature(
                                    logits_to_vector(ctx.turn1_logits, k), 1.0)
                                    .probs;

    std::vector<double> post = prior;
    double bayes_delta = 0.0;
    if (condition.advice != Advice::Neutral) {
        if (!ctx.advice.advised_index.has_value())
            throw std::invalid_argument("non-neutral advice needs an advised option");
        post = bayes_posterior_vector(prior, static_cast<size_t>(*ctx.advice.advised_index),
                                      ctx.advice.stated_accuracy);
        bayes_delta = log_odds(post[chosen]) - log_odds(prior[chosen]);
    }

    double gain = condition.advice == Advice::Same ? params.gain_same : params.gain_opposite;
    double adjust = condition.advice == Advice::Neutral ? 0.0 : (gain - 1.0) * bayes_delta;
    if (condition.display == Display::Shown && condition.attribution == Attribution::Self)
        adjust += params.shown_boost;
    if (params.update_noise_sd > 0.0)
        adjust += std::normal_distribution<double>(0.0, params.update_noise_sd)(rng);

    std::vector<double> final_probs = post;
    if (adjust != 0.0) {
        double new_chosen = sigmoid(log_odds(post[chosen]) + adjust);
        double rest_old = 1.0 - post[chosen];
        double rest_new = 1.0 - new_chosen;
        for (size_t i = 0; i < k; ++i)
            final_probs[i] = i == chosen ? new_chosen
                                         : (rest_old > 0.0 ? post[i] * rest_new / rest_old
                                                           : rest_new / static_cast<double>(k - 1));
    }

    int choice;
    if (params.obey_argmax) {
        choice = 0;
        for (size_t i = 1; i < k; ++i)
            if (final_probs[i] > final_probs[static_cast<size_t>(choice)])
                choice = static_cast<int>(i);
    } else {
        std::discrete_distribution<int> draw(final_probs.begin(), final_probs.end());
        choice = draw(rng);
    }

    std::map<std::string, double> logits;
    for (size_t i = 0; i < k; ++i)
        logits[option_label(i, k)] = std::log(std::max(final_probs[i], 1e-300));
    return {choice, logits};
}

class SimulatedAgent : public Backend {
  public:
    explicit SimulatedAgent(AgentParams params) : params_(params) { params_.validate(); }

    std::string id() const override {
        return strfmt("simulated(c=%g,s=%g,go=%g,gs=%g,b=%g,n1=%g,n2=%g)", params_.competence,
                      params_.evidence_strength, params_.gain_opposite, params_.gain_same,
                      params_.shown_boost, params_.evidence_noise_sd, params_.update_noise_sd);
    }

    TurnOutcome first_turn(const Question& question, const std::string&,
                           std::mt19937_64& rng) override {
        auto [choice, logits] = simulate_turn1(params_, question, rng);
        TurnOutcome out;
        out.text = "My answer is: " +
                   option_label(static_cast<size_t>(choice), question.options.size());
        out.logits = std::move(logits);
        return out;
    }

    TurnOutcome second_turn(const Question& question, const Condition& condition,
                            const SecondTurnContext& ctx, std::mt19937_64& rng) override {
        auto [choice, logits] =
            simulate_turn2(params_, condition, ctx, question.options.size(), rng);
        TurnOutcome out;
        out.text = "My final answer is: " +
                   option_label(static_cast<size_t>(choice), question.options.size());
        out.logits = std::move(logits);
        return out;
    }

    const AgentParams& params() const { return params_; }

  private:
    AgentParams params_;
};

}  // namespace twoturn
