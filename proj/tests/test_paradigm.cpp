#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "twoturn/backend.hpp"
#include "twoturn/numeric.hpp"
#include "twoturn/paradigm.hpp"
#include "twoturn/records.hpp"

using namespace twoturn;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string golden(const std::string& name) {
    return read_file(std::string(TWOTURN_TEST_DIR) + "/golden/" + name + ".golden");
}

Question latitude_question() {
    Question q;
    q.id = "lat:Ban Pa Sak";
    q.stem = "What is the latitude of Ban Pa Sak?";
    q.options = {"16.8", "25.3"};
    q.correct_index = 0;
    q.domain_tag = Domain::latitude;
    return q;
}

Question four_choice_question() {
    Question q;
    q.id = "qa:rosenblatt-2010";
    q.stem = "Who received the IEEE Frank Rosenblatt Award in 2010?";
    q.options = {"Michio Sugeno", "James Bezdek", "Lotfi Zadeh", "Enrique Ruspini"};
    q.correct_index = 0;
    q.domain_tag = Domain::simpleqa_mc;
    return q;
}

Question fictitious_question() {
    Question q;
    q.id = "fict:KWEZ";
    q.stem = "What is the latitude of KWEZ?";
    q.options = {"12.4", "18.6"};
    q.correct_index = 0;
    q.domain_tag = Domain::fictitious_latitude;
    q.context_block = "KWEZ: 12.4\nVORN: -33.7";
    return q;
}

std::string turn2_bytes(const Question& q, const Condition& cond, std::optional<int> advised,
                        const std::string& displayed) {
    AdvicePresentation adv;
    adv.advised_index = advised;
    adv.stated_accuracy = cond.advice_accuracy;
    Turn2Prompt p = render_turn2_prompt(q, cond, adv, displayed);
    return p.fabricated_message + "\n=====\n" + p.user_message;
}

std::string temp_records_path(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / "twoturn_paradigm_tests";
    std::filesystem::create_directories(dir);
    auto path = dir / (tag + ".jsonl");
    std::filesystem::remove(path);
    return path.string();
}

}  // namespace

TEST_CASE("the main matrix crosses 2 displays, 3 advice types, 6 accuracies") {
    auto conditions = condition_matrix(
        {Display::Shown, Display::Hidden}, {Advice::Same, Advice::Opposite, Advice::Neutral},
        {0.55, 0.575, 0.6, 0.65, 0.7, 0.75});
    REQUIRE(conditions.size() == 36);
    std::set<std::string> keys;
    for (const auto& c : conditions) keys.insert(c.key());
    REQUIRE(keys.size() == 36);
    REQUIRE(conditions.front().key() == "shown|same|0.5500|self");
    REQUIRE(conditions.back().key() == "hidden|neutral|0.7500|self");
    // Display-major, then advice, then ascending accuracy.
    REQUIRE(conditions[5].key() == "shown|same|0.7500|self");
    REQUIRE(conditions[6].key() == "shown|opposite|0.5500|self");
    REQUIRE(conditions[18].key() == "hidden|same|0.5500|self");
}

TEST_CASE("matrix construction rejects malformed factor sets") {
    REQUIRE_THROWS_AS(condition_matrix({}, {Advice::Same}, {0.6}), std::invalid_argument);
    REQUIRE_THROWS_AS(condition_matrix({Display::Shown}, {}, {0.6}), std::invalid_argument);
    REQUIRE_THROWS_AS(condition_matrix({Display::Shown}, {Advice::Same}, {}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(condition_matrix({Display::Shown}, {Advice::Same}, {0.7, 0.6}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(condition_matrix({Display::Shown}, {Advice::Same}, {1.2}),
                      std::invalid_argument);
}

TEST_CASE("other-LLM attribution refuses hidden displays") {
    REQUIRE_NOTHROW(condition_matrix({Display::Shown}, {Advice::Opposite}, {0.7},
                                     Attribution::OtherLLM));
    REQUIRE_THROWS_AS(
        condition_matrix({Display::Hidden}, {Advice::Opposite}, {0.7}, Attribution::OtherLLM),
        std::invalid_argument);
}

TEST_CASE("turn-1 prompts match their golden bytes") {
    REQUIRE(render_turn1_prompt(latitude_question()) == golden("turn1_latitude"));
    REQUIRE(render_turn1_prompt(four_choice_question()) == golden("turn1_fourchoice"));
    REQUIRE(render_turn1_prompt(fictitious_question()) == golden("turn1_fictitious"));
}

TEST_CASE("turn-2 prompts match their golden bytes across the main cells") {
    Question q = latitude_question();

    Condition c;
    c.display = Display::Shown;
    c.advice = Advice::Opposite;
    c.advice_accuracy = 0.7;
    REQUIRE(turn2_bytes(q, c, 0, "b") == golden("turn2_shown_opposite_70"));

    c.advice = Advice::Same;
    c.advice_accuracy = 0.8;
    REQUIRE(turn2_bytes(q, c, 1, "b") == golden("turn2_shown_same_80"));

    c.advice = Advice::Neutral;
    c.advice_accuracy = 0.5;
    REQUIRE(turn2_bytes(q, c, std::nullopt, "b") == golden("turn2_shown_neutral_50"));

    c.display = Display::Hidden;
    c.advice = Advice::Opposite;
    c.advice_accuracy = 0.7;
    REQUIRE(turn2_bytes(q, c, 0, "xx") == golden("turn2_hidden_opposite_70"));

    c.advice = Advice::Same;
    c.advice_accuracy = 0.6;
    REQUIRE(turn2_bytes(q, c, 1, "xx") == golden("turn2_hidden_same_60"));

    c.advice = Advice::Neutral;
    REQUIRE(turn2_bytes(q, c, std::nullopt, "xx") == golden("turn2_hidden_neutral_60"));
}

TEST_CASE("control variants match their golden bytes") {
    Question q = latitude_question();

    Condition wrong;
    wrong.display = Display::Wrong;
    wrong.advice = Advice::Opposite;
    wrong.advice_accuracy = 0.7;
    std::mt19937_64 rng(1);
    std::string displayed = displayed_answer(wrong, q, 0, rng);
    REQUIRE(displayed == "b");
    REQUIRE(turn2_bytes(q, wrong, 1, displayed) == golden("turn2_wrong_opposite_70"));

    Condition other;
    other.display = Display::Shown;
    other.advice = Advice::Opposite;
    other.advice_accuracy = 0.7;
    other.attribution = Attribution::OtherLLM;
    REQUIRE(turn2_bytes(q, other, 0, "b") == golden("turn2_otherllm_shown_opposite_70"));

    Condition four;
    four.display = Display::Hidden;
    four.advice = Advice::Opposite;
    four.advice_accuracy = 0.55;
    REQUIRE(turn2_bytes(four_choice_question(), four, 2, "xx") ==
            golden("turn2_fourchoice_hidden_opposite_55"));
}

TEST_CASE("advice derivation follows the condition") {
    std::mt19937_64 rng(2);
    Condition same;
    same.advice = Advice::Same;
    same.advice_accuracy = 0.65;
    auto adv = derive_advice(same, 1, 2, rng);
    REQUIRE(adv.advised_index == 1);
    REQUIRE(adv.stated_accuracy == 0.65);

    Condition opp;
    opp.advice = Advice::Opposite;
    opp.advice_accuracy = 0.7;
    REQUIRE(derive_advice(opp, 1, 2, rng).advised_index == 0);
    REQUIRE(derive_advice(opp, 0, 2, rng).advised_index == 1);

    Condition neutral;
    neutral.advice = Advice::Neutral;
    REQUIRE_FALSE(derive_advice(neutral, 1, 2, rng).advised_index.has_value());
}

TEST_CASE("opposite advice on four options spreads over the non-chosen ones") {
    Condition opp;
    opp.advice = Advice::Opposite;
    opp.advice_accuracy = 0.55;
    std::mt19937_64 rng(3);
    std::map<int, int> counts;
    const int n = 3000;
    for (int i = 0; i < n; ++i) {
        auto adv = derive_advice(opp, 2, 4, rng);
        REQUIRE(adv.advised_index.has_value());
        REQUIRE(*adv.advised_index != 2);
        ++counts[*adv.advised_index];
    }
    for (int j : {0, 1, 3})
        REQUIRE(static_cast<double>(counts[j]) / n == Catch::Approx(1.0 / 3.0).margin(0.04));
}

TEST_CASE("displayed answer per display type") {
    std::mt19937_64 rng(4);
    Question q = latitude_question();

    Condition shown;
    shown.display = Display::Shown;
    REQUIRE(displayed_answer(shown, q, 1, rng) == "b");

    Condition hidden;
    hidden.display = Display::Hidden;
    REQUIRE(displayed_answer(hidden, q, 1, rng) == "xx");

    Condition wrong;
    wrong.display = Display::Wrong;
    // Binary wrong display is always the incorrect option, whatever was chosen.
    REQUIRE(displayed_answer(wrong, q, 0, rng) == "b");
    REQUIRE(displayed_answer(wrong, q, 1, rng) == "b");

    Question mc = four_choice_question();
    for (int i = 0; i < 200; ++i) {
        std::string label = displayed_answer(wrong, mc, 2, rng);
        REQUIRE(label != option_label(static_cast<size_t>(mc.correct_index), 4));
    }
}

TEST_CASE("answer parsing accepts the template variants and nothing else") {
    REQUIRE(parse_answer("My answer is: a", 2, Turn::first) == 0);
    REQUIRE(parse_answer("my answer is:B", 2, Turn::first) == 1);
    REQUIRE(parse_answer("My answer is b", 2, Turn::first) == 1);
    REQUIRE(parse_answer("My answer is:\n a", 2, Turn::first) == 0);
    REQUIRE(parse_answer("Sure. My final answer is: a.", 2, Turn::final) == 0);
    REQUIRE(parse_answer("My final answer is:3", 4, Turn::final) == 2);

    REQUIRE(parse_answer("I refuse to answer.", 2, Turn::first) == -1);
    REQUIRE(parse_answer("My answer is: ab", 2, Turn::first) == -1);
    REQUIRE(parse_answer("My answer is: c", 2, Turn::first) == -1);
    REQUIRE(parse_answer("My answer is: 5", 4, Turn::first) == -1);
    REQUIRE(parse_answer("My answer is:", 2, Turn::first) == -1);
    // A first-turn marker does not satisfy a final-turn parse, nor the reverse.
    REQUIRE(parse_answer("My answer is: a", 2, Turn::final) == -1);
    REQUIRE(parse_answer("My final answer is: a", 2, Turn::first) == -1);
}

TEST_CASE("a full trial record is internally coherent") {
    AgentParams p;
    p.competence = 1.0;
    p.evidence_strength = 2.0;
    SimulatedAgent agent(p);
    Question q = latitude_question();

    Condition cond;
    cond.display = Display::Shown;
    cond.advice = Advice::Opposite;
    cond.advice_accuracy = 0.7;

    auto rng = trial_rng(9, q.id, cond.key());
    TrialRecord rec = run_trial(agent, q, cond, 1.0, rng);
    REQUIRE(rec.parse_ok);
    REQUIRE(rec.question_id == q.id);
    REQUIRE(rec.turn1_choice == 0);
    REQUIRE(rec.displayed_turn1 == "a");
    REQUIRE(rec.advice.advised_index == 1);
    REQUIRE(rec.prior() == Catch::Approx(sigmoid(2.0)).margin(1e-12));
    REQUIRE(rec.turn1_confidence.probs.size() == 2);
    REQUIRE(rec.turn2_confidence.probs.size() == 2);
    REQUIRE(rec.changed_mind == (rec.turn2_choice != rec.turn1_choice));
    REQUIRE(rec.backend_id == agent.id());
    double ideal = bayes_posterior(rec.prior(), Advice::Opposite, 0.7);
    REQUIRE(rec.final_conf_initial() == Catch::Approx(ideal).margin(1e-9));
}

TEST_CASE("hidden neutral trials leave confidence untouched for an ideal agent") {
    AgentParams p;
    p.competence = 0.8;
    p.evidence_strength = 1.4;
    SimulatedAgent agent(p);
    Question q = latitude_question();
    Condition cond;
    cond.display = Display::Hidden;
    cond.advice = Advice::Neutral;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        auto rng = trial_rng(seed, q.id, cond.key());
        TrialRecord rec = run_trial(agent, q, cond, 1.0, rng);
        REQUIRE(rec.parse_ok);
        REQUIRE(rec.final_conf_initial() == Catch::Approx(rec.prior()).margin(1e-9));
        REQUIRE_FALSE(rec.changed_mind);
    }
}

TEST_CASE("hidden displays never leak the turn-1 answer into the answer slots") {
    AgentParams p;
    SimulatedAgent agent(p);
    Question q = latitude_question();
    for (Advice a : {Advice::Same, Advice::Opposite, Advice::Neutral}) {
        Condition cond;
        cond.display = Display::Hidden;
        cond.advice = a;
        cond.advice_accuracy = 0.7;
        for (uint64_t seed = 1; seed <= 10; ++seed) {
            auto rng = trial_rng(seed, q.id, cond.key());
            TrialRecord rec = run_trial(agent, q, cond, 1.0, rng);
            REQUIRE(rec.displayed_turn1 == "xx");
            Turn2Prompt prompt = render_turn2_prompt(q, cond, rec.advice, rec.displayed_turn1);
            REQUIRE(prompt.fabricated_message == "My answer is xx");
            REQUIRE(prompt.user_message.rfind("Your original answer has been replaced by xx. ",
                                              0) == 0);
        }
    }
}

TEST_CASE("wrong displays recompute changed_initial_answer against the shown label") {
    AgentParams p;
    p.competence = 1.0;
    p.evidence_strength = 3.0;
    SimulatedAgent agent(p);
    Question q = latitude_question();
    Condition cond;
    cond.display = Display::Wrong;
    cond.advice = Advice::Neutral;
    auto rng = trial_rng(5, q.id, cond.key());
    TrialRecord rec = run_trial(agent, q, cond, 1.0, rng);
    REQUIRE(rec.parse_ok);
    // The agent sticks with its (correct) turn-1 answer "a" while the display
    // claimed "b", so the record flags a changed initial answer but no COM.
    REQUIRE(rec.displayed_turn1 == "b");
    REQUIRE(rec.turn2_choice == rec.turn1_choice);
    REQUIRE_FALSE(rec.changed_mind);
    REQUIRE(rec.changed_initial_answer);
}

TEST_CASE("run_experiment covers the product once and resumes cleanly") {
    AgentParams p;
    SimulatedAgent agent(p);
    QuestionSet set;
    set.chance_level = 0.5;
    for (int i = 0; i < 5; ++i) {
        Question q = latitude_question();
        q.id = "lat:q" + std::to_string(i);
        set.questions.push_back(q);
    }
    auto all = condition_matrix({Display::Shown, Display::Hidden},
                                {Advice::Same, Advice::Opposite, Advice::Neutral}, {0.7});
    std::vector<Condition> first_half(all.begin(), all.begin() + 3);

    RunConfig cfg;
    cfg.seed = 11;
    cfg.records_path = temp_records_path("resume");

    RunCounts c1 = run_experiment(agent, set, first_half, cfg);
    REQUIRE(c1.attempted == 15);
    REQUIRE(c1.completed == 15);
    REQUIRE(c1.skipped_existing == 0);

    RunCounts c2 = run_experiment(agent, set, all, cfg);
    REQUIRE(c2.attempted == 30);
    REQUIRE(c2.skipped_existing == 15);
    REQUIRE(c2.completed == 15);

    auto records = read_records(cfg.records_path);
    REQUIRE(records.size() == 30);
    std::set<std::string> keys;
    for (const auto& r : records) keys.insert(r.key());
    REQUIRE(keys.size() == 30);
}

TEST_CASE("parallel execution reproduces the sequential record file byte for byte") {
    AgentParams p;
    p.competence = 0.8;
    p.evidence_noise_sd = 0.3;
    p.update_noise_sd = 0.2;
    SimulatedAgent agent(p);
    QuestionSet set;
    for (int i = 0; i < 6; ++i) {
        Question q = latitude_question();
        q.id = "lat:p" + std::to_string(i);
        set.questions.push_back(q);
    }
    auto conditions = condition_matrix({Display::Shown, Display::Hidden},
                                       {Advice::Same, Advice::Opposite, Advice::Neutral},
                                       {0.6, 0.75});

    RunConfig seq;
    seq.seed = 21;
    seq.records_path = temp_records_path("seq");
    run_experiment(agent, set, conditions, seq);

    RunConfig par = seq;
    par.parallel = 4;
    par.records_path = temp_records_path("par");
    run_experiment(agent, set, conditions, par);

    REQUIRE(read_file(seq.records_path) == read_file(par.records_path));
}

TEST_CASE("per-record invariants hold across a mixed run") {
    AgentParams p;
    p.competence = 0.7;
    p.evidence_noise_sd = 0.4;
    SimulatedAgent agent(p);
    QuestionSet set;
    for (int i = 0; i < 4; ++i) {
        Question q = latitude_question();
        q.id = "lat:m" + std::to_string(i);
        set.questions.push_back(q);
    }
    auto conditions = condition_matrix({Display::Shown, Display::Hidden},
                                       {Advice::Same, Advice::Opposite, Advice::Neutral},
                                       {0.55, 0.7});
    RunConfig cfg;
    cfg.seed = 31;
    cfg.records_path = temp_records_path("invariants");
    run_experiment(agent, set, conditions, cfg);

    for (const auto& rec : read_records(cfg.records_path)) {
        REQUIRE(rec.parse_ok);
        rec.turn1_confidence.validate();
        rec.turn2_confidence.validate();
        switch (rec.condition.advice) {
            case Advice::Same:
                REQUIRE(rec.advice.advised_index == rec.turn1_choice);
                break;
            case Advice::Opposite:
                REQUIRE(rec.advice.advised_index.has_value());
                REQUIRE(*rec.advice.advised_index != rec.turn1_choice);
                break;
            case Advice::Neutral:
                REQUIRE_FALSE(rec.advice.advised_index.has_value());
                break;
        }
        if (rec.condition.display == Display::Hidden) {
            REQUIRE(rec.displayed_turn1 == "xx");
            REQUIRE(rec.changed_initial_answer == rec.changed_mind);
        } else {
            REQUIRE(rec.displayed_turn1 ==
                    option_label(static_cast<size_t>(rec.turn1_choice), 2));
        }
        REQUIRE(rec.changed_mind == (rec.turn1_choice != rec.turn2_choice));
    }
}

TEST_CASE("trial records are reproducible from seed, question, and condition") {
    AgentParams p;
    p.competence = 0.8;
    p.evidence_noise_sd = 0.5;
    p.update_noise_sd = 0.3;
    SimulatedAgent agent(p);
    Question q = latitude_question();
    Condition cond;
    cond.display = Display::Shown;
    cond.advice = Advice::Opposite;
    cond.advice_accuracy = 0.65;

    auto r1 = trial_rng(77, q.id, cond.key());
    auto r2 = trial_rng(77, q.id, cond.key());
    TrialRecord a = run_trial(agent, q, cond, 1.0, r1);
    TrialRecord b = run_trial(agent, q, cond, 1.0, r2);
    REQUIRE(record_to_json(a).dump() == record_to_json(b).dump());

    auto r3 = trial_rng(78, q.id, cond.key());
    TrialRecord c = run_trial(agent, q, cond, 1.0, r3);
    REQUIRE(record_to_json(a).dump() != record_to_json(c).dump());
}
