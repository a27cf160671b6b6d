// Release gate: every acceptance criterion runs end to end with its
// tolerance pinned in this file, one PASS/FAIL line per criterion. The exit
// status is the number of failed criteria, so any red line fails the suite.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "twoturn/behavmodel.hpp"
#include "twoturn/pipeline.hpp"

namespace {

using namespace twoturn;
namespace fs = std::filesystem;

struct Checks {
    bool pass = true;
    std::vector<std::string> notes;

    void gate(bool ok, const std::string& label) {
        if (!ok) {
            pass = false;
            notes.push_back("FAILED " + label);
        }
    }
    void note(const std::string& text) { notes.push_back(text); }
    std::string joined() const {
        std::string s;
        for (size_t i = 0; i < notes.size(); ++i) s += (i ? "; " : "") + notes[i];
        return s;
    }
};

fs::path scratch_root() {
    static fs::path root = [] {
        fs::path dir = fs::temp_directory_path() / "twoturn_acceptance";
        fs::remove_all(dir);
        fs::create_directories(dir);
        return dir;
    }();
    return root;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
    static int counter = 0;
    fs::path capture = scratch_root() / ("cli_" + std::to_string(counter++) + ".txt");
    std::string cmd =
        std::string("\"") + TWOTURN_CLI_PATH + "\" " + args + " > " + capture.string() + " 2>&1";
    int raw = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(capture);
        std::ostringstream ss;
        ss << in.rdbuf();
        *output = ss.str();
    }
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

// Independent enumeration oracle: tabulate the joint probability of (true
// option, advisor pick) in extended precision and condition on the advised
// column.
std::vector<double> enum_posterior(const std::vector<double>& prior, size_t advised,
                                   double accuracy) {
    size_t k = prior.size();
    std::vector<long double> clamped(k);
    for (size_t i = 0; i < k; ++i)
        clamped[i] = std::max(static_cast<long double>(prior[i]), 1e-9L);
    long double norm = 0.0L;
    for (long double v : clamped) norm += v;
    std::vector<long double> joint(k, 0.0L);
    long double column = 0.0L;
    for (size_t truth = 0; truth < k; ++truth) {
        long double p_truth = clamped[truth] / norm;
        long double p_pick = truth == advised
                                 ? static_cast<long double>(accuracy)
                                 : (1.0L - static_cast<long double>(accuracy)) /
                                       static_cast<long double>(k - 1);
        joint[truth] = p_truth * p_pick;
        column += joint[truth];
    }
    std::vector<double> posterior(k);
    for (size_t i = 0; i < k; ++i) posterior[i] = static_cast<double>(joint[i] / column);
    return posterior;
}

std::vector<TrialRecord> run_agent(const std::string& tag, const QuestionSet& questions,
                                   const std::vector<Condition>& conditions,
                                   const AgentParams& params, uint64_t seed) {
    SimulatedAgent agent(params);
    RunConfig rc;
    rc.seed = seed;
    rc.tau = 1.0;
    rc.records_path = (scratch_root() / (tag + ".jsonl")).string();
    rc.parallel = 8;
    run_experiment(agent, questions, conditions, rc);
    return read_records(rc.records_path);
}

std::vector<Condition> main_matrix() {
    return condition_matrix({Display::Shown, Display::Hidden},
                            {Advice::Same, Advice::Opposite, Advice::Neutral},
                            {0.55, 0.575, 0.6, 0.65, 0.7, 0.75});
}

double cell_oucs(const std::vector<TrialRecord>& records, Display d, Advice a) {
    for (const auto& cell : observed_vs_ideal_cells(records))
        if (cell.display == d && cell.advice == a) return cell.report.score;
    throw std::runtime_error("requested OUCS cell has no records");
}

std::vector<UpdatePair> cell_pairs(const std::vector<TrialRecord>& records, Display d, Advice a) {
    std::vector<UpdatePair> pairs;
    for (const auto& r : records) {
        if (!r.parse_ok || r.condition.display != d || r.condition.advice != a) continue;
        pairs.push_back({r.update(), detail::ideal_posterior_initial(r) - r.prior()});
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Criterion 1: posterior math against brute-force enumeration.

Checks criterion1() {
    Checks c;
    std::mt19937_64 rng(20260815);
    std::uniform_real_distribution<double> acc_dist(0.0, 1.0);

    double worst = 0.0;
    auto compare = [&](const std::vector<double>& prior, size_t advised, double accuracy) {
        auto got = bayes_posterior_vector(prior, advised, accuracy);
        auto want = enum_posterior(prior, advised, accuracy);
        for (size_t i = 0; i < got.size(); ++i)
            worst = std::max(worst, std::abs(got[i] - want[i]));
    };

    std::uniform_real_distribution<double> p2(0.02, 0.98);
    for (int i = 0; i < 1000; ++i) {
        double p = p2(rng);
        compare({p, 1.0 - p}, rng() % 2, acc_dist(rng));
    }
    std::uniform_real_distribution<double> p4(0.05, 1.0);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> prior(4);
        double sum = 0.0;
        for (double& v : prior) sum += (v = p4(rng));
        for (double& v : prior) v /= sum;
        compare(prior, rng() % 4, acc_dist(rng));
    }
    c.gate(worst <= 1e-12, strfmt("enumeration max|diff|=%.2e > 1e-12", worst));
    c.note(strfmt("enumeration max|diff|=%.2e over 1500 cases", worst));

    double spot = bayes_posterior(0.8, Advice::Opposite, 0.7);
    bool spot_ok = std::abs(spot - 0.24 / 0.38) <= 1e-9 && std::llround(spot * 1e4) == 6316;
    c.gate(spot_ok, strfmt("spot posterior %.10f != 0.6316", spot));
    c.note(strfmt("spot=%.6f", spot));
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 2: a Bayes-faithful agent through the whole pipeline shows no
// bias. The execution noise keeps the regressions non-degenerate; it is kept
// small because log-odds noise pushed through the sigmoid's curvature shifts
// mean updates by O(noise^2), which at scale would read as false asymmetry.

AgentParams null_agent() {
    AgentParams a;
    a.competence = 0.75;
    a.evidence_strength = std::log(0.65 / 0.35);
    a.evidence_noise_sd = 0.035355;
    a.gain_opposite = 1.0;
    a.gain_same = 1.0;
    a.shown_boost = 0.0;
    a.update_noise_sd = 0.02;
    return a;
}

Checks criterion2() {
    Checks c;
    QuestionSet questions = generate_parity_set(2000, 404);
    auto records = run_agent("null_records", questions, main_matrix(), null_agent(), 2024);
    c.note(strfmt("n=%zu", records.size()));

    double worst_oucs = 0.0;
    for (Display d : {Display::Hidden, Display::Shown})
        for (Advice a : {Advice::Neutral, Advice::Same, Advice::Opposite}) {
            double score = cell_oucs(records, d, a);
            worst_oucs = std::max(worst_oucs, std::abs(score));
            c.gate(std::abs(score) <= 0.02,
                   strfmt("OUCS(%s,%s)=%.4f outside +-0.02", to_string(d), to_string(a), score));
        }
    c.note(strfmt("max|OUCS|=%.4f", worst_oucs));

    std::vector<UpdatePair> pairs;
    for (const auto& r : records) {
        if (!r.parse_ok || r.condition.advice == Advice::Neutral) continue;
        pairs.push_back({r.update(), detail::ideal_posterior_initial(r) - r.prior()});
    }
    RatioReport ratio = overweighting_ratio(pairs);
    c.gate(std::abs(ratio.median_ratio - 1.0) <= 0.05,
           strfmt("overweighting median=%.4f outside 1.00+-0.05", ratio.median_ratio));
    c.note(strfmt("ratio=%.4f", ratio.median_ratio));

    // Weights over the Bayes-excess update: the advice-direction asymmetry
    // the biased agent shows below must be absent here.
    std::vector<TwoStageRow> rows;
    for (const auto& r : records) {
        if (!r.parse_ok) continue;
        double excess = r.update() - (detail::ideal_posterior_initial(r) - r.prior());
        rows.push_back({excess, r.condition.display, r.condition.advice});
    }
    TwoStageResult ts = two_stage_weights(rows);
    auto stat = [&](const std::string& name, double* coef, double* se) {
        for (size_t i = 0; i < ts.stage2.names.size(); ++i)
            if (ts.stage2.names[i] == name) {
                *coef = ts.stage2.coefficients[i];
                *se = ts.stage2.std_errors[i];
                return;
            }
        throw std::runtime_error("missing stage-2 cell " + name);
    };
    double ho, hs, so, ss, se_ho, se_hs, se_so, se_ss;
    stat("hidden|opposite", &ho, &se_ho);
    stat("shown|opposite", &so, &se_so);
    stat("hidden|same", &hs, &se_hs);
    stat("shown|same", &ss, &se_ss);
    double contrast = 0.5 * (ho + so) - 0.5 * (hs + ss);
    double se = 0.5 * std::sqrt(se_ho * se_ho + se_so * se_so + se_hs * se_hs + se_ss * se_ss);
    double p = normal_two_sided_p(contrast / se);
    c.gate(p >= 0.01, strfmt("opposite/same excess asymmetry p=%.4f < 0.01", p));
    c.note(strfmt("asymmetry p=%.3f", p));
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 3: a biased agent is recovered by the same analyses. The shown
// boost of 1.194 log-odds was tuned to lift mean Shown/Neutral confidence by
// +0.21 under these evidence settings.

Checks criterion3() {
    Checks c;
    AgentParams a = null_agent();
    a.gain_opposite = 2.58;
    a.gain_same = 1.095;
    a.shown_boost = 1.194;
    QuestionSet questions = generate_parity_set(2000, 505);
    auto records = run_agent("biased_records", questions, main_matrix(), a, 3035);

    double shown_neutral_rise = 0.0;
    size_t n_sn = 0;
    for (const auto& r : records)
        if (r.parse_ok && r.condition.display == Display::Shown &&
            r.condition.advice == Advice::Neutral) {
            shown_neutral_rise += r.update();
            ++n_sn;
        }
    shown_neutral_rise /= static_cast<double>(n_sn);
    c.note(strfmt("shown/neutral rise=%.3f", shown_neutral_rise));

    RatioReport hidden_opp = overweighting_ratio(cell_pairs(records, Display::Hidden,
                                                            Advice::Opposite));
    c.gate(std::abs(hidden_opp.median_ratio - 2.58) <= 0.15,
           strfmt("hidden/opposite median=%.4f outside 2.58+-0.15", hidden_opp.median_ratio));
    c.note(strfmt("hidden/opposite ratio=%.3f", hidden_opp.median_ratio));

    std::vector<double> neutral_shown, neutral_hidden;
    for (const auto& r : records) {
        if (!r.parse_ok || r.condition.advice != Advice::Neutral) continue;
        if (r.condition.display == Display::Shown) neutral_shown.push_back(r.update());
        else neutral_hidden.push_back(r.update());
    }
    RatioReport corrected = corrected_overweighting_ratio(
        cell_pairs(records, Display::Shown, Advice::Opposite), neutral_shown, neutral_hidden);
    c.gate(std::abs(corrected.median_ratio - 2.58) <= 0.2,
           strfmt("corrected shown/opposite median=%.4f outside 2.58+-0.20 "
                  "(subtracting the additive display shift from a multiplicative "
                  "log-odds gain lands near 2.0 by construction)",
                  corrected.median_ratio));
    c.note(strfmt("corrected shown/opposite=%.3f", corrected.median_ratio));

    double oucs_ho = cell_oucs(records, Display::Hidden, Advice::Opposite);
    double oucs_sn = cell_oucs(records, Display::Shown, Advice::Neutral);
    c.gate(oucs_ho < -0.15, strfmt("OUCS(hidden,opposite)=%.3f not < -0.15", oucs_ho));
    c.gate(oucs_sn > 0.10, strfmt("OUCS(shown,neutral)=%.3f not > +0.10", oucs_sn));
    c.note(strfmt("OUCS hidden/opp=%.3f shown/neutral=%.3f", oucs_ho, oucs_sn));

    std::vector<double> com_hidden, com_shown;
    for (const auto& r : records) {
        if (!r.parse_ok) continue;
        double v = r.changed_mind ? 1.0 : 0.0;
        if (r.condition.display == Display::Hidden) com_hidden.push_back(v);
        else com_shown.push_back(v);
    }
    double p = permutation_test(com_hidden, com_shown);
    bool direction = mean(com_hidden) > mean(com_shown);
    c.gate(direction && p < 0.001,
           strfmt("COM hidden=%.3f shown=%.3f perm p=%.4f", mean(com_hidden), mean(com_shown), p));
    c.note(strfmt("COM hidden=%.3f shown=%.3f p=%.1e", mean(com_hidden), mean(com_shown), p));
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 4: constrained sigmoid recovery and its linear guard.

// Confidence bins span the four-option range [0.25, 1]; the plateau below
// the sigmoid's midpoint is what separates it from a straight line.
double bin_center(size_t j, size_t n_bins) {
    return 0.25 + (static_cast<double>(j) + 0.5) * 0.75 / static_cast<double>(n_bins);
}

std::vector<SigmoidBin> sample_bins(const std::vector<double>& rates, size_t per_bin,
                                    uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<SigmoidBin> bins;
    for (size_t j = 0; j < rates.size(); ++j) {
        std::bernoulli_distribution flip(rates[j]);
        size_t hits = 0;
        for (size_t t = 0; t < per_bin; ++t) hits += flip(rng) ? 1 : 0;
        bins.push_back({bin_center(j, rates.size()),
                        static_cast<double>(hits) / static_cast<double>(per_bin), per_bin});
    }
    return bins;
}

Checks criterion4() {
    Checks c;
    const double a = 1.0, b = -15.0, cc = 0.8;
    std::vector<double> rates;
    for (size_t j = 0; j < 20; ++j)
        rates.push_back(a * sigmoid(b * (bin_center(j, 20) - cc)));
    SigmoidFit fit = fit_constrained_sigmoid(sample_bins(rates, 1000, 808));
    c.gate(std::abs(fit.c - cc) <= 0.02, strfmt("c=%.4f outside 0.80+-0.02", fit.c));
    c.gate(std::abs(fit.b - b) <= 0.2 * std::abs(b), strfmt("b=%.2f outside -15+-20%%", fit.b));
    double linear_r2 = fit.comparison.at("linear");
    c.gate(fit.r_squared - linear_r2 >= 0.1,
           strfmt("sigmoid R2=%.3f beats linear R2=%.3f by < 0.1", fit.r_squared, linear_r2));
    c.note(strfmt("c=%.3f b=%.2f R2 sigmoid=%.3f linear=%.3f", fit.c, fit.b, fit.r_squared,
                  linear_r2));

    std::vector<double> linear_rates;
    for (size_t j = 0; j < 20; ++j)
        linear_rates.push_back(0.95 - 1.0 * (bin_center(j, 20) - 0.25));
    SigmoidFit lin_fit = fit_constrained_sigmoid(sample_bins(linear_rates, 1000, 809));
    double lin_r2 = lin_fit.comparison.at("linear");
    c.gate(lin_fit.r_squared <= lin_r2 + 0.01,
           strfmt("on linear data sigmoid R2=%.4f beats linear R2=%.4f by > 0.01",
                  lin_fit.r_squared, lin_r2));
    c.note(strfmt("linear-data R2 sigmoid=%.4f linear=%.4f", lin_fit.r_squared, lin_r2));
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 5: temperature recovery on synthetic logits.

Checks criterion5() {
    Checks c;
    const double tau0 = 3.3;
    std::mt19937_64 rng(909);
    std::uniform_real_distribution<double> margin_dist(0.3, 6.0);
    std::vector<std::vector<double>> logit_sets;
    std::vector<bool> outcomes;
    for (size_t i = 0; i < 40000; ++i) {
        double m = margin_dist(rng);
        logit_sets.push_back({m, 0.0});
        outcomes.push_back(std::bernoulli_distribution(sigmoid(m / tau0))(rng));
    }
    CalibrationResult pre =
        calibration_metrics(chosen_option_confidences(logit_sets, 1.0), outcomes, 10, 0.5);
    CalibrationResult post = calibrate(logit_sets, outcomes);
    c.gate(std::abs(post.tau_star - tau0) <= 0.1,
           strfmt("tau=%.3f outside 3.3+-0.1", post.tau_star));
    c.gate(post.ece < pre.ece, strfmt("ECE %.4f not below unscaled %.4f", post.ece, pre.ece));
    c.note(strfmt("tau=%.2f ECE %.4f -> %.4f", post.tau_star, pre.ece, post.ece));

    double auroc = rank_auroc({0.9, 0.8, 0.7, 0.2, 0.1}, {true, true, true, false, false});
    c.gate(auroc == 1.0, strfmt("separable AUROC=%.6f != 1.0", auroc));
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 6: behavioral-model parameter recovery and ELPD ranking.

std::vector<BehavRow> synthetic_rows(size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> prior_dist(0.4, 0.95);
    std::uniform_real_distribution<double> mag_dist(0.2, 1.0);
    std::vector<BehavRow> rows(n);
    for (size_t i = 0; i < n; ++i) {
        BehavRow& r = rows[i];
        r.prior = prior_dist(rng);
        r.shown = (rng() % 2) ? 1.0 : 0.0;
        int third = static_cast<int>(i % 3);
        r.direction = third == 0 ? 0 : (third == 1 ? 1 : -1);
        r.advice_magnitude = r.direction == 0 ? 0.0 : mag_dist(rng);
        r.y = 0.5;
    }
    return rows;
}

std::vector<double> params_by_name(const ParamLayout& layout,
                                   const std::map<std::string, double>& values) {
    std::vector<double> out(layout.size());
    for (size_t i = 0; i < layout.size(); ++i) out[i] = values.at(layout.names[i]);
    return out;
}

Checks criterion6() {
    Checks c;
    std::mt19937_64 rng(2468);

    ModelSpec cspec;
    cspec.name = ModelName::C;
    cspec.targets = {BehavTarget::conf_initial_option};
    cspec.joint = false;
    ParamLayout clayout = build_layout(cspec);
    std::map<std::string, double> truth = {{"b0:conf_initial_option", 0.2},
                                           {"b_prior:conf_initial_option", 1.1},
                                           {"b_shown:conf_initial_option", 0.4},
                                           {"b_advice:conf_initial_option", 1.35},
                                           {"log_phi:conf_initial_option", std::log(20.0)}};
    std::vector<std::vector<BehavRow>> cdata = {synthetic_rows(8000, rng)};
    simulate_behav_y(cspec, clayout, params_by_name(clayout, truth), cdata, rng);
    ModelFit cfit = fit_model(cspec, cdata);
    c.gate(cfit.diagnostics_ok, strfmt("model C fit failed rhat/ess gates (accept=%.2f)",
                                       cfit.accept_rate));
    double worst = 0.0;
    for (const auto& [name, value] : truth) {
        if (name.rfind("log_phi", 0) == 0) continue;
        double err = std::abs(cfit.posterior_mean(name) - value);
        worst = std::max(worst, err);
        c.gate(err <= 0.1, strfmt("%s recovered %.3f vs %.3f (err %.3f > 0.1)", name.c_str(),
                                  cfit.posterior_mean(name), value, err));
    }
    c.note(strfmt("C recovery max|err|=%.3f phi_hat=%.1f", worst,
                  std::exp(cfit.posterior_mean("log_phi:conf_initial_option"))));

    // Generative values chosen to exercise exactly what separates the
    // models: strong same/opposite asymmetry (only D splits the slopes) and
    // a hidden/shown split in the opposing slope.
    ModelSpec dspec;
    dspec.name = ModelName::D;
    ParamLayout dlayout = build_layout(dspec);
    std::map<std::string, double> dtruth = {
        {"b_prior", 2.0},
        {"b_shown", 0.6},
        {"b0:conf_initial_option", -0.8},
        {"w_same:conf_initial_option", 0.6},
        {"w_opp_hidden:conf_initial_option", 3.0},
        {"w_opp_shown:conf_initial_option", 1.2},
        {"log_phi:conf_initial_option", std::log(40.0)},
        {"b0:conf_final_option", -0.7},
        {"w_same:conf_final_option", 0.5},
        {"w_opp:conf_final_option", 2.4},
        {"log_phi:conf_final_option", std::log(40.0)},
        {"b0:switch", 0.5},
        {"w_same:switch", 0.6},
        {"w_opp:switch", 3.0}};
    std::vector<std::vector<BehavRow>> ddata = {synthetic_rows(2500, rng),
                                                synthetic_rows(2500, rng),
                                                synthetic_rows(2500, rng)};
    simulate_behav_y(dspec, dlayout, params_by_name(dlayout, dtruth), ddata, rng);

    std::vector<ModelFit> fits;
    for (ModelName name : {ModelName::A, ModelName::B, ModelName::C, ModelName::D}) {
        ModelSpec spec;
        spec.name = name;
        fits.push_back(fit_model(spec, ddata));
    }
    std::vector<const ModelFit*> ptrs;
    for (const auto& f : fits) ptrs.push_back(&f);
    auto table = compare_models(ptrs);

    std::string order;
    for (const auto& row : table) order += row.model;
    c.gate(order == "DCBA", "ranking on D-generated data is " + order + ", want DCBA");
    const ComparisonRow* c_row = nullptr;
    for (const auto& row : table)
        if (row.model == "C") c_row = &row;
    if (c_row) {
        c.gate(c_row->elpd_diff > 2.0 * c_row->diff_se,
               strfmt("elpd(D)-elpd(C)=%.1f not > 2*se=%.1f", c_row->elpd_diff,
                      2.0 * c_row->diff_se));
        c.note(strfmt("order=%s d(D,C)=%.1f se=%.1f", order.c_str(), c_row->elpd_diff,
                      c_row->diff_se));
    } else {
        c.gate(false, "model C missing from comparison table");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 7: model D fitted on one question distribution predicts behavior
// on another. Evidence strength belongs to the question set (it scales how
// decisive the turn-1 logits are), so the transfer set varies it while every
// advice-handling parameter stays fixed.

QuestionSet synthetic_mc_set(const std::string& prefix, Domain domain, size_t n, uint64_t seed) {
    QuestionSet set;
    set.chance_level = 0.25;
    set.provenance = "synthetic-mc(" + prefix + ")";
    std::mt19937_64 rng(seed);
    for (size_t i = 0; i < n; ++i) {
        Question q;
        q.id = strfmt("%s:%03zu", prefix.c_str(), i);
        q.stem = prefix + " question " + std::to_string(i);
        q.options = {"option 1", "option 2", "option 3", "option 4"};
        q.correct_index = static_cast<int>(rng() % 4);
        q.domain_tag = domain;
        set.questions.push_back(q);
    }
    set.validate();
    return set;
}

Checks criterion7() {
    Checks c;
    AgentParams agent;
    agent.competence = 0.75;
    agent.evidence_strength = 1.0;
    agent.evidence_noise_sd = 0.6;
    agent.gain_opposite = 1.8;
    agent.gain_same = 1.0;
    agent.shown_boost = 0.4;
    agent.update_noise_sd = 0.15;

    auto conditions = condition_matrix({Display::Shown, Display::Hidden, Display::Wrong},
                                       {Advice::Same, Advice::Opposite, Advice::Neutral},
                                       {0.25, 0.4, 0.55, 0.7, 0.85, 1.0});
    QuestionSet fact = synthetic_mc_set("fact", Domain::simpleqa_mc, 60, 71);
    auto train_records = run_agent("transfer_train", fact, conditions, agent, 7100);

    AgentParams transfer_agent = agent;
    transfer_agent.evidence_strength = 1.8;
    QuestionSet reason = synthetic_mc_set("reason", Domain::gsm_mc, 60, 72);
    auto transfer_records = run_agent("transfer_eval", reason, conditions, transfer_agent, 7200);

    ModelSpec spec;
    spec.name = ModelName::D;
    auto rows_for = [&](const std::vector<TrialRecord>& records) {
        std::vector<std::vector<BehavRow>> data;
        for (BehavTarget t : spec.targets) data.push_back(featurize(records, t, 0.25));
        return data;
    };
    ModelFit fit = fit_model(spec, rows_for(train_records));
    PredictResult pred = predict(fit, rows_for(transfer_records));
    c.gate(pred.switch_auroc >= 0.8, strfmt("switch AUROC=%.3f < 0.8", pred.switch_auroc));
    c.gate(pred.conf_mae <= 0.08, strfmt("confidence MAE=%.3f > 0.08", pred.conf_mae));
    c.note(strfmt("AUROC=%.3f MAE=%.3f diagnostics=%s", pred.switch_auroc, pred.conf_mae,
                  fit.diagnostics_ok ? "ok" : "failed"));
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 8: rendered prompts match their golden bytes and an executed run
// reconciles under the verify subcommand.

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

std::string golden_bytes(const std::string& name) {
    std::ifstream in(std::string(TWOTURN_TEST_DIR) + "/golden/" + name + ".golden",
                     std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Checks criterion8() {
    Checks c;
    Question lat = latitude_question();
    auto cond = [](Display d, Advice a, double acc, Attribution at = Attribution::Self) {
        Condition cd;
        cd.display = d;
        cd.advice = a;
        cd.advice_accuracy = acc;
        cd.attribution = at;
        return cd;
    };
    std::vector<std::pair<std::string, std::string>> renders = {
        {"turn1_latitude", render_turn1_prompt(lat)},
        {"turn1_fourchoice", render_turn1_prompt(four_choice_question())},
        {"turn1_fictitious", render_turn1_prompt(fictitious_question())},
        {"turn2_shown_opposite_70",
         turn2_bytes(lat, cond(Display::Shown, Advice::Opposite, 0.7), 0, "b")},
        {"turn2_shown_same_80", turn2_bytes(lat, cond(Display::Shown, Advice::Same, 0.8), 1, "b")},
        {"turn2_shown_neutral_50",
         turn2_bytes(lat, cond(Display::Shown, Advice::Neutral, 0.5), std::nullopt, "b")},
        {"turn2_hidden_opposite_70",
         turn2_bytes(lat, cond(Display::Hidden, Advice::Opposite, 0.7), 0, "xx")},
        {"turn2_hidden_same_60",
         turn2_bytes(lat, cond(Display::Hidden, Advice::Same, 0.6), 1, "xx")},
        {"turn2_hidden_neutral_60",
         turn2_bytes(lat, cond(Display::Hidden, Advice::Neutral, 0.6), std::nullopt, "xx")},
        {"turn2_wrong_opposite_70",
         turn2_bytes(lat, cond(Display::Wrong, Advice::Opposite, 0.7), 1, "b")},
        {"turn2_otherllm_shown_opposite_70",
         turn2_bytes(lat, cond(Display::Shown, Advice::Opposite, 0.7, Attribution::OtherLLM), 0,
                     "b")},
        {"turn2_fourchoice_hidden_opposite_55",
         turn2_bytes(four_choice_question(), cond(Display::Hidden, Advice::Opposite, 0.55), 2,
                     "xx")},
    };
    size_t matched = 0;
    for (const auto& [name, bytes] : renders) {
        if (bytes == golden_bytes(name)) ++matched;
        else c.gate(false, "golden mismatch: " + name);
    }
    c.note(strfmt("%zu/%zu goldens byte-identical", matched, renders.size()));

    auto matrix = main_matrix();
    std::set<std::string> keys;
    for (const auto& m : matrix) keys.insert(m.key());
    c.gate(matrix.size() == 36 && keys.size() == 36,
           strfmt("matrix has %zu conditions, %zu keys", matrix.size(), keys.size()));

    fs::path out_dir = scratch_root() / "fidelity_run";
    nlohmann::json cfg;
    cfg["run_id"] = "fidelity";
    cfg["out_dir"] = out_dir.string();
    cfg["seed"] = 88;
    cfg["dataset"] = {{"kind", "parity"}, {"n_questions", 12}};
    cfg["conditions"] = {{"displays", {"shown", "hidden"}},
                         {"advices", {"same", "opposite", "neutral"}},
                         {"accuracies", {0.55, 0.575, 0.6, 0.65, 0.7, 0.75}}};
    cfg["backend"] = {{"kind", "simulated"},      {"competence", 0.8},
                      {"evidence_noise_sd", 0.3}, {"gain_opposite", 2.0},
                      {"gain_same", 1.1},         {"shown_boost", 0.2},
                      {"update_noise_sd", 0.05}};
    cfg["analyses"] = {"com"};
    fs::path cfg_path = scratch_root() / "fidelity_config.json";
    {
        std::ofstream out(cfg_path);
        out << cfg.dump(2);
    }
    std::string run_out;
    int run_status = run_cli("run --config " + cfg_path.string(), &run_out);
    c.gate(run_status == 0, "pipeline run exited " + std::to_string(run_status));
    auto records = read_records((out_dir / "records.jsonl").string());
    c.gate(records.size() == 12 * 36,
           strfmt("record count %zu != 12 questions x 36 conditions", records.size()));

    std::string verify_out;
    int verify_status = run_cli("verify --run-dir " + out_dir.string(), &verify_out);
    c.gate(verify_status == 0 && verify_out.find("PASS") != std::string::npos,
           "verify subcommand reported: " + verify_out);
    c.note(strfmt("verify recount over %zu records ok", records.size()));
    return c;
}

// ---------------------------------------------------------------------------
// Criterion 9: the frequentist building blocks against closed forms and a
// brute-force likelihood grid.

Checks criterion9() {
    Checks c;
    WilcoxonResult w = wilcoxon_signed_rank({0.1, 0.2, 0.3, 0.4, 0.5});
    c.gate(w.exact && w.n_used == 5 && std::abs(w.p_value - 0.0625) < 1e-15,
           strfmt("wilcoxon all-positive n=5 p=%.6f != 0.0625", w.p_value));
    c.note(strfmt("wilcoxon p=%.4f", w.p_value));

    double p_same = permutation_test({0.3, 0.5, 0.7}, {0.3, 0.5, 0.7});
    c.gate(p_same == 1.0, strfmt("identical-group permutation p=%.6f != 1.0", p_same));

    std::mt19937_64 rng(616);
    std::normal_distribution<double> x_dist(0.0, 1.0);
    const double b0 = -0.4, b1 = 0.9;
    size_t n = 80;
    Eigen::MatrixXd design(n, 1);
    std::vector<bool> y(n);
    for (size_t i = 0; i < n; ++i) {
        double x = x_dist(rng);
        design(static_cast<Eigen::Index>(i), 0) = x;
        y[i] = std::bernoulli_distribution(sigmoid(b0 + b1 * x))(rng);
    }
    RegressionResult irls = logistic_fit(y, design, {"x"});
    c.gate(irls.converged && !irls.separation_flag, "IRLS did not converge cleanly");

    auto loglik = [&](double a0, double a1) {
        double ll = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double eta = a0 + a1 * design(static_cast<Eigen::Index>(i), 0);
            ll += y[i] ? -std::log1p(std::exp(-eta)) : -std::log1p(std::exp(eta));
        }
        return ll;
    };
    auto grid_argmax = [&](double lo0, double hi0, double lo1, double hi1, double step) {
        double best0 = lo0, best1 = lo1, best = -1e300;
        for (double a0 = lo0; a0 <= hi0 + 1e-12; a0 += step)
            for (double a1 = lo1; a1 <= hi1 + 1e-12; a1 += step) {
                double ll = loglik(a0, a1);
                if (ll > best) {
                    best = ll;
                    best0 = a0;
                    best1 = a1;
                }
            }
        return std::pair<double, double>{best0, best1};
    };
    auto [coarse0, coarse1] = grid_argmax(-3.0, 3.0, -3.0, 3.0, 0.05);
    auto [fine0, fine1] =
        grid_argmax(coarse0 - 0.06, coarse0 + 0.06, coarse1 - 0.06, coarse1 + 0.06, 0.0005);
    double d0 = std::abs(irls.coefficient("(intercept)") - fine0);
    double d1 = std::abs(irls.coefficient("x") - fine1);
    c.gate(d0 <= 1e-3 && d1 <= 1e-3,
           strfmt("IRLS vs grid MLE differs by (%.2e, %.2e) > 1e-3", d0, d1));
    c.note(strfmt("IRLS (%.4f, %.4f) grid (%.4f, %.4f)", irls.coefficient("(intercept)"),
                  irls.coefficient("x"), fine0, fine1));
    return c;
}

struct Criterion {
    int index;
    const char* title;
    double time_limit_s;
    Checks (*run)();
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "ideal-observer math", 1.0, criterion1},
        {2, "null-bias pipeline", 120.0, criterion2},
        {3, "bias recovery", 180.0, criterion3},
        {4, "sigmoid recovery", 10.0, criterion4},
        {5, "calibration recovery", 30.0, criterion5},
        {6, "model recovery and ranking", 600.0, criterion6},
        {7, "transfer prediction", 300.0, criterion7},
        {8, "protocol fidelity", 5.0, criterion8},
        {9, "statistical machinery", 30.0, criterion9},
    };
    scratch_root();
    int failures = 0;
    for (const auto& cr : criteria) {
        auto start = std::chrono::steady_clock::now();
        Checks result;
        try {
            result = cr.run();
        } catch (const std::exception& e) {
            result.pass = false;
            result.notes = {std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count();
        if (secs > cr.time_limit_s) {
            result.pass = false;
            result.notes.push_back(strfmt("FAILED runtime %.1fs > %.0fs limit", secs,
                                          cr.time_limit_s));
        }
        if (!result.pass) ++failures;
        std::printf("%s  criterion %d  %-28s %s (%.1fs)\n", result.pass ? "PASS" : "FAIL",
                    cr.index, cr.title, result.joined().c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<size_t>(failures),
                criteria.size());
    return failures;
}
