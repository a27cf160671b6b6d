#pragma once

// Ideal Bayesian observer for advice updating, the over/underconfidence
// score (OUCS), and the overweighting ratios including the shown-condition
// correction.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "twoturn/numeric.hpp"
#include "twoturn/types.hpp"

namespace twoturn {

inline constexpr double kPriorClampEps = 1e-9;
inline constexpr double kLogOddsEps = 1e-6;

inline double log_odds(double p, double eps = kLogOddsEps) {
    double clamped = std::clamp(p, eps, 1.0 - eps);
    return std::log(clamped / (1.0 - clamped));
}

inline double inverse_log_odds(double x) { return sigmoid(x); }

// Posterior over each option's correctness after an advisor of stated
// accuracy a names option advised_index. The advisor is right with
// probability a; its errors are uniform over the K-1 wrong options. Advice
// direction is implicit: advised_index == chosen gives supportive updating,
// anything else opposing. Neutral advice is handled by the callers (no
// update).
inline std::vector<double> bayes_posterior_vector(const std::vector<double>& prior,
                                                  size_t advised_index, double advisor_accuracy,
                                                  bool* prior_clamped = nullptr) {
    size_t k = prior.size();
    if (k < 2) throw std::invalid_argument("posterior needs at least two options");
    if (advised_index >= k) throw std::invalid_argument("advised index out of range");
    if (advisor_accuracy < 0.0 || advisor_accuracy > 1.0)
        throw std::invalid_argument("advisor accuracy outside [0,1]");

    std::vector<double> post(k);
    double total = 0.0;
    bool clamped = false;
    for (size_t i = 0; i < k; ++i) {
        double p = prior[i];
        if (p < kPriorClampEps || p > 1.0 - kPriorClampEps) {
            p = std::clamp(p, kPriorClampEps, 1.0 - kPriorClampEps);
            clamped = true;
        }
        double lik = (i == advised_index) ? advisor_accuracy
                                          : (1.0 - advisor_accuracy) / static_cast<double>(k - 1);
        post[i] = p * lik;
        total += post[i];
    }
    if (total <= 0.0) throw std::domain_error("posterior normalization collapsed to zero");
    for (double& p : post) p /= total;
    if (prior_clamped) *prior_clamped = clamped;
    return post;
}

// Scalar form: posterior confidence in the initially chosen option given
// its prior confidence. The remaining prior mass is assumed uniform over
// the other K-1 options, which is exact for binary questions.
inline double bayes_posterior(double prior, Advice direction, double advisor_accuracy,
                              size_t n_options = 2, bool* prior_clamped = nullptr) {
    if (direction == Advice::Neutral) {
        if (prior_clamped) *prior_clamped = false;
        return prior;
    }
    std::vector<double> prior_vec(n_options, (1.0 - prior) / static_cast<double>(n_options - 1));
    prior_vec[0] = prior;
    // Option 0 is the chosen one; for opposing advice any other index is
    // equivalent under the uniform prior remainder.
    size_t advised = direction == Advice::Same ? 0 : 1;
    auto post = bayes_posterior_vector(prior_vec, advised, advisor_accuracy, prior_clamped);
    return post[0];
}

struct OUCSBin {
    double ideal_bin_center = 0.0;
    double mean_ideal = 0.0;
    double mean_observed = 0.0;
    size_t count = 0;
};

struct OUCSReport {
    std::vector<OUCSBin> bins;
    double score = 0.0;
    double bin_width = 0.05;
};

struct ObsIdealPair {
    double ideal = 0.0;
    double observed = 0.0;
};

// Signed, trial-weighted gap between observed final confidence and the
// ideal posterior, binned by the ideal posterior. Positive = overconfident
// relative to the ideal observer.
inline OUCSReport oucs(const std::vector<ObsIdealPair>& trials, double bin_width = 0.05) {
    if (trials.empty()) throw std::invalid_argument("OUCS needs at least one trial");
    if (bin_width <= 0.0 || bin_width > 1.0) throw std::invalid_argument("bad bin width");
    auto n_bins = static_cast<size_t>(std::ceil(1.0 / bin_width));
    std::vector<double> ideal_sum(n_bins, 0.0), obs_sum(n_bins, 0.0);
    std::vector<size_t> counts(n_bins, 0);
    for (const auto& t : trials) {
        if (t.ideal < 0.0 || t.ideal > 1.0 || t.observed < 0.0 || t.observed > 1.0)
            throw std::invalid_argument("OUCS inputs must lie in [0,1]");
        auto b = static_cast<size_t>(
            std::clamp(static_cast<long>(t.ideal / bin_width), 0L, static_cast<long>(n_bins) - 1));
        ideal_sum[b] += t.ideal;
        obs_sum[b] += t.observed;
        ++counts[b];
    }
    OUCSReport report;
    report.bin_width = bin_width;
    double n = static_cast<double>(trials.size());
    for (size_t b = 0; b < n_bins; ++b) {
        if (counts[b] == 0) continue;
        OUCSBin bin;
        bin.ideal_bin_center = bin_width * (static_cast<double>(b) + 0.5);
        bin.mean_ideal = ideal_sum[b] / static_cast<double>(counts[b]);
        bin.mean_observed = obs_sum[b] / static_cast<double>(counts[b]);
        bin.count = counts[b];
        report.score +=
            (static_cast<double>(counts[b]) / n) * (bin.mean_observed - bin.mean_ideal);
        report.bins.push_back(bin);
    }
    return report;
}

struct UpdatePair {
    double observed_update = 0.0;  // final - initial confidence in the initially chosen option
    double bayes_update = 0.0;     // ideal posterior - prior for the same option
};

struct RatioReport {
    std::vector<double> per_trial;
    double median_ratio = 0.0;
    double mean_ratio = 0.0;
    size_t n_used = 0;
    size_t n_excluded = 0;  // trials with a zero Bayesian update (chance-level advisors)
};

inline constexpr double kZeroUpdateEps = 1e-12;

inline RatioReport overweighting_ratio(const std::vector<UpdatePair>& trials) {
    RatioReport report;
    for (const auto& t : trials) {
        if (std::abs(t.bayes_update) < kZeroUpdateEps) {
            ++report.n_excluded;
            continue;
        }
        report.per_trial.push_back(t.observed_update / t.bayes_update);
    }
    if (report.per_trial.empty())
        throw std::domain_error("overweighting ratio: every trial had a zero Bayesian update");
    report.n_used = report.per_trial.size();
    report.median_ratio = median(report.per_trial);
    report.mean_ratio = mean(report.per_trial);
    return report;
}

// Shown-condition correction: subtract the mean confidence rise that the
// mere visibility of one's own answer produces (Neutral/Shown minus
// Neutral/Hidden) from each observed update before taking the ratio.
inline RatioReport corrected_overweighting_ratio(const std::vector<UpdatePair>& opposite_shown,
                                                 const std::vector<double>& neutral_shown_updates,
                                                 const std::vector<double>& neutral_hidden_updates) {
    if (neutral_shown_updates.empty() || neutral_hidden_updates.empty())
        throw std::invalid_argument("correction needs both Neutral condition sets");
    double correction = mean(neutral_shown_updates) - mean(neutral_hidden_updates);
    RatioReport report;
    for (const auto& t : opposite_shown) {
        if (std::abs(t.bayes_update) < kZeroUpdateEps) {
            ++report.n_excluded;
            continue;
        }
        report.per_trial.push_back((t.observed_update - correction) / t.bayes_update);
    }
    if (report.per_trial.empty())
        throw std::domain_error("corrected ratio: every trial had a zero Bayesian update");
    report.n_used = report.per_trial.size();
    report.median_ratio = median(report.per_trial);
    report.mean_ratio = mean(report.per_trial);
    return report;
}

}  // namespace twoturn
