#pragma once

// Temperature scaling of raw logits into confidence vectors, plus the
// calibration metrics used throughout: ECE over equal-width bins spanning
// [chance, 1], Brier score, and rank-based AUROC with tie correction.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "twoturn/numeric.hpp"
#include "twoturn/types.hpp"

namespace twoturn {

inline ConfidenceVector softmax_with_temperature(const std::vector<double>& logits, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("temperature must be positive");
    if (logits.size() < 2) throw std::invalid_argument("need at least two logits");
    double mx = *std::max_element(logits.begin(), logits.end());
    if (!std::isfinite(mx)) throw std::invalid_argument("logits must be finite");
    ConfidenceVector cv;
    cv.probs.resize(logits.size());
    double total = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        cv.probs[i] = std::exp((logits[i] - mx) / tau);
        total += cv.probs[i];
    }
    for (double& p : cv.probs) p /= total;
    return cv;
}

struct CalibrationBin {
    double bin_lo = 0.0;
    double bin_hi = 0.0;
    double mean_conf = 0.0;
    double accuracy = 0.0;
    size_t count = 0;
};

struct CalibrationResult {
    double tau_star = 1.0;
    double ece = 0.0;
    double brier = 0.0;
    double auroc = 0.0;
    std::vector<CalibrationBin> bins;
};

// AUROC of confidence as a score for correctness, computed from average
// ranks so ties contribute 1/2. Returns NaN when only one class is present.
inline double rank_auroc(const std::vector<double>& confidences,
                         const std::vector<bool>& outcomes) {
    size_t n_pos = 0;
    for (bool o : outcomes) n_pos += o ? 1 : 0;
    size_t n_neg = outcomes.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> ranks = average_ranks(confidences);
    double rank_sum_pos = 0.0;
    for (size_t i = 0; i < outcomes.size(); ++i)
        if (outcomes[i]) rank_sum_pos += ranks[i];
    double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ECE, Brier, AUROC and reliability-diagram bins for chosen-option
// confidences paired with correctness outcomes. Bins are equal-width over
// [chance, 1]; a chosen-option confidence is always >= chance.
inline CalibrationResult calibration_metrics(const std::vector<double>& confidences,
                                             const std::vector<bool>& outcomes, size_t n_bins,
                                             double chance) {
    if (confidences.empty() || confidences.size() != outcomes.size())
        throw std::invalid_argument("calibration needs equal-length nonempty inputs");
    if (n_bins == 0) throw std::invalid_argument("need at least one bin");

    CalibrationResult res;
    double width = (1.0 - chance) / static_cast<double>(n_bins);
    std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
    std::vector<size_t> counts(n_bins, 0);
    double brier = 0.0;
    for (size_t i = 0; i < confidences.size(); ++i) {
        double c = confidences[i];
        auto b = static_cast<size_t>(std::clamp(
            static_cast<long>((c - chance) / width), 0L, static_cast<long>(n_bins) - 1));
        conf_sum[b] += c;
        acc_sum[b] += outcomes[i] ? 1.0 : 0.0;
        ++counts[b];
        double err = c - (outcomes[i] ? 1.0 : 0.0);
        brier += err * err;
    }
    double n = static_cast<double>(confidences.size());
    res.brier = brier / n;
    res.ece = 0.0;
    for (size_t b = 0; b < n_bins; ++b) {
        CalibrationBin bin;
        bin.bin_lo = chance + width * static_cast<double>(b);
        bin.bin_hi = bin.bin_lo + width;
        bin.count = counts[b];
        if (counts[b] > 0) {
            bin.mean_conf = conf_sum[b] / static_cast<double>(counts[b]);
            bin.accuracy = acc_sum[b] / static_cast<double>(counts[b]);
            res.ece += (static_cast<double>(counts[b]) / n) *
                       std::abs(bin.mean_conf - bin.accuracy);
        }
        res.bins.push_back(bin);
    }
    res.auroc = rank_auroc(confidences, outcomes);
    return res;
}

struct TemperatureGrid {
    double lo = 0.5;
    double hi = 10.0;
    double step = 0.05;
};

inline std::vector<double> chosen_option_confidences(
    const std::vector<std::vector<double>>& logit_sets, double tau) {
    std::vector<double> out;
    out.reserve(logit_sets.size());
    for (const auto& logits : logit_sets) {
        ConfidenceVector cv = softmax_with_temperature(logits, tau);
        out.push_back(*std::max_element(cv.probs.begin(), cv.probs.end()));
    }
    return out;
}

// Grid search for the temperature minimizing ECE of the chosen-option
// confidence; ECE is piecewise-constant in tau, so a grid beats gradients.
// Ties resolve toward the smallest tau.
inline double fit_temperature(const std::vector<std::vector<double>>& logit_sets,
                              const std::vector<bool>& outcomes,
                              TemperatureGrid grid = {}, size_t n_bins = 10,
                              double chance = 0.5) {
    if (grid.lo <= 0.0) throw std::invalid_argument("temperature grid must start above 0");
    if (logit_sets.empty() || logit_sets.size() != outcomes.size())
        throw std::invalid_argument("temperature fit needs equal-length nonempty inputs");
    double best_tau = grid.lo;
    double best_ece = std::numeric_limits<double>::infinity();
    for (int i = 0;; ++i) {
        double tau = grid.lo + grid.step * i;
        if (tau > grid.hi + 1e-12) break;
        auto confs = chosen_option_confidences(logit_sets, tau);
        CalibrationResult m = calibration_metrics(confs, outcomes, n_bins, chance);
        if (m.ece < best_ece - 1e-15) {
            best_ece = m.ece;
            best_tau = tau;
        }
    }
    return best_tau;
}

// Full calibration pass: fit tau on the grid, then evaluate all metrics at
// the fitted temperature.
inline CalibrationResult calibrate(const std::vector<std::vector<double>>& logit_sets,
                                   const std::vector<bool>& outcomes,
                                   TemperatureGrid grid = {}, size_t n_bins = 10,
                                   double chance = 0.5) {
    double tau = fit_temperature(logit_sets, outcomes, grid, n_bins, chance);
    auto confs = chosen_option_confidences(logit_sets, tau);
    CalibrationResult res = calibration_metrics(confs, outcomes, n_bins, chance);
    res.tau_star = tau;
    return res;
}

}  // namespace twoturn
