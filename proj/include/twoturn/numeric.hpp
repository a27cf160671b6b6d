#pragma once

// Small numeric utilities shared across the library: stable log-space helpers,
// order statistics, rank assignment, string formatting, seeded hashing, and a
// bounded Nelder-Mead minimizer used by the sigmoid and behavioral-model fits.

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace twoturn {

inline double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) {
    return std::log(p / (1.0 - p));
}

inline double logsumexp(const std::vector<double>& xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

inline double mean(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean of empty vector");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double variance(const std::vector<double>& xs) {
    // Unbiased sample variance.
    if (xs.size() < 2) return 0.0;
    double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

inline double quantile(std::vector<double> xs, double q) {
    // Linear interpolation between order statistics.
    if (xs.empty()) throw std::invalid_argument("quantile of empty vector");
    std::sort(xs.begin(), xs.end());
    double pos = q * static_cast<double>(xs.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(pos));
    size_t hi = static_cast<size_t>(std::ceil(pos));
    double frac = pos - static_cast<double>(lo);
    return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

inline double median(std::vector<double> xs) {
    return quantile(std::move(xs), 0.5);
}

// Ranks 1..n with ties assigned the average rank, as used by the rank-based
// AUROC and the Wilcoxon signed-rank test.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
    size_t n = xs.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

// printf-style formatting into std::string (libstdc++ 11 lacks <format>).
inline std::string strfmt(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    va_list copy;
    va_copy(copy, args);
    int n = std::vsnprintf(nullptr, 0, fmt, copy);
    va_end(copy);
    std::string out(static_cast<size_t>(n), '\0');
    std::vsnprintf(out.data(), out.size() + 1, fmt, args);
    va_end(args);
    return out;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 14695981039346656037ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Deterministic per-trial stream: every (seed, question, condition) triple gets
// an independent generator so trial order and parallelism never change results.
inline std::mt19937_64 trial_rng(uint64_t seed, const std::string& question_id,
                                 const std::string& condition_key) {
    uint64_t h = fnv1a64(condition_key, fnv1a64(question_id, fnv1a64(std::to_string(seed))));
    return std::mt19937_64(h);
}

struct NelderMeadResult {
    std::vector<double> x;
    double fmin = 0.0;
    size_t iterations = 0;
    bool converged = false;
};

// Derivative-free simplex minimizer. Good enough for the low-dimensional
// problems here (<= 14 parameters); callers run it from multiple starts.
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> x0, double initial_step = 0.5,
                                    size_t max_iter = 4000, double ftol = 1e-10) {
    const double alpha = 1.0, gamma = 2.0, rho = 0.5, shrink = 0.5;
    size_t n = x0.size();
    std::vector<std::vector<double>> pts(n + 1, x0);
    for (size_t i = 0; i < n; ++i) pts[i + 1][i] += initial_step;
    std::vector<double> fv(n + 1);
    for (size_t i = 0; i <= n; ++i) fv[i] = f(pts[i]);

    NelderMeadResult res;
    for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
        std::vector<size_t> idx(n + 1);
        std::iota(idx.begin(), idx.end(), size_t{0});
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return fv[a] < fv[b]; });
        if (std::abs(fv[idx[n]] - fv[idx[0]]) < ftol * (std::abs(fv[idx[0]]) + ftol)) {
            res.converged = true;
            break;
        }
        std::vector<double> centroid(n, 0.0);
        for (size_t k = 0; k < n; ++k)
            for (size_t d = 0; d < n; ++d) centroid[d] += pts[idx[k]][d] / static_cast<double>(n);

        auto blend = [&](double t) {
            std::vector<double> p(n);
            for (size_t d = 0; d < n; ++d) p[d] = centroid[d] + t * (centroid[d] - pts[idx[n]][d]);
            return p;
        };
        std::vector<double> xr = blend(alpha);
        double fr = f(xr);
        if (fr < fv[idx[0]]) {
            std::vector<double> xe = blend(gamma);
            double fe = f(xe);
            if (fe < fr) {
                pts[idx[n]] = xe;
                fv[idx[n]] = fe;
            } else {
                pts[idx[n]] = xr;
                fv[idx[n]] = fr;
            }
        } else if (fr < fv[idx[n - 1]]) {
            pts[idx[n]] = xr;
            fv[idx[n]] = fr;
        } else {
            std::vector<double> xc = blend(-rho);
            double fc = f(xc);
            if (fc < fv[idx[n]]) {
                pts[idx[n]] = xc;
                fv[idx[n]] = fc;
            } else {
                for (size_t k = 1; k <= n; ++k) {
                    for (size_t d = 0; d < n; ++d)
                        pts[idx[k]][d] = pts[idx[0]][d] + shrink * (pts[idx[k]][d] - pts[idx[0]][d]);
                    fv[idx[k]] = f(pts[idx[k]]);
                }
            }
        }
    }
    size_t best = 0;
    for (size_t i = 1; i <= n; ++i)
        if (fv[i] < fv[best]) best = i;
    res.x = pts[best];
    res.fmin = fv[best];
    return res;
}

}  // namespace twoturn
