#pragma once

// Frequentist machinery: OLS and logistic (IRLS) regressions, the two-stage
// display-adjusted condition weights, constrained sigmoid fits with baseline
// model comparison, permutation tests, the Wilcoxon signed-rank test, and
// change-of-mind summaries.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "twoturn/numeric.hpp"
#include "twoturn/types.hpp"

namespace twoturn {

struct RegressionResult {
    std::vector<std::string> names;
    std::vector<double> coefficients;
    std::vector<double> std_errors;
    std::vector<double> p_values;
    double r_squared = std::numeric_limits<double>::quiet_NaN();  // linear fits
    double deviance = std::numeric_limits<double>::quiet_NaN();   // logistic fits
    size_t n = 0;
    bool converged = true;
    bool separation_flag = false;  // logistic: complete/quasi-complete separation

    double coefficient(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return coefficients[i];
        throw std::invalid_argument("no coefficient named " + name);
    }
    double p_value(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return p_values[i];
        throw std::invalid_argument("no coefficient named " + name);
    }
};

namespace detail {

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(x.cols()) = x;
    return out;
}

inline void check_full_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() == x.cols()) return;
    // Sweep columns in caller order and blame each one that adds nothing
    // beyond the columns before it; that points at the redundant regressor
    // rather than an arbitrary member of the dependent set.
    std::string bad;
    Eigen::Index kept = 0;
    Eigen::MatrixXd basis(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        Eigen::VectorXd col = x.col(j);
        double residual = col.norm();
        if (kept > 0) {
            Eigen::VectorXd fitted =
                basis.leftCols(kept) *
                basis.leftCols(kept).colPivHouseholderQr().solve(col);
            residual = (col - fitted).norm();
        }
        if (residual <= 1e-8 * std::max(1.0, col.norm())) {
            if (!bad.empty()) bad += ", ";
            bad += names[static_cast<size_t>(j)];
        } else {
            basis.col(kept++) = col;
        }
    }
    if (bad.empty()) bad = "(unidentified near-collinearity)";
    throw std::invalid_argument("design matrix is rank deficient; collinear columns: " + bad);
}

}  // namespace detail

// Ordinary least squares with t-based p-values. Column names must match the
// design matrix; the intercept column is added (and named) here if asked.
inline RegressionResult ols(const std::vector<double>& y_in, const Eigen::MatrixXd& x_in,
                            std::vector<std::string> names, bool include_intercept) {
    Eigen::MatrixXd x = include_intercept ? detail::with_intercept(x_in) : x_in;
    if (include_intercept) names.insert(names.begin(), "(intercept)");
    if (static_cast<size_t>(x.cols()) != names.size())
        throw std::invalid_argument("design matrix / name count mismatch");
    auto n = static_cast<Eigen::Index>(y_in.size());
    if (n != x.rows()) throw std::invalid_argument("y length / design row mismatch");
    if (n < x.cols()) throw std::invalid_argument("fewer rows than coefficients");
    detail::check_full_rank(x, names);

    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(y_in.data(), n);
    Eigen::VectorXd beta = x.colPivHouseholderQr().solve(y);
    Eigen::VectorXd resid = y - x * beta;
    double rss = resid.squaredNorm();
    double dof = static_cast<double>(n - x.cols());

    RegressionResult res;
    res.names = std::move(names);
    res.n = static_cast<size_t>(n);
    res.coefficients.assign(beta.data(), beta.data() + beta.size());

    double tss;
    if (include_intercept) {
        double ybar = y.mean();
        tss = (y.array() - ybar).square().sum();
    } else {
        tss = y.squaredNorm();
    }
    res.r_squared = tss > 0 ? 1.0 - rss / tss : 1.0;

    double sigma2 = dof > 0 ? rss / dof : 0.0;
    Eigen::MatrixXd xtx_inv = (x.transpose() * x).ldlt().solve(
        Eigen::MatrixXd::Identity(x.cols(), x.cols()));
    boost::math::students_t tdist(dof > 0 ? dof : 1.0);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        double se = std::sqrt(std::max(0.0, sigma2 * xtx_inv(j, j)));
        res.std_errors.push_back(se);
        if (se > 0 && dof > 0) {
            double t = beta[j] / se;
            res.p_values.push_back(2.0 * boost::math::cdf(tdist, -std::abs(t)));
        } else {
            res.p_values.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    return res;
}

// Logistic regression by iteratively reweighted least squares, with Wald
// p-values. Separation shows up as runaway linear predictors and is flagged
// rather than left to diverge silently.
inline RegressionResult logistic_fit(const std::vector<bool>& y_in, const Eigen::MatrixXd& x_in,
                                     std::vector<std::string> names,
                                     bool include_intercept = true) {
    Eigen::MatrixXd x = include_intercept ? detail::with_intercept(x_in) : x_in;
    if (include_intercept) names.insert(names.begin(), "(intercept)");
    if (static_cast<size_t>(x.cols()) != names.size())
        throw std::invalid_argument("design matrix / name count mismatch");
    auto n = static_cast<Eigen::Index>(y_in.size());
    if (n != x.rows()) throw std::invalid_argument("y length / design row mismatch");
    detail::check_full_rank(x, names);

    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = y_in[static_cast<size_t>(i)] ? 1.0 : 0.0;

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
    RegressionResult res;
    res.names = std::move(names);
    res.n = static_cast<size_t>(n);
    res.converged = false;

    Eigen::VectorXd eta, mu, w;
    for (int iter = 0; iter < 100; ++iter) {
        eta = x * beta;
        mu = eta.unaryExpr([](double v) { return sigmoid(v); });
        w = (mu.array() * (1.0 - mu.array())).cwiseMax(1e-10);
        Eigen::VectorXd z = eta.array() + (y - mu).array() / w.array();
        Eigen::MatrixXd xw = x.array().colwise() * w.array().sqrt();
        Eigen::VectorXd zw = z.array() * w.array().sqrt();
        Eigen::VectorXd beta_new = xw.colPivHouseholderQr().solve(zw);
        double step = (beta_new - beta).cwiseAbs().maxCoeff();
        beta = beta_new;
        if ((x * beta).cwiseAbs().maxCoeff() > 30.0) {
            res.separation_flag = true;
            break;
        }
        if (step < 1e-8) {
            res.converged = true;
            break;
        }
    }

    eta = x * beta;
    mu = eta.unaryExpr([](double v) { return sigmoid(v); });
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double p = std::clamp(mu[i], 1e-12, 1.0 - 1e-12);
        dev -= 2.0 * (y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
    }
    res.deviance = dev;
    res.coefficients.assign(beta.data(), beta.data() + beta.size());

    w = (mu.array() * (1.0 - mu.array())).cwiseMax(1e-10);
    Eigen::MatrixXd info = x.transpose() * (x.array().colwise() * w.array()).matrix();
    Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(x.cols(), x.cols()));
    boost::math::normal norm;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        double se = std::sqrt(std::max(0.0, cov(j, j)));
        res.std_errors.push_back(se);
        res.p_values.push_back(se > 0
                                   ? 2.0 * boost::math::cdf(norm, -std::abs(beta[j] / se))
                                   : std::numeric_limits<double>::quiet_NaN());
    }
    return res;
}

struct TwoStageRow {
    double dconf = 0.0;  // final - initial confidence in the initially chosen option
    Display display = Display::Hidden;
    Advice advice = Advice::Neutral;
};

struct TwoStageResult {
    double stage1_display_coeff = 0.0;          // confidence rise attributable to Shown
    std::map<std::string, double> cell_weights; // stage-2 raw cell means (no intercept)
    std::map<std::string, double> display_adjusted_weights;
    RegressionResult stage1;
    RegressionResult stage2;
};

inline std::string cell_name(Display d, Advice a) {
    return std::string(to_string(d)) + "|" + to_string(a);
}

// Stage 1 regresses the confidence change on the Shown indicator; stage 2
// is the no-intercept regression on all six display-by-advice dummies, whose
// weights are the raw cell means. The display-adjusted weights subtract the
// stage-1 display coefficient from the Shown cells.
inline TwoStageResult two_stage_weights(const std::vector<TwoStageRow>& rows) {
    const Display displays[] = {Display::Hidden, Display::Shown};
    const Advice advices[] = {Advice::Same, Advice::Opposite, Advice::Neutral};
    std::map<std::string, size_t> cell_counts;
    for (const auto& r : rows) ++cell_counts[cell_name(r.display, r.advice)];
    std::string missing;
    for (Display d : displays)
        for (Advice a : advices)
            if (!cell_counts.count(cell_name(d, a))) {
                if (!missing.empty()) missing += ", ";
                missing += cell_name(d, a);
            }
    if (!missing.empty())
        throw std::runtime_error("two-stage analysis missing cells: " + missing);

    auto n = static_cast<Eigen::Index>(rows.size());
    std::vector<double> y(rows.size());
    Eigen::MatrixXd shown(n, 1);
    Eigen::MatrixXd dummies = Eigen::MatrixXd::Zero(n, 6);
    std::vector<std::string> dummy_names;
    std::map<std::string, Eigen::Index> col_of;
    for (Display d : displays)
        for (Advice a : advices) {
            col_of[cell_name(d, a)] = static_cast<Eigen::Index>(dummy_names.size());
            dummy_names.push_back(cell_name(d, a));
        }
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<size_t>(i)];
        y[static_cast<size_t>(i)] = r.dconf;
        shown(i, 0) = r.display == Display::Shown ? 1.0 : 0.0;
        dummies(i, col_of[cell_name(r.display, r.advice)]) = 1.0;
    }

    TwoStageResult res;
    res.stage1 = ols(y, shown, {"shown"}, true);
    res.stage1_display_coeff = res.stage1.coefficient("shown");
    res.stage2 = ols(y, dummies, dummy_names, false);
    for (size_t j = 0; j < dummy_names.size(); ++j) {
        double w = res.stage2.coefficients[j];
        res.cell_weights[dummy_names[j]] = w;
        bool is_shown = dummy_names[j].rfind("shown|", 0) == 0;
        res.display_adjusted_weights[dummy_names[j]] =
            is_shown ? w - res.stage1_display_coeff : w;
    }
    return res;
}

struct SigmoidBin {
    double x = 0.0;     // mean confidence in the bin
    double rate = 0.0;  // change-of-mind rate
    size_t n = 0;
};

struct SigmoidFit {
    double a = 1.0;
    double b = 0.0;
    double c = 0.0;
    double r_squared = 0.0;
    std::map<std::string, double> comparison;  // family -> weighted R^2
    double half_rate_confidence = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
};

namespace detail {

inline double weighted_r2(const std::vector<SigmoidBin>& bins, double sse) {
    double wsum = 0.0, ysum = 0.0;
    for (const auto& b : bins) {
        wsum += static_cast<double>(b.n);
        ysum += static_cast<double>(b.n) * b.rate;
    }
    double ybar = ysum / wsum;
    double tss = 0.0;
    for (const auto& b : bins) tss += static_cast<double>(b.n) * (b.rate - ybar) * (b.rate - ybar);
    if (tss <= 0.0) return sse <= 1e-12 ? 1.0 : 0.0;
    return 1.0 - sse / tss;
}

template <typename Pred>
double weighted_sse(const std::vector<SigmoidBin>& bins, Pred&& pred) {
    double sse = 0.0;
    for (const auto& b : bins) {
        double e = b.rate - pred(b.x);
        sse += static_cast<double>(b.n) * e * e;
    }
    return sse;
}

// Weighted polynomial least squares used for the linear/quadratic baselines.
inline double poly_baseline_sse(const std::vector<SigmoidBin>& bins, int degree) {
    auto n = static_cast<Eigen::Index>(bins.size());
    Eigen::MatrixXd x(n, degree + 1);
    Eigen::VectorXd y(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = bins[static_cast<size_t>(i)];
        double v = 1.0;
        for (int d = 0; d <= degree; ++d) {
            x(i, d) = v;
            v *= b.x;
        }
        y[i] = b.rate;
        w[i] = std::sqrt(static_cast<double>(b.n));
    }
    Eigen::MatrixXd xw = x.array().colwise() * w.array();
    Eigen::VectorXd yw = y.array() * w.array();
    Eigen::VectorXd beta = xw.colPivHouseholderQr().solve(yw);
    return (yw - xw * beta).squaredNorm();
}

}  // namespace detail

// Fits P(x) = a / (1 + exp(-b(x - c))) to binned change-of-mind rates by
// weighted nonlinear least squares with bounded parameters (a in (0,1] via a
// logistic transform, |b| <= 100 via tanh), multi-started from 16 points.
// Baseline families (linear, quadratic, exponential, plain logistic) are fit
// on the same bins and reported as weighted R^2 for model comparison.
inline SigmoidFit fit_constrained_sigmoid(const std::vector<SigmoidBin>& bins) {
    if (bins.size() < 4) throw std::invalid_argument("sigmoid fit needs at least 4 bins");
    for (const auto& b : bins)
        if (b.n == 0) throw std::invalid_argument("sigmoid fit: empty bin");

    std::vector<double> xs;
    for (const auto& b : bins) xs.push_back(b.x);
    std::sort(xs.begin(), xs.end());
    double q1 = quantile(xs, 0.25), q3 = quantile(xs, 0.75);

    auto unpack = [](const std::vector<double>& p) {
        double a = sigmoid(p[0]);
        double b = 100.0 * std::tanh(p[1] / 100.0);
        return std::array<double, 3>{a, b, p[2]};
    };
    auto objective = [&](const std::vector<double>& p) {
        auto [a, b, c] = unpack(p);
        return detail::weighted_sse(bins,
                                    [&](double x) { return a * sigmoid(b * (x - c)); });
    };

    std::vector<double> best;
    double best_sse = std::numeric_limits<double>::infinity();
    bool any_converged = false;
    for (double a0 : {0.5, 0.999}) {
        for (double b0 : {-5.0, -15.0, -30.0, 15.0}) {
            for (double c0 : {q1, q3}) {
                std::vector<double> start = {logit(a0), 100.0 * std::atanh(b0 / 100.0), c0};
                auto r = nelder_mead(objective, start, 0.5, 2000, 1e-12);
                any_converged = any_converged || r.converged;
                if (r.fmin < best_sse) {
                    best_sse = r.fmin;
                    best = r.x;
                }
            }
        }
    }
    if (!any_converged)
        throw std::runtime_error(
            strfmt("sigmoid fit failed to converge from any start; best residual %.6g", best_sse));

    SigmoidFit fit;
    auto [a, b, c] = unpack(best);
    fit.a = a;
    fit.b = b;
    fit.c = c;
    fit.converged = true;
    fit.r_squared = detail::weighted_r2(bins, best_sse);
    fit.comparison["sigmoid_constrained"] = fit.r_squared;
    if (fit.a > 0.5) fit.half_rate_confidence = fit.c - std::log(2.0 * fit.a - 1.0) / fit.b;

    fit.comparison["linear"] = detail::weighted_r2(bins, detail::poly_baseline_sse(bins, 1));
    fit.comparison["quadratic"] = detail::weighted_r2(bins, detail::poly_baseline_sse(bins, 2));

    // Exponential baseline a*exp(b(x-c)) clipped to [0,1], with c pinned at
    // the median x so the two free parameters are identifiable.
    double c_exp = quantile(xs, 0.5);
    auto exp_obj = [&](const std::vector<double>& p) {
        double ea = std::exp(p[0]), eb = p[1];
        return detail::weighted_sse(bins, [&](double x) {
            return std::clamp(ea * std::exp(eb * (x - c_exp)), 0.0, 1.0);
        });
    };
    double exp_sse = std::numeric_limits<double>::infinity();
    for (double b0 : {-15.0, -5.0, 5.0, 15.0}) {
        auto r = nelder_mead(exp_obj, {std::log(0.5), b0}, 0.5, 2000, 1e-12);
        exp_sse = std::min(exp_sse, r.fmin);
    }
    fit.comparison["exponential"] = detail::weighted_r2(bins, exp_sse);

    auto logi_obj = [&](const std::vector<double>& p) {
        double lb = 100.0 * std::tanh(p[0] / 100.0);
        return detail::weighted_sse(bins, [&](double x) { return sigmoid(lb * (x - p[1])); });
    };
    double logi_sse = std::numeric_limits<double>::infinity();
    for (double b0 : {-5.0, -15.0, -30.0, 15.0})
        for (double c0 : {q1, q3}) {
            auto r = nelder_mead(logi_obj, {100.0 * std::atanh(b0 / 100.0), c0}, 0.5, 2000, 1e-12);
            logi_sse = std::min(logi_sse, r.fmin);
        }
    fit.comparison["logistic"] = detail::weighted_r2(bins, logi_sse);
    return fit;
}

// Bins (confidence, outcome) pairs into 0.05-wide confidence bins; bins
// under the minimum count are merged into their right neighbor (the last
// bin folds left) so every emitted bin is well supported.
inline std::vector<SigmoidBin> com_bins(const std::vector<double>& confidences,
                                        const std::vector<bool>& outcomes, double width = 0.05,
                                        size_t min_count = 50) {
    if (confidences.size() != outcomes.size() || confidences.empty())
        throw std::invalid_argument("com_bins needs equal-length nonempty inputs");
    auto n_bins = static_cast<size_t>(std::ceil(1.0 / width));
    std::vector<double> xsum(n_bins, 0.0), ysum(n_bins, 0.0);
    std::vector<size_t> counts(n_bins, 0);
    for (size_t i = 0; i < confidences.size(); ++i) {
        auto b = static_cast<size_t>(std::clamp(static_cast<long>(confidences[i] / width), 0L,
                                                static_cast<long>(n_bins) - 1));
        xsum[b] += confidences[i];
        ysum[b] += outcomes[i] ? 1.0 : 0.0;
        ++counts[b];
    }
    std::vector<SigmoidBin> out;
    double cx = 0.0, cy = 0.0;
    size_t cn = 0;
    for (size_t b = 0; b < n_bins; ++b) {
        cx += xsum[b];
        cy += ysum[b];
        cn += counts[b];
        if (cn >= min_count) {
            out.push_back({cx / static_cast<double>(cn), cy / static_cast<double>(cn), cn});
            cx = cy = 0.0;
            cn = 0;
        }
    }
    if (cn > 0) {
        if (!out.empty()) {
            SigmoidBin& last = out.back();
            double total = static_cast<double>(last.n + cn);
            last.x = (last.x * static_cast<double>(last.n) + cx) / total;
            last.rate = (last.rate * static_cast<double>(last.n) + cy) / total;
            last.n += cn;
        } else {
            out.push_back({cx / static_cast<double>(cn), cy / static_cast<double>(cn), cn});
        }
    }
    return out;
}

// Two-sided permutation test on the difference of group means with the
// add-one correction, so identical groups give exactly p = 1.
inline double permutation_test(const std::vector<double>& group_a,
                               const std::vector<double>& group_b, size_t n_perm = 10000,
                               uint64_t seed = 12345) {
    if (group_a.empty() || group_b.empty())
        throw std::invalid_argument("permutation test needs non-empty groups");
    double observed = std::abs(mean(group_a) - mean(group_b));
    std::vector<double> pool = group_a;
    pool.insert(pool.end(), group_b.begin(), group_b.end());
    size_t na = group_a.size();
    std::mt19937_64 rng(seed);
    size_t hits = 0;
    std::vector<double> work = pool;
    for (size_t p = 0; p < n_perm; ++p) {
        std::shuffle(work.begin(), work.end(), rng);
        double sa = 0.0, sb = 0.0;
        for (size_t i = 0; i < work.size(); ++i)
            (i < na ? sa : sb) += work[i];
        double stat = std::abs(sa / static_cast<double>(na) -
                               sb / static_cast<double>(work.size() - na));
        if (stat >= observed - 1e-12) ++hits;
    }
    return static_cast<double>(1 + hits) / static_cast<double>(n_perm + 1);
}

struct WilcoxonResult {
    double statistic = 0.0;  // W+: rank sum of positive differences
    double p_value = 1.0;
    size_t n_used = 0;  // after dropping zero differences
    bool exact = false;
};

// Wilcoxon signed-rank test against a symmetric-around-zero null. Zero
// differences are dropped and tied |differences| share averaged ranks.
// n <= 25 uses exact enumeration over sign patterns (ranks doubled to keep
// the tally integral under ties); larger n uses the normal approximation
// with continuity and tie corrections.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& differences) {
    std::vector<double> d;
    for (double v : differences)
        if (v != 0.0) d.push_back(v);
    if (d.empty()) throw std::domain_error("wilcoxon: all differences are zero");

    size_t n = d.size();
    std::vector<double> absd(n);
    for (size_t i = 0; i < n; ++i) absd[i] = std::abs(d[i]);
    std::vector<double> ranks = average_ranks(absd);

    WilcoxonResult res;
    res.n_used = n;
    for (size_t i = 0; i < n; ++i)
        if (d[i] > 0) res.statistic += ranks[i];

    if (n <= 25) {
        res.exact = true;
        std::vector<long> r2(n);
        long total2 = 0;
        for (size_t i = 0; i < n; ++i) {
            r2[i] = std::lround(ranks[i] * 2.0);
            total2 += r2[i];
        }
        // Distribution of the doubled positive-rank sum over all 2^n sign
        // patterns, built as a polynomial product.
        std::vector<double> count(static_cast<size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        long reach = 0;
        for (size_t i = 0; i < n; ++i) {
            reach += r2[i];
            for (long s = reach; s >= r2[i]; --s)
                count[static_cast<size_t>(s)] += count[static_cast<size_t>(s - r2[i])];
        }
        double mu2 = static_cast<double>(total2) / 2.0;
        double dev = std::abs(res.statistic * 2.0 - mu2);
        double extreme = 0.0, all = 0.0;
        for (long s = 0; s <= total2; ++s) {
            all += count[static_cast<size_t>(s)];
            if (std::abs(static_cast<double>(s) - mu2) >= dev - 1e-9)
                extreme += count[static_cast<size_t>(s)];
        }
        res.p_value = extreme / all;
        return res;
    }

    double nn = static_cast<double>(n);
    double mu = nn * (nn + 1.0) / 4.0;
    double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    // Tie correction: each group of t tied ranks removes (t^3 - t)/48.
    std::vector<double> sorted = absd;
    std::sort(sorted.begin(), sorted.end());
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && sorted[j] == sorted[i]) ++j;
        double t = static_cast<double>(j - i);
        var -= (t * t * t - t) / 48.0;
        i = j;
    }
    double sd = std::sqrt(var);
    double diff = res.statistic - mu;
    double z = sd > 0 ? (diff - (diff > 0 ? 0.5 : diff < 0 ? -0.5 : 0.0)) / sd : 0.0;
    boost::math::normal norm;
    res.p_value = std::min(1.0, 2.0 * boost::math::cdf(norm, -std::abs(z)));
    return res;
}

struct ComCell {
    Display display = Display::Hidden;
    Advice advice = Advice::Neutral;
    double accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN when aggregated
    double com_rate = std::numeric_limits<double>::quiet_NaN();
    double change_initial_rate = std::numeric_limits<double>::quiet_NaN();
    size_t n = 0;
    double se = std::numeric_limits<double>::quiet_NaN();  // binomial SE of com_rate
};

// Change-of-mind (and change-of-initial-answer) rates per condition cell,
// over parse_ok records only. Cells from `expected` that have no records are
// reported with count 0 and NaN rates.
inline std::vector<ComCell> com_summary(const std::vector<TrialRecord>& records,
                                        bool by_accuracy,
                                        const std::vector<Condition>* expected = nullptr) {
    struct Agg {
        size_t n = 0;
        size_t com = 0;
        size_t cia = 0;
    };
    auto key_of = [&](Display d, Advice a, double acc) {
        return std::string(to_string(d)) + "|" + to_string(a) +
               (by_accuracy ? "|" + strfmt("%.4f", acc) : "");
    };
    std::map<std::string, Agg> aggs;
    std::map<std::string, ComCell> protos;
    auto touch = [&](Display d, Advice a, double acc) -> Agg& {
        std::string k = key_of(d, a, acc);
        if (!protos.count(k)) {
            ComCell cell;
            cell.display = d;
            cell.advice = a;
            if (by_accuracy) cell.accuracy = acc;
            protos[k] = cell;
        }
        return aggs[k];
    };
    if (expected)
        for (const auto& c : *expected) touch(c.display, c.advice, c.advice_accuracy);
    for (const auto& r : records) {
        if (!r.parse_ok) continue;
        Agg& a = touch(r.condition.display, r.condition.advice, r.condition.advice_accuracy);
        ++a.n;
        a.com += r.changed_mind ? 1 : 0;
        a.cia += r.changed_initial_answer ? 1 : 0;
    }
    std::vector<ComCell> out;
    for (auto& [k, cell] : protos) {
        const Agg& a = aggs[k];
        cell.n = a.n;
        if (a.n > 0) {
            cell.com_rate = static_cast<double>(a.com) / static_cast<double>(a.n);
            cell.change_initial_rate = static_cast<double>(a.cia) / static_cast<double>(a.n);
            cell.se = std::sqrt(cell.com_rate * (1.0 - cell.com_rate) /
                                static_cast<double>(a.n));
        }
        out.push_back(cell);
    }
    return out;
}

// Kolmogorov-Smirnov test of samples against Uniform(0,1); the p-value uses
// the asymptotic Kolmogorov distribution with the small-sample correction.
inline double ks_uniform_pvalue(std::vector<double> samples) {
    if (samples.empty()) throw std::invalid_argument("KS test needs samples");
    std::sort(samples.begin(), samples.end());
    double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        double lo = static_cast<double>(i) / n;
        double hi = static_cast<double>(i + 1) / n;
        d = std::max({d, std::abs(samples[i] - lo), std::abs(samples[i] - hi)});
    }
    double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k)
        p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    return std::clamp(p, 0.0, 1.0);
}

}  // namespace twoturn
