#pragma once

// Bayesian behavioral models A-D of turn-2 confidence and switching:
// beta-likelihood confidence targets and a Bernoulli switch target on a
// shared linear predictor, fit by multi-start MAP plus adaptive random-walk
// Metropolis, compared via truncated importance-sampling ELPD-LOO.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "twoturn/calibration.hpp"
#include "twoturn/numeric.hpp"
#include "twoturn/types.hpp"

namespace twoturn {

enum class AdviceDirectionKind { supportive, opposing, neutral };

// Maps the advisor's stated accuracy to influence strength in [0,1]:
// chance-level advice has no influence, perfect advice the maximum. Values
// outside [0,1] (an advisor encoded against its own direction) clamp to 0
// and are counted for the caller to surface.
inline double rescale_advice(double stated_accuracy, AdviceDirectionKind direction, double chance,
                             size_t* clamp_count = nullptr) {
    if (stated_accuracy < 0.0 || stated_accuracy > 1.0)
        throw std::invalid_argument("stated accuracy outside [0,1]");
    double v = 0.0;
    switch (direction) {
        case AdviceDirectionKind::supportive:
            v = (stated_accuracy - chance) / (1.0 - chance);
            break;
        case AdviceDirectionKind::opposing:
            v = (chance - stated_accuracy) / chance;
            break;
        case AdviceDirectionKind::neutral:
            return 0.0;
    }
    if (v < 0.0) {
        if (clamp_count) ++*clamp_count;
        return 0.0;
    }
    return v;
}

enum class BehavTarget { conf_initial_option, conf_final_option, switch_choice };

inline const char* to_string(BehavTarget t) {
    switch (t) {
        case BehavTarget::conf_initial_option: return "conf_initial_option";
        case BehavTarget::conf_final_option: return "conf_final_option";
        case BehavTarget::switch_choice: return "switch";
    }
    return "?";
}

inline BehavTarget behav_target_from_string(const std::string& s) {
    if (s == "conf_initial_option") return BehavTarget::conf_initial_option;
    if (s == "conf_final_option") return BehavTarget::conf_final_option;
    if (s == "switch") return BehavTarget::switch_choice;
    throw std::invalid_argument("unknown model target: " + s);
}

struct BehavRow {
    double prior = 0.5;            // turn-1 confidence in the reference option
    double advice_magnitude = 0.0; // rescaled advice strength in [0,1]
    int direction = 0;             // +1 supportive of the reference option, -1 opposing
    double shown = 0.0;            // 1 when the turn-1 answer was visible
    double y = 0.0;                // confidence in [0,1], or 0/1 for the switch target
};

// Builds model rows from trial records for one target. The reference option
// is the turn-1 choice (conf_initial_option, switch) or the option the agent
// ultimately picked (conf_final_option); prior and advice direction are
// taken with respect to that reference. Opposing advice passes the
// advice-implied accuracy of the reference option, (1-a)/(K-1), through the
// rescaling so stronger advisors oppose more strongly.
inline std::vector<BehavRow> featurize(const std::vector<TrialRecord>& records,
                                       BehavTarget target, double chance,
                                       size_t* clamp_count = nullptr) {
    std::vector<BehavRow> rows;
    for (const auto& r : records) {
        if (!r.parse_ok) continue;
        size_t k = r.turn1_confidence.probs.size();
        int ref = target == BehavTarget::conf_final_option ? r.turn2_choice : r.turn1_choice;
        BehavRow row;
        row.prior = r.turn1_confidence.probs.at(static_cast<size_t>(ref));
        row.shown = r.condition.display == Display::Hidden ? 0.0 : 1.0;
        if (r.condition.advice == Advice::Neutral) {
            row.direction = 0;
        } else {
            bool supports = r.advice.advised_index.has_value() && *r.advice.advised_index == ref;
            double a = r.advice.stated_accuracy;
            if (supports) {
                row.direction = 1;
                row.advice_magnitude =
                    rescale_advice(a, AdviceDirectionKind::supportive, chance, clamp_count);
            } else {
                row.direction = -1;
                double implied = (1.0 - a) / static_cast<double>(k - 1);
                row.advice_magnitude =
                    rescale_advice(implied, AdviceDirectionKind::opposing, chance, clamp_count);
            }
        }
        switch (target) {
            case BehavTarget::conf_initial_option:
                row.y = r.turn2_confidence.probs.at(static_cast<size_t>(ref));
                break;
            case BehavTarget::conf_final_option:
                row.y = r.turn2_confidence.probs.at(static_cast<size_t>(ref));
                break;
            case BehavTarget::switch_choice:
                row.y = r.changed_mind ? 1.0 : 0.0;
                break;
        }
        rows.push_back(row);
    }
    return rows;
}

enum class ModelName { A, B, C, D };

inline const char* to_string(ModelName m) {
    switch (m) {
        case ModelName::A: return "A";
        case ModelName::B: return "B";
        case ModelName::C: return "C";
        case ModelName::D: return "D";
    }
    return "?";
}

inline ModelName model_name_from_string(const std::string& s) {
    if (s == "A") return ModelName::A;
    if (s == "B") return ModelName::B;
    if (s == "C") return ModelName::C;
    if (s == "D") return ModelName::D;
    throw std::invalid_argument("unknown model: " + s);
}

struct ModelSpec {
    ModelName name = ModelName::D;
    std::vector<BehavTarget> targets = {BehavTarget::conf_initial_option,
                                        BehavTarget::conf_final_option,
                                        BehavTarget::switch_choice};
    bool joint = true;  // share prior/shown (and B/C advice) weights across targets
};

// Resolved parameter indices for one target. Unused terms stay -1.
struct TargetTerms {
    int intercept = -1;
    int prior = -1;
    int shown = -1;
    int adv_shared = -1;     // models B and C
    int adv_same = -1;       // model D, supportive advice
    int adv_opp = -1;        // model D, opposing advice (single weight)
    int adv_opp_hidden = -1; // model D, conf_initial_option splits opposing by display
    int adv_opp_shown = -1;
    int log_phi = -1;        // beta dispersion, confidence targets only
};

struct ParamLayout {
    std::vector<std::string> names;
    std::vector<TargetTerms> per_target;
    size_t size() const { return names.size(); }
};

inline ParamLayout build_layout(const ModelSpec& spec) {
    if (spec.targets.empty()) throw std::invalid_argument("model needs at least one target");
    ParamLayout layout;
    auto add = [&](const std::string& name) {
        layout.names.push_back(name);
        return static_cast<int>(layout.names.size() - 1);
    };
    bool has_advice = spec.name != ModelName::A;
    bool split_advice = spec.name == ModelName::D;
    bool has_shown = spec.name == ModelName::C || spec.name == ModelName::D;

    int shared_prior = -1, shared_shown = -1, shared_adv = -1;
    if (spec.joint) {
        shared_prior = add("b_prior");
        if (has_shown) shared_shown = add("b_shown");
        if (has_advice && !split_advice) shared_adv = add("b_advice");
    }
    for (BehavTarget t : spec.targets) {
        TargetTerms terms;
        std::string tag = to_string(t);
        terms.intercept = add("b0:" + tag);
        terms.prior = spec.joint ? shared_prior : add("b_prior:" + tag);
        if (has_shown) terms.shown = spec.joint ? shared_shown : add("b_shown:" + tag);
        if (has_advice && !split_advice)
            terms.adv_shared = spec.joint ? shared_adv : add("b_advice:" + tag);
        if (split_advice) {
            terms.adv_same = add("w_same:" + tag);
            if (t == BehavTarget::conf_initial_option) {
                terms.adv_opp_hidden = add("w_opp_hidden:" + tag);
                terms.adv_opp_shown = add("w_opp_shown:" + tag);
            } else {
                terms.adv_opp = add("w_opp:" + tag);
            }
        }
        if (t != BehavTarget::switch_choice) terms.log_phi = add("log_phi:" + tag);
        layout.per_target.push_back(terms);
    }
    return layout;
}

inline double linear_predictor(const TargetTerms& terms, const std::vector<double>& p,
                               const BehavRow& row) {
    double l = p[static_cast<size_t>(terms.intercept)] +
               p[static_cast<size_t>(terms.prior)] * row.prior;
    if (terms.shown >= 0) l += p[static_cast<size_t>(terms.shown)] * row.shown;
    if (row.direction != 0) {
        if (terms.adv_shared >= 0) {
            l += p[static_cast<size_t>(terms.adv_shared)] * row.direction * row.advice_magnitude;
        } else if (terms.adv_same >= 0) {
            if (row.direction > 0) {
                l += p[static_cast<size_t>(terms.adv_same)] * row.advice_magnitude;
            } else {
                int idx = terms.adv_opp >= 0
                              ? terms.adv_opp
                              : (row.shown > 0.5 ? terms.adv_opp_shown : terms.adv_opp_hidden);
                l -= p[static_cast<size_t>(idx)] * row.advice_magnitude;
            }
        }
    }
    return l;
}

inline constexpr double kConfClip = 1e-6;

inline double beta_loglik(double y, double mu, double phi) {
    double yc = std::clamp(y, kConfClip, 1.0 - kConfClip);
    double a = mu * phi, b = (1.0 - mu) * phi;
    return std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(yc) +
           (b - 1.0) * std::log1p(-yc);
}

// Joint log posterior over the unconstrained parameterization (dispersions
// enter as log_phi, with the change-of-variables term included). Data is one
// row vector per target, aligned with spec.targets.
inline double log_posterior(const ModelSpec& spec, const ParamLayout& layout,
                            const std::vector<double>& params,
                            const std::vector<std::vector<BehavRow>>& data) {
    if (params.size() != layout.size()) throw std::invalid_argument("parameter count mismatch");
    if (data.size() != spec.targets.size())
        throw std::invalid_argument("data target count mismatch");
    for (double v : params)
        if (!std::isfinite(v)) throw std::domain_error("non-finite parameter");

    static constexpr double kLogSqrt2Pi = 0.9189385332046727;
    double lp = 0.0;
    for (size_t i = 0; i < layout.size(); ++i) {
        if (layout.names[i].rfind("log_phi", 0) == 0) {
            double eta = params[i];
            lp += -std::exp(eta) + eta;  // Exponential(1) on phi, plus the Jacobian
        } else {
            lp += -kLogSqrt2Pi - 0.5 * params[i] * params[i];  // Normal(0,1)
        }
    }
    for (size_t t = 0; t < spec.targets.size(); ++t) {
        const TargetTerms& terms = layout.per_target[t];
        bool is_switch = spec.targets[t] == BehavTarget::switch_choice;
        double phi = is_switch ? 0.0 : std::exp(params[static_cast<size_t>(terms.log_phi)]);
        for (const BehavRow& row : data[t]) {
            double l = linear_predictor(terms, params, row);
            if (is_switch) {
                double ps = std::clamp(sigmoid(-l), 1e-12, 1.0 - 1e-12);
                lp += row.y > 0.5 ? std::log(ps) : std::log1p(-ps);
            } else {
                double mu = std::clamp(sigmoid(l), 1e-9, 1.0 - 1e-9);
                lp += beta_loglik(row.y, mu, phi);
            }
        }
    }
    return lp;
}

// Per-observation log-likelihood at one parameter point, target-major order.
inline void pointwise_loglik_row(const ModelSpec& spec, const ParamLayout& layout,
                                 const std::vector<double>& params,
                                 const std::vector<std::vector<BehavRow>>& data, double* out) {
    size_t j = 0;
    for (size_t t = 0; t < spec.targets.size(); ++t) {
        const TargetTerms& terms = layout.per_target[t];
        bool is_switch = spec.targets[t] == BehavTarget::switch_choice;
        double phi = is_switch ? 0.0 : std::exp(params[static_cast<size_t>(terms.log_phi)]);
        for (const BehavRow& row : data[t]) {
            double l = linear_predictor(terms, params, row);
            if (is_switch) {
                double ps = std::clamp(sigmoid(-l), 1e-12, 1.0 - 1e-12);
                out[j++] = row.y > 0.5 ? std::log(ps) : std::log1p(-ps);
            } else {
                double mu = std::clamp(sigmoid(l), 1e-9, 1.0 - 1e-9);
                out[j++] = beta_loglik(row.y, mu, phi);
            }
        }
    }
}

// Defaults are sized for the 14-parameter joint fit: a random-walk sampler
// needs draws proportional to dimension for its effective sample size to
// clear the gate below.
struct SamplerConfig {
    int n_chains = 4;
    int n_warmup = 4000;
    int n_draws = 16000;
    int map_starts = 8;
    int loglik_draws = 1000;  // total thinned draws retained for LOO
    uint64_t seed = 20240901;
    double target_accept = 0.23;
    double rhat_gate = 1.05;
    double ess_gate = 400.0;
};

struct ModelFit {
    ModelSpec spec;
    ParamLayout layout;
    std::vector<double> map_estimate;
    Eigen::MatrixXd draws;  // (n_chains * n_draws) x n_params, chain-major blocks
    int n_chains = 0;
    int n_draws_per_chain = 0;
    std::vector<double> rhat;
    std::vector<double> ess;
    double accept_rate = 0.0;
    bool diagnostics_ok = false;
    Eigen::MatrixXd pointwise_loglik;  // thinned draws x n_obs
    size_t n_obs = 0;

    double posterior_mean(const std::string& name) const {
        for (size_t i = 0; i < layout.names.size(); ++i)
            if (layout.names[i] == name) return draws.col(static_cast<Eigen::Index>(i)).mean();
        throw std::invalid_argument("no parameter named " + name);
    }
};

namespace detail {

struct ChainResult {
    Eigen::MatrixXd draws;
    Eigen::MatrixXd loglik;
    double accept_rate = 0.0;
};

// Cholesky factor of the Laplace covariance (inverse negative Hessian of
// the log posterior) at the MAP, via central finite differences. Ridged
// until positive definite; falls back to a scaled identity if curvature is
// unusable in every direction.
template <typename LogPost>
Eigen::MatrixXd laplace_proposal_chol(const LogPost& logpost, const std::vector<double>& map) {
    long d = static_cast<long>(map.size());
    std::vector<double> h(map.size());
    for (long i = 0; i < d; ++i)
        h[static_cast<size_t>(i)] = 1e-3 * std::max(1.0, std::abs(map[static_cast<size_t>(i)]));
    double f0 = logpost(map);
    Eigen::MatrixXd hess(d, d);
    for (long i = 0; i < d; ++i) {
        auto hi = h[static_cast<size_t>(i)];
        auto p = map;
        p[static_cast<size_t>(i)] += hi;
        double fp = logpost(p);
        p = map;
        p[static_cast<size_t>(i)] -= hi;
        double fm = logpost(p);
        hess(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
    }
    for (long i = 0; i < d; ++i)
        for (long j = i + 1; j < d; ++j) {
            auto hi = h[static_cast<size_t>(i)], hj = h[static_cast<size_t>(j)];
            auto p = map;
            p[static_cast<size_t>(i)] += hi;
            p[static_cast<size_t>(j)] += hj;
            double fpp = logpost(p);
            p = map;
            p[static_cast<size_t>(i)] += hi;
            p[static_cast<size_t>(j)] -= hj;
            double fpm = logpost(p);
            p = map;
            p[static_cast<size_t>(i)] -= hi;
            p[static_cast<size_t>(j)] += hj;
            double fmp = logpost(p);
            p = map;
            p[static_cast<size_t>(i)] -= hi;
            p[static_cast<size_t>(j)] -= hj;
            double fmm = logpost(p);
            hess(i, j) = hess(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
        }

    Eigen::MatrixXd neg = -hess;
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    double scale = std::max(neg.diagonal().cwiseAbs().maxCoeff(), 1e-12);
    for (double ridge = 0.0; ridge <= 10.0 * scale;
         ridge = ridge == 0.0 ? 1e-10 * scale : ridge * 10.0) {
        Eigen::LLT<Eigen::MatrixXd> llt(neg + ridge * eye);
        if (llt.info() != Eigen::Success) continue;
        Eigen::MatrixXd sigma = llt.solve(eye);
        sigma = 0.5 * (sigma + sigma.transpose()).eval();
        Eigen::LLT<Eigen::MatrixXd> slt(sigma);
        if (slt.info() == Eigen::Success) return slt.matrixL();
    }
    return eye * 0.1;
}

// One random-walk Metropolis chain. The proposal shape (a Cholesky factor
// of the Laplace covariance at the MAP) is fixed; warmup only steers the
// scalar step size toward the target acceptance rate, then freezes it.
// Estimating the shape from warmup samples was tried and rejected: the
// sample covariance underestimates the weakly identified coordinates, which
// then mix too slowly to ever correct the estimate.
template <typename LogPost, typename LoglikRow>
ChainResult run_chain(const LogPost& logpost, const LoglikRow& loglik_row,
                      const std::vector<double>& start, size_t n_obs, const SamplerConfig& cfg,
                      int loglik_keep, uint64_t chain_seed, const Eigen::MatrixXd& chol) {
    size_t d = start.size();
    std::mt19937_64 rng(chain_seed);
    std::normal_distribution<double> unit;

    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(start.data(), static_cast<long>(d));
    std::vector<double> xv = start;
    double lp = logpost(xv);

    double log_step = std::log(2.38 / std::sqrt(static_cast<double>(d)));

    ChainResult result;
    result.draws.resize(cfg.n_draws, static_cast<long>(d));
    result.loglik.resize(loglik_keep, static_cast<long>(n_obs));
    int loglik_stride = loglik_keep > 0 ? std::max(1, cfg.n_draws / loglik_keep) : cfg.n_draws + 1;

    long accepted = 0, post_proposals = 0;
    int kept_loglik = 0;
    int total = cfg.n_warmup + cfg.n_draws;
    Eigen::VectorXd z(static_cast<long>(d)), prop(static_cast<long>(d));
    std::vector<double> loglik_buf(n_obs);
    for (int iter = 0; iter < total; ++iter) {
        for (long i = 0; i < static_cast<long>(d); ++i) z[i] = unit(rng);
        prop = x + std::exp(log_step) * (chol * z);
        std::vector<double> pv(prop.data(), prop.data() + d);
        double lp_prop = logpost(pv);
        bool accept = std::log(std::uniform_real_distribution<double>(0.0, 1.0)(rng)) <
                      lp_prop - lp;
        if (accept) {
            x = prop;
            xv = pv;
            lp = lp_prop;
        }

        bool warm = iter < cfg.n_warmup;
        if (warm) {
            // Robbins-Monro on the log step toward the target acceptance.
            double rate = accept ? 1.0 : 0.0;
            log_step += (rate - cfg.target_accept) / std::pow(iter + 1.0, 0.6);
        } else {
            ++post_proposals;
            accepted += accept ? 1 : 0;
            int k = iter - cfg.n_warmup;
            result.draws.row(k) = x.transpose();
            if (kept_loglik < loglik_keep && k % loglik_stride == 0) {
                // Fill a contiguous buffer first: the matrix is column-major,
                // so a raw row pointer must not be written sequentially.
                loglik_row(xv, loglik_buf.data());
                result.loglik.row(kept_loglik) = Eigen::Map<const Eigen::RowVectorXd>(
                    loglik_buf.data(), static_cast<long>(n_obs));
                ++kept_loglik;
            }
        }
    }
    if (kept_loglik < loglik_keep)
        result.loglik.conservativeResize(kept_loglik, Eigen::NoChange);
    result.accept_rate =
        post_proposals > 0 ? static_cast<double>(accepted) / static_cast<double>(post_proposals)
                           : 0.0;
    return result;
}

// Split R-hat and a Geyer-style multi-chain effective sample size.
inline void chain_diagnostics(const std::vector<Eigen::MatrixXd>& chains, std::vector<double>& rhat,
                              std::vector<double>& ess) {
    size_t d = static_cast<size_t>(chains[0].cols());
    long half = chains[0].rows() / 2;
    std::vector<Eigen::MatrixXd> seqs;
    for (const auto& c : chains) {
        seqs.push_back(c.topRows(half));
        seqs.push_back(c.bottomRows(half));
    }
    size_t m = seqs.size();
    double ln = static_cast<double>(half);
    rhat.assign(d, 0.0);
    ess.assign(d, 0.0);
    for (size_t p = 0; p < d; ++p) {
        std::vector<double> means(m), vars(m);
        std::vector<Eigen::ArrayXd> centered(m);
        for (size_t j = 0; j < m; ++j) {
            Eigen::VectorXd col = seqs[j].col(static_cast<long>(p));
            means[j] = col.mean();
            centered[j] = col.array() - means[j];
            vars[j] = centered[j].square().sum() / (ln - 1.0);
        }
        double w = mean(vars);
        double b = ln * variance(means);
        double var_plus = (ln - 1.0) / ln * w + b / ln;
        rhat[p] = w > 0 ? std::sqrt(var_plus / w) : 1.0;

        // Mean autocovariance across sequences, folded into rho_t; paired
        // sums stop at the first negative pair and are forced monotone.
        auto mean_acov = [&](long t) {
            double s = 0.0;
            for (size_t j = 0; j < m; ++j)
                s += (centered[j].head(half - t) * centered[j].tail(half - t)).sum() / ln;
            return s / static_cast<double>(m);
        };
        long max_lag = half - 1;
        double tau = 1.0;
        double prev_pair = std::numeric_limits<double>::infinity();
        for (long t = 1; t + 1 <= max_lag; t += 2) {
            double rho_t = var_plus > 0 ? 1.0 - (w - mean_acov(t)) / var_plus : 0.0;
            double rho_t1 = var_plus > 0 ? 1.0 - (w - mean_acov(t + 1)) / var_plus : 0.0;
            double pair = rho_t + rho_t1;
            if (pair < 0) break;
            pair = std::min(pair, prev_pair);  // enforce monotone decay
            prev_pair = pair;
            tau += 2.0 * pair;
        }
        ess[p] = std::min(static_cast<double>(m) * ln,
                          static_cast<double>(m) * ln / std::max(tau, 1e-12));
    }
}

}  // namespace detail

// MAP via multi-start Nelder-Mead on the penalized posterior, then 4
// adaptive Metropolis chains run concurrently. Diagnostics failing the
// gates leave the fit flagged; comparison refuses flagged fits.
inline ModelFit fit_model(const ModelSpec& spec, const std::vector<std::vector<BehavRow>>& data,
                          const SamplerConfig& cfg = {}) {
    ParamLayout layout = build_layout(spec);
    size_t d = layout.size();
    size_t n_obs = 0;
    for (const auto& rows : data) n_obs += rows.size();
    if (n_obs == 0) throw std::invalid_argument("model fit needs observations");

    auto logpost = [&](const std::vector<double>& p) {
        return log_posterior(spec, layout, p, data);
    };
    auto neg = [&](const std::vector<double>& p) { return -logpost(p); };

    std::mt19937_64 seed_rng(cfg.seed);
    std::normal_distribution<double> jitter(0.0, 0.5);
    std::vector<double> best_map;
    double best_val = std::numeric_limits<double>::infinity();
    for (int s = 0; s < cfg.map_starts; ++s) {
        std::vector<double> start(d, 0.0);
        for (size_t i = 0; i < d; ++i) {
            bool is_phi = layout.names[i].rfind("log_phi", 0) == 0;
            start[i] = (is_phi ? std::log(10.0) : 0.0) + (s == 0 ? 0.0 : jitter(seed_rng));
        }
        auto r = nelder_mead(neg, start, 0.4, 4000, 1e-10);
        if (r.fmin < best_val) {
            best_val = r.fmin;
            best_map = r.x;
        }
    }

    ModelFit fit;
    fit.spec = spec;
    fit.layout = layout;
    fit.map_estimate = best_map;
    fit.n_chains = cfg.n_chains;
    fit.n_draws_per_chain = cfg.n_draws;
    fit.n_obs = n_obs;

    auto loglik_row = [&](const std::vector<double>& p, double* out) {
        pointwise_loglik_row(spec, layout, p, data, out);
    };
    int keep_per_chain = std::max(1, cfg.loglik_draws / cfg.n_chains);
    Eigen::MatrixXd proposal_chol = detail::laplace_proposal_chol(logpost, best_map);

    std::vector<detail::ChainResult> results(static_cast<size_t>(cfg.n_chains));
    std::vector<std::thread> threads;
    for (int c = 0; c < cfg.n_chains; ++c) {
        uint64_t chain_seed = cfg.seed * 1000003ULL + static_cast<uint64_t>(c) * 7919ULL + 17ULL;
        // Overdispersed starts: 2x the Laplace spread, so split R-hat can
        // see genuine convergence rather than identical initialization.
        std::mt19937_64 jrng(chain_seed ^ 0x5bd1e995ULL);
        std::normal_distribution<double> unit;
        Eigen::VectorXd z(static_cast<long>(d));
        for (long i = 0; i < static_cast<long>(d); ++i) z[i] = unit(jrng);
        Eigen::VectorXd start_vec =
            Eigen::Map<const Eigen::VectorXd>(best_map.data(), static_cast<long>(d)) +
            2.0 * (proposal_chol * z);
        std::vector<double> start(start_vec.data(), start_vec.data() + d);
        threads.emplace_back([&, c, start, chain_seed]() {
            results[static_cast<size_t>(c)] = detail::run_chain(
                logpost, loglik_row, start, n_obs, cfg, keep_per_chain, chain_seed,
                proposal_chol);
        });
    }
    for (auto& t : threads) t.join();

    fit.draws.resize(static_cast<long>(cfg.n_chains) * cfg.n_draws, static_cast<long>(d));
    long total_loglik_rows = 0;
    for (const auto& r : results) total_loglik_rows += r.loglik.rows();
    fit.pointwise_loglik.resize(total_loglik_rows, static_cast<long>(n_obs));
    long lrow = 0;
    double acc = 0.0;
    std::vector<Eigen::MatrixXd> chain_draws;
    for (int c = 0; c < cfg.n_chains; ++c) {
        const auto& r = results[static_cast<size_t>(c)];
        fit.draws.middleRows(static_cast<long>(c) * cfg.n_draws, cfg.n_draws) = r.draws;
        fit.pointwise_loglik.middleRows(lrow, r.loglik.rows()) = r.loglik;
        lrow += r.loglik.rows();
        acc += r.accept_rate;
        chain_draws.push_back(r.draws);
    }
    fit.accept_rate = acc / cfg.n_chains;

    detail::chain_diagnostics(chain_draws, fit.rhat, fit.ess);
    fit.diagnostics_ok = true;
    for (size_t p = 0; p < d; ++p)
        if (fit.rhat[p] >= cfg.rhat_gate || fit.ess[p] <= cfg.ess_gate)
            fit.diagnostics_ok = false;
    return fit;
}

struct ElpdResult {
    double elpd = 0.0;
    double se = 0.0;
    std::vector<double> pointwise;
    size_t degenerate_obs = 0;  // importance weights collapsed onto one draw
    bool reliable = true;       // false when > 1% of observations are degenerate
};

// Leave-one-out expected log predictive density by importance sampling over
// posterior draws, with weights truncated at S^(3/4) times the mean weight.
inline ElpdResult elpd_loo(const ModelFit& fit) {
    const Eigen::MatrixXd& ll = fit.pointwise_loglik;
    long s = ll.rows(), n = ll.cols();
    if (s == 0 || n == 0) throw std::invalid_argument("fit has no pointwise log-likelihood");
    ElpdResult res;
    res.pointwise.resize(static_cast<size_t>(n));
    double cap_shift = -0.25 * std::log(static_cast<double>(s));  // log(S^{3/4}/S)
    std::vector<double> lw(static_cast<size_t>(s)), lw_ll(static_cast<size_t>(s));
    for (long i = 0; i < n; ++i) {
        for (long k = 0; k < s; ++k) lw[static_cast<size_t>(k)] = -ll(k, i);
        double norm = logsumexp(lw);
        double max_lw = -std::numeric_limits<double>::infinity();
        for (double& v : lw) {
            v -= norm;
            max_lw = std::max(max_lw, v);
        }
        if (max_lw > std::log(0.99)) ++res.degenerate_obs;
        for (long k = 0; k < s; ++k) {
            double t = std::min(lw[static_cast<size_t>(k)], cap_shift);
            lw[static_cast<size_t>(k)] = t;
            lw_ll[static_cast<size_t>(k)] = t + ll(k, i);
        }
        double e = logsumexp(lw_ll) - logsumexp(lw);
        res.pointwise[static_cast<size_t>(i)] = e;
        res.elpd += e;
    }
    res.se = std::sqrt(static_cast<double>(n) * variance(res.pointwise));
    res.reliable =
        static_cast<double>(res.degenerate_obs) <= 0.01 * static_cast<double>(n);
    return res;
}

struct ComparisonRow {
    std::string model;
    double elpd = 0.0;
    double se = 0.0;
    double elpd_diff = 0.0;  // best minus this model
    double diff_se = 0.0;    // paired over observations
};

// Ranks fits by ELPD-LOO. All fits must be over the same observations and
// must have passed the convergence gates.
inline std::vector<ComparisonRow> compare_models(const std::vector<const ModelFit*>& fits) {
    if (fits.empty()) throw std::invalid_argument("nothing to compare");
    for (const ModelFit* f : fits) {
        if (!f->diagnostics_ok)
            throw std::runtime_error(std::string("model ") + to_string(f->spec.name) +
                                     " failed convergence diagnostics; comparison refused");
        if (f->n_obs != fits[0]->n_obs)
            throw std::invalid_argument("fits cover different observation counts");
    }
    std::vector<ElpdResult> elpds;
    for (const ModelFit* f : fits) elpds.push_back(elpd_loo(*f));
    std::vector<size_t> order(fits.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return elpds[a].elpd > elpds[b].elpd; });

    std::vector<ComparisonRow> table;
    const ElpdResult& best = elpds[order[0]];
    for (size_t rank = 0; rank < order.size(); ++rank) {
        size_t i = order[rank];
        ComparisonRow row;
        row.model = to_string(fits[i]->spec.name);
        row.elpd = elpds[i].elpd;
        row.se = elpds[i].se;
        row.elpd_diff = best.elpd - elpds[i].elpd;
        if (rank == 0) {
            row.diff_se = 0.0;
        } else {
            std::vector<double> diff(best.pointwise.size());
            for (size_t k = 0; k < diff.size(); ++k)
                diff[k] = best.pointwise[k] - elpds[i].pointwise[k];
            row.diff_se = std::sqrt(static_cast<double>(diff.size()) * variance(diff));
        }
        table.push_back(row);
    }
    return table;
}

struct PredictResult {
    std::vector<std::vector<double>> per_target;  // posterior-mean mu / switch probability
    double switch_auroc = std::numeric_limits<double>::quiet_NaN();
    double conf_mae = std::numeric_limits<double>::quiet_NaN();
};

// Posterior-mean predictions on new rows (already featurized, possibly under
// a different chance level). Confidence targets report mean absolute error,
// the switch target reports AUROC against the observed switches.
inline PredictResult predict(const ModelFit& fit, const std::vector<std::vector<BehavRow>>& data,
                             int max_draws = 1000) {
    if (data.size() != fit.spec.targets.size())
        throw std::invalid_argument("prediction data target count mismatch");
    long total = fit.draws.rows();
    long stride = std::max(1L, total / max_draws);
    PredictResult res;
    res.per_target.resize(data.size());

    double abs_err = 0.0;
    size_t n_conf = 0;
    std::vector<double> switch_scores;
    std::vector<bool> switch_obs;
    std::vector<double> params(fit.layout.size());
    for (size_t t = 0; t < data.size(); ++t) {
        const TargetTerms& terms = fit.layout.per_target[t];
        bool is_switch = fit.spec.targets[t] == BehavTarget::switch_choice;
        res.per_target[t].assign(data[t].size(), 0.0);
        long used = 0;
        for (long k = 0; k < total; k += stride) {
            for (size_t j = 0; j < params.size(); ++j)
                params[j] = fit.draws(k, static_cast<long>(j));
            for (size_t i = 0; i < data[t].size(); ++i) {
                double l = linear_predictor(terms, params, data[t][i]);
                res.per_target[t][i] += is_switch ? sigmoid(-l) : sigmoid(l);
            }
            ++used;
        }
        for (size_t i = 0; i < data[t].size(); ++i) {
            res.per_target[t][i] /= static_cast<double>(used);
            if (is_switch) {
                switch_scores.push_back(res.per_target[t][i]);
                switch_obs.push_back(data[t][i].y > 0.5);
            } else {
                abs_err += std::abs(res.per_target[t][i] - data[t][i].y);
                ++n_conf;
            }
        }
    }
    if (n_conf > 0) res.conf_mae = abs_err / static_cast<double>(n_conf);
    if (!switch_scores.empty()) res.switch_auroc = rank_auroc(switch_scores, switch_obs);
    return res;
}

// Draws synthetic observations from the model at known parameters, for
// recovery and ranking tests: Beta variates for confidence targets (via two
// gammas), Bernoulli for switches. Rows keep their predictors; y is replaced.
inline void simulate_behav_y(const ModelSpec& spec, const ParamLayout& layout,
                             const std::vector<double>& params,
                             std::vector<std::vector<BehavRow>>& data, std::mt19937_64& rng) {
    for (size_t t = 0; t < spec.targets.size(); ++t) {
        const TargetTerms& terms = layout.per_target[t];
        bool is_switch = spec.targets[t] == BehavTarget::switch_choice;
        double phi = is_switch ? 0.0 : std::exp(params[static_cast<size_t>(terms.log_phi)]);
        for (BehavRow& row : data[t]) {
            double l = linear_predictor(terms, params, row);
            if (is_switch) {
                row.y = std::bernoulli_distribution(sigmoid(-l))(rng) ? 1.0 : 0.0;
            } else {
                double mu = std::clamp(sigmoid(l), 1e-9, 1.0 - 1e-9);
                std::gamma_distribution<double> ga(mu * phi, 1.0), gb((1.0 - mu) * phi, 1.0);
                double u = ga(rng), v = gb(rng);
                row.y = u + v > 0 ? u / (u + v) : 0.5;
            }
        }
    }
}

}  // namespace twoturn
