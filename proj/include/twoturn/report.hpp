#pragma once

// Report emission: every table is a pure function of the record file, so
// the verify pass can recompute each artifact and diff bytes. CSV tables
// carry the numbers; standalone SVG files render them without any plotting
// runtime downstream.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "twoturn/numeric.hpp"
#include "twoturn/observer.hpp"
#include "twoturn/stats.hpp"
#include "twoturn/types.hpp"

namespace twoturn {

namespace detail {

inline std::string fmt_num(double v) {
    if (std::isnan(v)) return "nan";
    return strfmt("%.6g", v);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    out += "\"";
    return out;
}

inline std::string csv_join(const std::vector<std::string>& fields) {
    std::string line;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) line += ",";
        line += csv_escape(fields[i]);
    }
    line += "\n";
    return line;
}

inline int display_rank(Display d) {
    switch (d) {
        case Display::Shown: return 0;
        case Display::Hidden: return 1;
        case Display::Wrong: return 2;
    }
    return 3;
}

inline int advice_rank(Advice a) {
    switch (a) {
        case Advice::Same: return 0;
        case Advice::Opposite: return 1;
        case Advice::Neutral: return 2;
    }
    return 3;
}

inline std::vector<const TrialRecord*> parsed_only(const std::vector<TrialRecord>& records) {
    std::vector<const TrialRecord*> out;
    for (const auto& r : records)
        if (r.parse_ok) out.push_back(&r);
    return out;
}

// Ideal Bayesian posterior confidence in the initially chosen option, using
// the full turn-1 confidence vector as the prior.
inline double ideal_posterior_initial(const TrialRecord& r) {
    double prior = r.prior();
    if (r.condition.advice == Advice::Neutral || !r.advice.advised_index.has_value())
        return prior;
    auto post = bayes_posterior_vector(r.turn1_confidence.probs, *r.advice.advised_index,
                                       r.advice.stated_accuracy);
    return post[static_cast<size_t>(r.turn1_choice)];
}

}  // namespace detail

// COM and changed-initial-answer rates per condition cell, per stated
// accuracy and aggregated (accuracy column "all").
inline std::string csv_com_by_condition(const std::vector<TrialRecord>& records) {
    std::string out = detail::csv_join(
        {"display", "advice", "stated_accuracy", "n", "com_rate", "change_initial_rate", "se"});
    auto emit = [&](const std::vector<ComCell>& cells, bool with_acc) {
        auto sorted = cells;
        std::sort(sorted.begin(), sorted.end(), [](const ComCell& a, const ComCell& b) {
            if (a.display != b.display)
                return detail::display_rank(a.display) < detail::display_rank(b.display);
            if (a.advice != b.advice)
                return detail::advice_rank(a.advice) < detail::advice_rank(b.advice);
            return a.accuracy < b.accuracy;
        });
        for (const auto& c : sorted)
            out += detail::csv_join({to_string(c.display), to_string(c.advice),
                                     with_acc ? detail::fmt_num(c.accuracy) : std::string("all"),
                                     std::to_string(c.n), detail::fmt_num(c.com_rate),
                                     detail::fmt_num(c.change_initial_rate),
                                     detail::fmt_num(c.se)});
    };
    emit(com_summary(records, true), true);
    emit(com_summary(records, false), false);
    return out;
}

// COM rate binned by turn-1 confidence in the chosen option, one curve per
// display and advice pair.
inline std::string csv_confidence_vs_com(const std::vector<TrialRecord>& records,
                                         double bin_width = 0.05, size_t min_count = 50) {
    struct Key {
        Display d;
        Advice a;
        bool operator<(const Key& o) const {
            if (d != o.d) return detail::display_rank(d) < detail::display_rank(o.d);
            return detail::advice_rank(a) < detail::advice_rank(o.a);
        }
    };
    std::map<Key, std::pair<std::vector<double>, std::vector<bool>>> groups;
    for (const TrialRecord* r : detail::parsed_only(records)) {
        auto& g = groups[{r->condition.display, r->condition.advice}];
        g.first.push_back(r->prior());
        g.second.push_back(r->changed_mind);
    }
    std::string out =
        detail::csv_join({"display", "advice", "conf_bin_center", "com_rate", "n"});
    for (const auto& [key, g] : groups) {
        auto bins = com_bins(g.first, g.second, bin_width, min_count);
        for (const auto& b : bins)
            out += detail::csv_join({to_string(key.d), to_string(key.a), detail::fmt_num(b.x),
                                     detail::fmt_num(b.rate), std::to_string(b.n)});
    }
    return out;
}

// Constrained sigmoid fits of COM rate against turn-1 confidence, one panel
// per display type. Panels with fewer than four populated bins are skipped.
inline std::string csv_sigmoid_fits(const std::vector<TrialRecord>& records,
                                    double bin_width = 0.05, size_t min_count = 50) {
    std::map<int, std::pair<std::vector<double>, std::vector<bool>>> by_display;
    std::map<int, Display> display_of;
    for (const TrialRecord* r : detail::parsed_only(records)) {
        int rank = detail::display_rank(r->condition.display);
        by_display[rank].first.push_back(r->prior());
        by_display[rank].second.push_back(r->changed_mind);
        display_of[rank] = r->condition.display;
    }
    std::string out = detail::csv_join({"display", "n_bins", "a", "b", "c",
                                        "half_rate_confidence", "r_squared", "r2_linear",
                                        "r2_quadratic", "r2_exponential", "r2_logistic"});
    for (const auto& [rank, g] : by_display) {
        auto bins = com_bins(g.first, g.second, bin_width, min_count);
        if (bins.size() < 4) continue;
        SigmoidFit fit;
        try {
            fit = fit_constrained_sigmoid(bins);
        } catch (const std::exception&) {
            continue;
        }
        auto comp = [&](const char* name) {
            auto it = fit.comparison.find(name);
            return it == fit.comparison.end() ? std::string("nan") : detail::fmt_num(it->second);
        };
        out += detail::csv_join(
            {to_string(display_of[rank]), std::to_string(bins.size()), detail::fmt_num(fit.a),
             detail::fmt_num(fit.b), detail::fmt_num(fit.c),
             detail::fmt_num(fit.half_rate_confidence), detail::fmt_num(fit.r_squared),
             comp("linear"), comp("quadratic"), comp("exponential"), comp("logistic")});
    }
    return out;
}

// Mean change in confidence (turn 2 minus turn 1, initially chosen option)
// per display and advice cell.
inline std::string csv_delta_confidence(const std::vector<TrialRecord>& records) {
    struct Key {
        Display d;
        Advice a;
        bool operator<(const Key& o) const {
            if (d != o.d) return detail::display_rank(d) < detail::display_rank(o.d);
            return detail::advice_rank(a) < detail::advice_rank(o.a);
        }
    };
    std::map<Key, std::vector<double>> cells;
    for (const TrialRecord* r : detail::parsed_only(records))
        cells[{r->condition.display, r->condition.advice}].push_back(r->update());
    std::string out = detail::csv_join({"display", "advice", "n", "mean_dconf"});
    for (const auto& [key, v] : cells)
        out += detail::csv_join({to_string(key.d), to_string(key.a), std::to_string(v.size()),
                                 detail::fmt_num(mean(v))});
    return out;
}

// Two-stage decomposition into a display effect and per-cell advice
// weights. Needs all six display x advice cells.
inline std::string csv_two_stage_weights(const std::vector<TrialRecord>& records) {
    std::vector<TwoStageRow> rows;
    for (const TrialRecord* r : detail::parsed_only(records)) {
        if (r->condition.display == Display::Wrong) continue;
        rows.push_back({r->update(), r->condition.display, r->condition.advice});
    }
    TwoStageResult ts = two_stage_weights(rows);
    std::string out =
        detail::csv_join({"cell", "raw_weight", "display_adjusted_weight", "stage1_display"});
    std::vector<std::string> order = {"shown|same",  "shown|opposite",  "shown|neutral",
                                      "hidden|same", "hidden|opposite", "hidden|neutral"};
    for (const auto& cell : order)
        out += detail::csv_join({cell, detail::fmt_num(ts.cell_weights.at(cell)),
                                 detail::fmt_num(ts.display_adjusted_weights.at(cell)),
                                 detail::fmt_num(ts.stage1_display_coeff)});
    return out;
}

struct ObservedIdealCell {
    Display display;
    Advice advice;
    OUCSReport report;
};

inline std::vector<ObservedIdealCell> observed_vs_ideal_cells(
    const std::vector<TrialRecord>& records, double bin_width = 0.05) {
    struct Key {
        Display d;
        Advice a;
        bool operator<(const Key& o) const {
            if (a != o.a) return detail::advice_rank(a) < detail::advice_rank(o.a);
            return detail::display_rank(d) < detail::display_rank(o.d);
        }
    };
    std::map<Key, std::vector<ObsIdealPair>> groups;
    for (const TrialRecord* r : detail::parsed_only(records)) {
        double ideal = detail::ideal_posterior_initial(*r);
        double observed = r->final_conf_initial();
        groups[{r->condition.display, r->condition.advice}].push_back({ideal, observed});
    }
    // Table 1 ordering: neutral, same, opposite; hidden before shown.
    std::vector<ObservedIdealCell> cells;
    std::vector<std::pair<Advice, Display>> order = {
        {Advice::Neutral, Display::Hidden},  {Advice::Neutral, Display::Shown},
        {Advice::Same, Display::Hidden},     {Advice::Same, Display::Shown},
        {Advice::Opposite, Display::Hidden}, {Advice::Opposite, Display::Shown},
        {Advice::Neutral, Display::Wrong},   {Advice::Same, Display::Wrong},
        {Advice::Opposite, Display::Wrong}};
    for (auto [a, d] : order) {
        auto it = groups.find({d, a});
        if (it == groups.end()) continue;
        cells.push_back({d, a, oucs(it->second, bin_width)});
    }
    return cells;
}

// Binned observed vs ideal posterior confidence (scatter data, Fig.-style,
// bin width 0.05 with per-bin counts).
inline std::string csv_observed_vs_ideal(const std::vector<TrialRecord>& records) {
    std::string out = detail::csv_join(
        {"advice", "display", "ideal_bin_center", "mean_ideal", "mean_observed", "count"});
    for (const auto& cell : observed_vs_ideal_cells(records))
        for (const auto& b : cell.report.bins)
            out += detail::csv_join({to_string(cell.advice), to_string(cell.display),
                                     detail::fmt_num(b.ideal_bin_center),
                                     detail::fmt_num(b.mean_ideal),
                                     detail::fmt_num(b.mean_observed),
                                     std::to_string(b.count)});
    return out;
}

// Same binning, values mapped to log-odds.
inline std::string csv_observed_vs_ideal_logodds(const std::vector<TrialRecord>& records,
                                                 double bin_width = 0.05) {
    struct Acc {
        double ideal_lo = 0.0, obs_lo = 0.0;
        size_t n = 0;
    };
    std::string out = detail::csv_join({"advice", "display", "ideal_bin_center",
                                        "mean_ideal_logodds", "mean_observed_logodds", "count"});
    struct Key {
        Display d;
        Advice a;
        bool operator<(const Key& o) const {
            if (a != o.a) return detail::advice_rank(a) < detail::advice_rank(o.a);
            return detail::display_rank(d) < detail::display_rank(o.d);
        }
    };
    std::map<Key, std::map<int, Acc>> groups;
    for (const TrialRecord* r : detail::parsed_only(records)) {
        double ideal = detail::ideal_posterior_initial(*r);
        int bin = std::min(static_cast<int>(ideal / bin_width),
                           static_cast<int>(1.0 / bin_width) - 1);
        Acc& acc = groups[{r->condition.display, r->condition.advice}][bin];
        acc.ideal_lo += log_odds(ideal);
        acc.obs_lo += log_odds(r->final_conf_initial());
        ++acc.n;
    }
    std::vector<std::pair<Advice, Display>> order = {
        {Advice::Neutral, Display::Hidden},  {Advice::Neutral, Display::Shown},
        {Advice::Same, Display::Hidden},     {Advice::Same, Display::Shown},
        {Advice::Opposite, Display::Hidden}, {Advice::Opposite, Display::Shown},
        {Advice::Neutral, Display::Wrong},   {Advice::Same, Display::Wrong},
        {Advice::Opposite, Display::Wrong}};
    for (auto [a, d] : order) {
        auto it = groups.find({d, a});
        if (it == groups.end()) continue;
        for (const auto& [bin, acc] : it->second)
            out += detail::csv_join(
                {to_string(a), to_string(d), detail::fmt_num((bin + 0.5) * bin_width),
                 detail::fmt_num(acc.ideal_lo / static_cast<double>(acc.n)),
                 detail::fmt_num(acc.obs_lo / static_cast<double>(acc.n)),
                 std::to_string(acc.n)});
    }
    return out;
}

// Over/underconfidence score per advice x display cell (Table-1-style).
inline std::string csv_oucs_table(const std::vector<TrialRecord>& records) {
    std::string out = detail::csv_join({"advice", "display", "oucs", "n"});
    for (const auto& cell : observed_vs_ideal_cells(records)) {
        size_t n = 0;
        for (const auto& b : cell.report.bins) n += b.count;
        out += detail::csv_join({to_string(cell.advice), to_string(cell.display),
                                 detail::fmt_num(cell.report.score), std::to_string(n)});
    }
    return out;
}

// Per-trial observed/ideal update ratios, per cell and overall, plus the
// display-corrected ratio for opposing shown advice when neutral cells
// provide the correction.
inline std::string csv_overweighting(const std::vector<TrialRecord>& records) {
    struct Key {
        Display d;
        Advice a;
        bool operator<(const Key& o) const {
            if (a != o.a) return detail::advice_rank(a) < detail::advice_rank(o.a);
            return detail::display_rank(d) < detail::display_rank(o.d);
        }
    };
    std::map<Key, std::vector<UpdatePair>> cells;
    std::vector<UpdatePair> all;
    std::vector<double> neutral_shown, neutral_hidden;
    for (const TrialRecord* r : detail::parsed_only(records)) {
        double ideal = detail::ideal_posterior_initial(*r);
        UpdatePair pair{r->update(), ideal - r->prior()};
        if (r->condition.advice == Advice::Neutral) {
            if (r->condition.display == Display::Shown)
                neutral_shown.push_back(pair.observed_update);
            else if (r->condition.display == Display::Hidden)
                neutral_hidden.push_back(pair.observed_update);
            continue;
        }
        cells[{r->condition.display, r->condition.advice}].push_back(pair);
        all.push_back(pair);
    }
    std::string out = detail::csv_join({"scope", "advice", "display", "median_ratio",
                                        "mean_ratio", "n_used", "n_excluded", "correction"});
    auto emit = [&](const std::string& scope, const std::string& advice,
                    const std::string& display, const RatioReport& rep, double correction) {
        out += detail::csv_join({scope, advice, display, detail::fmt_num(rep.median_ratio),
                                 detail::fmt_num(rep.mean_ratio), std::to_string(rep.n_used),
                                 std::to_string(rep.n_excluded),
                                 std::isnan(correction) ? "" : detail::fmt_num(correction)});
    };
    for (const auto& [key, pairs] : cells)
        emit("cell", to_string(key.a), to_string(key.d), overweighting_ratio(pairs),
             std::numeric_limits<double>::quiet_NaN());
    if (!all.empty())
        emit("overall", "all", "all", overweighting_ratio(all),
             std::numeric_limits<double>::quiet_NaN());
    auto os = cells.find({Display::Shown, Advice::Opposite});
    if (os != cells.end() && !neutral_shown.empty() && !neutral_hidden.empty()) {
        double correction = mean(neutral_shown) - mean(neutral_hidden);
        emit("corrected", "opposite", "shown",
             corrected_overweighting_ratio(os->second, neutral_shown, neutral_hidden),
             correction);
    }
    return out;
}

// Minimal standalone SVG charts. Deterministic output: fixed canvas, fixed
// palette, numbers through the same formatter as the CSVs.
namespace svg {

inline const std::vector<std::string>& palette() {
    static const std::vector<std::string> p = {"#4269d0", "#efb118", "#ff725c", "#6cc5b0",
                                               "#3ca951", "#ff8ab7", "#a463f2", "#97bbf5",
                                               "#9c6b4e", "#9498a0"};
    return p;
}

struct Series {
    std::string label;
    std::vector<double> xs, ys;
    std::vector<double> sizes;  // optional per-point radius weights
    bool line = false;
};

inline std::string chart(const std::string& title, const std::string& xlabel,
                         const std::string& ylabel, const std::vector<Series>& series,
                         bool diagonal = false) {
    const double w = 640, h = 480, ml = 70, mr = 160, mt = 50, mb = 60;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
            xmin = std::min(xmin, s.xs[i]);
            xmax = std::max(xmax, s.xs[i]);
            ymin = std::min(ymin, s.ys[i]);
            ymax = std::max(ymax, s.ys[i]);
        }
    if (xmin > xmax) {
        xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    }
    if (diagonal) {
        xmin = ymin = std::min(xmin, ymin);
        xmax = ymax = std::max(xmax, ymax);
    }
    if (xmax - xmin < 1e-12) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    double xpad = 0.04 * (xmax - xmin), ypad = 0.04 * (ymax - ymin);
    xmin -= xpad, xmax += xpad, ymin -= ypad, ymax += ypad;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::string out = strfmt(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"%g\" height=\"%g\" "
        "fill=\"white\"/>\n",
        w, h, w, h);
    out += strfmt("<text x=\"%g\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">%s</text>\n",
                  (ml + w - mr) / 2, title.c_str());
    // axes with five ticks each
    out += strfmt("<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", ml,
                  h - mb, w - mr, h - mb);
    out += strfmt("<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", ml, mt,
                  ml, h - mb);
    for (int t = 0; t <= 5; ++t) {
        double xv = xmin + (xmax - xmin) * t / 5.0, yv = ymin + (ymax - ymin) * t / 5.0;
        out += strfmt(
            "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%s</text>\n", px(xv), h - mb + 18,
            detail::fmt_num(xv).c_str());
        out += strfmt("<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%s</text>\n", ml - 6,
                      py(yv) + 4, detail::fmt_num(yv).c_str());
    }
    out += strfmt("<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%s</text>\n", (ml + w - mr) / 2,
                  h - 14, xlabel.c_str());
    out += strfmt(
        "<text x=\"18\" y=\"%g\" text-anchor=\"middle\" transform=\"rotate(-90 18 %g)\">%s"
        "</text>\n",
        (mt + h - mb) / 2, (mt + h - mb) / 2, ylabel.c_str());
    if (diagonal)
        out += strfmt(
            "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#999\" "
            "stroke-dasharray=\"4 3\"/>\n",
            px(xmin), py(xmin), px(xmax), py(xmax));

    for (size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const std::string& color = palette()[si % palette().size()];
        if (s.line && s.xs.size() > 1) {
            std::string pts;
            for (size_t i = 0; i < s.xs.size(); ++i) {
                if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
                pts += strfmt("%g,%g ", px(s.xs[i]), py(s.ys[i]));
            }
            out += strfmt("<polyline points=\"%s\" fill=\"none\" stroke=\"%s\" "
                          "stroke-width=\"2\"/>\n",
                          pts.c_str(), color.c_str());
        }
        double max_size = 1.0;
        for (double v : s.sizes) max_size = std::max(max_size, v);
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
            double r = s.sizes.empty() ? 3.5 : 2.0 + 8.0 * std::sqrt(s.sizes[i] / max_size);
            out += strfmt("<circle cx=\"%g\" cy=\"%g\" r=\"%g\" fill=\"%s\" "
                          "fill-opacity=\"0.75\"/>\n",
                          px(s.xs[i]), py(s.ys[i]), r, color.c_str());
        }
        out += strfmt("<rect x=\"%g\" y=\"%g\" width=\"12\" height=\"12\" fill=\"%s\"/>\n",
                      w - mr + 16, mt + 18.0 * static_cast<double>(si), color.c_str());
        out += strfmt("<text x=\"%g\" y=\"%g\">%s</text>\n", w - mr + 32,
                      mt + 18.0 * static_cast<double>(si) + 10, s.label.c_str());
    }
    out += "</svg>\n";
    return out;
}

struct Bar {
    std::string label;
    double value = 0.0;
    double se = std::numeric_limits<double>::quiet_NaN();
    size_t color_index = 0;
};

inline std::string bars(const std::string& title, const std::string& ylabel,
                        const std::vector<Bar>& bars_in) {
    const double w = 640, h = 480, ml = 70, mr = 30, mt = 50, mb = 120;
    double ymin = 0.0, ymax = 0.0;
    for (const auto& b : bars_in) {
        double lo = b.value - (std::isnan(b.se) ? 0.0 : b.se);
        double hi = b.value + (std::isnan(b.se) ? 0.0 : b.se);
        ymin = std::min(ymin, lo);
        ymax = std::max(ymax, hi);
    }
    if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
    double ypad = 0.06 * (ymax - ymin);
    if (ymin < 0) ymin -= ypad;
    ymax += ypad;
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
    double span = w - ml - mr;
    double slot = span / std::max<size_t>(1, bars_in.size());
    double bw = slot * 0.7;

    std::string out = strfmt(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"%g\" height=\"%g\" "
        "fill=\"white\"/>\n",
        w, h, w, h);
    out += strfmt("<text x=\"%g\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">%s</text>\n",
                  w / 2, title.c_str());
    for (int t = 0; t <= 5; ++t) {
        double yv = ymin + (ymax - ymin) * t / 5.0;
        out += strfmt("<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%s</text>\n", ml - 6,
                      py(yv) + 4, detail::fmt_num(yv).c_str());
        out += strfmt("<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#eee\"/>\n", ml,
                      py(yv), w - mr, py(yv));
    }
    out += strfmt("<text x=\"18\" y=\"%g\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
                  "%g)\">%s</text>\n",
                  (mt + h - mb) / 2, (mt + h - mb) / 2, ylabel.c_str());
    if (ymin < 0)
        out += strfmt("<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", ml,
                      py(0), w - mr, py(0));
    for (size_t i = 0; i < bars_in.size(); ++i) {
        const Bar& b = bars_in[i];
        double cx = ml + slot * (static_cast<double>(i) + 0.5);
        double y0 = py(0.0);
        double y1 = py(b.value);
        double top = std::min(y0, y1), height = std::abs(y1 - y0);
        if (height < 0.5) height = 0.5;
        out += strfmt("<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"%s\"/>\n",
                      cx - bw / 2, top, bw, height,
                      palette()[b.color_index % palette().size()].c_str());
        if (!std::isnan(b.se) && b.se > 0)
            out += strfmt("<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                          cx, py(b.value - b.se), cx, py(b.value + b.se));
        out += strfmt("<text x=\"%g\" y=\"%g\" text-anchor=\"end\" transform=\"rotate(-45 %g "
                      "%g)\">%s</text>\n",
                      cx, h - mb + 14, cx, h - mb + 14, b.label.c_str());
    }
    out += "</svg>\n";
    return out;
}

}  // namespace svg

inline std::string svg_com_by_condition(const std::vector<TrialRecord>& records) {
    auto cells = com_summary(records, false);
    std::sort(cells.begin(), cells.end(), [](const ComCell& a, const ComCell& b) {
        if (a.display != b.display)
            return detail::display_rank(a.display) < detail::display_rank(b.display);
        return detail::advice_rank(a.advice) < detail::advice_rank(b.advice);
    });
    std::vector<svg::Bar> bars;
    for (const auto& c : cells)
        bars.push_back({std::string(to_string(c.display)) + "|" + to_string(c.advice), c.com_rate,
                        c.se, static_cast<size_t>(detail::display_rank(c.display))});
    return svg::bars("Change of mind by condition", "COM rate", bars);
}

inline std::string svg_confidence_vs_com(const std::vector<TrialRecord>& records) {
    struct Key {
        Display d;
        Advice a;
        bool operator<(const Key& o) const {
            if (d != o.d) return detail::display_rank(d) < detail::display_rank(o.d);
            return detail::advice_rank(a) < detail::advice_rank(o.a);
        }
    };
    std::map<Key, std::pair<std::vector<double>, std::vector<bool>>> groups;
    for (const TrialRecord* r : detail::parsed_only(records)) {
        auto& g = groups[{r->condition.display, r->condition.advice}];
        g.first.push_back(r->prior());
        g.second.push_back(r->changed_mind);
    }
    std::vector<svg::Series> series;
    for (const auto& [key, g] : groups) {
        auto bins = com_bins(g.first, g.second);
        svg::Series s;
        s.label = std::string(to_string(key.d)) + "|" + to_string(key.a);
        s.line = true;
        for (const auto& b : bins) {
            s.xs.push_back(b.x);
            s.ys.push_back(b.rate);
        }
        series.push_back(std::move(s));
    }
    return svg::chart("COM rate vs turn-1 confidence", "turn-1 confidence (chosen option)",
                      "COM rate", series);
}

inline std::string svg_sigmoid_fits(const std::vector<TrialRecord>& records) {
    std::map<int, std::pair<std::vector<double>, std::vector<bool>>> by_display;
    std::map<int, Display> display_of;
    for (const TrialRecord* r : detail::parsed_only(records)) {
        int rank = detail::display_rank(r->condition.display);
        by_display[rank].first.push_back(r->prior());
        by_display[rank].second.push_back(r->changed_mind);
        display_of[rank] = r->condition.display;
    }
    std::vector<svg::Series> series;
    for (const auto& [rank, g] : by_display) {
        auto bins = com_bins(g.first, g.second);
        svg::Series pts;
        pts.label = to_string(display_of[rank]);
        for (const auto& b : bins) {
            pts.xs.push_back(b.x);
            pts.ys.push_back(b.rate);
            pts.sizes.push_back(static_cast<double>(b.n));
        }
        series.push_back(pts);
        if (bins.size() >= 4) {
            try {
                SigmoidFit fit = fit_constrained_sigmoid(bins);
                svg::Series curve;
                curve.label = std::string(to_string(display_of[rank])) + " fit";
                curve.line = true;
                double lo = bins.front().x, hi = bins.back().x;
                for (int i = 0; i <= 60; ++i) {
                    double x = lo + (hi - lo) * i / 60.0;
                    curve.xs.push_back(x);
                    curve.ys.push_back(fit.a * sigmoid(fit.b * (x - fit.c)));
                }
                series.push_back(std::move(curve));
            } catch (const std::exception&) {
            }
        }
    }
    return svg::chart("Constrained sigmoid fits", "turn-1 confidence (chosen option)", "COM rate",
                      series);
}

inline std::string svg_delta_confidence(const std::vector<TrialRecord>& records) {
    struct Key {
        Display d;
        Advice a;
        bool operator<(const Key& o) const {
            if (d != o.d) return detail::display_rank(d) < detail::display_rank(o.d);
            return detail::advice_rank(a) < detail::advice_rank(o.a);
        }
    };
    std::map<Key, std::vector<double>> cells;
    for (const TrialRecord* r : detail::parsed_only(records))
        cells[{r->condition.display, r->condition.advice}].push_back(r->update());
    std::vector<svg::Bar> bars;
    for (const auto& [key, v] : cells) {
        double m = mean(v);
        double se = v.size() > 1 ? std::sqrt(variance(v) / static_cast<double>(v.size()))
                                 : std::numeric_limits<double>::quiet_NaN();
        bars.push_back({std::string(to_string(key.d)) + "|" + to_string(key.a), m, se,
                        static_cast<size_t>(detail::advice_rank(key.a))});
    }
    return svg::bars("Mean confidence change (initially chosen option)", "mean dconf", bars);
}

inline std::string svg_observed_vs_ideal(const std::vector<TrialRecord>& records,
                                         bool logodds = false) {
    std::vector<svg::Series> series;
    if (!logodds) {
        for (const auto& cell : observed_vs_ideal_cells(records)) {
            svg::Series s;
            s.label = std::string(to_string(cell.advice)) + "|" + to_string(cell.display);
            for (const auto& b : cell.report.bins) {
                s.xs.push_back(b.mean_ideal);
                s.ys.push_back(b.mean_observed);
                s.sizes.push_back(static_cast<double>(b.count));
            }
            series.push_back(std::move(s));
        }
        return svg::chart("Observed vs ideal posterior confidence", "ideal posterior",
                          "observed confidence", series, true);
    }
    for (const auto& cell : observed_vs_ideal_cells(records)) {
        svg::Series s;
        s.label = std::string(to_string(cell.advice)) + "|" + to_string(cell.display);
        for (const auto& b : cell.report.bins) {
            s.xs.push_back(log_odds(b.mean_ideal));
            s.ys.push_back(log_odds(b.mean_observed));
            s.sizes.push_back(static_cast<double>(b.count));
        }
        series.push_back(std::move(s));
    }
    return svg::chart("Observed vs ideal (log-odds)", "ideal log-odds", "observed log-odds",
                      series, true);
}

struct ReportArtifact {
    std::string name;
    std::string bytes;
};

// Builds every report artifact in memory. Throws before any file would be
// written when the records are unusable, so emit_report never leaves
// partial output.
inline std::vector<ReportArtifact> build_report_artifacts(
    const std::vector<TrialRecord>& records) {
    if (detail::parsed_only(records).empty())
        throw std::runtime_error("record file has no parseable trials; nothing to report");
    std::vector<ReportArtifact> artifacts;
    artifacts.push_back({"com_by_condition.csv", csv_com_by_condition(records)});
    artifacts.push_back({"confidence_vs_com.csv", csv_confidence_vs_com(records)});
    artifacts.push_back({"sigmoid_fits.csv", csv_sigmoid_fits(records)});
    artifacts.push_back({"delta_confidence.csv", csv_delta_confidence(records)});
    try {
        artifacts.push_back({"two_stage_weights.csv", csv_two_stage_weights(records)});
    } catch (const std::exception&) {
        // needs all six display x advice cells; skipped when absent
    }
    artifacts.push_back({"observed_vs_ideal.csv", csv_observed_vs_ideal(records)});
    artifacts.push_back({"observed_vs_ideal_logodds.csv",
                         csv_observed_vs_ideal_logodds(records)});
    artifacts.push_back({"oucs_table.csv", csv_oucs_table(records)});
    artifacts.push_back({"overweighting.csv", csv_overweighting(records)});
    artifacts.push_back({"com_by_condition.svg", svg_com_by_condition(records)});
    artifacts.push_back({"confidence_vs_com.svg", svg_confidence_vs_com(records)});
    artifacts.push_back({"sigmoid_fits.svg", svg_sigmoid_fits(records)});
    artifacts.push_back({"delta_confidence.svg", svg_delta_confidence(records)});
    artifacts.push_back({"observed_vs_ideal.svg", svg_observed_vs_ideal(records, false)});
    artifacts.push_back({"observed_vs_ideal_logodds.svg", svg_observed_vs_ideal(records, true)});
    return artifacts;
}

// Writes all report artifacts under out_dir and returns name -> path.
inline std::map<std::string, std::string> emit_report(const std::vector<TrialRecord>& records,
                                                      const std::string& out_dir) {
    auto artifacts = build_report_artifacts(records);
    std::filesystem::create_directories(out_dir);
    std::map<std::string, std::string> paths;
    for (const auto& a : artifacts) {
        std::filesystem::path p = std::filesystem::path(out_dir) / a.name;
        std::ofstream out(p, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + p.string());
        out << a.bytes;
        paths[a.name] = p.string();
    }
    return paths;
}

// Recomputes every artifact from the records and byte-compares with what is
// on disk. Returns the names that differ or are missing.
inline std::vector<std::string> verify_report(const std::vector<TrialRecord>& records,
                                              const std::string& report_dir) {
    std::vector<std::string> mismatches;
    for (const auto& a : build_report_artifacts(records)) {
        std::filesystem::path p = std::filesystem::path(report_dir) / a.name;
        std::ifstream in(p, std::ios::binary);
        if (!in) {
            mismatches.push_back(a.name + " (missing)");
            continue;
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        if (ss.str() != a.bytes) mismatches.push_back(a.name);
    }
    return mismatches;
}

}  // namespace twoturn
