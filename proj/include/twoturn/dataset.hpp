#pragma once

// Question-set generation and ingestion: latitude binary questions with
// tunable foil separation, parity/divisibility controls, fictitious
// in-context city-latitude pairs, and 4-choice datasets from JSONL files.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "twoturn/numeric.hpp"
#include "twoturn/types.hpp"

namespace twoturn {

struct CityRow {
    std::string name;
    double latitude = 0.0;
};

namespace detail {

// Splits one CSV line, honoring double-quoted fields (quotes may wrap commas).
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// Reads (city, lat) rows from a comma-separated file with a header line.
// Column order is free and extra columns are ignored. Rows beyond max_rows
// are dropped; malformed latitudes fail loudly with their row number.
inline std::vector<CityRow> load_city_dataset(const std::string& path,
                                              size_t max_rows = SIZE_MAX) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open city file: " + path);
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("city file has no header: " + path);
    auto cols = detail::split_csv_line(header);
    int city_col = -1, lat_col = -1;
    for (size_t i = 0; i < cols.size(); ++i) {
        std::string name = detail::lower(detail::trim(cols[i]));
        if (name == "city") city_col = static_cast<int>(i);
        if (name == "lat" || name == "latitude") lat_col = static_cast<int>(i);
    }
    if (city_col < 0 || lat_col < 0)
        throw std::runtime_error("city file missing city/lat columns: " + path);

    std::vector<CityRow> rows;
    std::string line;
    size_t line_no = 1;
    while (rows.size() < max_rows && std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (static_cast<size_t>(std::max(city_col, lat_col)) >= fields.size())
            throw std::runtime_error(strfmt("city file row %zu: too few fields", line_no));
        std::string name = detail::trim(fields[static_cast<size_t>(city_col)]);
        if (name.empty())
            throw std::runtime_error(strfmt("city file row %zu: empty city name", line_no));
        const std::string& lat_text = fields[static_cast<size_t>(lat_col)];
        double lat = 0.0;
        try {
            size_t used = 0;
            lat = std::stod(lat_text, &used);
            if (used != detail::trim(lat_text).size() && used != lat_text.size())
                throw std::invalid_argument("trailing junk");
        } catch (const std::exception&) {
            throw std::runtime_error(
                strfmt("city file row %zu: malformed latitude '%s'", line_no, lat_text.c_str()));
        }
        if (lat < -90.0 || lat > 90.0)
            throw std::runtime_error(strfmt("city file row %zu: latitude out of range", line_no));
        rows.push_back({name, lat});
    }
    return rows;
}

inline std::string render_latitude(double v) { return strfmt("%.1f", v); }

// Builds the (options, correct_index) pair for a latitude question: the foil
// is truth * (1 +- separation) with sign and option order drawn from rng.
// Throws if the foil renders identically to the truth.
inline std::pair<std::vector<std::string>, int> latitude_options(double latitude,
                                                                 double separation_fraction,
                                                                 std::mt19937_64& rng) {
    if (separation_fraction <= 0.0)
        throw std::invalid_argument("separation_fraction must be positive");
    if (std::abs(latitude) < 0.1)
        throw std::invalid_argument("latitude too close to zero for a separable foil");
    bool plus = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    double foil = latitude * (plus ? 1.0 + separation_fraction : 1.0 - separation_fraction);
    std::string truth_text = render_latitude(latitude);
    std::string foil_text = render_latitude(foil);
    if (truth_text == foil_text)
        throw std::runtime_error("degenerate latitude question: foil renders as truth");
    bool truth_first = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    if (truth_first) return {{truth_text, foil_text}, 0};
    return {{foil_text, truth_text}, 1};
}

inline Question make_latitude_question(const std::string& city, double latitude,
                                       double separation_fraction, std::mt19937_64& rng,
                                       Domain domain = Domain::latitude) {
    auto [options, correct] = latitude_options(latitude, separation_fraction, rng);
    Question q;
    q.id = "lat:" + city;
    q.stem = "What is the latitude of " + city + "?";
    q.options = std::move(options);
    q.correct_index = correct;
    q.domain_tag = domain;
    q.validate();
    return q;
}

// Generates the full latitude set for a city list. Cities with |lat| < 0.1
// and foil-collision degenerates are skipped; each question draws from its
// own stream keyed by id so regeneration is order-independent.
inline QuestionSet generate_latitude_set(const std::vector<CityRow>& cities,
                                         double separation_fraction, uint64_t seed,
                                         Domain domain = Domain::latitude) {
    QuestionSet set;
    set.chance_level = 0.5;
    set.provenance = strfmt("latitude sep=%g seed=%llu", separation_fraction,
                            static_cast<unsigned long long>(seed));
    for (const auto& row : cities) {
        if (std::abs(row.latitude) < 0.1) continue;
        auto rng = trial_rng(seed, "lat:" + row.name, "dataset");
        try {
            set.questions.push_back(
                make_latitude_question(row.name, row.latitude, separation_fraction, rng, domain));
        } catch (const std::runtime_error&) {
            continue;  // degenerate foil at this separation
        }
    }
    set.validate();
    return set;
}

inline Question make_parity_question(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> two_digit(10, 99);
    for (int attempt = 0; attempt < 200; ++attempt) {
        int x = two_digit(rng), y = two_digit(rng);
        bool x_even = x % 2 == 0, y_even = y % 2 == 0;
        if (x_even == y_even || x == y) continue;
        Question q;
        q.id = strfmt("parity:%dv%d", x, y);
        q.stem = "Which of the following numbers is even?";
        q.options = {std::to_string(x), std::to_string(y)};
        q.correct_index = x_even ? 0 : 1;
        q.domain_tag = Domain::parity;
        q.validate();
        return q;
    }
    throw std::runtime_error("parity generation failed to satisfy constraints");
}

inline Question make_divisibility_question(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> five_digit(10000, 99999);
    for (int attempt = 0; attempt < 500; ++attempt) {
        int x = five_digit(rng), y = five_digit(rng);
        bool x_div = x % 8 == 0, y_div = y % 8 == 0;
        if (x_div == y_div || x == y) continue;
        Question q;
        q.id = strfmt("div8:%dv%d", x, y);
        q.stem = "Which of the following numbers is divisible by 8?";
        q.options = {std::to_string(x), std::to_string(y)};
        q.correct_index = x_div ? 0 : 1;
        q.domain_tag = Domain::divisibility;
        q.validate();
        return q;
    }
    throw std::runtime_error("divisibility generation failed to satisfy constraints");
}

inline QuestionSet generate_parity_set(size_t n, uint64_t seed) {
    QuestionSet set;
    set.chance_level = 0.5;
    set.provenance = strfmt("parity n=%zu seed=%llu", n, static_cast<unsigned long long>(seed));
    std::mt19937_64 rng(seed);
    std::vector<std::string> seen;
    while (set.questions.size() < n) {
        Question q = make_parity_question(rng);
        if (std::find(seen.begin(), seen.end(), q.id) != seen.end()) continue;
        seen.push_back(q.id);
        set.questions.push_back(std::move(q));
    }
    set.validate();
    return set;
}

inline QuestionSet generate_divisibility_set(size_t n, uint64_t seed) {
    QuestionSet set;
    set.chance_level = 0.5;
    set.provenance = strfmt("div8 n=%zu seed=%llu", n, static_cast<unsigned long long>(seed));
    std::mt19937_64 rng(seed);
    std::vector<std::string> seen;
    while (set.questions.size() < n) {
        Question q = make_divisibility_question(rng);
        if (std::find(seen.begin(), seen.end(), q.id) != seen.end()) continue;
        seen.push_back(q.id);
        set.questions.push_back(std::move(q));
    }
    set.validate();
    return set;
}

// Fictitious city-latitude pairs: a context block of "NAME: LAT" lines with
// distinct 4-letter names, plus one question per pair answerable from the
// context alone. The correct option string equals the context entry.
inline std::pair<std::string, QuestionSet> make_fictitious_context(size_t n_pairs,
                                                                   std::mt19937_64& rng,
                                                                   double separation_fraction =
                                                                       0.5) {
    if (n_pairs < 2) throw std::invalid_argument("fictitious context needs at least 2 pairs");
    std::uniform_int_distribution<int> letter(0, 25);
    std::uniform_real_distribution<double> lat_dist(-60.0, 60.0);

    std::vector<std::string> names;
    std::vector<double> lats;
    int attempts = 0;
    while (names.size() < n_pairs) {
        if (++attempts > static_cast<int>(n_pairs) * 200)
            throw std::runtime_error("fictitious name generation exhausted retries");
        std::string name;
        for (int i = 0; i < 4; ++i) name += static_cast<char>('A' + letter(rng));
        if (std::find(names.begin(), names.end(), name) != names.end()) continue;
        // Round to the rendered precision so the context entry and the
        // correct option are the same string; resample near-zero values.
        double lat = std::round(lat_dist(rng) * 10.0) / 10.0;
        if (std::abs(lat) < 0.1) continue;
        names.push_back(name);
        lats.push_back(lat);
    }

    std::string context;
    for (size_t i = 0; i < n_pairs; ++i) {
        context += names[i] + ": " + render_latitude(lats[i]);
        if (i + 1 < n_pairs) context += "\n";
    }

    QuestionSet set;
    set.chance_level = 0.5;
    set.provenance = strfmt("fictitious n=%zu", n_pairs);
    for (size_t i = 0; i < n_pairs; ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 100)
                throw std::runtime_error("fictitious foil generation exhausted retries");
            try {
                auto [options, correct] = latitude_options(lats[i], separation_fraction, rng);
                Question q;
                q.id = "fict:" + names[i];
                q.stem = "What is the latitude of " + names[i] + "?";
                q.options = std::move(options);
                q.correct_index = correct;
                q.context_block = context;
                q.domain_tag = Domain::fictitious_latitude;
                q.validate();
                set.questions.push_back(std::move(q));
                break;
            } catch (const std::runtime_error&) {
                continue;  // rare rendering collision, redraw the foil sign
            }
        }
    }
    set.validate();
    return {context, set};
}

// Loads a 4-choice dataset: one JSON record per line with fields
// {id, question, options[4], answer_index}.
inline QuestionSet load_mc_dataset(const std::string& path, Domain domain = Domain::simpleqa_mc) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open MC dataset: " + path);
    QuestionSet set;
    set.chance_level = 0.25;
    set.provenance = path;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(strfmt("MC dataset line %zu: bad JSON (%s)", line_no, e.what()));
        }
        if (!rec.contains("id") || !rec.contains("question") || !rec.contains("options") ||
            !rec.contains("answer_index"))
            throw std::runtime_error(strfmt("MC dataset line %zu: missing required field", line_no));
        Question q;
        q.id = rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump();
        q.stem = rec["question"].get<std::string>();
        for (const auto& opt : rec["options"]) q.options.push_back(opt.get<std::string>());
        if (q.options.size() != 4)
            throw std::runtime_error(
                strfmt("MC dataset line %zu: expected 4 options, got %zu", line_no, q.options.size()));
        q.correct_index = rec["answer_index"].get<int>();
        q.domain_tag = domain;
        try {
            q.validate();
        } catch (const std::exception& e) {
            throw std::runtime_error(strfmt("MC dataset line %zu: %s", line_no, e.what()));
        }
        set.questions.push_back(std::move(q));
    }
    set.validate();
    return set;
}

struct ProbeOutcome {
    double accuracy = 0.0;
    double failure_fraction = 0.0;
};

struct SeparationResult {
    double separation = 0.0;
    double measured_accuracy = 0.0;
    int iterations = 0;
};

// Bisects the foil separation until probed turn-1 accuracy lands within
// tolerance of the target. The probe maps a candidate question set to
// measured accuracy plus the fraction of failed trials; accuracy is assumed
// nondecreasing in separation (wider foils are easier).
template <typename Probe>
SeparationResult tune_separation(Probe&& probe, const std::vector<CityRow>& cities,
                                 double target_accuracy, double tolerance, uint64_t seed) {
    if (target_accuracy <= 0.5 || target_accuracy >= 1.0)
        throw std::invalid_argument("target accuracy must lie in (chance, 1)");
    if (cities.size() < 100) throw std::invalid_argument("separation tuning needs >= 100 cities");

    double lo = 0.01, hi = 0.5;
    SeparationResult result;
    for (int iter = 1; iter <= 12; ++iter) {
        double mid = 0.5 * (lo + hi);
        QuestionSet set = generate_latitude_set(cities, mid, seed, Domain::latitude_difficult);
        ProbeOutcome out = probe(set);
        if (out.failure_fraction > 0.10)
            throw std::runtime_error(strfmt(
                "separation tuning aborted: %.0f%% of probe trials failed at separation %.4f",
                out.failure_fraction * 100.0, mid));
        result = {mid, out.accuracy, iter};
        if (std::abs(out.accuracy - target_accuracy) <= tolerance) return result;
        if (out.accuracy > target_accuracy)
            hi = mid;
        else
            lo = mid;
    }
    return result;
}

}  // namespace twoturn
