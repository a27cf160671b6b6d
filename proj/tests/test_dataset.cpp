#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "twoturn/dataset.hpp"
#include "twoturn/numeric.hpp"

using namespace twoturn;

namespace {

const std::string kDataDir = std::string(TWOTURN_TEST_DIR) + "/data";

std::string write_temp(const std::string& name, const std::string& content) {
    auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path.string();
}

}  // namespace

TEST_CASE("city loader reads the sample with quoting and mixed-case header") {
    auto cities = load_city_dataset(kDataDir + "/cities_sample.csv");
    REQUIRE(cities.size() >= 110);
    REQUIRE(cities[0].name == "Tokyo");
    REQUIRE(cities[0].latitude == Catch::Approx(35.6897));
    bool found_quoted = false;
    for (const auto& c : cities)
        if (c.name == "Washington, D.C.") {
            found_quoted = true;
            REQUIRE(c.latitude == Catch::Approx(38.9047));
        }
    REQUIRE(found_quoted);
}

TEST_CASE("city loader respects max_rows") {
    auto cities = load_city_dataset(kDataDir + "/cities_sample.csv", 5);
    REQUIRE(cities.size() == 5);
}

TEST_CASE("city loader errors carry row numbers") {
    auto bad_lat = write_temp("bad_lat.csv", "city,lat\nParis,48.85\nNowhere,91.2\n");
    REQUIRE_THROWS_WITH(load_city_dataset(bad_lat), Catch::Matchers::ContainsSubstring("row 3"));
    auto bad_header = write_temp("bad_header.csv", "town,lat\nParis,48.85\n");
    REQUIRE_THROWS(load_city_dataset(bad_header));
    auto empty_name = write_temp("empty_name.csv", "city,lat\n,12.0\n");
    REQUIRE_THROWS(load_city_dataset(empty_name));
    REQUIRE_THROWS(load_city_dataset(kDataDir + "/does_not_exist.csv"));
}

TEST_CASE("latitude options pair truth with a proportional foil") {
    auto rng = trial_rng(7, "lat:test", "dataset");
    for (int i = 0; i < 200; ++i) {
        double lat = 35.7;
        auto [options, correct] = latitude_options(lat, 0.5, rng);
        REQUIRE(options.size() == 2);
        REQUIRE(options[static_cast<size_t>(correct)] == "35.7");
        double foil = std::stod(options[static_cast<size_t>(1 - correct)]);
        bool plus = std::abs(foil - 35.7 * 1.5) < 0.051;
        bool minus = std::abs(foil - 35.7 * 0.5) < 0.051;
        REQUIRE((plus || minus));
    }
}

TEST_CASE("latitude options randomize foil side and option order") {
    auto rng = trial_rng(7, "lat:test2", "dataset");
    std::set<std::string> seen;
    for (int i = 0; i < 64; ++i) {
        auto [options, correct] = latitude_options(-23.55, 0.5, rng);
        seen.insert(options[0] + "|" + options[1] + "|" + std::to_string(correct));
    }
    REQUIRE(seen.size() == 4);  // both foil signs x both orders
}

TEST_CASE("latitude options reject degenerate inputs") {
    auto rng = trial_rng(7, "lat:test3", "dataset");
    REQUIRE_THROWS_AS(latitude_options(35.0, 0.0, rng), std::invalid_argument);
    REQUIRE_THROWS_AS(latitude_options(0.05, 0.5, rng), std::invalid_argument);
    // 0.1% of 1.0 rounds to the same rendered value as the truth
    REQUIRE_THROWS_AS(latitude_options(1.0, 0.001, rng), std::runtime_error);
}

TEST_CASE("latitude question set skips near-equator cities and is reproducible") {
    auto cities = load_city_dataset(kDataDir + "/cities_sample.csv");
    auto set = generate_latitude_set(cities, 0.5, 11);
    set.validate();
    REQUIRE(set.chance_level == Catch::Approx(0.5));
    std::set<std::string> ids;
    for (const auto& q : set.questions) {
        REQUIRE(q.options.size() == 2);
        ids.insert(q.id);
        REQUIRE(q.id.rfind("lat:", 0) == 0);
        REQUIRE(q.stem.rfind("What is the latitude of ", 0) == 0);
    }
    REQUIRE(ids.size() == set.questions.size());
    REQUIRE(ids.count("lat:Pontianak") == 0);  // |lat| < 0.1
    REQUIRE(ids.count("lat:Tokyo") == 1);

    auto again = generate_latitude_set(cities, 0.5, 11);
    REQUIRE(again.questions.size() == set.questions.size());
    for (size_t i = 0; i < set.questions.size(); ++i) {
        REQUIRE(again.questions[i].options == set.questions[i].options);
        REQUIRE(again.questions[i].correct_index == set.questions[i].correct_index);
    }
}

TEST_CASE("parity questions contain exactly one even two-digit number") {
    auto set = generate_parity_set(50, 3);
    REQUIRE(set.questions.size() == 50);
    REQUIRE(set.chance_level == Catch::Approx(0.5));
    std::set<std::string> ids;
    for (const auto& q : set.questions) {
        ids.insert(q.id);
        REQUIRE(q.stem == "Which of the following numbers is even?");
        int n_even = 0;
        for (const auto& opt : q.options) {
            int v = std::stoi(opt);
            REQUIRE(v >= 10);
            REQUIRE(v <= 99);
            if (v % 2 == 0) ++n_even;
        }
        REQUIRE(n_even == 1);
        REQUIRE(std::stoi(q.options[static_cast<size_t>(q.correct_index)]) % 2 == 0);
    }
    REQUIRE(ids.size() == 50);
}

TEST_CASE("divisibility questions contain exactly one five-digit multiple of 8") {
    auto set = generate_divisibility_set(50, 5);
    REQUIRE(set.questions.size() == 50);
    for (const auto& q : set.questions) {
        REQUIRE(q.stem == "Which of the following numbers is divisible by 8?");
        int n_div = 0;
        for (const auto& opt : q.options) {
            long v = std::stol(opt);
            REQUIRE(v >= 10000);
            REQUIRE(v <= 99999);
            if (v % 8 == 0) ++n_div;
        }
        REQUIRE(n_div == 1);
        REQUIRE(std::stol(q.options[static_cast<size_t>(q.correct_index)]) % 8 == 0);
    }
}

TEST_CASE("fictitious context questions are answerable from the context block") {
    auto rng = trial_rng(9, "fict", "dataset");
    auto [context, set] = make_fictitious_context(8, rng);
    REQUIRE(set.questions.size() == 8);
    std::set<std::string> names;
    size_t lines = 1;
    for (char c : context)
        if (c == '\n') ++lines;
    REQUIRE(lines == 8);
    for (const auto& q : set.questions) {
        REQUIRE(q.context_block.has_value());
        REQUIRE(*q.context_block == context);
        std::string name = q.id.substr(5);  // "fict:NAME"
        REQUIRE(name.size() == 4);
        for (char c : name) {
            REQUIRE(c >= 'A');
            REQUIRE(c <= 'Z');
        }
        names.insert(name);
        const std::string& truth = q.options[static_cast<size_t>(q.correct_index)];
        REQUIRE(context.find(name + ": " + truth) != std::string::npos);
        double lat = std::stod(truth);
        REQUIRE(std::abs(lat) >= 0.1);
        REQUIRE(std::abs(lat) <= 60.0);
    }
    REQUIRE(names.size() == 8);
    REQUIRE_THROWS_AS(make_fictitious_context(1, rng), std::invalid_argument);
}

TEST_CASE("mc loader reads the four-choice sample") {
    auto set = load_mc_dataset(kDataDir + "/mc_sample.jsonl");
    REQUIRE(set.questions.size() == 6);
    REQUIRE(set.chance_level == Catch::Approx(0.25));
    REQUIRE(set.questions[0].id == "qa:rosenblatt-2010");
    REQUIRE(set.questions[0].options.size() == 4);
    REQUIRE(set.questions[0].correct_index == 0);
    REQUIRE(set.questions[0].domain_tag == Domain::simpleqa_mc);
}

TEST_CASE("mc loader reports the offending line") {
    auto bad = write_temp("bad_mc.jsonl",
                          "{\"id\":\"x\",\"question\":\"q\",\"options\":[\"a\",\"b\",\"c\","
                          "\"d\"],\"answer_index\":0}\n{\"id\":\"y\"}\n");
    REQUIRE_THROWS_WITH(load_mc_dataset(bad), Catch::Matchers::ContainsSubstring("line 2"));
    auto short_opts = write_temp(
        "short_mc.jsonl",
        "{\"id\":\"x\",\"question\":\"q\",\"options\":[\"a\",\"b\"],\"answer_index\":0}\n");
    REQUIRE_THROWS(load_mc_dataset(short_opts));
}

TEST_CASE("separation tuning bisects to the target accuracy") {
    auto cities = load_city_dataset(kDataDir + "/cities_sample.csv");
    // Synthetic probe: recover the separation from the rendered options and
    // map it through a known monotone accuracy curve with acc(0.0625)=0.75.
    auto probe = [](const QuestionSet& set) {
        std::vector<double> seps;
        for (const auto& q : set.questions) {
            double truth = std::stod(q.options[static_cast<size_t>(q.correct_index)]);
            double foil = std::stod(q.options[static_cast<size_t>(1 - q.correct_index)]);
            seps.push_back(std::abs(foil / truth - 1.0));
        }
        double sep = median(seps);
        return ProbeOutcome{0.5 + 0.45 * sep / (sep + 0.05), 0.0};
    };
    auto result = tune_separation(probe, cities, 0.75, 0.001, 21);
    REQUIRE(result.separation == Catch::Approx(0.0625).margin(0.01));
    REQUIRE(result.measured_accuracy == Catch::Approx(0.75).margin(0.02));
    REQUIRE(result.iterations <= 12);
}

TEST_CASE("separation tuning aborts on failing probes and tiny city lists") {
    auto cities = load_city_dataset(kDataDir + "/cities_sample.csv");
    auto failing = [](const QuestionSet&) { return ProbeOutcome{0.8, 0.2}; };
    REQUIRE_THROWS_WITH(tune_separation(failing, cities, 0.75, 0.001, 21),
                        Catch::Matchers::ContainsSubstring("aborted"));
    std::vector<CityRow> few(cities.begin(), cities.begin() + 50);
    auto ok = [](const QuestionSet&) { return ProbeOutcome{0.8, 0.0}; };
    REQUIRE_THROWS_AS(tune_separation(ok, few, 0.75, 0.001, 21), std::invalid_argument);
    REQUIRE_THROWS_AS(tune_separation(ok, cities, 0.4, 0.001, 21), std::invalid_argument);
}
