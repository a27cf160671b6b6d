#pragma once

// Trial-record persistence: line-delimited JSON with stable field order so
// identical runs produce byte-identical files, plus the run manifest. The
// manifest is the only artifact that carries timestamps.

#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "twoturn/types.hpp"

namespace twoturn {

using ordered_json = nlohmann::ordered_json;

inline ordered_json record_to_json(const TrialRecord& r) {
    ordered_json j;
    j["question_id"] = r.question_id;
    j["display"] = to_string(r.condition.display);
    j["advice"] = to_string(r.condition.advice);
    j["advice_accuracy"] = r.condition.advice_accuracy;
    j["attribution"] = to_string(r.condition.attribution);
    j["turn1_choice"] = r.turn1_choice;
    j["turn1_confidence"] = r.turn1_confidence.probs;
    j["displayed_turn1"] = r.displayed_turn1;
    if (r.advice.advised_index.has_value())
        j["advised_index"] = *r.advice.advised_index;
    else
        j["advised_index"] = nullptr;
    j["stated_accuracy"] = r.advice.stated_accuracy;
    j["turn2_choice"] = r.turn2_choice;
    j["turn2_confidence"] = r.turn2_confidence.probs;
    j["changed_mind"] = r.changed_mind;
    j["changed_initial_answer"] = r.changed_initial_answer;
    j["raw_turn1"] = r.raw_turn1;
    j["raw_turn2"] = r.raw_turn2;
    j["parse_ok"] = r.parse_ok;
    j["backend_id"] = r.backend_id;
    j["error"] = r.error;
    return j;
}

inline TrialRecord record_from_json(const ordered_json& j) {
    TrialRecord r;
    r.question_id = j.at("question_id").get<std::string>();
    r.condition.display = display_from_string(j.at("display").get<std::string>());
    r.condition.advice = advice_from_string(j.at("advice").get<std::string>());
    r.condition.advice_accuracy = j.at("advice_accuracy").get<double>();
    r.condition.attribution = attribution_from_string(j.at("attribution").get<std::string>());
    r.turn1_choice = j.at("turn1_choice").get<int>();
    r.turn1_confidence.probs = j.at("turn1_confidence").get<std::vector<double>>();
    r.displayed_turn1 = j.at("displayed_turn1").get<std::string>();
    if (!j.at("advised_index").is_null()) r.advice.advised_index = j.at("advised_index").get<int>();
    r.advice.stated_accuracy = j.at("stated_accuracy").get<double>();
    r.turn2_choice = j.at("turn2_choice").get<int>();
    r.turn2_confidence.probs = j.at("turn2_confidence").get<std::vector<double>>();
    r.changed_mind = j.at("changed_mind").get<bool>();
    r.changed_initial_answer = j.at("changed_initial_answer").get<bool>();
    r.raw_turn1 = j.at("raw_turn1").get<std::map<std::string, double>>();
    r.raw_turn2 = j.at("raw_turn2").get<std::map<std::string, double>>();
    r.parse_ok = j.at("parse_ok").get<bool>();
    r.backend_id = j.at("backend_id").get<std::string>();
    r.error = j.value("error", std::string{});
    return r;
}

inline void append_records(const std::string& path, const std::vector<TrialRecord>& records) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open record file for append: " + path);
    for (const auto& r : records) out << record_to_json(r).dump() << "\n";
    if (!out) throw std::runtime_error("write failure on record file: " + path);
}

inline std::vector<TrialRecord> read_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open record file: " + path);
    std::vector<TrialRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json(ordered_json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(
                strfmt("record file %s line %zu: %s", path.c_str(), line_no, e.what()));
        }
    }
    return records;
}

// Keys of records already on disk, for resume-safe reruns. A missing file
// simply means nothing has run yet.
inline std::set<std::string> existing_record_keys(const std::string& path) {
    std::set<std::string> keys;
    if (!std::filesystem::exists(path)) return keys;
    for (const auto& r : read_records(path)) keys.insert(r.key());
    return keys;
}

struct RunCounts {
    size_t attempted = 0;
    size_t completed = 0;
    size_t parse_failures = 0;
    size_t backend_failures = 0;
    size_t skipped_existing = 0;
};

struct RunManifest {
    std::string run_id;
    std::string created_at;  // wall-clock; lives only here, never in records
    std::string dataset_provenance;
    size_t n_questions = 0;
    double chance_level = 0.5;
    std::vector<std::string> condition_keys;
    std::string backend_id;
    double tau = 1.0;
    uint64_t seed = 0;
    RunCounts counts;
    std::map<std::string, std::string> artifacts;  // name -> path
    std::map<std::string, std::string> stages;     // stage -> done | skipped | failed

    ordered_json to_json() const {
        ordered_json j;
        j["run_id"] = run_id;
        j["created_at"] = created_at;
        j["dataset_provenance"] = dataset_provenance;
        j["n_questions"] = n_questions;
        j["chance_level"] = chance_level;
        j["condition_keys"] = condition_keys;
        j["backend_id"] = backend_id;
        j["tau"] = tau;
        j["seed"] = seed;
        j["counts"] = {{"attempted", counts.attempted},
                       {"completed", counts.completed},
                       {"parse_failures", counts.parse_failures},
                       {"backend_failures", counts.backend_failures},
                       {"skipped_existing", counts.skipped_existing}};
        j["artifacts"] = artifacts;
        j["stages"] = stages;
        return j;
    }

    static RunManifest from_json(const ordered_json& j) {
        RunManifest m;
        m.run_id = j.at("run_id").get<std::string>();
        m.created_at = j.value("created_at", std::string{});
        m.dataset_provenance = j.value("dataset_provenance", std::string{});
        m.n_questions = j.value("n_questions", size_t{0});
        m.chance_level = j.value("chance_level", 0.5);
        m.condition_keys = j.value("condition_keys", std::vector<std::string>{});
        m.backend_id = j.value("backend_id", std::string{});
        m.tau = j.value("tau", 1.0);
        m.seed = j.value("seed", uint64_t{0});
        if (j.contains("counts")) {
            const auto& c = j["counts"];
            m.counts.attempted = c.value("attempted", size_t{0});
            m.counts.completed = c.value("completed", size_t{0});
            m.counts.parse_failures = c.value("parse_failures", size_t{0});
            m.counts.backend_failures = c.value("backend_failures", size_t{0});
            m.counts.skipped_existing = c.value("skipped_existing", size_t{0});
        }
        m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
        m.stages = j.value("stages", std::map<std::string, std::string>{});
        return m;
    }
};

inline void save_manifest(const RunManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << m.to_json().dump(2) << "\n";
}

inline RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    ordered_json j;
    in >> j;
    return RunManifest::from_json(j);
}

}  // namespace twoturn
