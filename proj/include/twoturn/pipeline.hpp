#pragma once

// Config-driven pipeline: validates a single JSON config, then runs dataset
// prep, optional calibration, the experiment, and the requested analyses,
// recording every artifact in the run manifest. Completed runs are no-ops;
// interrupted runs resume at the first unfinished stage.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "twoturn/backend.hpp"
#include "twoturn/calibration.hpp"
#include "twoturn/dataset.hpp"
#include "twoturn/paradigm.hpp"
#include "twoturn/records.hpp"
#include "twoturn/report.hpp"
#include "twoturn/wire.hpp"

namespace twoturn {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PipelineConfig {
    std::string run_id;
    std::string out_dir;
    uint64_t seed = 1;

    std::string dataset_kind;  // latitude | parity | divisibility | fictitious | mc_file
    std::string dataset_path;
    size_t n_questions = 0;  // 0 keeps everything the source provides
    double separation = 0.1;
    size_t context_pairs = 16;

    std::vector<Display> displays;
    std::vector<Advice> advices;
    std::vector<double> accuracies;
    Attribution attribution = Attribution::Self;

    std::string backend_kind;  // simulated | wire
    AgentParams agent;
    WireConfig wire;

    bool calibrate_enabled = false;
    size_t calibration_bins = 10;
    double tau = 1.0;
    size_t parallel = 1;
    std::vector<std::string> analyses;
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const std::string& name,
                                           const std::string& scope) {
    if (!j.contains(name))
        throw ConfigError("config field " + scope + name + ": missing");
    return j.at(name);
}

template <typename T>
T field_as(const nlohmann::json& j, const std::string& name, const std::string& scope) {
    try {
        return require_field(j, name, scope).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field " + scope + name + ": wrong type");
    }
}

template <typename T>
T field_or(const nlohmann::json& j, const std::string& name, const std::string& scope,
           T fallback) {
    if (!j.contains(name)) return fallback;
    try {
        return j.at(name).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field " + scope + name + ": wrong type");
    }
}

inline std::string iso_now() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

inline const std::set<std::string>& known_analyses() {
    static const std::set<std::string> names = {"com",     "confidence", "observer",
                                                "sigmoid", "twostage",   "report"};
    return names;
}

inline PipelineConfig parse_pipeline_config(const nlohmann::json& j) {
    PipelineConfig cfg;
    cfg.run_id = detail::field_as<std::string>(j, "run_id", "");
    cfg.out_dir = detail::field_as<std::string>(j, "out_dir", "");
    cfg.seed = detail::field_or<uint64_t>(j, "seed", "", 1);
    cfg.tau = detail::field_or<double>(j, "tau", "", 1.0);
    cfg.parallel = detail::field_or<size_t>(j, "parallel", "", 1);

    const auto& ds = detail::require_field(j, "dataset", "");
    cfg.dataset_kind = detail::field_as<std::string>(ds, "kind", "dataset.");
    cfg.dataset_path = detail::field_or<std::string>(ds, "path", "dataset.", "");
    cfg.n_questions = detail::field_or<size_t>(ds, "n_questions", "dataset.", 0);
    cfg.separation = detail::field_or<double>(ds, "separation", "dataset.", 0.1);
    cfg.context_pairs = detail::field_or<size_t>(ds, "context_pairs", "dataset.", 16);
    const std::set<std::string> kinds = {"latitude", "parity", "divisibility", "fictitious",
                                         "mc_file"};
    if (!kinds.count(cfg.dataset_kind))
        throw ConfigError("config field dataset.kind: unknown kind '" + cfg.dataset_kind + "'");
    if ((cfg.dataset_kind == "latitude" || cfg.dataset_kind == "mc_file") &&
        cfg.dataset_path.empty())
        throw ConfigError("config field dataset.path: required for kind " + cfg.dataset_kind);
    if ((cfg.dataset_kind == "parity" || cfg.dataset_kind == "divisibility") &&
        cfg.n_questions == 0)
        throw ConfigError("config field dataset.n_questions: required for kind " +
                          cfg.dataset_kind);

    const auto& cond = detail::require_field(j, "conditions", "");
    for (const auto& s :
         detail::field_as<std::vector<std::string>>(cond, "displays", "conditions.")) {
        try {
            cfg.displays.push_back(display_from_string(s));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config field conditions.displays: ") + e.what());
        }
    }
    for (const auto& s :
         detail::field_as<std::vector<std::string>>(cond, "advices", "conditions.")) {
        try {
            cfg.advices.push_back(advice_from_string(s));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config field conditions.advices: ") + e.what());
        }
    }
    cfg.accuracies = detail::field_as<std::vector<double>>(cond, "accuracies", "conditions.");
    std::string attr = detail::field_or<std::string>(cond, "attribution", "conditions.", "self");
    try {
        cfg.attribution = attribution_from_string(attr);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config field conditions.attribution: ") + e.what());
    }

    const auto& be = detail::require_field(j, "backend", "");
    cfg.backend_kind = detail::field_as<std::string>(be, "kind", "backend.");
    if (cfg.backend_kind == "simulated") {
        const std::string scope = "backend.";
        cfg.agent.competence = detail::field_or<double>(be, "competence", scope, 0.75);
        cfg.agent.evidence_strength =
            detail::field_or<double>(be, "evidence_strength", scope, 1.0);
        cfg.agent.evidence_noise_sd =
            detail::field_or<double>(be, "evidence_noise_sd", scope, 0.0);
        cfg.agent.gain_opposite = detail::field_or<double>(be, "gain_opposite", scope, 1.0);
        cfg.agent.gain_same = detail::field_or<double>(be, "gain_same", scope, 1.0);
        cfg.agent.shown_boost = detail::field_or<double>(be, "shown_boost", scope, 0.0);
        cfg.agent.update_noise_sd = detail::field_or<double>(be, "update_noise_sd", scope, 0.0);
        cfg.agent.obey_argmax = detail::field_or<bool>(be, "obey_argmax", scope, true);
        try {
            cfg.agent.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config field backend: ") + e.what());
        }
    } else if (cfg.backend_kind == "wire") {
        cfg.wire.base_url = detail::field_or<std::string>(be, "base_url", "backend.", "");
        cfg.wire.model = detail::field_or<std::string>(be, "model", "backend.", "");
        cfg.wire.cache_dir = detail::field_or<std::string>(be, "cache_dir", "backend.", "");
        cfg.wire.max_retries = detail::field_or<int>(be, "max_retries", "backend.", 5);
    } else {
        throw ConfigError("config field backend.kind: unknown kind '" + cfg.backend_kind + "'");
    }

    if (j.contains("calibration")) {
        const auto& cal = j.at("calibration");
        cfg.calibrate_enabled = detail::field_or<bool>(cal, "enabled", "calibration.", true);
        cfg.calibration_bins = detail::field_or<size_t>(cal, "n_bins", "calibration.", 10);
    }
    cfg.analyses =
        detail::field_or<std::vector<std::string>>(j, "analyses", "", std::vector<std::string>{});
    for (const auto& a : cfg.analyses)
        if (!known_analyses().count(a))
            throw ConfigError("config field analyses: unknown analysis '" + a + "'");
    return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_pipeline_config(j);
}

inline ordered_json question_to_json(const Question& q) {
    ordered_json j;
    j["id"] = q.id;
    j["stem"] = q.stem;
    j["options"] = q.options;
    j["correct_index"] = q.correct_index;
    if (q.context_block.has_value()) j["context_block"] = *q.context_block;
    j["domain"] = to_string(q.domain_tag);
    return j;
}

inline Question question_from_json(const nlohmann::json& j) {
    Question q;
    q.id = j.at("id").get<std::string>();
    q.stem = j.at("stem").get<std::string>();
    q.options = j.at("options").get<std::vector<std::string>>();
    q.correct_index = j.at("correct_index").get<int>();
    if (j.contains("context_block") && !j.at("context_block").is_null())
        q.context_block = j.at("context_block").get<std::string>();
    q.domain_tag = domain_from_string(j.at("domain").get<std::string>());
    q.validate();
    return q;
}

inline void save_questions(const QuestionSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    ordered_json header;
    header["chance_level"] = set.chance_level;
    header["provenance"] = set.provenance;
    out << header.dump() << "\n";
    for (const auto& q : set.questions) out << question_to_json(q).dump() << "\n";
}

inline QuestionSet load_questions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open question file " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("question file is empty: " + path);
    QuestionSet set;
    try {
        nlohmann::json header = nlohmann::json::parse(line);
        set.chance_level = header.at("chance_level").get<double>();
        set.provenance = header.at("provenance").get<std::string>();
        size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            set.questions.push_back(question_from_json(nlohmann::json::parse(line)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": bad question line: " + e.what());
    }
    set.validate();
    return set;
}

// Builds the question set named by the config. Sets capped to n_questions
// keep the source order (first n).
inline QuestionSet build_dataset(const PipelineConfig& cfg) {
    QuestionSet set;
    if (cfg.dataset_kind == "latitude") {
        auto cities = load_city_dataset(cfg.dataset_path);
        set = generate_latitude_set(cities, cfg.separation, cfg.seed);
    } else if (cfg.dataset_kind == "parity") {
        set = generate_parity_set(cfg.n_questions, cfg.seed);
    } else if (cfg.dataset_kind == "divisibility") {
        set = generate_divisibility_set(cfg.n_questions, cfg.seed);
    } else if (cfg.dataset_kind == "fictitious") {
        auto rng = trial_rng(cfg.seed, "fictitious", "dataset");
        auto [context, qs] = make_fictitious_context(cfg.context_pairs, rng, cfg.separation);
        set = qs;
    } else if (cfg.dataset_kind == "mc_file") {
        set = load_mc_dataset(cfg.dataset_path);
    } else {
        throw ConfigError("config field dataset.kind: unknown kind '" + cfg.dataset_kind + "'");
    }
    if (cfg.n_questions > 0 && set.questions.size() > cfg.n_questions)
        set.questions.resize(cfg.n_questions);
    if (set.questions.empty()) throw std::runtime_error("dataset produced no questions");
    set.validate();
    return set;
}

inline std::unique_ptr<Backend> build_backend(const PipelineConfig& cfg) {
    if (cfg.backend_kind == "simulated") return std::make_unique<SimulatedAgent>(cfg.agent);
    return std::make_unique<WireBackend>(cfg.wire);
}

struct CalibrationOutcome {
    CalibrationResult result;
    size_t n_used = 0;
    size_t n_failed = 0;
};

// One turn-1 pass per question through the backend, then temperature fit on
// the resulting logit sets against correctness.
inline CalibrationOutcome run_calibration_pass(Backend& backend, const QuestionSet& set,
                                               uint64_t seed, size_t n_bins) {
    std::vector<std::vector<double>> logit_sets;
    std::vector<bool> outcomes;
    size_t failed = 0;
    for (const auto& q : set.questions) {
        auto rng = trial_rng(seed, q.id, "calibrate");
        std::string prompt = render_turn1_prompt(q);
        TurnOutcome out = backend.first_turn(q, prompt, rng);
        int choice = out.ok ? parse_answer(out.text, q.options.size(), Turn::first) : -1;
        if (!out.ok || choice < 0) {
            ++failed;
            continue;
        }
        logit_sets.push_back(logits_to_vector(out.logits, q.options.size()));
        outcomes.push_back(choice == q.correct_index);
    }
    if (logit_sets.size() < 10)
        throw std::runtime_error(strfmt("calibration pass kept %zu questions; need at least 10",
                                        logit_sets.size()));
    CalibrationOutcome res;
    res.result = calibrate(logit_sets, outcomes, TemperatureGrid{}, n_bins, set.chance_level);
    res.n_used = logit_sets.size();
    res.n_failed = failed;
    return res;
}

inline std::string csv_calibration(const CalibrationOutcome& out) {
    std::string s = detail::csv_join({"tau_star", "ece", "brier", "auroc", "n_used", "n_failed"});
    s += detail::csv_join({detail::fmt_num(out.result.tau_star), detail::fmt_num(out.result.ece),
                           detail::fmt_num(out.result.brier), detail::fmt_num(out.result.auroc),
                           std::to_string(out.n_used), std::to_string(out.n_failed)});
    s += detail::csv_join({"bin_lo", "bin_hi", "mean_conf", "accuracy", "count", ""});
    for (const auto& b : out.result.bins)
        s += detail::csv_join({detail::fmt_num(b.bin_lo), detail::fmt_num(b.bin_hi),
                               detail::fmt_num(b.mean_conf), detail::fmt_num(b.accuracy),
                               std::to_string(b.count), ""});
    return s;
}

struct ExecResult {
    RunManifest manifest;
    std::string manifest_path;
    bool up_to_date = false;
};

namespace detail {

inline void write_text(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << bytes;
}

inline std::string config_digest(const nlohmann::json& j) {
    std::string canon = j.dump();
    return strfmt("%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
}

}  // namespace detail

// Runs (or resumes) the pipeline described by the config file. Stage status
// lives in the manifest: done stages are skipped on rerun, failed stages are
// marked before the error propagates, and a fully completed manifest with
// the same config digest returns up_to_date without touching anything.
inline ExecResult execute_manifest(const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file " + config_path);
    nlohmann::json raw;
    try {
        in >> raw;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    PipelineConfig cfg = parse_pipeline_config(raw);
    std::string digest = detail::config_digest(raw);

    std::filesystem::create_directories(cfg.out_dir);
    ExecResult res;
    res.manifest_path = (std::filesystem::path(cfg.out_dir) / "manifest.json").string();

    std::vector<std::string> stage_names = {"dataset", "calibrate", "run"};
    for (const auto& a : cfg.analyses) stage_names.push_back("analyze:" + a);

    RunManifest& m = res.manifest;
    if (std::filesystem::exists(res.manifest_path)) {
        m = load_manifest(res.manifest_path);
        auto it = m.artifacts.find("config_digest");
        if (it == m.artifacts.end() || it->second != digest)
            throw ConfigError("out_dir holds a manifest for a different config; "
                              "use a fresh out_dir or restore the original config");
        bool all_done = true;
        for (const auto& name : stage_names) {
            auto st = m.stages.find(name);
            if (st == m.stages.end() || (st->second != "done" && st->second != "skipped"))
                all_done = false;
        }
        if (all_done) {
            res.up_to_date = true;
            return res;
        }
    } else {
        m.run_id = cfg.run_id;
        m.created_at = detail::iso_now();
        m.seed = cfg.seed;
        m.artifacts["config_digest"] = digest;
        m.artifacts["config"] = config_path;
    }

    auto stage_done = [&](const std::string& name) {
        auto it = m.stages.find(name);
        return it != m.stages.end() && (it->second == "done" || it->second == "skipped");
    };
    auto run_stage = [&](const std::string& name, auto&& fn, bool skip = false) {
        if (stage_done(name)) return;
        if (skip) {
            m.stages[name] = "skipped";
            save_manifest(m, res.manifest_path);
            return;
        }
        try {
            fn();
            m.stages[name] = "done";
        } catch (const std::exception& e) {
            m.stages[name] = std::string("failed: ") + e.what();
            save_manifest(m, res.manifest_path);
            throw;
        }
        save_manifest(m, res.manifest_path);
    };

    std::string questions_path = (std::filesystem::path(cfg.out_dir) / "questions.jsonl").string();
    QuestionSet questions;
    run_stage("dataset", [&] {
        questions = build_dataset(cfg);
        save_questions(questions, questions_path);
        m.artifacts["questions"] = questions_path;
        m.dataset_provenance = questions.provenance;
        m.n_questions = questions.questions.size();
        m.chance_level = questions.chance_level;
    });
    if (questions.questions.empty()) questions = load_questions(questions_path);

    auto backend = build_backend(cfg);
    m.backend_id = backend->id();

    run_stage(
        "calibrate",
        [&] {
            CalibrationOutcome cal =
                run_calibration_pass(*backend, questions, cfg.seed, cfg.calibration_bins);
            std::string path =
                (std::filesystem::path(cfg.out_dir) / "calibration.csv").string();
            detail::write_text(path, csv_calibration(cal));
            m.artifacts["calibration"] = path;
            m.tau = cal.result.tau_star;
        },
        /*skip=*/!cfg.calibrate_enabled);
    if (!cfg.calibrate_enabled) m.tau = cfg.tau;

    std::string records_path = (std::filesystem::path(cfg.out_dir) / "records.jsonl").string();
    run_stage("run", [&] {
        auto conditions =
            condition_matrix(cfg.displays, cfg.advices, cfg.accuracies, cfg.attribution);
        std::vector<std::string> keys;
        for (const auto& c : conditions) keys.push_back(c.key());
        m.condition_keys = keys;
        RunConfig rc;
        rc.seed = cfg.seed;
        rc.tau = m.tau;
        rc.records_path = records_path;
        rc.parallel = cfg.parallel;
        m.counts = run_experiment(*backend, questions, conditions, rc);
        m.artifacts["records"] = records_path;
    });

    for (const auto& name : cfg.analyses) {
        run_stage("analyze:" + name, [&] {
            auto records = read_records(records_path);
            auto emit_one = [&](const std::string& artifact, const std::string& bytes) {
                std::string path = (std::filesystem::path(cfg.out_dir) / artifact).string();
                detail::write_text(path, bytes);
                m.artifacts[artifact] = path;
            };
            if (name == "com") {
                emit_one("analysis_com.csv", csv_com_by_condition(records));
            } else if (name == "confidence") {
                emit_one("analysis_confidence_vs_com.csv", csv_confidence_vs_com(records));
            } else if (name == "observer") {
                emit_one("analysis_observed_vs_ideal.csv", csv_observed_vs_ideal(records));
                emit_one("analysis_oucs.csv", csv_oucs_table(records));
                emit_one("analysis_overweighting.csv", csv_overweighting(records));
            } else if (name == "sigmoid") {
                emit_one("analysis_sigmoid_fits.csv", csv_sigmoid_fits(records));
            } else if (name == "twostage") {
                emit_one("analysis_two_stage_weights.csv", csv_two_stage_weights(records));
            } else if (name == "report") {
                std::string dir = (std::filesystem::path(cfg.out_dir) / "report").string();
                auto paths = emit_report(records, dir);
                for (const auto& [n, p] : paths) m.artifacts["report/" + n] = p;
            }
        });
    }
    save_manifest(m, res.manifest_path);
    return res;
}

// Recomputes counts and analysis artifacts from the record file and diffs
// them against the manifest. Returns human-readable problem descriptions;
// empty means the run checks out.
inline std::vector<std::string> verify_run(const std::string& out_dir) {
    std::vector<std::string> problems;
    std::string manifest_path = (std::filesystem::path(out_dir) / "manifest.json").string();
    if (!std::filesystem::exists(manifest_path))
        return {"manifest.json missing in " + out_dir};
    RunManifest m = load_manifest(manifest_path);

    auto rec_it = m.artifacts.find("records");
    if (rec_it == m.artifacts.end()) return {"manifest records no record file artifact"};
    std::vector<TrialRecord> records;
    try {
        records = read_records(rec_it->second);
    } catch (const std::exception& e) {
        return {std::string("record file unreadable: ") + e.what()};
    }

    size_t rows = records.size();
    size_t accounted = m.counts.completed + m.counts.parse_failures +
                       m.counts.backend_failures + m.counts.skipped_existing;
    if (rows != accounted)
        problems.push_back(strfmt(
            "record rows (%zu) != completed+failures+skipped in manifest (%zu)", rows,
            accounted));
    if (m.counts.attempted !=
        m.counts.completed + m.counts.parse_failures + m.counts.backend_failures)
        problems.push_back("manifest attempted count does not decompose into "
                           "completed+parse_failures+backend_failures");

    std::set<std::string> seen;
    std::set<std::string> allowed(m.condition_keys.begin(), m.condition_keys.end());
    for (const auto& r : records) {
        if (!seen.insert(r.key()).second)
            problems.push_back("duplicate record key: " + r.key());
        if (!allowed.empty() && !allowed.count(r.condition.key()))
            problems.push_back("record condition not in manifest: " + r.condition.key());
    }
    if (!allowed.empty() && m.n_questions > 0) {
        size_t expect = m.n_questions * allowed.size();
        auto run_it = m.stages.find("run");
        if (run_it != m.stages.end() && run_it->second == "done" && rows != expect)
            problems.push_back(
                strfmt("run marked done but rows (%zu) != questions x conditions (%zu)", rows,
                       expect));
    }

    auto check_bytes = [&](const std::string& artifact, const std::string& expected) {
        auto it = m.artifacts.find(artifact);
        if (it == m.artifacts.end()) return;  // not emitted for this run
        std::ifstream in(it->second, std::ios::binary);
        if (!in) {
            problems.push_back(artifact + ": file missing");
            return;
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        if (ss.str() != expected) problems.push_back(artifact + ": content differs on recompute");
    };
    if (m.artifacts.count("analysis_com.csv"))
        check_bytes("analysis_com.csv", csv_com_by_condition(records));
    if (m.artifacts.count("analysis_confidence_vs_com.csv"))
        check_bytes("analysis_confidence_vs_com.csv", csv_confidence_vs_com(records));
    if (m.artifacts.count("analysis_observed_vs_ideal.csv"))
        check_bytes("analysis_observed_vs_ideal.csv", csv_observed_vs_ideal(records));
    if (m.artifacts.count("analysis_oucs.csv"))
        check_bytes("analysis_oucs.csv", csv_oucs_table(records));
    if (m.artifacts.count("analysis_overweighting.csv"))
        check_bytes("analysis_overweighting.csv", csv_overweighting(records));
    if (m.artifacts.count("analysis_sigmoid_fits.csv"))
        check_bytes("analysis_sigmoid_fits.csv", csv_sigmoid_fits(records));
    if (m.artifacts.count("analysis_two_stage_weights.csv"))
        check_bytes("analysis_two_stage_weights.csv", csv_two_stage_weights(records));

    bool has_report = false;
    for (const auto& [name, path] : m.artifacts)
        if (name.rfind("report/", 0) == 0) has_report = true;
    if (has_report) {
        std::string dir = (std::filesystem::path(out_dir) / "report").string();
        for (const auto& bad : verify_report(records, dir))
            problems.push_back("report/" + bad + ": content differs on recompute");
    }
    return problems;
}

}  // namespace twoturn
