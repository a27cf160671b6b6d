// Command-line front end for the two-turn advice pipeline. Subcommands map
// onto the library modules; exit codes: 0 success, 1 usage, 2 data error,
// 3 backend error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "twoturn/behavmodel.hpp"
#include "twoturn/pipeline.hpp"

namespace {

using namespace twoturn;

int kExitSuccess = 0;
int kExitUsage = 1;
int kExitData = 2;
int kExitBackend = 3;

void write_or_print(const std::string& out_path, const std::string& bytes) {
    if (out_path.empty()) {
        std::fputs(bytes.c_str(), stdout);
        return;
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << bytes;
}

double chance_of(const std::vector<TrialRecord>& records) {
    for (const auto& r : records)
        if (r.parse_ok) return 1.0 / static_cast<double>(r.turn1_confidence.probs.size());
    throw std::runtime_error("record file has no parseable trials");
}

std::vector<BehavTarget> resolve_targets(const std::string& target) {
    if (target == "all")
        return {BehavTarget::conf_initial_option, BehavTarget::conf_final_option,
                BehavTarget::switch_choice};
    return {behav_target_from_string(target)};
}

std::vector<std::vector<BehavRow>> featurize_all(const std::vector<TrialRecord>& records,
                                                 const std::vector<BehavTarget>& targets,
                                                 double chance, size_t* clamps) {
    std::vector<std::vector<BehavRow>> data;
    for (BehavTarget t : targets) data.push_back(featurize(records, t, chance, clamps));
    return data;
}

ordered_json fit_summary_json(const ModelFit& fit, const ElpdResult& loo) {
    ordered_json j;
    j["model"] = to_string(fit.spec.name);
    ordered_json targets = ordered_json::array();
    for (BehavTarget t : fit.spec.targets) targets.push_back(to_string(t));
    j["targets"] = targets;
    j["joint"] = fit.spec.joint;
    j["n_obs"] = fit.n_obs;
    j["accept_rate"] = fit.accept_rate;
    j["diagnostics_ok"] = fit.diagnostics_ok;
    ordered_json params = ordered_json::array();
    for (size_t i = 0; i < fit.layout.size(); ++i) {
        Eigen::VectorXd col = fit.draws.col(static_cast<long>(i));
        std::vector<double> v(col.data(), col.data() + col.size());
        ordered_json p;
        p["name"] = fit.layout.names[i];
        p["map"] = fit.map_estimate[i];
        p["mean"] = mean(v);
        p["sd"] = std::sqrt(variance(v));
        p["q025"] = quantile(v, 0.025);
        p["q975"] = quantile(v, 0.975);
        p["rhat"] = fit.rhat[i];
        p["ess"] = fit.ess[i];
        params.push_back(p);
    }
    j["params"] = params;
    j["elpd_loo"] = loo.elpd;
    j["elpd_loo_se"] = loo.se;
    j["loo_reliable"] = loo.reliable;
    return j;
}

void print_fit_table(const ModelFit& fit) {
    std::printf("%-34s %9s %9s %9s %9s %7s %7s\n", "parameter", "mean", "sd", "2.5%", "97.5%",
                "rhat", "ess");
    for (size_t i = 0; i < fit.layout.size(); ++i) {
        Eigen::VectorXd col = fit.draws.col(static_cast<long>(i));
        std::vector<double> v(col.data(), col.data() + col.size());
        std::printf("%-34s %9.4f %9.4f %9.4f %9.4f %7.3f %7.0f\n", fit.layout.names[i].c_str(),
                    mean(v), std::sqrt(variance(v)), quantile(v, 0.025), quantile(v, 0.975),
                    fit.rhat[i], fit.ess[i]);
    }
    std::printf("acceptance %.3f, diagnostics %s\n", fit.accept_rate,
                fit.diagnostics_ok ? "ok" : "FAILED (rhat/ess gate)");
}

struct SamplerFlags {
    SamplerConfig cfg;
    void attach(CLI::App* cmd) {
        cmd->add_option("--chains", cfg.n_chains, "MCMC chains")->capture_default_str();
        cmd->add_option("--warmup", cfg.n_warmup, "warmup iterations per chain")
            ->capture_default_str();
        cmd->add_option("--draws", cfg.n_draws, "kept draws per chain")->capture_default_str();
        cmd->add_option("--map-starts", cfg.map_starts, "optimizer restarts")
            ->capture_default_str();
        cmd->add_option("--sampler-seed", cfg.seed, "sampler seed")->capture_default_str();
    }
};

int dispatch(int argc, char** argv) {
    CLI::App app{"two-turn advice paradigm harness"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate or import a question set");
    std::string gen_kind, gen_path, gen_out;
    size_t gen_n = 0, gen_pairs = 16;
    double gen_sep = 0.1;
    uint64_t gen_seed = 1;
    gen->add_option("--kind", gen_kind, "latitude|parity|divisibility|fictitious|mc_file")
        ->required();
    gen->add_option("--out", gen_out, "output questions.jsonl")->required();
    gen->add_option("--path", gen_path, "cities CSV or multiple-choice JSONL source");
    gen->add_option("--n", gen_n, "question count (cap for file sources)");
    gen->add_option("--separation", gen_sep, "latitude foil separation fraction")
        ->capture_default_str();
    gen->add_option("--context-pairs", gen_pairs, "fictitious context size")
        ->capture_default_str();
    gen->add_option("--seed", gen_seed, "generation seed")->capture_default_str();

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "turn-1 pass and temperature fit");
    std::string cal_config, cal_out;
    cal->add_option("--config", cal_config, "run config JSON")->required();
    cal->add_option("--out", cal_out, "write metrics CSV here (default stdout)");

    // run
    auto* run = app.add_subcommand("run", "execute a config end to end");
    std::string run_config;
    run->add_option("--config", run_config, "run config JSON")->required();

    // analyze
    auto* analyze = app.add_subcommand("analyze", "tables from a record file");
    analyze->require_subcommand(1);
    analyze->fallthrough();
    std::map<std::string, CLI::App*> analyze_subs;
    std::string an_records, an_out;
    for (const char* name : {"com", "confidence", "observer", "sigmoid", "twostage"})
        analyze_subs[name] = analyze->add_subcommand(name);
    analyze->add_option("--records", an_records, "records.jsonl")->required();
    analyze->add_option("--out", an_out, "output CSV (default stdout)");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit one behavioral model");
    std::string fit_records, fit_model_name = "D", fit_target = "all", fit_out;
    bool fit_independent = false;
    SamplerFlags fit_flags;
    fit_cmd->add_option("--records", fit_records, "records.jsonl")->required();
    fit_cmd->add_option("--model", fit_model_name, "A|B|C|D")->capture_default_str();
    fit_cmd->add_option("--target", fit_target,
                        "conf_initial_option|conf_final_option|switch|all")
        ->capture_default_str();
    fit_cmd->add_flag("--independent", fit_independent,
                      "per-target weights instead of shared ones");
    fit_cmd->add_option("--out", fit_out, "write fit summary JSON here");
    fit_flags.attach(fit_cmd);

    // compare
    auto* cmp = app.add_subcommand("compare", "fit several models and rank by ELPD-LOO");
    std::string cmp_records, cmp_models = "A,B,C,D";
    SamplerFlags cmp_flags;
    cmp->add_option("--records", cmp_records, "records.jsonl")->required();
    cmp->add_option("--models", cmp_models, "comma-separated model letters")
        ->capture_default_str();
    cmp_flags.attach(cmp);

    // predict
    auto* pred = app.add_subcommand("predict", "fit on one record file, predict another");
    std::string pred_records, pred_transfer, pred_model = "D", pred_out;
    SamplerFlags pred_flags;
    pred->add_option("--records", pred_records, "training records.jsonl")->required();
    pred->add_option("--transfer", pred_transfer, "records to predict")->required();
    pred->add_option("--model", pred_model, "A|B|C|D")->capture_default_str();
    pred->add_option("--out", pred_out, "per-row prediction CSV");
    pred_flags.attach(pred);

    // report
    auto* rep = app.add_subcommand("report", "emit all report tables and figures");
    std::string rep_records, rep_out;
    rep->add_option("--records", rep_records, "records.jsonl")->required();
    rep->add_option("--out", rep_out, "report directory")->required();

    // verify
    auto* ver = app.add_subcommand("verify", "recompute counts and artifacts, diff");
    std::string ver_dir;
    ver->add_option("--run-dir", ver_dir, "directory holding manifest.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitSuccess : kExitUsage;
    }

    if (gen->parsed()) {
        PipelineConfig cfg;
        cfg.dataset_kind = gen_kind;
        cfg.dataset_path = gen_path;
        cfg.n_questions = gen_n;
        cfg.separation = gen_sep;
        cfg.context_pairs = gen_pairs;
        cfg.seed = gen_seed;
        if ((gen_kind == "latitude" || gen_kind == "mc_file") && gen_path.empty())
            throw ConfigError("config field dataset.path: required for kind " + gen_kind);
        if ((gen_kind == "parity" || gen_kind == "divisibility") && gen_n == 0)
            throw ConfigError("config field dataset.n_questions: required for kind " + gen_kind);
        QuestionSet set = build_dataset(cfg);
        save_questions(set, gen_out);
        std::printf("wrote %zu questions to %s (%s)\n", set.questions.size(), gen_out.c_str(),
                    set.provenance.c_str());
        return kExitSuccess;
    }

    if (cal->parsed()) {
        PipelineConfig cfg = load_pipeline_config(cal_config);
        QuestionSet set = build_dataset(cfg);
        auto backend = build_backend(cfg);
        CalibrationOutcome out =
            run_calibration_pass(*backend, set, cfg.seed, cfg.calibration_bins);
        std::printf("tau_star=%.4f ece=%.4f brier=%.4f auroc=%.4f (n=%zu, failed=%zu)\n",
                    out.result.tau_star, out.result.ece, out.result.brier, out.result.auroc,
                    out.n_used, out.n_failed);
        if (!cal_out.empty()) write_or_print(cal_out, csv_calibration(out));
        return kExitSuccess;
    }

    if (run->parsed()) {
        ExecResult res = execute_manifest(run_config);
        if (res.up_to_date) {
            std::printf("up to date (%s)\n", res.manifest_path.c_str());
            return kExitSuccess;
        }
        std::printf("run %s: attempted=%zu completed=%zu parse_failures=%zu "
                    "backend_failures=%zu skipped=%zu\n",
                    res.manifest.run_id.c_str(), res.manifest.counts.attempted,
                    res.manifest.counts.completed, res.manifest.counts.parse_failures,
                    res.manifest.counts.backend_failures, res.manifest.counts.skipped_existing);
        for (const auto& [stage, status] : res.manifest.stages)
            std::printf("  %s: %s\n", stage.c_str(), status.c_str());
        std::printf("manifest: %s\n", res.manifest_path.c_str());
        return kExitSuccess;
    }

    if (analyze->parsed()) {
        auto records = read_records(an_records);
        std::string which;
        for (const auto& [name, sub] : analyze_subs)
            if (sub->parsed()) which = name;
        std::string bytes;
        if (which == "com") bytes = csv_com_by_condition(records);
        else if (which == "confidence") bytes = csv_confidence_vs_com(records);
        else if (which == "observer")
            bytes = csv_oucs_table(records) + "\n" + csv_observed_vs_ideal(records) + "\n" +
                    csv_overweighting(records);
        else if (which == "sigmoid") bytes = csv_sigmoid_fits(records);
        else if (which == "twostage") bytes = csv_two_stage_weights(records);
        write_or_print(an_out, bytes);
        return kExitSuccess;
    }

    if (fit_cmd->parsed()) {
        auto records = read_records(fit_records);
        double chance = chance_of(records);
        ModelSpec spec;
        spec.name = model_name_from_string(fit_model_name);
        spec.targets = resolve_targets(fit_target);
        spec.joint = !fit_independent && spec.targets.size() > 1;
        size_t clamps = 0;
        auto data = featurize_all(records, spec.targets, chance, &clamps);
        if (clamps > 0)
            std::fprintf(stderr, "note: %zu advice values clamped to zero influence\n", clamps);
        ModelFit fit = fit_model(spec, data, fit_flags.cfg);
        print_fit_table(fit);
        ElpdResult loo = elpd_loo(fit);
        std::printf("elpd_loo=%.1f se=%.1f%s\n", loo.elpd, loo.se,
                    loo.reliable ? "" : " (importance weights degenerate)");
        if (!fit_out.empty()) write_or_print(fit_out, fit_summary_json(fit, loo).dump(2) + "\n");
        return kExitSuccess;
    }

    if (cmp->parsed()) {
        auto records = read_records(cmp_records);
        double chance = chance_of(records);
        std::vector<BehavTarget> targets = resolve_targets("all");
        std::vector<ModelFit> fits;
        std::stringstream names(cmp_models);
        std::string tok;
        while (std::getline(names, tok, ',')) {
            if (tok.empty()) continue;
            ModelSpec spec;
            spec.name = model_name_from_string(tok);
            spec.targets = targets;
            spec.joint = true;
            auto data = featurize_all(records, targets, chance, nullptr);
            std::fprintf(stderr, "fitting model %s...\n", tok.c_str());
            fits.push_back(fit_model(spec, data, cmp_flags.cfg));
        }
        std::vector<const ModelFit*> ptrs;
        for (const auto& f : fits) ptrs.push_back(&f);
        auto table = compare_models(ptrs);
        std::printf("%-6s %12s %10s %12s %10s\n", "model", "elpd_loo", "se", "elpd_diff",
                    "diff_se");
        for (const auto& row : table)
            std::printf("%-6s %12.1f %10.1f %12.1f %10.1f\n", row.model.c_str(), row.elpd,
                        row.se, row.elpd_diff, row.diff_se);
        return kExitSuccess;
    }

    if (pred->parsed()) {
        auto train = read_records(pred_records);
        auto transfer = read_records(pred_transfer);
        ModelSpec spec;
        spec.name = model_name_from_string(pred_model);
        spec.targets = resolve_targets("all");
        spec.joint = true;
        auto train_data = featurize_all(train, spec.targets, chance_of(train), nullptr);
        auto transfer_data = featurize_all(transfer, spec.targets, chance_of(transfer), nullptr);
        ModelFit fit = fit_model(spec, train_data, pred_flags.cfg);
        PredictResult res = predict(fit, transfer_data);
        std::printf("transfer: conf_mae=%.4f switch_auroc=%.4f (model %s, diagnostics %s)\n",
                    res.conf_mae, res.switch_auroc, pred_model.c_str(),
                    fit.diagnostics_ok ? "ok" : "FAILED");
        if (!pred_out.empty()) {
            std::string bytes = "target,row,y,prediction\n";
            for (size_t t = 0; t < transfer_data.size(); ++t)
                for (size_t i = 0; i < transfer_data[t].size(); ++i)
                    bytes += strfmt("%s,%zu,%.6g,%.6g\n", to_string(spec.targets[t]), i,
                                    transfer_data[t][i].y, res.per_target[t][i]);
            write_or_print(pred_out, bytes);
        }
        return kExitSuccess;
    }

    if (rep->parsed()) {
        auto records = read_records(rep_records);
        auto paths = emit_report(records, rep_out);
        std::printf("wrote %zu artifacts to %s\n", paths.size(), rep_out.c_str());
        return kExitSuccess;
    }

    if (ver->parsed()) {
        auto problems = verify_run(ver_dir);
        if (problems.empty()) {
            std::printf("PASS: records, counts, and artifacts reconcile\n");
            return kExitSuccess;
        }
        for (const auto& p : problems) std::printf("FAIL: %s\n", p.c_str());
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const twoturn::TransportError& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return kExitBackend;
    } catch (const twoturn::CapabilityError& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return kExitBackend;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
}
