#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "capsdet/errors.hpp"
#include "capsdet/pipeline.hpp"

using namespace capsdet;

namespace {

struct Cli {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::string model_path;
    std::string detector_path;
    std::string patch_path;
    double lambda = 0.0;
    bool lambda_set = false;
    std::vector<std::string> report_inputs;
};

void add_common(CLI::App* sub, Cli& cli) {
    sub->add_option("--config", cli.config_path, "experiment config file")->required();
    sub->add_option("--seed", cli.seed, "override the config seed");
    sub->add_option("--out", cli.out, "override the output directory");
}

ExperimentConfig load_with_overrides(const Cli& cli) {
    ExperimentConfig cfg = load_config_file(cli.config_path);
    if (cli.seed_set) cfg.seed = cli.seed;
    if (!cli.out.empty()) cfg.out_dir = cli.out;
    if (cli.lambda_set) cfg.attack_lambda = cli.lambda;
    validate_config(cfg);
    return cfg;
}

std::string artifact(const ExperimentConfig& cfg, const std::string& override_path,
                     const char* name) {
    if (!override_path.empty()) return override_path;
    return cfg.out_dir + "/" + name;
}

void ensure_out_dir(const ExperimentConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create " + cfg.out_dir + ": " + ec.message());
}

RestoredModel load_model(const ExperimentConfig& cfg, const Cli& cli) {
    return restore_checkpoint(load_checkpoint(artifact(cfg, cli.model_path, "model.ckpt")), cfg);
}

Checkpoint patch_as_checkpoint(const Tensor& theta, const ExperimentConfig& cfg) {
    Checkpoint c;
    c.model_kind = "patch";
    c.config_echo = config_echo(cfg);
    c.step = cfg.attack_steps;
    c.rng_key = Rng::from_seed(cfg.seed).key();
    c.names = {"patch.theta"};
    c.values = {theta};
    c.l2 = {0.0};
    return c;
}

Tensor theta_from_checkpoint(const std::string& path) {
    Checkpoint c = load_checkpoint(path);
    if (c.model_kind != "patch" || c.names.size() != 1 || c.names[0] != "patch.theta")
        throw FormatError(path + " is not a patch artifact");
    return c.values[0];
}

int cmd_train(const Cli& cli) {
    ExperimentConfig cfg = load_with_overrides(cli);
    ensure_out_dir(cfg);
    Dataset train = load_split(cfg, true);
    std::string path = artifact(cfg, cli.model_path, "model.ckpt");
    TrainResult res = train_model(cfg, train, path);
    if (res.diverged) {
        std::cerr << "training diverged at step " << res.checkpoint.step + 1
                  << "; last good checkpoint kept at " << path << "\n";
        return 1;
    }
    Dataset test = load_split(cfg, false);
    RestoredModel r = restore_checkpoint(res.checkpoint, cfg);
    std::printf("steps = %lld\n", static_cast<long long>(res.checkpoint.step));
    if (!res.log.empty()) std::printf("final_loss = %.6f\n", res.log.back().loss);
    std::printf("test_accuracy = %.4f\n", model_accuracy(r.model, test, cfg.eval_batch));
    if (res.budget_hit) std::printf("budget_hit = true\n");
    std::printf("checkpoint = %s\n", path.c_str());
    return 0;
}

int cmd_calibrate(const Cli& cli) {
    ExperimentConfig cfg = load_with_overrides(cli);
    ensure_out_dir(cfg);
    RestoredModel r = load_model(cfg, cli);
    Dataset test = load_split(cfg, false);
    DetectorState st = calibrate_detector(r.model, test, cfg);
    std::string path = artifact(cfg, cli.detector_path, "detector.txt");
    save_detector(st, path);
    std::printf("alpha_crit = %.9g\n", st.alpha_crit);
    std::printf("samples = %d\n", st.calibration_count);
    std::printf("detector = %s\n", path.c_str());
    return 0;
}

int cmd_attack(const Cli& cli) {
    ExperimentConfig cfg = load_with_overrides(cli);
    ensure_out_dir(cfg);
    RestoredModel r = load_model(cfg, cli);
    Dataset train = load_split(cfg, true);
    PatchTrainResult res = run_attack(r.model, train, cfg);
    std::string path = artifact(cfg, cli.patch_path, "patch.ckpt");
    save_checkpoint(patch_as_checkpoint(res.patch.theta, cfg), path);
    write_png(patch_pixels_tensor(res.patch.theta), cfg.out_dir + "/patch.png");
    if (!res.naive_history.empty())
        std::printf("final_naive_cost = %.6f\n", res.naive_history.back());
    std::printf("lambda_a = %g\n", cfg.attack_lambda);
    std::printf("patch = %s\n", path.c_str());
    return 0;
}

int cmd_evaluate(const Cli& cli) {
    ExperimentConfig cfg = load_with_overrides(cli);
    RestoredModel r = load_model(cfg, cli);
    DetectorState det = load_detector(artifact(cfg, cli.detector_path, "detector.txt"));
    Tensor theta = theta_from_checkpoint(artifact(cfg, cli.patch_path, "patch.ckpt"));
    Tensor patch = patch_pixels_tensor(theta);
    Dataset test = load_split(cfg, false);
    AttackConfig attack = attack_config_from(cfg);
    EvalMetrics m = evaluate_patch(r.model, det, patch, test.images, test.labels, attack,
                                   eval_config_from(cfg));
    emit_report(cells_from_metrics({m}, patch, cfg), cfg.out_dir);
    std::printf("adr = %.6f\nafr = %.6f\nasr = %.6f\nn = %d\n", m.adr, m.afr, m.asr,
                m.n_evaluated);
    std::printf("report = %s/metrics.csv\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_sweep(const Cli& cli) {
    ExperimentConfig cfg = load_with_overrides(cli);
    RestoredModel r = load_model(cfg, cli);
    DetectorState det = load_detector(artifact(cfg, cli.detector_path, "detector.txt"));
    Dataset train = load_split(cfg, true);
    Dataset test = load_split(cfg, false);

    std::vector<SweepRow> rows = run_lambda_sweep(r.model, det, train, test, cfg);
    std::vector<ReportCell> cells = cells_from_rows(rows, cfg);
    for (const SweepRow& row : rows) {
        std::vector<EvalMetrics> per_scale = run_scale_sweep(r.model, det, row.patch, test, cfg);
        for (const EvalMetrics& m : per_scale) {
            ReportCell c;
            c.model = cfg.arch;
            c.dataset = cfg.dataset;
            c.metrics = m;
            c.metrics.lambda_a = row.lambda_a;
            c.seed = cfg.seed;
            c.patch = Tensor::scalar(0.0);
            cells.push_back(std::move(c));
        }
    }
    emit_report(cells, cfg.out_dir);
    for (const SweepRow& row : rows)
        std::printf("lambda %-8g adr = %.4f afr = %.4f asr = %.4f%s\n", row.lambda_a,
                    row.metrics.adr, row.metrics.afr, row.metrics.asr,
                    row.best_adaptive ? "  (best adaptive)" : "");
    std::printf("report = %s/metrics.csv\n", cfg.out_dir.c_str());
    return 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

int cmd_report(const Cli& cli) {
    ExperimentConfig cfg = load_with_overrides(cli);
    std::vector<std::string> inputs = cli.report_inputs;
    if (inputs.empty()) inputs.push_back(cfg.out_dir + "/metrics.csv");

    std::vector<ReportCell> cells;
    for (const std::string& path : inputs) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open " + path);
        std::string line;
        if (!std::getline(in, line) || line != "model,dataset,lambda_a,scale,adr,afr,asr,n,seed")
            throw FormatError(path + ": unexpected csv header");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> f = split_csv_line(line);
            if (f.size() != 9) throw FormatError(path + ": malformed csv row");
            ReportCell c;
            c.model = f[0];
            c.dataset = f[1];
            c.metrics.lambda_a = std::stod(f[2]);
            c.metrics.scale = std::stod(f[3]);
            c.metrics.adr = std::stod(f[4]);
            c.metrics.afr = std::stod(f[5]);
            c.metrics.asr = std::stod(f[6]);
            c.metrics.n_evaluated = std::stoi(f[7]);
            c.seed = std::stoull(f[8]);
            cells.push_back(std::move(c));
        }
    }
    if (cells.empty()) throw FormatError("report: no rows in input");
    emit_report(cells, cfg.out_dir);
    std::printf("rows = %zu\n", cells.size());
    std::printf("report = %s/metrics.csv\n", cfg.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capsule-network patch attack and detection workbench"};
    app.require_subcommand(1);
    Cli cli;

    CLI::App* train = app.add_subcommand("train", "train a classifier with its decoder");
    add_common(train, cli);
    train->add_option("--model", cli.model_path, "checkpoint output path");

    CLI::App* calibrate =
        app.add_subcommand("calibrate", "set the detection threshold on clean test data");
    add_common(calibrate, cli);
    calibrate->add_option("--model", cli.model_path, "trained checkpoint");
    calibrate->add_option("--detector", cli.detector_path, "detector state output path");

    CLI::App* attack = app.add_subcommand("attack", "train an adversarial patch");
    add_common(attack, cli);
    attack->add_option("--model", cli.model_path, "trained checkpoint");
    attack->add_option("--patch", cli.patch_path, "patch artifact output path");
    attack->add_option("--lambda", cli.lambda, "adaptive weight lambda_a");

    CLI::App* evaluate = app.add_subcommand("evaluate", "score a patch against the detector");
    add_common(evaluate, cli);
    evaluate->add_option("--model", cli.model_path, "trained checkpoint");
    evaluate->add_option("--detector", cli.detector_path, "detector state file");
    evaluate->add_option("--patch", cli.patch_path, "patch artifact");

    CLI::App* sweep = app.add_subcommand("sweep", "lambda x scale grid with report artifacts");
    add_common(sweep, cli);
    sweep->add_option("--model", cli.model_path, "trained checkpoint");
    sweep->add_option("--detector", cli.detector_path, "detector state file");

    CLI::App* report = app.add_subcommand("report", "re-render csv metrics into a report");
    add_common(report, cli);
    report->add_option("--in", cli.report_inputs, "metrics.csv inputs to merge");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    cli.seed_set = sub->count("--seed") > 0;
    if (sub->get_option_no_throw("--lambda") != nullptr)
        cli.lambda_set = sub->count("--lambda") > 0;

    try {
        if (train->parsed()) return cmd_train(cli);
        if (calibrate->parsed()) return cmd_calibrate(cli);
        if (attack->parsed()) return cmd_attack(cli);
        if (evaluate->parsed()) return cmd_evaluate(cli);
        if (sweep->parsed()) return cmd_sweep(cli);
        if (report->parsed()) return cmd_report(cli);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
