// tfm: train, sample, evaluate and verify transition-flow models.
//
// Exit codes: 0 success, 1 check failure, 2 validation error, 3 numerical
// failure, 4 I/O error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "tfm/checks.hpp"
#include "tfm/experiment.hpp"

namespace {

enum Exit : int { kOk = 0, kCheckFailed = 1, kValidation = 2, kNumerical = 3, kIo = 4 };

void apply_thread_cap() {
    const char* env = std::getenv("TFM_THREADS");
    if (env == nullptr || *env == '\0') {
        return;
    }
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n <= 0) {
        throw tfm::ValidationError("TFM_THREADS", std::string("expected a positive integer, got '") + env + "'");
    }
    Eigen::setNbThreads(static_cast<int>(n));
}

template <class T>
std::optional<T> opt_of(const CLI::Option* o, const T& v) {
    return o->count() > 0 ? std::optional<T>(v) : std::nullopt;
}

int report(int code, const std::string& kind, const std::string& what) {
    std::cerr << "tfm: " << kind << ": " << what << "\n";
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transition flow matching: train, sample, evaluate and verify"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tfm::kVersion);

    // train
    auto* train = app.add_subcommand("train", "Train a model from a JSON experiment config");
    std::string train_config;
    std::string train_out;
    std::size_t train_steps = 0;
    std::uint64_t train_seed = 0;
    train->add_option("--config", train_config, "Experiment config (JSON)")->required();
    train->add_option("--out", train_out, "Output directory")->required();
    auto* train_steps_opt = train->add_option("--steps", train_steps, "Override optimizer.steps");
    auto* train_seed_opt = train->add_option("--seed", train_seed, "Override optimizer.seed");

    // sample
    auto* sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
    tfm::SampleRequest sreq;
    std::string sample_out;
    std::size_t sample_steps = 0;
    std::string sample_grid;
    std::size_t sample_n = 0;
    double sample_cfg = 0.0;
    int sample_class = 0;
    sample->add_option("--ckpt", sreq.ckpt, "Checkpoint (TFM1)")->required();
    sample->add_option("--out", sample_out, "Output directory")->required();
    auto* sample_steps_opt = sample->add_option("--steps", sample_steps, "Uniform grid with this many steps");
    auto* sample_grid_opt = sample->add_option("--grid", sample_grid, "Explicit knots, e.g. 0,0.4,1");
    auto* sample_n_opt = sample->add_option("--n", sample_n, "Number of samples");
    auto* sample_cfg_opt = sample->add_option("--cfg-scale", sample_cfg, "Guidance scale (class-conditional models)");
    auto* sample_class_opt = sample->add_option("--class", sample_class, "Class id for every sample");
    sample->add_option("--seed", sreq.seed, "Sampling seed");
    sample_steps_opt->excludes(sample_grid_opt);

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    tfm::EvalRequest ereq;
    std::string eval_metric = "sliced_w2";
    std::string eval_out;
    std::size_t eval_n = 0;
    double eval_cfg = 0.0;
    eval->add_option("--ckpt", ereq.ckpt, "Checkpoint (TFM1)")->required();
    eval->add_option("--metric", eval_metric, "sliced_w2, composition_gap or residual");
    eval->add_option("--steps", ereq.steps, "Step counts for sliced_w2")->delimiter(',');
    auto* eval_n_opt = eval->add_option("--n", eval_n, "Number of samples");
    auto* eval_cfg_opt = eval->add_option("--cfg-scale", eval_cfg, "Guidance scale");
    eval->add_option("--seed", ereq.seed, "Evaluation seed");
    eval->add_option("--out", eval_out, "Directory for eval.json (and residual.csv)");

    // check
    auto* check = app.add_subcommand("check", "Run an invariant suite; one JSON report per suite on stdout");
    std::string check_suite = "all";
    std::uint64_t check_seed = 0;
    check->add_option("--suite", check_suite, "JVP, GRAD, THEOREM2, IDENTITY, SAMPLER or all");
    check->add_option("--seed", check_seed, "Seed");

    // plot
    auto* plot = app.add_subcommand("plot", "Trajectory panels for one or more checkpoints");
    tfm::PlotRequest preq;
    std::string plot_out;
    std::size_t plot_n = 0;
    plot->add_option("--ckpt", preq.ckpts, "Checkpoint(s)")->required();
    plot->add_option("--out", plot_out, "Output directory")->required();
    plot->add_option("--steps", preq.steps, "Step counts, one panel each")->delimiter(',');
    auto* plot_n_opt = plot->add_option("--n", plot_n, "Points per panel");
    plot->add_option("--seed", preq.seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    try {
        apply_thread_cap();
        if (*train) {
            tfm::ExperimentConfig cfg = tfm::load_config(train_config);
            if (train_steps_opt->count()) {
                cfg.optimizer.steps = train_steps;
            }
            if (train_seed_opt->count()) {
                cfg.optimizer.seed = train_seed;
            }
            const tfm::RunManifest m = tfm::run_train(cfg, train_out);
            std::cout << tfm::to_json(m).dump(2) << "\n";
        } else if (*sample) {
            sreq.steps = opt_of(sample_steps_opt, sample_steps);
            sreq.grid = opt_of(sample_grid_opt, sample_grid);
            sreq.n = opt_of(sample_n_opt, sample_n);
            sreq.cfg_scale = opt_of(sample_cfg_opt, sample_cfg);
            sreq.class_id = opt_of(sample_class_opt, sample_class);
            const tfm::SampleOutputs o = tfm::run_sample(sreq, sample_out);
            nlohmann::json j{{"rows", o.rows},
                             {"model_calls", o.model_calls},
                             {"samples", o.samples_csv.string()},
                             {"trajectory", o.trajectory_csv.string()},
                             {"panel", o.panel_svg.string()}};
            std::cout << j.dump(2) << "\n";
        } else if (*eval) {
            ereq.metric = tfm::parse_metric(eval_metric);
            ereq.n = opt_of(eval_n_opt, eval_n);
            ereq.cfg_scale = opt_of(eval_cfg_opt, eval_cfg);
            std::cout << tfm::to_json(tfm::run_eval(ereq, eval_out)).dump(2) << "\n";
        } else if (*check) {
            std::vector<tfm::CheckSuite> suites;
            if (check_suite == "all" || check_suite == "ALL") {
                suites.assign(std::begin(tfm::kAllSuites), std::end(tfm::kAllSuites));
            } else {
                suites.push_back(tfm::parse_suite(check_suite));
            }
            bool ok = true;
            for (tfm::CheckSuite s : suites) {
                const tfm::SuiteReport rep = tfm::run_check(s, check_seed);
                std::cout << tfm::to_json(rep).dump() << "\n" << std::flush;
                ok = ok && rep.passed();
            }
            return ok ? kOk : kCheckFailed;
        } else if (*plot) {
            preq.n = opt_of(plot_n_opt, plot_n);
            std::cout << tfm::run_plot(preq, plot_out).string() << "\n";
        }
    } catch (const tfm::ValidationError& e) {
        return report(kValidation, "validation error", e.what());
    } catch (const tfm::DivergenceError& e) {
        return report(kNumerical, "training diverged", e.what());
    } catch (const tfm::NumericalError& e) {
        return report(kNumerical, "numerical failure", e.what());
    } catch (const tfm::IoError& e) {
        return report(kIo, "I/O error", e.what());
    } catch (const tfm::UnsupportedOpError& e) {
        return report(kValidation, "unsupported", e.what());
    } catch (const tfm::Error& e) {
        return report(kValidation, "invalid input", e.what());
    }
    return kOk;
}
