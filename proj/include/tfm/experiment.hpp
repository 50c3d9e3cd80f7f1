#pragma once

// Experiment drivers behind the CLI: train, sample, eval, plot.
//
// Random streams derive from the experiment seed: fork(1) target points,
// fork(2) initialization, fork(3) training draws, fork(4) evaluation source,
// fork(5) evaluation reference, fork(6) metric projections.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tfm/config.hpp"
#include "tfm/data.hpp"
#include "tfm/eval.hpp"
#include "tfm/io.hpp"
#include "tfm/objectives.hpp"
#include "tfm/sampling.hpp"

namespace tfm {

struct RunManifest {
    std::string config_hash;
    std::string checkpoint;
    std::vector<MetricReport> metrics;
    std::string version = kVersion;
    double wall_clock_seconds = 0.0;
};

inline Json to_json(const MetricReport& m) {
    return {{"name", m.name}, {"value", m.value}, {"n_samples", m.n_samples}, {"seed", m.seed}};
}

inline Json to_json(const std::vector<MetricReport>& ms) {
    Json out = Json::array();
    for (const auto& m : ms) {
        out.push_back(to_json(m));
    }
    return out;
}

inline Json to_json(const RunManifest& m) {
    return {{"config_hash", m.config_hash},
            {"checkpoint", m.checkpoint},
            {"metrics", to_json(m.metrics)},
            {"version", m.version},
            {"wall_clock_seconds", m.wall_clock_seconds}};
}

/// Exclusive ownership of an output directory for the lifetime of the object.
class DirLock {
public:
    explicit DirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            if (errno == EEXIST) {
                throw IoError("output directory '" + dir.string() + "' is locked by another run (" + path_.string() +
                              ")");
            }
            throw IoError("cannot create lock '" + path_.string() + "': " + std::strerror(errno));
        }
        ::close(fd);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;
    ~DirLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }

private:
    std::filesystem::path path_;
};

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create directory '" + dir.string() + "'");
    }
}

/// Either network kind behind one sampling interface.
struct AnyModel {
    ModelConfig config;
    ParamSet params;

    /// Uniform grid of `steps` intervals: transition steps for TFM, Euler
    /// steps for FM.
    SampleResult sample(const Tensor& x0, std::size_t steps, const ClassIds& classes,
                        std::optional<double> cfg_scale) const {
        if (config.kind == ModelKind::FM) {
            if (cfg_scale) {
                throw UnsupportedOpError("guidance is only implemented for transition models");
            }
            return euler_ode_trajectory(FmModel{config, params}, x0, steps, classes);
        }
        return sample_multistep(TfmModel{config, params}, x0, TimeGrid::uniform(steps), classes, cfg_scale);
    }

    SampleResult sample(const Tensor& x0, const TimeGrid& grid, const ClassIds& classes,
                        std::optional<double> cfg_scale) const {
        if (config.kind == ModelKind::FM) {
            if (grid != TimeGrid::uniform(grid.intervals())) {
                throw ValidationError("grid", "velocity (FM) models sample on uniform Euler grids only; use --steps");
            }
            return sample(x0, grid.intervals(), classes, cfg_scale);
        }
        return sample_multistep(TfmModel{config, params}, x0, grid, classes, cfg_scale);
    }
};

inline AnyModel any_model_of(const Checkpoint& ck) { return {ck.model, ck.sampling_params()}; }

/// Fixed source batch and reference target sample used for every evaluation
/// of one experiment.
struct EvalSet {
    Tensor source;
    TargetSet reference;
};

inline EvalSet make_eval_set(const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed) {
    Rng root(seed);
    Rng src_rng = root.fork(4);
    Rng ref_rng = root.fork(5);
    return {sample_source(cfg.source, n, src_rng), make_target(cfg.dataset, n, ref_rng)};
}

/// sliced_w2 between generated and reference points at each step count.
inline std::vector<MetricReport> sliced_w2_at(const AnyModel& model, const EvalSet& es,
                                              const std::vector<std::size_t>& step_counts, std::size_t n_projections,
                                              std::optional<double> cfg_scale, std::uint64_t seed) {
    std::vector<MetricReport> out;
    const ClassIds classes = model.config.n_classes > 0 ? es.reference.labels : ClassIds{};
    const std::uint64_t proj_seed = Rng(seed).fork(6).seed();
    for (std::size_t steps : step_counts) {
        const SampleResult s = model.sample(es.source, steps, classes, cfg_scale);
        out.push_back(sliced_w2_report("sliced_w2@steps=" + std::to_string(steps), s.samples, es.reference.points,
                                       n_projections, proj_seed));
    }
    return out;
}

namespace experiment_detail {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string loss_row(std::size_t step, const LossReport& r) {
    return std::to_string(step) + ',' + num(r.weighted_loss) + ',' + num(r.raw_mse) + ',' + num(r.mean_weight) + ',' +
           num(r.target_norm) + '\n';
}

inline Json loss_json(const LossReport& r) {
    return {{"weighted_loss", r.weighted_loss},
            {"raw_mse", r.raw_mse},
            {"mean_weight", r.mean_weight},
            {"target_norm", r.target_norm}};
}

} // namespace experiment_detail

struct TrainOptions {
    /// Progress lines go here; null silences them.
    std::ostream* progress = &std::cerr;
};

/// Trains per `cfg` into `out_dir`, which receives model.tfm, loss.csv,
/// eval.csv and manifest.json. A divergence writes diverged.json and the loss
/// rows so far, then rethrows.
inline RunManifest run_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                             const TrainOptions& opts = {}) {
    using namespace experiment_detail;
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    ensure_dir(out_dir);
    const DirLock lock(out_dir);

    const std::uint64_t seed = cfg.optimizer.seed;
    Rng root(seed);
    Rng target_rng = root.fork(1);
    Rng init_rng = root.fork(2);
    Rng train_rng = root.fork(3);

    const TargetSet target = make_target(cfg.dataset, cfg.target_points, target_rng);
    const ModelConfig mcfg = cfg.resolved_model();
    ParamSet params = init_params(mcfg, init_rng);
    Adam adam(AdamConfig{cfg.optimizer.lr, cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps});
    std::optional<Ema> ema;
    if (cfg.optimizer.ema_decay > 0.0) {
        ema.emplace(params, cfg.optimizer.ema_decay);
    }
    const EvalSet eval_set = make_eval_set(cfg, cfg.eval.n_samples, seed);

    std::string loss_csv = "step,weighted_loss,raw_mse,mean_weight,target_norm\n";
    std::string eval_csv = "step,nfe,sliced_w2\n";
    std::vector<MetricReport> last_metrics;
    auto evaluate = [&](std::size_t step) {
        const AnyModel m{mcfg, ema ? ema->params() : params};
        last_metrics =
            sliced_w2_at(m, eval_set, cfg.eval.nfe, cfg.eval.n_projections, cfg.sampling.cfg_scale, seed);
        for (std::size_t k = 0; k < cfg.eval.nfe.size(); ++k) {
            eval_csv += std::to_string(step) + ',' + std::to_string(cfg.eval.nfe[k]) + ',' +
                        num(last_metrics[k].value) + '\n';
        }
        if (opts.progress) {
            *opts.progress << "[eval] step " << step;
            for (std::size_t k = 0; k < cfg.eval.nfe.size(); ++k) {
                *opts.progress << " sw2@" << cfg.eval.nfe[k] << "=" << last_metrics[k].value;
            }
            *opts.progress << "\n";
        }
    };

    const std::size_t steps = cfg.optimizer.steps;
    std::vector<TimePair> pairs(cfg.optimizer.batch);
    std::vector<double> times(cfg.optimizer.batch);
    for (std::size_t step = 1; step <= steps; ++step) {
        const CouplingBatch batch = sample_coupling_batch(cfg.source, target, cfg.optimizer.batch, train_rng);
        LossResult res;
        try {
            if (mcfg.kind == ModelKind::TFM) {
                for (auto& p : pairs) {
                    p = sample_time_pair(cfg.time_sampler, train_rng);
                }
                res = tfm_loss(TfmModel{mcfg, params}, batch, pairs, cfg.loss, train_rng);
            } else {
                for (double& t : times) {
                    t = sample_unit_time(cfg.time_sampler.kind, cfg.time_sampler.mu, cfg.time_sampler.sigma, train_rng);
                }
                res = fm_loss(FmModel{mcfg, params}, batch, times, cfg.loss, train_rng);
            }
        } catch (const DivergenceError& e) {
            io_detail::write_file((out_dir / "loss.csv").string(), loss_csv);
            const Json report{{"step", step}, {"error", e.what()}, {"loss", loss_json(e.report())}};
            io_detail::write_file((out_dir / "diverged.json").string(), report.dump(2) + "\n");
            throw;
        }
        adam.step(params, res.grads);
        if (ema) {
            ema->update(params);
        }
        const bool log_now = (cfg.log_every > 0 && step % cfg.log_every == 0) || step == steps;
        if (log_now) {
            loss_csv += loss_row(step, res.report);
            if (opts.progress) {
                *opts.progress << "[train] step " << step << "/" << steps << " loss " << res.report.weighted_loss
                               << " mse " << res.report.raw_mse << "\n";
            }
        }
        if (cfg.eval.every > 0 && step % cfg.eval.every == 0 && step != steps) {
            evaluate(step);
        }
    }
    evaluate(steps);

    Checkpoint ck{mcfg, params, std::nullopt, to_json(cfg), steps};
    if (ema) {
        ck.ema = ema->params();
    }
    const auto ck_path = out_dir / "model.tfm";
    save_checkpoint(ck, ck_path.string());
    io_detail::write_file((out_dir / "loss.csv").string(), loss_csv);
    io_detail::write_file((out_dir / "eval.csv").string(), eval_csv);

    RunManifest manifest;
    manifest.config_hash = config_hash(cfg);
    manifest.checkpoint = ck_path.string();
    manifest.metrics = last_metrics;
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    io_detail::write_file((out_dir / "manifest.json").string(), to_json(manifest).dump(2) + "\n");
    return manifest;
}

/// Experiment record stored in a checkpoint, or defaults matching the model
/// dimensions when the checkpoint carries none.
inline ExperimentConfig experiment_of(const Checkpoint& ck) {
    if (!ck.experiment.is_null()) {
        try {
            return config_from_json(ck.experiment);
        } catch (const ValidationError& e) {
            throw IoError(std::string("checkpoint experiment record is invalid: ") + e.what());
        }
    }
    ExperimentConfig cfg;
    cfg.objective = ck.model.kind;
    cfg.source.dim = ck.model.data_dim;
    cfg.dataset.kind = DatasetKind::GAUSSIAN;
    cfg.dataset.gaussian_mean.assign(ck.model.data_dim, 0.0);
    cfg.dataset.n_classes = ck.model.n_classes;
    cfg.model = ck.model;
    return cfg;
}

struct SampleRequest {
    std::string ckpt;
    std::optional<std::size_t> steps;
    std::optional<std::string> grid;
    std::optional<std::size_t> n;
    std::optional<double> cfg_scale;
    std::uint64_t seed = 0;
    /// Class for every row; random classes when absent.
    std::optional<int> class_id;
};

struct SampleOutputs {
    std::size_t rows = 0;
    std::size_t model_calls = 0;
    std::filesystem::path samples_csv;
    std::filesystem::path trajectory_csv;
    std::filesystem::path panel_svg;
};

namespace experiment_detail {

inline TimeGrid resolve_grid(const SampleRequest& req, const ExperimentConfig& cfg) {
    if (req.steps && req.grid) {
        throw ValidationError("grid", "--steps and --grid are mutually exclusive");
    }
    if (req.grid) {
        return TimeGrid::parse(*req.grid);
    }
    if (req.steps) {
        if (*req.steps == 0) {
            throw ValidationError("steps", "must be positive");
        }
        return TimeGrid::uniform(*req.steps);
    }
    if (cfg.sampling.grid) {
        return TimeGrid::parse(*cfg.sampling.grid);
    }
    return TimeGrid::uniform(cfg.sampling.steps);
}

inline ClassIds sample_classes(const ModelConfig& m, std::size_t n, std::optional<int> class_id, Rng& rng) {
    if (m.n_classes == 0) {
        if (class_id) {
            throw ValidationError("class", "model is not class-conditional");
        }
        return {};
    }
    if (class_id) {
        if (*class_id < 0 || static_cast<std::size_t>(*class_id) >= m.n_classes) {
            throw ValidationError("class", "class id " + std::to_string(*class_id) + " out of range [0, " +
                                               std::to_string(m.n_classes) + ")");
        }
        return ClassIds(n, *class_id);
    }
    ClassIds out(n);
    for (int& c : out) {
        c = static_cast<int>(rng.index(m.n_classes));
    }
    return out;
}

inline std::string grid_title(const Checkpoint& ck, const TimeGrid& grid) {
    return std::string(ck.model.kind == ModelKind::TFM ? "TFM" : "FM") + " steps=" + std::to_string(grid.intervals());
}

} // namespace experiment_detail

/// Samples from a checkpoint into `out_dir`: samples.csv, trajectory.csv and
/// panel.svg.
inline SampleOutputs run_sample(const SampleRequest& req, const std::filesystem::path& out_dir) {
    const Checkpoint ck = load_checkpoint(req.ckpt);
    const ExperimentConfig cfg = experiment_of(ck);
    const TimeGrid grid = experiment_detail::resolve_grid(req, cfg);
    const std::size_t n = req.n.value_or(cfg.sampling.n);
    if (n == 0) {
        throw ValidationError("n", "must be positive");
    }
    const std::optional<double> cfg_scale = req.cfg_scale ? req.cfg_scale : cfg.sampling.cfg_scale;

    Rng root(req.seed);
    Rng src_rng = root.fork(1);
    Rng cls_rng = root.fork(2);
    const Tensor x0 = sample_source(cfg.source, n, src_rng);
    const ClassIds classes = experiment_detail::sample_classes(ck.model, n, req.class_id, cls_rng);
    const SampleResult res = any_model_of(ck).sample(x0, grid, classes, cfg_scale);

    ensure_dir(out_dir);
    SampleOutputs out{n, res.model_calls, out_dir / "samples.csv", out_dir / "trajectory.csv", out_dir / "panel.svg"};
    write_samples_csv(out.samples_csv.string(), res.samples, classes);
    write_trajectory_csv(out.trajectory_csv.string(), res.trajectory);
    if (res.samples.cols() == 2) {
        write_panel_svg({Panel{experiment_detail::grid_title(ck, grid), res.trajectory}}, out.panel_svg.string());
    } else {
        out.panel_svg.clear();
    }
    return out;
}

enum class EvalMetric { SLICED_W2, COMPOSITION_GAP, RESIDUAL };

inline EvalMetric parse_metric(const std::string& text) {
    if (text == "sliced_w2") {
        return EvalMetric::SLICED_W2;
    }
    if (text == "composition_gap") {
        return EvalMetric::COMPOSITION_GAP;
    }
    if (text == "residual") {
        return EvalMetric::RESIDUAL;
    }
    throw ValidationError("metric", "unknown metric '" + text + "' (expected sliced_w2, composition_gap or residual)");
}

struct EvalRequest {
    std::string ckpt;
    EvalMetric metric = EvalMetric::SLICED_W2;
    /// Step counts for sliced_w2; the config's eval.nfe when empty.
    std::vector<std::size_t> steps;
    std::optional<std::size_t> n;
    std::optional<double> cfg_scale;
    std::uint64_t seed = 0;
};

/// Computes the requested metric. When `out_dir` is non-empty, writes
/// eval.json there (and residual.csv for the residual sweep).
inline std::vector<MetricReport> run_eval(const EvalRequest& req, const std::filesystem::path& out_dir = {}) {
    const Checkpoint ck = load_checkpoint(req.ckpt);
    const ExperimentConfig cfg = experiment_of(ck);
    const std::size_t n = req.n.value_or(cfg.eval.n_samples);
    if (n == 0) {
        throw ValidationError("n", "must be positive");
    }
    const AnyModel model = any_model_of(ck);
    std::vector<MetricReport> out;
    std::optional<ResidualGrid> grid;
    switch (req.metric) {
    case EvalMetric::SLICED_W2: {
        const EvalSet es = make_eval_set(cfg, n, req.seed);
        const std::vector<std::size_t> steps = req.steps.empty() ? cfg.eval.nfe : req.steps;
        for (std::size_t s : steps) {
            if (s == 0) {
                throw ValidationError("steps", "step counts must be positive");
            }
        }
        out = sliced_w2_at(model, es, steps, cfg.eval.n_projections,
                           req.cfg_scale ? req.cfg_scale : cfg.sampling.cfg_scale, req.seed);
        break;
    }
    case EvalMetric::COMPOSITION_GAP: {
        if (ck.model.kind != ModelKind::TFM) {
            throw UnsupportedOpError("composition_gap needs a transition (TFM) checkpoint");
        }
        Rng rng = Rng(req.seed).fork(4);
        const Tensor x0 = sample_source(cfg.source, n, rng);
        const ClassIds classes = ck.model.n_classes > 0 ? make_eval_set(cfg, n, req.seed).reference.labels : ClassIds{};
        out.push_back({"composition_gap@s=0.5",
                       composition_gap(TfmModel{model.config, model.params}, x0, 0.5, classes), n, req.seed});
        break;
    }
    case EvalMetric::RESIDUAL: {
        if (ck.model.kind != ModelKind::TFM) {
            throw UnsupportedOpError("residual sweep needs a transition (TFM) checkpoint");
        }
        if (cfg.dataset.kind != DatasetKind::GAUSSIAN || cfg.source.kind != SourceKind::STD_GAUSSIAN ||
            ck.model.n_classes != 0) {
            throw UnsupportedOpError(
                "residual sweep needs a closed-form oracle: unconditional GAUSSIAN dataset with STD_GAUSSIAN source");
        }
        const GaussianPair gp{Tensor(Shape{cfg.dataset.gaussian_mean.size()}, cfg.dataset.gaussian_mean),
                              cfg.dataset.gaussian_std};
        const EvalSet es = make_eval_set(cfg, n, req.seed);
        std::vector<double> ts;
        std::vector<double> rs;
        for (int i = 0; i < 10; ++i) {
            ts.push_back(i / 10.0);
            rs.push_back((i + 1) / 10.0);
        }
        grid = residual_sweep(TfmModel{model.config, model.params}, gp, ts, rs, es.source, es.reference.points);
        out.push_back({"residual_expectation_mean", grid->mean_expectation(), n, req.seed});
        out.push_back({"residual_flow_map_mean", grid->mean_flow_map(), n, req.seed});
        break;
    }
    }
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        io_detail::write_file((out_dir / "eval.json").string(), to_json(out).dump(2) + "\n");
        if (grid) {
            io_detail::write_file((out_dir / "residual.csv").string(), residual_csv(*grid));
        }
    }
    return out;
}

struct PlotRequest {
    std::vector<std::string> ckpts;
    std::vector<std::size_t> steps{1, 2, 5};
    std::optional<std::size_t> n;
    std::uint64_t seed = 0;
};

/// One panel per (checkpoint, step count), all started from the same source
/// points, written to `out_dir`/panel.svg.
inline std::filesystem::path run_plot(const PlotRequest& req, const std::filesystem::path& out_dir) {
    if (req.ckpts.empty()) {
        throw ValidationError("ckpt", "at least one checkpoint is required");
    }
    std::vector<Panel> panels;
    std::optional<Tensor> x0;
    for (const auto& path : req.ckpts) {
        const Checkpoint ck = load_checkpoint(path);
        const ExperimentConfig cfg = experiment_of(ck);
        const std::size_t n = req.n.value_or(512);
        if (!x0) {
            Rng rng = Rng(req.seed).fork(1);
            x0 = sample_source(cfg.source, n, rng);
        } else if (x0->cols() != ck.model.data_dim) {
            throw ValidationError("ckpt", "checkpoints disagree on data dimension");
        }
        Rng cls_rng = Rng(req.seed).fork(2);
        const ClassIds classes = experiment_detail::sample_classes(ck.model, x0->rows(), std::nullopt, cls_rng);
        for (std::size_t s : req.steps) {
            if (s == 0) {
                throw ValidationError("steps", "step counts must be positive");
            }
            const TimeGrid grid = TimeGrid::uniform(s);
            const SampleResult res = any_model_of(ck).sample(*x0, grid, classes, cfg.sampling.cfg_scale);
            panels.push_back({experiment_detail::grid_title(ck, grid), res.trajectory});
        }
    }
    ensure_dir(out_dir);
    const auto path = out_dir / "panel.svg";
    write_panel_svg(panels, path.string());
    return path;
}

} // namespace tfm
