#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "tfm/oracles.hpp"
#include "tfm/sampling.hpp"

namespace tfm {

struct MetricReport {
    std::string name;
    double value = 0.0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
};

inline constexpr std::size_t kQuantileGrid = 512;
inline constexpr std::size_t kDefaultProjections = 256;

namespace eval_detail {

/// Empirical quantile function of sorted values at q in (0, 1), linear
/// interpolation between order statistics placed at (i + 0.5) / n.
inline double quantile(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    const double pos = q * static_cast<double>(n) - 0.5;
    if (pos <= 0.0) {
        return sorted.front();
    }
    if (pos >= static_cast<double>(n - 1)) {
        return sorted.back();
    }
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline std::vector<double> project(const Tensor& pts, const std::vector<double>& dir) {
    std::vector<double> out(pts.rows());
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < dir.size(); ++c) {
            s += pts(i, c) * dir[c];
        }
        out[i] = s;
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Unit directions. In 2D the angles are stratified over [0, pi) with one
/// shared random offset; in higher dimensions they are normalized Gaussians.
inline std::vector<std::vector<double>> directions(std::size_t d, std::size_t count, Rng& rng) {
    std::vector<std::vector<double>> dirs;
    dirs.reserve(count);
    if (d == 1) {
        dirs.assign(count, {1.0});
        return dirs;
    }
    if (d == 2) {
        const double offset = rng.uniform();
        for (std::size_t k = 0; k < count; ++k) {
            const double a = std::numbers::pi * (static_cast<double>(k) + offset) / static_cast<double>(count);
            dirs.push_back({std::cos(a), std::sin(a)});
        }
        return dirs;
    }
    for (std::size_t k = 0; k < count; ++k) {
        std::vector<double> v(d);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& x : v) {
                x = rng.normal();
                norm += x * x;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (double& x : v) {
            x /= norm;
        }
        dirs.push_back(std::move(v));
    }
    return dirs;
}

} // namespace eval_detail

/// Sliced Wasserstein-2 distance between two point clouds.
inline double sliced_w2(const Tensor& a, const Tensor& b, std::size_t n_projections, Rng& rng) {
    if (a.rank() != 2 || b.rank() != 2 || a.rows() == 0 || b.rows() == 0) {
        throw ContractError("sliced_w2 needs two nonempty point clouds [n x d]");
    }
    if (a.cols() != b.cols()) {
        throw ShapeError("sliced_w2 point clouds differ in dimension");
    }
    if (n_projections == 0) {
        throw ContractError("sliced_w2 needs at least one projection");
    }
    const auto dirs = eval_detail::directions(a.cols(), n_projections, rng);
    double total = 0.0;
    for (const auto& dir : dirs) {
        const auto pa = eval_detail::project(a, dir);
        const auto pb = eval_detail::project(b, dir);
        double w2 = 0.0;
        for (std::size_t k = 0; k < kQuantileGrid; ++k) {
            const double q = (static_cast<double>(k) + 0.5) / static_cast<double>(kQuantileGrid);
            const double diff = eval_detail::quantile(pa, q) - eval_detail::quantile(pb, q);
            w2 += diff * diff;
        }
        total += w2 / static_cast<double>(kQuantileGrid);
    }
    return std::sqrt(total / static_cast<double>(n_projections));
}

inline MetricReport sliced_w2_report(const std::string& name, const Tensor& a, const Tensor& b,
                                     std::size_t n_projections, std::uint64_t seed) {
    Rng rng(seed);
    const double v = sliced_w2(a, b, n_projections, rng);
    if (!std::isfinite(v)) {
        throw NumericalError("metric " + name + " is not finite");
    }
    return {name, v, a.rows(), seed};
}

using TransitionOracle = std::variant<AtomTarget, GaussianPair>;

/// Identity residuals on a (t, r) product grid. Cells with r < t are absent.
/// Two variants of the marginal transition state are evaluated: the
/// conditional expectation, and the ODE flow map of the marginal velocity.
struct ResidualCell {
    double t = 0.0;
    double r = 0.0;
    double residual_expectation = 0.0;
    double residual_flow_map = 0.0;
};

struct ResidualGrid {
    std::vector<ResidualCell> cells;

    double mean_expectation() const {
        double s = 0.0;
        for (const auto& c : cells) {
            s += c.residual_expectation;
        }
        return cells.empty() ? 0.0 : s / static_cast<double>(cells.size());
    }

    double mean_flow_map() const {
        double s = 0.0;
        for (const auto& c : cells) {
            s += c.residual_flow_map;
        }
        return cells.empty() ? 0.0 : s / static_cast<double>(cells.size());
    }
};

namespace eval_detail {

inline Tensor oracle_velocity(const TransitionOracle& o, const Tensor& x, double t) {
    if (const auto* a = std::get_if<AtomTarget>(&o)) {
        return marginal_velocity_atoms_rows(x, Tensor::scalar(t), *a);
    }
    return gaussian_marginal_velocity(x, t, std::get<GaussianPair>(o));
}

inline Tensor oracle_expectation(const TransitionOracle& o, const Tensor& x, double t, double r) {
    if (const auto* a = std::get_if<AtomTarget>(&o)) {
        return marginal_transition_atoms_rows(x, Tensor::scalar(t), Tensor::scalar(r), *a);
    }
    return gaussian_marginal_transition(x, t, r, std::get<GaussianPair>(o));
}

inline Tensor oracle_flow_map(const TransitionOracle& o, const Tensor& x, double t, double r, std::size_t steps) {
    if (const auto* g = std::get_if<GaussianPair>(&o)) {
        return gaussian_flow_map(x, t, r, *g);
    }
    return integrate_flow_map([&](const Tensor& y, double tau) { return oracle_velocity(o, y, tau); }, x, t, r, steps);
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

} // namespace eval_detail

/// `x0`, `x1` are paired endpoint samples; x_t is built per t by the linear
/// interpolant. Each cell holds the mean residual over the rows.
inline ResidualGrid residual_sweep(const TfmModel& model, const TransitionOracle& oracle,
                                   const std::vector<double>& t_grid, const std::vector<double>& r_grid,
                                   const Tensor& x0, const Tensor& x1, std::size_t flow_steps = 64) {
    require_same_shape(x0, x1, "residual_sweep");
    ResidualGrid out;
    for (double t : t_grid) {
        if (!(t >= 0.0 && t < 1.0)) {
            throw ContractError("residual_sweep: t grid must lie in [0, 1)");
        }
        const Tensor xt = interpolate_rows(x0, x1, column(x0.rows(), t));
        const Tensor v = eval_detail::oracle_velocity(oracle, xt, t);
        for (double r : r_grid) {
            if (r < t) {
                continue;
            }
            const Tensor tc = column(x0.rows(), t);
            const Tensor rc = column(x0.rows(), r);
            ResidualCell cell{t, r, 0.0, 0.0};
            cell.residual_expectation = eval_detail::mean_of(
                identity_residuals(model, xt, tc, rc, eval_detail::oracle_expectation(oracle, xt, t, r), v));
            cell.residual_flow_map = eval_detail::mean_of(
                identity_residuals(model, xt, tc, rc, eval_detail::oracle_flow_map(oracle, xt, t, r, flow_steps), v));
            out.cells.push_back(cell);
        }
    }
    return out;
}

namespace eval_detail {

inline std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline std::string fmt_exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    f << text;
    if (!f) {
        throw IoError("write to '" + path + "' failed");
    }
}

struct Bounds {
    double lo = -1.0;
    double hi = 1.0;
};

/// Square bounds covering every point, padded by 5%.
inline Bounds square_bounds(const std::vector<const Tensor*>& sets) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const Tensor* t : sets) {
        for (double v : t->storage()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!std::isfinite(lo)) {
        return {};
    }
    const double pad = std::max(1e-9, 0.05 * (hi - lo));
    return {lo - pad, hi + pad};
}

inline constexpr double kPanel = 400.0;

struct Frame {
    Bounds b;
    double ox = 0.0;
    double oy = 0.0;

    double sx(double x) const { return ox + (x - b.lo) / (b.hi - b.lo) * kPanel; }
    double sy(double y) const { return oy + kPanel - (y - b.lo) / (b.hi - b.lo) * kPanel; }
};

inline void require_2d(const Tensor& t, const char* who) {
    if (t.rank() != 2 || t.cols() != 2) {
        throw UnsupportedOpError(std::string(who) + " supports 2D data only");
    }
}

inline std::string svg_open(double w, double h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt4(w) + "\" height=\"" + fmt4(h) +
           "\" viewBox=\"0 0 " + fmt4(w) + " " + fmt4(h) + "\">\n";
}

inline std::string color_of(const std::string& tag) {
    if (tag == "source" || tag == "blue") {
        return "#1f5fbf";
    }
    if (tag == "generated" || tag == "red") {
        return "#c8302c";
    }
    if (tag == "target" || tag == "gray") {
        return "#8c8c8c";
    }
    return tag;
}

inline void scatter(std::string& out, const Tensor& pts, const std::string& tag, const Frame& f, double radius) {
    const std::string color = color_of(tag);
    out += "<g fill=\"" + color + "\" fill-opacity=\"0.6\">\n";
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        out += "<circle cx=\"" + fmt4(f.sx(pts(i, 0))) + "\" cy=\"" + fmt4(f.sy(pts(i, 1))) + "\" r=\"" + fmt4(radius) +
               "\"/>\n";
    }
    out += "</g>\n";
}

inline void trajectories(std::string& out, const Trajectory& traj, const Frame& f) {
    const auto& st = traj.states();
    out += "<g fill=\"none\" stroke=\"#555555\" stroke-opacity=\"0.35\" stroke-width=\"0.6\">\n";
    for (std::size_t i = 0; i < traj.points(); ++i) {
        out += "<polyline points=\"";
        for (std::size_t k = 0; k < st.size(); ++k) {
            if (k) {
                out += ' ';
            }
            out += fmt4(f.sx(st[k].batch(i, 0))) + "," + fmt4(f.sy(st[k].batch(i, 1)));
        }
        out += "\"/>\n";
    }
    out += "</g>\n";
}

} // namespace eval_detail

struct ScatterSet {
    Tensor points;
    std::string color;
};

inline std::string scatter_svg(const std::vector<ScatterSet>& sets) {
    std::vector<const Tensor*> ptrs;
    for (const auto& s : sets) {
        eval_detail::require_2d(s.points, "write_scatter_svg");
        ptrs.push_back(&s.points);
    }
    const eval_detail::Frame f{eval_detail::square_bounds(ptrs)};
    std::string out = eval_detail::svg_open(eval_detail::kPanel, eval_detail::kPanel);
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& s : sets) {
        eval_detail::scatter(out, s.points, s.color, f, 1.2);
    }
    out += "</svg>\n";
    return out;
}

inline void write_scatter_svg(const std::vector<ScatterSet>& sets, const std::string& path) {
    eval_detail::write_text(path, scatter_svg(sets));
}

/// One polyline per point through every knot, with start (blue) and end
/// (red) markers.
inline std::string trajectory_svg(const Trajectory& traj) {
    if (traj.empty()) {
        return eval_detail::svg_open(eval_detail::kPanel, eval_detail::kPanel) + "</svg>\n";
    }
    eval_detail::require_2d(traj.states().front().batch, "write_trajectory_svg");
    std::vector<const Tensor*> ptrs;
    for (const auto& s : traj.states()) {
        ptrs.push_back(&s.batch);
    }
    const eval_detail::Frame f{eval_detail::square_bounds(ptrs)};
    std::string out = eval_detail::svg_open(eval_detail::kPanel, eval_detail::kPanel);
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    eval_detail::trajectories(out, traj, f);
    eval_detail::scatter(out, traj.states().front().batch, "source", f, 1.5);
    eval_detail::scatter(out, traj.states().back().batch, "generated", f, 1.5);
    out += "</svg>\n";
    return out;
}

inline void write_trajectory_svg(const Trajectory& traj, const std::string& path) {
    eval_detail::write_text(path, trajectory_svg(traj));
}

struct Panel {
    std::string title;
    Trajectory trajectory;
};

/// Side-by-side panels sharing one coordinate frame; each shows the source
/// (blue), generated points (red) and the connecting trajectories.
inline std::string panel_svg(const std::vector<Panel>& panels) {
    std::vector<const Tensor*> ptrs;
    for (const auto& p : panels) {
        for (const auto& s : p.trajectory.states()) {
            eval_detail::require_2d(s.batch, "panel_svg");
            ptrs.push_back(&s.batch);
        }
    }
    const double title_h = 24.0;
    const double gap = 12.0;
    const double w = static_cast<double>(panels.size()) * (eval_detail::kPanel + gap) + gap;
    const double h = eval_detail::kPanel + title_h + 2 * gap;
    std::string out = eval_detail::svg_open(std::max(w, 1.0), h);
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const eval_detail::Bounds b = eval_detail::square_bounds(ptrs);
    for (std::size_t k = 0; k < panels.size(); ++k) {
        const double ox = gap + static_cast<double>(k) * (eval_detail::kPanel + gap);
        const double oy = gap + title_h;
        const eval_detail::Frame f{b, ox, oy};
        out += "<text x=\"" + eval_detail::fmt4(ox + eval_detail::kPanel / 2) + "\" y=\"" + eval_detail::fmt4(gap + 14) +
               "\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">" + panels[k].title + "</text>\n";
        out += "<rect x=\"" + eval_detail::fmt4(ox) + "\" y=\"" + eval_detail::fmt4(oy) + "\" width=\"" +
               eval_detail::fmt4(eval_detail::kPanel) + "\" height=\"" + eval_detail::fmt4(eval_detail::kPanel) +
               "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
        const Trajectory& traj = panels[k].trajectory;
        if (traj.empty()) {
            continue;
        }
        eval_detail::trajectories(out, traj, f);
        eval_detail::scatter(out, traj.states().front().batch, "source", f, 1.2);
        eval_detail::scatter(out, traj.states().back().batch, "generated", f, 1.2);
    }
    out += "</svg>\n";
    return out;
}

inline void write_panel_svg(const std::vector<Panel>& panels, const std::string& path) {
    eval_detail::write_text(path, panel_svg(panels));
}

} // namespace tfm
