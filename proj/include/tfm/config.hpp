#pragma once

// Experiment configuration: a JSON document with nested sections. Missing
// keys take defaults; unknown keys and type mismatches are validation
// errors naming the dotted key path.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "tfm/data.hpp"
#include "tfm/eval.hpp"
#include "tfm/objectives.hpp"
#include "tfm/sampling.hpp"

namespace tfm {

using Json = nlohmann::json;

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t steps = 50000;
    std::size_t batch = 256;
    /// 0 disables the moving average.
    double ema_decay = 0.999;
    std::uint64_t seed = 0;

    bool operator==(const OptimizerConfig&) const = default;
};

struct SamplingConfig {
    std::size_t steps = 1;
    std::optional<std::string> grid;
    std::optional<double> cfg_scale;
    std::size_t n = 2000;

    bool operator==(const SamplingConfig&) const = default;
};

struct EvalConfig {
    /// Evaluate every `every` steps (0: only after training).
    std::size_t every = 0;
    std::size_t n_samples = 2000;
    std::size_t n_projections = kDefaultProjections;
    std::vector<std::size_t> nfe{1, 2, 5};

    bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
    ModelKind objective = ModelKind::TFM;
    DatasetSpec dataset{};
    std::size_t target_points = 20000;
    SourceSpec source{};
    ModelConfig model{};
    LossConfig loss{};
    TimeSamplerConfig time_sampler{};
    OptimizerConfig optimizer{};
    SamplingConfig sampling{};
    EvalConfig eval{};
    std::size_t log_every = 100;

    /// Model config with dimensions and kind filled in from the other sections.
    ModelConfig resolved_model() const {
        ModelConfig m = model;
        m.kind = objective;
        m.data_dim = dataset.dim();
        m.n_classes = dataset.n_classes;
        return m;
    }

    void validate() const;

    bool operator==(const ExperimentConfig&) const = default;
};

namespace config_detail {

template <class E>
struct EnumName {
    E value;
    const char* name;
};

inline constexpr EnumName<ModelKind> kModelKinds[] = {{ModelKind::TFM, "TFM"}, {ModelKind::FM, "FM"}};
inline constexpr EnumName<ConditioningMode> kCondModes[] = {{ConditioningMode::T_R, "T_R"},
                                                            {ConditioningMode::T_DT, "T_DT"},
                                                            {ConditioningMode::T_R_DT, "T_R_DT"},
                                                            {ConditioningMode::DT_ONLY, "DT_ONLY"}};
inline constexpr EnumName<ParamMode> kParamModes[] = {{ParamMode::DIRECT, "DIRECT"}, {ParamMode::RESIDUAL, "RESIDUAL"}};
inline constexpr EnumName<Activation> kActivations[] = {{Activation::SILU, "SILU"}, {Activation::TANH, "TANH"}};
inline constexpr EnumName<DatasetKind> kDatasets[] = {{DatasetKind::LETTER_GLYPH, "LETTER_GLYPH"},
                                                      {DatasetKind::GAUSSIAN_MIXTURE, "GAUSSIAN_MIXTURE"},
                                                      {DatasetKind::MOONS, "MOONS"},
                                                      {DatasetKind::CHECKERBOARD, "CHECKERBOARD"},
                                                      {DatasetKind::GAUSSIAN, "GAUSSIAN"}};
inline constexpr EnumName<SourceKind> kSources[] = {{SourceKind::STD_GAUSSIAN, "STD_GAUSSIAN"},
                                                    {SourceKind::RING, "RING"}};
inline constexpr EnumName<TimeSamplerKind> kSamplers[] = {{TimeSamplerKind::UNIFORM, "UNIFORM"},
                                                          {TimeSamplerKind::LOGNORM, "LOGNORM"}};

template <class E, std::size_t N>
const char* enum_name(const EnumName<E> (&table)[N], E v) {
    for (const auto& e : table) {
        if (e.value == v) {
            return e.name;
        }
    }
    return "?";
}

template <class E, std::size_t N>
E enum_parse(const EnumName<E> (&table)[N], const std::string& s, const std::string& key) {
    for (const auto& e : table) {
        if (s == e.name) {
            return e.value;
        }
    }
    std::string allowed;
    for (const auto& e : table) {
        allowed += allowed.empty() ? "" : ", ";
        allowed += e.name;
    }
    throw ValidationError(key, "unknown value '" + s + "' (expected one of " + allowed + ")");
}

/// Reads one JSON object, tracking which keys were consumed.
class Reader {
public:
    Reader(const Json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) {
            throw ValidationError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
        }
    }

    std::string key(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }

    const Json* find(const std::string& k) {
        seen_.insert(k);
        auto it = j_.find(k);
        return it == j_.end() ? nullptr : &*it;
    }

    void get(const std::string& k, double& out) {
        if (const Json* v = find(k)) {
            if (!v->is_number()) {
                throw ValidationError(key(k), "expected a number");
            }
            out = v->get<double>();
        }
    }

    template <class U>
        requires std::is_unsigned_v<U>
    void get(const std::string& k, U& out) {
        if (const Json* v = find(k)) {
            if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
                throw ValidationError(key(k), "expected a nonnegative integer");
            }
            out = v->get<U>();
        }
    }

    void get(const std::string& k, std::string& out) {
        if (const Json* v = find(k)) {
            if (!v->is_string()) {
                throw ValidationError(key(k), "expected a string");
            }
            out = v->get<std::string>();
        }
    }

    void get(const std::string& k, std::optional<double>& out) {
        if (const Json* v = find(k)) {
            if (v->is_null()) {
                out.reset();
            } else if (v->is_number()) {
                out = v->get<double>();
            } else {
                throw ValidationError(key(k), "expected a number or null");
            }
        }
    }

    void get(const std::string& k, std::optional<std::string>& out) {
        if (const Json* v = find(k)) {
            if (v->is_null()) {
                out.reset();
            } else if (v->is_string()) {
                out = v->get<std::string>();
            } else {
                throw ValidationError(key(k), "expected a string or null");
            }
        }
    }

    void get(const std::string& k, std::vector<double>& out) {
        if (const Json* v = find(k)) {
            if (!v->is_array()) {
                throw ValidationError(key(k), "expected an array of numbers");
            }
            std::vector<double> tmp;
            for (const auto& e : *v) {
                if (!e.is_number()) {
                    throw ValidationError(key(k), "expected an array of numbers");
                }
                tmp.push_back(e.get<double>());
            }
            out = std::move(tmp);
        }
    }

    void get(const std::string& k, std::vector<std::size_t>& out) {
        if (const Json* v = find(k)) {
            if (!v->is_array()) {
                throw ValidationError(key(k), "expected an array of nonnegative integers");
            }
            std::vector<std::size_t> tmp;
            for (const auto& e : *v) {
                if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<long long>() >= 0)) {
                    throw ValidationError(key(k), "expected an array of nonnegative integers");
                }
                tmp.push_back(e.get<std::size_t>());
            }
            out = std::move(tmp);
        }
    }

    template <class E, std::size_t N>
    void get_enum(const std::string& k, const EnumName<E> (&table)[N], E& out) {
        std::string s = enum_name(table, out);
        get(k, s);
        out = enum_parse(table, s, key(k));
    }

    /// Nested object reader; an absent section reads as an empty object.
    Reader child(const std::string& k) {
        static const Json empty = Json::object();
        const Json* v = find(k);
        return Reader(v ? *v : empty, key(k));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ValidationError(key(it.key()), "unknown key");
            }
        }
    }

private:
    const Json& j_;
    std::string prefix_;
    std::set<std::string> seen_;
};

} // namespace config_detail

inline Json model_to_json(const ModelConfig& m) {
    using namespace config_detail;
    return Json{{"kind", enum_name(kModelKinds, m.kind)},
                {"data_dim", m.data_dim},
                {"hidden", m.hidden},
                {"time_dim", m.time.dim},
                {"max_period", m.time.max_period},
                {"cond", enum_name(kCondModes, m.cond)},
                {"param", enum_name(kParamModes, m.param)},
                {"activation", enum_name(kActivations, m.activation)},
                {"n_classes", m.n_classes}};
}

/// Reads model fields from `r`. Dimension and kind keys are only accepted
/// when `with_dims` is set (checkpoint records); experiment configs derive
/// them from the dataset and objective.
inline void model_from_reader(config_detail::Reader& r, ModelConfig& m, bool with_dims) {
    using namespace config_detail;
    if (with_dims) {
        r.get_enum("kind", kModelKinds, m.kind);
        r.get("data_dim", m.data_dim);
        r.get("n_classes", m.n_classes);
    }
    r.get("hidden", m.hidden);
    r.get("time_dim", m.time.dim);
    r.get("max_period", m.time.max_period);
    r.get_enum("cond", kCondModes, m.cond);
    r.get_enum("param", kParamModes, m.param);
    r.get_enum("activation", kActivations, m.activation);
    r.finish();
}

inline ModelConfig model_from_json(const Json& j) {
    ModelConfig m;
    config_detail::Reader r(j, "model");
    model_from_reader(r, m, true);
    return m;
}

inline Json to_json(const ExperimentConfig& c) {
    using namespace config_detail;
    Json model = model_to_json(c.model);
    model.erase("kind");
    model.erase("data_dim");
    model.erase("n_classes");
    const auto opt_num = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    return Json{
        {"objective", enum_name(kModelKinds, c.objective)},
        {"dataset",
         {{"kind", enum_name(kDatasets, c.dataset.kind)},
          {"glyph", c.dataset.glyph},
          {"components", c.dataset.components},
          {"mixture_radius", c.dataset.mixture_radius},
          {"mixture_std", c.dataset.mixture_std},
          {"moon_noise", c.dataset.moon_noise},
          {"scale", c.dataset.scale},
          {"gaussian_mean", c.dataset.gaussian_mean},
          {"gaussian_std", c.dataset.gaussian_std},
          {"n_classes", c.dataset.n_classes},
          {"n_points", c.target_points}}},
        {"source",
         {{"kind", enum_name(kSources, c.source.kind)},
          {"radius", c.source.radius},
          {"width", c.source.width},
          {"dim", c.source.dim}}},
        {"model", model},
        {"loss", {{"p", c.loss.power_p}, {"c", c.loss.stabilizer_c}, {"cfg_dropout", c.loss.cfg_dropout}}},
        {"time_sampler",
         {{"kind", enum_name(kSamplers, c.time_sampler.kind)},
          {"mu", c.time_sampler.mu},
          {"sigma", c.time_sampler.sigma},
          {"d_mu", opt_num(c.time_sampler.d_mu)},
          {"d_sigma", opt_num(c.time_sampler.d_sigma)}}},
        {"optimizer",
         {{"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"steps", c.optimizer.steps},
          {"batch", c.optimizer.batch},
          {"ema_decay", c.optimizer.ema_decay},
          {"seed", c.optimizer.seed}}},
        {"sampling",
         {{"steps", c.sampling.steps},
          {"grid", c.sampling.grid ? Json(*c.sampling.grid) : Json(nullptr)},
          {"cfg_scale", opt_num(c.sampling.cfg_scale)},
          {"n", c.sampling.n}}},
        {"eval",
         {{"every", c.eval.every},
          {"n_samples", c.eval.n_samples},
          {"n_projections", c.eval.n_projections},
          {"nfe", c.eval.nfe}}},
        {"log_every", c.log_every},
    };
}

inline ExperimentConfig config_from_json(const Json& j) {
    using namespace config_detail;
    ExperimentConfig c;
    Reader root(j, "");
    root.get_enum("objective", kModelKinds, c.objective);
    {
        Reader r = root.child("dataset");
        r.get_enum("kind", kDatasets, c.dataset.kind);
        r.get("glyph", c.dataset.glyph);
        r.get("components", c.dataset.components);
        r.get("mixture_radius", c.dataset.mixture_radius);
        r.get("mixture_std", c.dataset.mixture_std);
        r.get("moon_noise", c.dataset.moon_noise);
        r.get("scale", c.dataset.scale);
        r.get("gaussian_mean", c.dataset.gaussian_mean);
        r.get("gaussian_std", c.dataset.gaussian_std);
        r.get("n_classes", c.dataset.n_classes);
        r.get("n_points", c.target_points);
        r.finish();
    }
    {
        Reader r = root.child("source");
        r.get_enum("kind", kSources, c.source.kind);
        r.get("radius", c.source.radius);
        r.get("width", c.source.width);
        r.get("dim", c.source.dim);
        r.finish();
    }
    {
        Reader r = root.child("model");
        model_from_reader(r, c.model, false);
    }
    {
        Reader r = root.child("loss");
        r.get("p", c.loss.power_p);
        r.get("c", c.loss.stabilizer_c);
        r.get("cfg_dropout", c.loss.cfg_dropout);
        r.finish();
    }
    {
        Reader r = root.child("time_sampler");
        r.get_enum("kind", kSamplers, c.time_sampler.kind);
        r.get("mu", c.time_sampler.mu);
        r.get("sigma", c.time_sampler.sigma);
        r.get("d_mu", c.time_sampler.d_mu);
        r.get("d_sigma", c.time_sampler.d_sigma);
        r.finish();
    }
    {
        Reader r = root.child("optimizer");
        r.get("lr", c.optimizer.lr);
        r.get("beta1", c.optimizer.beta1);
        r.get("beta2", c.optimizer.beta2);
        r.get("eps", c.optimizer.eps);
        r.get("steps", c.optimizer.steps);
        r.get("batch", c.optimizer.batch);
        r.get("ema_decay", c.optimizer.ema_decay);
        r.get("seed", c.optimizer.seed);
        r.finish();
    }
    {
        Reader r = root.child("sampling");
        r.get("steps", c.sampling.steps);
        r.get("grid", c.sampling.grid);
        r.get("cfg_scale", c.sampling.cfg_scale);
        r.get("n", c.sampling.n);
        r.finish();
    }
    {
        Reader r = root.child("eval");
        r.get("every", c.eval.every);
        r.get("n_samples", c.eval.n_samples);
        r.get("n_projections", c.eval.n_projections);
        r.get("nfe", c.eval.nfe);
        r.finish();
    }
    root.get("log_every", c.log_every);
    root.finish();
    c.validate();
    return c;
}

inline void ExperimentConfig::validate() const {
    dataset.validate();
    source.validate();
    if (source.dim != dataset.dim()) {
        throw ValidationError("source.dim", "source dimension " + std::to_string(source.dim) +
                                                " differs from dataset dimension " + std::to_string(dataset.dim()));
    }
    if (target_points == 0) {
        throw ValidationError("dataset.n_points", "must be positive");
    }
    try {
        resolved_model().validate();
    } catch (const ContractError& e) {
        throw ValidationError("model", e.what());
    }
    if (!(loss.power_p >= 0.0)) {
        throw ValidationError("loss.p", "must be >= 0");
    }
    if (!(loss.stabilizer_c > 0.0)) {
        throw ValidationError("loss.c", "must be > 0");
    }
    if (!(loss.cfg_dropout >= 0.0 && loss.cfg_dropout <= 1.0)) {
        throw ValidationError("loss.cfg_dropout", "must lie in [0, 1]");
    }
    if (time_sampler.kind == TimeSamplerKind::LOGNORM) {
        if (!(time_sampler.sigma > 0.0)) {
            throw ValidationError("time_sampler.sigma", "must be > 0");
        }
        if (time_sampler.d_sigma && !(*time_sampler.d_sigma > 0.0)) {
            throw ValidationError("time_sampler.d_sigma", "must be > 0");
        }
    }
    if (!(optimizer.lr > 0.0)) {
        throw ValidationError("optimizer.lr", "must be > 0");
    }
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) {
        throw ValidationError("optimizer.beta1", "must lie in [0, 1)");
    }
    if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
        throw ValidationError("optimizer.beta2", "must lie in [0, 1)");
    }
    if (!(optimizer.eps > 0.0)) {
        throw ValidationError("optimizer.eps", "must be > 0");
    }
    if (optimizer.batch == 0) {
        throw ValidationError("optimizer.batch", "must be positive");
    }
    if (!(optimizer.ema_decay >= 0.0 && optimizer.ema_decay < 1.0)) {
        throw ValidationError("optimizer.ema_decay", "must lie in [0, 1)");
    }
    if (sampling.steps == 0) {
        throw ValidationError("sampling.steps", "must be positive");
    }
    if (sampling.grid) {
        try {
            TimeGrid::parse(*sampling.grid);
        } catch (const ValidationError& e) {
            throw ValidationError("sampling.grid", e.what());
        }
    }
    if (sampling.cfg_scale && dataset.n_classes == 0) {
        throw ValidationError("sampling.cfg_scale", "guidance needs a labeled dataset");
    }
    if (sampling.n == 0) {
        throw ValidationError("sampling.n", "must be positive");
    }
    if (eval.n_samples == 0) {
        throw ValidationError("eval.n_samples", "must be positive");
    }
    if (eval.n_projections == 0) {
        throw ValidationError("eval.n_projections", "must be positive");
    }
    for (std::size_t k : eval.nfe) {
        if (k == 0) {
            throw ValidationError("eval.nfe", "step counts must be positive");
        }
    }
    if (log_every == 0) {
        throw ValidationError("log_every", "must be positive");
    }
}

inline ExperimentConfig parse_config(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ValidationError("<root>", std::string("malformed JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open config '" + path + "'");
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

/// Canonical text: keys sorted at every level, fixed indentation.
inline std::string canonical_dump(const ExperimentConfig& c) { return to_json(c).dump(2); }

/// 64-bit FNV-1a of the canonical dump, as 16 hex digits. Independent of key
/// order in the source file.
inline std::string config_hash(const ExperimentConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace tfm
