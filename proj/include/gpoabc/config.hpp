#ifndef GPOABC_CONFIG_HPP
#define GPOABC_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "baselines.hpp"
#include "errors.hpp"
#include "gpo.hpp"
#include "io.hpp"
#include "models.hpp"
#include "pipeline.hpp"

namespace gpoabc {

using Json = nlohmann::ordered_json;

inline constexpr int config_schema_version = 1;

/// Object view that records which keys were read and rejects the rest.
class JsonReader {
public:
    JsonReader(const Json& j, std::string path) : j_(j), path_(std::move(path))
    {
        require(j.is_object(), ErrorCode::configuration, where() + " must be an object");
    }

    bool has(const std::string& key) const
    {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    const Json& at(const std::string& key)
    {
        seen_.insert(key);
        require(has(key), ErrorCode::configuration, "missing required key " + where(key));
        return j_.at(key);
    }

    JsonReader object(const std::string& key) { return JsonReader(at(key), where(key)); }

    template <typename T>
    T get(const std::string& key)
    {
        const Json& v = at(key);
        try {
            return v.get<T>();
        } catch (const nlohmann::json::exception&) {
            fail(ErrorCode::configuration, where(key) + " has the wrong type");
        }
    }

    template <typename T>
    T get(const std::string& key, T fallback)
    {
        seen_.insert(key);
        return has(key) ? get<T>(key) : fallback;
    }

    double number(const std::string& key, double fallback)
    {
        seen_.insert(key);
        if (!has(key))
            return fallback;
        const Json& v = at(key);
        require(v.is_number(), ErrorCode::configuration, where(key) + " must be a number");
        return v.get<double>();
    }

    std::size_t count(const std::string& key, std::size_t fallback)
    {
        seen_.insert(key);
        if (!has(key))
            return fallback;
        const Json& v = at(key);
        require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), ErrorCode::configuration,
            where(key) + " must be a non-negative integer");
        return v.get<std::size_t>();
    }

    Eigen::VectorXd vector(const std::string& key)
    {
        const Json& v = at(key);
        require(v.is_array(), ErrorCode::configuration, where(key) + " must be an array of numbers");
        Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) {
            require(v[i].is_number(), ErrorCode::configuration, where(key) + " must be an array of numbers");
            out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
        }
        return out;
    }

    Eigen::VectorXd vector(const std::string& key, Eigen::VectorXd fallback)
    {
        seen_.insert(key);
        return has(key) ? vector(key) : fallback;
    }

    std::string where(const std::string& key = {}) const
    {
        const std::string base = path_.empty() ? "config" : path_;
        return key.empty() ? "'" + base + "'" : "'" + base + "." + key + "'";
    }

    /// Every key present must have been read.
    void finish() const
    {
        for (const auto& item : j_.items())
            require(seen_.count(item.key()) != 0, ErrorCode::configuration,
                "unknown key " + where(item.key()));
    }

private:
    const Json& j_;
    std::string path_;
    mutable std::set<std::string> seen_;
};

// --- sections ------------------------------------------------------------------

struct DataSection {
    std::string path;
    IngestOptions ingest;
};

struct SimulateSection {
    Eigen::VectorXd theta;
    std::size_t T = 500;
    std::size_t assets = 1;
    double correlation = 0.0;
    std::string start_date = "2000-01-03";
};

struct CopulaSection {
    std::size_t estimation_points = 465;
    double alpha_bar = 0.99;
    std::size_t draws = 100000;
    Eigen::VectorXd weights; // empty: equal
    double nu_min = 2.1;
    double nu_max = 100.0;
};

struct BacktestSection {
    std::string var_path;
    double alpha_bar = 0.99;
    std::string from_date; // empty: whole series
};

struct RunConfig {
    int schema_version = config_schema_version;
    std::uint64_t seed = 1;
    EstimatorSettings estimator = EstimatorSettings::defaults(ModelId::gsv);
    SearchBox box = default_search_box(ModelId::gsv);
    std::optional<DataSection> data;
    SimulateSection simulate;
    GpoConfig gpo = GpoConfig::defaults(3);
    LaplaceOptions laplace;
    PmhConfig pmh = PmhConfig::gsv_defaults();
    SpsaConfig spsa;
    Eigen::VectorXd spsa_theta0 = PmhConfig::gsv_defaults().theta0;
    std::vector<double> epsilons{0.1, 0.2, 0.3, 0.4, 0.5};
    CopulaSection copula;
    std::optional<BacktestSection> backtest;
    std::string export_run_dir;

    ModelId model() const noexcept { return estimator.model; }
    std::size_t dim() const noexcept { return parameter_count(estimator.model); }
};

namespace detail {

    inline PriorComponent parse_prior_component(JsonReader r)
    {
        const auto type = r.get<std::string>("type");
        PriorComponent c;
        if (type == "normal") {
            c = NormalPrior{r.get<double>("mean"), r.get<double>("sd")};
            require(std::get<NormalPrior>(c).sd > 0.0, ErrorCode::configuration, r.where("sd") + " must be > 0");
        } else if (type == "truncated_normal") {
            TruncatedNormalPrior p{r.get<double>("mean"), r.get<double>("sd"), r.get<double>("lower"), r.get<double>("upper")};
            require(p.sd > 0.0 && p.lower < p.upper, ErrorCode::configuration, r.where() + " needs sd > 0, lower < upper");
            c = p;
        } else if (type == "gamma") {
            GammaPrior p{r.get<double>("shape"), r.get<double>("rate")};
            require(p.shape > 0.0 && p.rate > 0.0, ErrorCode::configuration, r.where() + " needs shape, rate > 0");
            c = p;
        } else if (type == "scaled_beta") {
            ScaledBetaPrior p{r.get<double>("shape1"), r.get<double>("shape2"), r.get<double>("scale")};
            require(p.shape1 > 0.0 && p.shape2 > 0.0 && p.scale > 0.0, ErrorCode::configuration,
                r.where() + " needs positive shapes and scale");
            c = p;
        } else {
            fail(ErrorCode::configuration, r.where("type") + ": unknown prior type '" + type + "'");
        }
        r.finish();
        return c;
    }

    inline Json prior_to_json(const PriorComponent& c)
    {
        return std::visit(
            [](const auto& p) -> Json {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, NormalPrior>)
                    return {{"type", "normal"}, {"mean", p.mean}, {"sd", p.sd}};
                else if constexpr (std::is_same_v<T, TruncatedNormalPrior>)
                    return {{"type", "truncated_normal"}, {"mean", p.mean}, {"sd", p.sd}, {"lower", p.lower},
                        {"upper", p.upper}};
                else if constexpr (std::is_same_v<T, GammaPrior>)
                    return {{"type", "gamma"}, {"shape", p.shape}, {"rate", p.rate}};
                else
                    return {{"type", "scaled_beta"}, {"shape1", p.shape1}, {"shape2", p.shape2}, {"scale", p.scale}};
            },
            c);
    }

    inline Json vec_json(const Eigen::VectorXd& v)
    {
        Json a = Json::array();
        for (Eigen::Index i = 0; i < v.size(); ++i)
            a.push_back(v(i));
        return a;
    }

    inline void require_dim(const Eigen::VectorXd& v, std::size_t p, const std::string& where)
    {
        require(static_cast<std::size_t>(v.size()) == p, ErrorCode::configuration,
            where + " needs " + std::to_string(p) + " entries, found " + std::to_string(v.size()));
    }

} // namespace detail

/// Parses and validates a configuration document; defaults follow the chosen model.
inline RunConfig parse_config(const Json& doc)
{
    JsonReader root(doc, "");
    RunConfig cfg;
    cfg.schema_version = root.get<int>("schema_version");
    require(cfg.schema_version == config_schema_version, ErrorCode::configuration,
        "unsupported schema_version " + std::to_string(cfg.schema_version) + " (expected "
            + std::to_string(config_schema_version) + ")");
    cfg.seed = root.get<std::uint64_t>("seed", 1);

    ModelId model = ModelId::gsv;
    ObservationScale scale = ObservationScale::stable_scale;
    if (root.has("model")) {
        JsonReader m = root.object("model");
        model = parse_model_id(m.get<std::string>("id"));
        const auto s = m.get<std::string>("observation_scale", "stable_scale");
        if (s == "stable_scale")
            scale = ObservationScale::stable_scale;
        else if (s == "variance_matched")
            scale = ObservationScale::variance_matched;
        else
            fail(ErrorCode::configuration, m.where("observation_scale") + " must be 'stable_scale' or 'variance_matched'");
        m.finish();
    } else {
        root.at("model");
    }
    const std::size_t p = parameter_count(model);
    cfg.estimator = EstimatorSettings::defaults(model);
    cfg.estimator.scale = scale;
    cfg.box = default_search_box(model);
    cfg.gpo = GpoConfig::defaults(p);
    cfg.pmh = model == ModelId::gsv ? PmhConfig::gsv_defaults() : PmhConfig::asv_defaults();
    cfg.spsa_theta0 = cfg.pmh.theta0;
    if (model == ModelId::gsv)
        cfg.simulate.theta = Eigen::Vector3d(0.20, 0.96, 0.15);
    else
        cfg.simulate.theta = Eigen::Vector4d(0.20, 0.96, 0.15, 1.8);

    if (root.has("prior")) {
        const Json& pj = root.at("prior");
        require(pj.is_array() && pj.size() == p, ErrorCode::configuration,
            "'config.prior' must be an array with one entry per parameter");
        cfg.estimator.prior.components.clear();
        for (std::size_t i = 0; i < pj.size(); ++i)
            cfg.estimator.prior.components.push_back(
                detail::parse_prior_component(JsonReader(pj[i], "config.prior[" + std::to_string(i) + "]")));
    }

    if (root.has("search_box")) {
        JsonReader b = root.object("search_box");
        cfg.box.lower = b.vector("lower");
        cfg.box.upper = b.vector("upper");
        b.finish();
        detail::require_dim(cfg.box.lower, p, "'config.search_box.lower'");
        detail::require_dim(cfg.box.upper, p, "'config.search_box.upper'");
    }
    cfg.box.validate_against(cfg.estimator.prior);

    if (root.has("data")) {
        JsonReader d = root.object("data");
        DataSection ds;
        ds.path = d.get<std::string>("path");
        ds.ingest.mode = parse_ingest_mode(d.get<std::string>("mode", "returns"));
        ds.ingest.date_column = d.get<std::string>("date_column", "date");
        ds.ingest.columns = d.get<std::vector<std::string>>("columns", {});
        d.finish();
        cfg.data = ds;
    }

    if (root.has("simulate")) {
        JsonReader s = root.object("simulate");
        cfg.simulate.theta = s.vector("theta", cfg.simulate.theta);
        cfg.simulate.T = s.count("T", cfg.simulate.T);
        cfg.simulate.assets = s.count("assets", cfg.simulate.assets);
        cfg.simulate.correlation = s.number("correlation", cfg.simulate.correlation);
        cfg.simulate.start_date = s.get<std::string>("start_date", cfg.simulate.start_date);
        s.finish();
        require(is_iso_date(cfg.simulate.start_date), ErrorCode::configuration,
            "'config.simulate.start_date' must be YYYY-MM-DD");
    }
    detail::require_dim(cfg.simulate.theta, p, "'config.simulate.theta'");

    if (root.has("smc")) {
        JsonReader s = root.object("smc");
        cfg.estimator.particles = s.count("particles", cfg.estimator.particles);
        cfg.estimator.estimator = parse_estimator(s.get<std::string>("estimator", "abc"));
        cfg.estimator.abc.epsilon = s.number("epsilon", cfg.estimator.abc.epsilon);
        cfg.estimator.abc.psi = parse_psi(s.get<std::string>("psi", std::string(to_string(cfg.estimator.abc.psi))));
        s.finish();
    }
    cfg.estimator.validate();

    if (root.has("gpo")) {
        JsonReader g = root.object("gpo");
        cfg.gpo.initial_samples = g.count("initial_samples", cfg.gpo.initial_samples);
        cfg.gpo.iterations = g.count("iterations", cfg.gpo.iterations);
        cfg.gpo.refit_interval = g.count("refit_interval", cfg.gpo.refit_interval);
        cfg.gpo.acquisition.zeta = g.number("zeta", cfg.gpo.acquisition.zeta);
        if (g.has("jitter")) {
            const Json& jv = g.at("jitter");
            if (jv.is_number())
                cfg.gpo.acquisition.jitter_variances = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(p), jv.get<double>());
            else
                cfg.gpo.acquisition.jitter_variances = g.vector("jitter");
        }
        if (g.has("ei_threshold"))
            cfg.gpo.acquisition.ei_threshold = g.get<double>("ei_threshold");
        cfg.gpo.acquisition.direct.max_evaluations = g.count("direct_evaluations", cfg.gpo.acquisition.direct.max_evaluations);
        cfg.gpo.initial_restarts = g.count("initial_restarts", cfg.gpo.initial_restarts);
        cfg.gpo.refit_restarts = g.count("refit_restarts", cfg.gpo.refit_restarts);
        g.finish();
    }
    cfg.gpo.validate(p);

    if (root.has("laplace")) {
        JsonReader l = root.object("laplace");
        cfg.laplace.direct.max_evaluations = l.count("direct_evaluations", cfg.laplace.direct.max_evaluations);
        cfg.laplace.hessian_relative_step = l.number("hessian_relative_step", cfg.laplace.hessian_relative_step);
        cfg.laplace.eigenvalue_floor = l.number("eigenvalue_floor", cfg.laplace.eigenvalue_floor);
        l.finish();
        require(cfg.laplace.hessian_relative_step > 0.0 && cfg.laplace.eigenvalue_floor > 0.0, ErrorCode::configuration,
            "laplace step and eigenvalue floor must be > 0");
        cfg.laplace.direct.validate();
    }

    if (root.has("pmh")) {
        JsonReader m = root.object("pmh");
        cfg.pmh.theta0 = m.vector("theta0", cfg.pmh.theta0);
        if (m.has("proposal_diag")) {
            const Eigen::VectorXd diag = m.vector("proposal_diag");
            detail::require_dim(diag, p, "'config.pmh.proposal_diag'");
            cfg.pmh.proposal_covariance = diag.asDiagonal();
        }
        cfg.pmh.iterations = m.count("iterations", cfg.pmh.iterations);
        cfg.pmh.burnin = m.count("burnin", cfg.pmh.burnin);
        m.finish();
        detail::require_dim(cfg.pmh.theta0, p, "'config.pmh.theta0'");
    }
    cfg.pmh.validate();

    if (root.has("spsa")) {
        JsonReader s = root.object("spsa");
        cfg.spsa_theta0 = s.vector("theta0", cfg.spsa_theta0);
        cfg.spsa.a = s.number("a", cfg.spsa.a);
        cfg.spsa.c = s.number("c", cfg.spsa.c);
        cfg.spsa.A = s.number("A", cfg.spsa.A);
        cfg.spsa.alpha_exp = s.number("alpha", cfg.spsa.alpha_exp);
        cfg.spsa.gamma_exp = s.number("gamma", cfg.spsa.gamma_exp);
        cfg.spsa.iterations = s.count("iterations", cfg.spsa.iterations);
        s.finish();
        detail::require_dim(cfg.spsa_theta0, p, "'config.spsa.theta0'");
    }
    cfg.spsa.validate();

    if (root.has("epsilon_sweep")) {
        JsonReader e = root.object("epsilon_sweep");
        cfg.epsilons = e.get<std::vector<double>>("epsilons");
        e.finish();
        require(!cfg.epsilons.empty(), ErrorCode::configuration, "'config.epsilon_sweep.epsilons' is empty");
        for (double eps : cfg.epsilons)
            require(eps > 0.0, ErrorCode::configuration, "sweep tolerances must be > 0");
    }

    if (root.has("copula")) {
        JsonReader c = root.object("copula");
        cfg.copula.estimation_points = c.count("estimation_points", cfg.copula.estimation_points);
        cfg.copula.alpha_bar = c.number("alpha_bar", cfg.copula.alpha_bar);
        cfg.copula.draws = c.count("draws", cfg.copula.draws);
        cfg.copula.weights = c.vector("weights", Eigen::VectorXd());
        if (c.has("nu_bounds")) {
            const Eigen::VectorXd b = c.vector("nu_bounds");
            detail::require_dim(b, 2, "'config.copula.nu_bounds'");
            cfg.copula.nu_min = b(0);
            cfg.copula.nu_max = b(1);
        }
        c.finish();
    }
    require(cfg.copula.alpha_bar > 0.0 && cfg.copula.alpha_bar < 1.0, ErrorCode::configuration,
        "'config.copula.alpha_bar' must lie in (0, 1)");
    require(cfg.copula.draws >= 1000, ErrorCode::configuration, "'config.copula.draws' must be >= 1000");
    require(cfg.copula.nu_min > 2.0 && cfg.copula.nu_min < cfg.copula.nu_max, ErrorCode::configuration,
        "'config.copula.nu_bounds' must satisfy 2 < min < max");

    if (root.has("backtest")) {
        JsonReader b = root.object("backtest");
        BacktestSection bs;
        bs.var_path = b.get<std::string>("var_path");
        bs.alpha_bar = b.number("alpha_bar", bs.alpha_bar);
        bs.from_date = b.get<std::string>("from_date", "");
        b.finish();
        require(bs.alpha_bar > 0.0 && bs.alpha_bar < 1.0, ErrorCode::configuration,
            "'config.backtest.alpha_bar' must lie in (0, 1)");
        require(bs.from_date.empty() || is_iso_date(bs.from_date), ErrorCode::configuration,
            "'config.backtest.from_date' must be YYYY-MM-DD");
        cfg.backtest = bs;
    }

    if (root.has("export")) {
        JsonReader e = root.object("export");
        cfg.export_run_dir = e.get<std::string>("run_dir");
        e.finish();
    }

    root.finish();
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    Json doc;
    try {
        doc = Json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::configuration, "'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

/// Fully resolved configuration: every default written out, reloadable by parse_config.
inline Json to_json(const RunConfig& cfg)
{
    using detail::vec_json;
    Json j;
    j["schema_version"] = cfg.schema_version;
    j["seed"] = cfg.seed;
    j["model"] = {{"id", to_string(cfg.model())},
        {"observation_scale",
            cfg.estimator.scale == ObservationScale::stable_scale ? "stable_scale" : "variance_matched"}};
    Json prior = Json::array();
    for (const auto& c : cfg.estimator.prior.components)
        prior.push_back(detail::prior_to_json(c));
    j["prior"] = prior;
    j["search_box"] = {{"lower", vec_json(cfg.box.lower)}, {"upper", vec_json(cfg.box.upper)}};
    if (cfg.data) {
        Json d;
        d["path"] = cfg.data->path;
        d["mode"] = cfg.data->ingest.mode == IngestMode::prices ? "prices" : "returns";
        d["date_column"] = cfg.data->ingest.date_column;
        d["columns"] = cfg.data->ingest.columns;
        j["data"] = d;
    }
    j["simulate"] = {{"theta", vec_json(cfg.simulate.theta)}, {"T", cfg.simulate.T}, {"assets", cfg.simulate.assets},
        {"correlation", cfg.simulate.correlation}, {"start_date", cfg.simulate.start_date}};
    j["smc"] = {{"particles", cfg.estimator.particles}, {"estimator", to_string(cfg.estimator.estimator)},
        {"epsilon", cfg.estimator.abc.epsilon}, {"psi", to_string(cfg.estimator.abc.psi)}};
    Json gpo = {{"initial_samples", cfg.gpo.initial_samples}, {"iterations", cfg.gpo.iterations},
        {"refit_interval", cfg.gpo.refit_interval}, {"zeta", cfg.gpo.acquisition.zeta},
        {"jitter", vec_json(cfg.gpo.acquisition.jitter_variances)}};
    if (cfg.gpo.acquisition.ei_threshold)
        gpo["ei_threshold"] = *cfg.gpo.acquisition.ei_threshold;
    gpo["direct_evaluations"] = cfg.gpo.acquisition.direct.max_evaluations;
    gpo["initial_restarts"] = cfg.gpo.initial_restarts;
    gpo["refit_restarts"] = cfg.gpo.refit_restarts;
    j["gpo"] = gpo;
    j["laplace"] = {{"direct_evaluations", cfg.laplace.direct.max_evaluations},
        {"hessian_relative_step", cfg.laplace.hessian_relative_step}, {"eigenvalue_floor", cfg.laplace.eigenvalue_floor}};
    j["pmh"] = {{"theta0", vec_json(cfg.pmh.theta0)}, {"proposal_diag", vec_json(cfg.pmh.proposal_covariance.diagonal())},
        {"iterations", cfg.pmh.iterations}, {"burnin", cfg.pmh.burnin}};
    j["spsa"] = {{"theta0", vec_json(cfg.spsa_theta0)}, {"a", cfg.spsa.a}, {"c", cfg.spsa.c}, {"A", cfg.spsa.A},
        {"alpha", cfg.spsa.alpha_exp}, {"gamma", cfg.spsa.gamma_exp}, {"iterations", cfg.spsa.iterations}};
    j["epsilon_sweep"] = {{"epsilons", cfg.epsilons}};
    Json copula = {{"estimation_points", cfg.copula.estimation_points}, {"alpha_bar", cfg.copula.alpha_bar},
        {"draws", cfg.copula.draws}};
    if (cfg.copula.weights.size() > 0)
        copula["weights"] = vec_json(cfg.copula.weights);
    copula["nu_bounds"] = Json::array({cfg.copula.nu_min, cfg.copula.nu_max});
    j["copula"] = copula;
    if (cfg.backtest)
        j["backtest"] = {{"var_path", cfg.backtest->var_path}, {"alpha_bar", cfg.backtest->alpha_bar},
            {"from_date", cfg.backtest->from_date}};
    if (!cfg.export_run_dir.empty())
        j["export"] = {{"run_dir", cfg.export_run_dir}};
    return j;
}

} // namespace gpoabc

#endif
