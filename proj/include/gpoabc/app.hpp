#ifndef GPOABC_APP_HPP
#define GPOABC_APP_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "baselines.hpp"
#include "config.hpp"
#include "copula.hpp"
#include "errors.hpp"
#include "gpo.hpp"
#include "io.hpp"
#include "models.hpp"
#include "pipeline.hpp"
#include "rng.hpp"

namespace gpoabc {

inline const std::vector<std::string>& command_names()
{
    static const std::vector<std::string> names{"simulate", "infer-gpo", "infer-pmh", "infer-spsa", "epsilon-sweep",
        "var-pipeline", "backtest", "export-plot-data"};
    return names;
}

/// Process exit status for each error category.
inline int exit_code(ErrorCode code)
{
    switch (code) {
    case ErrorCode::configuration: return 2;
    case ErrorCode::io: return 3;
    case ErrorCode::domain: return 4;
    case ErrorCode::numerical: return 5;
    case ErrorCode::unsupported: return 6;
    case ErrorCode::contract: return 7;
    case ErrorCode::state: return 8;
    }
    return 1;
}

namespace streams {
    inline constexpr std::uint64_t simulate = 1;
    inline constexpr std::uint64_t perturb = 2;
    inline constexpr std::uint64_t gpo = 3;
    inline constexpr std::uint64_t pmh = 4;
    inline constexpr std::uint64_t spsa = 5;
    inline constexpr std::uint64_t var = 6;
    inline constexpr std::uint64_t sweep = 7;
} // namespace streams

// --- JSON helpers --------------------------------------------------------------

/// Non-finite numbers become null.
inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json vec_json(const Eigen::VectorXd& v)
{
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(num(v(i)));
    return a;
}

inline Json mat_json(const Eigen::MatrixXd& m)
{
    Json a = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        a.push_back(vec_json(m.row(r).transpose()));
    return a;
}

inline Json named(const std::vector<std::string>& names, const Eigen::VectorXd& v)
{
    Json o = Json::object();
    for (std::size_t i = 0; i < names.size(); ++i)
        o[names[i]] = num(v(static_cast<Eigen::Index>(i)));
    return o;
}

inline Json hyperparameters_json(const GpHyperparameters& h)
{
    return {{"bias_variance", h.bias_variance}, {"matern_variance", h.matern_variance},
        {"length_scales", vec_json(h.length_scales)}, {"noise_variance", h.noise_variance}};
}

inline Json laplace_json(const LaplacePosterior& lp, const std::vector<std::string>& names)
{
    Json marginals = Json::array();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        marginals.push_back({{"parameter", names[i]}, {"mean", num(lp.theta_map(k))}, {"sd", num(lp.stddev(k))}});
    }
    return {{"parameters", names}, {"theta_map", vec_json(lp.theta_map)},
        {"log_posterior_at_map", num(lp.log_posterior_at_map)}, {"stddev", vec_json(lp.stddev)},
        {"covariance", mat_json(lp.covariance)}, {"hessian", mat_json(lp.hessian)},
        {"raw_hessian", mat_json(lp.raw_hessian)}, {"on_boundary", lp.on_boundary}, {"repaired", lp.repaired},
        {"marginals", marginals}};
}

inline Json trace_record_json(const GpoTraceRecord& r)
{
    return {{"phase", r.phase == GpoPhase::initial_design ? "design" : "iteration"}, {"k", r.index},
        {"theta", vec_json(r.theta)}, {"xi", num(r.xi)}, {"xi_used", num(r.xi_used)}, {"ei", num(r.ei)},
        {"mu_max", num(r.mu_max)}, {"hyper_hash", r.hyper_hash}};
}

/// One JSON object per line: the design points first, then one per iteration.
inline std::string trace_ndjson(const GpoRunState& state)
{
    std::string out;
    for (const auto& r : state.initial_design)
        out += trace_record_json(r).dump() + "\n";
    for (const auto& r : state.trace)
        out += trace_record_json(r).dump() + "\n";
    return out;
}

inline Json run_summary_json(const GpoRunState& s)
{
    return {{"iterations", s.iteration}, {"evaluations", s.evaluations}, {"floored", s.floored}, {"refits", s.refits},
        {"converged_by_ei", s.converged_by_ei}, {"mu_max", num(s.mu_max)},
        {"hyperparameters", hyperparameters_json(s.hyperparameters)},
        {"hyper_hash", hyperparameter_hash(s.hyperparameters)}};
}

// --- run directory -------------------------------------------------------------

class RunDirectory {
public:
    explicit RunDirectory(std::filesystem::path root) : root_(std::move(root))
    {
        std::filesystem::create_directories(root_);
    }

    const std::filesystem::path& root() const noexcept { return root_; }

    void save(const std::string& name, const std::string& content)
    {
        write_text(root_ / name, content);
        if (std::find(artifacts_.begin(), artifacts_.end(), name) == artifacts_.end())
            artifacts_.push_back(name);
    }

    void save_json(const std::string& name, const Json& j) { save(name, j.dump(2) + "\n"); }

    const std::vector<std::string>& artifacts() const noexcept { return artifacts_; }

private:
    std::filesystem::path root_;
    std::vector<std::string> artifacts_;
};

struct CommandContext {
    RunConfig config;
    RunDirectory& out;
    std::size_t threads = 1;
};

// --- data ----------------------------------------------------------------------

inline std::vector<std::string> simulated_dates(const std::string& start, std::size_t T)
{
    std::vector<std::string> dates(T);
    for (std::size_t t = 0; t < T; ++t)
        dates[t] = add_days(start, static_cast<long>(t));
    return dates;
}

inline PanelSeries simulate_from_config(const RunConfig& cfg)
{
    const RngStream rng = RngStream(cfg.seed).split(streams::simulate);
    return simulate_panel(ThetaVector(cfg.model(), cfg.simulate.theta), cfg.simulate.T, cfg.simulate.assets,
        cfg.simulate.correlation, rng, cfg.estimator.scale);
}

/// The configured data file, or a series simulated from the `simulate` section.
inline ReturnSeries load_series(const RunConfig& cfg)
{
    if (cfg.data)
        return ingest_csv(cfg.data->path, cfg.data->ingest);
    const PanelSeries panel = simulate_from_config(cfg);
    ReturnSeries s;
    s.dates = simulated_dates(cfg.simulate.start_date, cfg.simulate.T);
    s.returns = panel.observations;
    if (cfg.simulate.assets == 1) {
        s.assets = {"y"};
    } else {
        for (std::size_t i = 0; i < cfg.simulate.assets; ++i)
            s.assets.push_back("y" + std::to_string(i + 1));
    }
    return s;
}

inline Eigen::VectorXd single_series(const RunConfig& cfg)
{
    const ReturnSeries s = load_series(cfg);
    require(s.assets.size() == 1, ErrorCode::configuration,
        "this command needs one return series; select a column with data.columns");
    return s.asset(0);
}

// --- commands -------------------------------------------------------------------

inline void cmd_simulate(CommandContext& ctx)
{
    const RunConfig& cfg = ctx.config;
    const PanelSeries panel = simulate_from_config(cfg);
    const auto dates = simulated_dates(cfg.simulate.start_date, cfg.simulate.T);
    const std::size_t d = cfg.simulate.assets;
    auto names = [&](const std::string& prefix) {
        std::vector<std::string> v;
        for (std::size_t i = 0; i < d; ++i)
            v.push_back(d == 1 ? prefix : prefix + std::to_string(i + 1));
        return v;
    };

    std::vector<std::string> header{"date"};
    for (const auto& n : names("y"))
        header.push_back(n);
    CsvTable returns(header);
    for (std::size_t t = 0; t < cfg.simulate.T; ++t) {
        std::vector<std::string> row{dates[t]};
        for (std::size_t i = 0; i < d; ++i)
            row.push_back(format_double(panel.observations(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i))));
        returns.add(row);
    }
    ctx.out.save("returns.csv", returns.str());

    std::vector<std::string> sheader{"t"};
    for (const auto& n : names("x"))
        sheader.push_back(n);
    CsvTable states(sheader);
    for (Eigen::Index t = 0; t < panel.states.rows(); ++t) {
        std::vector<std::string> row{std::to_string(t)};
        for (Eigen::Index i = 0; i < panel.states.cols(); ++i)
            row.push_back(format_double(panel.states(t, i)));
        states.add(row);
    }
    ctx.out.save("states.csv", states.str());
}

namespace detail {

    struct GpoInference {
        LaplacePosterior posterior;
        GpoRunState state;
    };

    inline GpoInference infer_gpo(const RunConfig& cfg, const EstimatorSettings& estimator, const Eigen::VectorXd& y,
        const RngStream& rng, std::size_t threads)
    {
        RngStream perturb_rng = rng.split(0);
        const Eigen::VectorXd observations = prepare_observations(estimator, y, perturb_rng);
        const LogPosteriorFn evaluator = make_evaluator(estimator, observations);
        GpoConfig gpo = cfg.gpo;
        gpo.threads = threads;
        RngStream gpo_rng = rng.split(1);
        GpoResult run = gpo_run(evaluator, cfg.box, gpo, gpo_rng);
        GpoInference out;
        out.posterior = extract_laplace(run.model, cfg.box, cfg.laplace);
        out.state = std::move(run.state);
        return out;
    }

    inline Json estimator_json(const EstimatorSettings& s)
    {
        Json j = {{"model", to_string(s.model)}, {"estimator", to_string(s.estimator)}, {"particles", s.particles}};
        if (s.estimator == Estimator::abc) {
            j["epsilon"] = s.abc.epsilon;
            j["psi"] = to_string(s.abc.psi);
        }
        return j;
    }

} // namespace detail

inline void cmd_infer_gpo(CommandContext& ctx)
{
    const RunConfig& cfg = ctx.config;
    const Eigen::VectorXd y = single_series(cfg);
    const RngStream rng = RngStream(cfg.seed).split(streams::gpo);
    const auto result = detail::infer_gpo(cfg, cfg.estimator, y, rng, ctx.threads);
    ctx.out.save("trace.ndjson", trace_ndjson(result.state));
    Json j = detail::estimator_json(cfg.estimator);
    j["seed"] = cfg.seed;
    j["observations"] = y.size();
    j["posterior"] = laplace_json(result.posterior, parameter_names(cfg.model()));
    j["run"] = run_summary_json(result.state);
    ctx.out.save_json("posterior.json", j);
}

inline void cmd_infer_pmh(CommandContext& ctx)
{
    const RunConfig& cfg = ctx.config;
    const Eigen::VectorXd y = single_series(cfg);
    const RngStream rng = RngStream(cfg.seed).split(streams::pmh);
    RngStream perturb_rng = rng.split(0);
    const Eigen::VectorXd observations = prepare_observations(cfg.estimator, y, perturb_rng);
    const PmhResult res = pmh_run(make_evaluator(cfg.estimator, observations), cfg.pmh, rng.split(1));

    const auto names = parameter_names(cfg.model());
    std::vector<std::string> header{"iteration"};
    header.insert(header.end(), names.begin(), names.end());
    header.push_back("xi");
    header.push_back("accepted");
    CsvTable chain(header);
    for (Eigen::Index k = 0; k < res.chain.rows(); ++k) {
        std::vector<std::string> row{std::to_string(k)};
        for (Eigen::Index i = 0; i < res.chain.cols(); ++i)
            row.push_back(format_double(res.chain(k, i)));
        row.push_back(format_double(res.xi(k)));
        row.push_back(res.accepted[static_cast<std::size_t>(k)] ? "1" : "0");
        chain.add(row);
    }
    ctx.out.save("chain.csv", chain.str());

    Json j = detail::estimator_json(cfg.estimator);
    j["seed"] = cfg.seed;
    j["parameters"] = names;
    j["iterations"] = cfg.pmh.iterations;
    j["burnin"] = cfg.pmh.burnin;
    j["evaluations"] = res.evaluations;
    j["acceptance_rate"] = res.acceptance_rate;
    j["posterior_mean"] = vec_json(res.posterior_mean);
    j["posterior_sd"] = vec_json(res.posterior_covariance.diagonal().cwiseSqrt());
    j["posterior_covariance"] = mat_json(res.posterior_covariance);
    ctx.out.save_json("pmh.json", j);
}

inline void cmd_infer_spsa(CommandContext& ctx)
{
    const RunConfig& cfg = ctx.config;
    const Eigen::VectorXd y = single_series(cfg);
    const RngStream rng = RngStream(cfg.seed).split(streams::spsa);
    RngStream perturb_rng = rng.split(0);
    const Eigen::VectorXd observations = prepare_observations(cfg.estimator, y, perturb_rng);
    const SpsaResult res = spsa_run(make_evaluator(cfg.estimator, observations), cfg.spsa, cfg.spsa_theta0, cfg.box,
        rng.split(1));

    const auto names = parameter_names(cfg.model());
    std::vector<std::string> header{"iteration"};
    header.insert(header.end(), names.begin(), names.end());
    for (const char* h : {"xi_plus", "xi_minus", "skipped"})
        header.push_back(h);
    CsvTable table(header);
    for (Eigen::Index n = 0; n < res.iterates.rows(); ++n) {
        std::vector<std::string> row{std::to_string(n)};
        for (Eigen::Index i = 0; i < res.iterates.cols(); ++i)
            row.push_back(format_double(res.iterates(n, i)));
        if (n == 0) {
            row.insert(row.end(), {"", "", "0"});
        } else {
            const SpsaStep& s = res.steps[static_cast<std::size_t>(n - 1)];
            row.push_back(format_double(s.xi_plus));
            row.push_back(format_double(s.xi_minus));
            row.push_back(s.skipped ? "1" : "0");
        }
        table.add(row);
    }
    ctx.out.save("spsa.csv", table.str());

    Json j = detail::estimator_json(cfg.estimator);
    j["seed"] = cfg.seed;
    j["parameters"] = names;
    j["iterations"] = cfg.spsa.iterations;
    j["evaluations"] = res.evaluations;
    j["skipped"] = res.skipped;
    j["theta_final"] = vec_json(res.iterates.bottomRows(1).transpose());
    ctx.out.save_json("spsa.json", j);
}

inline void cmd_epsilon_sweep(CommandContext& ctx)
{
    const RunConfig& cfg = ctx.config;
    require(cfg.estimator.estimator == Estimator::abc, ErrorCode::configuration,
        "epsilon-sweep needs smc.estimator = 'abc'");
    const Eigen::VectorXd y = single_series(cfg);
    const RngStream rng = RngStream(cfg.seed).split(streams::sweep);
    const auto names = parameter_names(cfg.model());

    Json records = Json::array();
    CsvTable table({"epsilon", "parameter", "theta_map", "sd"});
    for (std::size_t e = 0; e < cfg.epsilons.size(); ++e) {
        EstimatorSettings est = cfg.estimator;
        est.abc.epsilon = cfg.epsilons[e];
        const auto result = detail::infer_gpo(cfg, est, y, rng.split(e), ctx.threads);
        ctx.out.save("trace_eps" + std::to_string(e) + ".ndjson", trace_ndjson(result.state));
        Json rec = detail::estimator_json(est);
        rec["posterior"] = laplace_json(result.posterior, names);
        rec["run"] = run_summary_json(result.state);
        records.push_back(rec);
        for (std::size_t i = 0; i < names.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            table.row(cfg.epsilons[e], names[i], result.posterior.theta_map(k), result.posterior.stddev(k));
        }
    }
    ctx.out.save_json("sweep.json", {{"seed", cfg.seed}, {"records", records}});
    ctx.out.save("sweep.csv", table.str());
}

inline void cmd_var_pipeline(CommandContext& ctx)
{
    const RunConfig& cfg = ctx.config;
    const ReturnSeries data = load_series(cfg);
    VarPipelineSettings s;
    s.estimator = cfg.estimator;
    s.box = cfg.box;
    s.gpo = cfg.gpo;
    s.laplace = cfg.laplace;
    s.estimation_points = cfg.copula.estimation_points;
    s.alpha_bar = cfg.copula.alpha_bar;
    s.draws = cfg.copula.draws;
    s.weights = cfg.copula.weights;
    s.nu_min = cfg.copula.nu_min;
    s.nu_max = cfg.copula.nu_max;
    s.threads = ctx.threads;
    const VarPipelineResult res = run_var_pipeline(data, s, RngStream(cfg.seed).split(streams::var));

    const auto names = parameter_names(cfg.model());
    Json margins = Json::array();
    for (const auto& f : res.fits) {
        ctx.out.save("trace_" + f.margin.asset + ".ndjson", trace_ndjson(f.state));
        Json sorted = Json::array();
        for (double e : f.margin.distribution.sorted())
            sorted.push_back(e);
        margins.push_back({{"asset", f.margin.asset}, {"model", to_string(f.margin.model)},
            {"theta", named(names, f.margin.theta)}, {"posterior", laplace_json(f.posterior, names)},
            {"run", run_summary_json(f.state)}, {"sorted_residuals", sorted}});
    }
    Json copula = {{"family", "student_t"}, {"assets", data.assets}, {"nu", res.copula.nu},
        {"nu_log_likelihood", num(res.dof.log_likelihood)}, {"nu_on_boundary", res.dof.on_boundary},
        {"nu_bounds", Json::array({cfg.copula.nu_min, cfg.copula.nu_max})},
        {"correlation", mat_json(res.copula.correlation)}, {"weights", vec_json(res.weights)},
        {"alpha_bar", cfg.copula.alpha_bar}, {"draws", cfg.copula.draws},
        {"estimation_points", cfg.copula.estimation_points}, {"estimator", detail::estimator_json(cfg.estimator)},
        {"margins", margins}};
    ctx.out.save_json("copula.json", copula);

    const auto T = static_cast<Eigen::Index>(data.length());
    CsvTable var({"date", "var", "realised", "violation"});
    for (Eigen::Index t = 0; t < T; ++t)
        var.row(data.dates[static_cast<std::size_t>(t)], res.var(t), res.realised(t), -res.realised(t) > res.var(t));
    ctx.out.save("var.csv", var.str());

    std::vector<std::string> header{"date"};
    header.insert(header.end(), data.assets.begin(), data.assets.end());
    CsvTable vol(header);
    for (Eigen::Index t = 0; t < T; ++t) {
        std::vector<std::string> row{data.dates[static_cast<std::size_t>(t)]};
        for (const auto& f : res.fits)
            row.push_back(format_double(f.margin.log_volatility(t)));
        vol.add(row);
    }
    ctx.out.save("log_volatility.csv", vol.str());

    CsvTable u(header);
    std::vector<Eigen::VectorXd> transformed;
    for (const auto& f : res.fits)
        transformed.push_back(probability_transform(f.margin.residuals));
    for (std::size_t t = 0; t < cfg.copula.estimation_points; ++t) {
        std::vector<std::string> row{data.dates[t]};
        for (const auto& col : transformed)
            row.push_back(format_double(col(static_cast<Eigen::Index>(t))));
        u.add(row);
    }
    ctx.out.save("transformed_residuals.csv", u.str());

    ctx.out.save_json("backtest.json",
        {{"alpha_bar", cfg.copula.alpha_bar}, {"validation_start_date", data.dates[res.validation_start]},
            {"periods", res.validation.periods}, {"violations", res.validation.violations},
            {"expected_violations", res.validation.expected}});
}

inline void cmd_backtest(CommandContext& ctx)
{
    const RunConfig& cfg = ctx.config;
    require(cfg.backtest.has_value(), ErrorCode::configuration, "backtest needs a 'backtest' section with var_path");
    const BacktestSection& b = *cfg.backtest;
    const CsvDocument doc = read_csv(b.var_path);
    const std::size_t date_col = doc.column("date");
    const std::size_t var_col = doc.column("var");
    const std::size_t real_col = doc.column("realised");
    std::vector<std::string> dates;
    std::vector<double> var;
    std::vector<double> realised;
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
        const auto& row = doc.rows[r];
        const std::string where = "row " + std::to_string(doc.line_numbers[r]);
        require(is_iso_date(row[date_col]), ErrorCode::io, where + ": unparseable date '" + row[date_col] + "'");
        require(dates.empty() || row[date_col] > dates.back(), ErrorCode::io, where + ": dates must be strictly increasing");
        if (!b.from_date.empty() && row[date_col] < b.from_date)
            continue;
        dates.push_back(row[date_col]);
        var.push_back(parse_double(row[var_col], where));
        realised.push_back(parse_double(row[real_col], where));
    }
    require(!dates.empty(), ErrorCode::io, "no VaR periods to back-test");
    const Eigen::Map<const Eigen::VectorXd> v(var.data(), static_cast<Eigen::Index>(var.size()));
    const Eigen::Map<const Eigen::VectorXd> r(realised.data(), static_cast<Eigen::Index>(realised.size()));
    const BacktestResult res = backtest(v, r, b.alpha_bar);

    CsvTable table({"date", "var", "realised", "violation"});
    for (std::size_t t = 0; t < dates.size(); ++t)
        table.row(dates[t], var[t], realised[t], static_cast<bool>(res.flags[t]));
    ctx.out.save("backtest.csv", table.str());
    ctx.out.save_json("backtest.json",
        {{"alpha_bar", b.alpha_bar}, {"first_date", dates.front()}, {"last_date", dates.back()},
            {"periods", res.periods}, {"violations", res.violations}, {"expected_violations", res.expected}});
}

namespace detail {

    inline Json read_json(const std::filesystem::path& p)
    {
        try {
            return Json::parse(read_text(p));
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::io, "'" + p.string() + "' is not valid JSON: " + e.what());
        }
    }

    inline double json_number(const Json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

    /// Gaussian marginal curves on mean +- 4 sd.
    inline void append_posterior_curves(CsvTable& table, const Json& posterior, const std::string& tag)
    {
        constexpr int points = 201;
        for (const auto& m : posterior.at("marginals")) {
            const double mean = json_number(m.at("mean"));
            const double sd = json_number(m.at("sd"));
            if (!std::isfinite(mean) || !(sd > 0.0))
                continue;
            for (int k = 0; k < points; ++k) {
                const double x = mean + sd * (-4.0 + 8.0 * k / (points - 1));
                table.add({tag, m.at("parameter").get<std::string>(), format_double(x),
                    format_double(std::exp(normal_log_pdf(x, mean, sd)))});
            }
        }
    }

} // namespace detail

inline void cmd_export_plot_data(CommandContext& ctx)
{
    const RunConfig& cfg = ctx.config;
    require(!cfg.export_run_dir.empty(), ErrorCode::configuration, "export-plot-data needs export.run_dir");
    const std::filesystem::path dir = cfg.export_run_dir;
    require(std::filesystem::is_directory(dir), ErrorCode::io, "run directory '" + dir.string() + "' does not exist");
    std::size_t produced = 0;

    CsvTable curves({"source", "parameter", "theta", "density"});
    bool have_curves = false;
    if (std::filesystem::exists(dir / "posterior.json")) {
        detail::append_posterior_curves(curves, detail::read_json(dir / "posterior.json").at("posterior"), "gpo");
        have_curves = true;
    }
    if (std::filesystem::exists(dir / "sweep.json")) {
        for (const auto& rec : detail::read_json(dir / "sweep.json").at("records"))
            detail::append_posterior_curves(curves, rec.at("posterior"),
                "epsilon=" + format_double(rec.at("epsilon").get<double>()));
        have_curves = true;
    }
    if (have_curves) {
        ctx.out.save("plot_posterior.csv", curves.str());
        ++produced;
    }

    // PMH: histogram density of the post-burn-in chain.
    if (std::filesystem::exists(dir / "chain.csv") && std::filesystem::exists(dir / "pmh.json")) {
        const Json meta = detail::read_json(dir / "pmh.json");
        const auto burnin = meta.at("burnin").get<std::size_t>();
        const auto names = meta.at("parameters").get<std::vector<std::string>>();
        const CsvDocument chain = read_csv(dir / "chain.csv");
        CsvTable hist({"parameter", "bin_center", "density"});
        constexpr int bins = 50;
        for (const auto& name : names) {
            const std::size_t col = chain.column(name);
            std::vector<double> v;
            for (std::size_t r = burnin; r < chain.rows.size(); ++r)
                v.push_back(parse_double(chain.rows[r][col], "chain.csv"));
            if (v.empty())
                continue;
            const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
            const double lo = *lo_it;
            const double width = std::max((*hi_it - lo) / bins, 1e-12);
            std::vector<double> counts(bins, 0.0);
            for (double x : v)
                counts[std::min(bins - 1, static_cast<int>((x - lo) / width))] += 1.0;
            for (int b = 0; b < bins; ++b)
                hist.row(name, lo + (b + 0.5) * width, counts[static_cast<std::size_t>(b)] / (double(v.size()) * width));
        }
        ctx.out.save("plot_pmh_density.csv", hist.str());
        ++produced;
    }

    // GPO traces, tidy: one row per evaluation.
    std::vector<std::filesystem::path> traces;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.path().extension() == ".ndjson" && name.rfind("trace", 0) == 0)
            traces.push_back(entry.path());
    }
    std::sort(traces.begin(), traces.end());
    if (!traces.empty()) {
        CsvTable table({"source", "phase", "k", "component", "theta", "xi", "ei", "mu_max"});
        for (const auto& path : traces) {
            std::istringstream in(read_text(path));
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty())
                    continue;
                const Json rec = Json::parse(line);
                const auto& theta = rec.at("theta");
                for (std::size_t i = 0; i < theta.size(); ++i)
                    table.add({path.stem().string(), rec.at("phase").get<std::string>(),
                        std::to_string(rec.at("k").get<std::size_t>()), std::to_string(i),
                        format_double(detail::json_number(theta[i])), format_double(detail::json_number(rec.at("xi"))),
                        format_double(detail::json_number(rec.at("ei"))),
                        format_double(detail::json_number(rec.at("mu_max")))});
            }
        }
        ctx.out.save("plot_trace.csv", table.str());
        ++produced;
    }

    if (std::filesystem::exists(dir / "spsa.csv")) {
        const CsvDocument spsa = read_csv(dir / "spsa.csv");
        CsvTable table({"iteration", "parameter", "value"});
        for (const auto& row : spsa.rows)
            for (std::size_t c = 1; c + 3 < spsa.header.size(); ++c)
                table.add({row[0], spsa.header[c], row[c]});
        ctx.out.save("plot_spsa.csv", table.str());
        ++produced;
    }

    if (std::filesystem::exists(dir / "var.csv")) {
        std::string split;
        if (std::filesystem::exists(dir / "backtest.json")) {
            const Json bt = detail::read_json(dir / "backtest.json");
            if (bt.contains("validation_start_date"))
                split = bt.at("validation_start_date").get<std::string>();
        }
        const CsvDocument var = read_csv(dir / "var.csv");
        CsvTable table({"date", "phase", "var", "realised", "violation"});
        const std::size_t dc = var.column("date");
        for (const auto& row : var.rows)
            table.add({row[dc], (!split.empty() && row[dc] >= split) ? "validation" : "estimation",
                row[var.column("var")], row[var.column("realised")], row[var.column("violation")]});
        ctx.out.save("plot_var.csv", table.str());
        ++produced;
    }

    if (std::filesystem::exists(dir / "log_volatility.csv")) {
        const CsvDocument vol = read_csv(dir / "log_volatility.csv");
        CsvTable table({"date", "asset", "log_volatility"});
        for (const auto& row : vol.rows)
            for (std::size_t c = 1; c < vol.header.size(); ++c)
                table.add({row[0], vol.header[c], row[c]});
        ctx.out.save("plot_log_volatility.csv", table.str());
        ++produced;
    }

    require(produced > 0, ErrorCode::io, "no recognised artifacts in '" + dir.string() + "'");
}

inline void dispatch(const std::string& command, CommandContext& ctx)
{
    static const std::map<std::string, std::function<void(CommandContext&)>> table{{"simulate", cmd_simulate},
        {"infer-gpo", cmd_infer_gpo}, {"infer-pmh", cmd_infer_pmh}, {"infer-spsa", cmd_infer_spsa},
        {"epsilon-sweep", cmd_epsilon_sweep}, {"var-pipeline", cmd_var_pipeline}, {"backtest", cmd_backtest},
        {"export-plot-data", cmd_export_plot_data}};
    const auto it = table.find(command);
    require(it != table.end(), ErrorCode::configuration, "unknown command '" + command + "'");
    it->second(ctx);
}

struct CommandOptions {
    std::string command;
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out = "run";
    std::size_t threads = 1;
};

/**
 * Runs one command into `out`. The run directory always receives
 * run_config.json (resolved, with the seed) and status.json; error.json
 * appears exactly when the return value is nonzero.
 */
inline int run_command(const CommandOptions& opts, std::ostream& log)
{
    std::filesystem::create_directories(opts.out);
    std::filesystem::remove(opts.out / "error.json");
    RunDirectory dir(opts.out);
    auto finish = [&](bool ok, const std::string& code, const std::string& message, int status) {
        Json s = {{"command", opts.command}, {"status", ok ? "complete" : "incomplete"}, {"artifacts", dir.artifacts()}};
        if (!ok) {
            write_text(opts.out / "error.json", Json({{"code", code}, {"message", message}}).dump(2) + "\n");
            log << "error [" << code << "]: " << message << "\n";
        }
        write_text(opts.out / "status.json", s.dump(2) + "\n");
        return status;
    };
    try {
        require(opts.threads >= 1, ErrorCode::configuration, "--threads must be >= 1");
        RunConfig cfg = load_config(opts.config);
        if (opts.seed)
            cfg.seed = *opts.seed;
        dir.save_json("run_config.json", to_json(cfg));
        CommandContext ctx{std::move(cfg), dir, opts.threads};
        dispatch(opts.command, ctx);
        return finish(true, "", "", 0);
    } catch (const Error& e) {
        return finish(false, std::string(to_string(e.code())), e.what(), exit_code(e.code()));
    } catch (const std::exception& e) {
        return finish(false, "internal", e.what(), 1);
    }
}

} // namespace gpoabc

#endif
