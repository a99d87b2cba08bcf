#include <iostream>
#include <map>

#include <CLI11.hpp>

#include <gpoabc/app.hpp>

int main(int argc, char** argv)
{
    CLI::App app{"GPO-SMC-ABC: Laplace approximations for state-space models, with PMH/SPSA baselines and copula VaR"};
    app.require_subcommand(1);

    const std::map<std::string, std::string> help{
        {"simulate", "Simulate returns and log-volatility from a model"},
        {"infer-gpo", "GPO-SMC(-ABC) inference with a Laplace posterior"},
        {"infer-pmh", "Particle Metropolis-Hastings"},
        {"infer-spsa", "SPSA search for the posterior mode"},
        {"epsilon-sweep", "Repeat infer-gpo over a grid of ABC tolerances"},
        {"var-pipeline", "Margins, t-copula and portfolio VaR"},
        {"backtest", "Count VaR violations in an existing var.csv"},
        {"export-plot-data", "Write tidy plot tables for a finished run"}};

    gpoabc::CommandOptions opts;
    std::uint64_t seed = 0;
    for (const auto& name : gpoabc::command_names()) {
        auto* sub = app.add_subcommand(name, help.at(name));
        sub->add_option("--config", opts.config, "JSON run configuration")->required();
        sub->add_option("--seed", seed, "64-bit seed (overrides the config)");
        sub->add_option("--out", opts.out, "Output directory")->capture_default_str();
        sub->add_option("--threads", opts.threads, "Worker threads (results do not depend on it)")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        sub->final_callback([&opts, &seed, sub, name]() {
            opts.command = name;
            if (sub->count("--seed") > 0)
                opts.seed = seed;
        });
    }
    CLI11_PARSE(app, argc, argv);
    return gpoabc::run_command(opts, std::cerr);
}
