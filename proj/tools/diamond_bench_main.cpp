#include <CLI11.hpp>
#include <iostream>

#include "diamond/experiment.hpp"

using diamond::json;

int main(int argc, char** argv) {
    CLI::App app{"diamond-bench: Gaussian-mixture testbed for stochastic flow maps"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string map_spec;
    std::string estimator;
    std::string mode;
    std::uint64_t seed = 0;
    int inner_steps = 0;
    int particles = 0;
    int n_samples = 0;
    int n_steps = 0;
    int n_seeds = 0;
    double lambda = 0.0;
    double t_clamp = 0.0;

    bool seed_set = false, out_set = false;
    const std::vector<std::string> subs = {"oracle", "sample", "posterior", "ddpm-step", "value",
                                           "guide",  "smc",    "search",    "bon",       "distill",
                                           "report"};
    for (const auto& name : subs) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config JSON");
        sub->add_option("--seed", seed, "root RNG seed")->each([&](const std::string&) {
            seed_set = true;
        });
        sub->add_option("--out", out_dir, "output directory")->each([&](const std::string&) {
            out_set = true;
        });
        sub->add_option("--inner-steps", inner_steps, "RK4 steps per map application");
        sub->add_option("--t-clamp", t_clamp, "clamp times to [eps, 1-eps]");
        sub->add_option("--particles", particles, "particle count");
        sub->add_option("--n-samples", n_samples, "number of output samples");
        sub->add_option("--n-steps", n_steps, "outer integration / transition steps");
        sub->add_option("--seeds", n_seeds, "number of independent seeds");
        sub->add_option("--lambda", lambda, "SNR factor for the renoise time");
        sub->add_option("--map", map_spec, "'oracle' or a checkpoint path");
        sub->add_option("--estimator", estimator, "posterior|weighted|denoiser|exact");
        sub->add_option("--mode", mode, "guide mode: posterior|weighted");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string name = app.get_subcommands().front()->get_name();

    try {
        json root;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw diamond::ConfigError("cannot open config file " + config_path);
            try {
                in >> root;
            } catch (const json::exception& e) {
                throw diamond::ConfigError(std::string("config parse: ") + e.what());
            }
        } else {
            root = diamond::default_config_json();
        }
        if (!root.contains("algorithm")) root["algorithm"] = json::object();
        root["algorithm"]["name"] = name;
        if (seed_set) root["seed"] = seed;
        if (out_set) root["out_dir"] = out_dir;
        if (t_clamp > 0.0) {
            root["scheduler"]["t_min"] = t_clamp;
            root["scheduler"]["t_max"] = 1.0 - t_clamp;
        }
        auto& alg = root["algorithm"];
        if (inner_steps > 0) alg["inner_steps"] = inner_steps;
        if (particles > 0) alg["particles"] = particles;
        if (n_samples > 0) alg["n_samples"] = n_samples;
        if (n_steps > 0) alg["n_steps"] = n_steps;
        if (n_seeds > 0) alg["seeds"] = n_seeds;
        if (lambda > 0.0) alg["lambda"] = lambda;
        if (!map_spec.empty()) alg["map"] = map_spec;
        if (!estimator.empty()) alg["estimator"] = estimator;
        if (!mode.empty()) alg["mode"] = mode;

        auto cfg = diamond::parse_experiment_config(root);
        auto dir = diamond::run_experiment(cfg);
        std::cout << "wrote " << dir.string() << "\n";
        return 0;
    } catch (const diamond::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "domain error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
