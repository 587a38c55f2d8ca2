// psrrr: command-line front end for the pathway ranking pipeline.
//
//   psrrr <command> [--config file.json] [--out dir] [--seed n] [--workers n] [--<field> value]...
//
// Commands: simulate qc map phenotype tune fit rank snprank enrich, and `run` for
// qc through enrich in order. Every configuration field can be overridden with
// --<field> value; nested simulation fields with --set simulation.<field>=value.
// PSRRR_WORKERS overrides the configured worker count; --workers overrides both.

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <psrrr.hpp>

namespace {

const std::vector<std::string> kRunOrder{"qc", "map", "phenotype", "tune", "fit", "rank", "snprank", "enrich"};

struct Options {
    std::string config;
    std::string out;
    std::string seed;
    unsigned workers = 0;
    bool force = false;
    bool dump_config = false;
    std::vector<std::string> sets;
    std::map<std::string, std::string> fields;
};

void add_common(CLI::App* sub, Options& o) {
    sub->add_option("--config", o.config, "JSON configuration file");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--force", o.force, "rerun even when outputs are up to date");
    sub->add_flag("--dump-config", o.dump_config, "print the resolved configuration and exit");
    sub->add_option("--set", o.sets, "override key=value (dotted keys reach nested objects)");
    const nlohmann::json defaults = psrrr::RunConfig{};
    for (auto it = defaults.begin(); it != defaults.end(); ++it) {
        const auto& key = it.key();
        if (key == "seed" || key == "workers" || key == "out" || key == "simulation") continue;
        sub->add_option("--" + key, o.fields[key], "override '" + key + "'");
    }
}

psrrr::RunConfig resolve(const Options& o) {
    psrrr::RunConfig cfg = o.config.empty() ? psrrr::RunConfig{} : psrrr::load_config(o.config);
    if (const char* env = std::getenv("PSRRR_WORKERS"); env && *env) {
        char* end = nullptr;
        const long w = std::strtol(env, &end, 10);
        if (*end != '\0' || w < 1) throw psrrr::ConfigError("PSRRR_WORKERS must be a positive integer");
        cfg.workers = static_cast<unsigned>(w);
    }
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& [key, value] : o.fields)
        if (!value.empty()) kv.emplace_back(key, value);
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw psrrr::ConfigError("--set expects key=value, got '" + s + "'");
        kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!o.seed.empty()) kv.emplace_back("seed", o.seed);
    if (!o.out.empty()) kv.emplace_back("out", nlohmann::json(o.out).dump());
    if (o.workers) kv.emplace_back("workers", std::to_string(o.workers));
    return psrrr::apply_overrides(cfg, kv);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pathway sparse reduced-rank regression"};
    app.require_subcommand(1);
    app.set_version_flag("--version", psrrr::kVersion);
    Options opts;
    std::vector<std::pair<std::string, CLI::App*>> subs;
    for (const auto& name : psrrr::command_names()) subs.emplace_back(name, app.add_subcommand(name));
    subs.emplace_back("run", app.add_subcommand("run", "qc, map, phenotype, tune, fit, rank, snprank, enrich"));
    for (auto& [name, sub] : subs) add_common(sub, opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    std::string command;
    for (auto& [name, sub] : subs)
        if (sub->parsed()) command = name;

    try {
        const auto cfg = resolve(opts);
        if (opts.dump_config) {
            std::cout << nlohmann::json(cfg).dump(2) << '\n';
            return 0;
        }
        if (command == "run") {
            for (const auto& stage : kRunOrder) {
                if (stage == "enrich" && cfg.targets.empty()) continue;
                if (stage == "tune" && cfg.weights != "tuned") continue;
                psrrr::run_command(stage, cfg, opts.force, std::cerr);
            }
        } else {
            psrrr::run_command(command, cfg, opts.force, std::cerr);
        }
    } catch (const std::exception& e) {
        std::cerr << "psrrr " << command << ": " << e.what() << '\n';
        return psrrr::exit_code_for(e);
    }
    return 0;
}
