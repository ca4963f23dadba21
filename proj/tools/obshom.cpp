#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "obshom/obshom.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace obshom;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_invariant = 1;
constexpr int exit_usage = 2;

struct CliConfig {
    std::string subcommand;
    std::string config_path;
    std::string out_dir = "out";
    std::size_t threads = 1;
    int verbosity = 0;
    std::string manifest;
    double max_ratio = 0.0;
    bool write_fields = false;
};

fs::path resolve_out(const CliConfig& cli) {
    if (const char* env = std::getenv("OBSHOM_OUT"); env && *env) return env;
    return cli.out_dir;
}

std::string load_config(const CliConfig& cli) {
    if (cli.config_path.empty()) throw Error(ErrorKind::config, "--config is required");
    if (!fs::is_regular_file(cli.config_path)) throw Error(ErrorKind::config, "config file not found: " + cli.config_path);
    return io::read_file(cli.config_path);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string row_tag(std::size_t k) { return "eps" + std::to_string(k); }

int cmd_solve(const CliConfig& cli) {
    ScenarioConfig cfg = parse_scenario(load_config(cli));
    const fs::path out = resolve_out(cli);
    bool ok = true;
    json rows = json::array();
    std::map<double, LimitSolution> limits;
    for (std::size_t k = 0; k < cfg.eps.size(); ++k) {
        const double eps = cfg.eps[k];
        const double h = row_spacing(cfg, eps);
        if (!limits.count(h)) {
            LimitSolution L = solve_limit_problem(cfg, h);
            const std::string tag = "u0_h" + std::to_string(limits.size());
            io::write_field(out / (tag + ".json"), L.u0.u);
            io::write_mask(out / (tag + "_contact.json"), L.u0.contact);
            if (cfg.solver.record_log) io::write_atomic(out / (tag + "_log.json"), dump(convergence_log_json(L.u0)));
            ok = ok && L.diagnostics.within(L.u0.tolerance);
            limits.emplace(h, std::move(L));
        }
        const LimitSolution& L = limits.at(h);
        ScalarField cell = make_psi_cell(cfg.psi, cfg.dim, cell_nodes(eps, h));
        ComplementaritySolution sol = solve_ueps(L.phi0, cell, eps, cfg.p, L.boundary, cfg.solver, cfg.lambda);
        ObstacleProblemSpec spec{L.grid, oscillatory_obstacle(L.phi0, cell, eps, cfg.p), ScalarField(L.grid, 0.0),
                                 L.boundary, cfg.solver};
        ComplementarityDiagnostics d = verify_complementarity(sol, spec);
        ok = ok && d.within(sol.tolerance);
        io::write_field(out / ("ueps_" + row_tag(k) + ".json"), sol.u);
        io::write_mask(out / ("ueps_" + row_tag(k) + "_contact.json"), sol.contact);
        if (cfg.solver.record_log)
            io::write_atomic(out / ("ueps_" + row_tag(k) + "_log.json"), dump(convergence_log_json(sol)));
        rows.push_back({{"eps", eps},
                        {"h", h},
                        {"sweeps", sol.sweeps_used},
                        {"contact_nodes", sol.contact.count()},
                        {"u0", detail::diagnostics_json(L.diagnostics, L.u0.tolerance)},
                        {"ueps", detail::diagnostics_json(d, sol.tolerance)}});
    }
    io::write_atomic(out / "solve.json", dump({{"rows", rows}, {"ok", ok}, {"config_echo", cfg.raw}}));
    return ok ? exit_ok : exit_invariant;
}

json corrector_json(const CorrectorRecord& rec, const ScalarField& psi, bool& ok) {
    EnergyReport en = energy_check(rec, rec.mu);
    bool bracket = true;
    for (std::size_t i = 0; i < psi.size(); ++i)
        if (rec.chi[i] < psi[i] || rec.chi[i] > 0.0) bracket = false;
    const bool solved = rec.diagnostics.within(rec.tolerance);
    ok = ok && en.holds && bracket && solved;
    return {{"mu", rec.mu},
            {"E", rec.height},
            {"energy", rec.energy},
            {"energy_bound", en.bound},
            {"energy_ratio", en.ratio},
            {"energy_ok", en.holds},
            {"psi_le_chi_le_0", bracket},
            {"active_fraction", rec.active_fraction},
            {"sweeps", rec.sweeps},
            {"diagnostics", detail::diagnostics_json(rec.diagnostics, rec.tolerance)}};
}

int cmd_corrector(const CliConfig& cli) {
    ScenarioConfig cfg = parse_corrector_config(load_config(cli));
    if (cfg.mu.empty()) throw Error(ErrorKind::config, "corrector.mu must list at least one value");
    const fs::path out = resolve_out(cli);
    ScalarField psi = make_psi_cell(cfg.psi, cfg.dim, cfg.cell_resolution);
    bool ok = true;
    json recs = json::array();
    for (std::size_t k = 0; k < cfg.mu.size(); ++k) {
        CorrectorRecord rec = solve_corrector(psi, cfg.mu[k], cfg.solver);
        io::write_field(out / ("chi_mu" + std::to_string(k) + ".json"), rec.chi);
        recs.push_back(corrector_json(rec, psi, ok));
    }
    io::write_atomic(out / "corrector.json", dump({{"records", recs}, {"ok", ok}, {"config_echo", cfg.raw}}));
    return ok ? exit_ok : exit_invariant;
}

int cmd_sweep_emu(const CliConfig& cli) {
    ScenarioConfig cfg = parse_corrector_config(load_config(cli));
    const fs::path out = resolve_out(cli);
    ScalarField psi = make_psi_cell(cfg.psi, cfg.dim, cfg.cell_resolution);
    RateFit fit = emu_sweep(psi, cfg.mu, cfg.solver, cli.threads);
    bool ok = fit.monotone;
    std::ostringstream csv;
    csv << "mu,E,energy,active_fraction,sweeps\n";
    json recs = json::array();
    for (const auto& r : fit.records) {
        csv << format_number(r.mu) << ',' << format_number(r.height) << ',' << format_number(r.energy) << ','
            << format_number(r.active_fraction) << ',' << r.sweeps << '\n';
        recs.push_back(corrector_json(r, psi, ok));
    }
    io::write_atomic(out / "emu.csv", csv.str());
    json summary = {{"slope", fit.slope},
                    {"log_corrected_slope", fit.log_corrected_slope},
                    {"residual", fit.fit_residual},
                    {"window", {fit.window.first, fit.window.second}},
                    {"discarded", fit.discarded},
                    {"excluded", fit.excluded},
                    {"monotone", fit.monotone},
                    {"cell_resolution", cfg.cell_resolution},
                    {"threads", resolve_threads(cli.threads)},
                    {"records", recs},
                    {"ok", ok},
                    {"config_echo", cfg.raw}};
    io::write_atomic(out / "fit.json", dump(summary));
    return ok ? exit_ok : exit_invariant;
}

int cmd_converge(const CliConfig& cli) {
    ScenarioConfig cfg = parse_scenario(load_config(cli));
    if (cli.write_fields) cfg.write_fields = true;
    const fs::path out = resolve_out(cli);
    ConvergenceReport rep = run_convergence(cfg, cli.threads);
    if (cfg.write_fields) {
        json manifest = json::array();
        for (std::size_t k = 0; k < rep.rows.size(); ++k) {
            const auto& row = rep.rows[k];
            if (!row.fields) continue;
            const std::string w0 = "w0_" + row_tag(k) + ".json", weps = "weps_" + row_tag(k) + ".json";
            io::write_field(out / "fields" / w0, row.fields->w0);
            io::write_field(out / "fields" / weps, row.fields->weps);
            manifest.push_back({{"eps", row.eps}, {"r_eps", row.r_eps}, {"slack", row.slack},
                                {"grad_rms_ratio", row.grad_rms_ratio}, {"w0", w0}, {"weps", weps}});
        }
        io::write_atomic(out / "fields" / "manifest.json", dump({{"rows", manifest}}));
    }
    io::write_atomic(out / "report.csv", convergence_csv(rep));
    io::write_atomic(out / "summary.json", dump(convergence_summary(rep, cfg)));
    return rep.all_ok() ? exit_ok : exit_invariant;
}

int cmd_gradcheck(const CliConfig& cli) {
    if (cli.manifest.empty()) throw Error(ErrorKind::config, "--manifest is required");
    if (!fs::is_regular_file(cli.manifest)) throw Error(ErrorKind::config, "manifest not found: " + cli.manifest);
    json manifest;
    try {
        manifest = json::parse(io::read_file(cli.manifest));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, std::string("manifest is not valid JSON: ") + e.what());
    }
    const fs::path base = fs::path(cli.manifest).parent_path();
    const fs::path out = resolve_out(cli);
    bool ok = true;
    json rows = json::array();
    try {
        for (const auto& m : manifest.at("rows")) {
            ScalarField w0 = io::read_field(base / m.at("w0").get<std::string>());
            ScalarField weps = io::read_field(base / m.at("weps").get<std::string>());
            const double r = m.at("r_eps").get<double>();
            SandwichReport sw = sandwich_check(w0, weps, r, m.at("slack").get<double>());
            GradientReport gr = gradient_check(w0, weps, r);
            const bool ratio_ok = cli.max_ratio <= 0.0 || gr.ratio <= cli.max_ratio;
            ok = ok && sw.ok() && ratio_ok;
            rows.push_back({{"eps", m.at("eps")},
                            {"sandwich_lo", sw.lo_margin},
                            {"sandwich_hi", sw.hi_margin},
                            {"sandwich_violations", sw.violations},
                            {"grad_rms_ratio", gr.ratio},
                            {"ok", sw.ok() && ratio_ok}});
            if (!sw.ok()) log::warn("eps = " + m.at("eps").dump() + ": " + std::to_string(sw.violations) + " sandwich violations");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, std::string("manifest schema: ") + e.what());
    }
    io::write_atomic(out / "gradcheck.json", dump({{"rows", rows}, {"ok", ok}}));
    return ok ? exit_ok : exit_invariant;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"obshom: obstacle problems with oscillatory obstacles"};
    app.require_subcommand(1);
    CliConfig cli;
    auto common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", cli.config_path, "scenario JSON file");
        if (needs_config) opt->required();
        sub->add_option("--out", cli.out_dir, "output directory (OBSHOM_OUT overrides)");
        sub->add_option("--threads", cli.threads, "worker threads, 0 = auto");
        sub->add_flag("-v,--verbose", cli.verbosity, "more diagnostics, repeatable");
    };
    common(app.add_subcommand("solve", "solve u0 and u_eps for every eps of a scenario"), true);
    common(app.add_subcommand("corrector", "solve the cell problem for each listed mu"), true);
    common(app.add_subcommand("sweep-emu", "sweep mu and fit the decay of E(mu)"), true);
    auto* conv = app.add_subcommand("converge", "run the epsilon convergence experiment");
    common(conv, true);
    conv->add_flag("--write-fields", cli.write_fields, "also write w0/w_eps fields and a manifest");
    auto* grad = app.add_subcommand("gradcheck", "re-verify sandwich and gradient bounds from field files");
    common(grad, false);
    grad->add_option("--manifest", cli.manifest, "fields/manifest.json written by converge")->required();
    grad->add_option("--max-ratio", cli.max_ratio, "fail if the gradient RMS ratio exceeds this");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }
    cli.subcommand = app.get_subcommands().front()->get_name();
    log::verbosity = 1 + cli.verbosity;

    try {
        if (cli.subcommand == "solve") return cmd_solve(cli);
        if (cli.subcommand == "corrector") return cmd_corrector(cli);
        if (cli.subcommand == "sweep-emu") return cmd_sweep_emu(cli);
        if (cli.subcommand == "converge") return cmd_converge(cli);
        if (cli.subcommand == "gradcheck") return cmd_gradcheck(cli);
    } catch (const Error& e) {
        std::cerr << "obshom " << cli.subcommand << ": " << to_string(e.kind()) << ": " << e.what() << '\n';
        return (e.kind() == ErrorKind::config || e.kind() == ErrorKind::io) ? exit_usage : exit_invariant;
    } catch (const std::exception& e) {
        std::cerr << "obshom " << cli.subcommand << ": " << e.what() << '\n';
        return exit_invariant;
    }
    return exit_usage;
}
