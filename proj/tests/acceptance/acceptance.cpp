// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../geometry_oracles.hpp"
#include "obshom/obshom.hpp"

using namespace obshom;

namespace {

// Pinned tolerances.
constexpr double kSolverConstant = 5.0;        // max node error ≤ C h², C < 5
constexpr double kSolverSeconds = 10.0;
constexpr double kEnergyRel = 1e-8;
constexpr double kLaminarLo = 0.90, kLaminarHi = 1.05;
constexpr double kPeakLo = 0.90, kPeakHi = 1.10;
constexpr double k3dLo = 0.60, k3dHi = 0.80;
constexpr double kSweepSeconds = 300.0;
constexpr double kRatioSpread = 2.0;           // max ≤ 2 × median
constexpr double kAnchorChange = 2.0;          // shifted / unshifted within (1/2, 2)
constexpr double k2dSeconds = 1800.0;
constexpr std::size_t kProbePoints = 1000;
constexpr std::size_t kRandomMasks = 200;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_scenario(const std::string& name) {
    std::ifstream in(std::string(OBSHOM_SOURCE_DIR) + "/scenarios/" + name + ".json");
    if (!in) throw Error(ErrorKind::io, "missing scenario " + name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

struct Line {
    int id;
    std::string name;
    bool pass;
    std::string detail;
};

std::vector<Line> lines;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    lines.push_back({id, name, pass, detail});
    std::printf("%s %d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
}

// Criterion helpers -------------------------------------------------------

struct SolverOracle {
    double C = 0.0, endpoint_error = 0.0, seconds = 0.0, h = 0.0;
    bool residual_ok = false;
};

SolverOracle solver_oracle() {
    SolverOracle o;
    o.h = 1.0 / 1024;
    auto t0 = Clock::now();
    Grid g = Grid::box(1, 2049, o.h, Coord{-1.0});
    ScalarField phi = sample([](const Coord& x) { return 0.25 - 0.5 * x[0] * x[0]; }, g);
    ComplementaritySolution sol = solve_u0(phi, ScalarField(g, 0.0), {}, 1.0);
    o.seconds = seconds_since(t0);
    ObstacleProblemSpec spec{g, phi, ScalarField(g, 0.0), ScalarField(g, 0.0), {}};
    o.residual_ok = sol.residual <= sol.tolerance && verify_complementarity(sol, spec).within(sol.tolerance);
    const double a = 1.0 - 1.0 / std::sqrt(2.0);
    double err = 0.0, lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double x = g.coordinate(g.unflatten(i))[0], r = std::abs(x);
        double exact = r <= a ? 0.25 - 0.5 * r * r : (0.25 - 0.5 * a * a) - a * (r - a);
        err = std::max(err, std::abs(sol.u[i] - exact));
        if (sol.contact[i]) { lo = std::min(lo, x); hi = std::max(hi, x); }
    }
    o.C = err / (o.h * o.h);
    o.endpoint_error = std::max(std::abs(lo + a), std::abs(hi - a));
    return o;
}

struct Sweep {
    std::string label;
    RateFit fit;
    double seconds = 0.0;
    std::size_t requested = 0;
    std::size_t bracket_violations = 0;
    std::size_t energy_failures = 0;
    std::size_t residual_failures = 0;
    double worst_energy_ratio = 0.0;
};

Sweep run_sweep(const std::string& label, const PsiSpec& psi, int dim, std::size_t cells, const std::vector<double>& mu,
                const SolverParams& solver) {
    Sweep s;
    s.label = label;
    s.requested = mu.size();
    auto t0 = Clock::now();
    ScalarField cell = make_psi_cell(psi, dim, cells);
    s.fit = emu_sweep(cell, mu, solver, 1);
    s.seconds = seconds_since(t0);
    for (const auto& rec : s.fit.records) {
        for (std::size_t i = 0; i < cell.size(); ++i)
            if (rec.chi[i] < cell[i] || rec.chi[i] > 0.0) ++s.bracket_violations;
        EnergyReport en = energy_check(rec, rec.mu);
        if (!en.holds) ++s.energy_failures;
        s.worst_energy_ratio = std::max(s.worst_energy_ratio, en.ratio);
        if (!(rec.residual <= rec.tolerance && rec.diagnostics.within(rec.tolerance))) ++s.residual_failures;
    }
    std::printf("  sweep %s: slope %.4f, log-corrected %.4f, window [%g, %g], discarded %zu, excluded %zu, %.1f s\n",
                label.c_str(), s.fit.slope, s.fit.log_corrected_slope, s.fit.window.first, s.fit.window.second,
                s.fit.discarded.size(), s.fit.excluded.size(), s.seconds);
    std::fflush(stdout);
    return s;
}

struct Converge {
    std::string name;
    int dim = 1;
    ConvergenceReport rep;
    double seconds = 0.0;
    double worst_anchor_change = 0.0;  // scenario constants C and medians, shifted vs unshifted
    double worst_row_change = 0.0;     // per row, reported only
};

double change_factor(double a, double b) {
    return (a > 0 && b > 0) ? std::max(a / b, b / a) : (a == b ? 1.0 : INFINITY);
}

Converge run_scenario(const std::string& name) {
    Converge c;
    c.name = name;
    ScenarioConfig cfg = parse_scenario(read_scenario(name));
    c.dim = cfg.dim;
    auto t0 = Clock::now();
    c.rep = run_convergence(cfg, 1);
    c.seconds = seconds_since(t0);
    std::vector<double> sl, sg;
    for (const auto& r : c.rep.rows) {
        if (!r.succeeded()) continue;
        sl.push_back(r.dH_contact_shift / r.r_eps);
        sg.push_back(r.dH_fb_shift / r.r_eps);
        c.worst_row_change = std::max({c.worst_row_change, change_factor(r.dH_contact, r.dH_contact_shift),
                                       change_factor(r.dH_fb, r.dH_fb_shift)});
    }
    c.worst_anchor_change = std::max({change_factor(c.rep.C_Lambda, c.rep.C_Lambda_shift),
                                      change_factor(c.rep.C_Gamma, c.rep.C_Gamma_shift),
                                      change_factor(c.rep.median_Lambda, median(sl)),
                                      change_factor(c.rep.median_Gamma, median(sg))});
    std::printf("  converge %s: C_Lambda %.3f (median %.3f), C_Gamma %.3f (median %.3f), C_grad %.3f (median %.3f), "
                "anchor change %.3f (worst row %.3f), %.1f s\n",
                name.c_str(), c.rep.C_Lambda, c.rep.median_Lambda, c.rep.C_Gamma, c.rep.median_Gamma, c.rep.C_grad,
                c.rep.median_grad, c.worst_anchor_change, c.worst_row_change, c.seconds);
    for (const auto& r : c.rep.rows)
        std::printf("    eps %-10g r %.5g dH_L/r %.3f dH_G/r %.3f grad/r %.3f probes %zu %s\n", r.eps, r.r_eps,
                    r.dH_contact / r.r_eps, r.dH_fb / r.r_eps, r.grad_rms_ratio, r.probe_points, r.status.c_str());
    std::fflush(stdout);
    return c;
}

bool has_violation(const ConvergenceRow& r, const std::string& tag) {
    for (const auto& v : r.violations)
        if (v == tag) return true;
    return false;
}

} // namespace

int main() {
    log::verbosity = 0;
    try {
        // 1. solver oracle
        SolverOracle so = solver_oracle();
        report(1, "solver-oracle",
               so.C < kSolverConstant && so.endpoint_error <= 2 * so.h && so.seconds < kSolverSeconds,
               "C=" + fmt("%.3f", so.C) + " endpoint_error/h=" + fmt("%.3f", so.endpoint_error / so.h) +
                   " time=" + fmt("%.2f", so.seconds) + "s");

        // corrector sweeps of the canonical scenarios (criteria 2-4)
        const std::vector<std::string> names = {"1d_sine", "2d_laminar", "2d_peak", "2d_cusp"};
        std::vector<Sweep> sweeps;
        for (const auto& n : names) {
            ScenarioConfig cfg = parse_scenario(read_scenario(n));
            sweeps.push_back(run_sweep(n, cfg.psi, cfg.dim, cfg.cell_resolution, cfg.mu, cfg.solver));
        }
        bool want_3d = true;
        std::optional<Sweep> sweep3d;
        if (want_3d)
            sweep3d = run_sweep("3d_peak", PsiSpec{PsiFamily::isolated_peak}, 3, 64, {1e-1, 3e-2, 1e-2, 3e-3, 1e-3},
                                SolverParams{});

        // canonical convergence runs (criteria 2, 5-9)
        std::vector<Converge> runs;
        for (const auto& n : names) runs.push_back(run_scenario(n));

        // 2. residuals
        {
            std::size_t solves = 1, bad = so.residual_ok ? 0 : 1;
            for (const auto& s : sweeps) {
                solves += s.fit.records.size();
                bad += s.residual_failures + (s.requested - s.fit.records.size());
            }
            for (const auto& c : runs)
                for (const auto& r : c.rep.rows) {
                    solves += 3;
                    if (!r.succeeded()) { bad += 1; continue; }
                    if (!r.ueps_diagnostics.within(r.ueps_tolerance)) ++bad;
                    if (!r.u0_diagnostics.within(r.u0_tolerance)) ++bad;
                    if (!r.corrector_diagnostics.within(r.corrector_tolerance)) ++bad;
                }
            report(2, "complementarity-residual", bad == 0,
                   std::to_string(solves) + " solves, " + std::to_string(bad) + " above tolerance");
        }

        // 3. corrector sandwich, energy, monotonicity
        {
            std::size_t bracket = 0, energy = 0, nonmono = 0, records = 0;
            double worst = 0.0;
            for (const auto& s : sweeps) {
                bracket += s.bracket_violations;
                energy += s.energy_failures;
                nonmono += s.fit.monotone ? 0 : 1;
                records += s.fit.records.size();
                worst = std::max(worst, s.worst_energy_ratio);
            }
            report(3, "corrector-sandwich-energy", bracket == 0 && energy == 0 && nonmono == 0,
                   std::to_string(records) + " records, bracket violations " + std::to_string(bracket) +
                       ", energy failures " + std::to_string(energy) + " (max energy/(mu E) " + fmt("%.6f", worst) +
                       ", tol 1+" + fmt("%g", kEnergyRel) + "), non-monotone sweeps " + std::to_string(nonmono));
        }

        // 4. corrector rates
        {
            const Sweep& lam = sweeps[1];
            const Sweep& peak = sweeps[2];
            bool a = lam.fit.slope >= kLaminarLo && lam.fit.slope <= kLaminarHi && lam.seconds < kSweepSeconds;
            bool b = peak.fit.log_corrected_slope >= kPeakLo && peak.fit.log_corrected_slope <= kPeakHi &&
                     peak.fit.slope < lam.fit.slope && peak.seconds < kSweepSeconds;
            bool c = !sweep3d || (sweep3d->fit.slope >= k3dLo && sweep3d->fit.slope <= k3dHi && sweep3d->seconds < kSweepSeconds);
            std::string d = "laminar slope " + fmt("%.4f", lam.fit.slope) + " (" + fmt("%.0f", lam.seconds) +
                            "s); peak log-corrected " + fmt("%.4f", peak.fit.log_corrected_slope) + ", raw " +
                            fmt("%.4f", peak.fit.slope) + " (" + fmt("%.0f", peak.seconds) + "s)";
            if (sweep3d) d += "; 3d peak slope " + fmt("%.4f", sweep3d->fit.slope) + " (" + fmt("%.0f", sweep3d->seconds) + "s)";
            report(4, "corrector-rates", a && b && c, d);
        }

        // 5-6. sandwich and corrected obstacle
        {
            std::size_t rows = 0, sw = 0, co = 0, failed = 0;
            double sw_margin = INFINITY, co_margin = INFINITY;
            for (const auto& c : runs)
                for (const auto& r : c.rep.rows) {
                    ++rows;
                    if (!r.succeeded()) { ++failed; continue; }
                    sw += has_violation(r, "sandwich");
                    co += has_violation(r, "corrected_obstacle");
                    sw_margin = std::min({sw_margin, (r.sandwich_lo + r.slack), (r.sandwich_hi + r.slack)});
                    co_margin = std::min(co_margin, r.corrector_margin + r.slack);
                }
            report(5, "sandwich", sw == 0 && failed == 0,
                   std::to_string(rows) + " rows, " + std::to_string(sw) + " with violations, min margin beyond slack " +
                       fmt("%.3e", sw_margin));
            report(6, "corrected-obstacle", co == 0 && failed == 0,
                   std::to_string(rows) + " rows, " + std::to_string(co) + " with violations, min margin beyond slack " +
                       fmt("%.3e", co_margin));
        }

        // 7. Hausdorff ratios
        {
            bool ok = true;
            double t2d = 0.0;
            std::string d;
            for (const auto& c : runs) {
                bool spread = c.rep.C_Lambda <= kRatioSpread * c.rep.median_Lambda &&
                              c.rep.C_Gamma <= kRatioSpread * c.rep.median_Gamma;
                bool anchor = c.worst_anchor_change < kAnchorChange;
                ok = ok && spread && anchor && c.rep.all_ok();
                if (c.dim == 2) t2d += c.seconds;
                d += c.name + " max/median " + fmt("%.2f", c.rep.C_Lambda / c.rep.median_Lambda) + "/" +
                     fmt("%.2f", c.rep.C_Gamma / c.rep.median_Gamma) + " anchor " + fmt("%.2f", c.worst_anchor_change) + " (row " + fmt("%.2f", c.worst_row_change) + "); ";
            }
            ok = ok && t2d < k2dSeconds;
            report(7, "hausdorff-rate", ok, d + "2d time " + fmt("%.0f", t2d) + "s");
        }

        // 8. non-degeneracy probes
        {
            std::size_t bad = 0, min_points = SIZE_MAX, rows = 0;
            for (const auto& c : runs)
                for (const auto& r : c.rep.rows) {
                    ++rows;
                    if (!r.succeeded()) { ++bad; continue; }
                    bad += has_violation(r, "nondegeneracy") || has_violation(r, "bulk_nondegeneracy") ||
                           has_violation(r, "growth");
                    min_points = std::min(min_points, r.probe_points);
                }
            report(8, "nondegeneracy", bad == 0 && min_points >= kProbePoints,
                   std::to_string(rows) + " rows, " + std::to_string(bad) + " with violations, min probe points " +
                       std::to_string(min_points));
        }

        // 9. gradient estimate
        {
            bool ok = true;
            std::string d;
            for (const auto& c : runs) {
                ok = ok && c.rep.C_grad <= kRatioSpread * c.rep.median_grad;
                d += c.name + " " + fmt("%.3f", c.rep.C_grad) + "/" + fmt("%.3f", c.rep.median_grad) + "; ";
            }
            report(9, "gradient-estimate", ok, "max/median ratio " + d);
        }

        // 10. geometry oracles
        {
            oracle::Tally t = oracle::run_random_mask_suite(kRandomMasks, 12345u);
            report(10, "geometry-oracles", t.failures() == 0 && t.masks == kRandomMasks && t.max_axis == 48, t.describe());
        }
    } catch (const std::exception& e) {
        std::printf("FAIL acceptance aborted: %s\n", e.what());
        return 1;
    }

    std::size_t failed = 0;
    for (const auto& l : lines) failed += l.pass ? 0 : 1;
    std::printf("%zu/%zu criteria passed\n", lines.size() - failed, lines.size());
    return failed == 0 && lines.size() == 10 ? 0 : 1;
}
