#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "obshom/detail/lcp_multigrid.hpp"
#include "obshom/families.hpp"
#include "obshom/grid.hpp"
#include "obshom/log.hpp"

namespace obshom {

enum class SolverMethod {
    multigrid,  // monotone multigrid (pre,post) cycles, V or W, with projected red-black Gauss-Seidel
    psor,       // projected SOR, red-black ordering, relaxation `omega`
};

struct SolverParams {
    double omega = 1.7;                  // psor only
    double tol = 1e-10;                  // relative to the field scale, see resolved_tolerance()
    std::size_t max_sweeps = 1'000'000;  // fine-grid relaxation sweeps
    SolverMethod method = SolverMethod::multigrid;
    int pre_smooth = 2;
    int post_smooth = 2;
    int cycle_gamma = 2;  // 1 = V-cycle, 2 = W-cycle below the finest level
    bool record_log = false;
};

/**
 * Discrete complementarity problem min{f - Δ_h u, u - φ} = 0.
 * On a box the face nodes are held at `boundary` and carry no obstacle
 * constraint; on a torus `boundary` is ignored.
 */
struct ObstacleProblemSpec {
    Grid grid;
    ScalarField obstacle;
    ScalarField rhs_bound;
    ScalarField boundary;
    SolverParams params;
};

struct SweepLogEntry {
    std::size_t sweep = 0;
    double residual = 0.0;
    std::size_t active = 0;
};

struct ComplementaritySolution {
    ScalarField u;
    CellMask contact;
    std::size_t sweeps_used = 0;
    double residual = 0.0;   // max_i |min(h^2 (f - Δ_h u)_i, u_i - φ_i)|
    double tolerance = 0.0;  // absolute tolerance the residual was driven below
    std::vector<SweepLogEntry> log;
};

/// Magnitude the relative tolerance is applied to.
inline double field_scale(const ObstacleProblemSpec& spec) {
    const Grid& g = spec.grid;
    const double h2 = g.spacing() * g.spacing();
    double s = 0.0;
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        if (g.on_face(idx)) s = std::max(s, std::abs(spec.boundary[i]));
        else s = std::max({s, std::abs(spec.obstacle[i]), h2 * std::abs(spec.rhs_bound[i])});
    });
    return s > 0.0 ? s : 1.0;
}

inline double resolved_tolerance(const ObstacleProblemSpec& spec) { return spec.params.tol * field_scale(spec); }

inline nlohmann::json convergence_log_json(const ComplementaritySolution& sol) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : sol.log) arr.push_back({{"sweep", e.sweep}, {"residual", e.residual}, {"active", e.active}});
    return {{"sweeps_used", sol.sweeps_used}, {"residual", sol.residual}, {"tolerance", sol.tolerance}, {"log", arr}};
}

namespace detail {

inline LevelShape level_shape(const Grid& g) {
    LevelShape s;
    s.dim = g.dim();
    for (int d = 0; d < g.dim(); ++d) s.n[3 - g.dim() + d] = g.extent(d);
    s.periodic = g.periodic();
    s.h = g.spacing();
    s.finish();
    return s;
}

inline void validate_spec(const ObstacleProblemSpec& spec) {
    require_same_grid(spec.grid, spec.obstacle.grid, "obstacle");
    require_same_grid(spec.grid, spec.rhs_bound.grid, "rhs_bound");
    if (!spec.grid.periodic()) require_same_grid(spec.grid, spec.boundary.grid, "boundary");
    if (!(spec.params.omega > 0.0 && spec.params.omega < 2.0))
        throw Error(ErrorKind::domain, "omega must lie in (0,2)");
    if (!(spec.params.tol > 0.0)) throw Error(ErrorKind::domain, "tolerance must be positive");
    if (!spec.obstacle.finite() || !spec.rhs_bound.finite())
        throw Error(ErrorKind::domain, "obstacle and rhs must be finite");
    if (spec.grid.periodic()) {
        double mean = 0.0;
        for (double v : spec.rhs_bound.values) mean += v;
        mean /= static_cast<double>(spec.rhs_bound.size());
        if (!(mean > 0.0))
            throw Error(ErrorKind::infeasible, "periodic problem needs rhs bound with positive mean");
    }
}

} // namespace detail

inline std::size_t count_active(const detail::Level& L) {
    std::size_t n = 0;
    detail::for_free_nodes(L, L.u, -1, [&](std::size_t f, double) { n += (L.u[f] == L.lo[f]) ? 1 : 0; });
    return n;
}

/// Solves the complementarity system by projected relaxation (multigrid-accelerated by default).
inline ComplementaritySolution solve_complementarity(const ObstacleProblemSpec& spec) {
    detail::validate_spec(spec);
    const Grid& g = spec.grid;
    const double h2 = g.spacing() * g.spacing();
    const double tol = resolved_tolerance(spec);
    const SolverParams& prm = spec.params;

    detail::MultigridLcp mg(detail::level_shape(g), prm.pre_smooth, prm.post_smooth, prm.cycle_gamma);
    detail::Level& L = mg.finest();
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        L.hr[i] = -h2 * spec.rhs_bound[i];
        if (g.on_face(idx)) {
            L.u[i] = spec.boundary[i];
            L.lo[i] = spec.boundary[i];
        } else {
            L.u[i] = spec.obstacle[i];
            L.lo[i] = spec.obstacle[i];
        }
    });

    ComplementaritySolution sol;
    sol.tolerance = tol;
    const bool use_mg = prm.method == SolverMethod::multigrid && mg.depth() > 1;
    const std::size_t per_iter = use_mg ? static_cast<std::size_t>(mg.fine_sweeps_per_cycle()) : 1;

    double residual = detail::complementarity_residual(L);
    double prev_change = std::numeric_limits<double>::infinity();
    double best = residual;
    std::size_t since_best = 0;
    std::size_t sweeps = 0;
    for (;;) {
        if (sweeps >= prm.max_sweeps) {
            std::ostringstream os;
            os << "no convergence after " << sweeps << " sweeps (residual " << residual << ", tol " << tol << ")";
            throw NonConvergenceError(os.str(), residual, sweeps);
        }
        double change = use_mg ? mg.cycle() : detail::relax(L, prm.omega, true);
        sweeps += per_iter;
        residual = detail::complementarity_residual(L);
        if (prm.record_log) sol.log.push_back({sweeps, residual, count_active(L)});

        // Error estimate from the observed contraction of successive updates.
        double rho = prev_change > 0.0 ? std::min(0.999, change / prev_change) : 0.0;
        double err_est = (change == 0.0) ? 0.0 : change * rho / (1.0 - rho);
        prev_change = change;
        if (residual <= tol && err_est <= tol) break;

        if (residual < 0.5 * best) {
            best = residual;
            since_best = 0;
        } else if (use_mg && ++since_best > 400) {
            std::ostringstream os;
            os << "multigrid stagnated at residual " << residual << " (tol " << tol << ")";
            throw NonConvergenceError(os.str(), residual, sweeps);
        }
    }

    sol.u = ScalarField(g, L.u);
    sol.contact = CellMask(g);
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        if (!g.on_face(idx) && sol.u[i] == spec.obstacle[i]) sol.contact.set(i);
    });
    sol.sweeps_used = sweeps;
    sol.residual = residual;
    if (g.periodic() && sol.contact.empty())
        throw Error(ErrorKind::infeasible, "periodic solve converged with an empty contact set");
    return sol;
}

struct ComplementarityDiagnostics {
    double residual = 0.0;                 // max |min(h^2 (f - Δ_h u), u - φ)| over free nodes
    double raw_residual = 0.0;             // max |min(f - Δ_h u, u - φ)|
    double obstacle_violation = 0.0;       // max (φ - u)_+
    double supersolution_violation = 0.0;  // max h^2 (Δ_h u - f)_+
    double raw_supersolution_violation = 0.0;
    double boundary_violation = 0.0;       // max |u - g| on box faces

    bool within(double tol) const {
        return residual <= tol && obstacle_violation <= tol && supersolution_violation <= tol && boundary_violation <= tol;
    }
};

/// Independent re-check of a solution against its problem, from the stencil definition.
inline ComplementarityDiagnostics verify_complementarity(const ComplementaritySolution& sol,
                                                        const ObstacleProblemSpec& spec) {
    require_same_grid(sol.u.grid, spec.grid, "verify_complementarity");
    const Grid& g = spec.grid;
    const double h2 = g.spacing() * g.spacing();
    ScalarField lap = laplacian_apply(sol.u);
    ComplementarityDiagnostics d;
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        if (g.on_face(idx)) {
            d.boundary_violation = std::max(d.boundary_violation, std::abs(sol.u[i] - spec.boundary[i]));
            return;
        }
        double sup = spec.rhs_bound[i] - lap[i];
        double gap = sol.u[i] - spec.obstacle[i];
        d.raw_residual = std::max(d.raw_residual, std::abs(std::min(sup, gap)));
        d.residual = std::max(d.residual, std::abs(std::min(h2 * sup, gap)));
        d.obstacle_violation = std::max(d.obstacle_violation, -gap);
        d.raw_supersolution_violation = std::max(d.raw_supersolution_violation, -sup);
        d.supersolution_violation = std::max(d.supersolution_violation, -h2 * sup);
    });
    return d;
}

/// Checks λ ≤ -Δ_h φ0 ≤ λ^{-1} on interior nodes; throws naming the first offending node.
inline void check_ellipticity(const ScalarField& phi0, double lambda) {
    if (!(lambda > 0.0 && lambda <= 1.0)) throw Error(ErrorKind::domain, "lambda must lie in (0,1]");
    ScalarField lap = laplacian_apply(phi0);
    const Grid& g = phi0.grid;
    const double slack = 1e-9;
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        if (g.on_face(idx)) return;
        double v = -lap[i];
        if (v < lambda * (1.0 - slack) || v > (1.0 + slack) / lambda) {
            std::ostringstream os;
            os << "-Δ_h φ0 = " << v << " outside [" << lambda << ", " << 1.0 / lambda << "] at node (";
            for (int d = 0; d < g.dim(); ++d) os << (d ? "," : "") << idx[d];
            os << ")";
            throw Error(ErrorKind::ellipticity, os.str());
        }
    });
}

/// Minimal discrete supersolution above φ0 with Dirichlet data (Δ_h u ≤ 0).
inline ComplementaritySolution solve_u0(const ScalarField& phi0, const ScalarField& boundary,
                                        const SolverParams& params, double lambda) {
    if (phi0.grid.periodic()) throw Error(ErrorKind::invalid_grid, "u0 is posed on a box grid");
    check_ellipticity(phi0, lambda);
    bool positive = false;
    for_each_node(phi0.grid, [&](const Index& idx, std::size_t i) {
        if (phi0.grid.on_face(idx) && !(phi0[i] < 0.0))
            throw Error(ErrorKind::domain, "φ0 must be negative on the box faces");
        if (!phi0.grid.on_face(idx) && phi0[i] > 0.0) positive = true;
    });
    if (!positive) throw Error(ErrorKind::domain, "φ0 must be positive somewhere inside");
    ObstacleProblemSpec spec{phi0.grid, phi0, ScalarField(phi0.grid, 0.0), boundary, params};
    return solve_complementarity(spec);
}

/// Validates ψ as a cell profile: -1 ≤ ψ ≤ 0 (error); max ψ = 0 (warning only).
inline void check_psi_cell(const ScalarField& psi) {
    if (!psi.grid.periodic()) throw Error(ErrorKind::invalid_grid, "ψ must be given on a torus cell");
    if (psi.min() < -1.0 || psi.max() > 0.0)
        throw Error(ErrorKind::obstacle_range, "ψ must take values in [-1, 0]");
    if (psi.max() != 0.0) log::warn("ψ does not attain 0 on the cell (max " + std::to_string(psi.max()) + ")");
}

/// φ_ε = φ0 + ε^p ψ(x/ε) on the domain grid.
inline ScalarField oscillatory_obstacle(const ScalarField& phi0, const ScalarField& psi_cell, double eps, double p) {
    if (!(eps > 0.0)) throw Error(ErrorKind::domain, "eps must be positive");
    check_psi_cell(psi_cell);
    const std::size_t m = cell_nodes(eps, phi0.grid.spacing());
    if (m < 16) log::warn("eps/h = " + std::to_string(m) + " resolves ψ with fewer than 16 nodes per period");
    ScalarField ext = periodic_extend(psi_cell, phi0.grid, eps);
    const double amp = std::pow(eps, p);
    ScalarField out(phi0.grid);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = phi0[i] + amp * ext[i];
    return out;
}

/// Minimal discrete supersolution above the oscillatory obstacle φ_ε.
inline ComplementaritySolution solve_ueps(const ScalarField& phi0, const ScalarField& psi_cell, double eps, double p,
                                          const ScalarField& boundary, const SolverParams& params, double lambda) {
    if (phi0.grid.periodic()) throw Error(ErrorKind::invalid_grid, "u_eps is posed on a box grid");
    check_ellipticity(phi0, lambda);
    ScalarField phi_eps = oscillatory_obstacle(phi0, psi_cell, eps, p);
    ObstacleProblemSpec spec{phi0.grid, phi_eps, ScalarField(phi0.grid, 0.0), boundary, params};
    return solve_complementarity(spec);
}

struct HeightFields {
    ScalarField w0;
    ScalarField weps;
};

/// w0 = u0 - φ0 and w_ε = u_ε - φ0.
inline HeightFields height_fields(const ComplementaritySolution& u0, const ComplementaritySolution& ueps,
                                  const ScalarField& phi0) {
    require_same_grid(u0.u.grid, phi0.grid, "height_fields(u0)");
    require_same_grid(ueps.u.grid, phi0.grid, "height_fields(u_eps)");
    return {u0.u - phi0, ueps.u - phi0};
}

} // namespace obshom
