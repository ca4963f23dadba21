#pragma once

// End-to-end epsilon sweeps: solves u0 and u_eps, builds the bulk sets and
// measures every estimate against r(eps).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "obshom/corrector.hpp"
#include "obshom/families.hpp"
#include "obshom/geometry.hpp"
#include "obshom/grid.hpp"
#include "obshom/log.hpp"
#include "obshom/parallel.hpp"
#include "obshom/solver.hpp"

namespace obshom {

enum class BoundaryKind { radial, zero };

struct ScenarioConfig {
    std::string name = "scenario";
    int dim = 1;
    Coord lower{};
    Coord upper{};
    Paraboloid obstacle;
    BoundaryKind boundary = BoundaryKind::radial;
    double boundary_radius = 0.0;  // radial data; 0 = half the shortest box side
    PsiSpec psi;
    double p = 1.0;
    double lambda = 1.0;
    std::vector<double> eps;
    std::optional<double> h;  // fixed spacing for every row
    double eps_over_h = 32.0;
    std::size_t max_nodes_per_axis = 1025;
    std::optional<Coord> anchor;
    double anchor_shift = 1.0 / 3.0;  // shifted rerun, as a fraction of the cube side
    std::vector<double> probe_radii = {1.0, 2.0, 4.0, 8.0};  // multiples of r(eps)
    ProbeOptions probe;
    std::size_t gradient_stride = 1;
    SolverParams solver;
    std::vector<double> mu;  // corrector sweep list
    std::size_t cell_resolution = 512;
    bool write_fields = false;
    std::string raw;  // the document as read
};

namespace detail {

inline Coord coord_from_json(const nlohmann::json& j, int dim, const char* key) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim)
        throw Error(ErrorKind::config, std::string(key) + " must be an array of " + std::to_string(dim) + " numbers");
    Coord c{};
    for (int d = 0; d < dim; ++d) c[d] = j.at(d).get<double>();
    return c;
}

inline bool is_integral(double v, double rel = 1e-9) {
    return std::abs(v - std::round(v)) <= rel * std::max(1.0, std::abs(v));
}

} // namespace detail

inline SolverParams solver_params_from_json(const nlohmann::json& j) {
    SolverParams s;
    if (j.is_null()) return s;
    s.omega = j.value("omega", s.omega);
    s.tol = j.value("tol", s.tol);
    s.max_sweeps = j.value("max_sweeps", s.max_sweeps);
    s.pre_smooth = j.value("pre_smooth", s.pre_smooth);
    s.post_smooth = j.value("post_smooth", s.post_smooth);
    s.cycle_gamma = j.value("cycle_gamma", s.cycle_gamma);
    s.record_log = j.value("record_log", s.record_log);
    std::string m = j.value("method", std::string("multigrid"));
    if (m == "multigrid") s.method = SolverMethod::multigrid;
    else if (m == "psor") s.method = SolverMethod::psor;
    else throw Error(ErrorKind::config, "solver.method must be 'multigrid' or 'psor'");
    if (!(s.omega > 0.0 && s.omega < 2.0)) throw Error(ErrorKind::config, "solver.omega must lie in (0,2)");
    if (!(s.tol > 0.0)) throw Error(ErrorKind::config, "solver.tol must be positive");
    if (s.pre_smooth < 0 || s.post_smooth < 0 || s.pre_smooth + s.post_smooth == 0 || s.cycle_gamma < 1)
        throw Error(ErrorKind::config, "invalid multigrid cycle parameters");
    return s;
}

inline PsiSpec psi_from_json(const nlohmann::json& j) {
    PsiSpec p;
    p.family = psi_family_from_string(j.at("family").get<std::string>());
    p.value = j.value("value", 0.0);
    p.exponent = j.value("exponent", 1.0);
    if (p.family == PsiFamily::constant && !(p.value >= -1.0 && p.value <= 0.0))
        throw Error(ErrorKind::config, "constant psi must lie in [-1, 0]");
    if (p.family == PsiFamily::cusp && !(p.exponent > 0.0 && p.exponent <= 2.0))
        throw Error(ErrorKind::config, "cusp exponent must lie in (0, 2]");
    return p;
}

/// Spacing used for the row at `eps`.
inline double row_spacing(const ScenarioConfig& c, double eps) {
    if (c.h) return *c.h;
    double longest = 0.0;
    for (int d = 0; d < c.dim; ++d) longest = std::max(longest, c.upper[d] - c.lower[d]);
    const double cap = longest / static_cast<double>(c.max_nodes_per_axis - 1);
    const double h = eps / c.eps_over_h;
    if (h < cap) {
        log::info("eps = " + std::to_string(eps) + ": h = eps/" + std::to_string(c.eps_over_h) +
                  " capped at " + std::to_string(cap));
        return cap;
    }
    return h;
}

inline Grid row_grid(const ScenarioConfig& c, double h) {
    Index ext{1, 1, 1};
    for (int d = 0; d < c.dim; ++d)
        ext[d] = static_cast<std::size_t>(std::llround((c.upper[d] - c.lower[d]) / h)) + 1;
    return Grid(c.dim, ext, h, c.lower, Topology::box);
}

/// Parses and validates a scenario document; every failure is a config error.
inline ScenarioConfig parse_scenario(const std::string& text) {
    ScenarioConfig c;
    c.raw = text;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
    }
    try {
        c.name = j.value("name", c.name);
        c.dim = j.at("dim").get<int>();
        if (c.dim < 1 || c.dim > 3) throw Error(ErrorKind::config, "dim must be 1, 2 or 3");
        const auto& dom = j.at("domain");
        c.lower = detail::coord_from_json(dom.at("lower"), c.dim, "domain.lower");
        c.upper = detail::coord_from_json(dom.at("upper"), c.dim, "domain.upper");
        for (int d = 0; d < c.dim; ++d)
            if (!(c.upper[d] > c.lower[d])) throw Error(ErrorKind::config, "domain.upper must exceed domain.lower");

        const auto& ob = j.at("obstacle");
        if (ob.value("family", std::string("paraboloid")) != "paraboloid")
            throw Error(ErrorKind::config, "obstacle.family must be 'paraboloid'");
        c.obstacle.c = ob.at("c").get<double>();
        c.obstacle.b = ob.at("b").get<double>();

        c.p = j.value("p", c.p);
        c.lambda = j.value("lambda", c.lambda);
        if (!(c.lambda > 0.0 && c.lambda <= 1.0)) throw Error(ErrorKind::config, "lambda must lie in (0,1]");
        const double ml = c.obstacle.minus_laplacian(c.dim);
        if (ml < c.lambda * (1 - 1e-12) || ml > (1 + 1e-12) / c.lambda)
            throw Error(ErrorKind::config, "ellipticity window violated: 2nb = " + std::to_string(ml));
        if (!(c.obstacle.c > 0.0)) throw Error(ErrorKind::config, "obstacle.c must be positive");
        for (int d = 0; d < c.dim; ++d) {
            double near = std::min(std::abs(c.lower[d]), std::abs(c.upper[d]));
            if (c.lower[d] < 0.0 && c.upper[d] > 0.0 && !(c.obstacle.b * near * near > c.obstacle.c))
                throw Error(ErrorKind::config, "obstacle must be negative on the box faces");
        }

        const auto bd = j.value("boundary", nlohmann::json::object());
        std::string bkind = bd.value("type", std::string("radial"));
        if (bkind == "radial") c.boundary = BoundaryKind::radial;
        else if (bkind == "zero") c.boundary = BoundaryKind::zero;
        else throw Error(ErrorKind::config, "boundary.type must be 'radial' or 'zero'");
        c.boundary_radius = bd.value("radius", 0.0);
        if (c.boundary_radius == 0.0) {
            c.boundary_radius = std::numeric_limits<double>::infinity();
            for (int d = 0; d < c.dim; ++d)
                c.boundary_radius = std::min(c.boundary_radius, 0.5 * (c.upper[d] - c.lower[d]));
        }
        if (c.boundary == BoundaryKind::radial && !(c.obstacle.c < c.obstacle.b * c.boundary_radius * c.boundary_radius))
            throw Error(ErrorKind::config, "radial boundary data needs c < b R^2");

        c.psi = psi_from_json(j.at("psi"));
        c.eps = j.at("eps").get<std::vector<double>>();
        if (c.eps.empty()) throw Error(ErrorKind::config, "eps list is empty");
        for (std::size_t i = 0; i < c.eps.size(); ++i) {
            double e = c.eps[i];
            if (!(e > 0.0 && e <= 1.0)) throw Error(ErrorKind::config, "eps values must lie in (0,1]");
            if (!detail::is_integral(std::log2(e), 1e-12)) throw Error(ErrorKind::config, "eps values must be dyadic");
            if (i > 0 && !(e < c.eps[i - 1])) throw Error(ErrorKind::config, "eps list must be strictly decreasing");
        }
        if (j.contains("h")) c.h = j.at("h").get<double>();
        c.eps_over_h = j.value("eps_over_h", c.eps_over_h);
        c.max_nodes_per_axis = j.value("max_nodes_per_axis", c.max_nodes_per_axis);
        if (c.max_nodes_per_axis < 3) throw Error(ErrorKind::config, "max_nodes_per_axis must be at least 3");
        if (j.contains("anchor")) c.anchor = detail::coord_from_json(j.at("anchor"), c.dim, "anchor");
        c.anchor_shift = j.value("anchor_shift", c.anchor_shift);

        const auto pr = j.value("probe", nlohmann::json::object());
        c.probe_radii = pr.value("radii", c.probe_radii);
        c.probe.stride = pr.value("stride", c.probe.stride);
        c.probe.target_centers = pr.value("target_centers", c.probe.target_centers);
        for (double r : c.probe_radii)
            if (!(r > 0.0)) throw Error(ErrorKind::config, "probe radii must be positive");
        c.gradient_stride = j.value("gradient_stride", c.gradient_stride);
        if (c.gradient_stride == 0) throw Error(ErrorKind::config, "gradient_stride must be positive");

        c.solver = solver_params_from_json(j.value("solver", nlohmann::json()));
        const auto co = j.value("corrector", nlohmann::json::object());
        c.mu = co.value("mu", c.mu);
        c.cell_resolution = co.value("cell_resolution", c.cell_resolution);
        c.write_fields = j.value("write_fields", c.write_fields);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config, std::string("config schema: ") + e.what());
    }

    for (double e : c.eps) {
        const double h = row_spacing(c, e);
        if (!(h > 0.0)) throw Error(ErrorKind::config, "grid spacing must be positive");
        if (!detail::is_integral(e / h))
            throw Error(ErrorKind::config, "eps/h = " + std::to_string(e / h) + " is not an integer");
        for (int d = 0; d < c.dim; ++d) {
            if (!detail::is_integral((c.upper[d] - c.lower[d]) / h))
                throw Error(ErrorKind::config, "box side is not a multiple of h = " + std::to_string(h));
            if (!detail::is_integral(c.lower[d] / h))
                throw Error(ErrorKind::config, "domain.lower is not on the h-lattice");
        }
    }
    return c;
}

/// Corrector-sweep settings only (dim, psi, mu, cell_resolution, solver) for the corrector commands.
inline ScenarioConfig parse_corrector_config(const std::string& text) {
    ScenarioConfig c;
    c.raw = text;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        c.name = j.value("name", c.name);
        c.dim = j.at("dim").get<int>();
        if (c.dim < 1 || c.dim > 3) throw Error(ErrorKind::config, "dim must be 1, 2 or 3");
        c.psi = psi_from_json(j.at("psi"));
        c.p = j.value("p", c.p);
        c.lambda = j.value("lambda", c.lambda);
        c.solver = solver_params_from_json(j.value("solver", nlohmann::json()));
        const auto co = j.value("corrector", nlohmann::json::object());
        c.mu = co.value("mu", c.mu);
        c.cell_resolution = co.value("cell_resolution", c.cell_resolution);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config, std::string("config schema: ") + e.what());
    }
    if (c.cell_resolution < 8) throw Error(ErrorKind::config, "corrector.cell_resolution must be at least 8");
    for (double m : c.mu)
        if (!(m > 0.0)) throw Error(ErrorKind::config, "corrector.mu values must be positive");
    return c;
}

// ---------------------------------------------------------------------------
// Individual checks

struct SandwichReport {
    double lo_margin = std::numeric_limits<double>::infinity();  // min (w_ε - w0 + r^2)
    double hi_margin = std::numeric_limits<double>::infinity();  // min (w0 - w_ε)
    double slack = 0.0;
    std::size_t violations = 0;
    std::optional<Coord> worst_node;
    bool ok() const { return violations == 0; }
};

/// w0 - r^2 - slack ≤ w_ε ≤ w0 + slack node-wise.
inline SandwichReport sandwich_check(const ScalarField& w0, const ScalarField& weps, double r_eps, double slack) {
    require_same_grid(w0.grid, weps.grid, "sandwich_check");
    SandwichReport rep;
    rep.slack = slack;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < w0.size(); ++i) {
        double lo = weps[i] - w0[i] + r_eps * r_eps;
        double hi = w0[i] - weps[i];
        rep.lo_margin = std::min(rep.lo_margin, lo);
        rep.hi_margin = std::min(rep.hi_margin, hi);
        if (lo < -slack || hi < -slack) {
            ++rep.violations;
            if (std::min(lo, hi) < worst) {
                worst = std::min(lo, hi);
                rep.worst_node = w0.grid.coordinate(i);
            }
        }
    }
    return rep;
}

struct MarginReport {
    double margin = std::numeric_limits<double>::infinity();
    double slack = 0.0;
    std::size_t violations = 0;
    bool ok() const { return violations == 0; }
};

/// w_ε ≥ ε^p χ(x/ε) - slack node-wise, for a corrector solved on the row's cell.
inline MarginReport corrected_obstacle_check(const ScalarField& weps, const CorrectorRecord& corrector, double eps,
                                             double p, double slack) {
    ScalarField ext = periodic_extend(corrector.chi, weps.grid, eps);
    const double amp = std::pow(eps, p);
    MarginReport rep;
    rep.slack = slack;
    for (std::size_t i = 0; i < weps.size(); ++i) {
        double m = weps[i] - amp * ext[i];
        rep.margin = std::min(rep.margin, m);
        if (m < -slack) ++rep.violations;
    }
    return rep;
}

/// As above, solving the corrector at μ = λ^{-1} ε^{2-p} on a cell with ε/h nodes.
inline MarginReport corrected_obstacle_check(const ScalarField& weps, const PsiSpec& psi, double eps, double p,
                                             double lambda, double slack, const SolverParams& solver = {}) {
    const std::size_t m = cell_nodes(eps, weps.grid.spacing());
    LengthScaleParams lp{p, lambda, m};
    CorrectorRecord rec = solve_corrector(make_psi_cell(psi, weps.grid.dim(), m), corrector_mu(eps, lp), solver);
    return corrected_obstacle_check(weps, rec, eps, p, slack);
}

struct GradientReport {
    double max_rms = 0.0;
    double ratio = 0.0;  // max_rms / r
    std::size_t centers = 0;
};

/**
 * Max over centers x with d(x, ∂U) ≥ r of the RMS of |∇w0 - ∇w_ε| over B_r(x).
 * Ball sums use prefix sums along the last axis.
 */
inline GradientReport gradient_check(const ScalarField& w0, const ScalarField& weps, double r_eps,
                                     std::size_t stride = 1) {
    require_same_grid(w0.grid, weps.grid, "gradient_check");
    const Grid& g = w0.grid;
    const double h = g.spacing();
    if (!(r_eps >= 4.0 * h))
        throw Error(ErrorKind::resolution, "r(eps) = " + std::to_string(r_eps) + " is below 4h");
    auto g0 = gradient(w0), ge = gradient(weps);
    const int last = g.dim() - 1;
    const std::size_t n_last = g.extent(last);
    std::vector<double> prefix(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        double q = 0.0;
        for (int d = 0; d < g.dim(); ++d) q += (g0[d][i] - ge[d][i]) * (g0[d][i] - ge[d][i]);
        const bool line_start = (i / g.stride(last)) % n_last == 0;
        prefix[i] = q + (line_start ? 0.0 : prefix[i - 1]);
    }

    const double R2 = r_eps * r_eps * (1.0 + 1e-12) / (h * h);
    const long reach = static_cast<long>(std::floor(std::sqrt(R2)));
    struct Row { long a, b, half; };
    std::vector<Row> rows;
    const long ra = g.dim() >= 2 ? reach : 0, rb = g.dim() >= 3 ? reach : 0;
    for (long a = -ra; a <= ra; ++a)
        for (long b = -rb; b <= rb; ++b) {
            double rest = R2 - static_cast<double>(a * a + b * b);
            if (rest < 0.0) continue;
            long half = static_cast<long>(std::floor(std::sqrt(rest)));
            while (static_cast<double>((half + 1) * (half + 1)) <= rest) ++half;
            while (half > 0 && static_cast<double>(half * half) > rest) --half;
            rows.push_back({a, b, half});
        }
    std::size_t count = 0;
    for (const auto& r : rows) count += static_cast<std::size_t>(2 * r.half + 1);

    GradientReport rep;
    std::size_t seen = 0;
    for_each_node(g, [&](const Index& idx, std::size_t) {
        if (g.distance_to_boundary(idx) < r_eps * (1.0 - 1e-12)) return;
        if (seen++ % stride != 0) return;
        double sum = 0.0;
        for (const auto& r : rows) {
            Index j = idx;
            if (g.dim() == 2) j[0] = static_cast<std::size_t>(static_cast<long>(idx[0]) + r.a);
            if (g.dim() == 3) {
                j[0] = static_cast<std::size_t>(static_cast<long>(idx[0]) + r.a);
                j[1] = static_cast<std::size_t>(static_cast<long>(idx[1]) + r.b);
            }
            const std::size_t mid = g.flat(j);
            const std::size_t hi = mid + static_cast<std::size_t>(r.half);
            double s = prefix[hi];
            if (static_cast<long>(j[last]) - r.half > 0) s -= prefix[mid - static_cast<std::size_t>(r.half) - 1];
            sum += s;
        }
        double rms = std::sqrt(std::max(0.0, sum / static_cast<double>(count)));
        rep.max_rms = std::max(rep.max_rms, rms);
        ++rep.centers;
    });
    rep.ratio = rep.max_rms / r_eps;
    return rep;
}

// ---------------------------------------------------------------------------
// Convergence sweep

/// Per-grid solution of the limit problem, shared by the rows on that grid.
struct LimitSolution {
    Grid grid;
    ScalarField phi0;
    ScalarField boundary;
    ComplementaritySolution u0;
    ComplementarityDiagnostics diagnostics;
    ScalarField w0;
    CellMask gamma0;
    RegularityEstimates regularity;
    double slack_constant = 0.0;  // C_d = 4 max(M, 1/λ)
    double analytic_radius = 0.0;
    double measured_radius = 0.0;  // max distance of a Λ0 node from the origin
    ProbeReport growth;
};

struct ConvergenceRow {
    double eps = 0.0;
    double h = 0.0;
    double r_eps = 0.0;
    double mu = 0.0;
    double height = 0.0;
    double cube_side = 0.0;
    double dH_contact = std::numeric_limits<double>::quiet_NaN();
    double dH_fb = std::numeric_limits<double>::quiet_NaN();
    double dH_contact_shift = std::numeric_limits<double>::quiet_NaN();
    double dH_fb_shift = std::numeric_limits<double>::quiet_NaN();
    double sandwich_lo = std::numeric_limits<double>::quiet_NaN();
    double sandwich_hi = std::numeric_limits<double>::quiet_NaN();
    double corrector_margin = std::numeric_limits<double>::quiet_NaN();
    double nondeg_margin = std::numeric_limits<double>::quiet_NaN();
    double contact_probe_margin = std::numeric_limits<double>::quiet_NaN();
    double bulk_probe_margin = std::numeric_limits<double>::quiet_NaN();
    double growth_margin = std::numeric_limits<double>::quiet_NaN();
    double sharpest_c = std::numeric_limits<double>::quiet_NaN();
    double bulk_probe_c = 0.0;
    std::size_t probe_points = 0;
    double grad_rms = std::numeric_limits<double>::quiet_NaN();
    double grad_rms_ratio = std::numeric_limits<double>::quiet_NaN();
    double slack = 0.0;  // C_d h^2
    ComplementarityDiagnostics ueps_diagnostics;
    double ueps_tolerance = 0.0;
    std::size_t ueps_sweeps = 0;
    ComplementarityDiagnostics u0_diagnostics;
    double u0_tolerance = 0.0;
    ComplementarityDiagnostics corrector_diagnostics;
    double corrector_tolerance = 0.0;
    std::size_t contact_nodes = 0;
    std::size_t bulk_nodes = 0;
    std::vector<std::string> violations;
    std::string status = "ok";
    std::optional<HeightFields> fields;

    bool succeeded() const { return status.rfind("failed", 0) != 0; }
};

struct ConvergenceReport {
    std::string scenario;
    std::vector<ConvergenceRow> rows;
    double C_Lambda = 0.0, C_Gamma = 0.0, C_grad = 0.0;
    double median_Lambda = 0.0, median_Gamma = 0.0, median_grad = 0.0;
    double C_Lambda_shift = 0.0, C_Gamma_shift = 0.0;
    double analytic_radius = 0.0, measured_radius = 0.0;
    RegularityEstimates regularity;
    double slack_constant = 0.0;
    std::size_t threads = 1;

    bool all_ok() const {
        return std::all_of(rows.begin(), rows.end(), [](const ConvergenceRow& r) { return r.status == "ok"; });
    }
};

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline LimitSolution solve_limit_problem(const ScenarioConfig& c, double h) {
    LimitSolution L;
    L.grid = row_grid(c, h);
    const int n = c.dim;
    L.phi0 = sample([&](const Coord& x) { return c.obstacle(x, n); }, L.grid);
    if (c.boundary == BoundaryKind::radial) {
        RadialSolution rad(c.obstacle, n, c.boundary_radius);
        L.analytic_radius = rad.contact_radius();
        L.boundary = sample([&](const Coord& x) { return rad(x); }, L.grid);
    } else {
        L.boundary = ScalarField(L.grid, 0.0);
    }
    L.u0 = solve_u0(L.phi0, L.boundary, c.solver, c.lambda);
    ObstacleProblemSpec spec{L.grid, L.phi0, ScalarField(L.grid, 0.0), L.boundary, c.solver};
    L.diagnostics = verify_complementarity(L.u0, spec);
    L.w0 = L.u0.u - L.phi0;
    L.gamma0 = free_boundary(L.u0.contact);
    L.regularity = regularity_estimates(L.w0, L.u0.contact);
    L.slack_constant = 4.0 * std::max(L.regularity.M, 1.0 / c.lambda);
    for (std::size_t i = 0; i < L.grid.size(); ++i) {
        if (!L.u0.contact[i]) continue;
        Coord x = L.grid.coordinate(i);
        double r2 = 0.0;
        for (int d = 0; d < n; ++d) r2 += x[d] * x[d];
        L.measured_radius = std::max(L.measured_radius, std::sqrt(r2));
    }
    return L;
}

namespace detail {

inline std::vector<double> scaled(const std::vector<double>& rel, double r) {
    std::vector<double> out;
    for (double v : rel) out.push_back(v * r);
    return out;
}

inline void run_row(const ScenarioConfig& c, const LimitSolution& L, ConvergenceRow& row) {
    const int n = c.dim;
    const Grid& g = L.grid;
    const double h = g.spacing();
    const std::size_t m = cell_nodes(row.eps, h);
    ScalarField psi_cell = make_psi_cell(c.psi, n, m);

    LengthScaleParams lp{c.p, c.lambda, m};
    row.mu = corrector_mu(row.eps, lp);
    CorrectorRecord chi = solve_corrector(psi_cell, row.mu, c.solver);
    row.height = chi.height;
    row.corrector_diagnostics = chi.diagnostics;
    row.corrector_tolerance = chi.tolerance;
    row.r_eps = length_scale_from_height(row.eps, c.p, chi.height);

    ComplementaritySolution ueps = solve_ueps(L.phi0, psi_cell, row.eps, c.p, L.boundary, c.solver, c.lambda);
    ObstacleProblemSpec spec{g, oscillatory_obstacle(L.phi0, psi_cell, row.eps, c.p), ScalarField(g, 0.0), L.boundary,
                             c.solver};
    row.ueps_diagnostics = verify_complementarity(ueps, spec);
    row.ueps_tolerance = ueps.tolerance;
    row.ueps_sweeps = ueps.sweeps_used;
    row.u0_diagnostics = L.diagnostics;
    row.u0_tolerance = L.u0.tolerance;
    row.contact_nodes = ueps.contact.count();
    if (!row.ueps_diagnostics.within(ueps.tolerance) || !L.diagnostics.within(L.u0.tolerance) ||
        !chi.diagnostics.within(chi.tolerance))
        row.violations.push_back("residual");

    ScalarField weps = ueps.u - L.phi0;
    row.slack = L.slack_constant * h * h;

    SandwichReport sw = sandwich_check(L.w0, weps, row.r_eps, row.slack);
    row.sandwich_lo = sw.lo_margin;
    row.sandwich_hi = sw.hi_margin;
    if (!sw.ok()) row.violations.push_back("sandwich");

    MarginReport co = corrected_obstacle_check(weps, chi, row.eps, c.p, row.slack);
    row.corrector_margin = co.margin;
    if (!co.ok()) row.violations.push_back("corrected_obstacle");

    const Coord anchor = c.anchor.value_or(g.origin());
    BulkContact bulk = bulk_contact_set(ueps.contact, row.r_eps, c.lambda, anchor);
    row.cube_side = bulk.lattice.cube_side;
    row.bulk_nodes = bulk.mask.count();
    CellMask bulk_fb = bulk_free_boundary(bulk.mask);
    row.dH_contact = hausdorff_distance(L.u0.contact, bulk.mask);
    row.dH_fb = hausdorff_distance(L.gamma0, bulk_fb);

    Coord shifted = anchor;
    for (int d = 0; d < n; ++d) shifted[d] += c.anchor_shift * row.cube_side;
    BulkContact bulk_s = bulk_contact_set(ueps.contact, row.r_eps, c.lambda, shifted);
    row.dH_contact_shift = hausdorff_distance(L.u0.contact, bulk_s.mask);
    row.dH_fb_shift = hausdorff_distance(L.gamma0, bulk_free_boundary(bulk_s.mask));

    const std::vector<double> radii = scaled(c.probe_radii, row.r_eps);
    ProbeOptions po = c.probe;
    po.slack_constant = L.slack_constant;
    ProbeReport near = nondegeneracy_probe(weps, ueps.contact, row.r_eps, c.lambda, radii, po);
    BulkNondegeneracyReport cor = bulk_nondegeneracy_check(weps, bulk_fb, row.r_eps, c.lambda, radii, po);
    ProbeReport growth = free_boundary_growth_probe(L.w0, L.gamma0, c.lambda, radii, po);
    row.contact_probe_margin = near.worst_margin;
    row.bulk_probe_margin = cor.probe.worst_margin;
    row.growth_margin = growth.worst_margin;
    row.sharpest_c = cor.sharpest_c;
    row.bulk_probe_c = cor.c;
    row.nondeg_margin = std::min({near.worst_margin, cor.probe.worst_margin, growth.worst_margin});
    row.probe_points = near.points.size() + cor.probe.points.size() + growth.points.size();
    if (!near.ok()) row.violations.push_back("nondegeneracy");
    if (!cor.probe.ok()) row.violations.push_back("bulk_nondegeneracy");
    if (!growth.ok()) row.violations.push_back("growth");

    GradientReport gr = gradient_check(L.w0, weps, row.r_eps, c.gradient_stride);
    row.grad_rms = gr.max_rms;
    row.grad_rms_ratio = gr.ratio;

    if (c.write_fields) row.fields = HeightFields{L.w0, weps};
    if (!row.violations.empty()) {
        row.status = "violation:";
        for (std::size_t i = 0; i < row.violations.size(); ++i) row.status += (i ? "+" : "") + row.violations[i];
    }
}

} // namespace detail

/// Runs every eps row of a scenario; failing rows are recorded and the sweep continues.
inline ConvergenceReport run_convergence(const ScenarioConfig& c, std::size_t threads = 1) {
    ConvergenceReport rep;
    rep.scenario = c.name;
    rep.threads = resolve_threads(threads);

    // r(eps) must decay over the list; checked from the row correctors before any domain solve.
    {
        std::vector<double> r;
        for (double e : c.eps) {
            const std::size_t m = cell_nodes(e, row_spacing(c, e));
            LengthScaleParams lp{c.p, c.lambda, m};
            r.push_back(min_length_scale(e, lp, c.psi, c.dim, c.solver));
        }
        check_length_scale_decay(c.eps, r);
    }

    std::map<double, LimitSolution> limits;
    for (double e : c.eps) {
        double h = row_spacing(c, e);
        if (!limits.count(h)) limits.emplace(h, solve_limit_problem(c, h));
    }
    const LimitSolution& finest = limits.begin()->second;
    rep.analytic_radius = finest.analytic_radius;
    rep.measured_radius = finest.measured_radius;
    rep.regularity = finest.regularity;
    rep.slack_constant = finest.slack_constant;

    rep.rows.resize(c.eps.size());
    parallel_for(c.eps.size(), threads, [&](std::size_t i) {
        ConvergenceRow& row = rep.rows[i];
        row.eps = c.eps[i];
        row.h = row_spacing(c, row.eps);
        try {
            detail::run_row(c, limits.at(row.h), row);
        } catch (const Error& e) {
            row.status = std::string("failed:") + to_string(e.kind());
            log::warn("eps = " + std::to_string(row.eps) + " failed: " + e.what());
        }
    });

    std::vector<double> rl, rg, rd, rls, rgs;
    for (const auto& row : rep.rows) {
        if (!row.succeeded()) continue;
        rl.push_back(row.dH_contact / row.r_eps);
        rg.push_back(row.dH_fb / row.r_eps);
        rd.push_back(row.grad_rms_ratio);
        rls.push_back(row.dH_contact_shift / row.r_eps);
        rgs.push_back(row.dH_fb_shift / row.r_eps);
    }
    if (rl.empty()) throw Error(ErrorKind::invariant_failure, "every eps row failed");
    auto mx = [](const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); };
    rep.C_Lambda = mx(rl);
    rep.C_Gamma = mx(rg);
    rep.C_grad = mx(rd);
    rep.C_Lambda_shift = mx(rls);
    rep.C_Gamma_shift = mx(rgs);
    rep.median_Lambda = median(rl);
    rep.median_Gamma = median(rg);
    rep.median_grad = median(rd);
    return rep;
}

// ---------------------------------------------------------------------------
// Report serialisation

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string convergence_csv(const ConvergenceReport& rep) {
    std::ostringstream os;
    os << "eps,r_eps,dH_contact,dH_fb,sandwich_lo,sandwich_hi,corrector_margin,nondeg_margin,grad_rms_ratio,status\n";
    for (const auto& r : rep.rows) {
        for (double v : {r.eps, r.r_eps, r.dH_contact, r.dH_fb, r.sandwich_lo, r.sandwich_hi, r.corrector_margin,
                         r.nondeg_margin, r.grad_rms_ratio})
            os << format_number(v) << ',';
        os << r.status << '\n';
    }
    return os.str();
}

namespace detail {

inline nlohmann::json diagnostics_json(const ComplementarityDiagnostics& d, double tol) {
    return {{"residual", d.residual},
            {"raw_residual", d.raw_residual},
            {"obstacle_violation", d.obstacle_violation},
            {"supersolution_violation", d.supersolution_violation},
            {"boundary_violation", d.boundary_violation},
            {"tolerance", tol},
            {"ok", d.within(tol)}};
}

inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

} // namespace detail

inline nlohmann::json convergence_summary(const ConvergenceReport& rep, const ScenarioConfig& c) {
    using detail::num;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        rows.push_back({{"eps", r.eps},
                        {"h", r.h},
                        {"mu", num(r.mu)},
                        {"height", num(r.height)},
                        {"r_eps", num(r.r_eps)},
                        {"cube_side", num(r.cube_side)},
                        {"dH_contact", num(r.dH_contact)},
                        {"dH_fb", num(r.dH_fb)},
                        {"dH_contact_shift", num(r.dH_contact_shift)},
                        {"dH_fb_shift", num(r.dH_fb_shift)},
                        {"sandwich_lo", num(r.sandwich_lo)},
                        {"sandwich_hi", num(r.sandwich_hi)},
                        {"corrector_margin", num(r.corrector_margin)},
                        {"contact_probe_margin", num(r.contact_probe_margin)},
                        {"bulk_probe_margin", num(r.bulk_probe_margin)},
                        {"growth_margin", num(r.growth_margin)},
                        {"bulk_probe_c", r.bulk_probe_c},
                        {"sharpest_c", num(r.sharpest_c)},
                        {"probe_points", r.probe_points},
                        {"grad_rms", num(r.grad_rms)},
                        {"grad_rms_ratio", num(r.grad_rms_ratio)},
                        {"slack", r.slack},
                        {"contact_nodes", r.contact_nodes},
                        {"bulk_nodes", r.bulk_nodes},
                        {"ueps_sweeps", r.ueps_sweeps},
                        {"ueps", detail::diagnostics_json(r.ueps_diagnostics, r.ueps_tolerance)},
                        {"corrector", detail::diagnostics_json(r.corrector_diagnostics, r.corrector_tolerance)},
                        {"status", r.status}});
    }
    return {{"scenario", rep.scenario},
            {"threads", rep.threads},
            {"constants",
             {{"C_Lambda", rep.C_Lambda},
              {"C_Gamma", rep.C_Gamma},
              {"C_grad", rep.C_grad},
              {"median_Lambda", rep.median_Lambda},
              {"median_Gamma", rep.median_Gamma},
              {"median_grad", rep.median_grad}}},
            {"anchor_shift",
             {{"fraction", c.anchor_shift}, {"C_Lambda", rep.C_Lambda_shift}, {"C_Gamma", rep.C_Gamma_shift}}},
            {"limit_problem",
             {{"analytic_contact_radius", rep.analytic_radius},
              {"measured_contact_radius", rep.measured_radius},
              {"M", rep.regularity.M},
              {"c1", num(rep.regularity.c1)},
              {"c2", rep.regularity.c2},
              {"C_d", rep.slack_constant}}},
            {"rows", rows},
            {"all_ok", rep.all_ok()},
            {"config_echo", c.raw}};
}

} // namespace obshom
