#include <cmath>

#include "test_util.hpp"

using namespace obshom;

namespace {

// Least concave majorant of the points (x_i, y_i): the exact solution of the
// 1D discrete problem with Δ_h u ≤ 0, u ≥ φ inside and u = g at both ends.
std::vector<double> concave_majorant(const std::vector<double>& y) {
    const long n = static_cast<long>(y.size());
    std::vector<long> hull;
    for (long i = 0; i < n; ++i) {
        while (hull.size() >= 2) {
            long a = hull[hull.size() - 2], b = hull.back();
            // drop b if it lies on or below the chord from a to i
            double cross = (y[b] - y[a]) * static_cast<double>(i - a) - (y[i] - y[a]) * static_cast<double>(b - a);
            if (cross <= 0.0) hull.pop_back();
            else break;
        }
        hull.push_back(i);
    }
    std::vector<double> out(y.size());
    for (std::size_t k = 0; k + 1 < hull.size(); ++k) {
        long a = hull[k], b = hull[k + 1];
        for (long i = a; i <= b; ++i)
            out[i] = y[a] + (y[b] - y[a]) * static_cast<double>(i - a) / static_cast<double>(b - a);
    }
    return out;
}

ObstacleProblemSpec box_problem(const ScalarField& phi, const ScalarField& boundary, SolverParams prm = {}) {
    return {phi.grid, phi, ScalarField(phi.grid, 0.0), boundary, prm};
}

ScalarField parabola_1d(const Grid& g) {
    Paraboloid p{0.25, 0.5};
    return sample([&](const Coord& x) { return p(x, 1); }, g);
}

} // namespace

TEST(Solver, OneDimensionalConcaveMajorantOracle) {
    std::mt19937 rng(11);
    for (SolverMethod method : {SolverMethod::multigrid, SolverMethod::psor}) {
        for (int trial = 0; trial < 6; ++trial) {
            Grid g = Grid::box(1, 129, 1.0 / 128, Coord{-0.5});
            ScalarField phi = testutil::random_field(g, rng, -1.0, 0.5);
            ScalarField bd(g, 0.0);
            bd[0] = 0.3;
            bd[128] = -0.2;
            SolverParams prm;
            prm.method = method;
            ComplementaritySolution sol = solve_complementarity(box_problem(phi, bd, prm));
            std::vector<double> y = phi.values;
            y[0] = bd[0];
            y[128] = bd[128];
            std::vector<double> ref = concave_majorant(y);
            for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(sol.u[i], ref[i], 1e-8) << i;
            for (std::size_t i = 1; i + 1 < g.size(); ++i)
                if (ref[i] == y[i] && sol.contact[i]) EXPECT_EQ(sol.u[i], phi[i]);
        }
    }
}

TEST(Solver, TangentLineSolution) {
    const double h = 1.0 / 1024;
    Grid g = Grid::box(1, 2049, h, Coord{-1.0});
    ScalarField phi = parabola_1d(g);
    ComplementaritySolution sol = solve_u0(phi, ScalarField(g, 0.0), {}, 1.0);
    const double a = 1.0 - 1.0 / std::sqrt(2.0);
    auto exact = [&](double x) {
        double r = std::abs(x);
        if (r <= a) return 0.25 - 0.5 * r * r;
        return (0.25 - 0.5 * a * a) - a * (r - a);
    };
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) err = std::max(err, std::abs(sol.u[i] - exact(g.coordinate(i)[0])));
    EXPECT_LT(err / (h * h), 5.0);
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (sol.contact[i]) {
            lo = std::min(lo, g.coordinate(i)[0]);
            hi = std::max(hi, g.coordinate(i)[0]);
        }
    EXPECT_LE(std::abs(lo + a), 2 * h);
    EXPECT_LE(std::abs(hi - a), 2 * h);
}

TEST(Solver, NegativeObstacleGivesZero) {
    Grid g = Grid::box(2, 33, 1.0 / 32);
    ScalarField phi = sample([](const Coord& x) { return -0.1 - x[0] * x[1]; }, g);
    ComplementaritySolution sol = solve_complementarity(box_problem(phi, ScalarField(g, 0.0)));
    EXPECT_LE(sol.u.max_abs(), sol.tolerance);
    EXPECT_TRUE(sol.contact.empty());
}

TEST(Solver, ConstantPeriodicObstacleIsFullContact) {
    Grid t = Grid::unit_torus(2, 16);
    ObstacleProblemSpec spec{t, ScalarField(t, -1.0), ScalarField(t, 0.01), ScalarField(t, 0.0), {}};
    ComplementaritySolution sol = solve_complementarity(spec);
    for (double v : sol.u.values) EXPECT_EQ(v, -1.0);
    EXPECT_TRUE(sol.contact.full());
}

TEST(Solver, SolutionInvariants) {
    Grid g = Grid::box(2, 65, 1.0 / 64, Coord{-0.5, -0.5});
    Paraboloid p{0.04, 0.25};
    ScalarField phi0 = sample([&](const Coord& x) { return p(x, 2); }, g);
    ScalarField psi = make_psi_cell(PsiSpec{PsiFamily::isolated_peak}, 2, 16);
    ScalarField phi = oscillatory_obstacle(phi0, psi, 0.25, 1.0);
    ObstacleProblemSpec spec = box_problem(phi, ScalarField(g, 0.0));
    ComplementaritySolution sol = solve_complementarity(spec);
    const double h2 = g.spacing() * g.spacing();
    ScalarField lap = laplacian_apply(sol.u);
    EXPECT_LE(sol.residual, sol.tolerance);
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        if (g.on_face(idx)) {
            EXPECT_EQ(sol.u[i], 0.0);
            return;
        }
        EXPECT_GE(sol.u[i], phi[i]);
        EXPECT_LE(lap[i], sol.tolerance / h2);
        EXPECT_EQ(sol.contact[i], sol.u[i] == phi[i]);
        if (!sol.contact[i]) EXPECT_LE(std::abs(lap[i]), sol.tolerance / h2);
    });
    ComplementarityDiagnostics d = verify_complementarity(sol, spec);
    EXPECT_TRUE(d.within(sol.tolerance));
}

TEST(Solver, OmegaAndMethodInvariance) {
    Grid g = Grid::box(2, 33, 1.0 / 32, Coord{-0.5, -0.5});
    Paraboloid p{0.04, 0.25};
    ScalarField phi = sample([&](const Coord& x) { return p(x, 2) + 0.01 * std::sin(20 * x[0]); }, g);
    ScalarField bd(g, 0.0);
    std::vector<ComplementaritySolution> sols;
    for (auto [method, omega] : {std::pair{SolverMethod::psor, 1.0}, std::pair{SolverMethod::psor, 1.7},
                                 std::pair{SolverMethod::psor, 1.9}, std::pair{SolverMethod::multigrid, 1.7}}) {
        SolverParams prm;
        prm.method = method;
        prm.omega = omega;
        sols.push_back(solve_complementarity(box_problem(phi, bd, prm)));
    }
    for (std::size_t k = 1; k < sols.size(); ++k)
        for (std::size_t i = 0; i < g.size(); ++i)
            EXPECT_NEAR(sols[k].u[i], sols[0].u[i], 10 * sols[0].tolerance) << k << " " << i;
}

TEST(Solver, MonotoneInObstacle) {
    std::mt19937 rng(5);
    Grid g = Grid::box(2, 33, 1.0 / 32);
    for (int trial = 0; trial < 4; ++trial) {
        ScalarField phi1 = testutil::random_field(g, rng, -0.5, 0.5);
        ScalarField bump = testutil::random_field(g, rng, 0.0, 0.3);
        ScalarField phi2 = phi1 + bump;
        ScalarField bd = testutil::random_field(g, rng, 0.0, 0.2);
        auto u1 = solve_complementarity(box_problem(phi1, bd));
        auto u2 = solve_complementarity(box_problem(phi2, bd));
        for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE(u1.u[i], u2.u[i] + 2 * u2.tolerance);
    }
}

TEST(Solver, MinimalAmongSupersolutions) {
    Grid g = Grid::box(2, 41, 1.0 / 40, Coord{-0.5, -0.5});
    Paraboloid p{0.04, 0.25};
    ScalarField phi = sample([&](const Coord& x) { return p(x, 2) + 0.02 * std::cos(30 * x[1]); }, g);
    ScalarField bd(g, 0.0);
    auto sol = solve_complementarity(box_problem(phi, bd));
    // Concave paraboloids lying above φ and the boundary data are supersolutions.
    for (double b : {0.0, 0.1, 0.25}) {
        double c = 0.0;
        for_each_node(g, [&](const Index& idx, std::size_t i) {
            Coord x = g.coordinate(i);
            double q = b * (x[0] * x[0] + x[1] * x[1]);
            c = std::max(c, phi[i] + q);
            if (g.on_face(idx)) c = std::max(c, bd[i] + q);
        });
        for (std::size_t i = 0; i < g.size(); ++i) {
            Coord x = g.coordinate(i);
            double v = c - b * (x[0] * x[0] + x[1] * x[1]);
            EXPECT_LE(sol.u[i], v + 2 * sol.tolerance);
        }
    }
}

TEST(Solver, PerturbationRaisesResidual) {
    Grid g = Grid::box(2, 33, 1.0 / 32, Coord{-0.5, -0.5});
    Paraboloid p{0.04, 0.25};
    ScalarField phi = sample([&](const Coord& x) { return p(x, 2); }, g);
    ObstacleProblemSpec spec = box_problem(phi, ScalarField(g, 0.0));
    auto sol = solve_complementarity(spec);
    const std::size_t node = g.flat(Index{3, 16, 0});
    ASSERT_FALSE(sol.contact[node]);
    const double delta = 1e-6, h = g.spacing();
    sol.u[node] += delta;
    auto d = verify_complementarity(sol, spec);
    EXPECT_GE(d.raw_residual, delta * 4 / (h * h) - sol.tolerance);
    EXPECT_FALSE(d.within(sol.tolerance));
}

TEST(Solver, FullContactWithSuperharmonicObstacle) {
    Grid t = Grid::unit_torus(2, 16);
    ScalarField psi = make_psi_cell(PsiSpec{PsiFamily::laminar}, 2, 16);
    ObstacleProblemSpec spec{t, psi, ScalarField(t, 1e3), ScalarField(t, 0.0), {}};
    ComplementaritySolution sol;
    sol.u = psi;
    sol.contact = CellMask(t, true);
    auto d = verify_complementarity(sol, spec);
    EXPECT_EQ(d.residual, 0.0);
    EXPECT_EQ(d.obstacle_violation, 0.0);
    EXPECT_EQ(d.supersolution_violation, 0.0);
}

TEST(Solver, PeriodicFeasibilityGuards) {
    Grid t = Grid::unit_torus(1, 16);
    ScalarField psi = make_psi_cell(PsiSpec{PsiFamily::laminar}, 1, 16);
    ObstacleProblemSpec spec{t, psi, ScalarField(t, 0.0), ScalarField(t, 0.0), {}};
    EXPECT_OBSHOM_ERROR(solve_complementarity(spec), ErrorKind::infeasible);
    spec.rhs_bound = ScalarField(t, -1.0);
    EXPECT_OBSHOM_ERROR(solve_complementarity(spec), ErrorKind::infeasible);
}

TEST(Solver, SweepCapReportsResidual) {
    Grid g = Grid::box(1, 129, 1.0 / 128, Coord{-1.0});
    SolverParams prm;
    prm.method = SolverMethod::psor;
    prm.max_sweeps = 5;
    try {
        solve_complementarity(box_problem(parabola_1d(g), ScalarField(g, 0.0), prm));
        FAIL() << "expected non-convergence";
    } catch (const NonConvergenceError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::non_convergence);
        EXPECT_GT(e.last_residual(), 0.0);
        EXPECT_EQ(e.sweeps(), 5u);
    }
}

TEST(Solver, RejectsBadParameters) {
    Grid g = Grid::box(1, 17, 1.0 / 16);
    SolverParams prm;
    prm.omega = 2.0;
    EXPECT_OBSHOM_ERROR(solve_complementarity(box_problem(ScalarField(g, -1.0), ScalarField(g, 0.0), prm)),
                        ErrorKind::domain);
}

TEST(Solver, ConvergenceLogRecordsSweeps) {
    Grid g = Grid::box(1, 65, 1.0 / 32, Coord{-1.0});
    SolverParams prm;
    prm.record_log = true;
    auto sol = solve_complementarity(box_problem(parabola_1d(g), ScalarField(g, 0.0), prm));
    ASSERT_FALSE(sol.log.empty());
    EXPECT_EQ(sol.log.back().sweep, sol.sweeps_used);
    EXPECT_EQ(sol.log.back().active, sol.contact.count());
    auto j = convergence_log_json(sol);
    EXPECT_EQ(j["log"].size(), sol.log.size());
}

TEST(SolveU0, EllipticityViolationNamesNode) {
    Grid g = Grid::box(1, 17, 1.0 / 8, Coord{-1.0});
    ScalarField phi = sample([](const Coord& x) { return x[0] < 0.3 ? 0.25 - 0.5 * x[0] * x[0] : 0.205 - 0.3 * x[0]; }, g);
    try {
        solve_u0(phi, ScalarField(g, 0.0), {}, 1.0);
        FAIL() << "expected ellipticity error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ellipticity);
        EXPECT_NE(std::string(e.what()).find("node"), std::string::npos);
    }
}

TEST(SolveU0, RequiresSignConditions) {
    Grid g = Grid::box(1, 17, 1.0 / 8, Coord{-1.0});
    ScalarField high = sample([](const Coord& x) { return 1.0 - 0.5 * x[0] * x[0]; }, g);
    EXPECT_OBSHOM_ERROR(solve_u0(high, ScalarField(g, 0.0), {}, 1.0), ErrorKind::domain);
    ScalarField low = sample([](const Coord& x) { return -0.6 - 0.5 * x[0] * x[0]; }, g);
    EXPECT_OBSHOM_ERROR(solve_u0(low, ScalarField(g, 0.0), {}, 1.0), ErrorKind::domain);
}

TEST(SolveU0, MatchesGenericSolveInOneDimension) {
    Grid g = Grid::box(1, 1025, 1.0 / 512, Coord{-1.0});
    ScalarField phi = parabola_1d(g);
    auto a = solve_u0(phi, ScalarField(g, 0.0), {}, 1.0);
    auto b = solve_complementarity(box_problem(phi, ScalarField(g, 0.0)));
    EXPECT_EQ(a.u.values, b.u.values);
    EXPECT_EQ(a.contact, b.contact);
}

TEST(SolveU0, RadialContactSetIsABall) {
    const double h = 1.0 / 256;
    Grid g = Grid::box(2, 257, h, Coord{-0.5, -0.5});
    Paraboloid p{0.04, 0.25};
    RadialSolution rad(p, 2, 0.5);
    ScalarField phi = sample([&](const Coord& x) { return p(x, 2); }, g);
    ScalarField bd = sample([&](const Coord& x) { return rad(x); }, g);
    auto sol = solve_u0(phi, bd, {}, 1.0);
    const double a = rad.contact_radius();
    for_each_node(g, [&](const Index&, std::size_t i) {
        Coord x = g.coordinate(i);
        double r = std::hypot(x[0], x[1]);
        if (r < a - 2 * h) EXPECT_TRUE(sol.contact[i]) << r;
        if (r > a + 2 * h) EXPECT_FALSE(sol.contact[i]) << r;
        EXPECT_NEAR(sol.u[i], rad(x), 20 * h * h);
    });
}

TEST(SolveUeps, ZeroPsiReproducesU0Bitwise) {
    Grid g = Grid::box(1, 513, 1.0 / 256, Coord{-1.0});
    ScalarField phi = parabola_1d(g);
    ScalarField zero_cell = make_psi_cell(PsiSpec{PsiFamily::constant, 0.0}, 1, 32);
    auto u0 = solve_u0(phi, ScalarField(g, 0.0), {}, 1.0);
    auto ue = solve_ueps(phi, zero_cell, 0.125, 1.0, ScalarField(g, 0.0), {}, 1.0);
    EXPECT_EQ(u0.u.values, ue.u.values);
    EXPECT_EQ(u0.sweeps_used, ue.sweeps_used);
    auto hf = height_fields(u0, ue, phi);
    EXPECT_EQ(hf.w0.values, hf.weps.values);
    for (double v : hf.w0.values) EXPECT_GE(v, 0.0);
}

TEST(SolveUeps, NegligibleAmplitudeMatchesU0) {
    Grid g = Grid::box(1, 513, 1.0 / 256, Coord{-1.0});
    ScalarField phi = parabola_1d(g);
    ScalarField cell = make_psi_cell(PsiSpec{PsiFamily::laminar}, 1, 32);
    auto u0 = solve_u0(phi, ScalarField(g, 0.0), {}, 1.0);
    auto ue = solve_ueps(phi, cell, 0.125, 20.0, ScalarField(g, 0.0), {}, 1.0);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE(std::abs(ue.u[i] - u0.u[i]), 2 * u0.tolerance);
}

TEST(SolveUeps, ValidatesInputs) {
    Grid g = Grid::box(1, 513, 1.0 / 256, Coord{-1.0});
    ScalarField phi = parabola_1d(g);
    ScalarField cell = make_psi_cell(PsiSpec{PsiFamily::laminar}, 1, 32);
    EXPECT_OBSHOM_ERROR(solve_ueps(phi, cell, 0.1, 1.0, ScalarField(g, 0.0), {}, 1.0), ErrorKind::resolution);
    EXPECT_OBSHOM_ERROR(solve_ueps(phi, cell, 0.0625, 1.0, ScalarField(g, 0.0), {}, 1.0), ErrorKind::resolution);
    ScalarField bad = ScalarField(cell.grid, 0.5);
    EXPECT_OBSHOM_ERROR(solve_ueps(phi, bad, 0.125, 1.0, ScalarField(g, 0.0), {}, 1.0), ErrorKind::obstacle_range);
}

TEST(SolveUeps, ContactIslandsAndCorrectedObstacle) {
    const double h = 1.0 / 4096, eps = 1.0 / 32;
    Grid g = Grid::box(1, 8193, h, Coord{-1.0});
    ScalarField phi = parabola_1d(g);
    const std::size_t m = cell_nodes(eps, h);
    ScalarField cell = make_psi_cell(PsiSpec{PsiFamily::laminar}, 1, m);
    auto u0 = solve_u0(phi, ScalarField(g, 0.0), {}, 1.0);
    auto ue = solve_ueps(phi, cell, eps, 1.0, ScalarField(g, 0.0), {}, 1.0);
    const double a = 1.0 - 1.0 / std::sqrt(2.0);
    std::size_t islands = 0;
    for (std::size_t i = 1; i < g.size(); ++i) {
        if (ue.contact[i] && !ue.contact[i - 1]) ++islands;
        // islands sit at peaks of ψ(x/ε), i.e. near multiples of ε
        if (ue.contact[i]) {
            double x = g.coordinate(i)[0];
            EXPECT_LE(std::abs(x), a + 2 * h);
            EXPECT_LE(std::abs(x / eps - std::round(x / eps)), 0.25);
        }
    }
    EXPECT_GT(islands, 10u);
    LengthScaleParams lp{1.0, 1.0, m};
    CorrectorRecord chi = solve_corrector(cell, corrector_mu(eps, lp));
    ScalarField weps = ue.u - phi;
    ScalarField ext = periodic_extend(chi.chi, g, eps);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_GE(weps[i], eps * ext[i] - 4 * h * h) << i;
}
