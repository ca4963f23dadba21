#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "obshom/families.hpp"
#include "obshom/log.hpp"
#include "obshom/parallel.hpp"
#include "obshom/solver.hpp"

namespace obshom {

/// Periodic corrector χ_μ on the unit torus and the quantities derived from it.
struct CorrectorRecord {
    double mu = 0.0;
    ScalarField chi;
    double height = 0.0;  // 𝓔(μ) = -min χ_μ
    double energy = 0.0;  // h^{n-2} Σ_edges (forward difference)^2
    double active_fraction = 0.0;
    std::size_t sweeps = 0;
    double residual = 0.0;
    double tolerance = 0.0;
    ComplementarityDiagnostics diagnostics;
};

/// Solves min{μ - Δ_h χ, χ - ψ} = 0 on the torus cell of `psi`.
inline CorrectorRecord solve_corrector(const ScalarField& psi, double mu, const SolverParams& params = {}) {
    if (!(mu > 0.0) || !std::isfinite(mu)) throw Error(ErrorKind::domain, "corrector needs mu > 0");
    check_psi_cell(psi);
    ObstacleProblemSpec spec{psi.grid, psi, ScalarField(psi.grid, mu), ScalarField(psi.grid, 0.0), params};
    ComplementaritySolution sol = solve_complementarity(spec);
    CorrectorRecord rec;
    rec.mu = mu;
    rec.chi = std::move(sol.u);
    rec.height = -rec.chi.min();
    rec.energy = dirichlet_energy(rec.chi);
    rec.active_fraction = static_cast<double>(sol.contact.count()) / static_cast<double>(psi.size());
    rec.sweeps = sol.sweeps_used;
    rec.residual = sol.residual;
    rec.tolerance = sol.tolerance;
    sol.u = rec.chi;
    rec.diagnostics = verify_complementarity(sol, spec);
    return rec;
}

struct EnergyReport {
    double energy_edges = 0.0;  // forward-difference Dirichlet energy
    double energy_sbp = 0.0;    // h^n Σ (-χ)(Δ_h χ): the same quantity by summation by parts
    double bound = 0.0;         // μ 𝓔(μ) (1 + 1e-8) + slack
    double slack = 0.0;         // h^n Σ (-χ)(Δ_h χ - μ)_+ plus roundoff
    double ratio = 0.0;         // energy / (μ 𝓔)
    bool holds = false;
};

/// Checks ∫|∇χ|² ≤ μ 𝓔(μ) for the discrete corrector.
inline EnergyReport energy_check(const CorrectorRecord& rec, double mu) {
    const ScalarField& chi = rec.chi;
    ScalarField lap = laplacian_apply(chi);
    const double vol = std::pow(chi.grid.spacing(), chi.grid.dim());
    EnergyReport r;
    r.energy_edges = dirichlet_energy(chi);
    double sbp = 0.0, over = 0.0, mag = 0.0;
    for (std::size_t i = 0; i < chi.size(); ++i) {
        sbp += (-chi[i]) * lap[i];
        over += (-chi[i]) * std::max(0.0, lap[i] - mu);
        mag += std::abs(chi[i] * lap[i]);
    }
    r.energy_sbp = sbp * vol;
    r.slack = over * vol + 64.0 * std::numeric_limits<double>::epsilon() * mag * vol;
    r.bound = mu * rec.height * (1.0 + 1e-8) + r.slack;
    r.ratio = (mu * rec.height > 0.0) ? r.energy_edges / (mu * rec.height) : 0.0;
    r.holds = r.energy_edges <= r.bound && r.energy_sbp <= r.bound;
    return r;
}

/// Ordinary least squares y = a + b x.
struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
};

inline LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    return f;
}

struct RateFit {
    std::vector<std::pair<double, double>> samples;  // (μ, 𝓔(μ)) used in the fit, μ descending
    double slope = 0.0;                               // 𝓔 ~ μ^slope
    double log_corrected_slope = 0.0;                 // 𝓔/(1+|log μ|) ~ μ^slope
    double fit_residual = 0.0;                        // max |𝓔 / fit - 1|
    std::pair<double, double> window{0.0, 0.0};       // [μ_min, μ_max] of the fit
    std::vector<double> discarded;                    // μ dropped as pre-asymptotic
    std::vector<double> excluded;                     // μ whose solve failed
    bool monotone = true;                             // 𝓔 non-increasing as μ decreases (within 4 tol)
    std::vector<CorrectorRecord> records;
};

/// Fits the decay exponents of 𝓔(μ) from (μ, 𝓔) pairs sorted by descending μ.
inline RateFit fit_rates(std::vector<std::pair<double, double>> samples) {
    std::erase_if(samples, [](const auto& s) { return !(s.second > 0.0); });
    if (samples.size() < 4) throw Error(ErrorKind::fit, "need at least 4 samples with positive height");
    RateFit fit;
    auto do_fit = [](const std::vector<std::pair<double, double>>& s, bool corrected) {
        std::vector<double> x, y;
        for (auto [mu, e] : s) {
            x.push_back(std::log(mu));
            y.push_back(std::log(corrected ? e / (1.0 + std::abs(std::log(mu))) : e));
        }
        return least_squares(x, y);
    };
    LineFit raw = do_fit(samples, false);
    std::vector<double> res;
    for (auto [mu, e] : samples) res.push_back(std::abs(std::log(e) - (raw.intercept + raw.slope * std::log(mu))));
    std::vector<double> sorted = res;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median = sorted[sorted.size() / 2];
    if (samples.size() > 4 && res.front() > 3.0 * median) {
        log::info("rate fit: discarding mu=" + std::to_string(samples.front().first) +
                  " (residual " + std::to_string(res.front()) + " > 3x median " + std::to_string(median) + ")");
        fit.discarded.push_back(samples.front().first);
        samples.erase(samples.begin());
        raw = do_fit(samples, false);
    }
    LineFit corrected = do_fit(samples, true);
    fit.samples = samples;
    fit.slope = raw.slope;
    fit.log_corrected_slope = corrected.slope;
    for (auto [mu, e] : samples)
        fit.fit_residual = std::max(fit.fit_residual, std::abs(e / std::exp(raw.intercept + raw.slope * std::log(mu)) - 1.0));
    fit.window = {samples.back().first, samples.front().first};
    return fit;
}

/// Solves the corrector for each μ (descending, ≥ 2 decades) and fits the decay rates.
inline RateFit emu_sweep(const ScalarField& psi, const std::vector<double>& mu_list, const SolverParams& params = {},
                         std::size_t threads = 1) {
    if (mu_list.size() < 4) throw Error(ErrorKind::fit, "mu list needs at least 4 entries");
    for (std::size_t i = 0; i < mu_list.size(); ++i) {
        if (!(mu_list[i] > 0.0)) throw Error(ErrorKind::domain, "mu values must be positive");
        if (i > 0 && !(mu_list[i] < mu_list[i - 1])) throw Error(ErrorKind::domain, "mu list must be strictly descending");
    }
    if (mu_list.front() / mu_list.back() < 100.0 * (1.0 - 1e-12))
        throw Error(ErrorKind::domain, "mu list must span at least two decades");

    std::vector<std::optional<CorrectorRecord>> slots(mu_list.size());
    parallel_for(mu_list.size(), threads, [&](std::size_t i) {
        try {
            slots[i] = solve_corrector(psi, mu_list[i], params);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::non_convergence) throw;
            log::warn("corrector at mu=" + std::to_string(mu_list[i]) + " excluded: " + e.what());
        }
    });

    std::vector<std::pair<double, double>> samples;
    std::vector<CorrectorRecord> records;
    std::vector<double> excluded;
    bool monotone = true;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i]) {
            excluded.push_back(mu_list[i]);
            continue;
        }
        if (!records.empty()) {
            const auto& prev = records.back();
            if (slots[i]->height > prev.height + 4.0 * std::max(prev.tolerance, slots[i]->tolerance)) {
                monotone = false;
                log::warn("height increased from mu=" + std::to_string(prev.mu) + " to mu=" + std::to_string(slots[i]->mu));
            }
        }
        samples.emplace_back(slots[i]->mu, slots[i]->height);
        records.push_back(std::move(*slots[i]));
    }
    RateFit fit = fit_rates(samples);
    fit.excluded = std::move(excluded);
    fit.monotone = monotone;
    fit.records = std::move(records);
    return fit;
}

/// Parameters of the minimal length scale r(ε) = (ε^p 𝓔(λ^{-1} ε^{2-p}))^{1/2}.
struct LengthScaleParams {
    double p = 1.0;
    double lambda = 1.0;
    std::size_t cell_resolution = 1024;
};

/// μ = λ^{-1} ε^{2-p}, the corrector parameter matching the ε-problem.
inline double corrector_mu(double eps, const LengthScaleParams& prm) {
    if (!(eps > 0.0 && eps <= 1.0)) throw Error(ErrorKind::domain, "eps must lie in (0,1]");
    if (!(prm.lambda > 0.0 && prm.lambda <= 1.0)) throw Error(ErrorKind::domain, "lambda must lie in (0,1]");
    return std::pow(eps, 2.0 - prm.p) / prm.lambda;
}

inline double length_scale_from_height(double eps, double p, double height) {
    return std::sqrt(std::pow(eps, p) * height);
}

/**
 * Cached 𝓔(μ) samples with monotone piecewise-linear interpolation in
 * log-log coordinates (linear in 𝓔 when a bracketing height is zero).
 */
class EmuTable {
public:
    explicit EmuTable(std::vector<std::pair<double, double>> samples) : s_(std::move(samples)) {
        std::sort(s_.begin(), s_.end());
        if (s_.size() < 2) throw Error(ErrorKind::range, "height table needs two samples");
        for (std::size_t i = 1; i < s_.size(); ++i) {
            if (!(s_[i].first > s_[i - 1].first)) throw Error(ErrorKind::range, "height table has duplicate mu");
            if (s_[i].second < s_[i - 1].second) throw Error(ErrorKind::range, "height table is not monotone in mu");
        }
    }

    explicit EmuTable(const RateFit& fit) : EmuTable(from_records(fit)) {}

    double mu_min() const { return s_.front().first; }
    double mu_max() const { return s_.back().first; }

    double operator()(double mu) const {
        const double rel = 1e-12;
        if (mu < mu_min() * (1 - rel) || mu > mu_max() * (1 + rel))
            throw Error(ErrorKind::range, "mu = " + std::to_string(mu) + " outside cached range [" +
                                              std::to_string(mu_min()) + ", " + std::to_string(mu_max()) + "]");
        mu = std::clamp(mu, mu_min(), mu_max());
        auto it = std::lower_bound(s_.begin(), s_.end(), std::make_pair(mu, -1.0));
        if (it == s_.begin()) return it->second;
        if (it->first == mu) return it->second;
        auto lo = *(it - 1), hi = *it;
        if (lo.second > 0.0 && hi.second > 0.0) {
            double t = (std::log(mu) - std::log(lo.first)) / (std::log(hi.first) - std::log(lo.first));
            return std::exp(std::log(lo.second) + t * (std::log(hi.second) - std::log(lo.second)));
        }
        double t = (mu - lo.first) / (hi.first - lo.first);
        return lo.second + t * (hi.second - lo.second);
    }

private:
    static std::vector<std::pair<double, double>> from_records(const RateFit& fit) {
        std::vector<std::pair<double, double>> v;
        for (const auto& r : fit.records) v.emplace_back(r.mu, r.height);
        return v;
    }
    std::vector<std::pair<double, double>> s_;
};

/// r(ε) from a cached height table.
inline double min_length_scale(double eps, const LengthScaleParams& prm, const EmuTable& table) {
    return length_scale_from_height(eps, prm.p, table(corrector_mu(eps, prm)));
}

/// r(ε) by a direct corrector solve at `prm.cell_resolution` nodes per cell axis.
inline double min_length_scale(double eps, const LengthScaleParams& prm, const PsiSpec& psi, int dim,
                               const SolverParams& solver = {}) {
    double mu = corrector_mu(eps, prm);
    if (!(mu >= 1e-12 && mu <= 1e12)) throw Error(ErrorKind::range, "mu = " + std::to_string(mu) + " outside solvable range");
    ScalarField cell = make_psi_cell(psi, dim, prm.cell_resolution);
    return length_scale_from_height(eps, prm.p, solve_corrector(cell, mu, solver).height);
}

/// Requires r(ε) to decrease along a decreasing ε list.
inline void check_length_scale_decay(const std::vector<double>& eps, const std::vector<double>& r) {
    for (std::size_t i = 1; i < eps.size(); ++i)
        if (eps[i] < eps[i - 1] && !(r[i] < r[i - 1]))
            throw Error(ErrorKind::domain, "r(eps) does not decay over the eps range: p too small for this ψ");
}

} // namespace obshom
