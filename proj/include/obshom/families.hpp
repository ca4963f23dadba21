#pragma once

// Test obstacles: the paraboloid background obstacle with its radially
// symmetric exact solution, and the periodic cell profiles ψ.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include "obshom/grid.hpp"

namespace obshom {

/// φ0(x) = c - b|x|^2, so -Δφ0 = 2 n b.
struct Paraboloid {
    double c = 0.25;
    double b = 0.5;

    double operator()(const Coord& x, int dim) const {
        double r2 = 0.0;
        for (int d = 0; d < dim; ++d) r2 += x[d] * x[d];
        return c - b * r2;
    }
    double minus_laplacian(int dim) const { return 2.0 * dim * b; }
};

/**
 * Radially symmetric solution of the obstacle problem above a paraboloid on
 * the ball of radius R with zero data on its boundary.  Inside the contact
 * radius a it equals φ0; outside it is the radial harmonic function matching
 * φ0 to first order at a (a line in 1D, A log r + B in 2D, A/r + B in 3D).
 * Evaluated beyond R it is the harmonic continuation, which is how it serves
 * as exact boundary data on a box.
 */
class RadialSolution {
public:
    RadialSolution(Paraboloid phi, int dim, double outer_radius)
        : phi_(phi), dim_(dim), R_(outer_radius) {
        if (!(phi.c > 0 && phi.b > 0 && phi.c < phi.b * R_ * R_))
            throw Error(ErrorKind::domain, "radial solution needs 0 < c < b R^2");
        // u(R) as a function of the contact radius is positive at a = 0 and
        // negative where φ0(a) = 0; bisect for the root.
        double lo = 0.0, hi = std::sqrt(phi.c / phi.b);
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (lo + hi);
            (value_at_R(mid) > 0.0 ? lo : hi) = mid;
        }
        a_ = 0.5 * (lo + hi);
    }

    double contact_radius() const { return a_; }

    double operator()(double r) const {
        if (r <= a_) return phi_.c - phi_.b * r * r;
        return harmonic(a_, r);
    }
    double operator()(const Coord& x) const {
        double r2 = 0.0;
        for (int d = 0; d < dim_; ++d) r2 += x[d] * x[d];
        return (*this)(std::sqrt(r2));
    }

private:
    double harmonic(double a, double r) const {
        const double va = phi_.c - phi_.b * a * a;
        const double slope = -2.0 * phi_.b * a;
        switch (dim_) {
            case 1: return va + slope * (r - a);
            case 2: return a > 0 ? va + slope * a * std::log(r / a) : va;
            default: return a > 0 ? va + slope * a * a * (1.0 / a - 1.0 / r) : va;
        }
    }
    double value_at_R(double a) const { return harmonic(a, R_); }

    Paraboloid phi_;
    int dim_;
    double R_;
    double a_ = 0.0;
};

enum class PsiFamily { laminar, isolated_peak, product, cusp, constant };

struct PsiSpec {
    PsiFamily family = PsiFamily::laminar;
    double value = 0.0;     // constant family
    double exponent = 1.0;  // cusp family

    /// ψ at cell coordinate y; y is reduced mod 1 first, so sampling is exactly periodic.
    double operator()(const Coord& y, int dim) const {
        constexpr double pi = std::numbers::pi;
        Coord t{};
        for (int d = 0; d < dim; ++d) t[d] = y[d] - std::floor(y[d]);
        auto s2 = [&](double v) { double s = std::sin(pi * v); return s * s; };
        switch (family) {
            case PsiFamily::laminar: return -s2(t[0]);
            case PsiFamily::isolated_peak: {
                double acc = 0.0;
                for (int d = 0; d < dim; ++d) acc += s2(t[d]);
                return -acc / dim;
            }
            case PsiFamily::product: {
                double acc = 1.0;
                for (int d = 0; d < dim; ++d) acc *= s2(t[d]);
                return -acc;
            }
            case PsiFamily::cusp: {
                double r2 = 0.0;
                for (int d = 0; d < dim; ++d) {
                    double q = std::min(t[d], 1.0 - t[d]);
                    r2 += q * q;
                }
                return -std::min(1.0, std::pow(std::sqrt(r2), exponent));
            }
            case PsiFamily::constant: return value;
        }
        return 0.0;
    }
};

inline PsiFamily psi_family_from_string(const std::string& s) {
    if (s == "laminar") return PsiFamily::laminar;
    if (s == "isolated-peak") return PsiFamily::isolated_peak;
    if (s == "product") return PsiFamily::product;
    if (s == "cusp") return PsiFamily::cusp;
    if (s == "constant") return PsiFamily::constant;
    throw Error(ErrorKind::config, "unknown psi family '" + s + "'");
}

inline const char* to_string(PsiFamily f) {
    switch (f) {
        case PsiFamily::laminar: return "laminar";
        case PsiFamily::isolated_peak: return "isolated-peak";
        case PsiFamily::product: return "product";
        case PsiFamily::cusp: return "cusp";
        case PsiFamily::constant: return "constant";
    }
    return "?";
}

/// ψ sampled on the unit torus with `n` nodes per axis.
inline ScalarField make_psi_cell(const PsiSpec& psi, int dim, std::size_t n) {
    Grid cell = Grid::unit_torus(dim, n);
    return sample([&](const Coord& y) { return psi(y, dim); }, cell);
}

/// Number of cell nodes per period, ε/h, if it is an integer; throws otherwise.
inline std::size_t cell_nodes(double eps, double h) {
    double m = eps / h;
    double r = std::round(m);
    if (r < 1 || std::abs(m - r) > 1e-9 * std::max(1.0, m))
        throw Error(ErrorKind::resolution, "eps/h = " + std::to_string(m) + " is not an integer");
    return static_cast<std::size_t>(r);
}

/**
 * Periodic extension v(x) = cell(x/ε) onto a box grid.  The domain grid must
 * satisfy ε/h = cell extent and have its origin on the h-lattice, so the
 * extension copies cell values by index and is exactly ε-periodic.
 */
inline ScalarField periodic_extend(const ScalarField& cell, const Grid& domain, double eps) {
    if (!cell.grid.periodic() || cell.grid.dim() != domain.dim())
        throw Error(ErrorKind::grid_mismatch, "periodic extension needs a torus cell of the domain's dimension");
    const std::size_t m = cell_nodes(eps, domain.spacing());
    if (m != cell.grid.extent(0))
        throw Error(ErrorKind::resolution, "cell has " + std::to_string(cell.grid.extent(0)) +
                                               " nodes per period but eps/h = " + std::to_string(m));
    std::array<long, max_dim> shift{};
    for (int d = 0; d < domain.dim(); ++d) {
        double o = domain.origin()[d] / domain.spacing();
        double r = std::round(o);
        if (std::abs(o - r) > 1e-9 * std::max(1.0, std::abs(o)))
            throw Error(ErrorKind::resolution, "domain origin is not on the h-lattice");
        long ml = static_cast<long>(m);
        shift[d] = ((static_cast<long>(r) % ml) + ml) % ml;
    }
    ScalarField out(domain);
    for_each_node(domain, [&](const Index& idx, std::size_t flat) {
        Index c{};
        for (int d = 0; d < domain.dim(); ++d)
            c[d] = static_cast<std::size_t>((static_cast<long>(idx[d]) + shift[d]) % static_cast<long>(m));
        out[flat] = cell[cell.grid.flat(c)];
    });
    return out;
}

} // namespace obshom
