#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "obshom/error.hpp"
#include "obshom/grid.hpp"
#include "obshom/log.hpp"

namespace obshom {

/// Mask nodes with a face neighbour outside the mask, restricted to interior nodes.
inline CellMask free_boundary(const CellMask& mask) {
    if (mask.empty()) throw Error(ErrorKind::degenerate_set, "free boundary of an empty set");
    if (mask.full()) throw Error(ErrorKind::degenerate_set, "free boundary of the full grid");
    const Grid& g = mask.grid;
    CellMask out(g);
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        if (!mask[i] || g.on_face(idx)) return;
        for (int d = 0; d < g.dim(); ++d)
            for (int dir : {-1, 1}) {
                auto j = g.neighbor(idx, d, dir);
                if (j && !mask[*j]) {
                    out.set(i);
                    return;
                }
            }
    });
    return out;
}

/// Side length 4 (2n/λ)^{1/2} r of the bulk lattice cubes.
inline double bulk_cube_side(int dim, double r_eps, double lambda) {
    return 4.0 * std::sqrt(2.0 * dim / lambda) * r_eps;
}

/// Partition of the grid nodes into cubes of side ℓ anchored at `anchor`.
struct BulkLattice {
    double cube_side = 0.0;
    Coord anchor{};
    std::vector<std::size_t> cube_index;  // per node, a flat id of its cube
    std::size_t cube_count = 0;
};

inline BulkLattice make_lattice(const Grid& g, double cube_side, const Coord& anchor) {
    if (!(cube_side >= 2.0 * g.spacing()))
        throw Error(ErrorKind::resolution, "bulk cube side " + std::to_string(cube_side) + " is below 2h = " +
                                               std::to_string(2.0 * g.spacing()));
    BulkLattice L;
    L.cube_side = cube_side;
    L.anchor = anchor;
    std::array<long, max_dim> lo{}, span{};
    for (int d = 0; d < max_dim; ++d) {
        if (d >= g.dim()) { span[d] = 1; continue; }
        long a = static_cast<long>(std::floor((g.origin()[d] - anchor[d]) / cube_side));
        long b = static_cast<long>(std::floor((g.upper()[d] - anchor[d]) / cube_side));
        lo[d] = a;
        span[d] = b - a + 2;
    }
    L.cube_count = static_cast<std::size_t>(span[0] * span[1] * span[2]);
    L.cube_index.resize(g.size());
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        Coord x = g.coordinate(idx);
        std::size_t id = 0;
        for (int d = 0; d < max_dim; ++d) {
            long c = 0;
            if (d < g.dim()) c = static_cast<long>(std::floor((x[d] - anchor[d]) / cube_side)) - lo[d];
            id = id * static_cast<std::size_t>(span[d]) + static_cast<std::size_t>(c);
        }
        L.cube_index[i] = id;
    });
    return L;
}

struct BulkContact {
    CellMask mask;
    BulkLattice lattice;
};

/// Union of the lattice cubes that contain at least one contact node.
inline BulkContact bulk_contact_set(const CellMask& contact, double r_eps, double lambda,
                                    std::optional<Coord> anchor = std::nullopt) {
    if (!(r_eps > 0.0)) throw Error(ErrorKind::domain, "bulk contact set needs r_eps > 0");
    const Grid& g = contact.grid;
    BulkContact out{CellMask(g), make_lattice(g, bulk_cube_side(g.dim(), r_eps, lambda), anchor.value_or(g.origin()))};
    std::vector<std::uint8_t> hit(out.lattice.cube_count, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
        if (contact[i]) hit[out.lattice.cube_index[i]] = 1;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (hit[out.lattice.cube_index[i]]) out.mask.set(i);
    return out;
}

inline CellMask bulk_free_boundary(const CellMask& bulk) { return free_boundary(bulk); }

/// Exact Euclidean distance to a node set; `sq` holds squared distances in units of h^2.
struct DistanceField {
    Grid grid;
    std::vector<std::int64_t> sq;

    double operator[](std::size_t i) const {
        return sq[i] == unreachable ? std::numeric_limits<double>::infinity()
                                    : std::sqrt(static_cast<double>(sq[i])) * grid.spacing();
    }
    ScalarField dist() const {
        ScalarField f(grid);
        for (std::size_t i = 0; i < sq.size(); ++i) f[i] = (*this)[i];
        return f;
    }

    static constexpr std::int64_t unreachable = std::numeric_limits<std::int64_t>::max();
};

namespace detail {

// Lower envelope of parabolas (q - v)^2 + f(v) over the finite entries of f.
inline void edt_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& out, std::vector<long>& v,
                   std::vector<double>& z) {
    const long n = static_cast<long>(f.size());
    constexpr auto inf = DistanceField::unreachable;
    v.assign(f.size(), 0);
    z.assign(f.size() + 1, 0.0);
    long k = -1;
    auto meet = [&](long q, long p) {
        double num = static_cast<double>(f[q] + q * q) - static_cast<double>(f[p] + p * p);
        return num / static_cast<double>(2 * (q - p));
    };
    for (long q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -std::numeric_limits<double>::infinity();
            z[1] = std::numeric_limits<double>::infinity();
            continue;
        }
        double s = meet(q, v[k]);
        while (s <= z[k]) {
            --k;
            if (k < 0) break;
            s = meet(q, v[k]);
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -std::numeric_limits<double>::infinity();
        } else {
            ++k;
            v[k] = q;
            z[k] = s;
        }
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), inf);
        return;
    }
    long j = 0;
    for (long q = 0; q < n; ++q) {
        while (z[j + 1] < static_cast<double>(q)) ++j;
        long dq = q - v[j];
        out[q] = dq * dq + f[v[j]];
    }
}

} // namespace detail

/// Separable exact Euclidean distance transform (box metric, no wrapping).
inline DistanceField distance_transform(const CellMask& set) {
    if (set.empty()) throw Error(ErrorKind::degenerate_set, "distance to an empty set");
    const Grid& g = set.grid;
    if (g.periodic()) throw Error(ErrorKind::invalid_grid, "distance transform supports box grids only");
    DistanceField df{g, std::vector<std::int64_t>(g.size(), DistanceField::unreachable)};
    for (std::size_t i = 0; i < g.size(); ++i)
        if (set[i]) df.sq[i] = 0;
    std::vector<std::int64_t> line, res;
    std::vector<long> v;
    std::vector<double> z;
    for (int axis = 0; axis < g.dim(); ++axis) {
        const std::size_t n = g.extent(axis), stride = g.stride(axis);
        line.resize(n);
        res.resize(n);
        for (std::size_t base = 0; base < g.size(); ++base) {
            if ((base / stride) % n != 0) continue;  // first node of a line along `axis`
            for (std::size_t q = 0; q < n; ++q) line[q] = df.sq[base + q * stride];
            detail::edt_1d(line, res, v, z);
            for (std::size_t q = 0; q < n; ++q) df.sq[base + q * stride] = res[q];
        }
    }
    return df;
}

/// Symmetric Hausdorff distance between two node sets on the same grid.
inline double hausdorff_distance(const CellMask& a, const CellMask& b) {
    require_same_grid(a.grid, b.grid, "hausdorff_distance");
    if (a.empty() || b.empty()) throw Error(ErrorKind::degenerate_set, "Hausdorff distance of an empty set");
    DistanceField da = distance_transform(a), db = distance_transform(b);
    std::int64_t worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i]) worst = std::max(worst, db.sq[i]);
        if (b[i]) worst = std::max(worst, da.sq[i]);
    }
    return std::sqrt(static_cast<double>(worst)) * a.grid.spacing();
}

// ---------------------------------------------------------------------------
// Ball probes

struct ProbePoint {
    Coord center{};
    double r = 0.0;
    double lhs = 0.0;  // sup of w over the ball
    double rhs = 0.0;  // required lower bound, slack included
    double margin = 0.0;
};

struct ProbeReport {
    std::vector<ProbePoint> points;
    std::size_t admissible_centers = 0;
    std::size_t stride = 1;
    double worst_margin = std::numeric_limits<double>::infinity();
    std::size_t violations = 0;
    double slack_constant = 0.0;  // C_d in the slack C_d h r

    bool ok() const { return violations == 0; }
};

inline nlohmann::json probe_points_json(const ProbeReport& rep, int dim) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : rep.points) {
        std::vector<double> c(p.center.begin(), p.center.begin() + dim);
        arr.push_back({{"center", c}, {"r", p.r}, {"lhs", p.lhs}, {"rhs", p.rhs}, {"margin", p.margin}});
    }
    return arr;
}

struct ProbeOptions {
    std::size_t stride = 0;          // 0: chosen so that about `target_centers` centers are probed
    std::size_t target_centers = 2000;
    double slack_constant = 0.0;     // C_d
};

/// Checks sup_{B_r(z)} w ≥ bound(r) - C_d h r for strided admissible centers z and each radius
/// whose ball stays strictly inside the box.
template <class Admissible, class Bound>
ProbeReport ball_probe(const ScalarField& w, Admissible&& admissible, const std::vector<double>& radii, Bound&& bound,
                       const ProbeOptions& opt) {
    const Grid& g = w.grid;
    const double h = g.spacing();
    for (double r : radii)
        if (!(r > 0.0)) throw Error(ErrorKind::domain, "probe radii must be positive");
    std::vector<std::size_t> centers;
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        if (admissible(idx, i)) centers.push_back(i);
    });
    ProbeReport rep;
    rep.slack_constant = opt.slack_constant;
    rep.admissible_centers = centers.size();
    rep.stride = opt.stride > 0 ? opt.stride : std::max<std::size_t>(1, centers.size() / std::max<std::size_t>(1, opt.target_centers));
    if (centers.empty()) {
        log::warn("non-degeneracy probe: no admissible center");
        return rep;
    }
    std::vector<BallStencil> stencils;
    for (double r : radii) stencils.emplace_back(g, r);
    for (std::size_t c = 0; c < centers.size(); c += rep.stride) {
        const std::size_t i = centers[c];
        const Index idx = g.unflatten(i);
        for (std::size_t k = 0; k < radii.size(); ++k) {
            const double r = radii[k];
            if (!(g.distance_to_boundary(idx) > r)) continue;
            double sup = -std::numeric_limits<double>::infinity();
            stencils[k].visit(g, idx, [&](std::size_t j) { sup = std::max(sup, w[j]); });
            ProbePoint p;
            p.center = g.coordinate(idx);
            p.r = r;
            p.lhs = sup;
            p.rhs = bound(r) - opt.slack_constant * h * r;
            p.margin = p.lhs - p.rhs;
            rep.worst_margin = std::min(rep.worst_margin, p.margin);
            if (p.margin < 0.0) ++rep.violations;
            rep.points.push_back(p);
        }
    }
    return rep;
}

/// Non-degeneracy away from contact: centers with dist(z, Λ) > (2n/λ)^{1/2} r_eps, bound (λ/2n) r^2 - r_eps^2.
inline ProbeReport nondegeneracy_probe(const ScalarField& w, const CellMask& contact, double r_eps, double lambda,
                                       const std::vector<double>& radii, const ProbeOptions& opt = {}) {
    require_same_grid(w.grid, contact.grid, "nondegeneracy_probe");
    const int n = w.grid.dim();
    // Strict hypothesis; exact ties (mid-gap nodes of periodic contact) must not pass through rounding.
    const double reach = std::sqrt(2.0 * n / lambda) * r_eps * (1.0 + 1e-9);
    std::optional<DistanceField> df;
    if (!contact.empty()) df = distance_transform(contact);
    auto admissible = [&](const Index& idx, std::size_t i) {
        return !w.grid.on_face(idx) && (!df || (*df)[i] > reach);
    };
    return ball_probe(w, admissible, radii, [&](double r) { return lambda / (2.0 * n) * r * r - r_eps * r_eps; }, opt);
}

/// Non-degeneracy of w0 at its free boundary: sup_{B_r(z)} w0 ≥ (λ/2n) r^2 for z ∈ Γ0.
inline ProbeReport free_boundary_growth_probe(const ScalarField& w0, const CellMask& gamma0, double lambda,
                                              const std::vector<double>& radii, const ProbeOptions& opt = {}) {
    require_same_grid(w0.grid, gamma0.grid, "free_boundary_growth_probe");
    const int n = w0.grid.dim();
    return ball_probe(w0, [&](const Index&, std::size_t i) { return gamma0[i]; }, radii,
                      [&](double r) { return lambda / (2.0 * n) * r * r; }, opt);
}

/// Bulk non-degeneracy at Γ̃: sup_{B_r(x)} w_ε ≥ c r^2 - 2 r_eps^2 with c = `c` (default λ/(8n)).
struct BulkNondegeneracyReport {
    ProbeReport probe;
    double c = 0.0;
    double sharpest_c = std::numeric_limits<double>::infinity();  // largest c the probes support
};

inline BulkNondegeneracyReport bulk_nondegeneracy_check(const ScalarField& weps, const CellMask& bulk_fb, double r_eps,
                                                        double lambda, const std::vector<double>& radii,
                                                        const ProbeOptions& opt = {},
                                                        std::optional<double> c = std::nullopt) {
    require_same_grid(weps.grid, bulk_fb.grid, "bulk_nondegeneracy_check");
    if (bulk_fb.empty()) throw Error(ErrorKind::degenerate_set, "bulk free boundary is empty");
    BulkNondegeneracyReport rep;
    rep.c = c.value_or(lambda / (8.0 * weps.grid.dim()));
    rep.probe = ball_probe(weps, [&](const Index&, std::size_t i) { return bulk_fb[i]; }, radii,
                           [&](double r) { return rep.c * r * r - 2.0 * r_eps * r_eps; }, opt);
    const double h = weps.grid.spacing();
    for (const auto& p : rep.probe.points)
        rep.sharpest_c = std::min(rep.sharpest_c, (p.lhs + 2.0 * r_eps * r_eps + opt.slack_constant * h * p.r) / (p.r * p.r));
    return rep;
}

// ---------------------------------------------------------------------------
// Regularity surrogates

struct RegularityEstimates {
    double M = 0.0;   // max second-difference quotient of w0
    double c1 = 0.0;  // min w0 / d(x, Γ0)^2 over non-contact nodes with d ≥ 4h
    double c2 = 0.0;  // interior-ball density of Λ0, capped at 1/2
};

inline double max_second_difference(const ScalarField& w) {
    const Grid& g = w.grid;
    const double h2 = g.spacing() * g.spacing();
    double M = 0.0;
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        for (int a = 0; a < g.dim(); ++a) {
            auto p = g.neighbor(idx, a, 1), m = g.neighbor(idx, a, -1);
            if (p && m) M = std::max(M, std::abs(w[*p] - 2.0 * w[i] + w[*m]) / h2);
            for (int b = a + 1; b < g.dim(); ++b) {
                auto q = g.neighbor(idx, b, 1);
                if (!p || !q) continue;
                auto pq = g.neighbor(g.unflatten(*p), b, 1);
                M = std::max(M, std::abs(w[*pq] - w[*p] - w[*q] + w[i]) / h2);
            }
        }
    });
    return M;
}

/**
 * Empirical stand-ins for the regularity constants of w0.  c2 is the worst
 * ratio, over sampled x ∈ Λ0 and radii r, of the largest ball inside
 * Λ0 ∩ B_r(x) to r; ball radii at y come from the distance to the complement.
 */
inline RegularityEstimates regularity_estimates(const ScalarField& w0, const CellMask& contact0,
                                                std::size_t target_samples = 256) {
    require_same_grid(w0.grid, contact0.grid, "regularity_estimates");
    const Grid& g = w0.grid;
    const double h = g.spacing();
    if (contact0.empty()) throw Error(ErrorKind::resolution, "contact set is empty");
    double span = 0.0;
    for (int d = 0; d < g.dim(); ++d) {
        std::size_t lo = g.extent(d), hi = 0;
        for_each_node(g, [&](const Index& idx, std::size_t i) {
            if (contact0[i]) { lo = std::min(lo, idx[d]); hi = std::max(hi, idx[d]); }
        });
        if (hi - lo + 1 < 16) throw Error(ErrorKind::resolution, "contact set spans fewer than 16 nodes along an axis");
        span = std::max(span, static_cast<double>(hi - lo) * h);
    }
    RegularityEstimates est;
    est.M = max_second_difference(w0);

    if (contact0.full()) {
        est.c1 = std::numeric_limits<double>::infinity();
        est.c2 = 0.5;
        return est;
    }
    CellMask gamma0 = free_boundary(contact0);
    DistanceField to_gamma = distance_transform(gamma0);
    est.c1 = std::numeric_limits<double>::infinity();
    for_each_node(g, [&](const Index& idx, std::size_t i) {
        if (contact0[i] || g.on_face(idx)) return;
        double d = to_gamma[i];
        if (d >= 4.0 * h) est.c1 = std::min(est.c1, w0[i] / (d * d));
    });

    DistanceField to_complement = distance_transform(contact0.complement());
    std::vector<std::size_t> pts;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (contact0[i]) pts.push_back(i);
    const std::size_t stride = std::max<std::size_t>(1, pts.size() / target_samples);
    est.c2 = 0.5;
    for (double r = 4.0 * h; r <= span; r *= 2.0) {
        BallStencil ball(g, r);
        for (std::size_t s = 0; s < pts.size(); s += stride) {
            const Index x = g.unflatten(pts[s]);
            const Coord cx = g.coordinate(x);
            double best = 0.0;
            ball.visit(g, x, [&](std::size_t j) {
                if (!contact0[j]) return;
                Coord cy = g.coordinate(j);
                double dxy = 0.0;
                for (int d = 0; d < g.dim(); ++d) dxy += (cx[d] - cy[d]) * (cx[d] - cy[d]);
                best = std::max(best, std::min(to_complement[j], r - std::sqrt(dxy)));
            });
            est.c2 = std::min(est.c2, best / r);
        }
    }
    return est;
}

} // namespace obshom
