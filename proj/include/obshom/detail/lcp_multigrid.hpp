#pragma once

// Monotone multigrid for the grid complementarity problem
//
//     u >= lo,   A u >= r,   (u - lo) . (A u - r) = 0,     A = -Δ_h,
//
// on a box (face nodes frozen) or a torus.  Coarse levels solve the same
// kind of problem for a correction, with the defect obstacle restricted by
// a max over each coarse node's stencil support; linear interpolation of
// any admissible coarse correction then keeps the fine iterate admissible.
// Relaxation is projected Gauss-Seidel in red-black order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace obshom::detail {

/// Shape of one level, with unused axes padded in front so axis 2 is always active.
struct LevelShape {
    int dim = 1;
    std::array<std::size_t, 3> n{1, 1, 1};
    std::array<std::size_t, 3> stride{1, 1, 1};
    bool periodic = false;
    double h = 1.0;

    std::size_t size() const { return n[0] * n[1] * n[2]; }
    bool active(int axis) const { return axis >= 3 - dim; }
    std::size_t lo(int axis) const { return (active(axis) && !periodic) ? 1 : 0; }
    std::size_t hi(int axis) const { return (active(axis) && !periodic) ? n[axis] - 1 : n[axis]; }

    void finish() {
        stride[2] = 1;
        stride[1] = n[2];
        stride[0] = n[1] * n[2];
    }

    bool is_free(const std::array<std::size_t, 3>& i) const {
        for (int a = 0; a < 3; ++a)
            if (i[a] < lo(a) || i[a] >= hi(a)) return false;
        return true;
    }

    bool coarsenable() const {
        for (int a = 3 - dim; a < 3; ++a) {
            if (periodic) {
                if (n[a] % 2 != 0 || n[a] < 8) return false;
            } else {
                if ((n[a] - 1) % 2 != 0 || n[a] < 5) return false;
            }
        }
        return true;
    }

    LevelShape coarse() const {
        LevelShape c = *this;
        for (int a = 3 - dim; a < 3; ++a) c.n[a] = periodic ? n[a] / 2 : (n[a] - 1) / 2 + 1;
        c.h = 2.0 * h;
        c.finish();
        return c;
    }
};

struct Level {
    LevelShape shape;
    std::vector<double> u;   // iterate (finest) or correction (coarse)
    std::vector<double> lo;  // lower obstacle
    std::vector<double> hr;  // h^2 * right-hand side r
    std::vector<double> tmp;
    std::array<std::vector<std::size_t>, 3> prev, next;

    explicit Level(const LevelShape& s) : shape(s), u(s.size(), 0.0), lo(s.size(), 0.0), hr(s.size(), 0.0), tmp(s.size(), 0.0) {
        for (int a = 0; a < 3; ++a) {
            std::size_t n = s.n[a];
            prev[a].resize(n);
            next[a].resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                prev[a][i] = (i + n - 1) % n;
                next[a][i] = (i + 1) % n;
            }
        }
    }
};

/// Loops over free nodes calling fn(flat, sum_of_neighbours) with the given parity (-1 = all).
template <class Fn>
inline void for_free_nodes(const Level& L, const std::vector<double>& v, int color, Fn&& fn) {
    const LevelShape& s = L.shape;
    const bool a0 = s.active(0), a1 = s.active(1);
    for (std::size_t i0 = s.lo(0); i0 < s.hi(0); ++i0) {
        const std::ptrdiff_t m0 = a0 ? (static_cast<std::ptrdiff_t>(L.prev[0][i0]) - static_cast<std::ptrdiff_t>(i0)) * static_cast<std::ptrdiff_t>(s.stride[0]) : 0;
        const std::ptrdiff_t p0 = a0 ? (static_cast<std::ptrdiff_t>(L.next[0][i0]) - static_cast<std::ptrdiff_t>(i0)) * static_cast<std::ptrdiff_t>(s.stride[0]) : 0;
        for (std::size_t i1 = s.lo(1); i1 < s.hi(1); ++i1) {
            const std::ptrdiff_t m1 = a1 ? (static_cast<std::ptrdiff_t>(L.prev[1][i1]) - static_cast<std::ptrdiff_t>(i1)) * static_cast<std::ptrdiff_t>(s.stride[1]) : 0;
            const std::ptrdiff_t p1 = a1 ? (static_cast<std::ptrdiff_t>(L.next[1][i1]) - static_cast<std::ptrdiff_t>(i1)) * static_cast<std::ptrdiff_t>(s.stride[1]) : 0;
            const std::size_t base = i0 * s.stride[0] + i1 * s.stride[1];
            std::size_t start = s.lo(2);
            std::size_t step = 1;
            if (color >= 0) {
                step = 2;
                if (((i0 + i1 + start) & 1u) != static_cast<std::size_t>(color)) ++start;
            }
            const auto& pv = L.prev[2];
            const auto& nx = L.next[2];
            for (std::size_t i2 = start; i2 < s.hi(2); i2 += step) {
                const std::size_t f = base + i2;
                double sum = v[base + pv[i2]] + v[base + nx[i2]];
                if (a1) sum += v[f + m1] + v[f + p1];
                if (a0) sum += v[f + m0] + v[f + p0];
                fn(f, sum);
            }
        }
    }
}

/// One projected relaxation sweep; returns the largest change.
inline double relax(Level& L, double omega, bool red_black) {
    const double diag = 2.0 * L.shape.dim;
    double change = 0.0;
    auto update = [&](std::size_t f, double sum) {
        double gs = (sum + L.hr[f]) / diag;
        double old = L.u[f];
        double v = old + omega * (gs - old);
        if (v < L.lo[f]) v = L.lo[f];
        change = std::max(change, std::abs(v - old));
        L.u[f] = v;
    };
    if (red_black) {
        for_free_nodes(L, L.u, 0, update);
        for_free_nodes(L, L.u, 1, update);
    } else {
        for_free_nodes(L, L.u, -1, update);
    }
    return change;
}

/// Scaled defect h^2 (r - A u) at free nodes, zero elsewhere, written to L.tmp.
inline void scaled_defect(Level& L) {
    const double diag = 2.0 * L.shape.dim;
    std::fill(L.tmp.begin(), L.tmp.end(), 0.0);
    for_free_nodes(L, L.u, -1, [&](std::size_t f, double sum) { L.tmp[f] = L.hr[f] - (diag * L.u[f] - sum); });
}

/// max over free nodes of |min(h^2 (A u - r), u - lo)|.
inline double complementarity_residual(Level& L) {
    const double diag = 2.0 * L.shape.dim;
    double res = 0.0;
    for_free_nodes(L, L.u, -1, [&](std::size_t f, double sum) {
        double s = (diag * L.u[f] - sum) - L.hr[f];
        double g = L.u[f] - L.lo[f];
        res = std::max(res, std::abs(std::min(s, g)));
    });
    return res;
}

inline std::size_t fine_index(const LevelShape& fine, int axis, std::size_t coarse_i, int offset) {
    long v = 2 * static_cast<long>(coarse_i) + offset;
    long n = static_cast<long>(fine.n[axis]);
    if (fine.periodic) v = ((v % n) + n) % n;
    return static_cast<std::size_t>(v);
}

/// Restrict the fine defect (full weighting) and the defect obstacle (max over support).
inline void restrict_to(Level& fine, Level& coarse) {
    scaled_defect(fine);
    const LevelShape& fs = fine.shape;
    const LevelShape& cs = coarse.shape;
    std::fill(coarse.u.begin(), coarse.u.end(), 0.0);
    std::fill(coarse.hr.begin(), coarse.hr.end(), 0.0);
    std::fill(coarse.lo.begin(), coarse.lo.end(), 0.0);
    // coarse spacing is 2h, so h_c^2 r_c = 4 h^2 R(r - A u)
    const int r0 = fs.active(0) ? 1 : 0, r1 = fs.active(1) ? 1 : 0;
    std::array<std::size_t, 3> J{};
    for (J[0] = cs.lo(0); J[0] < cs.hi(0); ++J[0])
        for (J[1] = cs.lo(1); J[1] < cs.hi(1); ++J[1])
            for (J[2] = cs.lo(2); J[2] < cs.hi(2); ++J[2]) {
                const std::size_t cf = J[0] * cs.stride[0] + J[1] * cs.stride[1] + J[2];
                double acc = 0.0;
                double dmax = -1e300;
                for (int o0 = -r0; o0 <= r0; ++o0)
                    for (int o1 = -r1; o1 <= r1; ++o1)
                        for (int o2 = -1; o2 <= 1; ++o2) {
                            std::array<std::size_t, 3> I{
                                fs.active(0) ? fine_index(fs, 0, J[0], o0) : 0,
                                fs.active(1) ? fine_index(fs, 1, J[1], o1) : 0,
                                fine_index(fs, 2, J[2], o2)};
                            const std::size_t ff = I[0] * fs.stride[0] + I[1] * fs.stride[1] + I[2];
                            double w = (o2 == 0 ? 0.5 : 0.25);
                            if (r1) w *= (o1 == 0 ? 0.5 : 0.25);
                            if (r0) w *= (o0 == 0 ? 0.5 : 0.25);
                            acc += w * fine.tmp[ff];
                            if (fs.is_free(I)) dmax = std::max(dmax, fine.lo[ff] - fine.u[ff]);
                        }
                coarse.hr[cf] = 4.0 * acc;
                coarse.lo[cf] = std::min(dmax, 0.0);
            }
}

/// fine.u += P coarse.u at free fine nodes, then re-project onto the obstacle.
inline void prolong_add(const Level& coarse, Level& fine) {
    const LevelShape& fs = fine.shape;
    const LevelShape& cs = coarse.shape;
    std::array<std::size_t, 3> I{};
    for (I[0] = fs.lo(0); I[0] < fs.hi(0); ++I[0])
        for (I[1] = fs.lo(1); I[1] < fs.hi(1); ++I[1])
            for (I[2] = fs.lo(2); I[2] < fs.hi(2); ++I[2]) {
                std::size_t idx[3][2];
                double w[3][2];
                int cnt[3];
                for (int a = 0; a < 3; ++a) {
                    if (!fs.active(a)) {
                        idx[a][0] = 0; w[a][0] = 1.0; cnt[a] = 1;
                    } else if (I[a] % 2 == 0) {
                        idx[a][0] = I[a] / 2; w[a][0] = 1.0; cnt[a] = 1;
                    } else {
                        idx[a][0] = (I[a] - 1) / 2;
                        idx[a][1] = ((I[a] + 1) / 2) % cs.n[a];
                        w[a][0] = w[a][1] = 0.5;
                        cnt[a] = 2;
                    }
                }
                double v = 0.0;
                for (int x = 0; x < cnt[0]; ++x)
                    for (int y = 0; y < cnt[1]; ++y)
                        for (int z = 0; z < cnt[2]; ++z)
                            v += w[0][x] * w[1][y] * w[2][z] *
                                 coarse.u[idx[0][x] * cs.stride[0] + idx[1][y] * cs.stride[1] + idx[2][z]];
                const std::size_t ff = I[0] * fs.stride[0] + I[1] * fs.stride[1] + I[2];
                fine.u[ff] = std::max(fine.u[ff] + v, fine.lo[ff]);
            }
}

class MultigridLcp {
public:
    MultigridLcp(const LevelShape& finest, int pre = 2, int post = 2, int gamma = 1)
        : pre_(pre), post_(post), gamma_(gamma) {
        levels_.emplace_back(finest);
        while (levels_.back().shape.coarsenable()) levels_.emplace_back(levels_.back().shape.coarse());
    }

    Level& finest() { return levels_.front(); }
    std::size_t depth() const { return levels_.size(); }
    int fine_sweeps_per_cycle() const { return pre_ + post_; }

    /// One V-cycle on the finest level; returns the largest change of the fine iterate.
    double cycle() {
        std::vector<double> before = levels_[0].u;
        vcycle(0);
        double change = 0.0;
        for (std::size_t i = 0; i < before.size(); ++i) change = std::max(change, std::abs(levels_[0].u[i] - before[i]));
        return change;
    }

private:
    void vcycle(std::size_t l) {
        Level& L = levels_[l];
        if (l + 1 == levels_.size()) {
            solve_coarsest(L);
            return;
        }
        for (int i = 0; i < pre_; ++i) relax(L, 1.0, true);
        Level& C = levels_[l + 1];
        for (int g = 0; g < (l == 0 ? 1 : gamma_); ++g) {
            restrict_to(L, C);
            vcycle(l + 1);
            prolong_add(C, L);
            if (g + 1 < gamma_ && l > 0) relax(L, 1.0, true);
        }
        for (int i = 0; i < post_; ++i) relax(L, 1.0, true);
    }

    static void solve_coarsest(Level& L) {
        double scale = 1e-300;
        for (double v : L.hr) scale = std::max(scale, std::abs(v));
        for (int it = 0; it < 4000; ++it)
            if (relax(L, 1.0, true) <= 1e-15 * scale) break;
    }

    int pre_, post_, gamma_;
    std::vector<Level> levels_;
};

} // namespace obshom::detail
