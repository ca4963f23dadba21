#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "obshom/error.hpp"

namespace obshom {

inline constexpr int max_dim = 3;

using Coord = std::array<double, max_dim>;
using Index = std::array<std::size_t, max_dim>;

enum class Topology { box, torus };

inline const char* to_string(Topology t) { return t == Topology::box ? "box" : "torus"; }

/**
 * Uniform node-centred grid in 1, 2 or 3 dimensions.
 *
 * Node `i` sits at `origin + i * spacing`.  Axes beyond `dim()` have extent 1.
 * Storage order is row-major: the last axis varies fastest.
 * A box grid carries Dirichlet data on its face nodes; a torus grid wraps
 * every axis and has period `extent * spacing`, equal on all axes.
 */
class Grid {
public:
    Grid() = default;

    Grid(int dim, Index extents, double spacing, Coord origin, Topology topology)
        : dim_(dim), extents_(extents), spacing_(spacing), origin_(origin), topology_(topology) {
        validate();
        stride_[max_dim - 1] = 1;
        for (int d = max_dim - 2; d >= 0; --d) stride_[d] = stride_[d + 1] * extents_[d + 1];
    }

    /// Box [origin, origin + (n-1) h] in every axis.
    static Grid box(int dim, std::size_t nodes_per_axis, double spacing, Coord origin = {}) {
        Index ext{1, 1, 1};
        for (int d = 0; d < std::min(dim, max_dim); ++d) ext[d] = nodes_per_axis;
        return Grid(dim, ext, spacing, origin, Topology::box);
    }

    /// Unit torus with `n` nodes per axis (spacing 1/n, origin 0).
    static Grid unit_torus(int dim, std::size_t n) {
        Index ext{1, 1, 1};
        for (int d = 0; d < std::min(dim, max_dim); ++d) ext[d] = n;
        return Grid(dim, ext, 1.0 / static_cast<double>(n), Coord{}, Topology::torus);
    }

    int dim() const { return dim_; }
    std::size_t extent(int axis) const { return extents_[axis]; }
    const Index& extents() const { return extents_; }
    double spacing() const { return spacing_; }
    const Coord& origin() const { return origin_; }
    Topology topology() const { return topology_; }
    bool periodic() const { return topology_ == Topology::torus; }
    std::size_t stride(int axis) const { return stride_[axis]; }

    std::size_t size() const { return extents_[0] * extents_[1] * extents_[2]; }

    std::size_t flat(const Index& idx) const {
        return idx[0] * stride_[0] + idx[1] * stride_[1] + idx[2];
    }

    Index unflatten(std::size_t flat) const {
        Index idx{};
        for (int d = 0; d < max_dim; ++d) {
            idx[d] = flat / stride_[d];
            flat -= idx[d] * stride_[d];
        }
        return idx;
    }

    Coord coordinate(const Index& idx) const {
        Coord x{};
        for (int d = 0; d < dim_; ++d) x[d] = origin_[d] + static_cast<double>(idx[d]) * spacing_;
        return x;
    }
    Coord coordinate(std::size_t flat) const { return coordinate(unflatten(flat)); }

    /// Upper corner of the bounding box (last node), or the end of the period for a torus.
    Coord upper() const {
        Coord x{};
        for (int d = 0; d < dim_; ++d) {
            double n = static_cast<double>(periodic() ? extents_[d] : extents_[d] - 1);
            x[d] = origin_[d] + n * spacing_;
        }
        return x;
    }

    bool on_face(const Index& idx) const {
        if (periodic()) return false;
        for (int d = 0; d < dim_; ++d)
            if (idx[d] == 0 || idx[d] + 1 == extents_[d]) return true;
        return false;
    }
    bool on_face(std::size_t flat) const { return on_face(unflatten(flat)); }

    /// Face neighbour along `axis` in direction `dir` (+1/-1); wraps on a torus.
    std::optional<std::size_t> neighbor(const Index& idx, int axis, int dir) const {
        std::size_t n = extents_[axis];
        Index j = idx;
        if (dir > 0) {
            if (idx[axis] + 1 < n) j[axis] = idx[axis] + 1;
            else if (periodic()) j[axis] = 0;
            else return std::nullopt;
        } else {
            if (idx[axis] > 0) j[axis] = idx[axis] - 1;
            else if (periodic()) j[axis] = n - 1;
            else return std::nullopt;
        }
        return flat(j);
    }

    /// Euclidean distance from node to the nearest box face (infinite on a torus).
    double distance_to_boundary(const Index& idx) const {
        if (periodic()) return std::numeric_limits<double>::infinity();
        std::size_t m = std::numeric_limits<std::size_t>::max();
        for (int d = 0; d < dim_; ++d) m = std::min({m, idx[d], extents_[d] - 1 - idx[d]});
        return static_cast<double>(m) * spacing_;
    }

    bool operator==(const Grid& o) const {
        return dim_ == o.dim_ && extents_ == o.extents_ && spacing_ == o.spacing_ &&
               origin_ == o.origin_ && topology_ == o.topology_;
    }
    bool operator!=(const Grid& o) const { return !(*this == o); }

    std::string describe() const {
        std::ostringstream os;
        os << to_string(topology_) << " dim=" << dim_ << " extents=(";
        for (int d = 0; d < dim_; ++d) os << (d ? "," : "") << extents_[d];
        os << ") h=" << spacing_;
        return os.str();
    }

private:
    void validate() const {
        if (dim_ < 1 || dim_ > max_dim)
            throw Error(ErrorKind::invalid_grid, "dimension must be 1, 2 or 3");
        if (!(spacing_ > 0.0) || !std::isfinite(spacing_))
            throw Error(ErrorKind::invalid_grid, "spacing must be positive");
        for (int d = 0; d < max_dim; ++d) {
            if (d < dim_ && extents_[d] < 3)
                throw Error(ErrorKind::invalid_grid, "every axis needs at least 3 nodes");
            if (d >= dim_ && extents_[d] != 1)
                throw Error(ErrorKind::invalid_grid, "unused axes must have extent 1");
        }
        if (topology_ == Topology::torus)
            for (int d = 1; d < dim_; ++d)
                if (extents_[d] != extents_[0])
                    throw Error(ErrorKind::invalid_grid, "torus period must agree on all axes");
    }

    int dim_ = 1;
    Index extents_{3, 1, 1};
    double spacing_ = 1.0;
    Coord origin_{};
    Topology topology_ = Topology::box;
    Index stride_{1, 1, 1};
};

/// Calls `fn(idx, flat)` for every node in storage order.
template <class Fn>
void for_each_node(const Grid& g, Fn&& fn) {
    Index idx{};
    std::size_t flat = 0;
    for (idx[0] = 0; idx[0] < g.extent(0); ++idx[0])
        for (idx[1] = 0; idx[1] < g.extent(1); ++idx[1])
            for (idx[2] = 0; idx[2] < g.extent(2); ++idx[2], ++flat) fn(idx, flat);
}

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
    if (a != b) throw Error(ErrorKind::grid_mismatch, std::string(what) + ": " + a.describe() + " vs " + b.describe());
}

/// Real value per node.
struct ScalarField {
    Grid grid;
    std::vector<double> values;

    ScalarField() = default;
    explicit ScalarField(const Grid& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
    ScalarField(const Grid& g, std::vector<double> v) : grid(g), values(std::move(v)) {
        if (values.size() != grid.size())
            throw Error(ErrorKind::invalid_grid, "field length does not match grid");
    }

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
    std::size_t size() const { return values.size(); }

    double min() const { return *std::min_element(values.begin(), values.end()); }
    double max() const { return *std::max_element(values.begin(), values.end()); }
    double max_abs() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, std::abs(v));
        return m;
    }
    bool finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }
};

/// Boolean per node; the node-set representation of contact sets and free boundaries.
struct CellMask {
    Grid grid;
    std::vector<std::uint8_t> flags;

    CellMask() = default;
    explicit CellMask(const Grid& g, bool fill = false) : grid(g), flags(g.size(), fill ? 1 : 0) {}

    bool operator[](std::size_t i) const { return flags[i] != 0; }
    void set(std::size_t i, bool v = true) { flags[i] = v ? 1 : 0; }
    std::size_t size() const { return flags.size(); }
    std::size_t count() const {
        return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
    }
    bool empty() const { return count() == 0; }
    bool full() const { return count() == flags.size(); }

    CellMask complement() const {
        CellMask c(grid);
        for (std::size_t i = 0; i < flags.size(); ++i) c.flags[i] = flags[i] ? 0 : 1;
        return c;
    }
    bool operator==(const CellMask& o) const { return grid == o.grid && flags == o.flags; }
};

inline ScalarField operator-(const ScalarField& a, const ScalarField& b) {
    require_same_grid(a.grid, b.grid, "field difference");
    ScalarField r(a.grid);
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline ScalarField operator+(const ScalarField& a, const ScalarField& b) {
    require_same_grid(a.grid, b.grid, "field sum");
    ScalarField r(a.grid);
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline ScalarField operator*(double s, const ScalarField& a) {
    ScalarField r(a.grid);
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = s * a[i];
    return r;
}

/// Node-wise evaluation of `fn` at physical coordinates.
inline ScalarField sample(const std::function<double(const Coord&)>& fn, const Grid& grid) {
    ScalarField f(grid);
    for_each_node(grid, [&](const Index& idx, std::size_t flat) {
        double v = fn(grid.coordinate(idx));
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "non-finite value at node (";
            for (int d = 0; d < grid.dim(); ++d) os << (d ? "," : "") << idx[d];
            os << ")";
            throw Error(ErrorKind::sampling, os.str());
        }
        f[flat] = v;
    });
    return f;
}

/**
 * Discrete Laplacian with the 2n+1 point stencil,
 * (Δ_h f)_i = h^-2 Σ_j (f_j - f_i) over face neighbours.
 * On a box grid only interior nodes are computed; face nodes are returned as 0.
 */
inline ScalarField laplacian_apply(const ScalarField& f) {
    const Grid& g = f.grid;
    ScalarField out(g);
    const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
    for_each_node(g, [&](const Index& idx, std::size_t flat) {
        if (g.on_face(idx)) return;
        double s = 0.0;
        for (int d = 0; d < g.dim(); ++d)
            s += f[*g.neighbor(idx, d, +1)] + f[*g.neighbor(idx, d, -1)];
        out[flat] = (s - 2.0 * g.dim() * f[flat]) * inv_h2;
    });
    return out;
}

/// Central differences inside (wrapping on a torus), one-sided at box faces.
inline std::vector<ScalarField> gradient(const ScalarField& f) {
    const Grid& g = f.grid;
    std::vector<ScalarField> grad(g.dim(), ScalarField(g));
    const double h = g.spacing();
    for_each_node(g, [&](const Index& idx, std::size_t flat) {
        for (int d = 0; d < g.dim(); ++d) {
            auto p = g.neighbor(idx, d, +1);
            auto m = g.neighbor(idx, d, -1);
            if (p && m) grad[d][flat] = (f[*p] - f[*m]) / (2.0 * h);
            else if (p) grad[d][flat] = (f[*p] - f[flat]) / h;
            else grad[d][flat] = (f[flat] - f[*m]) / h;
        }
    });
    return grad;
}

/// h^n Σ f_i g_i.
inline double inner_product(const ScalarField& f, const ScalarField& g) {
    require_same_grid(f.grid, g.grid, "inner product");
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += f[i] * g[i];
    return s * std::pow(f.grid.spacing(), f.grid.dim());
}

/// h^{n-2} Σ_edges (f_j - f_i)(g_j - g_i): the discrete ∫∇f·∇g over forward edges.
inline double edge_inner_product(const ScalarField& f, const ScalarField& g) {
    require_same_grid(f.grid, g.grid, "edge inner product");
    const Grid& grid = f.grid;
    double s = 0.0;
    for_each_node(grid, [&](const Index& idx, std::size_t flat) {
        for (int d = 0; d < grid.dim(); ++d) {
            auto j = grid.neighbor(idx, d, +1);
            if (!j) continue;
            s += (f[*j] - f[flat]) * (g[*j] - g[flat]);
        }
    });
    return s * std::pow(grid.spacing(), grid.dim() - 2);
}

inline double dirichlet_energy(const ScalarField& f) { return edge_inner_product(f, f); }

/**
 * Integer offsets of all nodes within physical distance `radius` of a node.
 * Reused across many ball queries with the same radius.
 */
class BallStencil {
public:
    BallStencil(const Grid& g, double radius) : dim_(g.dim()) {
        const double h = g.spacing();
        reach_ = static_cast<long>(std::floor(radius / h + 1e-12));
        const double r2 = radius * radius * (1.0 + 1e-12);
        long lo[max_dim]{}, hi[max_dim]{};
        for (int d = 0; d < max_dim; ++d) {
            lo[d] = d < dim_ ? -reach_ : 0;
            hi[d] = d < dim_ ? reach_ : 0;
        }
        for (long a = lo[0]; a <= hi[0]; ++a)
            for (long b = lo[1]; b <= hi[1]; ++b)
                for (long c = lo[2]; c <= hi[2]; ++c) {
                    double d2 = static_cast<double>(a * a + b * b + c * c) * h * h;
                    if (d2 <= r2) offsets_.push_back({a, b, c});
                }
    }

    long reach() const { return reach_; }
    const std::vector<std::array<long, max_dim>>& offsets() const { return offsets_; }

    /// Calls fn(flat) for every in-grid node of the ball centred at `center` (a node).
    template <class Fn>
    void visit(const Grid& g, const Index& center, Fn&& fn) const {
        for (const auto& o : offsets_) {
            Index j{};
            bool inside = true;
            for (int d = 0; d < max_dim && inside; ++d) {
                long v = static_cast<long>(center[d]) + o[d];
                long n = static_cast<long>(g.extent(d));
                if (v < 0 || v >= n) inside = false;
                else j[d] = static_cast<std::size_t>(v);
            }
            if (inside) fn(g.flat(j));
        }
    }

private:
    int dim_;
    long reach_ = 0;
    std::vector<std::array<long, max_dim>> offsets_;
};

enum class Extremum { sup, inf };

/// Extremum of `f` over nodes within distance `radius` of an arbitrary point `center`.
inline double ball_extremum(const ScalarField& f, const Coord& center, double radius, Extremum mode) {
    const Grid& g = f.grid;
    const double h = g.spacing();
    std::size_t lo[max_dim]{}, hi[max_dim]{};
    for (int d = 0; d < max_dim; ++d) {
        if (d >= g.dim()) { lo[d] = 0; hi[d] = 0; continue; }
        double a = std::ceil((center[d] - radius - g.origin()[d]) / h - 1e-9);
        double b = std::floor((center[d] + radius - g.origin()[d]) / h + 1e-9);
        a = std::max(a, 0.0);
        b = std::min(b, static_cast<double>(g.extent(d) - 1));
        if (a > b) throw Error(ErrorKind::empty_region, "ball misses the grid");
        lo[d] = static_cast<std::size_t>(a);
        hi[d] = static_cast<std::size_t>(b);
    }
    const double r2 = radius * radius * (1.0 + 1e-12);
    bool found = false;
    double best = mode == Extremum::sup ? -std::numeric_limits<double>::infinity()
                                        : std::numeric_limits<double>::infinity();
    Index idx{};
    for (idx[0] = lo[0]; idx[0] <= hi[0]; ++idx[0])
        for (idx[1] = lo[1]; idx[1] <= hi[1]; ++idx[1])
            for (idx[2] = lo[2]; idx[2] <= hi[2]; ++idx[2]) {
                Coord x = g.coordinate(idx);
                double d2 = 0.0;
                for (int d = 0; d < g.dim(); ++d) d2 += (x[d] - center[d]) * (x[d] - center[d]);
                if (d2 > r2) continue;
                double v = f[g.flat(idx)];
                best = mode == Extremum::sup ? std::max(best, v) : std::min(best, v);
                found = true;
            }
    if (!found) throw Error(ErrorKind::empty_region, "no grid node inside the ball");
    return best;
}

} // namespace obshom
