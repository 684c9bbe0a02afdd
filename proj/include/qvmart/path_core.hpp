#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qvmart/error.hpp"

namespace qvmart {

/// Ordered partition 0 = t_0 < t_1 < ... < t_n = 1 of the unit horizon.
///
/// Cell c is the interval (t_c, t_{c+1}]; its decision time is t_c and any
/// jump materialised at t_{c+1} belongs to it. Points are shared between
/// copies, so paths on one grid can be held by value cheaply.
class TimeGrid {
public:
    TimeGrid() : TimeGrid(std::vector<double>{0.0, 1.0}, std::nullopt) {}

    static TimeGrid from_points(std::vector<double> points) { return TimeGrid(std::move(points), std::nullopt); }

    static TimeGrid uniform(std::size_t n_steps)
    {
        if (n_steps < 1) throw ConfigError("TimeGrid::uniform: need at least one step");
        std::vector<double> pts(n_steps + 1);
        for (std::size_t k = 0; k <= n_steps; ++k) pts[k] = static_cast<double>(k) / static_cast<double>(n_steps);
        pts.back() = 1.0;
        std::optional<unsigned> level;
        if ((n_steps & (n_steps - 1)) == 0) level = static_cast<unsigned>(std::countr_zero(n_steps));
        return TimeGrid(std::move(pts), level);
    }

    /// Uniform grid with 2^level steps.
    static TimeGrid dyadic(unsigned level)
    {
        if (level > 30) throw ConfigError("TimeGrid::dyadic: level too large");
        return uniform(std::size_t{1} << level);
    }

    /// Grid for models singular at t = 1.
    ///
    /// Uniform with `early_steps` cells on [0, 1/2]; on (1/2, 1 - min(eps)]
    /// uniform in v = -log(1 - t) with about `steps_per_unit_v` cells per unit
    /// of v, with every 1 - eps of `truncations` landing exactly on a point;
    /// then the single cell (1 - min(eps), 1].
    static TimeGrid singular(std::size_t early_steps, double steps_per_unit_v, std::vector<double> truncations)
    {
        if (early_steps < 1 || !(steps_per_unit_v > 0.0) || truncations.empty())
            throw ConfigError("TimeGrid::singular: bad parameters");
        for (double e : truncations)
            if (!(e > 0.0 && e <= 0.5)) throw ConfigError("TimeGrid::singular: truncation eps must lie in (0, 1/2]");
        std::sort(truncations.begin(), truncations.end(), std::greater<>());
        truncations.erase(std::unique(truncations.begin(), truncations.end()), truncations.end());

        std::vector<double> pts;
        for (std::size_t k = 0; k <= early_steps; ++k)
            pts.push_back(0.5 * static_cast<double>(k) / static_cast<double>(early_steps));
        pts.back() = 0.5;
        double v_lo = std::log(2.0);
        for (double e : truncations) {
            if (e == 0.5) continue;
            const double v_hi = -std::log(e);
            const auto cells = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::ceil((v_hi - v_lo) * steps_per_unit_v)));
            for (std::size_t j = 1; j < cells; ++j) {
                const double v = v_lo + (v_hi - v_lo) * static_cast<double>(j) / static_cast<double>(cells);
                pts.push_back(-std::expm1(-v));
            }
            pts.push_back(1.0 - e);
            v_lo = v_hi;
        }
        pts.push_back(1.0);
        return from_points(std::move(pts));
    }

    std::span<const double> points() const { return *points_; }
    double operator[](std::size_t i) const { return (*points_)[i]; }
    std::size_t size() const { return points_->size(); }
    std::size_t n_steps() const { return points_->size() - 1; }
    double cell_length(std::size_t c) const { return (*points_)[c + 1] - (*points_)[c]; }
    std::optional<unsigned> dyadic_level() const { return dyadic_level_; }

    /// Index of the first point >= t (within a 1e-12 tolerance).
    std::size_t ceil_index(double t) const
    {
        const auto& p = *points_;
        auto it = std::lower_bound(p.begin(), p.end(), t - 1e-12);
        if (it == p.end()) return p.size() - 1;
        return static_cast<std::size_t>(it - p.begin());
    }

    /// Index of point t exactly; throws if t is not a grid point.
    std::size_t index_of(double t) const
    {
        const auto& p = *points_;
        auto it = std::lower_bound(p.begin(), p.end(), t);
        if (it == p.end() || *it != t) throw ContractError("time " + std::to_string(t) + " is not a grid point");
        return static_cast<std::size_t>(it - p.begin());
    }

    /// Cell containing t in (0, 1]: smallest c with t <= t_{c+1}.
    std::size_t cell_of(double t) const
    {
        const std::size_t i = ceil_index(t);
        return i == 0 ? 0 : i - 1;
    }

    friend bool operator==(const TimeGrid& a, const TimeGrid& b)
    {
        return a.points_ == b.points_ || *a.points_ == *b.points_;
    }

private:
    TimeGrid(std::vector<double> points, std::optional<unsigned> level)
        : points_(std::make_shared<const std::vector<double>>(std::move(points))), dyadic_level_(level)
    {
        const auto& p = *points_;
        if (p.size() < 2) throw ConfigError("TimeGrid: need at least two points");
        if (p.front() != 0.0 || p.back() != 1.0) throw ConfigError("TimeGrid: points must start at 0 and end at 1");
        for (std::size_t i = 1; i < p.size(); ++i)
            if (!(p[i] > p[i - 1])) throw ConfigError("TimeGrid: points must be strictly increasing");
    }

    std::shared_ptr<const std::vector<double>> points_;
    std::optional<unsigned> dyadic_level_;
};

struct Jump {
    double time = 0.0;
    double size = 0.0;
    friend bool operator==(const Jump&, const Jump&) = default;
};

/// Grid-aligned cadlag path.
///
/// values[i] is the level at t_i after any jump at t_i. Jumps are kept apart
/// from the continuous samples so their QV contribution is exact. Several
/// jumps may share a grid point: they stand for distinct jumps inside one
/// cell and stay separate.
class SamplePath {
public:
    SamplePath() = default;

    SamplePath(TimeGrid grid, std::vector<double> values, std::vector<Jump> jumps = {})
        : grid_(std::move(grid)), values_(std::move(values)), jumps_(std::move(jumps))
    {
        if (values_.size() != grid_.size()) throw ContractError("SamplePath: one value per grid point required");
        jump_points_.reserve(jumps_.size());
        for (std::size_t j = 0; j < jumps_.size(); ++j) {
            if (j > 0 && jumps_[j].time < jumps_[j - 1].time)
                throw ContractError("SamplePath: jump times must be non-decreasing");
            if (!(jumps_[j].time > 0.0)) throw ContractError("SamplePath: jump times must lie in (0, 1]");
            jump_points_.push_back(grid_.index_of(jumps_[j].time));
        }
    }

    const TimeGrid& grid() const { return grid_; }
    std::span<const double> values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const Jump> jumps() const { return jumps_; }
    /// Grid indices of the jumps, parallel to jumps().
    std::span<const std::size_t> jump_points() const { return jump_points_; }
    bool continuous() const { return jumps_.empty(); }
    double terminal() const { return values_.back(); }

    /// Dense per-cell summed jump sizes (0 where the cell has no jump).
    std::vector<double> cell_jumps() const
    {
        std::vector<double> out(grid_.n_steps(), 0.0);
        for (std::size_t j = 0; j < jumps_.size(); ++j) out[jump_points_[j] - 1] += jumps_[j].size;
        return out;
    }

    /// Same path with the jump list dropped and values shifted so only the
    /// continuous part remains.
    SamplePath continuous_part() const
    {
        std::vector<double> v(values_);
        double removed = 0.0;
        std::size_t j = 0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            while (j < jumps_.size() && jump_points_[j] == i) removed += jumps_[j++].size;
            v[i] -= removed;
        }
        return SamplePath(grid_, std::move(v));
    }

private:
    TimeGrid grid_;
    std::vector<double> values_{0.0, 0.0};
    std::vector<Jump> jumps_;
    std::vector<std::size_t> jump_points_;
};

/// Pathwise quadratic variation on the grid; values[0] = 0, non-decreasing.
class QVPath {
public:
    QVPath() = default;
    QVPath(TimeGrid grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values))
    {
        if (values_.size() != grid_.size()) throw ContractError("QVPath: one value per grid point required");
    }

    const TimeGrid& grid() const { return grid_; }
    std::span<const double> values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double terminal() const { return values_.back(); }
    /// [S]_{t_{c+1}} - [S]_{t_c}.
    double increment(std::size_t c) const { return values_[c + 1] - values_[c]; }

private:
    TimeGrid grid_;
    std::vector<double> values_{0.0, 0.0};
};

namespace detail {

inline QVPath accumulate_qv(const SamplePath& path, bool include_jumps)
{
    const auto v = path.values();
    const auto jumps = path.jumps();
    const auto jump_points = path.jump_points();
    std::vector<double> q(v.size());
    q[0] = 0.0;
    double acc = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        double d = v[i] - v[i - 1];
        while (j < jumps.size() && jump_points[j] == i) {
            const double size = jumps[j++].size;
            d -= size;
            if (include_jumps) acc += size * size;
        }
        acc += d * d;
        q[i] = acc;
    }
    return QVPath(path.grid(), std::move(q));
}

}  // namespace detail

/// [S] on the grid: summed squared continuous increments plus squared jump
/// sizes added at the jump times.
inline QVPath quadratic_variation(const SamplePath& path) { return detail::accumulate_qv(path, true); }

/// [S]^c: the jump contributions excluded.
inline QVPath continuous_quadratic_variation(const SamplePath& path) { return detail::accumulate_qv(path, false); }

/// The stopped path S_{. ^ t_index}; jumps after t_index are dropped.
inline SamplePath stopped(const SamplePath& path, std::size_t index)
{
    require(index < path.grid().size(), "stopped: index out of range");
    std::vector<double> v(path.values().begin(), path.values().end());
    std::fill(v.begin() + static_cast<std::ptrdiff_t>(index) + 1, v.end(), v[index]);
    std::vector<Jump> jumps;
    for (std::size_t j = 0; j < path.jumps().size(); ++j)
        if (path.jump_points()[j] <= index) jumps.push_back(path.jumps()[j]);
    return SamplePath(path.grid(), std::move(v), std::move(jumps));
}

struct TruncationTime {
    std::size_t index = 0;
    double time = 1.0;
};

/// T_n = first grid time with |S| > level or [S] > level, else 1.
inline TruncationTime truncation_time(const SamplePath& path, const QVPath& qv, double level)
{
    require(path.grid() == qv.grid(), "truncation_time: path and QV on different grids");
    const auto v = path.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (std::abs(v[i]) > level || qv[i] > level) return {i, path.grid()[i]};
    }
    return {v.size() - 1, 1.0};
}

/// Monte-Carlo carrier: paths on one shared grid.
struct Ensemble {
    std::vector<SamplePath> paths;
    std::uint64_t master_seed = 0;
    std::string model_tag;

    Ensemble() = default;
    Ensemble(std::vector<SamplePath> p, std::uint64_t seed, std::string tag)
        : paths(std::move(p)), master_seed(seed), model_tag(std::move(tag))
    {
        validate();
    }

    void validate() const
    {
        if (paths.empty()) throw ContractError("Ensemble: at least one path required");
        for (const auto& p : paths)
            if (!(p.grid() == paths.front().grid())) throw ContractError("Ensemble: paths must share one grid");
    }

    const TimeGrid& grid() const { return paths.front().grid(); }
    std::size_t size() const { return paths.size(); }
};

inline std::vector<QVPath> quadratic_variations(const Ensemble& ensemble)
{
    std::vector<QVPath> out;
    out.reserve(ensemble.size());
    for (const auto& p : ensemble.paths) out.push_back(quadratic_variation(p));
    return out;
}

struct QvRefinementRow {
    std::size_t n_steps = 0;
    double qv_terminal = 0.0;
    /// |QV_1(this mesh) - QV_1(previous mesh)|; 0 on the first row.
    double change = 0.0;
};

/// Evaluates one fixed realisation on successively finer dyadic grids and
/// tabulates QV_1.
///
/// Generator: `bool refinement_consistent() const` and
/// `SamplePath operator()(const TimeGrid&) const` returning the same
/// realisation at every mesh.
template <typename Generator>
std::vector<QvRefinementRow> refine_and_compare_qv(const Generator& generator, std::span<const unsigned> levels)
{
    if (!generator.refinement_consistent())
        throw ConfigError("refine_and_compare_qv: generator cannot evaluate one realisation on refined grids");
    std::vector<QvRefinementRow> rows;
    for (unsigned level : levels) {
        const SamplePath p = generator(TimeGrid::dyadic(level));
        const double q = quadratic_variation(p).terminal();
        const double change = rows.empty() ? 0.0 : std::abs(q - rows.back().qv_terminal);
        rows.push_back({p.grid().n_steps(), q, change});
    }
    return rows;
}

}  // namespace qvmart
