#ifndef GRASPEVO_GEOMETRY_HPP
#define GRASPEVO_GEOMETRY_HPP

#include <graspevo/error.hpp>
#include <graspevo/math.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace graspevo {

enum class PrimitiveKind { sphere, capsule, box, cylinder };

enum class SceneCategory { object, handle };

/// Analytic solid. Dimensions per kind (meters):
///   sphere   {radius}
///   capsule  {radius, segment length along local z}
///   box      {size x, size y, size z} (full extents)
///   cylinder {radius, height along local z}
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::sphere;
    Vec3 position = Vec3::Zero();
    Quat orientation = Quat::Identity();
    std::vector<double> dimensions;
    double mu = 0.5;

    static std::size_t dimension_count(PrimitiveKind k)
    {
        switch (k) {
        case PrimitiveKind::sphere:
            return 1;
        case PrimitiveKind::capsule:
        case PrimitiveKind::cylinder:
            return 2;
        case PrimitiveKind::box:
            return 3;
        }
        return 0;
    }

    void validate() const
    {
        if (dimensions.size() != dimension_count(kind))
            throw Error("invalid-primitive", "wrong number of dimensions");
        for (double d : dimensions)
            if (!(d > 0.0))
                throw Error("invalid-primitive", "dimensions must be positive");
        if (!is_unit(orientation))
            throw Error("invalid-primitive", "quaternion is not unit norm");
        if (!(mu >= 0.0 && mu <= 2.0))
            throw Error("invalid-primitive", "mu outside [0, 2]");
    }

    Vec3 to_local(const Vec3& p) const { return orientation.conjugate() * (p - position); }

    /// Exact Euclidean signed distance, positive outside.
    double sdf(const Vec3& world) const
    {
        const Vec3 p = to_local(world);
        switch (kind) {
        case PrimitiveKind::sphere:
            return p.norm() - dimensions[0];
        case PrimitiveKind::capsule: {
            const double half = 0.5 * dimensions[1];
            const Vec3 axis_point(0.0, 0.0, std::clamp(p.z(), -half, half));
            return (p - axis_point).norm() - dimensions[0];
        }
        case PrimitiveKind::box: {
            const Vec3 half(0.5 * dimensions[0], 0.5 * dimensions[1], 0.5 * dimensions[2]);
            const Vec3 q = p.cwiseAbs() - half;
            return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
        }
        case PrimitiveKind::cylinder: {
            const double dr = std::hypot(p.x(), p.y()) - dimensions[0];
            const double dz = std::abs(p.z()) - 0.5 * dimensions[1];
            const double outside = std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
            return std::min(std::max(dr, dz), 0.0) + outside;
        }
        }
        return std::numeric_limits<double>::infinity();
    }

    double area() const
    {
        const double r = dimensions[0];
        switch (kind) {
        case PrimitiveKind::sphere:
            return 4.0 * kPi * r * r;
        case PrimitiveKind::capsule:
            return 4.0 * kPi * r * r + 2.0 * kPi * r * dimensions[1];
        case PrimitiveKind::box:
            return 2.0 * (dimensions[0] * dimensions[1] + dimensions[1] * dimensions[2] + dimensions[0] * dimensions[2]);
        case PrimitiveKind::cylinder:
            return 2.0 * kPi * r * dimensions[1] + 2.0 * kPi * r * r;
        }
        return 0.0;
    }

    double volume() const
    {
        const double r = dimensions[0];
        switch (kind) {
        case PrimitiveKind::sphere:
            return 4.0 / 3.0 * kPi * r * r * r;
        case PrimitiveKind::capsule:
            return kPi * r * r * dimensions[1] + 4.0 / 3.0 * kPi * r * r * r;
        case PrimitiveKind::box:
            return dimensions[0] * dimensions[1] * dimensions[2];
        case PrimitiveKind::cylinder:
            return kPi * r * r * dimensions[1];
        }
        return 0.0;
    }

    Vec3 local_half_extents() const
    {
        const double r = dimensions[0];
        switch (kind) {
        case PrimitiveKind::sphere:
            return Vec3::Constant(r);
        case PrimitiveKind::capsule:
            return Vec3(r, r, 0.5 * dimensions[1] + r);
        case PrimitiveKind::box:
            return 0.5 * Vec3(dimensions[0], dimensions[1], dimensions[2]);
        case PrimitiveKind::cylinder:
            return Vec3(r, r, 0.5 * dimensions[1]);
        }
        return Vec3::Zero();
    }

    /// Uniform sample on the surface (world frame).
    template <typename Rng>
    Vec3 sample_surface(Rng& rng) const
    {
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        auto unit_sphere = [&]() {
            std::normal_distribution<double> n(0.0, 1.0);
            Vec3 v;
            do {
                v = Vec3(n(rng), n(rng), n(rng));
            } while (v.norm() < 1e-12);
            return v.normalized();
        };
        auto disk = [&](double r) {
            const double rad = r * std::sqrt(uni(rng));
            const double th = 2.0 * kPi * uni(rng);
            return std::pair{rad * std::cos(th), rad * std::sin(th)};
        };

        Vec3 local;
        const double r = dimensions[0];
        switch (kind) {
        case PrimitiveKind::sphere:
            local = r * unit_sphere();
            break;
        case PrimitiveKind::capsule: {
            const double side = 2.0 * kPi * r * dimensions[1];
            if (uni(rng) * area() < side) {
                const double th = 2.0 * kPi * uni(rng);
                local = Vec3(r * std::cos(th), r * std::sin(th), (uni(rng) - 0.5) * dimensions[1]);
            }
            else {
                local = r * unit_sphere();
                local.z() += (local.z() >= 0.0 ? 0.5 : -0.5) * dimensions[1];
            }
            break;
        }
        case PrimitiveKind::box: {
            const Vec3 size(dimensions[0], dimensions[1], dimensions[2]);
            const double a_yz = size.y() * size.z(), a_xz = size.x() * size.z(), a_xy = size.x() * size.y();
            const double pick = uni(rng) * (a_yz + a_xz + a_xy);
            const int axis = pick < a_yz ? 0 : (pick < a_yz + a_xz ? 1 : 2);
            local = Vec3((uni(rng) - 0.5) * size.x(), (uni(rng) - 0.5) * size.y(), (uni(rng) - 0.5) * size.z());
            local[axis] = (uni(rng) < 0.5 ? -0.5 : 0.5) * size[axis];
            break;
        }
        case PrimitiveKind::cylinder: {
            const double side = 2.0 * kPi * r * dimensions[1];
            if (uni(rng) * area() < side) {
                const double th = 2.0 * kPi * uni(rng);
                local = Vec3(r * std::cos(th), r * std::sin(th), (uni(rng) - 0.5) * dimensions[1]);
            }
            else {
                auto [x, y] = disk(r);
                local = Vec3(x, y, (uni(rng) < 0.5 ? -0.5 : 0.5) * dimensions[1]);
            }
            break;
        }
        }
        return position + orientation * local;
    }
};

struct PointSet {
    std::vector<Vec3> points;
    std::vector<Vec3> normals; // empty or same length as points

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct AxisAlignedBox {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();
};

class SdfScene {
public:
    static constexpr double kDefaultSurfaceDensity = 2000.0; // points per m^2
    static constexpr double kSurfaceTolerance = 1e-4;

    SdfScene() = default;

    SdfScene(std::string name, SceneCategory category, std::vector<Primitive> primitives,
        double surface_density = kDefaultSurfaceDensity)
        : _name(std::move(name)), _category(category), _primitives(std::move(primitives)), _density(surface_density)
    {
        if (!(surface_density > 0.0))
            throw Error("invalid-scene", "surface density must be positive");
        for (const auto& p : _primitives)
            p.validate();
        if (!_primitives.empty())
            build_caches();
    }

    const std::string& name() const { return _name; }
    SceneCategory category() const { return _category; }
    const std::vector<Primitive>& primitives() const { return _primitives; }
    double surface_density() const { return _density; }
    bool empty() const { return _primitives.empty(); }

    /// Cached surface samples with outward unit normals.
    const PointSet& surface() const { return _surface; }
    const std::vector<std::size_t>& surface_primitive() const { return _surface_primitive; }
    const Vec3& centroid() const { return _centroid; }
    const AxisAlignedBox& bounds() const { return _bounds; }
    double bounding_radius() const { return _bounding_radius; }

    /// Union SDF, positive outside.
    double sdf(const Vec3& p) const
    {
        if (_primitives.empty())
            throw Error("empty-scene");
        double best = std::numeric_limits<double>::infinity();
        for (const auto& prim : _primitives)
            best = std::min(best, prim.sdf(p));
        return best;
    }

    /// Index of the primitive realizing the union minimum; ties go to the lowest index.
    std::size_t closest_primitive(const Vec3& p) const
    {
        if (_primitives.empty())
            throw Error("empty-scene");
        std::size_t best_i = 0;
        double best = _primitives[0].sdf(p);
        for (std::size_t i = 1; i < _primitives.size(); ++i) {
            const double d = _primitives[i].sdf(p);
            if (d < best) {
                best = d;
                best_i = i;
            }
        }
        return best_i;
    }

    /// Central differences (h = 1e-5) on the closest primitive, renormalized.
    Vec3 gradient(const Vec3& p) const
    {
        const Primitive& prim = _primitives[closest_primitive(p)];
        constexpr double h = 1e-5;
        Vec3 g;
        for (int k = 0; k < 3; ++k) {
            Vec3 e = Vec3::Zero();
            e[k] = h;
            g[k] = (prim.sdf(p + e) - prim.sdf(p - e)) / (2.0 * h);
        }
        const double n = g.norm();
        if (!(n > 1e-12))
            throw Error("degenerate-gradient");
        return g / n;
    }

    double friction_at(const Vec3& p) const { return _primitives[closest_primitive(p)].mu; }

private:
    void build_caches()
    {
        double total_volume = 0.0;
        _centroid = Vec3::Zero();
        _bounds.min = Vec3::Constant(std::numeric_limits<double>::infinity());
        _bounds.max = -_bounds.min;
        for (const auto& prim : _primitives) {
            const double v = prim.volume();
            total_volume += v;
            _centroid += v * prim.position;
            const Vec3 half = prim.orientation.toRotationMatrix().cwiseAbs() * prim.local_half_extents();
            _bounds.min = _bounds.min.cwiseMin(prim.position - half);
            _bounds.max = _bounds.max.cwiseMax(prim.position + half);
        }
        _centroid /= total_volume;

        for (std::size_t i = 0; i < _primitives.size(); ++i) {
            const auto& prim = _primitives[i];
            std::mt19937_64 rng(0x5eed0000ULL + i);
            const auto count = static_cast<std::size_t>(std::max(1.0, std::ceil(prim.area() * _density)));
            for (std::size_t k = 0; k < count; ++k) {
                const Vec3 x = prim.sample_surface(rng);
                // Drop samples buried inside another primitive of the union.
                if (std::abs(sdf(x)) > kSurfaceTolerance)
                    continue;
                Vec3 n;
                try {
                    n = gradient(x);
                }
                catch (const Error&) {
                    continue;
                }
                _surface.points.push_back(x);
                _surface.normals.push_back(n);
                _surface_primitive.push_back(i);
            }
        }

        _bounding_radius = 0.0;
        for (const auto& x : _surface.points)
            _bounding_radius = std::max(_bounding_radius, (x - _centroid).norm());
    }

    std::string _name;
    SceneCategory _category = SceneCategory::object;
    std::vector<Primitive> _primitives;
    double _density = kDefaultSurfaceDensity;
    PointSet _surface;
    std::vector<std::size_t> _surface_primitive;
    Vec3 _centroid = Vec3::Zero();
    AxisAlignedBox _bounds;
    double _bounding_radius = 0.0;
};

inline double sdf_eval(const SdfScene& scene, const Vec3& point) { return scene.sdf(point); }

inline Vec3 sdf_gradient(const SdfScene& scene, const Vec3& point) { return scene.gradient(point); }

/// For every query point, ascending indices of targets within radius (inclusive).
inline std::vector<std::vector<std::size_t>> ball_query(
    const std::vector<Vec3>& queries, const std::vector<Vec3>& targets, double radius)
{
    if (!(radius > 0.0))
        throw Error("invalid-radius");
    const double r2 = radius * radius;
    std::vector<std::vector<std::size_t>> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i)
        for (std::size_t j = 0; j < targets.size(); ++j)
            if ((queries[i] - targets[j]).squaredNorm() <= r2)
                out[i].push_back(j);
    return out;
}

inline std::vector<std::vector<std::size_t>> ball_query(const PointSet& queries, const PointSet& targets, double radius)
{
    return ball_query(queries.points, targets.points, radius);
}

/// Greedy max-min selection over `size` items under an arbitrary distance
/// `dist(i, j)`, starting at seed_index; ties resolve to the lowest index.
template <typename Distance>
std::vector<std::size_t> farthest_point_sample_by(std::size_t size, std::size_t n, std::size_t seed_index, Distance&& dist)
{
    if (size == 0)
        throw Error("empty-pointset");
    if (seed_index >= size)
        throw Error("invalid-seed-index");
    const std::size_t count = std::min(n, size);
    std::vector<std::size_t> picked;
    picked.reserve(count);
    if (count == 0)
        return picked;

    std::vector<double> min_dist(size, std::numeric_limits<double>::infinity());
    std::size_t current = seed_index;
    for (;;) {
        picked.push_back(current);
        min_dist[current] = -1.0;
        if (picked.size() == count)
            break;
        std::size_t next = size;
        double best = -1.0;
        for (std::size_t i = 0; i < size; ++i) {
            if (min_dist[i] < 0.0)
                continue;
            min_dist[i] = std::min(min_dist[i], static_cast<double>(dist(i, current)));
            if (min_dist[i] > best) {
                best = min_dist[i];
                next = i;
            }
        }
        current = next;
    }
    return picked;
}

inline std::vector<std::size_t> farthest_point_sample(const std::vector<Vec3>& points, std::size_t n, std::size_t seed_index)
{
    return farthest_point_sample_by(points.size(), n, seed_index,
        [&](std::size_t i, std::size_t j) { return (points[i] - points[j]).squaredNorm(); });
}

inline std::vector<std::size_t> farthest_point_sample(const PointSet& points, std::size_t n, std::size_t seed_index)
{
    return farthest_point_sample(points.points, n, seed_index);
}

/// Index of the point nearest to `target` (lowest index on ties).
inline std::size_t nearest_index(const std::vector<Vec3>& points, const Vec3& target)
{
    if (points.empty())
        throw Error("empty-pointset");
    std::size_t best_i = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = (points[i] - target).squaredNorm();
        if (d < best) {
            best = d;
            best_i = i;
        }
    }
    return best_i;
}

} // namespace graspevo

#endif
