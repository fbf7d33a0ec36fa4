#ifndef GRASPEVO_METRICS_HPP
#define GRASPEVO_METRICS_HPP

#include <graspevo/error.hpp>
#include <graspevo/evaluator.hpp>
#include <graspevo/math.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace graspevo {

inline double success_rate(const std::vector<bool>& successes)
{
    if (successes.empty())
        throw Error("no-grasps");
    const auto n = std::count(successes.begin(), successes.end(), true);
    return static_cast<double>(n) / static_cast<double>(successes.size());
}

struct DsgResolution {
    double delta_r = 0.02;   // m
    double delta_phi = 0.0;  // rad
    double delta_q = 0.0;    // rad
    std::string label;

    void validate() const
    {
        if (!(delta_r > 0.0 && delta_phi > 0.0 && delta_q > 0.0))
            throw Error("invalid-resolution");
    }
};

inline double degrees(double deg) { return deg * kPi / 180.0; }

/// The three reporting resolutions, coarse to fine.
inline std::vector<DsgResolution> standard_resolutions()
{
    return {
        {0.20, degrees(90.0), degrees(90.0), "DSG@(20cm,90°,90°)"},
        {0.02, degrees(45.0), degrees(45.0), "DSG@(2cm,45°,45°)"},
        {0.01, degrees(5.0), degrees(5.0), "DSG@(1cm,5°,5°)"},
    };
}

/// Floor-quantized cell of a grasp: position / delta_r, euler / delta_phi, q / delta_q.
inline std::vector<std::int64_t> dsg_cell(const Grasp& g, const DsgResolution& res)
{
    std::vector<std::int64_t> key;
    key.reserve(6 + static_cast<std::size_t>(g.q.size()));
    for (int k = 0; k < 3; ++k)
        key.push_back(static_cast<std::int64_t>(std::floor(g.wrist.position[k] / res.delta_r)));
    const Euler e = g.wrist.euler();
    for (double a : {e.roll, e.pitch, e.yaw})
        key.push_back(static_cast<std::int64_t>(std::floor(a / res.delta_phi)));
    for (Eigen::Index j = 0; j < g.q.size(); ++j)
        key.push_back(static_cast<std::int64_t>(std::floor(g.q[j] / res.delta_q)));
    return key;
}

/// Number of distinct occupied quantization cells.
inline std::size_t distinct_stable_grasps(std::span<const Grasp> grasps, const DsgResolution& res)
{
    res.validate();
    std::set<std::vector<std::int64_t>> cells;
    for (const auto& g : grasps)
        cells.insert(dsg_cell(g, res));
    return cells.size();
}

/// Fixed histogram ranges for the entropy estimate.
struct EntropyRanges {
    Vec3 position_min = Vec3::Constant(-0.5);
    Vec3 position_max = Vec3::Constant(0.5);
    VecX joint_min;
    VecX joint_max;

    /// Scene bounding box plus a 10 cm margin; joint limit ranges.
    static EntropyRanges for_scene(const SdfScene& scene, const HandModel& hand, double margin = 0.10)
    {
        EntropyRanges r;
        r.position_min = scene.bounds().min - Vec3::Constant(margin);
        r.position_max = scene.bounds().max + Vec3::Constant(margin);
        r.joint_min = hand.q_min();
        r.joint_max = hand.q_max();
        return r;
    }
};

struct EntropyReport {
    double position = 0.0;
    double orientation = 0.0;
    double joints = 0.0;
    double mean = 0.0;
    std::vector<double> per_dimension; // x, y, z, roll, pitch, yaw, q...
};

/// Shannon entropy (nats) of a fixed-range histogram of `values`.
inline double histogram_entropy(std::span<const double> values, double lo, double hi, std::size_t bins)
{
    if (values.empty() || bins == 0)
        return 0.0;
    std::vector<std::size_t> counts(bins, 0);
    const double width = hi - lo;
    for (double v : values) {
        double u = width > 0.0 ? (v - lo) / width : 0.0;
        auto b = static_cast<std::int64_t>(std::floor(u * static_cast<double>(bins)));
        b = std::clamp<std::int64_t>(b, 0, static_cast<std::int64_t>(bins) - 1);
        ++counts[static_cast<std::size_t>(b)];
    }
    double h = 0.0;
    const double n = static_cast<double>(values.size());
    for (std::size_t c : counts) {
        if (c == 0)
            continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return std::max(0.0, h);
}

/// Product-of-marginals histogram entropy per component group, averaged over
/// the dimensions of the group; `mean` averages the three groups.
inline EntropyReport marginal_entropies(std::span<const Grasp> grasps, const EntropyRanges& ranges,
    std::size_t bins_per_dim = 16)
{
    EntropyReport rep;
    if (grasps.empty())
        return rep;
    const auto nq = grasps.front().q.size();
    std::vector<std::vector<double>> columns(6 + static_cast<std::size_t>(nq));
    for (const auto& g : grasps) {
        const Euler e = g.wrist.euler();
        for (int k = 0; k < 3; ++k)
            columns[static_cast<std::size_t>(k)].push_back(g.wrist.position[k]);
        columns[3].push_back(e.roll);
        columns[4].push_back(e.pitch);
        columns[5].push_back(e.yaw);
        for (Eigen::Index j = 0; j < nq; ++j)
            columns[6 + static_cast<std::size_t>(j)].push_back(j < g.q.size() ? g.q[j] : 0.0);
    }
    for (std::size_t d = 0; d < columns.size(); ++d) {
        double lo = 0.0, hi = 0.0;
        if (d < 3) {
            lo = ranges.position_min[static_cast<Eigen::Index>(d)];
            hi = ranges.position_max[static_cast<Eigen::Index>(d)];
        }
        else if (d < 6) {
            lo = -kPi;
            hi = kPi;
        }
        else {
            const auto j = static_cast<Eigen::Index>(d - 6);
            lo = j < ranges.joint_min.size() ? ranges.joint_min[j] : -kPi;
            hi = j < ranges.joint_max.size() ? ranges.joint_max[j] : kPi;
        }
        rep.per_dimension.push_back(histogram_entropy(columns[d], lo, hi, bins_per_dim));
    }
    auto avg = [&](std::size_t from, std::size_t to) {
        if (to <= from)
            return 0.0;
        double s = 0.0;
        for (std::size_t d = from; d < to; ++d)
            s += rep.per_dimension[d];
        return s / static_cast<double>(to - from);
    };
    rep.position = avg(0, 3);
    rep.orientation = avg(3, 6);
    rep.joints = avg(6, rep.per_dimension.size());
    rep.mean = (rep.position + rep.orientation + rep.joints) / 3.0;
    return rep;
}

struct MetricsReport {
    std::size_t total = 0;
    std::size_t successes = 0;
    double success_rate = 0.0;
    std::vector<std::pair<std::string, std::size_t>> dsg; // label -> count, coarse to fine
    EntropyReport entropy;
};

/// Report over a batch: success rate of all grasps, DSG and entropies of the successful ones.
inline MetricsReport metrics_report(std::span<const Grasp> grasps, const std::vector<bool>& successes,
    const EntropyRanges& ranges, std::size_t bins_per_dim = 16)
{
    if (grasps.size() != successes.size())
        throw Error("invalid-input", "grasp and success counts differ");
    MetricsReport r;
    r.total = grasps.size();
    r.success_rate = success_rate(successes);
    std::vector<Grasp> ok;
    for (std::size_t i = 0; i < grasps.size(); ++i)
        if (successes[i])
            ok.push_back(grasps[i]);
    r.successes = ok.size();
    for (const auto& res : standard_resolutions())
        r.dsg.emplace_back(res.label, distinct_stable_grasps(ok, res));
    r.entropy = marginal_entropies(ok, ranges, bins_per_dim);
    return r;
}

} // namespace graspevo

#endif
