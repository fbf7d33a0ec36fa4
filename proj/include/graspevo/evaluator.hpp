#ifndef GRASPEVO_EVALUATOR_HPP
#define GRASPEVO_EVALUATOR_HPP

#include <graspevo/error.hpp>
#include <graspevo/geometry.hpp>
#include <graspevo/hand_model.hpp>
#include <graspevo/lp.hpp>
#include <graspevo/math.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace graspevo {

/// The evolved individual: wrist pose, joint vector and closing command.
struct Grasp {
    WristPose wrist;
    VecX q;
    VecX dq_cmd;

    HandState state() const { return {wrist, q}; }
};

struct EvalConfig {
    double w_lifetime = 1.0;
    double w_dis = 1.0;
    double w_pen = 100.0;
    double w_reward = 0.0;
    double delta_offset = 0.003;          // m
    double r_ball = 0.025;                // m
    std::size_t n_c = 12;
    int t_dir = 10;                       // steps per disturbance direction
    double disturbance_force = 5.0;       // N, reached on the last step of a direction
    double pen_terminate_threshold = 0.02; // m
    SceneCategory category = SceneCategory::object;

    double dq_cmd_cap = 1.0;        // rad, norm bound of the closing command
    double f_max = 10.0;            // N, normal force cap per contact
    int cone_facets = 8;
    double contact_tolerance = 0.025; // m, fingertip gap up to which an active contact bears load; r_ball admits all
    int closing_steps = 40;

    int depenetration_steps = 2;
    double depenetration_alpha = 0.15;
    double clip_translation = 0.1;
    double clip_orientation = 0.05;
    double clip_joints = 0.5;

    void validate() const
    {
        if (w_lifetime < 0 || w_dis < 0 || w_pen < 0 || w_reward < 0)
            throw Error("invalid-config", "fitness weights must be nonnegative");
        if (!(delta_offset > 0.0))
            throw Error("invalid-config", "delta_offset must be positive");
        if (t_dir < 1)
            throw Error("invalid-config", "t_dir must be >= 1");
        if (!(r_ball > 0.0) || cone_facets < 4 || closing_steps < 1)
            throw Error("invalid-config");
    }

    /// Largest attainable lifetime for the configured category.
    int max_lifetime() const { return category == SceneCategory::handle ? t_dir : 6 * t_dir; }
};

struct ActiveContact {
    Vec3 point = Vec3::Zero();  // on the object surface
    Vec3 normal = Vec3::UnitZ(); // outward object normal
    std::size_t link = 0;       // owning hand link
    std::size_t surface_index = 0;
    std::size_t fingertip_index = 0;
    double hand_gap = 0.0; // signed object distance of the paired fingertip sample
    double mu = 0.0;
};

struct ContactSet {
    std::vector<std::size_t> candidates; // ascending surface indices
    std::vector<double> candidate_distances; // distance to the nearest fingertip sample
    std::vector<ActiveContact> active;
};

struct FitnessBreakdown {
    int e_lifetime = 0;
    double e_dis = 0.0;
    double e_pen = 0.0;
    double e_reward = 0.0;
    double total = 0.0;
};

inline double fitness_total(const FitnessBreakdown& f, const EvalConfig& cfg)
{
    return cfg.w_lifetime * f.e_lifetime - cfg.w_dis * f.e_dis - cfg.w_pen * f.e_pen + cfg.w_reward * f.e_reward;
}

/// Maps a grasp to its preference term E_reward (already bias-corrected).
using RewardFn = std::function<double(const Grasp&)>;

// ---------------------------------------------------------------------------
// Contacts and closing command

inline ContactSet select_contacts(const SdfScene& scene, const HandWorld& hand, const EvalConfig& cfg)
{
    ContactSet cs;
    const auto& surface = scene.surface();
    if (hand.fingertip_samples.empty() || surface.empty())
        return cs;

    const auto hits = ball_query(hand.fingertip_samples, surface.points, cfg.r_ball);
    std::vector<char> is_candidate(surface.size(), 0);
    for (const auto& list : hits)
        for (std::size_t j : list)
            is_candidate[j] = 1;
    for (std::size_t j = 0; j < surface.size(); ++j) {
        if (!is_candidate[j])
            continue;
        cs.candidates.push_back(j);
        const std::size_t f = nearest_index(hand.fingertip_samples, surface.points[j]);
        cs.candidate_distances.push_back((hand.fingertip_samples[f] - surface.points[j]).norm());
    }
    if (cs.candidates.empty())
        return cs;

    std::vector<Vec3> cand_points;
    cand_points.reserve(cs.candidates.size());
    for (std::size_t j : cs.candidates)
        cand_points.push_back(surface.points[j]);
    const std::size_t seed = nearest_index(cand_points, hand.palm_center);
    for (std::size_t k : farthest_point_sample(cand_points, cfg.n_c, seed)) {
        const std::size_t j = cs.candidates[k];
        ActiveContact c;
        c.surface_index = j;
        c.point = surface.points[j];
        c.normal = surface.normals[j];
        c.fingertip_index = nearest_index(hand.fingertip_samples, c.point);
        c.link = hand.fingertip_link[c.fingertip_index];
        c.hand_gap = scene.sdf(hand.fingertip_samples[c.fingertip_index]);
        c.mu = scene.primitives()[scene.surface_primitive()[j]].mu;
        cs.active.push_back(c);
    }
    return cs;
}

/// Minimum-norm least-squares solution of J x = b (pseudo-inverse semantics).
inline VecX min_norm_least_squares(const MatX& jac, const VecX& b)
{
    if (jac.rows() == 0 || jac.cols() == 0)
        return VecX::Zero(jac.cols());
    Eigen::CompleteOrthogonalDecomposition<MatX> cod(jac);
    return cod.solve(b);
}

/// argmin ||J dq - N_o||, minimum norm, rescaled so that ||dq|| <= cap.
inline VecX solve_closing_command(const MatX& jac, const VecX& desired, double cap = 1.0)
{
    if (jac.rows() != desired.size())
        throw Error("invalid-system", "Jacobian rows and target size differ");
    VecX dq = min_norm_least_squares(jac, desired);
    const double n = dq.norm();
    if (n > cap && n > 0.0)
        dq *= cap / n;
    return dq;
}

/// Desired contact motion: unit inward normal per contact, stacked.
inline VecX desired_normal_vector(const std::vector<ActiveContact>& contacts)
{
    VecX n(3 * static_cast<Eigen::Index>(contacts.size()));
    for (std::size_t i = 0; i < contacts.size(); ++i)
        n.segment<3>(3 * static_cast<Eigen::Index>(i)) = -contacts[i].normal;
    return n;
}

inline std::vector<LinkPoint> contact_link_points(const std::vector<ActiveContact>& contacts)
{
    std::vector<LinkPoint> lp;
    lp.reserve(contacts.size());
    for (const auto& c : contacts)
        lp.push_back({c.point, c.link});
    return lp;
}

/// Recomputes contacts at the grasp's current configuration and stores a
/// fresh closing command.
inline Grasp assign_closing_command(const SdfScene& scene, const HandModel& hand, Grasp g, const EvalConfig& cfg)
{
    g.q = hand.clamp(g.q);
    const HandWorld world = forward_kinematics(hand, g.state());
    const ContactSet cs = select_contacts(scene, world, cfg);
    const MatX jac = contact_jacobian(hand, world, contact_link_points(cs.active));
    g.dq_cmd = solve_closing_command(jac, desired_normal_vector(cs.active), cfg.dq_cmd_cap);
    return g;
}

// ---------------------------------------------------------------------------
// Friction-cone feasibility

using Wrench = Eigen::Matrix<double, 6, 1>;

struct WrenchProblem {
    int cone_facets = 8;
    double f_max = 10.0;
    Vec3 center = Vec3::Zero(); // moment reference (object center of mass)
    double slack_tolerance = 1e-7;
};

/// Linearized cone edge directions at a contact: inward normal plus mu times
/// evenly spaced tangents; each edge has unit normal component.
inline std::vector<Vec3> friction_cone_edges(const Vec3& outward_normal, double mu, int facets)
{
    const Vec3 inward = -outward_normal.normalized();
    const Vec3 helper = std::abs(inward.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 t1 = inward.cross(helper).normalized();
    const Vec3 t2 = inward.cross(t1);
    std::vector<Vec3> edges;
    edges.reserve(static_cast<std::size_t>(facets));
    for (int k = 0; k < facets; ++k) {
        const double th = 2.0 * kPi * k / facets;
        edges.push_back(inward + mu * (std::cos(th) * t1 + std::sin(th) * t2));
    }
    return edges;
}

/// Whether nonnegative cone-edge forces (normal force <= f_max per contact)
/// can cancel `external` about problem.center. `mu` overrides the per-contact
/// friction when set. Throws "lp-failed" on solver breakdown.
inline bool wrench_resist_feasible(std::span<const ActiveContact> contacts, std::optional<double> mu,
    const Wrench& external, const WrenchProblem& problem = {})
{
    if (problem.cone_facets < 4)
        throw Error("invalid-config", "cone_facets must be >= 4");
    if (contacts.empty())
        return external.isZero(0.0);

    const auto m = static_cast<Eigen::Index>(problem.cone_facets);
    const auto nc = static_cast<Eigen::Index>(contacts.size());
    MatX a_eq(6, nc * m);
    MatX a_le = MatX::Zero(nc, nc * m);
    for (Eigen::Index i = 0; i < nc; ++i) {
        const auto& c = contacts[static_cast<std::size_t>(i)];
        const auto edges = friction_cone_edges(c.normal, mu.value_or(c.mu), problem.cone_facets);
        const Vec3 lever = c.point - problem.center;
        for (Eigen::Index k = 0; k < m; ++k) {
            const Vec3& f = edges[static_cast<std::size_t>(k)];
            a_eq.block<3, 1>(0, i * m + k) = f;
            a_eq.block<3, 1>(3, i * m + k) = lever.cross(f);
            a_le(i, i * m + k) = 1.0;
        }
    }
    const VecX b_le = VecX::Constant(nc, problem.f_max);
    return lp::find_feasible(a_eq, -external, a_le, b_le, problem.slack_tolerance).feasible;
}

inline bool wrench_resist_feasible(const ContactSet& contacts, double mu, const Wrench& external, int cone_facets,
    const WrenchProblem& base = {})
{
    WrenchProblem p = base;
    p.cone_facets = cone_facets;
    return wrench_resist_feasible(contacts.active, mu, external, p);
}

// ---------------------------------------------------------------------------
// Penetration

/// Sum of max(0, delta - s) over signed separations (positive = separated).
inline double penetration_sum(std::span<const double> separations, double delta)
{
    double e = 0.0;
    for (double s : separations)
        e += std::max(0.0, delta - s);
    return e;
}

struct PenetrationReport {
    double energy = 0.0;
    double max_depth = 0.0; // deepest interpenetration, >= 0
    std::vector<double> hand_separations;   // per collision sphere vs the scene SDF
    std::vector<double> object_separations; // per surface point vs the hand spheres
};

inline PenetrationReport penetration(const HandWorld& hand, const SdfScene& scene, double delta)
{
    PenetrationReport r;
    r.hand_separations.reserve(hand.sphere_centers.size());
    for (std::size_t k = 0; k < hand.sphere_centers.size(); ++k)
        r.hand_separations.push_back(scene.sdf(hand.sphere_centers[k]) - hand.sphere_radii[k]);

    const auto& pts = scene.surface().points;
    r.object_separations.reserve(pts.size());
    for (const auto& x : pts) {
        double sep = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < hand.sphere_centers.size(); ++k)
            sep = std::min(sep, (x - hand.sphere_centers[k]).norm() - hand.sphere_radii[k]);
        r.object_separations.push_back(sep);
    }
    r.energy = penetration_sum(r.object_separations, delta) + penetration_sum(r.hand_separations, delta);
    for (double s : r.hand_separations)
        r.max_depth = std::max(r.max_depth, -s);
    for (double s : r.object_separations)
        r.max_depth = std::max(r.max_depth, -s);
    return r;
}

inline double penetration_energy(const HandWorld& hand, const SdfScene& scene, double delta)
{
    return penetration(hand, scene, delta).energy;
}

// ---------------------------------------------------------------------------
// De-penetration

/// Flat decision vector [position(3), euler(3), q(n_q)].
inline VecX pose_vector(const Grasp& g)
{
    VecX x(6 + g.q.size());
    const Euler e = g.wrist.euler();
    x.head<3>() = g.wrist.position;
    x.segment<3>(3) = Vec3(e.roll, e.pitch, e.yaw);
    x.tail(g.q.size()) = g.q;
    return x;
}

inline Grasp grasp_from_pose_vector(const VecX& x, const HandModel& hand, const VecX& dq_cmd)
{
    Grasp g;
    g.wrist = WristPose::from_euler(x.head<3>(), Euler{x[3], x[4], x[5]});
    g.q = hand.clamp(x.tail(x.size() - 6));
    g.dq_cmd = dq_cmd;
    return g;
}

inline double grasp_penetration_energy(const SdfScene& scene, const HandModel& hand, const Grasp& g, double delta)
{
    HandState s{g.wrist, hand.clamp(g.q)};
    return penetration_energy(forward_kinematics(hand, s), scene, delta);
}

struct DepenetrationStep {
    VecX gradient; // raw finite-difference gradient
    VecX applied;  // change applied to the decision vector
    double energy_before = 0.0;
};

/// One step: x -= alpha * clip(grad E_pen), per-block clip bounds.
inline DepenetrationStep depenetration_step(const SdfScene& scene, const HandModel& hand, const Grasp& g,
    const EvalConfig& cfg)
{
    const VecX x = pose_vector(g);
    auto energy = [&](const VecX& v) {
        return grasp_penetration_energy(scene, hand, grasp_from_pose_vector(v, hand, g.dq_cmd), cfg.delta_offset);
    };
    DepenetrationStep step;
    step.energy_before = energy(x);
    step.gradient = VecX::Zero(x.size());
    constexpr double h = 1e-5;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        VecX xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        step.gradient[i] = (energy(xp) - energy(xm)) / (2.0 * h);
    }
    step.applied = VecX(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double bound = i < 3 ? cfg.clip_translation : (i < 6 ? cfg.clip_orientation : cfg.clip_joints);
        step.applied[i] = -cfg.depenetration_alpha * std::clamp(step.gradient[i], -bound, bound);
    }
    return step;
}

inline Grasp depenetrate(const Grasp& grasp, const SdfScene& scene, const HandModel& hand, const EvalConfig& cfg)
{
    Grasp g = grasp;
    g.q = hand.clamp(g.q);
    for (int it = 0; it < cfg.depenetration_steps; ++it) {
        if (grasp_penetration_energy(scene, hand, g, cfg.delta_offset) == 0.0)
            break;
        const DepenetrationStep step = depenetration_step(scene, hand, g, cfg);
        g = grasp_from_pose_vector(pose_vector(g) + step.applied, hand, g.dq_cmd);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Closing and the disturbance protocol

/// Drives each digit from q toward clamp(q + dq_cmd) in equal increments and
/// halts a digit at the last increment before its collision spheres would
/// sink deeper than max(delta, initial depth) into the object.
inline VecX close_hand(const SdfScene& scene, const HandModel& hand, const Grasp& g, const EvalConfig& cfg)
{
    const VecX q0 = hand.clamp(g.q);
    if (g.dq_cmd.size() != q0.size())
        return q0;
    const VecX target = hand.clamp(q0 + g.dq_cmd);
    const std::size_t nq = hand.n_q();

    std::vector<int> digit_of_joint(nq);
    int n_digits = 0;
    for (std::size_t j = 0; j < nq; ++j) {
        digit_of_joint[j] = hand.digit_of_link(hand.link_of_joint(j));
        n_digits = std::max(n_digits, digit_of_joint[j] + 1);
    }

    auto digit_depths = [&](const VecX& q) {
        const HandWorld w = forward_kinematics(hand, {g.wrist, q});
        std::vector<double> depth(static_cast<std::size_t>(n_digits), 0.0);
        for (std::size_t k = 0; k < w.sphere_centers.size(); ++k) {
            const int d = hand.digit_of_link(w.sphere_link[k]);
            if (d < 0)
                continue;
            const double pen = -(scene.sdf(w.sphere_centers[k]) - w.sphere_radii[k]);
            depth[static_cast<std::size_t>(d)] = std::max(depth[static_cast<std::size_t>(d)], pen);
        }
        return depth;
    };

    const std::vector<double> initial = digit_depths(q0);
    std::vector<char> stopped(static_cast<std::size_t>(n_digits), 0);
    VecX q = q0;
    for (int s = 1; s <= cfg.closing_steps; ++s) {
        const double t = static_cast<double>(s) / cfg.closing_steps;
        VecX trial = q;
        for (std::size_t j = 0; j < nq; ++j) {
            const int d = digit_of_joint[j];
            if (d < 0 || !stopped[static_cast<std::size_t>(d)])
                trial[static_cast<Eigen::Index>(j)] = q0[static_cast<Eigen::Index>(j)]
                    + t * (target[static_cast<Eigen::Index>(j)] - q0[static_cast<Eigen::Index>(j)]);
        }
        trial = hand.clamp(trial); // interpolation can overshoot a limit by rounding
        const std::vector<double> depth = digit_depths(trial);
        for (std::size_t d = 0; d < depth.size(); ++d) {
            if (stopped[d])
                continue;
            if (depth[d] > std::max(cfg.delta_offset, initial[d])) {
                stopped[d] = 1;
                for (std::size_t j = 0; j < nq; ++j)
                    if (digit_of_joint[j] == static_cast<int>(d))
                        trial[static_cast<Eigen::Index>(j)] = q[static_cast<Eigen::Index>(j)];
            }
        }
        q = trial;
    }
    return q;
}

struct Evaluation {
    FitnessBreakdown fitness;
    bool success = false;
    bool terminated_early = false;
    std::array<int, 6> direction_steps{}; // +x, -x, +y, -y, +z, -z
    VecX q_closed;
    ContactSet contacts;
};

inline const std::array<Vec3, 6>& disturbance_directions()
{
    static const std::array<Vec3, 6> dirs = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY(),
        Vec3::UnitZ(), -Vec3::UnitZ()};
    return dirs;
}

/// Quasi-static fitness oracle. Each direction is ramped over t_dir steps,
/// step s pulling with disturbance_force * s / t_dir; counting in a direction
/// stops at its first unresisted step.
inline Evaluation evaluate(const SdfScene& scene, const HandModel& hand, const Grasp& grasp, const EvalConfig& cfg,
    const RewardFn* reward = nullptr)
{
    Evaluation ev;
    ev.q_closed = close_hand(scene, hand, grasp, cfg);
    const HandWorld world = forward_kinematics(hand, {grasp.wrist, ev.q_closed});
    const PenetrationReport pen = penetration(world, scene, cfg.delta_offset);
    ev.fitness.e_pen = pen.energy;
    ev.contacts = select_contacts(scene, world, cfg);

    if (!ev.contacts.active.empty()) {
        double sum = 0.0;
        for (const auto& c : ev.contacts.active)
            sum += std::abs(c.hand_gap);
        ev.fitness.e_dis = sum / static_cast<double>(ev.contacts.active.size());
    }
    else if (!world.fingertip_samples.empty()) {
        double sum = 0.0;
        for (const auto& f : world.fingertip_samples)
            sum += std::abs(scene.sdf(f));
        ev.fitness.e_dis = sum / static_cast<double>(world.fingertip_samples.size());
    }

    if (pen.max_depth > cfg.pen_terminate_threshold) {
        ev.terminated_early = true;
    }
    else {
        std::vector<ActiveContact> bearing;
        for (const auto& c : ev.contacts.active)
            if (std::abs(c.hand_gap) <= cfg.contact_tolerance)
                bearing.push_back(c);

        WrenchProblem problem;
        problem.cone_facets = cfg.cone_facets;
        problem.f_max = cfg.f_max;
        problem.center = scene.centroid();

        const auto& dirs = disturbance_directions();
        for (std::size_t d = 0; d < dirs.size(); ++d) {
            if (cfg.category == SceneCategory::handle && d != 5)
                continue;
            int survived = 0;
            if (!bearing.empty()) {
                for (int s = 1; s <= cfg.t_dir; ++s) {
                    Wrench w = Wrench::Zero();
                    w.head<3>() = dirs[d] * (cfg.disturbance_force * s / cfg.t_dir);
                    bool ok = false;
                    try {
                        ok = wrench_resist_feasible(bearing, std::nullopt, w, problem);
                    }
                    catch (const Error&) {
                        ok = false;
                    }
                    if (!ok)
                        break;
                    ++survived;
                }
            }
            ev.direction_steps[d] = survived;
            ev.fitness.e_lifetime += survived;
        }
        if (cfg.category == SceneCategory::handle) {
            ev.success = ev.direction_steps[5] == cfg.t_dir;
        }
        else {
            for (std::size_t axis = 0; axis < 3; ++axis)
                if (ev.direction_steps[2 * axis] == cfg.t_dir && ev.direction_steps[2 * axis + 1] == cfg.t_dir)
                    ev.success = true;
        }
    }

    if (cfg.w_reward != 0.0 && reward != nullptr && *reward)
        ev.fitness.e_reward = (*reward)(grasp);
    ev.fitness.total = fitness_total(ev.fitness, cfg);
    return ev;
}

} // namespace graspevo

#endif
