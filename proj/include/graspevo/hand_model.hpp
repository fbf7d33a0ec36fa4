#ifndef GRASPEVO_HAND_MODEL_HPP
#define GRASPEVO_HAND_MODEL_HPP

#include <graspevo/error.hpp>
#include <graspevo/math.hpp>

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace graspevo {

struct CollisionSphere {
    Vec3 offset = Vec3::Zero();
    double radius = 0.01;
};

/// One rigid link. A link with a non-zero axis carries a revolute joint that
/// rotates it relative to its parent about `axis`, expressed in the frame
/// obtained after applying `origin`. Parent -1 means attached to the wrist.
struct HandLink {
    std::string name;
    int parent = -1;
    Transform origin = Transform::Identity();
    Vec3 axis = Vec3::Zero();
    double q_min = 0.0;
    double q_max = 0.0;
    std::vector<CollisionSphere> spheres;
    std::vector<Vec3> keypoints;
    std::vector<Vec3> fingertip_samples;

    bool actuated() const { return axis.squaredNorm() > 0.0; }
};

struct WristPose {
    Vec3 position = Vec3::Zero();
    Quat orientation = Quat::Identity();

    Euler euler() const { return euler_from_quaternion(orientation); }

    static WristPose from_euler(const Vec3& position, const Euler& e) { return {position, quaternion_from_euler(e)}; }

    Transform transform() const { return make_transform(position, orientation); }
};

struct HandState {
    WristPose wrist;
    VecX q;
};

/// World-frame quantities produced by forward kinematics.
struct HandWorld {
    std::vector<Transform> link_transforms;
    std::vector<Vec3> joint_origins; // per joint index
    std::vector<Vec3> joint_axes;    // per joint index, unit
    std::vector<Vec3> keypoints;
    std::vector<Vec3> sphere_centers;
    std::vector<double> sphere_radii;
    std::vector<std::size_t> sphere_link;
    std::vector<Vec3> fingertip_samples;
    std::vector<std::size_t> fingertip_link;
    Vec3 palm_center = Vec3::Zero();
    Vec3 palm_normal = Vec3::UnitZ();
};

class HandModel {
public:
    HandModel() = default;

    /// Links must be listed parents-first (parent index < own index); this
    /// makes the link graph a forest rooted at the wrist.
    HandModel(std::string name, std::vector<HandLink> links, Vec3 palm_center = Vec3::Zero(),
        Vec3 palm_normal = Vec3::UnitZ())
        : _name(std::move(name)), _links(std::move(links)), _palm_center(palm_center),
          _palm_normal(palm_normal.normalized())
    {
        validate();
        _joint_of_link.assign(_links.size(), -1);
        _ancestor_joints.resize(_links.size());
        for (std::size_t i = 0; i < _links.size(); ++i) {
            const auto& l = _links[i];
            if (l.parent >= 0)
                _ancestor_joints[i] = _ancestor_joints[static_cast<std::size_t>(l.parent)];
            if (l.actuated()) {
                _joint_of_link[i] = static_cast<int>(_joint_link.size());
                _joint_link.push_back(i);
                _ancestor_joints[i].push_back(static_cast<std::size_t>(_joint_of_link[i]));
                _q_min.push_back(l.q_min);
                _q_max.push_back(l.q_max);
            }
            _keypoint_count += l.keypoints.size();
        }
    }

    const std::string& name() const { return _name; }
    const std::vector<HandLink>& links() const { return _links; }
    std::size_t n_q() const { return _joint_link.size(); }
    std::size_t keypoint_count() const { return _keypoint_count; }
    const Vec3& palm_center() const { return _palm_center; }
    const Vec3& palm_normal() const { return _palm_normal; }

    VecX q_min() const { return Eigen::Map<const VecX>(_q_min.data(), static_cast<Eigen::Index>(_q_min.size())); }
    VecX q_max() const { return Eigen::Map<const VecX>(_q_max.data(), static_cast<Eigen::Index>(_q_max.size())); }
    VecX q_range() const { return q_max() - q_min(); }

    /// Joint index owned by a link, or -1 for fixed links.
    int joint_of_link(std::size_t link) const { return _joint_of_link.at(link); }
    std::size_t link_of_joint(std::size_t joint) const { return _joint_link.at(joint); }

    /// Joints whose motion moves `link`, root first.
    const std::vector<std::size_t>& joint_chain(std::size_t link) const { return _ancestor_joints.at(link); }

    /// Root joint of the chain moving `link` (identifies the digit), or -1 for links fixed to the wrist.
    int digit_of_link(std::size_t link) const
    {
        const auto& chain = joint_chain(link);
        return chain.empty() ? -1 : static_cast<int>(chain.front());
    }

    VecX clamp(const VecX& q) const { return q.cwiseMax(q_min()).cwiseMin(q_max()); }

    bool within_limits(const VecX& q) const
    {
        if (static_cast<std::size_t>(q.size()) != n_q())
            return false;
        for (std::size_t j = 0; j < n_q(); ++j) {
            const double v = q[static_cast<Eigen::Index>(j)];
            if (!(v >= _q_min[j] && v <= _q_max[j]))
                return false;
        }
        return true;
    }

    VecX zero_configuration() const { return clamp(VecX::Zero(static_cast<Eigen::Index>(n_q()))); }

    static HandModel parametric_default();

private:
    void validate() const
    {
        for (std::size_t i = 0; i < _links.size(); ++i) {
            const auto& l = _links[i];
            if (l.parent >= static_cast<int>(i) || l.parent < -1)
                throw Error("invalid-hand", "link '" + l.name + "' must list its parent earlier");
            if (l.actuated()) {
                if (std::abs(l.axis.norm() - 1.0) > 1e-9)
                    throw Error("invalid-hand", "joint axis of '" + l.name + "' is not unit length");
                if (!(l.q_min < l.q_max))
                    throw Error("invalid-hand", "joint limits of '" + l.name + "' are empty");
            }
            for (const auto& s : l.spheres)
                if (!(s.radius > 0.0))
                    throw Error("invalid-hand", "collision sphere radius must be positive");
        }
    }

    std::string _name;
    std::vector<HandLink> _links;
    Vec3 _palm_center = Vec3::Zero();
    Vec3 _palm_normal = Vec3::UnitZ();
    std::vector<int> _joint_of_link;
    std::vector<std::size_t> _joint_link;
    std::vector<std::vector<std::size_t>> _ancestor_joints;
    std::vector<double> _q_min, _q_max;
    std::size_t _keypoint_count = 0;
};

namespace detail {

    inline Transform translation(double x, double y, double z)
    {
        Transform t = Transform::Identity();
        t.translation() = Vec3(x, y, z);
        return t;
    }

    inline std::vector<Vec3> keypoints_along_x(double length, std::size_t count, double z = 0.0)
    {
        std::vector<Vec3> pts;
        for (std::size_t k = 0; k < count; ++k)
            pts.emplace_back(length * static_cast<double>(k) / static_cast<double>(count - 1), 0.0, z);
        return pts;
    }

    inline std::vector<CollisionSphere> spheres_along_x(double length, double radius, std::size_t count)
    {
        std::vector<CollisionSphere> s;
        for (std::size_t k = 0; k < count; ++k)
            s.push_back({Vec3(length * (static_cast<double>(k) + 0.5) / static_cast<double>(count), 0.0, 0.0), radius});
        return s;
    }

    /// Three links (spread/roll, proximal flexion, distal flexion) appended to `links`.
    inline void append_digit(std::vector<HandLink>& links, const std::string& name, const Transform& base,
        const Vec3& base_axis, double base_min, double base_max, double prox_len, double prox_r,
        double dist_len, double dist_r, double prox_min, double prox_max, double dist_min, double dist_max)
    {
        const Vec3 flex(0.0, -1.0, 0.0); // curls local +x toward local +z (the pad side)

        HandLink base_link;
        base_link.name = name + "_base";
        base_link.parent = 0;
        base_link.origin = base;
        base_link.axis = base_axis;
        base_link.q_min = base_min;
        base_link.q_max = base_max;
        links.push_back(base_link);

        HandLink prox;
        prox.name = name + "_proximal";
        prox.parent = static_cast<int>(links.size()) - 1;
        prox.axis = flex;
        prox.q_min = prox_min;
        prox.q_max = prox_max;
        prox.spheres = spheres_along_x(prox_len, prox_r, 3);
        prox.keypoints = keypoints_along_x(prox_len, 7);
        links.push_back(prox);

        HandLink dist;
        dist.name = name + "_distal";
        dist.parent = static_cast<int>(links.size()) - 1;
        dist.origin = translation(prox_len, 0.0, 0.0);
        dist.axis = flex;
        dist.q_min = dist_min;
        dist.q_max = dist_max;
        dist.spheres = spheres_along_x(dist_len, dist_r, 3);
        dist.keypoints = keypoints_along_x(dist_len, 8);
        dist.fingertip_samples = {Vec3(0.55 * dist_len, 0.0, dist_r), Vec3(0.8 * dist_len, 0.0, dist_r),
            Vec3(dist_len, 0.0, 0.5 * dist_r)};
        links.push_back(dist);
    }

} // namespace detail

/// Palm plus thumb and three fingers, three revolute joints each (n_q = 12,
/// 72 keypoints). Wrist frame: +x runs along the fingers, +z is the palm
/// normal (the side the digits curl toward).
inline HandModel HandModel::parametric_default()
{
    std::vector<HandLink> links;

    HandLink palm;
    palm.name = "palm";
    for (double x : {0.015, 0.045, 0.075})
        for (double y : {-0.027, 0.0, 0.027})
            palm.spheres.push_back({Vec3(x, y, -0.011), 0.014});
    for (double x : {0.01, 0.035, 0.06, 0.085})
        for (double y : {-0.03, 0.0, 0.03})
            palm.keypoints.emplace_back(x, y, 0.003);
    links.push_back(palm);

    Transform thumb_base = detail::translation(0.025, 0.042, -0.004);
    thumb_base.rotate(Eigen::AngleAxisd(1.0, Vec3::UnitZ()));
    detail::append_digit(links, "thumb", thumb_base, Vec3::UnitX(), 0.0, 1.6, 0.040, 0.011, 0.032, 0.0095, -0.3,
        1.2, 0.0, 1.4);

    const double finger_y[] = {0.027, 0.0, -0.027};
    const char* finger_name[] = {"index", "middle", "ring"};
    for (int f = 0; f < 3; ++f)
        detail::append_digit(links, finger_name[f], detail::translation(0.09, finger_y[f], -0.005), Vec3::UnitZ(),
            -0.3, 0.3, 0.045, 0.0095, 0.035, 0.0085, -0.2, 1.6, 0.0, 1.7);

    return HandModel("parametric-12dof", std::move(links), Vec3(0.045, 0.0, 0.0), Vec3::UnitZ());
}

inline VecX clamp_to_limits(const HandModel& model, const VecX& q) { return model.clamp(q); }

/// Forward kinematics. Throws "joint-limit" if q leaves the joint limits.
inline HandWorld forward_kinematics(const HandModel& model, const HandState& state)
{
    if (static_cast<std::size_t>(state.q.size()) != model.n_q())
        throw Error("joint-limit", "joint vector has the wrong length");
    if (!model.within_limits(state.q))
        throw Error("joint-limit");

    const auto& links = model.links();
    const Transform wrist = state.wrist.transform();

    HandWorld w;
    w.link_transforms.resize(links.size());
    w.joint_origins.resize(model.n_q());
    w.joint_axes.resize(model.n_q());
    for (std::size_t i = 0; i < links.size(); ++i) {
        const auto& l = links[i];
        const Transform& parent = l.parent < 0 ? wrist : w.link_transforms[static_cast<std::size_t>(l.parent)];
        Transform frame = parent * l.origin;
        if (const int j = model.joint_of_link(i); j >= 0) {
            const auto ju = static_cast<std::size_t>(j);
            w.joint_origins[ju] = frame.translation();
            w.joint_axes[ju] = frame.linear() * l.axis;
            frame.rotate(Eigen::AngleAxisd(state.q[j], l.axis));
        }
        w.link_transforms[i] = frame;

        for (const auto& k : l.keypoints)
            w.keypoints.push_back(frame * k);
        for (const auto& s : l.spheres) {
            w.sphere_centers.push_back(frame * s.offset);
            w.sphere_radii.push_back(s.radius);
            w.sphere_link.push_back(i);
        }
        for (const auto& f : l.fingertip_samples) {
            w.fingertip_samples.push_back(frame * f);
            w.fingertip_link.push_back(i);
        }
    }
    w.palm_center = wrist * model.palm_center();
    w.palm_normal = wrist.linear() * model.palm_normal();
    return w;
}

struct LinkPoint {
    Vec3 point = Vec3::Zero();
    std::size_t link = 0;
};

/// Stacked (3 n_c) x n_q positional contact Jacobian: column j of block i is
/// axis_j x (p_i - o_j) when joint j moves the owning link, zero otherwise.
inline MatX contact_jacobian(const HandModel& model, const HandWorld& world, const std::vector<LinkPoint>& contacts)
{
    MatX jac = MatX::Zero(3 * static_cast<Eigen::Index>(contacts.size()), static_cast<Eigen::Index>(model.n_q()));
    for (std::size_t i = 0; i < contacts.size(); ++i) {
        const auto& c = contacts[i];
        for (std::size_t j : model.joint_chain(c.link)) {
            const Vec3 col = world.joint_axes[j].cross(c.point - world.joint_origins[j]);
            jac.block<3, 1>(3 * static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col;
        }
    }
    return jac;
}

inline MatX contact_jacobian(const HandModel& model, const HandState& state, const std::vector<LinkPoint>& contacts)
{
    return contact_jacobian(model, forward_kinematics(model, state), contacts);
}

} // namespace graspevo

#endif
