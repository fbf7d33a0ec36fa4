// Fixtures and independent oracles shared by the test binaries. Nothing here
// calls the library routine it is used to check.
#ifndef GRASPEVO_TESTS_SUPPORT_HPP
#define GRASPEVO_TESTS_SUPPORT_HPP

#include <graspevo/evaluator.hpp>
#include <graspevo/evolution.hpp>
#include <graspevo/geometry.hpp>
#include <graspevo/hand_model.hpp>
#include <graspevo/preference.hpp>

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace graspevo::testing {

inline Primitive sphere_primitive(double radius, const Vec3& center = Vec3::Zero(), double mu = 0.8)
{
    Primitive p;
    p.kind = PrimitiveKind::sphere;
    p.position = center;
    p.dimensions = {radius};
    p.mu = mu;
    return p;
}

inline SdfScene sphere_scene(double radius = 0.05, double mu = 0.8, double density = 10000.0)
{
    return SdfScene("toy_sphere", SceneCategory::object, {sphere_primitive(radius, Vec3::Zero(), mu)}, density);
}

/// Three rigid fingers fixed to the wrist whose pads touch a sphere of
/// `radius` at the origin at 120 degree spacing on the equator.
inline HandModel tripod_hand(double radius = 0.05, double pad = 0.008)
{
    std::vector<HandLink> links;
    HandLink palm;
    palm.name = "palm";
    links.push_back(palm);
    for (int k = 0; k < 3; ++k) {
        const double a = 2.0 * kPi * k / 3.0;
        const Vec3 dir(std::cos(a), std::sin(a), 0.0);
        HandLink f;
        f.name = "finger" + std::to_string(k);
        f.parent = 0;
        f.origin = make_transform((radius + pad) * dir, Quat::Identity());
        f.spheres = {{Vec3::Zero(), pad}};
        f.fingertip_samples = {-pad * dir};
        f.keypoints = {Vec3::Zero()};
        links.push_back(f);
    }
    return HandModel("tripod", std::move(links));
}

/// Uniform joint vector strictly inside the limits by `margin`.
inline VecX random_configuration(const HandModel& hand, std::mt19937_64& rng, double margin = 1e-3)
{
    VecX q(static_cast<Eigen::Index>(hand.n_q()));
    const VecX lo = hand.q_min(), hi = hand.q_max();
    for (Eigen::Index j = 0; j < q.size(); ++j)
        q[j] = std::uniform_real_distribution<double>(lo[j] + margin, hi[j] - margin)(rng);
    return q;
}

inline Quat random_rotation(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector4d v(n(rng), n(rng), n(rng), n(rng));
    v.normalize();
    return Quat(v[0], v[1], v[2], v[3]);
}

inline Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    return Vec3(n(rng), n(rng), n(rng)).normalized();
}

// ---------------------------------------------------------------------------
// Oracles

/// Greedy max-min selection recomputing every min distance from scratch.
inline std::vector<std::size_t> fps_oracle(const std::vector<Vec3>& pts, std::size_t n, std::size_t seed)
{
    std::vector<std::size_t> chosen{seed};
    while (chosen.size() < std::min(n, pts.size())) {
        std::size_t best = pts.size();
        double best_d = -1.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end())
                continue;
            double d = std::numeric_limits<double>::infinity();
            for (std::size_t c : chosen)
                d = std::min(d, (pts[i] - pts[c]).norm());
            if (d > best_d) {
                best_d = d;
                best = i;
            }
        }
        chosen.push_back(best);
    }
    return chosen;
}

/// Moore-Penrose solution through a thin SVD with a relative rank cutoff.
inline VecX pinv_solve(const MatX& a, const VecX& b)
{
    Eigen::JacobiSVD<MatX> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VecX s = svd.singularValues();
    const double cutoff = s.size() ? 1e-10 * s[0] : 0.0;
    VecX coeffs = svd.matrixU().transpose() * b;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        coeffs[i] = s[i] > cutoff ? coeffs[i] / s[i] : 0.0;
    return svd.matrixV() * coeffs;
}

/// Lawson-Hanson nonnegative least squares: argmin ||A x - b||, x >= 0.
inline VecX nnls(const MatX& a, const VecX& b, int max_iter = 2000)
{
    const Eigen::Index n = a.cols();
    VecX x = VecX::Zero(n);
    std::vector<char> passive(static_cast<std::size_t>(n), 0);
    const double tol = 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff());
    for (int outer = 0; outer < max_iter; ++outer) {
        VecX w = a.transpose() * (b - a * x);
        Eigen::Index t = -1;
        double wmax = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[static_cast<std::size_t>(j)] && w[j] > wmax) {
                wmax = w[j];
                t = j;
            }
        if (t < 0)
            break;
        passive[static_cast<std::size_t>(t)] = 1;
        for (int inner = 0; inner < max_iter; ++inner) {
            std::vector<Eigen::Index> idx;
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)])
                    idx.push_back(j);
            MatX ap(a.rows(), static_cast<Eigen::Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k)
                ap.col(static_cast<Eigen::Index>(k)) = a.col(idx[k]);
            const VecX zp = ap.colPivHouseholderQr().solve(b);
            VecX z = VecX::Zero(n);
            for (std::size_t k = 0; k < idx.size(); ++k)
                z[idx[k]] = zp[static_cast<Eigen::Index>(k)];
            bool all_positive = true;
            for (Eigen::Index j : idx)
                if (z[j] <= 0.0)
                    all_positive = false;
            if (all_positive) {
                x = z;
                break;
            }
            double alpha = 1.0;
            for (Eigen::Index j : idx)
                if (z[j] <= 0.0)
                    alpha = std::min(alpha, x[j] / (x[j] - z[j]));
            x += alpha * (z - x);
            for (Eigen::Index j : idx)
                if (x[j] <= tol)
                    passive[static_cast<std::size_t>(j)] = 0, x[j] = 0.0;
        }
    }
    return x;
}

struct OracleContact {
    Vec3 point;
    Vec3 normal; // outward object normal
    double mu;
};

/// Dense cone-sampling oracle: `edges` force directions per contact (unit
/// normal component, tangential part mu at evenly spaced angles), normal force
/// at most f_max per contact, torques about `center`. Feasibility is decided
/// by whether the nonnegative least-squares residual of the balance equations
/// (with per-contact slack for the force cap) vanishes.
inline double wrench_oracle_residual(const std::vector<OracleContact>& contacts, const Eigen::Matrix<double, 6, 1>& external,
    double f_max, int edges = 32, const Vec3& center = Vec3::Zero())
{
    const auto nc = static_cast<Eigen::Index>(contacts.size());
    const Eigen::Index m = edges;
    MatX a = MatX::Zero(6 + nc, nc * m + nc);
    VecX b(6 + nc);
    b.head<6>() = -external;
    for (Eigen::Index i = 0; i < nc; ++i) {
        const auto& c = contacts[static_cast<std::size_t>(i)];
        const Vec3 n = -c.normal.normalized();
        Vec3 t1 = n.unitOrthogonal();
        Vec3 t2 = n.cross(t1);
        for (Eigen::Index k = 0; k < m; ++k) {
            const double th = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(m) + 0.123;
            const Vec3 f = n + c.mu * (std::cos(th) * t1 + std::sin(th) * t2);
            a.block<3, 1>(0, i * m + k) = f;
            a.block<3, 1>(3, i * m + k) = (c.point - center).cross(f);
            a(6 + i, i * m + k) = 1.0;
        }
        a(6 + i, nc * m + i) = 1.0; // slack on the force cap
        b[6 + i] = f_max;
    }
    const VecX x = nnls(a, b);
    return (a * x - b).norm();
}

inline bool wrench_oracle_feasible(const std::vector<OracleContact>& contacts, const Eigen::Matrix<double, 6, 1>& external,
    double f_max, int edges = 32, const Vec3& center = Vec3::Zero())
{
    return wrench_oracle_residual(contacts, external, f_max, edges, center) < 1e-6;
}

struct WrenchCase {
    std::vector<OracleContact> oracle;
    std::vector<ActiveContact> contacts;
    Eigen::Matrix<double, 6, 1> external;
};

/// Random 1-3 contacts on a 5 cm sphere with a pure-force disturbance. Half the
/// cases spread the contacts evenly around a random axis so that feasible
/// outcomes are common. Returns nothing when the oracle verdict changes
/// within +-margin newtons of the force magnitude.
inline std::optional<WrenchCase> random_wrench_case(std::mt19937_64& rng, double f_max = 10.0, double margin = 0.1)
{
    WrenchCase c;
    const int nc = 1 + static_cast<int>(rng() % 3);
    const bool spread = rng() % 2 == 0;
    const Vec3 axis = random_unit(rng);
    const Vec3 t1 = axis.unitOrthogonal();
    std::normal_distribution<double> jitter(0.0, 0.15);
    for (int i = 0; i < nc; ++i) {
        Vec3 n = random_unit(rng);
        if (spread) {
            const double a = 2.0 * kPi * i / nc;
            n = (Eigen::AngleAxisd(a, axis) * t1 + Vec3(jitter(rng), jitter(rng), jitter(rng))).normalized();
        }
        const double mu = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
        c.oracle.push_back({0.05 * n, n, mu});
        ActiveContact a;
        a.point = 0.05 * n;
        a.normal = n;
        a.mu = mu;
        c.contacts.push_back(a);
    }
    const Vec3 u = random_unit(rng);
    const double m = std::uniform_real_distribution<double>(0.0, 10.0)(rng);
    c.external = Eigen::Matrix<double, 6, 1>::Zero();
    c.external.head<3>() = m * u;
    auto scaled = [&](double mag) {
        Eigen::Matrix<double, 6, 1> w = Eigen::Matrix<double, 6, 1>::Zero();
        w.head<3>() = mag * u;
        return w;
    };
    const bool lo = m < margin || wrench_oracle_feasible(c.oracle, scaled(m - margin), f_max);
    const bool hi = wrench_oracle_feasible(c.oracle, scaled(m + margin), f_max);
    if (lo != hi)
        return std::nullopt;
    return c;
}

/// Velocity of a link-fixed point under joint velocity qdot, by central
/// differences of forward kinematics.
inline Vec3 fd_point_velocity(const HandModel& hand, const HandState& state, std::size_t link, const Vec3& world_point,
    const VecX& qdot, double h = 1e-6)
{
    const HandWorld w0 = forward_kinematics(hand, state);
    const Vec3 local = w0.link_transforms[link].inverse() * world_point;
    HandState plus = state, minus = state;
    plus.q += h * qdot;
    minus.q -= h * qdot;
    const Vec3 pp = forward_kinematics(hand, plus).link_transforms[link] * local;
    const Vec3 pm = forward_kinematics(hand, minus).link_transforms[link] * local;
    return (pp - pm) / (2.0 * h);
}

/// Density divisor evaluated directly from the neighbour distances.
inline double density_divisor(const std::vector<double>& neighbour_distances, double r, double p)
{
    double s = 1.0; // the entry itself
    for (double d : neighbour_distances)
        if (d <= r)
            s += 1.0 - std::pow(d, p) / std::pow(r, p);
    return s;
}

/// Pairs of random-seed grasp features labeled by a planted linear reward
/// w . x with w ~ N(0, I); the first `n_train` go to training.
struct PlantedPairs {
    std::vector<FeaturePair> train;
    std::vector<FeaturePair> test;
    VecX weights;
};

inline PlantedPairs planted_linear_pairs(const HandModel& hand, const SdfScene& scene, std::size_t n_train,
    std::size_t n_test, std::uint64_t seed)
{
    Rng grasp_rng(seed);
    std::mt19937_64 w_rng(seed + 1);
    std::normal_distribution<double> n(0.0, 1.0);
    PlantedPairs out;
    const auto dim = static_cast<Eigen::Index>(3 * hand.keypoint_count() + kSceneScalars);
    out.weights = VecX(dim);
    for (Eigen::Index k = 0; k < dim; ++k)
        out.weights[k] = n(w_rng);
    for (std::size_t i = 0; i < n_train + n_test; ++i) {
        const VecX a = grasp_features(hand, scene, random_seed(scene, hand, grasp_rng));
        const VecX b = grasp_features(hand, scene, random_seed(scene, hand, grasp_rng));
        const Label l = out.weights.dot(a) > out.weights.dot(b) ? Label::a_preferred : Label::b_preferred;
        (i < n_train ? out.train : out.test).push_back({a, b, l});
    }
    return out;
}

inline ArchiveEntry entry_from(const Grasp& g, double total, std::size_t insert_step = 0, bool success = false)
{
    ArchiveEntry e;
    e.grasp = g;
    e.fitness.total = total;
    e.success = success;
    e.embedding = embed(g);
    e.insert_step = insert_step;
    return e;
}

inline Grasp grasp_at(const Vec3& position, const VecX& q, const Euler& e = {})
{
    Grasp g;
    g.wrist = WristPose::from_euler(position, e);
    g.q = q;
    g.dq_cmd = VecX::Zero(q.size());
    return g;
}

/// Fresh directory under the system temp root, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        _path = std::filesystem::temp_directory_path() / ("graspevo-" + tag + "-" + std::to_string(rd()));
        std::filesystem::remove_all(_path);
        std::filesystem::create_directories(_path);
    }
    ~TempDir() { std::filesystem::remove_all(_path); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return _path; }
    std::string str(const std::string& child = {}) const { return (child.empty() ? _path : _path / child).string(); }

private:
    std::filesystem::path _path;
};

} // namespace graspevo::testing

#endif
