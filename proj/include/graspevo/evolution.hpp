#ifndef GRASPEVO_EVOLUTION_HPP
#define GRASPEVO_EVOLUTION_HPP

#include <graspevo/error.hpp>
#include <graspevo/evaluator.hpp>
#include <graspevo/geometry.hpp>
#include <graspevo/hand_model.hpp>
#include <graspevo/metrics.hpp>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace graspevo {

using Rng = std::mt19937_64;

namespace rnd {
    inline double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
    inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform(rng); }
    inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
    inline std::size_t index(Rng& rng, std::size_t n)
    {
        return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng));
    }
    inline bool coin(Rng& rng, double p) { return uniform(rng) < p; }

    /// Uniformly distributed rotation (Shoemake).
    inline Quat rotation(Rng& rng)
    {
        const double u1 = uniform(rng), u2 = uniform(rng), u3 = uniform(rng);
        const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
        Quat q(a * std::sin(2.0 * kPi * u2), a * std::cos(2.0 * kPi * u2), b * std::sin(2.0 * kPi * u3),
            b * std::cos(2.0 * kPi * u3));
        q.normalize();
        return q;
    }

    inline Vec3 unit_vector(Rng& rng)
    {
        Vec3 v;
        do {
            v = Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng));
        } while (v.norm() < 1e-12);
        return v.normalized();
    }

    inline std::string save(const Rng& rng)
    {
        std::ostringstream os;
        os << rng;
        return os.str();
    }

    inline Rng load(const std::string& state)
    {
        Rng rng;
        std::istringstream is(state);
        is >> rng;
        if (!is)
            throw Error("bad-checkpoint", "unreadable rng state");
        return rng;
    }
} // namespace rnd

// ---------------------------------------------------------------------------
// Configuration

struct ArchiveConfig {
    double tau = 0.1;
    std::size_t p_max = 1024;
    std::size_t prune_keep = 768;
    std::size_t pose_dims = 6;
    double position_scale = 10.0;
    double orientation_scale = 1.0;
    double joint_scale = 1.0;
    bool prune_with_fps = false; // rank by score, then thin the kept set with FPS over embeddings

    void validate() const
    {
        if (!(tau > 0.0))
            throw Error("invalid-config", "tau must be positive");
        if (!(prune_keep > 0 && prune_keep < p_max))
            throw Error("invalid-config", "need 0 < prune_keep < p_max");
    }
};

struct SelectionConfig {
    std::size_t k_tournament = 4;
    double density_radius = 0.65;
    double density_power = 2.0;

    void validate() const
    {
        if (k_tournament < 2 || !(density_radius > 0.0) || !(density_power > 0.0))
            throw Error("invalid-config", "bad selection parameters");
    }
};

struct VariationConfig {
    double p_mutation = 0.75;
    double p_crossover = 0.2;
    double sigma_pos = 0.025;   // m
    double sigma_orient = 0.05; // rad
    double sigma_q = 0.04;      // fraction of each joint's range

    void validate() const
    {
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob(p_mutation) || !prob(p_crossover))
            throw Error("invalid-config", "probabilities must lie in [0, 1]");
        if (!(sigma_pos >= 0.0 && sigma_orient >= 0.0 && sigma_q >= 0.0))
            throw Error("invalid-config", "mutation sigmas must be nonnegative");
    }
};

struct RunConfig {
    std::size_t population_size = 32;
    std::size_t total_steps = 10000;
    std::uint64_t rng_seed = 0;
    std::size_t final_k = 128;
    std::optional<int> e_min;
    std::size_t workers = 1;
    std::size_t trace_every = 100;
    std::size_t checkpoint_every = 500;

    void validate() const
    {
        if (population_size < 2)
            throw Error("invalid-config", "population_size must be >= 2");
        if (total_steps < population_size)
            throw Error("budget-too-small");
        if (workers < 1)
            throw Error("invalid-config", "workers must be >= 1");
    }
};

struct EvolutionConfig {
    EvalConfig eval;
    ArchiveConfig archive;
    SelectionConfig selection;
    VariationConfig variation;
    RunConfig run;

    void validate() const
    {
        eval.validate();
        archive.validate();
        selection.validate();
        variation.validate();
        run.validate();
    }

    /// Lifetime a success-set member must reach: one full +/- axis pair for
    /// objects, full -z survival for handles, unless overridden.
    int e_min() const
    {
        if (run.e_min)
            return *run.e_min;
        return eval.category == SceneCategory::handle ? eval.t_dir : 2 * eval.t_dir;
    }
};

// ---------------------------------------------------------------------------
// Embedding and archive

/// phi(G) = [10 * position, euler(roll, pitch, yaw), q].
inline VecX embed(const Grasp& g, const ArchiveConfig& cfg = {})
{
    VecX e(6 + g.q.size());
    const Euler eu = g.wrist.euler();
    e.head<3>() = cfg.position_scale * g.wrist.position;
    e.segment<3>(3) = cfg.orientation_scale * Vec3(eu.roll, eu.pitch, eu.yaw);
    e.tail(g.q.size()) = cfg.joint_scale * g.q;
    return e;
}

/// Half the RMS difference over the pose part plus half over the joint part.
inline double embedding_distance(const VecX& a, const VecX& b, std::size_t split = 6)
{
    if (a.size() != b.size())
        throw Error("invalid-embedding", "length mismatch");
    const auto s = static_cast<Eigen::Index>(split);
    auto rms = [](const auto& d) { return d.size() == 0 ? 0.0 : std::sqrt(d.squaredNorm() / static_cast<double>(d.size())); };
    const VecX diff = a - b;
    return 0.5 * rms(diff.head(s)) + 0.5 * rms(diff.tail(diff.size() - s));
}

enum class Provenance { seed, offspring };

struct ArchiveEntry {
    Grasp grasp;
    FitnessBreakdown fitness;
    bool success = false;
    VecX embedding;
    std::size_t insert_step = 0;
    Provenance provenance = Provenance::seed;
    std::size_t origin_step = 0; // submission index of the evaluated candidate
};

using Archive = std::vector<ArchiveEntry>;

enum class InsertKind { inserted, replaced, discarded };

struct InsertOutcome {
    InsertKind kind = InsertKind::discarded;
    std::size_t index = 0;
    double nn_distance = std::numeric_limits<double>::infinity();
};

/// Nearest neighbor by embedding distance; lowest index on ties.
inline std::pair<std::size_t, double> nearest_entry(const Archive& archive, const VecX& embedding, std::size_t split)
{
    std::size_t best_i = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < archive.size(); ++i) {
        const double d = embedding_distance(archive[i].embedding, embedding, split);
        if (d < best) {
            best = d;
            best_i = i;
        }
    }
    return {best_i, best};
}

/// Novelty gate with local competition: insert when the nearest neighbor is at
/// least tau away, otherwise replace it only on strictly higher total fitness.
inline InsertOutcome insert_or_replace(Archive& archive, ArchiveEntry candidate, const ArchiveConfig& cfg)
{
    InsertOutcome out;
    if (archive.empty()) {
        archive.push_back(std::move(candidate));
        out.kind = InsertKind::inserted;
        out.index = 0;
        return out;
    }
    const auto [j, d] = nearest_entry(archive, candidate.embedding, cfg.pose_dims);
    out.nn_distance = d;
    out.index = j;
    if (d >= cfg.tau) {
        archive.push_back(std::move(candidate));
        out.kind = InsertKind::inserted;
        out.index = archive.size() - 1;
    }
    else if (candidate.fitness.total > archive[j].fitness.total) {
        archive[j] = std::move(candidate);
        out.kind = InsertKind::replaced;
    }
    else {
        out.kind = InsertKind::discarded;
    }
    return out;
}

/// F'_i = F_i / sum_{j in B_r(i)} (1 - d_ij^p / r^p), B_r including i itself.
inline double density_reweight(const Archive& archive, std::size_t i, const SelectionConfig& cfg, std::size_t split = 6)
{
    const double rp = std::pow(cfg.density_radius, cfg.density_power);
    double divisor = 0.0;
    for (std::size_t j = 0; j < archive.size(); ++j) {
        const double d = j == i ? 0.0 : embedding_distance(archive[i].embedding, archive[j].embedding, split);
        if (d <= cfg.density_radius)
            divisor += 1.0 - std::pow(d, cfg.density_power) / rp;
    }
    return archive[i].fitness.total / divisor;
}

/// Samples k entries (distinct when the archive is large enough), ranks them
/// by density-reweighted fitness and returns the best two; ties to the lower index.
inline std::pair<std::size_t, std::size_t> tournament_select(const Archive& archive, const SelectionConfig& cfg, Rng& rng,
    std::size_t split = 6)
{
    if (archive.size() < 2)
        throw Error("population-too-small");
    std::vector<std::size_t> sample;
    if (archive.size() >= cfg.k_tournament) {
        while (sample.size() < cfg.k_tournament) {
            const std::size_t i = rnd::index(rng, archive.size());
            if (std::find(sample.begin(), sample.end(), i) == sample.end())
                sample.push_back(i);
        }
    }
    else {
        for (std::size_t k = 0; k < cfg.k_tournament; ++k)
            sample.push_back(rnd::index(rng, archive.size()));
        std::sort(sample.begin(), sample.end());
        sample.erase(std::unique(sample.begin(), sample.end()), sample.end());
    }
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i : sample)
        ranked.emplace_back(density_reweight(archive, i, cfg, split), i);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    if (ranked.size() == 1)
        return {ranked[0].second, ranked[0].second};
    return {ranked[0].second, ranked[1].second};
}

/// Copy of parent_a whose joints are swapped for parent_b's with probability
/// p_crossover. The closing command is dropped.
inline Grasp crossover(const Grasp& parent_a, const Grasp& parent_b, double p_crossover, Rng& rng)
{
    Grasp child = parent_a;
    if (rnd::coin(rng, p_crossover))
        child.q = parent_b.q;
    child.dq_cmd = VecX::Zero(child.q.size());
    return child;
}

inline Grasp mutate(const Grasp& grasp, const VariationConfig& cfg, const HandModel& hand, Rng& rng)
{
    if (!rnd::coin(rng, cfg.p_mutation))
        return grasp;
    Grasp g = grasp;
    for (int k = 0; k < 3; ++k)
        g.wrist.position[k] += cfg.sigma_pos * rnd::standard_normal(rng);
    Euler e = g.wrist.euler();
    e.roll += cfg.sigma_orient * rnd::standard_normal(rng);
    e.pitch += cfg.sigma_orient * rnd::standard_normal(rng);
    e.yaw += cfg.sigma_orient * rnd::standard_normal(rng);
    g.wrist.orientation = quaternion_from_euler(e);
    const VecX range = hand.q_range();
    for (Eigen::Index j = 0; j < g.q.size(); ++j)
        g.q[j] += cfg.sigma_q * range[j] * rnd::standard_normal(rng);
    g.q = hand.clamp(g.q);
    return g;
}

/// Keeps the prune_keep best entries by total (earlier insert_step wins ties)
/// once the archive exceeds p_max.
inline void prune(Archive& archive, const ArchiveConfig& cfg)
{
    if (archive.size() <= cfg.p_max)
        return;
    std::stable_sort(archive.begin(), archive.end(), [](const ArchiveEntry& a, const ArchiveEntry& b) {
        return a.fitness.total != b.fitness.total ? a.fitness.total > b.fitness.total : a.insert_step < b.insert_step;
    });
    if (!cfg.prune_with_fps) {
        archive.resize(cfg.prune_keep);
        return;
    }
    const std::size_t pool = std::min(archive.size(), cfg.p_max);
    const auto picked = farthest_point_sample_by(pool, cfg.prune_keep, 0, [&](std::size_t i, std::size_t j) {
        return embedding_distance(archive[i].embedding, archive[j].embedding, cfg.pose_dims);
    });
    std::vector<std::size_t> order(picked.begin(), picked.end());
    std::sort(order.begin(), order.end());
    Archive kept;
    kept.reserve(order.size());
    for (std::size_t i : order)
        kept.push_back(std::move(archive[i]));
    archive = std::move(kept);
}

/// Success set: successful entries with lifetime >= e_min; if there are more
/// than k, FPS over embeddings seeded at the best entry picks k of them.
inline std::vector<ArchiveEntry> select_top_or_fps(const Archive& archive, int e_min, std::size_t k, std::size_t split = 6)
{
    std::vector<ArchiveEntry> succ;
    for (const auto& e : archive)
        if (e.success && e.fitness.e_lifetime >= e_min)
            succ.push_back(e);
    std::stable_sort(succ.begin(), succ.end(), [](const ArchiveEntry& a, const ArchiveEntry& b) {
        return a.fitness.total != b.fitness.total ? a.fitness.total > b.fitness.total : a.insert_step < b.insert_step;
    });
    if (succ.size() <= k)
        return succ;
    const auto picked = farthest_point_sample_by(succ.size(), k, 0, [&](std::size_t i, std::size_t j) {
        return embedding_distance(succ[i].embedding, succ[j].embedding, split);
    });
    std::vector<ArchiveEntry> out;
    out.reserve(picked.size());
    for (std::size_t i : picked)
        out.push_back(succ[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Seeding

enum class SeedMode { random, approach_heuristic };

inline Grasp random_seed(const SdfScene& scene, const HandModel& hand, Rng& rng)
{
    const double r0 = scene.bounding_radius() + 0.02;
    const double r1 = scene.bounding_radius() + 0.10;
    const double radius = std::cbrt(rnd::uniform(rng, r0 * r0 * r0, r1 * r1 * r1));
    Grasp g;
    g.wrist.position = scene.centroid() + radius * rnd::unit_vector(rng);
    g.wrist.orientation = rnd::rotation(rng);
    const VecX lo = hand.q_min(), hi = hand.q_max();
    g.q = VecX(static_cast<Eigen::Index>(hand.n_q()));
    for (Eigen::Index j = 0; j < g.q.size(); ++j)
        g.q[j] = rnd::uniform(rng, lo[j], hi[j]);
    g.dq_cmd = VecX::Zero(g.q.size());
    return g;
}

/// Palm facing a random surface point along its inward normal, palm center
/// 1 cm off the surface, random roll about the approach axis, open-ish joints.
inline Grasp approach_seed(const SdfScene& scene, const HandModel& hand, Rng& rng)
{
    const auto& surf = scene.surface();
    if (surf.empty())
        throw Error("empty-scene");
    const std::size_t i = rnd::index(rng, surf.size());
    const Vec3 p = surf.points[i];
    const Vec3 n = surf.normals[i];

    const Vec3 z_world = -n; // palm normal direction
    const Vec3 helper = std::abs(z_world.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    Vec3 x0 = (helper - helper.dot(z_world) * z_world).normalized();
    const double roll = rnd::uniform(rng, -kPi, kPi);
    const Vec3 x_world = Eigen::AngleAxisd(roll, z_world) * x0;
    const Vec3 y_world = z_world.cross(x_world);
    Eigen::Matrix3d frame;
    frame.col(0) = x_world;
    frame.col(1) = y_world;
    frame.col(2) = z_world;
    // Map the hand's own palm normal onto z_world.
    const Eigen::Matrix3d hand_frame = Quat::FromTwoVectors(Vec3::UnitZ(), hand.palm_normal()).toRotationMatrix();
    const Eigen::Matrix3d rot = frame * hand_frame.transpose();

    Grasp g;
    g.wrist.orientation = Quat(rot).normalized();
    const Vec3 palm_world = p + 0.01 * n;
    g.wrist.position = palm_world - g.wrist.orientation * hand.palm_center();
    const VecX range = hand.q_range();
    g.q = hand.zero_configuration();
    for (Eigen::Index j = 0; j < g.q.size(); ++j)
        g.q[j] += 0.15 * range[j] * rnd::uniform(rng, -1.0, 1.0);
    g.q = hand.clamp(g.q);
    g.dq_cmd = VecX::Zero(g.q.size());
    return g;
}

/// S de-penetrated seeds carrying a closing command computed at their configuration.
inline std::vector<Grasp> seed_population(const SdfScene& scene, const HandModel& hand, SeedMode mode, std::size_t count,
    Rng& rng, const EvalConfig& eval = {})
{
    if (count < 1)
        throw Error("invalid-config", "seed count must be >= 1");
    std::vector<Grasp> seeds;
    seeds.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        Grasp g = mode == SeedMode::random ? random_seed(scene, hand, rng) : approach_seed(scene, hand, rng);
        g = depenetrate(g, scene, hand, eval);
        seeds.push_back(assign_closing_command(scene, hand, g, eval));
    }
    return seeds;
}

// ---------------------------------------------------------------------------
// The asynchronous refinement loop

struct TraceRow {
    std::size_t step = 0;
    std::size_t archive_size = 0;
    double best_total = 0.0;
    std::size_t success_count = 0;
    std::vector<std::size_t> dsg; // standard resolutions, coarse to fine
    double entropy_mean = 0.0;
};

struct Candidate {
    Grasp grasp;
    Provenance provenance = Provenance::seed;
    std::size_t submit_index = 0;
};

/// Everything needed to resume a run bit-identically (single worker).
struct EvolutionState {
    Archive archive;
    std::deque<Candidate> pending;
    std::size_t completed = 0;
    std::size_t submitted = 0;
    std::size_t seed_evaluations = 0;
    std::size_t seed_successes = 0;
    std::string rng_state;
    std::vector<TraceRow> trace;
};

struct RunResult {
    Archive archive;
    std::vector<ArchiveEntry> success_set;
    std::vector<TraceRow> trace;
    std::size_t seed_successes = 0;
    std::size_t evaluations = 0;
};

struct EvolutionHooks {
    const RewardFn* reward = nullptr;
    std::function<void(const EvolutionState&)> on_checkpoint;
    std::function<void(const EvolutionState&)> on_trace;
};

namespace detail {

    /// Fixed-size worker pool returning results in completion order.
    class EvalPool {
    public:
        using Job = std::function<void()>;

        explicit EvalPool(std::size_t workers)
        {
            for (std::size_t i = 0; i < workers; ++i)
                _threads.emplace_back([this] { loop(); });
        }

        ~EvalPool()
        {
            {
                std::lock_guard lock(_mutex);
                _stop = true;
            }
            _cv.notify_all();
            for (auto& t : _threads)
                t.join();
        }

        EvalPool(const EvalPool&) = delete;
        EvalPool& operator=(const EvalPool&) = delete;

        void submit(Job job)
        {
            {
                std::lock_guard lock(_mutex);
                _jobs.push_back(std::move(job));
            }
            _cv.notify_one();
        }

    private:
        void loop()
        {
            for (;;) {
                Job job;
                {
                    std::unique_lock lock(_mutex);
                    _cv.wait(lock, [this] { return _stop || !_jobs.empty(); });
                    if (_stop && _jobs.empty())
                        return;
                    job = std::move(_jobs.front());
                    _jobs.pop_front();
                }
                job();
            }
        }

        std::mutex _mutex;
        std::condition_variable _cv;
        std::deque<Job> _jobs;
        bool _stop = false;
        std::vector<std::thread> _threads;
    };

} // namespace detail

class Evolution {
public:
    Evolution(const SdfScene& scene, const HandModel& hand, EvolutionConfig cfg, EvolutionHooks hooks = {})
        : _scene(scene), _hand(hand), _cfg(std::move(cfg)), _hooks(std::move(hooks)), _ranges(EntropyRanges::for_scene(scene, hand))
    {
        _cfg.validate();
    }

    /// Fresh state from S seeds; each gets contacts and a closing command.
    EvolutionState initial_state(const std::vector<Grasp>& seeds) const
    {
        if (seeds.empty())
            throw Error("no-seeds");
        EvolutionState st;
        st.rng_state = rnd::save(Rng(_cfg.run.rng_seed));
        for (const auto& s : seeds) {
            Candidate c;
            c.grasp = assign_closing_command(_scene, _hand, s, _cfg.eval);
            c.provenance = Provenance::seed;
            c.submit_index = st.submitted++;
            st.pending.push_back(std::move(c));
        }
        return st;
    }

    RunResult run(const std::vector<Grasp>& seeds) { return run(initial_state(seeds)); }

    RunResult run(EvolutionState st)
    {
        Rng rng = rnd::load(st.rng_state);
        const std::size_t total = _cfg.run.total_steps;

        auto process = [&](Candidate cand, Evaluation ev) {
            ArchiveEntry e;
            e.grasp = std::move(cand.grasp);
            e.fitness = ev.fitness;
            e.success = ev.success;
            e.embedding = embed(e.grasp, _cfg.archive);
            e.insert_step = st.completed;
            e.provenance = cand.provenance;
            e.origin_step = cand.submit_index;
            if (cand.provenance == Provenance::seed) {
                ++st.seed_evaluations;
                if (ev.success)
                    ++st.seed_successes;
            }
            insert_or_replace(st.archive, std::move(e), _cfg.archive);
            prune(st.archive, _cfg.archive);
            ++st.completed;

            if (st.submitted < total)
                st.pending.push_back(make_offspring(st, rng));

            if (_cfg.run.trace_every > 0 && st.completed % _cfg.run.trace_every == 0) {
                st.trace.push_back(trace_row(st));
                if (_hooks.on_trace)
                    _hooks.on_trace(st);
            }
            if (_hooks.on_checkpoint && _cfg.run.checkpoint_every > 0 && st.completed % _cfg.run.checkpoint_every == 0) {
                st.rng_state = rnd::save(rng);
                _hooks.on_checkpoint(st);
            }
        };

        if (_cfg.run.workers <= 1) {
            while (st.completed < total && !st.pending.empty()) {
                Candidate cand = std::move(st.pending.front());
                st.pending.pop_front();
                Evaluation ev = evaluate(_scene, _hand, cand.grasp, _cfg.eval, _hooks.reward);
                process(std::move(cand), std::move(ev));
            }
        }
        else {
            run_parallel(st, process);
        }

        st.rng_state = rnd::save(rng);
        RunResult res;
        res.success_set = select_top_or_fps(st.archive, _cfg.e_min(), _cfg.run.final_k, _cfg.archive.pose_dims);
        res.trace = st.trace;
        res.seed_successes = st.seed_successes;
        res.evaluations = st.completed;
        res.archive = std::move(st.archive);
        return res;
    }

    const EvolutionConfig& config() const { return _cfg; }

    TraceRow trace_row(const EvolutionState& st) const
    {
        TraceRow row;
        row.step = st.completed;
        row.archive_size = st.archive.size();
        row.best_total = -std::numeric_limits<double>::infinity();
        std::vector<Grasp> ok;
        for (const auto& e : st.archive) {
            row.best_total = std::max(row.best_total, e.fitness.total);
            if (e.success)
                ok.push_back(e.grasp);
        }
        row.success_count = ok.size();
        for (const auto& res : standard_resolutions())
            row.dsg.push_back(distinct_stable_grasps(ok, res));
        row.entropy_mean = marginal_entropies(ok, _ranges).mean;
        return row;
    }

private:
    Candidate make_offspring(EvolutionState& st, Rng& rng) const
    {
        Candidate c;
        c.provenance = Provenance::offspring;
        c.submit_index = st.submitted++;
        Grasp child;
        if (st.archive.size() >= 2) {
            const auto [a, b] = tournament_select(st.archive, _cfg.selection, rng, _cfg.archive.pose_dims);
            child = crossover(st.archive[a].grasp, st.archive[b].grasp, _cfg.variation.p_crossover, rng);
        }
        else {
            child = st.archive.front().grasp;
        }
        child = mutate(child, _cfg.variation, _hand, rng);
        child = depenetrate(child, _scene, _hand, _cfg.eval);
        c.grasp = assign_closing_command(_scene, _hand, child, _cfg.eval);
        return c;
    }

    template <typename Process>
    void run_parallel(EvolutionState& st, Process& process)
    {
        struct Done {
            Candidate cand;
            Evaluation ev;
        };
        std::mutex mutex;
        std::condition_variable cv;
        std::deque<Done> done;
        std::size_t in_flight = 0;

        detail::EvalPool pool(_cfg.run.workers);
        auto dispatch = [&]() {
            while (in_flight < _cfg.run.workers && !st.pending.empty()
                && st.completed + in_flight < _cfg.run.total_steps) {
                auto cand = std::make_shared<Candidate>(std::move(st.pending.front()));
                st.pending.pop_front();
                ++in_flight;
                pool.submit([this, cand, &mutex, &cv, &done]() {
                    Evaluation ev = evaluate(_scene, _hand, cand->grasp, _cfg.eval, _hooks.reward);
                    {
                        std::lock_guard lock(mutex);
                        done.push_back({std::move(*cand), std::move(ev)});
                    }
                    cv.notify_one();
                });
            }
        };

        dispatch();
        while (st.completed < _cfg.run.total_steps && in_flight > 0) {
            Done d;
            {
                std::unique_lock lock(mutex);
                cv.wait(lock, [&] { return !done.empty(); });
                d = std::move(done.front());
                done.pop_front();
            }
            --in_flight;
            process(std::move(d.cand), std::move(d.ev));
            dispatch();
        }
        // Drain stragglers so the pool can shut down cleanly.
        while (in_flight > 0) {
            std::unique_lock lock(mutex);
            cv.wait(lock, [&] { return !done.empty(); });
            st.pending.push_front(std::move(done.front().cand));
            done.pop_front();
            --in_flight;
        }
    }

    const SdfScene& _scene;
    const HandModel& _hand;
    EvolutionConfig _cfg;
    EvolutionHooks _hooks;
    EntropyRanges _ranges;
};

/// Convenience wrapper around Evolution::run.
inline RunResult run_evolution(const SdfScene& scene, const HandModel& hand, const std::vector<Grasp>& seeds,
    const EvolutionConfig& cfg, const RewardFn* reward = nullptr)
{
    EvolutionHooks hooks;
    hooks.reward = reward;
    Evolution evo(scene, hand, cfg, hooks);
    return evo.run(seeds);
}

} // namespace graspevo

#endif
