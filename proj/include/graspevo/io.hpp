#ifndef GRASPEVO_IO_HPP
#define GRASPEVO_IO_HPP

#include <graspevo/error.hpp>
#include <graspevo/evaluator.hpp>
#include <graspevo/evolution.hpp>
#include <graspevo/geometry.hpp>
#include <graspevo/hand_model.hpp>
#include <graspevo/metrics.hpp>
#include <graspevo/preference.hpp>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace graspevo::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Small helpers

inline void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what)
{
    if (!j.is_object())
        throw Error("invalid-" + what, "expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items())
        if (!ok.count(key))
            throw Error("invalid-" + what, "unknown field '" + key + "'");
}

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json to_json(const VecX& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(v[i]);
    return a;
}

/// Quaternion as [w, x, y, z].
inline json to_json(const Quat& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

inline Vec3 vec3_from(const json& j, const std::string& what)
{
    if (!j.is_array() || j.size() != 3)
        throw Error("invalid-" + what, "expected 3 numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline VecX vecx_from(const json& j, const std::string& what)
{
    if (!j.is_array())
        throw Error("invalid-" + what, "expected an array");
    VecX v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

inline Quat quat_from(const json& j, const std::string& what)
{
    if (!j.is_array() || j.size() != 4)
        throw Error("invalid-" + what, "expected quaternion [w, x, y, z]");
    return Quat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

inline json read_json_file(const std::string& path, const std::string& missing_code)
{
    std::ifstream is(path);
    if (!is)
        throw Error(missing_code, path);
    try {
        return json::parse(is);
    }
    catch (const json::exception& e) {
        throw Error("invalid-json", path + ": " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text)
{
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty())
        std::filesystem::create_directories(parent);
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw Error("io-error", "cannot write " + path);
    os << text;
}

// ---------------------------------------------------------------------------
// Scenes

inline std::string to_string(PrimitiveKind k)
{
    switch (k) {
    case PrimitiveKind::sphere:
        return "sphere";
    case PrimitiveKind::capsule:
        return "capsule";
    case PrimitiveKind::box:
        return "box";
    case PrimitiveKind::cylinder:
        return "cylinder";
    }
    return "sphere";
}

inline PrimitiveKind primitive_kind_from(const std::string& s)
{
    if (s == "sphere")
        return PrimitiveKind::sphere;
    if (s == "capsule")
        return PrimitiveKind::capsule;
    if (s == "box")
        return PrimitiveKind::box;
    if (s == "cylinder")
        return PrimitiveKind::cylinder;
    throw Error("invalid-scene", "unknown primitive kind '" + s + "'");
}

inline std::string to_string(SceneCategory c) { return c == SceneCategory::handle ? "handle" : "object"; }

inline SceneCategory category_from(const std::string& s)
{
    if (s == "object")
        return SceneCategory::object;
    if (s == "handle")
        return SceneCategory::handle;
    throw Error("invalid-scene", "unknown category '" + s + "'");
}

inline json scene_to_json(const SdfScene& scene)
{
    json prims = json::array();
    for (const auto& p : scene.primitives())
        prims.push_back({{"kind", to_string(p.kind)}, {"position", to_json(p.position)},
            {"orientation", to_json(p.orientation)}, {"dimensions", p.dimensions}, {"mu", p.mu}});
    return {{"name", scene.name()}, {"category", to_string(scene.category())},
        {"surface_density", scene.surface_density()}, {"primitives", prims}};
}

inline SdfScene scene_from_json(const json& j)
{
    try {
        require_keys(j, {"name", "category", "surface_density", "primitives"}, "scene");
        std::vector<Primitive> prims;
        for (const auto& pj : j.at("primitives")) {
            require_keys(pj, {"kind", "position", "orientation", "dimensions", "mu"}, "scene");
            Primitive p;
            p.kind = primitive_kind_from(pj.at("kind").get<std::string>());
            p.position = pj.contains("position") ? vec3_from(pj["position"], "scene") : Vec3::Zero();
            p.orientation = pj.contains("orientation") ? quat_from(pj["orientation"], "scene") : Quat::Identity();
            p.dimensions = pj.at("dimensions").get<std::vector<double>>();
            p.mu = pj.value("mu", 0.5);
            prims.push_back(std::move(p));
        }
        if (prims.empty())
            throw Error("empty-scene");
        return SdfScene(j.value("name", std::string("scene")), category_from(j.value("category", std::string("object"))),
            std::move(prims), j.value("surface_density", SdfScene::kDefaultSurfaceDensity));
    }
    catch (const json::exception& e) {
        throw Error("invalid-scene", e.what());
    }
}

inline SdfScene load_scene(const std::string& path) { return scene_from_json(read_json_file(path, "scene-not-found")); }

// ---------------------------------------------------------------------------
// Hands

inline json hand_to_json(const HandModel& hand)
{
    json links = json::array();
    for (const auto& l : hand.links()) {
        json spheres = json::array();
        for (const auto& s : l.spheres)
            spheres.push_back({{"offset", to_json(s.offset)}, {"radius", s.radius}});
        json kps = json::array(), tips = json::array();
        for (const auto& k : l.keypoints)
            kps.push_back(to_json(k));
        for (const auto& f : l.fingertip_samples)
            tips.push_back(to_json(f));
        links.push_back({{"name", l.name}, {"parent", l.parent},
            {"origin", {{"position", to_json(Vec3(l.origin.translation()))},
                           {"orientation", to_json(Quat(l.origin.rotation()))}}},
            {"axis", to_json(l.axis)}, {"q_min", l.q_min}, {"q_max", l.q_max}, {"spheres", spheres},
            {"keypoints", kps}, {"fingertip_samples", tips}});
    }
    return {{"name", hand.name()}, {"palm_center", to_json(hand.palm_center())},
        {"palm_normal", to_json(hand.palm_normal())}, {"links", links}};
}

/// Either {"name": "parametric-12dof"} for the built-in hand or a full link list.
inline HandModel hand_from_json(const json& j)
{
    try {
        require_keys(j, {"name", "palm_center", "palm_normal", "links"}, "hand");
        if (!j.contains("links")) {
            const auto name = j.value("name", std::string());
            if (name == "parametric-12dof")
                return HandModel::parametric_default();
            throw Error("hand-not-found", name);
        }
        std::vector<HandLink> links;
        for (const auto& lj : j.at("links")) {
            require_keys(lj, {"name", "parent", "origin", "axis", "q_min", "q_max", "spheres", "keypoints",
                                 "fingertip_samples"},
                "hand");
            HandLink l;
            l.name = lj.value("name", std::string());
            l.parent = lj.value("parent", -1);
            if (lj.contains("origin")) {
                const auto& oj = lj["origin"];
                require_keys(oj, {"position", "orientation"}, "hand");
                l.origin = make_transform(oj.contains("position") ? vec3_from(oj["position"], "hand") : Vec3::Zero(),
                    oj.contains("orientation") ? quat_from(oj["orientation"], "hand") : Quat::Identity());
            }
            l.axis = lj.contains("axis") ? vec3_from(lj["axis"], "hand") : Vec3::Zero();
            l.q_min = lj.value("q_min", 0.0);
            l.q_max = lj.value("q_max", 0.0);
            for (const auto& sj : lj.value("spheres", json::array())) {
                require_keys(sj, {"offset", "radius"}, "hand");
                l.spheres.push_back({vec3_from(sj.at("offset"), "hand"), sj.at("radius").get<double>()});
            }
            for (const auto& kj : lj.value("keypoints", json::array()))
                l.keypoints.push_back(vec3_from(kj, "hand"));
            for (const auto& fj : lj.value("fingertip_samples", json::array()))
                l.fingertip_samples.push_back(vec3_from(fj, "hand"));
            links.push_back(std::move(l));
        }
        return HandModel(j.value("name", std::string("hand")), std::move(links),
            j.contains("palm_center") ? vec3_from(j["palm_center"], "hand") : Vec3::Zero(),
            j.contains("palm_normal") ? vec3_from(j["palm_normal"], "hand") : Vec3::UnitZ());
    }
    catch (const json::exception& e) {
        throw Error("invalid-hand", e.what());
    }
}

/// A path to a hand file, or the name of the built-in hand.
inline HandModel load_hand(const std::string& path_or_name)
{
    if (path_or_name.empty() || path_or_name == "parametric-12dof")
        return HandModel::parametric_default();
    return hand_from_json(read_json_file(path_or_name, "hand-not-found"));
}

// ---------------------------------------------------------------------------
// Configuration

struct RewardSettings {
    std::string model_path;    // empty: no preference model
    std::size_t retrain_every = 25;
    TrainConfig train;
};

struct RunSettings {
    EvolutionConfig evolution;
    SeedMode seed_mode = SeedMode::random;
    RewardSettings reward;
};

inline json eval_to_json(const EvalConfig& c)
{
    return {{"w_lifetime", c.w_lifetime}, {"w_dis", c.w_dis}, {"w_pen", c.w_pen}, {"w_reward", c.w_reward},
        {"delta_offset", c.delta_offset}, {"r_ball", c.r_ball}, {"n_c", c.n_c}, {"t_dir", c.t_dir},
        {"disturbance_force", c.disturbance_force}, {"pen_terminate_threshold", c.pen_terminate_threshold},
        {"category", to_string(c.category)}, {"dq_cmd_cap", c.dq_cmd_cap}, {"f_max", c.f_max},
        {"cone_facets", c.cone_facets}, {"contact_tolerance", c.contact_tolerance},
        {"closing_steps", c.closing_steps}, {"depenetration_steps", c.depenetration_steps},
        {"depenetration_alpha", c.depenetration_alpha}, {"clip_translation", c.clip_translation},
        {"clip_orientation", c.clip_orientation}, {"clip_joints", c.clip_joints}};
}

inline json settings_to_json(const RunSettings& s)
{
    const auto& e = s.evolution;
    json run = {{"population_size", e.run.population_size}, {"total_steps", e.run.total_steps},
        {"rng_seed", e.run.rng_seed}, {"final_k", e.run.final_k}, {"workers", e.run.workers},
        {"trace_every", e.run.trace_every}, {"checkpoint_every", e.run.checkpoint_every},
        {"seed_mode", s.seed_mode == SeedMode::random ? "random" : "approach-heuristic"}};
    run["e_min"] = e.run.e_min ? json(*e.run.e_min) : json(nullptr);
    return {{"eval", eval_to_json(e.eval)},
        {"archive", {{"tau", e.archive.tau}, {"p_max", e.archive.p_max}, {"prune_keep", e.archive.prune_keep},
                        {"pose_dims", e.archive.pose_dims}, {"position_scale", e.archive.position_scale},
                        {"orientation_scale", e.archive.orientation_scale}, {"joint_scale", e.archive.joint_scale},
                        {"prune_with_fps", e.archive.prune_with_fps}}},
        {"selection", {{"k_tournament", e.selection.k_tournament}, {"density_radius", e.selection.density_radius},
                          {"density_power", e.selection.density_power}}},
        {"variation", {{"p_mutation", e.variation.p_mutation}, {"p_crossover", e.variation.p_crossover},
                          {"sigma_pos", e.variation.sigma_pos}, {"sigma_orient", e.variation.sigma_orient},
                          {"sigma_q", e.variation.sigma_q}}},
        {"run", run},
        {"reward", {{"model_path", s.reward.model_path}, {"retrain_every", s.reward.retrain_every},
                       {"epochs", s.reward.train.epochs}, {"learning_rate", s.reward.train.learning_rate},
                       {"batch_size", s.reward.train.batch_size}}}};
}

namespace detail {
    template <typename T>
    void maybe(const json& j, const char* key, T& field)
    {
        if (j.contains(key))
            field = j.at(key).get<T>();
    }
} // namespace detail

/// Every block and field is optional; unknown fields are rejected.
inline RunSettings settings_from_json(const json& j)
{
    RunSettings s;
    auto& e = s.evolution;
    try {
        require_keys(j, {"eval", "archive", "selection", "variation", "run", "reward"}, "config");
        if (j.contains("eval")) {
            const auto& c = j["eval"];
            require_keys(c, {"w_lifetime", "w_dis", "w_pen", "w_reward", "delta_offset", "r_ball", "n_c", "t_dir",
                                "disturbance_force", "pen_terminate_threshold", "category", "dq_cmd_cap", "f_max",
                                "cone_facets", "contact_tolerance", "closing_steps", "depenetration_steps",
                                "depenetration_alpha", "clip_translation", "clip_orientation", "clip_joints"},
                "config");
            using detail::maybe;
            maybe(c, "w_lifetime", e.eval.w_lifetime);
            maybe(c, "w_dis", e.eval.w_dis);
            maybe(c, "w_pen", e.eval.w_pen);
            maybe(c, "w_reward", e.eval.w_reward);
            maybe(c, "delta_offset", e.eval.delta_offset);
            maybe(c, "r_ball", e.eval.r_ball);
            maybe(c, "n_c", e.eval.n_c);
            maybe(c, "t_dir", e.eval.t_dir);
            maybe(c, "disturbance_force", e.eval.disturbance_force);
            maybe(c, "pen_terminate_threshold", e.eval.pen_terminate_threshold);
            if (c.contains("category"))
                e.eval.category = category_from(c["category"].get<std::string>());
            maybe(c, "dq_cmd_cap", e.eval.dq_cmd_cap);
            maybe(c, "f_max", e.eval.f_max);
            maybe(c, "cone_facets", e.eval.cone_facets);
            maybe(c, "contact_tolerance", e.eval.contact_tolerance);
            maybe(c, "closing_steps", e.eval.closing_steps);
            maybe(c, "depenetration_steps", e.eval.depenetration_steps);
            maybe(c, "depenetration_alpha", e.eval.depenetration_alpha);
            maybe(c, "clip_translation", e.eval.clip_translation);
            maybe(c, "clip_orientation", e.eval.clip_orientation);
            maybe(c, "clip_joints", e.eval.clip_joints);
        }
        if (j.contains("archive")) {
            const auto& c = j["archive"];
            require_keys(c, {"tau", "p_max", "prune_keep", "pose_dims", "position_scale", "orientation_scale",
                                "joint_scale", "prune_with_fps"},
                "config");
            detail::maybe(c, "tau", e.archive.tau);
            detail::maybe(c, "p_max", e.archive.p_max);
            detail::maybe(c, "prune_keep", e.archive.prune_keep);
            detail::maybe(c, "pose_dims", e.archive.pose_dims);
            detail::maybe(c, "position_scale", e.archive.position_scale);
            detail::maybe(c, "orientation_scale", e.archive.orientation_scale);
            detail::maybe(c, "joint_scale", e.archive.joint_scale);
            detail::maybe(c, "prune_with_fps", e.archive.prune_with_fps);
        }
        if (j.contains("selection")) {
            const auto& c = j["selection"];
            require_keys(c, {"k_tournament", "density_radius", "density_power"}, "config");
            detail::maybe(c, "k_tournament", e.selection.k_tournament);
            detail::maybe(c, "density_radius", e.selection.density_radius);
            detail::maybe(c, "density_power", e.selection.density_power);
        }
        if (j.contains("variation")) {
            const auto& c = j["variation"];
            require_keys(c, {"p_mutation", "p_crossover", "sigma_pos", "sigma_orient", "sigma_q"}, "config");
            detail::maybe(c, "p_mutation", e.variation.p_mutation);
            detail::maybe(c, "p_crossover", e.variation.p_crossover);
            detail::maybe(c, "sigma_pos", e.variation.sigma_pos);
            detail::maybe(c, "sigma_orient", e.variation.sigma_orient);
            detail::maybe(c, "sigma_q", e.variation.sigma_q);
        }
        if (j.contains("run")) {
            const auto& c = j["run"];
            require_keys(c, {"population_size", "total_steps", "rng_seed", "final_k", "e_min", "workers", "trace_every",
                                "checkpoint_every", "seed_mode"},
                "config");
            detail::maybe(c, "population_size", e.run.population_size);
            detail::maybe(c, "total_steps", e.run.total_steps);
            detail::maybe(c, "rng_seed", e.run.rng_seed);
            detail::maybe(c, "final_k", e.run.final_k);
            if (c.contains("e_min") && !c["e_min"].is_null())
                e.run.e_min = c["e_min"].get<int>();
            detail::maybe(c, "workers", e.run.workers);
            detail::maybe(c, "trace_every", e.run.trace_every);
            detail::maybe(c, "checkpoint_every", e.run.checkpoint_every);
            if (c.contains("seed_mode")) {
                const auto m = c["seed_mode"].get<std::string>();
                if (m == "random")
                    s.seed_mode = SeedMode::random;
                else if (m == "approach-heuristic")
                    s.seed_mode = SeedMode::approach_heuristic;
                else
                    throw Error("invalid-config", "unknown seed_mode '" + m + "'");
            }
        }
        if (j.contains("reward")) {
            const auto& c = j["reward"];
            require_keys(c, {"model_path", "retrain_every", "epochs", "learning_rate", "batch_size"}, "config");
            detail::maybe(c, "model_path", s.reward.model_path);
            detail::maybe(c, "retrain_every", s.reward.retrain_every);
            detail::maybe(c, "epochs", s.reward.train.epochs);
            detail::maybe(c, "learning_rate", s.reward.train.learning_rate);
            detail::maybe(c, "batch_size", s.reward.train.batch_size);
        }
    }
    catch (const json::exception& ex) {
        throw Error("invalid-config", ex.what());
    }
    return s;
}

inline RunSettings load_settings(const std::string& path)
{
    return settings_from_json(read_json_file(path, "config-not-found"));
}

// ---------------------------------------------------------------------------
// Grasp records

inline json fitness_to_json(const FitnessBreakdown& f)
{
    return {{"e_lifetime", f.e_lifetime}, {"e_dis", f.e_dis}, {"e_pen", f.e_pen}, {"e_reward", f.e_reward},
        {"total", f.total}};
}

inline FitnessBreakdown fitness_from_json(const json& j)
{
    require_keys(j, {"e_lifetime", "e_dis", "e_pen", "e_reward", "total"}, "record");
    FitnessBreakdown f;
    f.e_lifetime = j.at("e_lifetime").get<int>();
    f.e_dis = j.at("e_dis").get<double>();
    f.e_pen = j.at("e_pen").get<double>();
    f.e_reward = j.at("e_reward").get<double>();
    f.total = j.at("total").get<double>();
    return f;
}

inline json grasp_to_json(const Grasp& g)
{
    const Euler e = g.wrist.euler();
    return {{"position", to_json(g.wrist.position)}, {"quaternion", to_json(g.wrist.orientation)},
        {"euler", json::array({e.roll, e.pitch, e.yaw})}, {"q", to_json(g.q)},
        {"dq_cmd", to_json(g.dq_cmd.size() == g.q.size() ? g.dq_cmd : VecX(VecX::Zero(g.q.size())))}};
}

/// The quaternion is authoritative; the stored euler must name the same
/// rotation to within 1e-6 rad.
inline Grasp grasp_from_json(const json& j)
{
    Grasp g;
    g.wrist.position = vec3_from(j.at("position"), "record");
    g.wrist.orientation = quat_from(j.at("quaternion"), "record");
    if (!is_unit(g.wrist.orientation, 1e-6))
        throw Error("invalid-record", "quaternion is not unit norm");
    g.q = vecx_from(j.at("q"), "record");
    g.dq_cmd = j.contains("dq_cmd") ? vecx_from(j["dq_cmd"], "record") : VecX(VecX::Zero(g.q.size()));
    if (g.dq_cmd.size() != g.q.size())
        throw Error("invalid-record", "dq_cmd and q lengths differ");
    if (j.contains("euler")) {
        const Vec3 stored = vec3_from(j["euler"], "record");
        const Quat from_euler = quaternion_from_euler({stored.x(), stored.y(), stored.z()});
        if (from_euler.angularDistance(g.wrist.orientation) > 1e-6)
            throw Error("invalid-record", "euler and quaternion disagree");
    }
    return g;
}

struct GraspRecord {
    Grasp grasp;
    std::optional<FitnessBreakdown> fitness;
    std::optional<bool> success;
    Provenance provenance = Provenance::seed;
    std::size_t step = 0; // offspring submission index
};

inline json provenance_to_json(Provenance p, std::size_t step)
{
    if (p == Provenance::seed)
        return "seed";
    return {{"offspring", step}};
}

inline std::pair<Provenance, std::size_t> provenance_from_json(const json& j)
{
    if (j.is_string() && j.get<std::string>() == "seed")
        return {Provenance::seed, 0};
    if (j.is_object() && j.contains("offspring"))
        return {Provenance::offspring, j["offspring"].get<std::size_t>()};
    throw Error("invalid-record", "bad provenance");
}

inline json record_to_json(const GraspRecord& r)
{
    json j = grasp_to_json(r.grasp);
    j["fitness"] = r.fitness ? fitness_to_json(*r.fitness) : json(nullptr);
    j["success"] = r.success ? json(*r.success) : json(nullptr);
    j["provenance"] = provenance_to_json(r.provenance, r.step);
    return j;
}

inline GraspRecord record_from_json(const json& j)
{
    try {
        require_keys(j, {"position", "quaternion", "euler", "q", "dq_cmd", "fitness", "success", "provenance"},
            "record");
        GraspRecord r;
        r.grasp = grasp_from_json(j);
        if (j.contains("fitness") && !j["fitness"].is_null())
            r.fitness = fitness_from_json(j["fitness"]);
        if (j.contains("success") && !j["success"].is_null())
            r.success = j["success"].get<bool>();
        if (j.contains("provenance"))
            std::tie(r.provenance, r.step) = provenance_from_json(j["provenance"]);
        return r;
    }
    catch (const json::exception& e) {
        throw Error("invalid-record", e.what());
    }
}

inline GraspRecord record_from_entry(const ArchiveEntry& e)
{
    return {e.grasp, e.fitness, e.success, e.provenance, e.origin_step};
}

inline std::string records_to_text(const std::vector<GraspRecord>& records)
{
    std::string out;
    for (const auto& r : records) {
        out += record_to_json(r).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<GraspRecord> records_from_stream(std::istream& is)
{
    std::vector<GraspRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        }
        catch (const json::exception& e) {
            throw Error("invalid-record", "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<GraspRecord> load_records(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw Error("grasps-not-found", path);
    return records_from_stream(is);
}

inline void save_records(const std::string& path, const std::vector<GraspRecord>& records)
{
    write_text_file(path, records_to_text(records));
}

// ---------------------------------------------------------------------------
// Trace tables and reports

inline std::string trace_table(const std::vector<TraceRow>& trace)
{
    std::ostringstream os;
    os << "step\tarchive_size\tbest_total\tsuccess_count";
    for (const auto& r : standard_resolutions())
        os << '\t' << r.label;
    os << "\tentropy_mean\n";
    os << std::setprecision(10);
    for (const auto& row : trace) {
        os << row.step << '\t' << row.archive_size << '\t' << row.best_total << '\t' << row.success_count;
        for (auto d : row.dsg)
            os << '\t' << d;
        os << '\t' << row.entropy_mean << '\n';
    }
    return os.str();
}

inline json trace_row_to_json(const TraceRow& r)
{
    return {{"step", r.step}, {"archive_size", r.archive_size}, {"best_total", r.best_total},
        {"success_count", r.success_count}, {"dsg", r.dsg}, {"entropy_mean", r.entropy_mean}};
}

inline TraceRow trace_row_from_json(const json& j)
{
    TraceRow r;
    r.step = j.at("step").get<std::size_t>();
    r.archive_size = j.at("archive_size").get<std::size_t>();
    r.best_total = j.at("best_total").get<double>();
    r.success_count = j.at("success_count").get<std::size_t>();
    r.dsg = j.at("dsg").get<std::vector<std::size_t>>();
    r.entropy_mean = j.at("entropy_mean").get<double>();
    return r;
}

inline json report_to_json(const MetricsReport& r)
{
    json dsg = json::object();
    for (const auto& [label, count] : r.dsg)
        dsg[label] = count;
    return {{"total", r.total}, {"successes", r.successes}, {"success_rate", r.success_rate}, {"dsg", dsg},
        {"entropy_pos", r.entropy.position}, {"entropy_orient", r.entropy.orientation},
        {"entropy_joints", r.entropy.joints}, {"entropy_mean", r.entropy.mean}};
}

// ---------------------------------------------------------------------------
// Checkpoints: a header line, then one line per archive entry, pending
// candidate and trace row.

inline constexpr const char* kCheckpointFormat = "graspevo-checkpoint";

inline std::string checkpoint_to_text(const EvolutionState& st)
{
    std::string out;
    json header = {{"format", kCheckpointFormat}, {"version", 1}, {"completed", st.completed},
        {"submitted", st.submitted}, {"seed_evaluations", st.seed_evaluations}, {"seed_successes", st.seed_successes},
        {"rng", st.rng_state}, {"archive", st.archive.size()}, {"pending", st.pending.size()},
        {"trace", st.trace.size()}};
    out += header.dump() + '\n';
    for (const auto& e : st.archive) {
        json j = record_to_json(record_from_entry(e));
        j["kind"] = "entry";
        j["embedding"] = to_json(e.embedding);
        j["insert_step"] = e.insert_step;
        out += j.dump() + '\n';
    }
    for (const auto& c : st.pending) {
        json j = grasp_to_json(c.grasp);
        j["kind"] = "pending";
        j["provenance"] = provenance_to_json(c.provenance, c.submit_index);
        j["submit_index"] = c.submit_index;
        out += j.dump() + '\n';
    }
    for (const auto& r : st.trace) {
        json j = trace_row_to_json(r);
        j["kind"] = "trace";
        out += j.dump() + '\n';
    }
    return out;
}

/// Rejects malformed lines, count mismatches and stored embeddings that differ
/// from the recomputed ones.
inline EvolutionState checkpoint_from_stream(std::istream& is, const ArchiveConfig& cfg)
{
    EvolutionState st;
    try {
        std::string line;
        if (!std::getline(is, line))
            throw Error("bad-checkpoint", "empty file");
        const json h = json::parse(line);
        if (h.value("format", std::string()) != kCheckpointFormat || h.value("version", 0) != 1)
            throw Error("bad-checkpoint", "unknown format");
        st.completed = h.at("completed").get<std::size_t>();
        st.submitted = h.at("submitted").get<std::size_t>();
        st.seed_evaluations = h.at("seed_evaluations").get<std::size_t>();
        st.seed_successes = h.at("seed_successes").get<std::size_t>();
        st.rng_state = h.at("rng").get<std::string>();
        rnd::load(st.rng_state);
        const auto n_archive = h.at("archive").get<std::size_t>();
        const auto n_pending = h.at("pending").get<std::size_t>();
        const auto n_trace = h.at("trace").get<std::size_t>();

        while (std::getline(is, line)) {
            if (line.empty())
                continue;
            json j = json::parse(line);
            const auto kind = j.at("kind").get<std::string>();
            j.erase("kind");
            if (kind == "entry") {
                ArchiveEntry e;
                const VecX stored = vecx_from(j.at("embedding"), "checkpoint");
                e.insert_step = j.at("insert_step").get<std::size_t>();
                j.erase("embedding");
                j.erase("insert_step");
                const GraspRecord r = record_from_json(j);
                if (!r.fitness || !r.success)
                    throw Error("bad-checkpoint", "archive entry without fitness");
                e.grasp = r.grasp;
                e.fitness = *r.fitness;
                e.success = *r.success;
                e.provenance = r.provenance;
                e.origin_step = r.step;
                e.embedding = embed(e.grasp, cfg);
                if (stored.size() != e.embedding.size() || stored != e.embedding)
                    throw Error("bad-checkpoint", "embedding does not match its grasp");
                st.archive.push_back(std::move(e));
            }
            else if (kind == "pending") {
                Candidate c;
                c.submit_index = j.at("submit_index").get<std::size_t>();
                c.provenance = provenance_from_json(j.at("provenance")).first;
                j.erase("submit_index");
                j.erase("provenance");
                c.grasp = grasp_from_json(j);
                st.pending.push_back(std::move(c));
            }
            else if (kind == "trace") {
                st.trace.push_back(trace_row_from_json(j));
            }
            else {
                throw Error("bad-checkpoint", "unknown line kind '" + kind + "'");
            }
        }
        if (st.archive.size() != n_archive || st.pending.size() != n_pending || st.trace.size() != n_trace)
            throw Error("bad-checkpoint", "record counts do not match the header");
    }
    catch (const json::exception& e) {
        throw Error("bad-checkpoint", e.what());
    }
    catch (const Error& e) {
        if (e.code() == "bad-checkpoint")
            throw;
        throw Error("bad-checkpoint", e.what());
    }
    return st;
}

inline EvolutionState load_checkpoint(const std::string& path, const ArchiveConfig& cfg)
{
    std::ifstream is(path);
    if (!is)
        throw Error("bad-checkpoint", "cannot read " + path);
    return checkpoint_from_stream(is, cfg);
}

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
    std::string run_id;
    std::string scene_path;
    std::string hand_path;
    RunSettings settings;
    std::string output_dir;
    std::string status = "running"; // running | finished | failed
};

inline json manifest_to_json(const RunManifest& m)
{
    return {{"run_id", m.run_id}, {"scene", m.scene_path}, {"hand", m.hand_path},
        {"config", settings_to_json(m.settings)}, {"rng_seed", m.settings.evolution.run.rng_seed},
        {"output_dir", m.output_dir}, {"status", m.status}};
}

inline RunManifest manifest_from_json(const json& j)
{
    require_keys(j, {"run_id", "scene", "hand", "config", "rng_seed", "output_dir", "status"}, "manifest");
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.scene_path = j.at("scene").get<std::string>();
    m.hand_path = j.value("hand", std::string("parametric-12dof"));
    m.settings = settings_from_json(j.value("config", json::object()));
    if (j.contains("rng_seed"))
        m.settings.evolution.run.rng_seed = j["rng_seed"].get<std::uint64_t>();
    m.output_dir = j.value("output_dir", std::string());
    m.status = j.value("status", std::string("running"));
    return m;
}

} // namespace graspevo::io

#endif
