#ifndef GRASPEVO_SERVICE_HPP
#define GRASPEVO_SERVICE_HPP

#include <graspevo/error.hpp>
#include <graspevo/evolution.hpp>
#include <graspevo/geometry.hpp>
#include <graspevo/hand_model.hpp>
#include <graspevo/io.hpp>
#include <graspevo/preference.hpp>

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace graspevo {

// ---------------------------------------------------------------------------
// Reward snapshot shared between the annotation service and a steered run

/// Holds the latest published model and the one evaluations actually read.
/// `activate()` is called by the coordinator between evaluation batches; until
/// a model is active the reward term is 0.
class SteeringReward {
public:
    SteeringReward(const HandModel& hand, const SdfScene& scene) : _hand(&hand), _scene(&scene) {}

    void publish(std::shared_ptr<const RewardModel> model)
    {
        std::lock_guard lock(_mutex);
        _published = std::move(model);
    }

    void activate()
    {
        std::lock_guard lock(_mutex);
        _active = _published;
    }

    std::shared_ptr<const RewardModel> active() const
    {
        std::lock_guard lock(_mutex);
        return _active;
    }

    RewardFn reward_fn() const
    {
        return [this](const Grasp& g) {
            const auto m = active();
            return m ? e_reward(*m, *_hand, *_scene, g) : 0.0;
        };
    }

private:
    const HandModel* _hand;
    const SdfScene* _scene;
    mutable std::mutex _mutex;
    std::shared_ptr<const RewardModel> _published;
    std::shared_ptr<const RewardModel> _active;
};

// ---------------------------------------------------------------------------
// Annotation service

struct ServiceConfig {
    std::string store_dir;                  // pairs.jsonl, labels.jsonl, reward models
    std::size_t retrain_every = 25;         // labels per retrain
    TrainConfig train;
    std::size_t hidden = 64;
    double tau = 0.1;
    std::size_t embedding_split = 6;
    std::uint64_t rng_seed = 0;
    std::size_t max_object_points = 2048;
    std::string scene_id;
};

struct ServiceStatus {
    std::size_t step = 0;
    std::size_t archive_size = 0;
    std::size_t labels = 0;
    std::size_t model_version = 0;
    std::size_t pairs_served = 0;
};

/// Line-delimited pair and label stores with the retrain cadence. Handlers
/// read only the archive snapshot handed over by `publish`. All members are
/// safe to call from several threads.
class AnnotationService {
public:
    AnnotationService(const SdfScene& scene, const HandModel& hand, ServiceConfig cfg,
        SteeringReward* steering = nullptr)
        : _scene(scene), _hand(hand), _cfg(std::move(cfg)), _steering(steering), _rng(_cfg.rng_seed)
    {
        if (_cfg.retrain_every == 0)
            throw Error("invalid-config", "retrain_every must be positive");
        if (_cfg.store_dir.empty())
            throw Error("invalid-config", "store_dir is required");
        std::filesystem::create_directories(_cfg.store_dir);
        const auto& pts = _scene.surface().points;
        std::vector<std::size_t> keep;
        if (pts.size() <= _cfg.max_object_points) {
            keep.resize(pts.size());
            for (std::size_t i = 0; i < pts.size(); ++i)
                keep[i] = i;
        }
        else {
            keep = farthest_point_sample(pts, _cfg.max_object_points, 0);
        }
        for (std::size_t i : keep)
            _object_points.push_back(pts[i]);
        reload();
    }

    std::string pairs_path() const { return (std::filesystem::path(_cfg.store_dir) / "pairs.jsonl").string(); }
    std::string labels_path() const { return (std::filesystem::path(_cfg.store_dir) / "labels.jsonl").string(); }
    std::string model_path() const { return (std::filesystem::path(_cfg.store_dir) / "reward_model.txt").string(); }

    /// Coordinator hand-off: successful entries of the archive plus the run step.
    void publish(const Archive& archive, std::size_t step)
    {
        Archive snapshot;
        for (const auto& e : archive)
            if (e.success)
                snapshot.push_back(e);
        std::lock_guard lock(_mutex);
        _snapshot = std::move(snapshot);
        _archive_size = archive.size();
        _step = step;
    }

    /// Oldest unlabeled pair, or a newly sampled and persisted one.
    nlohmann::json next_pair()
    {
        std::lock_guard lock(_mutex);
        for (const auto& id : _order) {
            const auto& p = _pairs.at(id);
            if (p.label == Label::unlabeled)
                return bundle(p);
        }
        PreferencePair p = sample_annotation_pair(_snapshot, _rng, _cfg.tau, _cfg.scene_id, _cfg.embedding_split);
        while (_pairs.count(p.pair_id))
            p = sample_annotation_pair(_snapshot, _rng, _cfg.tau, _cfg.scene_id, _cfg.embedding_split);
        append_line(pairs_path(), pair_to_json(p));
        _order.push_back(p.pair_id);
        _pairs.emplace(p.pair_id, p);
        return bundle(p);
    }

    /// Persists the label before returning; every `retrain_every`-th label
    /// retrains from scratch on all labels and bumps the model version.
    ServiceStatus submit_label(const std::string& pair_id, const std::string& label_text)
    {
        const Label label = parse_label(label_text);
        if (label == Label::unlabeled)
            throw Error("invalid-label", "cannot submit 'unlabeled'");
        std::lock_guard lock(_mutex);
        auto it = _pairs.find(pair_id);
        if (it == _pairs.end())
            throw Error("unknown-pair", pair_id);
        if (it->second.label != Label::unlabeled)
            throw Error("already-labeled", pair_id);
        const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::system_clock::now().time_since_epoch())
                             .count();
        append_line(labels_path(), {{"pair_id", pair_id}, {"label", to_string(label)}, {"timestamp_ms", now}});
        it->second.label = label;
        ++_labels;
        if (_labels % _cfg.retrain_every == 0)
            retrain();
        return status_locked();
    }

    ServiceStatus status() const
    {
        std::lock_guard lock(_mutex);
        return status_locked();
    }

    std::shared_ptr<const RewardModel> model() const
    {
        std::lock_guard lock(_mutex);
        return _model;
    }

    const std::string& last_train_error() const { return _train_error; }

    static nlohmann::json status_to_json(const ServiceStatus& s)
    {
        return {{"step", s.step}, {"archive_size", s.archive_size}, {"labels", s.labels},
            {"model_version", s.model_version}, {"pairs_served", s.pairs_served}};
    }

    static nlohmann::json pair_to_json(const PreferencePair& p)
    {
        return {{"pair_id", p.pair_id}, {"scene_id", p.scene_id}, {"a", io::grasp_to_json(p.a)},
            {"b", io::grasp_to_json(p.b)}};
    }

private:
    ServiceStatus status_locked() const
    {
        return {_step, _archive_size, _labels, _version, _pairs.size()};
    }

    nlohmann::json grasp_view(const Grasp& g) const
    {
        VecX q = g.q;
        if (g.dq_cmd.size() == q.size())
            q += g.dq_cmd;
        const HandWorld w = forward_kinematics(_hand, {g.wrist, _hand.clamp(q)});
        nlohmann::json kp = nlohmann::json::array(), tips = nlohmann::json::array();
        for (const auto& p : w.keypoints)
            kp.push_back(io::to_json(p));
        for (const auto& p : w.fingertip_samples)
            tips.push_back(io::to_json(p));
        return {{"keypoints", kp}, {"fingertip_samples", tips}};
    }

    nlohmann::json bundle(const PreferencePair& p) const
    {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& v : _object_points)
            pts.push_back(io::to_json(v));
        return {{"pair_id", p.pair_id}, {"scene_id", p.scene_id}, {"object_points", pts},
            {"grasp_a", grasp_view(p.a)}, {"grasp_b", grasp_view(p.b)}};
    }

    static void append_line(const std::string& path, const nlohmann::json& j)
    {
        std::ofstream os(path, std::ios::app | std::ios::binary);
        if (!os)
            throw Error("io-error", "cannot append to " + path);
        os << j.dump() << '\n';
        os.flush();
        if (!os)
            throw Error("io-error", "write failed on " + path);
    }

    /// Rebuilds pairs, labels and the model version from the stores.
    void reload()
    {
        if (std::ifstream is{pairs_path()}) {
            std::string line;
            while (std::getline(is, line)) {
                if (line.empty())
                    continue;
                const auto j = nlohmann::json::parse(line);
                PreferencePair p;
                p.pair_id = j.at("pair_id").get<std::string>();
                p.scene_id = j.value("scene_id", std::string());
                p.a = io::grasp_from_json(j.at("a"));
                p.b = io::grasp_from_json(j.at("b"));
                if (_pairs.emplace(p.pair_id, p).second)
                    _order.push_back(p.pair_id);
            }
        }
        if (std::ifstream is{labels_path()}) {
            std::string line;
            while (std::getline(is, line)) {
                if (line.empty())
                    continue;
                const auto j = nlohmann::json::parse(line);
                auto it = _pairs.find(j.at("pair_id").get<std::string>());
                if (it == _pairs.end() || it->second.label != Label::unlabeled)
                    continue;
                it->second.label = parse_label(j.at("label").get<std::string>());
                ++_labels;
            }
        }
        // Advance the sampler so resumed sessions do not reissue old ids.
        _rng.discard(_pairs.size());
        if (_labels >= _cfg.retrain_every) {
            _version = _labels / _cfg.retrain_every - 1;
            retrain();
        }
    }

    void retrain()
    {
        std::vector<FeaturePair> data;
        for (const auto& id : _order) {
            const auto& p = _pairs.at(id);
            if (p.label == Label::unlabeled)
                continue;
            data.push_back({grasp_features(_hand, _scene, p.a), grasp_features(_hand, _scene, p.b), p.label});
        }
        const auto dim = static_cast<std::size_t>(data.front().a.size());
        Rng rng(_cfg.rng_seed ^ (0x9e3779b97f4a7c15ULL * (_version + 1)));
        try {
            TrainResult res = train(RewardModel::initialized(dim, rng, _cfg.hidden), data, {}, _cfg.train, rng);
            res.model.version = _version + 1;
            auto m = std::make_shared<const RewardModel>(std::move(res.model));
            save_model_file(*m, model_path());
            _model = m;
            _version = m->version;
            _train_error.clear();
            if (_steering)
                _steering->publish(m);
        }
        catch (const Error& e) {
            // An all-similar label set carries no ranking signal; keep the old model.
            _train_error = e.code();
        }
    }

    const SdfScene& _scene;
    const HandModel& _hand;
    ServiceConfig _cfg;
    SteeringReward* _steering;
    mutable std::mutex _mutex;
    Rng _rng;
    std::vector<Vec3> _object_points;
    Archive _snapshot;
    std::size_t _archive_size = 0;
    std::size_t _step = 0;
    std::map<std::string, PreferencePair> _pairs;
    std::vector<std::string> _order;
    std::size_t _labels = 0;
    std::size_t _version = 0;
    std::shared_ptr<const RewardModel> _model;
    std::string _train_error;
};

// ---------------------------------------------------------------------------
// HTTP binding

inline int http_status_for(const std::string& code)
{
    if (code == "unknown-pair")
        return 404;
    if (code == "already-labeled")
        return 409;
    if (code == "not-enough-successes")
        return 503;
    return 400;
}

/// Registers GET /pair, POST /label and GET /status on `server`.
inline void mount_annotation_routes(httplib::Server& server, AnnotationService& service)
{
    using nlohmann::json;
    auto reply_error = [](httplib::Response& res, const std::string& code, const std::string& detail) {
        res.status = http_status_for(code);
        res.set_content(json{{"error", code}, {"detail", detail}}.dump(), "application/json");
    };
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
        {"Access-Control-Allow-Headers", "Content-Type"}, {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/pair", [&service, reply_error](const httplib::Request&, httplib::Response& res) {
        try {
            res.set_content(service.next_pair().dump(), "application/json");
        }
        catch (const Error& e) {
            reply_error(res, e.code(), e.what());
        }
    });

    server.Post("/label", [&service, reply_error](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto body = json::parse(req.body);
            if (!body.is_object() || !body.contains("pair_id") || !body.contains("label"))
                throw Error("invalid-request", "expected {pair_id, label}");
            const auto st = service.submit_label(body["pair_id"].get<std::string>(), body["label"].get<std::string>());
            json out = AnnotationService::status_to_json(st);
            out["accepted"] = true;
            res.set_content(out.dump(), "application/json");
        }
        catch (const json::exception& e) {
            reply_error(res, "invalid-request", e.what());
        }
        catch (const Error& e) {
            reply_error(res, e.code(), e.what());
        }
    });

    server.Get("/status", [&service](const httplib::Request&, httplib::Response& res) {
        res.set_content(AnnotationService::status_to_json(service.status()).dump(), "application/json");
    });
}

} // namespace graspevo

#endif
