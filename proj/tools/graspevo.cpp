// graspevo command-line entry point: seed, evolve, metrics, train-reward, serve.

#include <graspevo/evaluator.hpp>
#include <graspevo/evolution.hpp>
#include <graspevo/io.hpp>
#include <graspevo/metrics.hpp>
#include <graspevo/preference.hpp>
#include <graspevo/service.hpp>

#include <CLI11.hpp>
#include <httplib.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>

namespace fs = std::filesystem;
using namespace graspevo;

namespace {

struct StopRun {};

std::string output_root()
{
    const char* env = std::getenv("GRASPEVO_OUT");
    return env && *env ? env : "runs";
}

/// Writes through a temporary file so readers never see a partial file.
void write_atomic(const std::string& path, const std::string& text)
{
    const std::string tmp = path + ".tmp";
    io::write_text_file(tmp, text);
    fs::rename(tmp, path);
}

struct Common {
    std::string scene;
    std::string hand = "parametric-12dof";
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::string out;

    io::RunSettings settings() const
    {
        io::RunSettings s = config.empty() ? io::RunSettings{} : io::load_settings(config);
        if (seed)
            s.evolution.run.rng_seed = *seed;
        if (workers)
            s.evolution.run.workers = *workers;
        return s;
    }
};

void add_common(CLI::App* cmd, Common& c, bool needs_scene = true)
{
    auto* opt = cmd->add_option("--scene", c.scene, "scene JSON file");
    if (needs_scene)
        opt->required();
    cmd->add_option("--hand", c.hand, "hand JSON file or 'parametric-12dof'");
    cmd->add_option("--config", c.config, "run configuration JSON");
    cmd->add_option("--seed", c.seed, "rng seed (overrides the config)");
    cmd->add_option("--workers", c.workers, "evaluation workers (overrides the config)");
    cmd->add_option("--out", c.out, "output path");
}

std::vector<Grasp> make_seeds(const SdfScene& scene, const HandModel& hand, const io::RunSettings& s, std::size_t count)
{
    Rng rng(s.evolution.run.rng_seed);
    return seed_population(scene, hand, s.seed_mode, count, rng, s.evolution.eval);
}

// ---------------------------------------------------------------------------

int cmd_seed(const Common& c, std::optional<std::size_t> count, const std::string& mode)
{
    const SdfScene scene = io::load_scene(c.scene);
    const HandModel hand = io::load_hand(c.hand);
    io::RunSettings s = c.settings();
    if (!mode.empty())
        s.seed_mode = mode == "random" ? SeedMode::random : SeedMode::approach_heuristic;
    s.evolution.eval.category = scene.category();
    const std::size_t n = count.value_or(s.evolution.run.population_size);
    std::vector<io::GraspRecord> records;
    for (auto& g : make_seeds(scene, hand, s, n))
        records.push_back({std::move(g), std::nullopt, std::nullopt, Provenance::seed, 0});
    const std::string out = c.out.empty() ? (fs::path(output_root()) / "seeds.jsonl").string() : c.out;
    io::save_records(out, records);
    std::cout << "wrote " << records.size() << " seeds to " << out << "\n";
    return 0;
}

int cmd_evolve(const Common& c, const std::string& seeds_path, bool resume, std::optional<std::size_t> stop_after,
    std::optional<int> serve_port, const std::string& model_path)
{
    const SdfScene scene = io::load_scene(c.scene);
    const HandModel hand = io::load_hand(c.hand);
    io::RunSettings s = c.settings();
    s.evolution.eval.category = scene.category();
    if (!model_path.empty())
        s.reward.model_path = model_path;
    if (serve_port && s.evolution.eval.w_reward == 0.0)
        s.evolution.eval.w_reward = 10.0;
    s.evolution.validate();
    if (stop_after && s.evolution.run.workers > 1)
        throw Error("invalid-config", "--stop-after needs a single worker");

    const std::string run_id = scene.name() + "-s" + std::to_string(s.evolution.run.rng_seed);
    const fs::path dir = c.out.empty() ? fs::path(output_root()) / run_id : fs::path(c.out);
    const fs::path manifest_path = dir / "manifest.json";
    const fs::path checkpoint_path = dir / "checkpoint.jsonl";
    fs::create_directories(dir);

    io::RunManifest manifest{run_id, c.scene, c.hand, s, dir.string(), "running"};
    if (fs::exists(manifest_path)) {
        const auto prior = io::manifest_from_json(io::read_json_file(manifest_path.string(), "manifest-not-found"));
        if (!resume && prior.status != "failed")
            throw Error("run-exists", "output directory already holds run '" + prior.run_id + "'; pass --resume");
        if (resume && prior.run_id != run_id)
            throw Error("bad-checkpoint", "manifest run_id '" + prior.run_id + "' does not match '" + run_id + "'");
    }
    write_atomic(manifest_path.string(), io::manifest_to_json(manifest).dump(2) + "\n");

    // Reward term: a fixed model file, the live annotation service, or none.
    std::unique_ptr<SteeringReward> steering;
    std::unique_ptr<AnnotationService> service;
    std::unique_ptr<httplib::Server> server;
    std::thread server_thread;
    RewardFn reward;
    if (!s.reward.model_path.empty()) {
        auto m = std::make_shared<const RewardModel>(load_model_file(s.reward.model_path));
        reward = make_reward_fn(m, hand, scene);
    }
    else if (serve_port) {
        steering = std::make_unique<SteeringReward>(hand, scene);
        ServiceConfig sc;
        sc.store_dir = (dir / "annotation").string();
        sc.retrain_every = s.reward.retrain_every;
        sc.train = s.reward.train;
        sc.tau = s.evolution.archive.tau;
        sc.embedding_split = s.evolution.archive.pose_dims;
        sc.rng_seed = s.evolution.run.rng_seed;
        sc.scene_id = scene.name();
        service = std::make_unique<AnnotationService>(scene, hand, sc, steering.get());
        reward = steering->reward_fn();
        server = std::make_unique<httplib::Server>();
        mount_annotation_routes(*server, *service);
        if (!server->bind_to_port("127.0.0.1", *serve_port))
            throw Error("port-unavailable", std::to_string(*serve_port));
        server_thread = std::thread([&] { server->listen_after_bind(); });
        std::cout << "annotation service on http://127.0.0.1:" << *serve_port << "\n";
    }

    EvolutionHooks hooks;
    hooks.reward = reward ? &reward : nullptr;
    hooks.on_checkpoint = [&](const EvolutionState& st) {
        write_atomic(checkpoint_path.string(), io::checkpoint_to_text(st));
        if (stop_after && st.completed >= *stop_after)
            throw StopRun{};
    };
    hooks.on_trace = [&](const EvolutionState& st) {
        if (service)
            service->publish(st.archive, st.completed);
        if (steering)
            steering->activate();
    };

    Evolution evo(scene, hand, s.evolution, hooks);
    EvolutionState state;
    if (resume && fs::exists(checkpoint_path)) {
        state = io::load_checkpoint(checkpoint_path.string(), s.evolution.archive);
        std::cout << "resuming " << run_id << " at " << state.completed << " evaluations\n";
    }
    else if (resume) {
        throw Error("bad-checkpoint", "no checkpoint in " + dir.string());
    }
    else {
        std::vector<Grasp> seeds;
        if (!seeds_path.empty())
            for (auto& r : io::load_records(seeds_path))
                seeds.push_back(std::move(r.grasp));
        else
            seeds = make_seeds(scene, hand, s, s.evolution.run.population_size);
        state = evo.initial_state(seeds);
    }

    auto stop_server = [&] {
        if (server) {
            server->stop();
            server_thread.join();
        }
    };

    RunResult res;
    try {
        res = evo.run(std::move(state));
    }
    catch (const StopRun&) {
        stop_server();
        std::cout << "stopped after checkpoint at " << *stop_after << " evaluations\n";
        return 0;
    }
    catch (...) {
        stop_server();
        manifest.status = "failed";
        write_atomic(manifest_path.string(), io::manifest_to_json(manifest).dump(2) + "\n");
        throw;
    }
    stop_server();

    std::vector<io::GraspRecord> archive, success;
    for (const auto& e : res.archive)
        archive.push_back(io::record_from_entry(e));
    for (const auto& e : res.success_set)
        success.push_back(io::record_from_entry(e));
    io::save_records((dir / "archive.jsonl").string(), archive);
    io::save_records((dir / "success_set.jsonl").string(), success);
    io::write_text_file((dir / "trace.tsv").string(), io::trace_table(res.trace));
    manifest.status = "finished";
    write_atomic(manifest_path.string(), io::manifest_to_json(manifest).dump(2) + "\n");

    std::cout << "evaluations " << res.evaluations << ", archive " << res.archive.size() << ", success set "
              << success.size() << ", successful seeds " << res.seed_successes << "\n";
    if (!res.trace.empty()) {
        const auto& last = res.trace.back();
        const auto labels = standard_resolutions();
        for (std::size_t i = 0; i < labels.size() && i < last.dsg.size(); ++i)
            std::cout << labels[i].label << " (archive) " << last.dsg[i] << "\n";
    }
    std::cout << "outputs in " << dir.string() << "\n";
    return 0;
}

int cmd_metrics(const Common& c, const std::string& grasps_path)
{
    const SdfScene scene = io::load_scene(c.scene);
    const HandModel hand = io::load_hand(c.hand);
    io::RunSettings s = c.settings();
    s.evolution.eval.category = scene.category();
    const auto records = io::load_records(grasps_path);
    if (records.empty())
        throw Error("no-grasps", grasps_path);
    std::vector<Grasp> grasps;
    std::vector<bool> ok;
    for (const auto& r : records) {
        grasps.push_back(r.grasp);
        ok.push_back(evaluate(scene, hand, r.grasp, s.evolution.eval).success);
    }
    const MetricsReport rep = metrics_report(grasps, ok, EntropyRanges::for_scene(scene, hand));
    const std::string text = io::report_to_json(rep).dump(2) + "\n";
    if (!c.out.empty())
        io::write_text_file(c.out, text);
    std::cout << text;
    return 0;
}

int cmd_train_reward(const Common& c, const std::string& store, std::size_t epochs, double heldout_fraction)
{
    const SdfScene scene = io::load_scene(c.scene);
    const HandModel hand = io::load_hand(c.hand);
    io::RunSettings s = c.settings();
    s.reward.train.epochs = epochs;

    std::map<std::string, PreferencePair> pairs;
    std::vector<std::string> order;
    {
        std::ifstream is(fs::path(store) / "pairs.jsonl");
        if (!is)
            throw Error("pairs-not-found", store);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty())
                continue;
            const auto j = nlohmann::json::parse(line);
            PreferencePair p;
            p.pair_id = j.at("pair_id").get<std::string>();
            p.a = io::grasp_from_json(j.at("a"));
            p.b = io::grasp_from_json(j.at("b"));
            if (pairs.emplace(p.pair_id, p).second)
                order.push_back(p.pair_id);
        }
    }
    {
        std::ifstream is(fs::path(store) / "labels.jsonl");
        std::string line;
        while (is && std::getline(is, line)) {
            if (line.empty())
                continue;
            const auto j = nlohmann::json::parse(line);
            auto it = pairs.find(j.at("pair_id").get<std::string>());
            if (it != pairs.end() && it->second.label == Label::unlabeled)
                it->second.label = parse_label(j.at("label").get<std::string>());
        }
    }
    std::vector<FeaturePair> data;
    for (const auto& id : order) {
        const auto& p = pairs.at(id);
        if (p.label != Label::unlabeled)
            data.push_back({grasp_features(hand, scene, p.a), grasp_features(hand, scene, p.b), p.label});
    }
    if (data.empty())
        throw Error("no-ranking-signal", "no labeled pairs");
    Rng rng(s.evolution.run.rng_seed);
    std::shuffle(data.begin(), data.end(), rng);
    const auto n_held = static_cast<std::size_t>(heldout_fraction * static_cast<double>(data.size()));
    std::span<const FeaturePair> all(data);
    const auto train_set = all.subspan(0, data.size() - n_held);
    const auto held = all.subspan(data.size() - n_held);
    const auto dim = static_cast<std::size_t>(data.front().a.size());
    TrainResult res = train(RewardModel::initialized(dim, rng), train_set, held, s.reward.train, rng);
    res.model.version = 1;
    const std::string out = c.out.empty() ? (fs::path(store) / "reward_model.txt").string() : c.out;
    save_model_file(res.model, out);
    std::cout << "trained on " << train_set.size() << " pairs, held-out " << held.size() << ", accuracy "
              << res.heldout_accuracy << ", final loss " << res.train_loss << "\nmodel written to " << out << "\n";
    return 0;
}

int cmd_serve(const Common& c, const std::string& archive_path, const std::string& store, int port)
{
    const SdfScene scene = io::load_scene(c.scene);
    const HandModel hand = io::load_hand(c.hand);
    io::RunSettings s = c.settings();

    Archive archive;
    std::size_t step = 0;
    if (archive_path.size() >= 16 && archive_path.ends_with("checkpoint.jsonl")) {
        EvolutionState st = io::load_checkpoint(archive_path, s.evolution.archive);
        archive = std::move(st.archive);
        step = st.completed;
    }
    else {
        for (const auto& r : io::load_records(archive_path)) {
            if (!r.fitness || !r.success)
                throw Error("invalid-record", "archive records need fitness and success");
            ArchiveEntry e;
            e.grasp = r.grasp;
            e.fitness = *r.fitness;
            e.success = *r.success;
            e.embedding = embed(e.grasp, s.evolution.archive);
            e.provenance = r.provenance;
            e.origin_step = r.step;
            archive.push_back(std::move(e));
        }
    }

    ServiceConfig sc;
    sc.store_dir = store.empty() ? (fs::path(output_root()) / "annotation").string() : store;
    sc.retrain_every = s.reward.retrain_every;
    sc.train = s.reward.train;
    sc.tau = s.evolution.archive.tau;
    sc.embedding_split = s.evolution.archive.pose_dims;
    sc.rng_seed = s.evolution.run.rng_seed;
    sc.scene_id = scene.name();
    AnnotationService service(scene, hand, sc);
    service.publish(archive, step);

    httplib::Server server;
    mount_annotation_routes(server, service);
    std::cout << "annotation service on http://127.0.0.1:" << port << " (store " << sc.store_dir << ")\n";
    if (!server.listen("127.0.0.1", port))
        throw Error("port-unavailable", std::to_string(port));
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"graspevo: evolutionary grasp refinement against a quasi-static physics oracle"};
    app.require_subcommand(1);

    Common seed_c, evolve_c, metrics_c, train_c, serve_c;

    auto* seed = app.add_subcommand("seed", "write S seed grasps");
    add_common(seed, seed_c);
    std::optional<std::size_t> seed_count;
    std::string seed_mode;
    seed->add_option("-S,--count", seed_count, "number of seeds (default: population_size)");
    seed->add_option("--mode", seed_mode, "random | approach-heuristic")
        ->check(CLI::IsMember({"random", "approach-heuristic"}));

    auto* evolve = app.add_subcommand("evolve", "run evolutionary refinement");
    add_common(evolve, evolve_c);
    std::string seeds_path, model_path;
    bool resume = false;
    std::optional<std::size_t> stop_after;
    std::optional<int> serve_port;
    evolve->add_option("--seeds", seeds_path, "seed grasp file (default: generate from the config)");
    evolve->add_flag("--resume", resume, "continue from the checkpoint in the output directory");
    evolve->add_option("--stop-after", stop_after, "stop after the checkpoint at this many evaluations");
    evolve->add_option("--serve", serve_port, "steer the run with labels from an annotation service on this port");
    evolve->add_option("--reward-model", model_path, "fixed reward model file for E_reward");

    auto* metrics = app.add_subcommand("metrics", "re-evaluate a grasp file and report metrics");
    add_common(metrics, metrics_c);
    std::string grasps_path;
    metrics->add_option("--grasps", grasps_path, "grasp record file")->required();

    auto* train_cmd = app.add_subcommand("train-reward", "train a reward model from an annotation store");
    add_common(train_cmd, train_c);
    std::string train_store;
    std::size_t epochs = 200;
    double heldout = 0.2;
    train_cmd->add_option("--store", train_store, "annotation store directory")->required();
    train_cmd->add_option("--epochs", epochs, "training epochs");
    train_cmd->add_option("--heldout", heldout, "held-out fraction")->check(CLI::Range(0.0, 0.9));

    auto* serve = app.add_subcommand("serve", "serve annotation pairs from a static archive");
    add_common(serve, serve_c);
    std::string serve_archive, serve_store;
    int port = 8080;
    serve->add_option("--archive", serve_archive, "archive records or checkpoint.jsonl")->required();
    serve->add_option("--store", serve_store, "annotation store directory");
    serve->add_option("--port", port, "listen port");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*seed)
            return cmd_seed(seed_c, seed_count, seed_mode);
        if (*evolve)
            return cmd_evolve(evolve_c, seeds_path, resume, stop_after, serve_port, model_path);
        if (*metrics)
            return cmd_metrics(metrics_c, grasps_path);
        if (*train_cmd)
            return cmd_train_reward(train_c, train_store, epochs, heldout);
        if (*serve)
            return cmd_serve(serve_c, serve_archive, serve_store, port);
    }
    catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
