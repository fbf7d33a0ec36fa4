#ifndef GRASPEVO_PREFERENCE_HPP
#define GRASPEVO_PREFERENCE_HPP

#include <graspevo/error.hpp>
#include <graspevo/evaluator.hpp>
#include <graspevo/evolution.hpp>
#include <graspevo/geometry.hpp>
#include <graspevo/hand_model.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace graspevo {

// ---------------------------------------------------------------------------
// Labels and pairs

enum class Label { unlabeled, a_preferred, b_preferred, similar };

inline std::string to_string(Label l)
{
    switch (l) {
    case Label::a_preferred:
        return "a_preferred";
    case Label::b_preferred:
        return "b_preferred";
    case Label::similar:
        return "similar";
    case Label::unlabeled:
        break;
    }
    return "unlabeled";
}

inline Label parse_label(const std::string& s)
{
    if (s == "a_preferred")
        return Label::a_preferred;
    if (s == "b_preferred")
        return Label::b_preferred;
    if (s == "similar")
        return Label::similar;
    if (s == "unlabeled")
        return Label::unlabeled;
    throw Error("invalid-label", s);
}

struct PreferencePair {
    std::string pair_id;
    Grasp a;
    Grasp b;
    std::string scene_id;
    Label label = Label::unlabeled;
};

// ---------------------------------------------------------------------------
// Features

inline constexpr std::size_t kSceneScalars = 8;

/// Bounding radius, box extents (3), area, volume, handle flag, mean mu.
inline VecX scene_summary(const SdfScene& scene)
{
    VecX s(static_cast<Eigen::Index>(kSceneScalars));
    const Vec3 ext = scene.bounds().max - scene.bounds().min;
    double area = 0.0, volume = 0.0, mu = 0.0;
    for (const auto& p : scene.primitives()) {
        area += p.area();
        volume += p.volume();
        mu += p.mu;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, scene.primitives().size()));
    s << scene.bounding_radius(), ext.x(), ext.y(), ext.z(), area, volume,
        scene.category() == SceneCategory::handle ? 1.0 : 0.0, mu / n;
    return s;
}

/// Hand keypoints at the commanded configuration clamp(q + dq_cmd).
inline std::vector<Vec3> commanded_keypoints(const HandModel& hand, const Grasp& g)
{
    VecX q = g.q;
    if (g.dq_cmd.size() == q.size())
        q += g.dq_cmd;
    return forward_kinematics(hand, {g.wrist, hand.clamp(q)}).keypoints;
}

/// Keypoints relative to the scene centroid, flattened, followed by the scene summary.
inline VecX grasp_features(const HandModel& hand, const SdfScene& scene, const Grasp& g)
{
    const auto kp = commanded_keypoints(hand, g);
    VecX f(static_cast<Eigen::Index>(3 * kp.size() + kSceneScalars));
    for (std::size_t i = 0; i < kp.size(); ++i)
        f.segment<3>(static_cast<Eigen::Index>(3 * i)) = kp[i] - scene.centroid();
    f.tail(static_cast<Eigen::Index>(kSceneScalars)) = scene_summary(scene);
    return f;
}

struct FeaturePair {
    VecX a;
    VecX b;
    Label label = Label::unlabeled;
};

// ---------------------------------------------------------------------------
// Reward model

/// R(x) = w2 . relu(W1 z + b1) + b2 with z the standardized features.
class RewardModel {
public:
    RewardModel() = default;

    /// All weights zero, identity standardization: R = 0 everywhere.
    static RewardModel zeros(std::size_t input_dim, std::size_t hidden = 64)
    {
        RewardModel m;
        const auto d = static_cast<Eigen::Index>(input_dim), h = static_cast<Eigen::Index>(hidden);
        m.mean = VecX::Zero(d);
        m.scale = VecX::Ones(d);
        m.w1 = MatX::Zero(h, d);
        m.b1 = VecX::Zero(h);
        m.w2 = VecX::Zero(h);
        m.b2 = 0.0;
        return m;
    }

    /// He-initialized first layer, small second layer.
    static RewardModel initialized(std::size_t input_dim, Rng& rng, std::size_t hidden = 64)
    {
        RewardModel m = zeros(input_dim, hidden);
        const double s1 = std::sqrt(2.0 / static_cast<double>(input_dim));
        const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
        for (Eigen::Index i = 0; i < m.w1.size(); ++i)
            m.w1.data()[i] = s1 * rnd::standard_normal(rng);
        for (Eigen::Index i = 0; i < m.w2.size(); ++i)
            m.w2[i] = s2 * rnd::standard_normal(rng);
        return m;
    }

    std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
    std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }

    VecX standardize(const VecX& x) const
    {
        if (x.size() != w1.cols())
            throw Error("invalid-features", "feature length does not match the model");
        return (x - mean).cwiseQuotient(scale);
    }

    double forward(const VecX& x) const
    {
        const VecX h = (w1 * standardize(x) + b1).cwiseMax(0.0);
        return w2.dot(h) + b2;
    }

    /// Per-feature mean and standard deviation (1 where a feature is constant).
    void fit_standardization(const std::vector<VecX>& samples)
    {
        if (samples.empty())
            return;
        const auto d = samples.front().size();
        mean = VecX::Zero(d);
        for (const auto& s : samples)
            mean += s;
        mean /= static_cast<double>(samples.size());
        VecX var = VecX::Zero(d);
        for (const auto& s : samples)
            var += (s - mean).cwiseAbs2();
        var /= static_cast<double>(samples.size());
        scale = var.cwiseSqrt();
        for (Eigen::Index i = 0; i < d; ++i)
            if (!(scale[i] > 1e-12))
                scale[i] = 1.0;
    }

    VecX mean, scale;
    MatX w1;
    VecX b1, w2;
    double b2 = 0.0;
    double bias = 6.0;
    double lambda_equal = 0.5;
    std::uint64_t version = 0;
};

inline double reward(const RewardModel& model, const VecX& features) { return model.forward(features); }

inline double reward(const RewardModel& model, const HandModel& hand, const SdfScene& scene, const Grasp& g)
{
    return model.forward(grasp_features(hand, scene, g));
}

/// E_reward = R - b.
inline double e_reward(const RewardModel& model, const HandModel& hand, const SdfScene& scene, const Grasp& g)
{
    return reward(model, hand, scene, g) - model.bias;
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Preferred pairs: -log sigma(R_preferred - R_other). Similar pairs:
/// lambda_equal * similar_fraction * (R_a - R_b)^2.
inline double pairwise_loss_from_rewards(double r_a, double r_b, Label label, double lambda_equal,
    double similar_fraction = 1.0)
{
    switch (label) {
    case Label::a_preferred:
        return softplus(-(r_a - r_b));
    case Label::b_preferred:
        return softplus(-(r_b - r_a));
    case Label::similar:
        return lambda_equal * similar_fraction * (r_a - r_b) * (r_a - r_b);
    case Label::unlabeled:
        break;
    }
    throw Error("unlabeled");
}

inline double pairwise_loss(const RewardModel& model, const FeaturePair& pair, double similar_fraction = 1.0)
{
    if (pair.label == Label::unlabeled)
        throw Error("unlabeled");
    return pairwise_loss_from_rewards(model.forward(pair.a), model.forward(pair.b), pair.label, model.lambda_equal,
        similar_fraction);
}

inline double pairwise_loss(const RewardModel& model, const HandModel& hand, const SdfScene& scene,
    const PreferencePair& pair, double similar_fraction = 1.0)
{
    if (pair.label == Label::unlabeled)
        throw Error("unlabeled");
    return pairwise_loss(model,
        FeaturePair{grasp_features(hand, scene, pair.a), grasp_features(hand, scene, pair.b), pair.label},
        similar_fraction);
}

/// Fraction of non-similar labeled pairs ordered correctly by the model.
inline double pairwise_accuracy(const RewardModel& model, std::span<const FeaturePair> pairs)
{
    std::size_t n = 0, correct = 0;
    for (const auto& p : pairs) {
        if (p.label != Label::a_preferred && p.label != Label::b_preferred)
            continue;
        ++n;
        const double d = model.forward(p.a) - model.forward(p.b);
        if ((p.label == Label::a_preferred && d > 0.0) || (p.label == Label::b_preferred && d < 0.0))
            ++correct;
    }
    return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

struct TrainConfig {
    std::size_t epochs = 200;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainResult {
    RewardModel model;
    double heldout_accuracy = 0.0;
    double train_loss = 0.0; // mean batch loss of the last epoch
};

namespace detail {

    struct Gradients {
        MatX w1;
        VecX b1, w2;
        double b2 = 0.0;

        explicit Gradients(const RewardModel& m)
            : w1(MatX::Zero(m.w1.rows(), m.w1.cols())), b1(VecX::Zero(m.b1.size())), w2(VecX::Zero(m.w2.size()))
        {
        }
    };

    /// Adds coeff * dR/dtheta at x.
    inline void accumulate_reward_gradient(const RewardModel& m, const VecX& x, double coeff, Gradients& g)
    {
        const VecX z = m.standardize(x);
        const VecX pre = m.w1 * z + m.b1;
        const VecX h = pre.cwiseMax(0.0);
        g.w2 += coeff * h;
        g.b2 += coeff;
        VecX dpre = coeff * m.w2;
        for (Eigen::Index i = 0; i < pre.size(); ++i)
            if (pre[i] <= 0.0)
                dpre[i] = 0.0;
        g.b1 += dpre;
        g.w1.noalias() += dpre * z.transpose();
    }

    struct AdamState {
        MatX m_w1, v_w1;
        VecX m_b1, v_b1, m_w2, v_w2;
        double m_b2 = 0.0, v_b2 = 0.0;
        std::size_t t = 0;

        explicit AdamState(const RewardModel& m)
            : m_w1(MatX::Zero(m.w1.rows(), m.w1.cols())), v_w1(m_w1), m_b1(VecX::Zero(m.b1.size())), v_b1(m_b1),
              m_w2(VecX::Zero(m.w2.size())), v_w2(m_w2)
        {
        }
    };

    template <typename P, typename G>
    void adam_update(P& param, const G& grad, P& m, P& v, const TrainConfig& cfg, double c1, double c2)
    {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
        param -= cfg.learning_rate * ((m / c1).array() / ((v / c2).array().sqrt() + cfg.epsilon)).matrix();
    }

    inline void adam_step(RewardModel& model, const Gradients& g, AdamState& s, const TrainConfig& cfg)
    {
        ++s.t;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
        adam_update(model.w1, g.w1, s.m_w1, s.v_w1, cfg, c1, c2);
        adam_update(model.b1, g.b1, s.m_b1, s.v_b1, cfg, c1, c2);
        adam_update(model.w2, g.w2, s.m_w2, s.v_w2, cfg, c1, c2);
        s.m_b2 = cfg.beta1 * s.m_b2 + (1.0 - cfg.beta1) * g.b2;
        s.v_b2 = cfg.beta2 * s.v_b2 + (1.0 - cfg.beta2) * g.b2 * g.b2;
        model.b2 -= cfg.learning_rate * (s.m_b2 / c1) / (std::sqrt(s.v_b2 / c2) + cfg.epsilon);
    }

} // namespace detail

/// Minibatch Adam on the mean pairwise loss. Standardization is refit on the
/// training features when epochs > 0; zero epochs return the model unchanged.
inline TrainResult train(const RewardModel& initial, std::span<const FeaturePair> pairs,
    std::span<const FeaturePair> heldout, const TrainConfig& cfg, Rng& rng)
{
    std::vector<FeaturePair> data;
    for (const auto& p : pairs)
        if (p.label != Label::unlabeled)
            data.push_back(p);
    const bool has_signal = std::any_of(data.begin(), data.end(),
        [](const FeaturePair& p) { return p.label == Label::a_preferred || p.label == Label::b_preferred; });
    if (!has_signal)
        throw Error("no-ranking-signal");

    TrainResult res;
    res.model = initial;
    RewardModel& model = res.model;
    if (cfg.epochs > 0) {
        std::vector<VecX> samples;
        samples.reserve(2 * data.size());
        for (const auto& p : data) {
            samples.push_back(p.a);
            samples.push_back(p.b);
        }
        model.fit_standardization(samples);
    }

    detail::AdamState adam(model);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            const double n = static_cast<double>(end - start);
            std::size_t n_sim = 0;
            for (std::size_t k = start; k < end; ++k)
                n_sim += data[order[k]].label == Label::similar ? 1 : 0;
            const double frac_sim = static_cast<double>(n_sim) / n;

            detail::Gradients grad(model);
            double loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const auto& p = data[order[k]];
                const double ra = model.forward(p.a), rb = model.forward(p.b);
                loss += pairwise_loss_from_rewards(ra, rb, p.label, model.lambda_equal, frac_sim);
                double d_ra = 0.0; // dLoss/dR_a; dLoss/dR_b = -d_ra
                if (p.label == Label::a_preferred)
                    d_ra = -sigmoid(-(ra - rb));
                else if (p.label == Label::b_preferred)
                    d_ra = sigmoid(-(rb - ra));
                else
                    d_ra = 2.0 * model.lambda_equal * frac_sim * (ra - rb);
                detail::accumulate_reward_gradient(model, p.a, d_ra / n, grad);
                detail::accumulate_reward_gradient(model, p.b, -d_ra / n, grad);
            }
            detail::adam_step(model, grad, adam, cfg);
            epoch_loss += loss / n;
            ++n_batches;
        }
        res.train_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(1, n_batches));
    }
    res.heldout_accuracy = pairwise_accuracy(model, heldout);
    return res;
}

/// Reward hook for the evaluator, holding its own model snapshot.
inline RewardFn make_reward_fn(std::shared_ptr<const RewardModel> model, const HandModel& hand, const SdfScene& scene)
{
    return [model = std::move(model), &hand, &scene](const Grasp& g) { return e_reward(*model, hand, scene, g); };
}

// ---------------------------------------------------------------------------
// Annotation pair sampling

/// Two successful archive entries, each drawn with weight proportional to
/// (n - rank) by total fitness. The second is restricted to entries at least
/// tau from the first; if the first has no such partner, the first is redrawn
/// among entries that do. Pair ids are 16 hex digits from the rng.
inline PreferencePair sample_annotation_pair(const Archive& archive, Rng& rng, double tau = 0.1,
    const std::string& scene_id = {}, std::size_t split = 6)
{
    std::vector<std::size_t> succ;
    for (std::size_t i = 0; i < archive.size(); ++i)
        if (archive[i].success)
            succ.push_back(i);
    if (succ.size() < 2)
        throw Error("not-enough-successes");
    std::stable_sort(succ.begin(), succ.end(), [&](std::size_t x, std::size_t y) {
        return archive[x].fitness.total > archive[y].fitness.total;
    });
    const std::size_t n = succ.size();

    auto far_enough = [&](std::size_t x, std::size_t y) {
        return embedding_distance(archive[succ[x]].embedding, archive[succ[y]].embedding, split) >= tau;
    };
    auto draw = [&](const std::vector<std::size_t>& pool) {
        std::vector<double> w;
        for (std::size_t r : pool)
            w.push_back(static_cast<double>(n - r));
        std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
        return pool[dist(rng)];
    };

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> has_partner;
    for (std::size_t x = 0; x < n; ++x)
        for (std::size_t y = 0; y < n; ++y)
            if (x != y && far_enough(x, y)) {
                has_partner.push_back(x);
                break;
            }

    std::size_t first = 0, second = 0;
    if (has_partner.empty()) {
        first = draw(all);
        std::vector<std::size_t> rest;
        for (std::size_t y : all)
            if (y != first)
                rest.push_back(y);
        second = draw(rest);
    }
    else {
        first = draw(has_partner);
        std::vector<std::size_t> partners;
        for (std::size_t y : all)
            if (y != first && far_enough(first, y))
                partners.push_back(y);
        second = draw(partners);
    }

    PreferencePair p;
    std::ostringstream id;
    id << std::hex << std::setw(16) << std::setfill('0') << rng();
    p.pair_id = id.str();
    p.a = archive[succ[first]].grasp;
    p.b = archive[succ[second]].grasp;
    p.scene_id = scene_id;
    return p;
}

// ---------------------------------------------------------------------------
// Model files

inline constexpr const char* kModelHeader = "graspevo-reward-model 1";

inline void save_model(const RewardModel& m, std::ostream& os)
{
    os << kModelHeader << '\n';
    os << "version " << m.version << '\n';
    os << "dims " << m.input_dim() << ' ' << m.hidden() << '\n';
    char buf[32];
    auto put = [&](const char* name, const double* data, Eigen::Index count) {
        os << name;
        for (Eigen::Index i = 0; i < count; ++i) {
            std::snprintf(buf, sizeof buf, " %.17g", data[i]);
            os << buf;
        }
        os << '\n';
    };
    put("bias", &m.bias, 1);
    put("lambda_equal", &m.lambda_equal, 1);
    put("mean", m.mean.data(), m.mean.size());
    put("scale", m.scale.data(), m.scale.size());
    put("w1", m.w1.data(), m.w1.size());
    put("b1", m.b1.data(), m.b1.size());
    put("w2", m.w2.data(), m.w2.size());
    put("b2", &m.b2, 1);
}

inline RewardModel load_model(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line) || line != kModelHeader)
        throw Error("bad-model", "missing header");
    std::string key;
    std::uint64_t version = 0;
    std::size_t dim = 0, hidden = 0;
    if (!(is >> key >> version) || key != "version")
        throw Error("bad-model", "missing version");
    if (!(is >> key >> dim >> hidden) || key != "dims" || dim == 0 || hidden == 0)
        throw Error("bad-model", "missing dims");
    RewardModel m = RewardModel::zeros(dim, hidden);
    m.version = version;
    auto get = [&](const char* name, double* data, Eigen::Index count) {
        if (!(is >> key) || key != name)
            throw Error("bad-model", std::string("expected ") + name);
        for (Eigen::Index i = 0; i < count; ++i)
            if (!(is >> data[i]))
                throw Error("bad-model", std::string("short array ") + name);
    };
    get("bias", &m.bias, 1);
    get("lambda_equal", &m.lambda_equal, 1);
    get("mean", m.mean.data(), m.mean.size());
    get("scale", m.scale.data(), m.scale.size());
    get("w1", m.w1.data(), m.w1.size());
    get("b1", m.b1.data(), m.b1.size());
    get("w2", m.w2.data(), m.w2.size());
    get("b2", &m.b2, 1);
    return m;
}

inline void save_model_file(const RewardModel& m, const std::string& path)
{
    std::ofstream os(path);
    if (!os)
        throw Error("io-error", "cannot write " + path);
    save_model(m, os);
}

inline RewardModel load_model_file(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw Error("bad-model", "cannot read " + path);
    return load_model(is);
}

} // namespace graspevo

#endif
