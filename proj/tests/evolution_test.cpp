#include "support.hpp"

#include <graspevo/evolution.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace graspevo;
using namespace graspevo::testing;

namespace {

ArchiveEntry entry_with_embedding(const VecX& embedding, double total, std::size_t insert_step = 0)
{
    ArchiveEntry e;
    e.embedding = embedding;
    e.fitness.total = total;
    e.insert_step = insert_step;
    return e;
}

VecX base_embedding() { return VecX::Zero(18); }

/// Embeddings spaced far beyond the default density radius.
VecX isolated_embedding(std::size_t i)
{
    VecX e = VecX::Zero(18);
    e[0] = 10.0 * static_cast<double>(i);
    return e;
}

EvolutionConfig small_run(std::size_t total, std::uint64_t seed = 3)
{
    EvolutionConfig cfg;
    cfg.run.population_size = 8;
    cfg.run.total_steps = total;
    cfg.run.rng_seed = seed;
    return cfg;
}

std::vector<Grasp> seeds_for(const SdfScene& scene, const HandModel& hand, std::size_t n, std::uint64_t seed = 1)
{
    Rng rng(seed);
    return seed_population(scene, hand, SeedMode::random, n, rng);
}

void expect_same_archive(const Archive& a, const Archive& b)
{
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].fitness.total, b[i].fitness.total);
        EXPECT_EQ(a[i].embedding, b[i].embedding);
        EXPECT_EQ(a[i].insert_step, b[i].insert_step);
        EXPECT_EQ(a[i].grasp.dq_cmd, b[i].grasp.dq_cmd);
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Embedding

TEST(Embedding, LayoutIsScaledPositionEulerJoints)
{
    const VecX q = VecX::LinSpaced(12, 0.0, 1.1);
    const Euler e{0.1, -0.2, 0.3};
    const Grasp g = grasp_at(Vec3(0.01, 0.02, -0.03), q, e);
    const VecX phi = embed(g);
    ASSERT_EQ(phi.size(), 18);
    EXPECT_LT((phi.head<3>() - Vec3(0.1, 0.2, -0.3)).norm(), 1e-15);
    EXPECT_NEAR(phi[3], 0.1, 1e-12);
    EXPECT_NEAR(phi[4], -0.2, 1e-12);
    EXPECT_NEAR(phi[5], 0.3, 1e-12);
    EXPECT_EQ(phi.tail(12), q);
}

TEST(Embedding, DistanceExamples)
{
    const VecX a = base_embedding();
    EXPECT_EQ(embedding_distance(a, a), 0.0);

    VecX x_offset = a;
    x_offset[0] = 1.0; // 0.1 m after the x10 position scaling
    EXPECT_NEAR(embedding_distance(a, x_offset), 0.5 * std::sqrt(1.0 / 6.0), 1e-15);
    EXPECT_NEAR(embedding_distance(a, x_offset), 0.2041, 5e-5);

    VecX joints = a;
    joints.tail(12).setConstant(0.1);
    EXPECT_NEAR(embedding_distance(a, joints), 0.05, 1e-15);

    EXPECT_THROW(embedding_distance(a, VecX::Zero(17)), Error);
}

TEST(Embedding, DistanceIsASymmetricSeminorm)
{
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        VecX a(18), b(18), c(18);
        for (Eigen::Index k = 0; k < 18; ++k) {
            a[k] = n(rng);
            b[k] = n(rng);
            c[k] = n(rng);
        }
        EXPECT_DOUBLE_EQ(embedding_distance(a, b), embedding_distance(b, a));
        EXPECT_LE(embedding_distance(a, c), embedding_distance(a, b) + embedding_distance(b, c) + 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Archive

TEST(Archive, EmptyArchiveAlwaysInserts)
{
    Archive a;
    const auto out = insert_or_replace(a, entry_with_embedding(base_embedding(), -5.0), ArchiveConfig{});
    EXPECT_EQ(out.kind, InsertKind::inserted);
    EXPECT_EQ(a.size(), 1u);
}

TEST(Archive, CloseAndBetterReplaces)
{
    Archive a{entry_with_embedding(base_embedding(), 2.0)};
    VecX near = base_embedding();
    near.tail(12).setConstant(0.1); // distance 0.05 < tau
    const auto out = insert_or_replace(a, entry_with_embedding(near, 3.0), ArchiveConfig{});
    EXPECT_EQ(out.kind, InsertKind::replaced);
    EXPECT_NEAR(out.nn_distance, 0.05, 1e-15);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0].fitness.total, 3.0);
}

TEST(Archive, TieIsDiscarded)
{
    Archive a{entry_with_embedding(base_embedding(), 2.0)};
    VecX near = base_embedding();
    near.tail(12).setConstant(0.1);
    const auto out = insert_or_replace(a, entry_with_embedding(near, 2.0), ArchiveConfig{});
    EXPECT_EQ(out.kind, InsertKind::discarded);
    EXPECT_EQ(a[0].embedding, base_embedding());
}

TEST(Archive, DistanceExactlyTauInserts)
{
    Archive a{entry_with_embedding(base_embedding(), 2.0)};
    VecX at_tau = base_embedding();
    at_tau.tail(12).setConstant(0.2); // 0.5 * 0.2 = 0.1
    ArchiveConfig cfg;
    ASSERT_EQ(embedding_distance(base_embedding(), at_tau), cfg.tau);
    EXPECT_EQ(insert_or_replace(a, entry_with_embedding(at_tau, 0.0), cfg).kind, InsertKind::inserted);
}

TEST(Archive, RandomizedNoveltyAndElitism)
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 0.4);
    std::normal_distribution<double> fit(0.0, 10.0);
    ArchiveConfig cfg;
    Archive archive;
    int inserted = 0, replaced = 0, discarded = 0;
    for (int op = 0; op < 10000; ++op) {
        VecX e(18);
        for (Eigen::Index k = 0; k < 18; ++k)
            e[k] = u(rng);
        const double total = fit(rng);
        double nn = std::numeric_limits<double>::infinity();
        std::size_t nn_i = 0;
        for (std::size_t i = 0; i < archive.size(); ++i) {
            const double d = embedding_distance(archive[i].embedding, e);
            if (d < nn) {
                nn = d;
                nn_i = i;
            }
        }
        const double incumbent = archive.empty() ? 0.0 : archive[nn_i].fitness.total;
        const auto out = insert_or_replace(archive, entry_with_embedding(e, total), cfg);
        switch (out.kind) {
        case InsertKind::inserted:
            ASSERT_GE(nn, cfg.tau);
            ++inserted;
            break;
        case InsertKind::replaced:
            ASSERT_LT(nn, cfg.tau);
            ASSERT_EQ(out.index, nn_i);
            ASSERT_GT(archive[nn_i].fitness.total, incumbent);
            ++replaced;
            break;
        case InsertKind::discarded:
            ASSERT_LT(nn, cfg.tau);
            ASSERT_LE(total, incumbent);
            ++discarded;
            break;
        }
    }
    EXPECT_GT(inserted, 0);
    EXPECT_GT(replaced, 0);
    EXPECT_GT(discarded, 0);
}

TEST(Archive, ConfigInvariants)
{
    ArchiveConfig cfg;
    cfg.prune_keep = cfg.p_max;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = ArchiveConfig{};
    cfg.tau = 0.0;
    EXPECT_THROW(cfg.validate(), Error);
    EXPECT_NO_THROW(ArchiveConfig{}.validate());
}

// ---------------------------------------------------------------------------
// Density reweighting

TEST(Density, IsolatedEntryKeepsItsFitness)
{
    Archive a;
    for (std::size_t i = 0; i < 5; ++i)
        a.push_back(entry_with_embedding(isolated_embedding(i), 3.0 + static_cast<double>(i)));
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_NEAR(density_reweight(a, i, SelectionConfig{}), a[i].fitness.total, 1e-9);
}

TEST(Density, IdenticalEntriesShareTheirFitness)
{
    for (std::size_t n : {2u, 10u, 100u}) {
        Archive a(n, entry_with_embedding(base_embedding(), 7.3));
        for (std::size_t i = 0; i < n; ++i)
            EXPECT_NEAR(density_reweight(a, i, SelectionConfig{}), 7.3 / static_cast<double>(n), 1e-9);
    }
}

TEST(Density, NeighbourAtRadiusOverRootTwo)
{
    SelectionConfig cfg;
    const double d = cfg.density_radius / std::sqrt(2.0);
    VecX other = base_embedding();
    other.tail(12).setConstant(2.0 * d); // joint-only offset: distance 0.5 * 2d = d
    Archive a{entry_with_embedding(base_embedding(), 6.0), entry_with_embedding(other, 1.0)};
    ASSERT_NEAR(embedding_distance(a[0].embedding, a[1].embedding), d, 1e-15);
    EXPECT_NEAR(density_reweight(a, 0, cfg), 6.0 / 1.5, 1e-12);
}

TEST(Density, MatchesDirectDivisorOnRandomArchives)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SelectionConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        Archive a;
        for (int i = 0; i < 30; ++i) {
            VecX e(18);
            for (Eigen::Index k = 0; k < 18; ++k)
                e[k] = u(rng);
            a.push_back(entry_with_embedding(e, 10.0 * u(rng)));
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            std::vector<double> d;
            for (std::size_t j = 0; j < a.size(); ++j)
                if (j != i)
                    d.push_back(embedding_distance(a[i].embedding, a[j].embedding));
            const double expected = a[i].fitness.total / density_divisor(d, cfg.density_radius, cfg.density_power);
            EXPECT_NEAR(density_reweight(a, i, cfg), expected, 1e-12);
        }
    }
}

// ---------------------------------------------------------------------------
// Tournament

TEST(Tournament, PicksTheTwoLargestReweightedScores)
{
    Archive a;
    const double totals[] = {1.0, 9.0, 4.0, 7.0};
    for (std::size_t i = 0; i < 4; ++i)
        a.push_back(entry_with_embedding(isolated_embedding(i), totals[i]));
    Rng rng(1);
    const auto [first, second] = tournament_select(a, SelectionConfig{}, rng);
    EXPECT_EQ(first, 1u);
    EXPECT_EQ(second, 3u);
}

TEST(Tournament, EqualScoresGoToTheLowestIndices)
{
    Archive a;
    for (std::size_t i = 0; i < 4; ++i)
        a.push_back(entry_with_embedding(isolated_embedding(i), 2.0));
    Rng rng(8);
    const auto [first, second] = tournament_select(a, SelectionConfig{}, rng);
    EXPECT_EQ(first, 0u);
    EXPECT_EQ(second, 1u);
}

TEST(Tournament, WinnersComeFromTheSampleRankedByReweightedScore)
{
    std::mt19937_64 gen(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Archive a;
    for (int i = 0; i < 40; ++i) {
        VecX e(18);
        for (Eigen::Index k = 0; k < 18; ++k)
            e[k] = u(gen);
        a.push_back(entry_with_embedding(e, 10.0 * u(gen)));
    }
    SelectionConfig cfg;
    Rng rng(4);
    for (int round = 0; round < 50; ++round) {
        Rng replay = rng;
        std::vector<std::size_t> sample;
        while (sample.size() < cfg.k_tournament) {
            const auto i = static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, a.size() - 1)(replay));
            if (std::find(sample.begin(), sample.end(), i) == sample.end())
                sample.push_back(i);
        }
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t i : sample) {
            std::vector<double> d;
            for (std::size_t j = 0; j < a.size(); ++j)
                if (j != i)
                    d.push_back(embedding_distance(a[i].embedding, a[j].embedding));
            ranked.emplace_back(a[i].fitness.total / density_divisor(d, cfg.density_radius, cfg.density_power), i);
        }
        std::sort(ranked.begin(), ranked.end(), [](auto x, auto y) { return x.first > y.first; });
        const auto [first, second] = tournament_select(a, cfg, rng);
        EXPECT_EQ(first, ranked[0].second);
        EXPECT_EQ(second, ranked[1].second);
    }
}

TEST(Tournament, SeededSelectionIsReproducible)
{
    Archive a;
    for (std::size_t i = 0; i < 20; ++i)
        a.push_back(entry_with_embedding(isolated_embedding(i), static_cast<double>(i % 7)));
    Rng r1(77), r2(77);
    for (int k = 0; k < 100; ++k)
        EXPECT_EQ(tournament_select(a, SelectionConfig{}, r1), tournament_select(a, SelectionConfig{}, r2));
}

TEST(Tournament, NeedsTwoEntries)
{
    Archive a{entry_with_embedding(base_embedding(), 1.0)};
    Rng rng(1);
    try {
        tournament_select(a, SelectionConfig{}, rng);
        FAIL();
    }
    catch (const Error& e) {
        EXPECT_EQ(e.code(), "population-too-small");
    }
}

TEST(Tournament, SmallArchiveSamplesWithReplacement)
{
    Archive a{entry_with_embedding(isolated_embedding(0), 1.0), entry_with_embedding(isolated_embedding(1), 5.0),
        entry_with_embedding(isolated_embedding(2), 3.0)};
    Rng rng(2);
    for (int k = 0; k < 50; ++k) {
        const auto [first, second] = tournament_select(a, SelectionConfig{}, rng);
        EXPECT_LT(first, 3u);
        EXPECT_LT(second, 3u);
        EXPECT_GE(a[first].fitness.total, a[second].fitness.total);
    }
}

// ---------------------------------------------------------------------------
// Variation

TEST(Crossover, ProbabilityZeroCopiesParentA)
{
    const HandModel h = HandModel::parametric_default();
    std::mt19937_64 gen(1);
    const Grasp a = grasp_at(Vec3(0.1, 0, 0), random_configuration(h, gen), Euler{0.1, 0.2, 0.3});
    const Grasp b = grasp_at(Vec3(0, 0.1, 0), random_configuration(h, gen), Euler{-0.1, 0.0, 1.0});
    Rng rng(3);
    const Grasp c = crossover(a, b, 0.0, rng);
    EXPECT_EQ(c.wrist.position, a.wrist.position);
    EXPECT_EQ(c.wrist.orientation.coeffs(), a.wrist.orientation.coeffs());
    EXPECT_EQ(c.q, a.q);
    EXPECT_TRUE(c.dq_cmd.isZero(0.0));
}

TEST(Crossover, ProbabilityOneSwapsJoints)
{
    const HandModel h = HandModel::parametric_default();
    std::mt19937_64 gen(2);
    const Grasp a = grasp_at(Vec3(0.1, 0, 0), random_configuration(h, gen));
    const Grasp b = grasp_at(Vec3(0, 0.1, 0), random_configuration(h, gen));
    Rng rng(3);
    const Grasp c = crossover(a, b, 1.0, rng);
    EXPECT_EQ(c.wrist.position, a.wrist.position);
    EXPECT_EQ(c.q, b.q);
}

TEST(Crossover, SwapsFollowTheRecordedCoinFlips)
{
    const HandModel h = HandModel::parametric_default();
    std::mt19937_64 gen(3);
    const Grasp a = grasp_at(Vec3::Zero(), random_configuration(h, gen));
    const Grasp b = grasp_at(Vec3::Zero(), random_configuration(h, gen));
    Rng rng(12), flips(12);
    int swaps = 0;
    for (int k = 0; k < 500; ++k) {
        const bool expect_swap = std::uniform_real_distribution<double>(0.0, 1.0)(flips) < 0.2;
        const Grasp c = crossover(a, b, 0.2, rng);
        EXPECT_EQ(c.q, expect_swap ? b.q : a.q);
        swaps += expect_swap;
    }
    EXPECT_GT(swaps, 60);
    EXPECT_LT(swaps, 140);
}

TEST(Mutate, ZeroSigmasOnlyRoundTripTheOrientation)
{
    const HandModel h = HandModel::parametric_default();
    std::mt19937_64 gen(4);
    const Grasp g = grasp_at(Vec3(0.01, 0.02, 0.03), random_configuration(h, gen), Euler{0.4, -0.7, 2.0});
    VariationConfig cfg;
    cfg.p_mutation = 1.0;
    cfg.sigma_pos = cfg.sigma_orient = cfg.sigma_q = 0.0;
    Rng rng(5);
    const Grasp m = mutate(g, cfg, h, rng);
    EXPECT_EQ(m.wrist.position, g.wrist.position);
    EXPECT_NEAR(std::abs(m.wrist.orientation.dot(g.wrist.orientation)), 1.0, 1e-12);
    EXPECT_EQ(m.q, g.q);
}

TEST(Mutate, ProbabilityZeroIsIdentity)
{
    const HandModel h = HandModel::parametric_default();
    const Grasp g = grasp_at(Vec3(0.01, 0.02, 0.03), h.zero_configuration(), Euler{0.4, -0.7, 2.0});
    VariationConfig cfg;
    cfg.p_mutation = 0.0;
    Rng rng(5);
    const Grasp m = mutate(g, cfg, h, rng);
    EXPECT_EQ(m.wrist.orientation.coeffs(), g.wrist.orientation.coeffs());
}

TEST(Mutate, JointsAreClampedToLimits)
{
    const HandModel h = HandModel::parametric_default();
    const Grasp g = grasp_at(Vec3::Zero(), h.q_max());
    VariationConfig cfg;
    cfg.p_mutation = 1.0;
    cfg.sigma_q = 5.0;
    Rng rng(6);
    int at_max = 0;
    for (int k = 0; k < 20; ++k) {
        const Grasp m = mutate(g, cfg, h, rng);
        EXPECT_TRUE(h.within_limits(m.q));
        for (Eigen::Index j = 0; j < m.q.size(); ++j)
            at_max += m.q[j] == h.q_max()[j];
    }
    EXPECT_GT(at_max, 0);
}

TEST(Mutate, SeededOffspringAreBitIdentical)
{
    const HandModel h = HandModel::parametric_default();
    std::mt19937_64 gen(7);
    const Grasp g = grasp_at(Vec3(0.01, 0.02, 0.03), random_configuration(h, gen), Euler{0.4, -0.7, 2.0});
    Rng r1(9), r2(9);
    for (int k = 0; k < 50; ++k) {
        const Grasp a = mutate(g, VariationConfig{}, h, r1);
        const Grasp b = mutate(g, VariationConfig{}, h, r2);
        EXPECT_EQ(a.wrist.position, b.wrist.position);
        EXPECT_EQ(a.wrist.orientation.coeffs(), b.wrist.orientation.coeffs());
        EXPECT_EQ(a.q, b.q);
    }
}

TEST(Mutate, StepStatisticsMatchTheSigmas)
{
    const HandModel h = HandModel::parametric_default();
    const Grasp g = grasp_at(Vec3::Zero(), (h.q_min() + h.q_max()) / 2.0);
    VariationConfig cfg;
    cfg.p_mutation = 1.0;
    Rng rng(10);
    double sum_sq = 0.0, joint_sq = 0.0;
    const int n = 4000;
    for (int k = 0; k < n; ++k) {
        const Grasp m = mutate(g, cfg, h, rng);
        sum_sq += m.wrist.position.x() * m.wrist.position.x();
        joint_sq += std::pow((m.q[1] - g.q[1]) / h.q_range()[1], 2);
    }
    EXPECT_NEAR(std::sqrt(sum_sq / n), cfg.sigma_pos, 0.1 * cfg.sigma_pos);
    EXPECT_NEAR(std::sqrt(joint_sq / n), cfg.sigma_q, 0.1 * cfg.sigma_q);
}

// ---------------------------------------------------------------------------
// Pruning and final selection

TEST(Prune, AtCapacityNothingHappens)
{
    ArchiveConfig cfg;
    Archive a;
    for (std::size_t i = 0; i < cfg.p_max; ++i)
        a.push_back(entry_with_embedding(isolated_embedding(i), static_cast<double>(i), i));
    prune(a, cfg);
    EXPECT_EQ(a.size(), cfg.p_max);
}

TEST(Prune, KeepsTheBestScores)
{
    ArchiveConfig cfg;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 5.0);
    Archive a;
    for (std::size_t i = 0; i < cfg.p_max + 1; ++i)
        a.push_back(entry_with_embedding(isolated_embedding(i), n(rng), i));
    std::vector<double> totals;
    for (const auto& e : a)
        totals.push_back(e.fitness.total);
    std::sort(totals.begin(), totals.end(), std::greater<>());
    prune(a, cfg);
    ASSERT_EQ(a.size(), 768u);
    double kept_min = std::numeric_limits<double>::infinity();
    for (const auto& e : a)
        kept_min = std::min(kept_min, e.fitness.total);
    EXPECT_EQ(kept_min, totals[767]);
    EXPECT_GE(kept_min, totals[768]);
}

TEST(Prune, TiesAtTheCutFavourEarlierInsertion)
{
    ArchiveConfig cfg;
    cfg.p_max = 4;
    cfg.prune_keep = 2;
    Archive a{entry_with_embedding(isolated_embedding(0), 1.0, 10), entry_with_embedding(isolated_embedding(1), 5.0, 3),
        entry_with_embedding(isolated_embedding(2), 1.0, 2), entry_with_embedding(isolated_embedding(3), 0.0, 0),
        entry_with_embedding(isolated_embedding(4), -1.0, 1)};
    prune(a, cfg);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a[0].insert_step, 3u);
    EXPECT_EQ(a[1].insert_step, 2u);
}

TEST(Prune, FpsVariantKeepsOnlyTopScoredCandidates)
{
    ArchiveConfig cfg;
    cfg.p_max = 20;
    cfg.prune_keep = 10;
    cfg.prune_with_fps = true;
    Archive a;
    for (std::size_t i = 0; i < 21; ++i)
        a.push_back(entry_with_embedding(isolated_embedding(i), static_cast<double>(i), i));
    prune(a, cfg);
    ASSERT_EQ(a.size(), 10u);
    for (const auto& e : a)
        EXPECT_GE(e.fitness.total, 1.0); // the worst entry is outside the scored pool
}

TEST(SuccessSet, SmallSetIsReturnedWhole)
{
    Archive a{entry_with_embedding(isolated_embedding(0), 5.0), entry_with_embedding(isolated_embedding(1), 9.0),
        entry_with_embedding(isolated_embedding(2), 50.0)};
    a[0].success = a[1].success = true;
    a[0].fitness.e_lifetime = a[1].fitness.e_lifetime = 60;
    a[2].fitness.e_lifetime = 60; // not successful
    const auto set = select_top_or_fps(a, 20, 128);
    ASSERT_EQ(set.size(), 2u);
    EXPECT_EQ(set[0].fitness.total, 9.0);
    EXPECT_EQ(set[1].fitness.total, 5.0);
}

TEST(SuccessSet, LifetimeBelowMinimumIsExcluded)
{
    Archive a{entry_with_embedding(isolated_embedding(0), 5.0)};
    a[0].success = true;
    a[0].fitness.e_lifetime = 19;
    EXPECT_TRUE(select_top_or_fps(a, 20, 128).empty());
}

TEST(SuccessSet, LargeSetIsThinnedToK)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Archive a;
    for (int i = 0; i < 300; ++i) {
        VecX e(18);
        for (Eigen::Index k = 0; k < 18; ++k)
            e[k] = u(rng);
        a.push_back(entry_with_embedding(e, u(rng), static_cast<std::size_t>(i)));
        a.back().success = i % 3 != 0;
        a.back().fitness.e_lifetime = 60;
    }
    const auto set = select_top_or_fps(a, 20, 128);
    ASSERT_EQ(set.size(), 128u);
    double best = -1.0;
    for (const auto& e : a)
        if (e.success)
            best = std::max(best, e.fitness.total);
    EXPECT_EQ(set[0].fitness.total, best);
    for (const auto& e : set)
        EXPECT_TRUE(e.success);
}

// ---------------------------------------------------------------------------
// Seeding

TEST(Seeding, CountLimitsAndShell)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    Rng rng(4);
    const auto seeds = seed_population(s, h, SeedMode::random, 32, rng);
    ASSERT_EQ(seeds.size(), 32u);
    for (const auto& g : seeds) {
        EXPECT_TRUE(h.within_limits(g.q));
        EXPECT_EQ(g.dq_cmd.size(), 12);
    }
    Rng raw(4);
    for (int k = 0; k < 200; ++k) {
        const Grasp g = random_seed(s, h, raw);
        const double r = (g.wrist.position - s.centroid()).norm();
        EXPECT_GE(r, 0.07 - 1e-12);
        EXPECT_LE(r, 0.15 + 1e-12);
        EXPECT_TRUE(is_unit(g.wrist.orientation));
    }
}

TEST(Seeding, ReplayGivesIdenticalSeeds)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    for (SeedMode mode : {SeedMode::random, SeedMode::approach_heuristic}) {
        Rng r1(21), r2(21);
        const auto a = seed_population(s, h, mode, 8, r1);
        const auto b = seed_population(s, h, mode, 8, r2);
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].wrist.position, b[i].wrist.position);
            EXPECT_EQ(a[i].q, b[i].q);
            EXPECT_EQ(a[i].dq_cmd, b[i].dq_cmd);
        }
    }
}

TEST(Seeding, ApproachPalmRayHitsTheSphere)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    Rng rng(22);
    const auto seeds = seed_population(s, h, SeedMode::approach_heuristic, 32, rng);
    for (const auto& g : seeds) {
        const HandWorld w = forward_kinematics(h, g.state());
        const Vec3 to_center = s.centroid() - w.palm_center;
        const double along = to_center.dot(w.palm_normal);
        ASSERT_GT(along, 0.0);
        const double miss = (to_center - along * w.palm_normal).norm();
        EXPECT_LT(miss, 0.05);
    }
}

TEST(Seeding, ZeroSeedsIsAnError)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    Rng rng(1);
    EXPECT_THROW(seed_population(s, h, SeedMode::random, 0, rng), Error);
}

// ---------------------------------------------------------------------------
// Run loop

TEST(Run, NoSeedsIsAnError)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    Evolution evo(s, h, small_run(8));
    try {
        evo.run(std::vector<Grasp>{});
        FAIL();
    }
    catch (const Error& e) {
        EXPECT_EQ(e.code(), "no-seeds");
    }
}

TEST(Run, BudgetSmallerThanPopulationIsRejected)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    try {
        Evolution evo(s, h, small_run(4));
        FAIL();
    }
    catch (const Error& e) {
        EXPECT_EQ(e.code(), "budget-too-small");
    }
}

TEST(Run, BudgetEqualToPopulationEvaluatesOnlySeeds)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    const auto seeds = seeds_for(s, h, 8);
    const EvolutionConfig cfg = small_run(8);
    const RunResult res = Evolution(s, h, cfg).run(seeds);
    EXPECT_EQ(res.evaluations, 8u);

    Archive expected;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const Grasp g = assign_closing_command(s, h, seeds[i], cfg.eval);
        const Evaluation ev = evaluate(s, h, g, cfg.eval);
        ArchiveEntry e = entry_from(g, ev.fitness.total, i, ev.success);
        insert_or_replace(expected, e, cfg.archive);
    }
    ASSERT_EQ(res.archive.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_EQ(res.archive[i].fitness.total, expected[i].fitness.total);
        EXPECT_EQ(res.archive[i].embedding, expected[i].embedding);
        EXPECT_EQ(res.archive[i].provenance, Provenance::seed);
    }
}

TEST(Run, SingleWorkerRunsAreBitIdentical)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    const auto seeds = seeds_for(s, h, 8);
    const RunResult a = Evolution(s, h, small_run(300)).run(seeds);
    const RunResult b = Evolution(s, h, small_run(300)).run(seeds);
    expect_same_archive(a.archive, b.archive);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i)
        EXPECT_EQ(a.trace[i].best_total, b.trace[i].best_total);
}

TEST(Run, TraceCadenceAndBestSoFarMonotone)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    const RunResult res = Evolution(s, h, small_run(500)).run(seeds_for(s, h, 8));
    ASSERT_EQ(res.trace.size(), 5u);
    for (std::size_t i = 0; i < res.trace.size(); ++i) {
        EXPECT_EQ(res.trace[i].step, 100 * (i + 1));
        EXPECT_EQ(res.trace[i].dsg.size(), 3u);
        if (i > 0)
            EXPECT_GE(res.trace[i].best_total, res.trace[i - 1].best_total);
    }
    EXPECT_EQ(res.evaluations, 500u);
    EXPECT_LE(res.success_set.size(), 128u);
    for (const auto& e : res.success_set)
        EXPECT_TRUE(e.success);
}

TEST(Run, ArchiveEmbeddingsMatchTheirGrasps)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    const RunResult res = Evolution(s, h, small_run(200)).run(seeds_for(s, h, 8));
    for (const auto& e : res.archive) {
        EXPECT_EQ(e.embedding, embed(e.grasp));
        EXPECT_TRUE(h.within_limits(e.grasp.q));
    }
}

TEST(Run, ResumingFromACheckpointMatchesTheUninterruptedRun)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    const auto seeds = seeds_for(s, h, 8);
    EvolutionConfig cfg = small_run(700);
    cfg.run.checkpoint_every = 250;

    std::vector<EvolutionState> snapshots;
    EvolutionHooks hooks;
    hooks.on_checkpoint = [&](const EvolutionState& st) { snapshots.push_back(st); };
    const RunResult full = Evolution(s, h, cfg, hooks).run(seeds);
    ASSERT_EQ(snapshots.size(), 2u);
    EXPECT_EQ(snapshots[0].completed, 250u);

    const RunResult resumed = Evolution(s, h, cfg).run(snapshots[0]);
    expect_same_archive(full.archive, resumed.archive);
    EXPECT_EQ(full.trace.size(), resumed.trace.size());
    EXPECT_EQ(full.seed_successes, resumed.seed_successes);
}

TEST(Run, RewardHookEntersTheTotal)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    EvolutionConfig cfg = small_run(100);
    cfg.eval.w_reward = 10.0;
    const RewardFn reward = [](const Grasp& g) { return g.wrist.position.z() < 0.0 ? -1.0 : 0.0; };
    const RunResult res = run_evolution(s, h, seeds_for(s, h, 8), cfg, &reward);
    for (const auto& e : res.archive) {
        EXPECT_EQ(e.fitness.e_reward, reward(e.grasp));
        EXPECT_EQ(e.fitness.total, fitness_total(e.fitness, cfg.eval));
    }
}

TEST(Run, MultiWorkerRunCompletesTheBudget)
{
    const SdfScene s = sphere_scene();
    const HandModel h = HandModel::parametric_default();
    EvolutionConfig cfg = small_run(200);
    cfg.run.workers = 3;
    const RunResult res = Evolution(s, h, cfg).run(seeds_for(s, h, 8));
    EXPECT_EQ(res.evaluations, 200u);
    EXPECT_EQ(res.trace.size(), 2u);
    EXPECT_FALSE(res.archive.empty());
}
