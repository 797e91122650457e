#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "r2ag/gro_trainer.hpp"
#include "r2ag/synthetic_data.hpp"
#include "support.hpp"

using namespace r2ag;
using Catch::Approx;

namespace {

ReasoningPath path_of(std::initializer_list<ConceptIndex> cs)
{
    ReasoningPath p;
    p.origin = *cs.begin();
    for (ConceptIndex c : cs) {
        p.steps.push_back({p.steps.empty() ? StepKind::Origin : StepKind::Relation, 0, c});
    }
    return p;
}

/// Small random world: graph, table and one patient's environment.
struct World {
    KnowledgeGraph kg;
    EmbeddingTable table;
    GroupVectors groups;
    std::optional<TrainingExample> ex;

    World(std::uint64_t seed, std::size_t groups_n, std::size_t dim, int horizon)
        : kg(make_kg(seed, groups_n)), table(make_table(seed, kg.concept_count(), dim)), groups(kg, table)
    {
        Rng rng(seed + 1);
        KeywordSet ks;
        ks.group_counts.assign(groups_n, 0);
        for (ConceptIndex c = 0; c < groups_n; ++c) {
            ks.matches.push_back({c, 0, 0});
            ++ks.group_counts[kg.group_of(c)];
        }
        ks.matches.push_back({static_cast<ConceptIndex>(groups_n), 0, 0});
        ++ks.group_counts[kg.group_of(static_cast<ConceptIndex>(groups_n))];
        std::vector<ConceptIndex> truth;
        for (int i = 0; i < 5; ++i) {
            truth.push_back(static_cast<ConceptIndex>(rng.below(kg.concept_count())));
        }
        ex.emplace(TrainingExample{"p", RetrievalEnvironment(kg, table, groups, ks, horizon),
                                   GroundTruth::from(truth, table)});
    }

    static KnowledgeGraph make_kg(std::uint64_t seed, std::size_t groups_n)
    {
        Rng rng(seed);
        return r2ag::testing::random_kg(rng, 24, groups_n, 120, 2);
    }
    static EmbeddingTable make_table(std::uint64_t seed, std::size_t n, std::size_t dim)
    {
        Rng rng(seed + 7);
        return r2ag::testing::random_table(rng, n, dim);
    }
};

/// Discounted, relative-reward-weighted log-likelihood of fixed action sequences.
double objective(const PolicyParams& p, const RetrievalEnvironment& env, const std::vector<RolloutRecord>& recs,
                 double discount)
{
    double j = 0.0;
    for (const auto& rec : recs) {
        const auto replay = replay_rollout(p, env, rec.actions);
        const int horizon = static_cast<int>(rec.actions.size());
        for (int t = 1; t <= horizon; ++t) {
            const auto i = static_cast<std::size_t>(t - 1);
            j += std::pow(discount, horizon - t) * rec.relative_reward *
                 std::log(replay.caches[i].probs(static_cast<Eigen::Index>(rec.actions[i])));
        }
    }
    return j / static_cast<double>(recs.size());
}

double max_rel_error(const GradientBundle& g, const PolicyParams& p, const RetrievalEnvironment& env,
                     const std::vector<RolloutRecord>& recs, double discount)
{
    double worst = 0;
    auto scan = [&](Matrix PolicyParams::*field, const Matrix& grad) {
        for (Eigen::Index i = 0; i < grad.rows(); ++i) {
            for (Eigen::Index k = 0; k < grad.cols(); ++k) {
                auto plus = p;
                auto minus = p;
                (plus.*field)(i, k) += 1e-5;
                (minus.*field)(i, k) -= 1e-5;
                const double fd = (objective(plus, env, recs, discount) - objective(minus, env, recs, discount)) / 2e-5;
                worst = std::max(worst, std::abs(fd - grad(i, k)) / std::max(1.0, std::abs(fd) + std::abs(grad(i, k))));
            }
        }
    };
    scan(&PolicyParams::w1, g.w1);
    scan(&PolicyParams::w2, g.w2);
    scan(&PolicyParams::m, g.m);
    return worst;
}

}  // namespace

TEST_CASE("path reward: hits plus weighted cosine")
{
    Matrix m(4, 2);
    m << 1, 0,  // 0
        0, 1,   // 1
        1, 0,   // 2
        -1, 0;  // 3
    const EmbeddingTable t(m);
    // Disjoint and orthogonal.
    CHECK(path_reward(path_of({1}), GroundTruth::from({0, 2}, t), t, 10) == Approx(0.0).margin(1e-15));
    // Identical path and truth: every concept hits and the cosine is 1.
    const auto gt = GroundTruth::from({0, 1}, t);
    const auto p = path_of({0, 1});
    CHECK(path_reward(p, gt, t, 10) == Approx(12.0));
    // Revisits count once.
    const auto loop = path_of({0, 1, 0, 1});
    CHECK(path_reward(loop, gt, t, 0) == 2.0);
    // Empty truth.
    CHECK(path_reward(p, GroundTruth{}, t, 10) == 0.0);
}

TEST_CASE("path reward 2 hits, cosine 0.5, weight 10 gives 7")
{
    // Basis vectors: the path sums to all ones over 8 axes, the truth to e0 + e1,
    // so the cosine is 2 / (sqrt(2) * sqrt(8)) = 0.5.
    const EmbeddingTable t(Matrix::Identity(8, 8));
    const auto gt = GroundTruth::from({0, 1}, t);
    const auto p = path_of({0, 1, 2, 3, 4, 5, 6, 7});
    REQUIRE(cosine(avg_embedding(t, p.concepts()), gt.average) == Approx(0.5).epsilon(1e-12));
    CHECK(path_reward(p, gt, t, 10) == Approx(7.0).epsilon(1e-12));
}

TEST_CASE("path reward matches a brute-force recomputation")
{
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto t = r2ag::testing::random_table(rng, 30, 6);
        ReasoningPath p;
        for (int i = 0; i < 6; ++i) {
            const auto c = static_cast<ConceptIndex>(rng.below(30));
            p.steps.push_back({i == 0 ? StepKind::Origin : StepKind::Relation, 0, c});
        }
        std::vector<ConceptIndex> truth;
        for (int i = 0; i < 4; ++i) {
            truth.push_back(static_cast<ConceptIndex>(rng.below(30)));
        }
        const auto gt = GroundTruth::from(truth, t);
        // Oracle: explicit loops over the raw lists.
        std::vector<ConceptIndex> distinct;
        for (const auto& s : p.steps) {
            if (std::find(distinct.begin(), distinct.end(), s.concept_index) == distinct.end()) {
                distinct.push_back(s.concept_index);
            }
        }
        std::vector<ConceptIndex> tdistinct;
        for (auto c : truth) {
            if (std::find(tdistinct.begin(), tdistinct.end(), c) == tdistinct.end()) {
                tdistinct.push_back(c);
            }
        }
        double hits = 0;
        for (auto c : distinct) {
            hits += std::find(tdistinct.begin(), tdistinct.end(), c) != tdistinct.end() ? 1 : 0;
        }
        std::vector<double> pa(6, 0.0), ta(6, 0.0);
        for (auto c : distinct) {
            for (int j = 0; j < 6; ++j) {
                pa[static_cast<std::size_t>(j)] += t.row(c)(j) / static_cast<double>(distinct.size());
            }
        }
        for (auto c : tdistinct) {
            for (int j = 0; j < 6; ++j) {
                ta[static_cast<std::size_t>(j)] += t.row(c)(j) / static_cast<double>(tdistinct.size());
            }
        }
        double dot = 0, na = 0, nb = 0;
        for (std::size_t j = 0; j < 6; ++j) {
            dot += pa[j] * ta[j];
            na += pa[j] * pa[j];
            nb += ta[j] * ta[j];
        }
        const double expected = hits + 10 * dot / std::sqrt(na * nb);
        CHECK(path_reward(p, gt, t, 10) == Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("rollout reward is the mean path reward")
{
    Matrix m(4, 2);
    m << 1, 0, 0, 1, 1, 1, -1, 1;
    const EmbeddingTable t(m);
    const auto gt = GroundTruth::from({0, 1, 2, 3}, t);
    const std::vector<ReasoningPath> one{path_of({0, 1})};
    CHECK(rollout_reward(one, gt, t, 0) == 2.0);
    const std::vector<ReasoningPath> two{path_of({0, 1}), path_of({0, 1, 2, 3})};
    CHECK(rollout_reward(two, gt, t, 0) == 3.0);
    CHECK(rollout_reward(two, gt, t, 4) ==
          Approx((path_reward(two[0], gt, t, 4) + path_reward(two[1], gt, t, 4)) / 2));
    CHECK_THROWS(rollout_reward(std::vector<ReasoningPath>{}, gt, t, 0));
}

TEST_CASE("relative rewards")
{
    const std::vector<double> a{0.0, std::log(3.0)};
    const auto ra = relative_rewards(a);
    CHECK(std::abs(ra[0] - 0.25) < 1e-10);
    CHECK(std::abs(ra[1] - 0.75) < 1e-10);

    const auto eq = relative_rewards(std::vector<double>{2.5, 2.5, 2.5, 2.5, 2.5});
    for (double v : eq) {
        CHECK(v == Approx(0.2));
    }

    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> r(2 + rng.below(6));
        for (auto& x : r) {
            x = 40 * rng.uniform() - 20;
        }
        const auto out = relative_rewards(r);
        double sum = 0;
        for (double v : out) {
            CHECK(v > 0);
            sum += v;
        }
        CHECK(sum == Approx(1.0).epsilon(1e-12));
        auto shifted = r;
        for (auto& x : shifted) {
            x += 123.0;
        }
        const auto out2 = relative_rewards(shifted);
        for (std::size_t i = 0; i < r.size(); ++i) {
            CHECK(std::abs(out[i] - out2[i]) < 1e-12);
        }
    }
    CHECK_THROWS(relative_rewards(std::vector<double>{1.0}));
    CHECK_THROWS(relative_rewards(std::vector<double>{1.0, NAN}));
}

TEST_CASE("step weights")
{
    CHECK(step_weight(0.1, 5, 5) == 1.0);
    CHECK(step_weight(0.1, 4, 5) == Approx(0.1));
    CHECK(step_weight(0.1, 1, 5) == Approx(1e-4));
    CHECK(step_weight(0.0, 5, 5) == 1.0);
    CHECK(step_weight(0.0, 4, 5) == 0.0);
}

TEST_CASE("patient gradient matches finite differences with frozen actions")
{
    int fixtures = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const World w(seed, 3, 3, 2);
        const auto params = PolicyParams::init(3, seed);
        TrainConfig cfg;
        cfg.horizon = 2;
        cfg.group_size = 2;
        cfg.discount = 0.5;
        Rng a(seed), b(seed);
        const auto up = train_patient(params, *w.ex, cfg, a);
        // Re-run the same rollouts to get the action sequences.
        std::vector<RolloutRecord> recs;
        for (int i = 0; i < cfg.group_size; ++i) {
            recs.push_back(run_rollout(params, w.ex->env, ActionMode::Sample, b));
            recs.back().relative_reward = up.relative[static_cast<std::size_t>(i)];
            CHECK(rollout_reward(recs.back().paths, w.ex->truth, w.table, cfg.reward_weight) ==
                  up.rewards[static_cast<std::size_t>(i)]);
        }
        CHECK(max_rel_error(up.gradient, params, w.ex->env, recs, cfg.discount) < 1e-4);
        ++fixtures;
    }
    CHECK(fixtures == 6);
}

TEST_CASE("zero discount keeps only the final step")
{
    const World w(11, 3, 3, 3);
    const auto params = PolicyParams::init(3, 2);
    Rng rng(4);
    auto rec = run_rollout(params, w.ex->env, ActionMode::Sample, rng);
    rec.relative_reward = 0.6;
    const std::vector<RolloutRecord> recs{rec};
    const auto g = accumulate_gradient(params, recs, 0.0);
    auto expected = GradientBundle::zeros_like(params);
    expected.add_scaled(0.6, logprob_backward(params, rec.caches.back(), rec.actions.back()));
    CHECK((g.w1 - expected.w1).cwiseAbs().maxCoeff() == 0.0);
    CHECK((g.w2 - expected.w2).cwiseAbs().maxCoeff() == 0.0);
    CHECK((g.m - expected.m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two identical rollouts weigh one half each")
{
    const World w(12, 3, 3, 3);
    const auto params = PolicyParams::init(3, 3);
    Rng r1(9), r2(9);
    auto a = run_rollout(params, w.ex->env, ActionMode::Sample, r1);
    auto b = run_rollout(params, w.ex->env, ActionMode::Sample, r2);
    REQUIRE(a.actions == b.actions);
    const std::vector<double> rewards{1.7, 1.7};
    const auto rel = relative_rewards(rewards);
    a.relative_reward = rel[0];
    b.relative_reward = rel[1];
    const auto pair = accumulate_gradient(params, std::vector<RolloutRecord>{a, b}, 0.1);
    auto single = a;
    single.relative_reward = 0.5;
    const auto one = accumulate_gradient(params, std::vector<RolloutRecord>{single}, 0.1);
    CHECK((pair.w1 - one.w1).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((pair.m - one.m).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gradient is linear in the relative rewards")
{
    const World w(13, 4, 4, 4);
    const auto params = PolicyParams::init(4, 5);
    Rng rng(2);
    std::vector<RolloutRecord> recs;
    for (int i = 0; i < 3; ++i) {
        recs.push_back(run_rollout(params, w.ex->env, ActionMode::Sample, rng));
        recs.back().relative_reward = 0.1 * (i + 1);
    }
    const auto g = accumulate_gradient(params, recs, 0.1);
    for (auto& r : recs) {
        r.relative_reward *= 3.0;
    }
    const auto g3 = accumulate_gradient(params, recs, 0.1);
    CHECK((g3.w1 - 3.0 * g.w1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g3.w2 - 3.0 * g.w2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g3.m - 3.0 * g.m).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("uniform rollouts take exactly horizon actions without caches")
{
    const World w(14, 3, 3, 5);
    Rng rng(1);
    const auto rec = run_rollout(PolicyParams::init(3, 0), w.ex->env, ActionMode::Uniform, rng);
    CHECK(rec.actions.size() == 5);
    CHECK(rec.caches.empty());
    CHECK_THROWS(accumulate_gradient(PolicyParams::init(3, 0), std::vector<RolloutRecord>{rec}, 0.1));
}

namespace {

struct SynthSetup {
    KnowledgeGraph kg;
    std::vector<Patient> corpus;
    EmbeddingTable table;
    std::unique_ptr<ConceptLinker> linker;

    explicit SynthSetup(std::size_t patients)
        : kg(synth::gen_kg(spec(patients))),
          corpus(synth::patients_of(synth::gen_corpus(spec(patients), kg))),
          table(EmbeddingTable::pseudo(kg, 8, 0)),
          linker(std::make_unique<ConceptLinker>(kg))
    {
    }
    static synth::SynthSpec spec(std::size_t patients)
    {
        synth::SynthSpec s;
        s.groups = 5;
        s.concepts_per_group = 20;
        s.patients = patients;
        return s;
    }
};

}  // namespace

TEST_CASE("training with a zero learning rate leaves parameters unchanged")
{
    const SynthSetup s(1);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    const auto init = PolicyParams::init(8, 1);
    const auto res = train(s.corpus, *s.linker, s.table, cfg, init);
    CHECK(res.params == init);
    CHECK(res.episode_rewards.size() == 1);
    CHECK(res.log.size() == 1);
}

TEST_CASE("training is deterministic per seed")
{
    const SynthSetup s(10);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 2;
    cfg.seed = 3;
    const auto a = train(s.corpus, *s.linker, s.table, cfg, PolicyParams::init(8, 1));
    const auto b = train(s.corpus, *s.linker, s.table, cfg, PolicyParams::init(8, 1));
    CHECK(a.params == b.params);
    CHECK(a.episode_rewards == b.episode_rewards);
    CHECK(a.epoch_mean_rewards.size() == 2);
    cfg.seed = 4;
    const auto c = train(s.corpus, *s.linker, s.table, cfg, PolicyParams::init(8, 1));
    CHECK_FALSE(a.params == c.params);
}

TEST_CASE("training input errors")
{
    const SynthSetup s(2);
    TrainConfig cfg;
    CHECK_THROWS_AS(train({}, *s.linker, s.table, cfg, PolicyParams::init(8, 0)), DataError);
    CHECK_THROWS_AS(train({{"x", "nothing links here", std::string("ref")}}, *s.linker, s.table, cfg,
                          PolicyParams::init(8, 0)),
                    DataError);
    CHECK_THROWS_AS(train(s.corpus, *s.linker, s.table, cfg, PolicyParams::init(4, 0)), std::invalid_argument);
    cfg.group_size = 1;
    CHECK_THROWS_AS(train(s.corpus, *s.linker, s.table, cfg, PolicyParams::init(8, 0)), std::invalid_argument);

    // Skipped patients are logged with a null reward.
    TrainConfig ok;
    auto corpus = s.corpus;
    corpus.push_back({"skip", "zzz", std::nullopt});
    const auto res = train(corpus, *s.linker, s.table, ok, PolicyParams::init(8, 0));
    CHECK(res.skipped_patients == 1);
    CHECK(res.log.back().skipped);
    CHECK(to_json(res.log.back()).dump() ==
          "{\"epoch\":0,\"patient\":\"skip\",\"mean_R\":null,\"relative_rewards\":[],\"skipped\":true}");
}
