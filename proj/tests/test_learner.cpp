#include <gtest/gtest.h>

#include <array>
#include <random>

#include "cavdn/learner.hpp"
#include "oracles.hpp"

using namespace cavdn;
using namespace cavdn::learn;

namespace {

// Single linear layer with zero weights: Q-values equal the bias whatever the state.
nn::Mlp constant_q(int input_dim, std::array<double, 5> q) {
    nn::Mlp net({input_dim, 5});
    for (int a = 0; a < 5; ++a)
        net.layers()[0].bias(a) = q[static_cast<std::size_t>(a)];
    return net;
}

AgentBrain brain_from(nn::Mlp pred, nn::Mlp target) {
    AgentBrain b;
    b.prediction = std::move(pred);
    b.target = std::move(target);
    b.optimizer = nn::AdamState(b.prediction);
    return b;
}

std::vector<AgentBrain> random_brains(int n, int dim, Rng &rng, std::vector<int> hidden = {9, 7}) {
    auto brains = make_brains(n, dim, hidden, 0.001, rng);
    for (auto &b : brains) // distinct target weights so max-over-target is exercised
        b.target = nn::Mlp::uniform_fan_in(q_network_dims(dim, hidden), rng);
    return brains;
}

Batch random_batch(int n, int dim, int b, Rng &rng, double done_rate = 0.3) {
    std::uniform_int_distribution<int> act(0, 4);
    std::uniform_real_distribution<double> rew(-4.0, 10.0);
    std::bernoulli_distribution done(done_rate);
    std::vector<Transition> ts;
    for (int s = 0; s < b; ++s) {
        Transition t;
        const auto st = oracle::random_matrix(dim, 1, rng), nx = oracle::random_matrix(dim, 1, rng);
        t.state.assign(st.data(), st.data() + dim);
        t.next_state.assign(nx.data(), nx.data() + dim);
        for (int i = 0; i < n; ++i) {
            t.actions.push_back(act(rng));
            t.rewards.push_back(rew(rng));
        }
        t.done = done(rng);
        ts.push_back(t);
    }
    return make_batch(ts);
}

std::vector<double> column(const Matrix &m, Eigen::Index c) {
    return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

TrainerConfig small_config(Algorithm algo = Algorithm::CaVdn) {
    TrainerConfig c;
    c.algorithm = algo;
    c.hidden = {16};
    c.batch_size = 8;
    c.updates_per_episode = 2;
    c.memory_capacity = 2000;
    return c;
}

Trainer small_trainer(std::uint64_t seed, TrainerConfig c = small_config(),
                      std::optional<malfunction::MalfunctionSpec> m = std::nullopt) {
    return Trainer(c, env::default_layout(), {}, seed, relational::self_interested_network(4), m);
}

bool same_parameters(const std::vector<AgentBrain> &a, const std::vector<AgentBrain> &b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a[i].prediction == b[i].prediction) || !(a[i].target == b[i].target)) return false;
    return a.size() == b.size();
}

} // namespace

TEST(SelectActions, ZeroEpsilonIsGreedy) {
    Rng rng(1);
    auto brains = random_brains(4, 6, rng);
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = column(oracle::random_matrix(6, 1, rng), 0);
        EXPECT_EQ(select_actions(brains, s, 0.0, rng), greedy_actions(brains, s));
    }
}

TEST(SelectActions, GreedyBreaksTiesTowardFirstAction) {
    std::vector<AgentBrain> brains{brain_from(constant_q(3, {1, 5, 5, 0, 5}), nn::Mlp({3, 5}))};
    const std::vector<double> s{0, 0, 0};
    EXPECT_EQ(greedy_actions(brains, s), std::vector<int>{1});
}

TEST(SelectActions, FullEpsilonIsUniform) {
    Rng rng(2);
    auto brains = random_brains(4, 6, rng);
    const auto s = column(oracle::random_matrix(6, 1, rng), 0);
    std::array<std::array<int, 5>, 4> counts{};
    for (int draw = 0; draw < 10000; ++draw) {
        const auto a = select_actions(brains, s, 1.0, rng);
        for (int i = 0; i < 4; ++i)
            ++counts[i][static_cast<std::size_t>(a[i])];
    }
    for (const auto &agent : counts)
        for (int c : agent) {
            EXPECT_GE(c / 10000.0, 0.18);
            EXPECT_LE(c / 10000.0, 0.22);
        }
}

TEST(SelectActions, DeterministicForFixedSeed) {
    Rng init(3);
    auto brains = random_brains(4, 6, init);
    const auto s = column(oracle::random_matrix(6, 1, init), 0);
    Rng a(77), b(77);
    for (int i = 0; i < 100; ++i)
        ASSERT_EQ(select_actions(brains, s, 0.5, a), select_actions(brains, s, 0.5, b));
    EXPECT_THROW(select_actions(brains, s, 1.5, a), UsageError);
}

TEST(QTotal, SingleAgentIsItsOwnQ) {
    std::vector<AgentBrain> brains{brain_from(constant_q(2, {0.5, -1, 2, 3, 4}), nn::Mlp({2, 5}))};
    Eigen::MatrixXi actions(1, 1);
    actions << 2;
    EXPECT_EQ(q_total_prediction(brains, Matrix::Zero(2, 1), actions)(0), 2.0);
}

TEST(QTotal, PredictionSumsChosenValues) {
    std::vector<AgentBrain> brains;
    const std::array<double, 4> chosen{2, 3, -1, 0};
    for (int i = 0; i < 4; ++i) {
        std::array<double, 5> q{9, 9, 9, 9, 9};
        q[static_cast<std::size_t>(i)] = chosen[static_cast<std::size_t>(i)];
        brains.push_back(brain_from(constant_q(3, q), nn::Mlp({3, 5})));
    }
    Eigen::MatrixXi actions(4, 1);
    actions << 0, 1, 2, 3;
    EXPECT_EQ(q_total_prediction(brains, Matrix::Zero(3, 1), actions)(0), 4.0);
}

TEST(QTotal, TargetIsMaxThenSum) {
    std::vector<AgentBrain> brains{
        brain_from(nn::Mlp({2, 5}), constant_q(2, {1, 2, 3, 0, 0})),
        brain_from(nn::Mlp({2, 5}), constant_q(2, {5, 4, 0, 0, 0}))};
    EXPECT_EQ(q_total_target(brains, Matrix::Zero(2, 3)), Vector::Constant(3, 8.0));
}

TEST(QTotal, ZeroTargetNetsGiveZero) {
    std::vector<AgentBrain> brains(3, brain_from(nn::Mlp({4, 6, 5}), nn::Mlp({4, 6, 5})));
    Rng rng(4);
    EXPECT_TRUE(q_total_target(brains, oracle::random_matrix(4, 7, rng)).isZero(0.0));
}

TEST(QTotal, PredictionMatchesNaiveLoop) {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 4);
        auto brains = random_brains(n, 5, rng);
        const Batch batch = random_batch(n, 5, 12, rng);
        const Vector got = q_total_prediction(brains, batch.states, batch.actions);
        for (Eigen::Index s = 0; s < batch.size(); ++s) {
            double want = 0.0;
            for (int i = 0; i < n; ++i)
                want += oracle::mlp_forward(brains[i].prediction, column(batch.states, s))
                    [static_cast<std::size_t>(batch.actions(i, s))];
            ASSERT_NEAR(got(s), want, 1e-12);
        }
    }
}

TEST(QTotal, TargetMatchesJointEnumeration) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto brains = random_brains(4, 5, rng);
        const Batch batch = random_batch(4, 5, 8, rng);
        const Vector got = q_total_target(brains, batch.next_states);
        for (Eigen::Index s = 0; s < batch.size(); ++s) {
            std::vector<std::vector<double>> q;
            for (const auto &b : brains)
                q.push_back(oracle::mlp_forward(b.target, column(batch.next_states, s)));
            ASSERT_NEAR(got(s), oracle::joint_max(q), 1e-12);
        }
    }
}

TEST(QTotal, RejectsShapeMismatch) {
    Rng rng(7);
    auto brains = random_brains(2, 3, rng);
    EXPECT_THROW(q_total_prediction(brains, Matrix::Zero(3, 4), Eigen::MatrixXi::Zero(3, 4)), ShapeError);
    EXPECT_THROW(q_total_prediction(brains, Matrix::Zero(3, 4), Eigen::MatrixXi::Zero(2, 5)), ShapeError);
    EXPECT_THROW(q_total_target(brains, Matrix::Zero(4, 2)), ShapeError);
}

TEST(TdLoss, TerminalTransitionExample) {
    std::vector<AgentBrain> brains;
    for (int i = 0; i < 4; ++i)
        brains.push_back(brain_from(nn::Mlp({3, 5}), constant_q(3, {100, 100, 100, 100, 100})));
    Transition t{{0, 0, 0}, {0, 1, 2, 3}, {1, 1, 1, 1}, {0, 0, 0}, true};
    const Batch batch = make_batch(std::span<const Transition>(&t, 1));
    const auto l = td_loss(brains, batch, relational::self_interested_network(4), 0.99);
    EXPECT_EQ(l.loss, 16.0);
    EXPECT_EQ(l.td_errors(0), 4.0);
}

TEST(TdLoss, BellmanFixedPointHasZeroLoss) {
    std::vector<AgentBrain> brains;
    for (int i = 0; i < 2; ++i)
        brains.push_back(brain_from(constant_q(3, {1, 1, 1, 1, 1}), constant_q(3, {0.5, 0, 0, 0, 0})));
    // Q_total = 2 = r_team (1.5) + 0.5 * (0.5 + 0.5).
    std::vector<Transition> ts(4, Transition{{1, 2, 3}, {0, 4}, {1, 0.5}, {3, 2, 1}, false});
    const auto l = td_loss(brains, make_batch(ts), relational::self_interested_network(2), 0.5);
    EXPECT_EQ(l.loss, 0.0);
    for (const auto &g : l.gradients)
        EXPECT_TRUE(g[0].bias.isZero(0.0));
}

TEST(TdLoss, IdentityNetworkMatchesPlainSumBitwise) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        auto brains = random_brains(4, 6, rng);
        const Batch batch = random_batch(4, 6, 32, rng);
        const auto a = td_loss(brains, batch, relational::self_interested_network(4), 0.99);
        const auto b = td_loss(brains, batch, plain_team_rewards(batch), 0.99);
        ASSERT_EQ(a.loss, b.loss);
        ASSERT_EQ(a.td_errors, b.td_errors);
        for (std::size_t i = 0; i < 4; ++i)
            ASSERT_TRUE(a.gradients[i] == b.gradients[i]);
    }
}

TEST(TdLoss, DoneMasksBootstrap) {
    Rng rng(9);
    auto brains = random_brains(3, 4, rng);
    Batch batch = random_batch(3, 4, 10, rng, 0.0);
    for (auto &d : batch.done)
        d = 1;
    const Vector r = plain_team_rewards(batch);
    const auto l = td_loss(brains, batch, r, 0.99);
    const Vector want = r - q_total_prediction(brains, batch.states, batch.actions);
    EXPECT_EQ(l.td_errors, want);

    batch.done.assign(batch.done.size(), 0);
    const auto open = td_loss(brains, batch, r, 0.99);
    EXPECT_TRUE(open.td_errors.isApprox(want + 0.99 * q_total_target(brains, batch.next_states), 1e-12));
}

TEST(TdLoss, SumReductionScalesMean) {
    Rng rng(10);
    auto brains = random_brains(2, 4, rng);
    const Batch batch = random_batch(2, 4, 16, rng);
    const auto g = relational::self_interested_network(2);
    EXPECT_NEAR(td_loss(brains, batch, g, 0.9, LossReduction::Sum).loss,
                16.0 * td_loss(brains, batch, g, 0.9).loss, 1e-9);
}

TEST(TdLoss, GradientsMatchFiniteDifferences) {
    Rng rng(11);
    for (int trial = 0; trial < 4; ++trial) {
        auto brains = random_brains(3, 4, rng, {6});
        const Batch batch = random_batch(3, 4, 6, rng);
        const auto g = relational::RelationalNetwork::from_matrix(
            {{1, 0.5, 0}, {0, 1, 0.25}, {0.75, 0, 1}});
        const auto analytic = td_loss(brains, batch, g, 0.9);
        for (std::size_t i = 0; i < brains.size(); ++i) {
            auto loss_of = [&](const nn::Mlp &net) {
                auto copy = brains;
                copy[i].prediction = net;
                return td_loss(copy, batch, g, 0.9).loss;
            };
            const auto numeric = oracle::finite_difference_gradient(brains[i].prediction, loss_of);
            const auto flat = oracle::flatten(analytic.gradients[i]);
            ASSERT_EQ(flat.size(), numeric.size());
            for (std::size_t p = 0; p < flat.size(); ++p)
                ASSERT_NEAR(flat[p], numeric[p], 1e-4 * std::max({std::abs(flat[p]), std::abs(numeric[p]), 1e-2}))
                    << "agent " << i << " parameter " << p;
        }
    }
}

TEST(TdLoss, RejectsBadInputs) {
    Rng rng(12);
    auto brains = random_brains(2, 4, rng);
    const Batch batch = random_batch(2, 4, 5, rng);
    EXPECT_THROW(td_loss(brains, batch, plain_team_rewards(batch), 1.0), ConfigError);
    EXPECT_THROW(td_loss(brains, batch, Vector::Zero(4), 0.9), ShapeError);
    Vector bad = plain_team_rewards(batch);
    bad(0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(td_loss(brains, batch, bad, 0.9), NumericError);
}

TEST(ReplayMemory, EvictsOldestFirst) {
    ReplayMemory m(3, 1, 1);
    for (int k = 0; k < 5; ++k)
        m.push({{double(k)}, {0}, {double(k)}, {0}, false});
    EXPECT_EQ(m.size(), 3u);
    std::multiset<double> kept;
    for (std::size_t i = 0; i < 3; ++i)
        kept.insert(m.at(i).state[0]);
    EXPECT_EQ(kept, (std::multiset<double>{2, 3, 4}));
    EXPECT_THROW(m.at(3), UsageError);
}

TEST(ReplayMemory, RoundTripsTransitions) {
    ReplayMemory m(4, 2, 2);
    Transition t{{1.5, -2}, {4, 0}, {10, -3}, {0.25, 7}, true};
    m.push(t);
    const auto back = m.at(0);
    EXPECT_EQ(back.state, t.state);
    EXPECT_EQ(back.actions, t.actions);
    EXPECT_EQ(back.rewards, t.rewards);
    EXPECT_EQ(back.next_state, t.next_state);
    EXPECT_TRUE(back.done);
    EXPECT_THROW(m.push({{1}, {0, 0}, {0, 0}, {1, 2}, false}), ShapeError);
    EXPECT_THROW(m.push({{1, 2}, {0, 5}, {0, 0}, {1, 2}, false}), ShapeError);
}

TEST(ReplayMemory, SamplesDistinctIndices) {
    ReplayMemory m(50, 1, 1);
    for (int k = 0; k < 40; ++k)
        m.push({{double(k)}, {0}, {0}, {0}, false});
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        auto idx = m.sample_indices(32, rng);
        std::set<std::size_t> uniq(idx.begin(), idx.end());
        ASSERT_EQ(uniq.size(), 32u);
        ASSERT_LT(*uniq.rbegin(), 40u);
    }
    EXPECT_THROW(m.sample_indices(41, rng), UsageError);
}

TEST(ReplayMemory, SamplingIsUniform) {
    const std::size_t cap = 100, b = 32, rounds = 20000;
    ReplayMemory m(cap, 1, 1);
    for (std::size_t k = 0; k < cap; ++k)
        m.push({{double(k)}, {0}, {0}, {0}, false});
    Rng rng(14);
    std::vector<int> counts(cap, 0);
    for (std::size_t r = 0; r < rounds; ++r)
        for (auto i : m.sample_indices(b, rng))
            ++counts[i];
    const double p = double(b) / cap;
    const double mean = rounds * p, sd = std::sqrt(rounds * p * (1 - p));
    for (int c : counts)
        EXPECT_LE(std::abs(c - mean), 3 * sd);
}

TEST(Schedule, LinearDecayAndReset) {
    EpsilonSchedule s(1.0, 0.05, 2000);
    EXPECT_EQ(s.value(0), 1.0);
    EXPECT_NEAR(s.value(1000), 0.525, 1e-12);
    EXPECT_EQ(s.value(2000), 0.05);
    EXPECT_EQ(s.value(9000), 0.05);
    s.reset(5000);
    EXPECT_EQ(s.value(5000), 1.0);
    EXPECT_NEAR(s.value(6000), 0.525, 1e-12);
    double last = 2.0;
    for (long e = 5000; e < 8000; e += 7) {
        const double v = s.value(e);
        ASSERT_LE(v, last);
        ASSERT_GE(v, 0.05);
        ASSERT_LE(v, 1.0);
        last = v;
    }
    EXPECT_THROW(EpsilonSchedule(0.1, 0.5, 10), ConfigError);
    EXPECT_THROW(EpsilonSchedule(1.0, 0.0, 0), ConfigError);
}

TEST(Trainer, FirstEpisodeBookkeeping) {
    auto t = small_trainer(1);
    const auto rec = t.train_episode();
    EXPECT_EQ(rec.rewards.size(), 4u);
    EXPECT_EQ(rec.episode, 0);
    EXPECT_EQ(t.memory().size(), static_cast<std::size_t>(rec.steps));
    EXPECT_EQ(rec.epsilon, 1.0);
    EXPECT_NEAR(rec.team_reward, rec.rewards[0] + rec.rewards[1] + rec.rewards[2] + rec.rewards[3], 1e-12);
}

TEST(Trainer, SkipsUpdatesUntilMemoryHoldsABatch) {
    auto c = small_config();
    c.batch_size = 32;
    auto t = small_trainer(2, c);
    const auto before = t.brains();
    auto rec = t.train_episode();
    ASSERT_LT(rec.steps, 32);
    EXPECT_TRUE(std::isnan(rec.mean_loss));
    EXPECT_TRUE(same_parameters(before, t.brains()));
    while (t.memory().size() < 32)
        rec = t.train_episode();
    rec = t.train_episode();
    EXPECT_TRUE(std::isfinite(rec.mean_loss));
}

TEST(Trainer, TargetsSyncOnEveryKthEpisodeAndStayFrozenBetween) {
    auto c = small_config();
    c.target_update_k = 200;
    c.updates_per_episode = 1;
    auto t = small_trainer(3, c);
    std::vector<nn::Mlp> frozen;
    for (const auto &b : t.brains())
        frozen.push_back(b.target);
    for (int e = 0; e < 200; ++e) {
        const auto rec = t.train_episode();
        if (e < 199) {
            ASSERT_FALSE(rec.target_synced);
            for (std::size_t i = 0; i < 4; ++i)
                ASSERT_TRUE(t.brains()[i].target == frozen[i]) << "episode " << e;
        } else {
            ASSERT_TRUE(rec.target_synced);
        }
    }
    for (const auto &b : t.brains()) {
        EXPECT_TRUE(b.target == b.prediction);
        EXPECT_FALSE(b.target == frozen[0]);
    }
}

TEST(Trainer, EvaluationIsPureAndRepeatable) {
    auto t = small_trainer(4);
    for (int e = 0; e < 5; ++e)
        t.train_episode();
    const auto brains = t.brains();
    const auto mem = t.memory().size();
    const auto a = t.evaluate_greedy();
    const auto b = t.evaluate_greedy();
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.size(), 4u);
    EXPECT_EQ(t.memory().size(), mem);
    EXPECT_TRUE(same_parameters(brains, t.brains()));

    // Evaluating must not perturb the training stream either.
    auto u = small_trainer(4);
    for (int e = 0; e < 5; ++e) {
        u.train_episode();
        u.evaluate_greedy();
    }
    EXPECT_EQ(t.train_episode().rewards, u.train_episode().rewards);
    EXPECT_TRUE(same_parameters(t.brains(), u.brains()));
}

TEST(Trainer, IdentityNetworkReproducesVdnBitwise) {
    auto vdn = small_trainer(5, small_config(Algorithm::Vdn));
    auto ca = small_trainer(5, small_config(Algorithm::CaVdn));
    for (int e = 0; e < 40; ++e) {
        const auto a = vdn.train_episode();
        const auto b = ca.train_episode();
        ASSERT_EQ(a.rewards, b.rewards);
        ASSERT_EQ(a.team_reward, b.team_reward);
        ASSERT_EQ(std::isnan(a.mean_loss), std::isnan(b.mean_loss));
        if (!std::isnan(a.mean_loss)) ASSERT_EQ(a.mean_loss, b.mean_loss);
    }
    EXPECT_TRUE(same_parameters(vdn.brains(), ca.brains()));
}

TEST(Trainer, SameSeedSameTrajectory) {
    auto a = small_trainer(6), b = small_trainer(6), c = small_trainer(7);
    bool differs = false;
    for (int e = 0; e < 10; ++e) {
        const auto ra = a.train_episode(), rb = b.train_episode(), rc = c.train_episode();
        ASSERT_EQ(ra.rewards, rb.rewards);
        differs |= ra.rewards != rc.rewards;
    }
    EXPECT_TRUE(same_parameters(a.brains(), b.brains()));
    EXPECT_TRUE(differs);
}

TEST(Trainer, StoresExecutedActionUnderMalfunction) {
    malfunction::MalfunctionSpec spec;
    spec.onset_episode = 0;
    auto t = small_trainer(8, small_config(), spec);
    for (int e = 0; e < 3; ++e)
        t.train_episode();
    for (std::size_t i = 0; i < t.memory().size(); ++i)
        ASSERT_EQ(t.memory().at(i).actions[3], static_cast<int>(env::Action::Idle));
}

TEST(Trainer, RejectsMismatchedNetwork) {
    EXPECT_THROW(Trainer(small_config(), env::default_layout(), {}, 0, relational::self_interested_network(3)),
                 ConfigError);
    auto c = small_config();
    c.gamma = 1.0;
    EXPECT_THROW(small_trainer(0, c), ConfigError);
}

TEST(Algorithm, NamesRoundTrip) {
    EXPECT_EQ(parse_algorithm(algorithm_name(Algorithm::Vdn)), Algorithm::Vdn);
    EXPECT_EQ(parse_algorithm(algorithm_name(Algorithm::CaVdn)), Algorithm::CaVdn);
    EXPECT_THROW(parse_algorithm("qmix"), ConfigError);
}
