#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace dpaat;

namespace {


Tensor probs(std::vector<Real> v, std::size_t c) {
    const std::size_t n = v.size() / c;
    return Tensor({n, c}, std::move(v));
}

struct Toy {
    Dataset data = synth(3, 8, 8, 11);
    ArchSpec arch = small_cnn(1, 8, 8, 3);
    ModelParams init = build_model(arch, 5);
};

TrainConfig toy_config(TrainMethod m) {
    TrainConfig c;
    c.method = m;
    c.batch_size = 12;
    c.lr = Real(0.005);
    c.seed = 21;
    return c;
}

ModelParams run_epochs(const Toy& t, const TrainConfig& c, std::size_t epochs, std::vector<EpochReport>* reps = nullptr) {
    Trainer tr(t.arch, t.init, c);
    for (std::size_t e = 0; e < epochs; ++e) {
        const EpochReport r = tr.train_epoch(t.data, e);
        if (reps) reps->push_back(r);
    }
    return tr.model().params();
}

} // namespace

TEST(SyncLoss, Examples) {
    const Tensor half = probs({0.5, 0.5}, 2);
    EXPECT_NEAR(sync_loss(half, half, SyncVariant::PaperLiteral)[0], kLn2, 1e-12);
    EXPECT_NEAR(sync_loss(half, half, SyncVariant::Jsd)[0], 0, 1e-12);
    const Tensor a = probs({1, 0}, 2), b = probs({0, 1}, 2);
    EXPECT_NEAR(sync_loss(a, b, SyncVariant::PaperLiteral)[0], 0, 1e-12);
    EXPECT_NEAR(sync_loss(a, b, SyncVariant::Jsd)[0], kLn2, 1e-12);
}

TEST(SyncLoss, RejectsUnnormalizedRows) {
    EXPECT_THROW(sync_loss(probs({0.5, 0.6}, 2), probs({0.5, 0.5}, 2), SyncVariant::Jsd), ContractError);
    EXPECT_THROW(sync_loss(probs({0.5, 0.5}, 2), probs({0.5, 0.5, 0, 0}, 4), SyncVariant::Jsd), ShapeError);
}

TEST(SyncLoss, RangeSymmetryAndVariantRelation) {
    Rng r(8);
    for (int t = 0; t < 100; ++t) {
        const std::size_t c = 2 + r.below(8);
        const Tensor p = testutil::random_probs(6, c, r), q = testutil::random_probs(6, c, r);
        const Tensor lit = sync_loss(p, q, SyncVariant::PaperLiteral);
        const Tensor jsd = sync_loss(p, q, SyncVariant::Jsd);
        const Tensor rev = sync_loss(q, p, SyncVariant::Jsd);
        const Tensor same = sync_loss(p, p, SyncVariant::Jsd);
        for (std::size_t i = 0; i < 6; ++i) {
            EXPECT_GE(jsd[i], 0);
            EXPECT_LE(jsd[i], kLn2);
            EXPECT_GE(lit[i], -1e-12);
            EXPECT_LE(lit[i], kLn2 + 1e-12);
            EXPECT_NEAR(jsd[i] + lit[i], kLn2, 1e-12);
            EXPECT_NEAR(jsd[i], rev[i], 1e-12);
            EXPECT_NEAR(same[i], 0, 1e-12);
            EXPECT_GT(jsd[i], 0);
        }
    }
}

TEST(SyncLoss, GraphFormMatchesDirectEvaluation) {
    Rng r(4);
    for (SyncVariant v : {SyncVariant::PaperLiteral, SyncVariant::Jsd}) {
        const Tensor p = testutil::random_probs(5, 4, r), q = testutil::random_probs(5, 4, r);
        CompGraph g;
        const NodeId s = sync_node(g, g.input("p", {5, 4}), g.input("q", {5, 4}), v);
        g.set_output(s);
        const Tensor got = g.forward({{"p", p}, {"q", q}}, {});
        const Tensor want = sync_loss(p, q, v);
        for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(SyncLoss, GraphGradientMatchesFiniteDifferences) {
    Rng r(6);
    const Tensor p = testutil::random_probs(3, 4, r), q = testutil::random_probs(3, 4, r);
    CompGraph g;
    g.set_output(g.mean(sync_node(g, g.input("p", {3, 4}), g.input("q", {3, 4}), SyncVariant::Jsd)));
    EXPECT_LT(finite_diff_check(g, {{"p", p}, {"q", q}}, {}, Real(1e-6)), 1e-5);
}

TEST(BatchLossStats, Examples) {
    const std::vector<Real> clean{1.0, 1.0, 1.0}, adv{1.2, 1.4, 1.6};
    const BatchLossStats s = batch_loss_stats(clean, adv);
    ASSERT_EQ(s.delta_l.size(), 3u);
    EXPECT_NEAR(s.delta_l[0], 0.2, 1e-12);
    EXPECT_NEAR(s.delta_l[1], 0.4, 1e-12);
    EXPECT_NEAR(s.delta_l[2], 0.6, 1e-12);
    EXPECT_NEAR(s.delta_l_avg, 0.4, 1e-12);
    EXPECT_EQ(s.fragile, (std::vector<bool>{false, false, true}));
    const BatchLossStats z = batch_loss_stats(clean, clean);
    EXPECT_EQ(z.delta_l, (std::vector<Real>{0, 0, 0}));
    EXPECT_EQ(z.delta_l_avg, 0);
    EXPECT_THROW(batch_loss_stats(std::vector<Real>{}, std::vector<Real>{}), ContractError);
    EXPECT_THROW(batch_loss_stats(clean, std::vector<Real>{1.0}), ShapeError);
}

TEST(BatchLossStats, MeanOfDifferencesIsDifferenceOfMeans) {
    Rng r(2);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + r.below(64);
        std::vector<Real> c(n), a(n);
        for (std::size_t i = 0; i < n; ++i) {
            c[i] = static_cast<Real>(r.uniform(0, 5));
            a[i] = static_cast<Real>(r.uniform(0, 5));
        }
        const BatchLossStats s = batch_loss_stats(c, a);
        Real mc = 0, ma = 0, md = 0;
        for (std::size_t i = 0; i < n; ++i) {
            mc += c[i];
            ma += a[i];
            md += s.delta_l[i];
        }
        EXPECT_NEAR(md / Real(n) - s.delta_l_avg, 0, 1e-9);
        EXPECT_NEAR(ma / Real(n) - mc / Real(n), s.delta_l_avg, 1e-9);
    }
}

TEST(AdaptEpsilon, Examples) {
    const AdaptedEps f = adapt_epsilon_one(Real(0.6), Real(0.4), Real(0.3), Real(0.3), Real(0.015), Real(0.6));
    EXPECT_NEAR(f.gamma, 0.15, 1e-12);
    EXPECT_TRUE(f.fragile);
    EXPECT_NEAR(f.eps, 0.15, 1e-12);
    const AdaptedEps s = adapt_epsilon_one(Real(0.2), Real(0.4), Real(0.3), Real(0.3), Real(0.015), Real(0.6));
    EXPECT_FALSE(s.fragile);
    EXPECT_NEAR(s.eps, 0.45, 1e-12);
    const AdaptedEps z = adapt_epsilon_one(Real(0.4), Real(0.4), Real(0.27), Real(0.3), Real(0.015), Real(0.6));
    EXPECT_EQ(z.gamma, 0);
    EXPECT_EQ(z.eps, Real(0.27));
}

TEST(AdaptEpsilon, BatchFormFillsStats) {
    BatchLossStats s = batch_loss_stats(std::vector<Real>{1, 1, 1}, std::vector<Real>{1.2, 1.4, 1.6});
    const std::vector<Real> norms{0.3, 0.3, 0.3};
    const auto eps = adapt_epsilon(s, norms, Real(0.3), Real(0.015), Real(0.6));
    EXPECT_NEAR(eps[0], 0.45, 1e-12);
    EXPECT_NEAR(eps[1], 0.3, 1e-12);
    EXPECT_NEAR(eps[2], 0.15, 1e-12);
    EXPECT_EQ(s.eps_adapted, eps);
    EXPECT_NEAR(s.gamma[0], 0.15, 1e-12);
    EXPECT_THROW(adapt_epsilon(s, std::vector<Real>{0.3}, Real(0.3), 0, 1), ShapeError);
}

TEST(AdaptEpsilon, CapFloorAndNegativeAverage) {
    // Tiny average: gamma hits the cap.
    const AdaptedEps c = adapt_epsilon_one(Real(1.0), Real(1e-10), Real(0.3), Real(0.3), Real(0.015), Real(0.6));
    EXPECT_EQ(c.gamma, Real(0.6));
    EXPECT_EQ(c.eps, Real(0.015)); // 0.3 - 0.6 is floored
    // Negative average: the denominator is floored and the raw comparison still classifies.
    const AdaptedEps n = adapt_epsilon_one(Real(-0.5), Real(-0.2), Real(0.3), Real(0.3), Real(0.015), Real(0.6));
    EXPECT_FALSE(n.fragile);
    EXPECT_EQ(n.gamma, Real(0.6));
    EXPECT_NEAR(n.eps, 0.9, 1e-12);
    EXPECT_THROW(adapt_epsilon_one(0, 0, Real(-1), 1, 0, 1), ContractError);
}

TEST(AdaptEpsilon, DirectionFollowsFragility) {
    Rng r(12);
    for (int t = 0; t < 1000; ++t) {
        const Real dl = static_cast<Real>(r.uniform(-1, 2)), avg = static_cast<Real>(r.uniform(-0.5, 1));
        const Real norm = static_cast<Real>(r.uniform(0, 1)), eps = static_cast<Real>(r.uniform(0.01, 1));
        const AdaptedEps a = adapt_epsilon_one(dl, avg, norm, eps, 0, 2 * eps);
        EXPECT_GE(a.gamma, 0);
        EXPECT_LE(a.gamma, 2 * eps);
        EXPECT_GE(a.eps, 0);
        if (dl > avg) {
            EXPECT_TRUE(a.fragile);
            EXPECT_LE(a.eps, norm);
        } else if (dl < avg) {
            EXPECT_FALSE(a.fragile);
            EXPECT_GE(a.eps, norm);
        }
    }
}

TEST(AmatEpsilon, Examples) {
    const std::vector<Real> loss{0.1, 0.9}, norms{0.2, 0.3};
    const auto e = amat_epsilon(loss, norms, Real(0.3), Real(0.5), Real(0.03));
    EXPECT_NEAR(e[0], 0.33, 1e-12);
    EXPECT_NEAR(e[1], 0.3, 1e-12);
    const auto f = amat_epsilon(std::vector<Real>{2.0}, std::vector<Real>{0.25}, Real(0.25), Real(0.5), Real(0.03));
    EXPECT_EQ(f[0], Real(0.25));
    EXPECT_THROW(amat_epsilon(loss, std::vector<Real>{0.1}, 1, 1, 1), ShapeError);
}

TEST(TotalLoss, Examples) {
    const LossParts p{Real(1.0), Real(2.0), Real(0.25)};
    EXPECT_EQ(total_loss(TrainMethod::SAT, p, Real(0.5), 1), Real(1.5));
    EXPECT_EQ(total_loss(TrainMethod::DPAAT, p, Real(0.5), 0), total_loss(TrainMethod::SAT, p, Real(0.5), 0));
    EXPECT_EQ(total_loss(TrainMethod::AT, p, Real(0.5), 1), Real(2.0));
    EXPECT_EQ(total_loss(TrainMethod::STD, p, Real(0.5), 1), Real(1.0));
    EXPECT_EQ(total_loss(TrainMethod::AMAT, p, Real(0.9), 1), Real(1.5));
    EXPECT_EQ(total_loss(TrainMethod::DPAAT, p, Real(0.5), 2), Real(2.0));
    EXPECT_EQ(total_loss(TrainMethod::DPAAT_A_only, p, Real(0.5), 2), Real(1.5));
    EXPECT_EQ(total_loss(TrainMethod::DPAAT_B_only, p, Real(0.5), 2), Real(2.0));
}

TEST(TotalLoss, MissingPartIsAnError) {
    EXPECT_THROW(total_loss(TrainMethod::AT, LossParts{Real(1), {}, {}}, Real(0.5), 1), ContractError);
    EXPECT_THROW(total_loss(TrainMethod::DPAAT, LossParts{Real(1), Real(1), {}}, Real(0.5), 1), ContractError);
    EXPECT_THROW(total_loss(TrainMethod::STD, LossParts{}, Real(0.5), 1), ContractError);
}

TEST(Methods, NamesRoundTrip) {
    for (TrainMethod m : {TrainMethod::STD, TrainMethod::AT, TrainMethod::SAT, TrainMethod::AMAT, TrainMethod::DPAAT,
                          TrainMethod::DPAAT_A_only, TrainMethod::DPAAT_B_only})
        EXPECT_EQ(parse_method(method_name(m)), m);
    EXPECT_THROW(parse_method("TRADES"), ContractError);
}

TEST(TrainConfig, ValidatesRanges) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_NEAR(c.resolved_eps_min(), 0.015, 1e-12);
    EXPECT_NEAR(c.resolved_gamma_cap(), 0.6, 1e-12);
    EXPECT_NEAR(c.resolved_delta_eps(), 0.03, 1e-12);
    c.alpha = Real(1.5);
    EXPECT_THROW(c.validate(), ContractError);
    c = TrainConfig{};
    c.eps_min = Real(0.5);
    EXPECT_THROW(c.validate(), ContractError);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ContractError);
}

TEST(Adam, FirstStepIsMinusLrTimesSign) {
    ModelParams p{"x", {{"w", testutil::random_tensor({50}, 1)}}};
    const ModelParams before = p;
    const Tensor g = testutil::random_tensor({50}, 2);
    OptimizerState s = make_optimizer_state(p);
    adam_step(p, {{"w", g}}, s, Real(0.01));
    EXPECT_EQ(s.step, 1u);
    for (std::size_t i = 0; i < 50; ++i) {
        const Real want = before.entries[0].value[i] - Real(0.01) * Real((g[i] > 0) - (g[i] < 0));
        EXPECT_NEAR(p.entries[0].value[i], want, 0.01 * 1e-8 / std::abs(g[i]) + 1e-15);
    }
}

TEST(Adam, ZeroGradientLeavesParamsButCountsTheStep) {
    ModelParams p{"x", {{"w", testutil::random_tensor({10}, 1)}}};
    const ModelParams before = p;
    OptimizerState s = make_optimizer_state(p);
    adam_step(p, {{"w", Tensor({10})}}, s, Real(0.01));
    EXPECT_EQ(p, before);
    EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ShapeMismatchAndMissingGradient) {
    ModelParams p{"x", {{"w", Tensor({3})}}};
    OptimizerState s = make_optimizer_state(p);
    EXPECT_THROW(adam_step(p, {{"w", Tensor({4})}}, s, 1), ShapeError);
    EXPECT_THROW(adam_step(p, {{"v", Tensor({3})}}, s, 1), ShapeError);
}

TEST(Adam, Deterministic) {
    auto run = [] {
        ModelParams p{"x", {{"w", testutil::random_tensor({20}, 3)}}};
        OptimizerState s = make_optimizer_state(p);
        for (std::uint64_t k = 0; k < 10; ++k) adam_step(p, {{"w", testutil::random_tensor({20}, 10 + k)}}, s, Real(0.1));
        return std::pair{p, s};
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
}

TEST(Adam, OneStepDecreasesAConvexQuadratic) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        ModelParams p{"x", {{"w", testutil::random_tensor({8}, seed)}}};
        auto f = [&] {
            Real s = 0;
            for (auto v : p.entries[0].value.data()) s += v * v;
            return s;
        };
        Tensor g = p.entries[0].value;
        for (auto& v : g.data()) v *= 2;
        OptimizerState s = make_optimizer_state(p);
        const Real before = f();
        adam_step(p, {{"w", g}}, s, Real(1e-3));
        EXPECT_LT(f(), before);
    }
}

TEST(EarlyStop, Examples) {
    const std::vector<Real> flat{0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6};
    const StopDecision d = early_stop(flat, 5);
    EXPECT_TRUE(d.stop);
    EXPECT_EQ(d.best_epoch, 2u);
    EXPECT_FALSE(early_stop(std::span(flat).first(6), 5).stop);
    std::vector<Real> up;
    for (int i = 0; i < 30; ++i) {
        up.push_back(Real(i));
        EXPECT_FALSE(early_stop(up, 1).stop);
        EXPECT_EQ(early_stop(up, 1).best_epoch, up.size());
    }
    EXPECT_FALSE(early_stop(std::vector<Real>{0.3}, 1).stop);
    EXPECT_THROW(early_stop(std::vector<Real>{}, 1), ContractError);
}

TEST(TrainLog, FixedColumnsAndDeterministicTime) {
    EpochReport r;
    r.epoch = 1;
    r.clean_loss = Real(0.5);
    r.seconds = 3.25;
    const std::string off = train_log_csv({r}, false);
    EXPECT_EQ(off.substr(0, off.find('\n')), kTrainLogHeader);
    EXPECT_EQ(off.substr(off.rfind(',') + 1), "0\n");
    const std::string on = train_log_csv({r}, true);
    EXPECT_NE(on.find("3.25"), std::string::npos);
}

TEST(Trainer, StdNeverAttacks) {
    Toy t;
    Trainer tr(t.arch, t.init, toy_config(TrainMethod::STD));
    const EpochReport r = tr.train_epoch(t.data, 0);
    EXPECT_EQ(tr.attack_calls(), 0u);
    EXPECT_EQ(r.adv_loss, 0);
    EXPECT_EQ(r.epoch, 1u);
    EXPECT_NE(tr.model().params(), t.init);
}

TEST(Trainer, AttackCallsPerBatch) {
    Toy t;
    Trainer sat(t.arch, t.init, toy_config(TrainMethod::SAT));
    sat.train_epoch(t.data, 0);
    EXPECT_EQ(sat.attack_calls(), 2u);
    TrainConfig c = toy_config(TrainMethod::DPAAT);
    c.regenerate = Regenerate::Reattack;
    Trainer re(t.arch, t.init, c);
    const EpochReport r = re.train_epoch(t.data, 0);
    EXPECT_EQ(re.attack_calls(), 4u);
    EXPECT_GT(r.fragile_frac, 0);
    EXPECT_LT(r.fragile_frac, 1);
}

TEST(Trainer, DeterministicEpochsForEveryMethod) {
    Toy t;
    for (TrainMethod m : {TrainMethod::STD, TrainMethod::AT, TrainMethod::SAT, TrainMethod::AMAT, TrainMethod::DPAAT,
                          TrainMethod::DPAAT_A_only, TrainMethod::DPAAT_B_only}) {
        std::vector<EpochReport> ra, rb;
        const ModelParams a = run_epochs(t, toy_config(m), 2, &ra);
        const ModelParams b = run_epochs(t, toy_config(m), 2, &rb);
        EXPECT_EQ(a, b) << method_name(m);
        for (std::size_t e = 0; e < 2; ++e) {
            EXPECT_EQ(ra[e].clean_loss, rb[e].clean_loss);
            EXPECT_EQ(ra[e].adv_loss, rb[e].adv_loss);
            EXPECT_EQ(ra[e].sync_loss, rb[e].sync_loss);
            EXPECT_EQ(ra[e].fragile_frac, rb[e].fragile_frac);
        }
    }
}

TEST(Trainer, SeedChangesTheTrajectory) {
    Toy t;
    TrainConfig c = toy_config(TrainMethod::DPAAT);
    const ModelParams a = run_epochs(t, c, 1);
    c.seed += 1;
    EXPECT_NE(a, run_epochs(t, c, 1));
}

TEST(Reduction, DpaatWithoutSyncOrAdaptationIsSat) {
    Toy t;
    TrainConfig d = toy_config(TrainMethod::DPAAT);
    d.beta = 0;
    d.gamma_cap = 0;
    d.eps_min = d.attack.epsilon;
    std::vector<EpochReport> rd, rs;
    const ModelParams pd = run_epochs(t, d, 3, &rd);
    const ModelParams ps = run_epochs(t, toy_config(TrainMethod::SAT), 3, &rs);
    EXPECT_EQ(pd, ps);
    for (std::size_t e = 0; e < 3; ++e) {
        EXPECT_EQ(rd[e].clean_loss, rs[e].clean_loss);
        EXPECT_EQ(rd[e].adv_loss, rs[e].adv_loss);
    }
    // gamma_cap = 0 alone is enough while the attack saturates its ball.
    TrainConfig g = toy_config(TrainMethod::DPAAT);
    g.beta = 0;
    g.gamma_cap = 0;
    EXPECT_EQ(run_epochs(t, g, 3), ps);
}

TEST(Reduction, SatAlphaOneIsAt) {
    Toy t;
    TrainConfig s = toy_config(TrainMethod::SAT);
    s.alpha = 1;
    EXPECT_EQ(run_epochs(t, s, 3), run_epochs(t, toy_config(TrainMethod::AT), 3));
}

TEST(Reduction, SatAlphaZeroIsStd) {
    Toy t;
    TrainConfig s = toy_config(TrainMethod::SAT);
    s.alpha = 0;
    std::vector<EpochReport> rs, rd;
    EXPECT_EQ(run_epochs(t, s, 3, &rs), run_epochs(t, toy_config(TrainMethod::STD), 3, &rd));
    for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(rs[e].clean_loss, rd[e].clean_loss);
}

TEST(Trainer, WarmupTrainsOnlyDenseLayers) {
    Toy t;
    TrainConfig c = toy_config(TrainMethod::DPAAT);
    c.warmup_epochs = 1;
    Trainer tr(t.arch, t.init, c);
    tr.train_epoch(t.data, 0);
    const ModelParams& p = tr.model().params();
    for (std::size_t k = 0; k < p.entries.size(); ++k) {
        const bool dense = p.entries[k].name.starts_with("dense");
        EXPECT_EQ(p.entries[k].value == t.init.entries[k].value, !dense) << p.entries[k].name;
    }
    tr.train_epoch(t.data, 1);
    EXPECT_NE(*find_tensor(tr.model().params().entries, "conv1.weight"), *find_tensor(t.init.entries, "conv1.weight"));
}

TEST(Trainer, AmatMeasuresXiOnce) {
    Toy t;
    Trainer tr(t.arch, t.init, toy_config(TrainMethod::AMAT));
    EXPECT_FALSE(tr.xi().has_value());
    tr.train_epoch(t.data, 0);
    ASSERT_TRUE(tr.xi().has_value());
    const Real xi = *tr.xi();
    EXPECT_GT(xi, 0);
    tr.train_epoch(t.data, 1);
    EXPECT_EQ(*tr.xi(), xi);
    TrainConfig c = toy_config(TrainMethod::AMAT);
    c.xi = Real(0.7);
    Trainer fixed(t.arch, t.init, c);
    fixed.train_epoch(t.data, 0);
    EXPECT_EQ(*fixed.xi(), Real(0.7));
}

TEST(Trainer, SyncTelemetryFollowsTheVariant) {
    Toy t;
    std::vector<EpochReport> j, l;
    TrainConfig c = toy_config(TrainMethod::DPAAT);
    run_epochs(t, c, 1, &j);
    c.sync_variant = SyncVariant::PaperLiteral;
    run_epochs(t, c, 1, &l);
    EXPECT_GE(j[0].sync_loss, 0);
    EXPECT_LE(j[0].sync_loss, kLn2);
    EXPECT_GE(l[0].sync_loss, 0);
    EXPECT_LE(l[0].sync_loss, kLn2);
    // Clean and adversarial predictions stay close, so the two readings sit at opposite ends.
    EXPECT_LT(j[0].sync_loss, l[0].sync_loss);
}

TEST(Trainer, FitKeepsTheBestEpoch) {
    Toy t;
    TrainConfig c = toy_config(TrainMethod::STD);
    c.epochs = 12;
    c.patience = 2;
    Trainer tr(t.arch, t.init, c);
    std::size_t calls = 0;
    const auto res = tr.fit(t.data, t.data, [&](const EpochReport&) { ++calls; });
    ASSERT_FALSE(res.history.empty());
    EXPECT_EQ(calls, res.history.size());
    Real best = 0;
    for (const auto& h : res.history) best = std::max(best, h.val_gacc);
    EXPECT_EQ(res.history[res.best_epoch - 1].val_gacc, best);
    if (res.stopped_early) EXPECT_GE(res.history.size() - res.best_epoch, c.patience);
    Classifier m(t.arch, res.best_params);
    EXPECT_EQ(clean_accuracy(m, t.data), best);
}

TEST(Trainer, EmptyDataIsAnError) {
    Toy t;
    Trainer tr(t.arch, t.init, toy_config(TrainMethod::STD));
    EXPECT_THROW(tr.train_epoch(Dataset{}, 0), ContractError);
}
