#include <algorithm>

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace dpaat;

namespace {

// AP straight from the definition: for each positive, the precision of the
// set of examples scoring at least as high (scores assumed distinct).
Real brute_ap(const std::vector<Real>& s, const std::vector<bool>& pos) {
    Real sum = 0;
    std::size_t p = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!pos[i]) continue;
        ++p;
        std::size_t above = 0, hits = 0;
        for (std::size_t j = 0; j < s.size(); ++j)
            if (s[j] >= s[i]) {
                ++above;
                hits += pos[j];
            }
        sum += Real(hits) / Real(above);
    }
    return sum / Real(p);
}

} // namespace

TEST(Confusion, Examples) {
    const Labels t{0, 1, 2, 1}, p{0, 2, 2, 1};
    const ConfusionMatrix cm = confusion(t, p, 3);
    EXPECT_EQ(cm.at(1, 2), 1u);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(cm.at(c, c), 1u);
    EXPECT_EQ(cm.total(), 4u);

    const ConfusionMatrix perfect = confusion(t, t, 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) EXPECT_EQ(perfect.at(i, j), 0u);

    const ConfusionMatrix zero = confusion(t, Labels{0, 0, 0, 0}, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(zero.at(i, 1), 0u);
        EXPECT_EQ(zero.at(i, 2), 0u);
    }
    EXPECT_EQ(zero.at(1, 0), 2u);
}

TEST(Confusion, Errors) {
    EXPECT_THROW(confusion(Labels{0, 3}, Labels{0, 1}, 3), ContractError);
    EXPECT_THROW(confusion(Labels{0}, Labels{0, 1}, 3), ShapeError);
}

TEST(Confusion, TotalMatchesExampleCount) {
    Rng r(1);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = r.below(200), c = 2 + r.below(6);
        Labels a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = r.below(c);
            b[i] = r.below(c);
        }
        EXPECT_EQ(confusion(a, b, c).total(), n);
    }
}

TEST(Accuracy, Examples) {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 5; // TN
    cm.at(0, 1) = 1; // FP
    cm.at(1, 0) = 1; // FN
    cm.at(1, 1) = 3; // TP
    EXPECT_NEAR(accuracy(cm), 0.8, 1e-12);
    EXPECT_EQ(accuracy(confusion(Labels{0, 1, 2}, Labels{0, 1, 2}, 3)), 1);
    EXPECT_EQ(accuracy(confusion(Labels{0, 1, 2}, Labels{1, 2, 0}, 3)), 0);
    EXPECT_THROW(accuracy(ConfusionMatrix(3)), ContractError);
}

TEST(Prf1, Examples) {
    const ClassScores d = prf1(confusion(Labels{0, 1, 2}, Labels{0, 1, 2}, 3));
    EXPECT_EQ(d.macro_precision, 1);
    EXPECT_EQ(d.macro_recall, 1);
    EXPECT_EQ(d.macro_f1, 1);

    const ClassScores never = prf1(confusion(Labels{0, 1, 2}, Labels{0, 1, 1}, 3));
    EXPECT_EQ(never.precision[2], 0);
    EXPECT_EQ(never.f1[2], 0);

    ConfusionMatrix b(2);
    b.at(0, 0) = 2;
    b.at(0, 1) = 1;
    b.at(1, 0) = 1;
    b.at(1, 1) = 2;
    const ClassScores s = prf1(b);
    EXPECT_NEAR(s.macro_precision, 2.0 / 3, 1e-12);
    EXPECT_NEAR(s.macro_recall, 2.0 / 3, 1e-12);
    EXPECT_NEAR(s.macro_f1, 2.0 / 3, 1e-12);
}

TEST(Prf1, ValuesStayInTheUnitInterval) {
    Rng r(4);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 1 + r.below(100), c = 2 + r.below(5);
        Labels a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = r.below(c);
            b[i] = r.below(c);
        }
        const ClassScores s = prf1(confusion(a, b, c));
        for (std::size_t k = 0; k < c; ++k)
            for (Real v : {s.precision[k], s.recall[k], s.f1[k]}) {
                EXPECT_GE(v, 0);
                EXPECT_LE(v, 1);
            }
        std::size_t same = 0;
        for (std::size_t i = 0; i < n; ++i) same += a[i] == b[i];
        EXPECT_NEAR(accuracy(confusion(a, b, c)), Real(same) / Real(n), 1e-12);
    }
}

TEST(AveragePrecision, Examples) {
    const std::vector<Real> s{0.9, 0.8, 0.7, 0.6};
    EXPECT_NEAR(average_precision(s, {true, false, true, false}), 0.5 * (1.0 + 2.0 / 3), 1e-12);
    EXPECT_EQ(average_precision(s, {true, true, false, false}), 1);
    for (std::size_t n = 1; n < 10; ++n) {
        std::vector<Real> sc(n);
        std::vector<bool> pos(n, false);
        for (std::size_t i = 0; i < n; ++i) sc[i] = Real(n - i);
        pos[n - 1] = true;
        EXPECT_NEAR(average_precision(sc, pos), 1.0 / Real(n), 1e-12);
    }
    EXPECT_THROW(average_precision(s, {false, false, false, false}), ContractError);
    EXPECT_THROW(average_precision(s, {true}), ShapeError);
}

TEST(AveragePrecision, MatchesBruteForce) {
    Rng r(9);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 1 + r.below(30);
        std::vector<Real> s(n);
        std::vector<bool> pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<Real>(r.uniform());
            pos[i] = r.below(2);
        }
        pos[r.below(n)] = true;
        EXPECT_NEAR(average_precision(s, pos), brute_ap(s, pos), 1e-12);
    }
}

TEST(MeanAveragePrecision, Examples) {
    const Labels y{0, 1, 2, 1, 0};
    const Tensor onehot = one_hot(y, 3);
    EXPECT_EQ(mean_average_precision(onehot, y).mean, 1);

    // Two classes, two examples each. Column 0 ranks e0, e2, e1, e3 and
    // column 1 ranks e3, e1, e2, e0: both give AP = (1 + 2/3) / 2.
    const Tensor p({4, 2}, std::vector<Real>{0.9, 0.1, 0.3, 0.7, 0.6, 0.4, 0.2, 0.8});
    const MapResult m = mean_average_precision(p, Labels{0, 0, 1, 1});
    EXPECT_NEAR(m.per_class[0], 5.0 / 6, 1e-12);
    EXPECT_NEAR(m.per_class[1], 5.0 / 6, 1e-12);
    EXPECT_NEAR(m.mean, 5.0 / 6, 1e-12);
}

TEST(MeanAveragePrecision, MissingClassIsNamed) {
    try {
        mean_average_precision(Tensor({2, 3}, Real(1) / 3), Labels{0, 2});
        FAIL() << "expected ContractError";
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
    }
}

TEST(MeanAveragePrecision, RandomScoresApproachPrevalence) {
    const std::size_t n = 3000, c = 3;
    Rng r(77);
    const Tensor p = testutil::random_probs(n, c, r);
    Labels y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = i % c;
    const MapResult m = mean_average_precision(p, y);
    for (Real ap : m.per_class) EXPECT_NEAR(ap, 1.0 / 3, 0.05);
}

TEST(EvalCsv, RoundTrip) {
    std::vector<EvalRow> rows{{"DPAAT", "20-PGD", 0.9, 0.5, 0.8, 0.4, 0.51, 0.52, 0.515},
                              {"STD", "FGSM", 1, 0, 1, 0.25, 0, 0, 0}};
    const std::string text = eval_csv(rows);
    EXPECT_EQ(text.substr(0, text.find('\n')), kEvalCsvHeader);
    const auto back = parse_eval_csv(text);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].method, "DPAAT");
    EXPECT_EQ(back[0].attack, "20-PGD");
    EXPECT_NEAR(back[0].f1, 0.515, 1e-10);
    EXPECT_EQ(eval_csv(back), text);
    EXPECT_THROW(parse_eval_csv("nope\n"), Error);
    EXPECT_THROW(parse_eval_csv(std::string(kEvalCsvHeader) + "\nA,B,1\n"), Error);
    EXPECT_THROW(parse_eval_csv(std::string(kEvalCsvHeader) + "\nA,B,1,2,3,4,5,6,x\n"), Error);
}
