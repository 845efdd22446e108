#include "doctest.h"

#include <cmath>
#include <optional>
#include <vector>

#include "upcl/errors.hpp"
#include "upcl/grad_check.hpp"
#include "upcl/losses.hpp"
#include "upcl/rng.hpp"

using namespace upcl;

namespace {

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

FeatureBatch random_batch(Rng& rng, std::size_t n, std::size_t d, int class_count) {
    FeatureBatch b;
    b.feats = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) b.feats(i, c) = rng.gaussian();
        b.labels.push_back(static_cast<int>(rng.uniform_int(static_cast<std::size_t>(class_count))));
    }
    normalize_rows(b.feats);
    return b;
}

Assignment identity_assignment(int class_count) {
    Assignment a;
    for (int k = 0; k < class_count; ++k) a[k] = static_cast<std::size_t>(k);
    return a;
}

ClassPrior uniform_prior(int class_count, long per_class = 10) {
    std::map<int, long> counts;
    for (int k = 0; k < class_count; ++k) counts[k] = per_class;
    return ClassPrior(counts);
}

FeatureBatch axis_batch() {
    FeatureBatch b;
    b.feats = Matrix(1, 2);
    b.feats(0, 0) = 1.0;
    b.labels = {0};
    return b;
}

PrototypeSet axis_protos() {
    PrototypeSet p(2, Generator::GramSchmidt);
    p.rows = Matrix(2, 2);
    p.rows(0, 0) = 1.0;
    p.rows(1, 1) = 1.0;
    return p;
}

} // namespace

TEST_CASE("class prior frequencies sum to one and reject zero counts") {
    ClassPrior prior({{0, 3}, {1, 1}, {5, 4}});
    double sum = 0.0;
    for (const auto& [class_id, f] : prior.freq) sum += f;
    CHECK(near(sum, 1.0, 1e-9));
    CHECK(near(prior.freq.at(0), 0.375, 1e-15));
    CHECK_THROWS_AS(ClassPrior({{0, 0}}), ZeroCount);
}

TEST_CASE("proto_loss hand value with a uniform prior") {
    LossConfig cfg;
    cfg.temperature = 1.0;
    cfg.margin_mode = MarginMode::Dynamic;
    LossResult r = proto_loss(axis_batch(), axis_protos(), identity_assignment(2),
                              uniform_prior(2), cfg);
    CHECK(near(r.value, std::log(1.0 + std::exp(-1.0)), 1e-12));
    CHECK(near(r.value, 0.3133, 1e-4));

    cfg.margin_mode = MarginMode::None;
    LossResult plain = proto_loss(axis_batch(), axis_protos(), identity_assignment(2),
                                  uniform_prior(2), cfg);
    CHECK(near(plain.value, std::log(1.0 + std::exp(-1.0)), 1e-12));
}

TEST_CASE("proto_loss hand value with a skewed prior") {
    LossConfig cfg;
    cfg.temperature = 1.0;
    cfg.margin_mode = MarginMode::Dynamic;
    ClassPrior prior({{0, 80}, {1, 20}});
    LossResult r = proto_loss(axis_batch(), axis_protos(), identity_assignment(2), prior, cfg);
    const double expected = std::log(1.0 + 0.2 / (0.8 * std::exp(1.0)));
    CHECK(near(r.value, expected, 1e-12));
    CHECK(near(r.value, 0.0880, 1e-4));
}

TEST_CASE("proto_loss errors on unassigned labels and missing priors") {
    LossConfig cfg;
    FeatureBatch b = axis_batch();
    b.labels = {9};
    CHECK_THROWS_AS(proto_loss(b, axis_protos(), identity_assignment(2), uniform_prior(2), cfg),
                    UnassignedClass);

    cfg.margin_mode = MarginMode::Dynamic;
    ClassPrior partial({{0, 10}});
    CHECK_THROWS_AS(
        proto_loss(axis_batch(), axis_protos(), identity_assignment(2), partial, cfg),
        MissingPrior);
}

TEST_CASE("feat_loss degenerate batches") {
    LossConfig cfg;
    cfg.temperature = 1.0;

    FeatureBatch distinct;
    distinct.feats = Matrix(3, 2);
    distinct.feats(0, 0) = 1.0;
    distinct.feats(1, 1) = 1.0;
    distinct.feats(2, 0) = -1.0;
    distinct.labels = {0, 1, 2};
    LossResult r = feat_loss(distinct, cfg);
    CHECK(r.value == 0.0);
    for (double g : r.grad_feats.data) CHECK(g == 0.0);

    FeatureBatch twins;
    twins.feats = Matrix(2, 2);
    twins.feats(0, 0) = 1.0;
    twins.feats(1, 0) = 1.0;
    twins.labels = {4, 4};
    CHECK(near(feat_loss(twins, cfg).value, 0.0, 1e-15));
}

TEST_CASE("feat_loss hand value for two positives and one negative") {
    LossConfig cfg;
    cfg.temperature = 1.0;
    FeatureBatch b;
    b.feats = Matrix(3, 2);
    b.feats(0, 0) = 1.0;
    b.feats(1, 0) = 1.0;
    b.feats(2, 1) = 1.0;
    b.labels = {0, 0, 1};
    LossResult r = feat_loss(b, cfg);
    CHECK(near(r.value, std::log(1.0 + std::exp(-1.0)), 1e-12));
    CHECK(near(r.value, 0.3133, 1e-4));
}

TEST_CASE("upcl_loss decomposes exactly") {
    Rng rng(9);
    FeatureBatch b = random_batch(rng, 10, 8, 4);
    PrototypeSet protos = muller_random(4, 8, rng);
    Assignment assign = identity_assignment(4);
    ClassPrior prior = uniform_prior(4);

    for (int t : {0, 1, 3}) {
        LossConfig cfg;
        cfg.task_index = t;
        const double w = cfg.feat_weight();
        if (t == 0) CHECK(w == 1.0);
        if (t == 3) CHECK(w == 0.125);

        LossResult whole = upcl_loss(b, protos, assign, prior, cfg);
        LossResult proto = proto_loss(b, protos, assign, prior, cfg);
        LossResult feat = feat_loss(b, cfg);
        CHECK(near(whole.value, proto.value + w * feat.value, 1e-12));
        for (std::size_t idx = 0; idx < whole.grad_feats.data.size(); ++idx)
            CHECK(near(whole.grad_feats.data[idx],
                       proto.grad_feats.data[idx] + w * feat.grad_feats.data[idx], 1e-12));
    }
}

TEST_CASE("fkd_loss worked values") {
    FeatureBatch s, t;
    s.feats = Matrix(2, 2);
    s.feats(0, 0) = 1.0;
    s.feats(1, 1) = 1.0;
    s.labels = {0, 1};
    t = s;
    CHECK(fkd_loss(s, t).value == 0.0);

    FeatureBatch ortho;
    ortho.feats = Matrix(2, 2);
    ortho.feats(0, 1) = 1.0;
    ortho.feats(1, 0) = 1.0;
    ortho.labels = {0, 1};
    CHECK(near(fkd_loss(s, ortho).value, 1.0, 1e-15));

    FeatureBatch anti;
    anti.feats = Matrix(2, 2);
    anti.feats(0, 0) = -1.0;
    anti.feats(1, 1) = -1.0;
    anti.labels = {0, 1};
    CHECK(near(fkd_loss(s, anti).value, 2.0, 1e-15));

    FeatureBatch bad;
    bad.feats = Matrix(1, 2);
    bad.labels = {0};
    CHECK_THROWS_AS(fkd_loss(s, bad), DimensionMismatch);
}

TEST_CASE("total_loss mixes distillation by class ratio") {
    Rng rng(13);
    FeatureBatch b = random_batch(rng, 6, 8, 4);
    PrototypeSet protos = muller_random(4, 8, rng);
    Assignment assign = identity_assignment(4);
    ClassPrior prior = uniform_prior(4);

    LossConfig cfg;
    cfg.task_index = 0;
    LossResult at0 = total_loss(b, protos, assign, prior, cfg, std::nullopt);
    LossResult up = upcl_loss(b, protos, assign, prior, cfg);
    CHECK(at0.value == up.value);

    cfg.task_index = 1;
    cfg.old_class_count = 50;
    cfg.total_class_count = 60;
    CHECK(near(cfg.lambda2(), 5.0 / 6.0, 1e-15));
    CHECK_THROWS_AS(total_loss(b, protos, assign, prior, cfg, std::nullopt), MissingTeacher);

    // teacher equal to student: distillation term vanishes
    std::optional<FeatureBatch> teacher = b;
    LossResult mixed = total_loss(b, protos, assign, prior, cfg, teacher);
    LossResult up1 = upcl_loss(b, protos, assign, prior, cfg);
    CHECK(near(mixed.value, up1.value / 6.0, 1e-12));

    LossResult fkd = fkd_loss(b, *teacher);
    CHECK(near(mixed.value, (1.0 - cfg.lambda2()) * up1.value + cfg.lambda2() * fkd.value, 1e-12));
}

TEST_CASE("cosine head with frozen prototype weights reproduces proto_loss") {
    Rng rng(21);
    FeatureBatch b = random_batch(rng, 12, 6, 3);
    PrototypeSet protos = muller_random(3, 6, rng);
    Assignment assign = identity_assignment(3);
    ClassPrior prior = uniform_prior(3);

    for (MarginMode mode : {MarginMode::None, MarginMode::Fixed, MarginMode::Dynamic}) {
        LossConfig cfg;
        cfg.margin_mode = mode;
        CosineLossResult cos = cosine_ce_loss(b, protos.rows, assign, prior, cfg);
        LossResult proto = proto_loss(b, protos, assign, prior, cfg);
        CHECK(near(cos.value, proto.value, 1e-12));
        for (std::size_t idx = 0; idx < proto.grad_feats.data.size(); ++idx)
            CHECK(near(cos.grad_feats.data[idx], proto.grad_feats.data[idx], 1e-12));
    }
}

TEST_CASE("uniform prior makes the dynamic margin a no-op") {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        FeatureBatch b = random_batch(rng, 9, 5, 4);
        PrototypeSet protos = muller_random(4, 5, rng);
        Assignment assign = identity_assignment(4);
        ClassPrior prior = uniform_prior(4, 25);

        LossConfig none, dyn;
        none.margin_mode = MarginMode::None;
        dyn.margin_mode = MarginMode::Dynamic;
        LossResult a = proto_loss(b, protos, assign, prior, none);
        LossResult c = proto_loss(b, protos, assign, prior, dyn);
        CHECK(near(a.value, c.value, 1e-10));

        CosineLossResult ca = cosine_ce_loss(b, protos.rows, assign, prior, none);
        CosineLossResult cc = cosine_ce_loss(b, protos.rows, assign, prior, dyn);
        CHECK(near(ca.value, cc.value, 1e-12));
    }
}

TEST_CASE("shrinking a class prior lowers exactly that logit") {
    Rng rng(55);
    FeatureBatch b = random_batch(rng, 8, 6, 3);
    PrototypeSet protos = muller_random(3, 6, rng);
    Assignment assign = identity_assignment(3);

    ClassPrior balanced({{0, 40}, {1, 40}, {2, 40}});
    ClassPrior skewed({{0, 8}, {1, 56}, {2, 56}});

    LossConfig cfg;
    cfg.margin_mode = MarginMode::Dynamic;
    for (std::size_t i = 0; i < b.size(); ++i) {
        auto before = proto_logits(b.feats.row(i), protos, assign, balanced, cfg, b.labels[i]);
        auto after = proto_logits(b.feats.row(i), protos, assign, skewed, cfg, b.labels[i]);
        REQUIRE(before.size() == after.size());
        for (std::size_t k = 0; k < before.size(); ++k) {
            REQUIRE(before[k].first == after[k].first);
            if (before[k].first == 0)
                CHECK(after[k].second < before[k].second);
            else
                CHECK(after[k].second > before[k].second);
        }
    }
}

TEST_CASE("loss values are invariant to batch row permutations") {
    Rng rng(66);
    FeatureBatch b = random_batch(rng, 11, 7, 3);
    PrototypeSet protos = muller_random(3, 7, rng);
    Assignment assign = identity_assignment(3);
    ClassPrior prior({{0, 30}, {1, 10}, {2, 25}});

    std::vector<std::size_t> order(b.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    FeatureBatch shuffled;
    shuffled.feats = Matrix(b.size(), b.dim());
    for (std::size_t i = 0; i < b.size(); ++i) {
        for (std::size_t c = 0; c < b.dim(); ++c) shuffled.feats(i, c) = b.feats(order[i], c);
        shuffled.labels.push_back(b.labels[order[i]]);
    }

    LossConfig cfg;
    cfg.margin_mode = MarginMode::Dynamic;
    cfg.task_index = 1;
    cfg.old_class_count = 2;
    cfg.total_class_count = 3;

    CHECK(near(proto_loss(b, protos, assign, prior, cfg).value,
               proto_loss(shuffled, protos, assign, prior, cfg).value, 1e-12));
    CHECK(near(feat_loss(b, cfg).value, feat_loss(shuffled, cfg).value, 1e-12));

    FeatureBatch teacher = random_batch(rng, 11, 7, 3);
    teacher.labels = b.labels;
    FeatureBatch teacher_shuffled;
    teacher_shuffled.feats = Matrix(b.size(), b.dim());
    for (std::size_t i = 0; i < b.size(); ++i) {
        for (std::size_t c = 0; c < b.dim(); ++c)
            teacher_shuffled.feats(i, c) = teacher.feats(order[i], c);
        teacher_shuffled.labels.push_back(teacher.labels[order[i]]);
    }
    CHECK(near(fkd_loss(b, teacher).value, fkd_loss(shuffled, teacher_shuffled).value, 1e-12));
    CHECK(near(total_loss(b, protos, assign, prior, cfg, teacher).value,
               total_loss(shuffled, protos, assign, prior, cfg, teacher_shuffled).value, 1e-12));
}

TEST_CASE("all loss values are non-negative on random instances") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        FeatureBatch b = random_batch(rng, 2 + rng.uniform_int(10), 6, 3);
        PrototypeSet protos = muller_random(3, 6, rng);
        Assignment assign = identity_assignment(3);
        ClassPrior prior({{0, 1 + static_cast<long>(rng.uniform_int(40))},
                          {1, 1 + static_cast<long>(rng.uniform_int(40))},
                          {2, 1 + static_cast<long>(rng.uniform_int(40))}});
        LossConfig cfg;
        cfg.margin_mode =
            trial % 3 == 0 ? MarginMode::None : (trial % 3 == 1 ? MarginMode::Fixed : MarginMode::Dynamic);
        CHECK(proto_loss(b, protos, assign, prior, cfg).value >= 0.0);
        CHECK(feat_loss(b, cfg).value >= 0.0);
        FeatureBatch teacher = random_batch(rng, b.size(), 6, 3);
        CHECK(fkd_loss(b, teacher).value >= 0.0);
    }
}

TEST_CASE("analytic gradients match central differences") {
    Rng rng(101);
    int proto_checked = 0, feat_checked = 0, fkd_checked = 0, cos_checked = 0;

    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t n = 8;
        const std::size_t d = 16;
        const int C = 4;
        FeatureBatch b = random_batch(rng, n, d, C);
        PrototypeSet protos = muller_random(static_cast<std::size_t>(C), d, rng);
        Assignment assign = identity_assignment(C);
        ClassPrior prior({{0, 5}, {1, 17}, {2, 9}, {3, 31}});

        LossConfig cfg;
        cfg.temperature = trial % 2 == 0 ? 0.1 : 0.5;
        cfg.margin_mode =
            trial % 3 == 0 ? MarginMode::None : (trial % 3 == 1 ? MarginMode::Fixed : MarginMode::Dynamic);

        {
            LossResult r = proto_loss(b, protos, assign, prior, cfg);
            auto value = [&](const Matrix& feats) {
                FeatureBatch probe = b;
                probe.feats = feats;
                return proto_loss(probe, protos, assign, prior, cfg).value;
            };
            CHECK(grad_check(value, b.feats, r.grad_feats) < 1e-4);
            ++proto_checked;
        }
        {
            LossResult r = feat_loss(b, cfg);
            auto value = [&](const Matrix& feats) {
                FeatureBatch probe = b;
                probe.feats = feats;
                return feat_loss(probe, cfg).value;
            };
            CHECK(grad_check(value, b.feats, r.grad_feats) < 1e-4);
            ++feat_checked;
        }
        {
            FeatureBatch teacher = random_batch(rng, n, d, C);
            LossResult r = fkd_loss(b, teacher);
            auto value = [&](const Matrix& feats) {
                FeatureBatch probe = b;
                probe.feats = feats;
                return fkd_loss(probe, teacher).value;
            };
            CHECK(grad_check(value, b.feats, r.grad_feats) < 1e-4);
            ++fkd_checked;
        }
        {
            CosineLossResult r = cosine_ce_loss(b, protos.rows, assign, prior, cfg);
            auto value_feats = [&](const Matrix& feats) {
                FeatureBatch probe = b;
                probe.feats = feats;
                return cosine_ce_loss(probe, protos.rows, assign, prior, cfg).value;
            };
            CHECK(grad_check(value_feats, b.feats, r.grad_feats) < 1e-4);
            auto value_weights = [&](const Matrix& w) {
                return cosine_ce_loss(b, w, assign, prior, cfg).value;
            };
            CHECK(grad_check(value_weights, protos.rows, r.grad_weights) < 1e-4);
            ++cos_checked;
        }
    }
    CHECK(proto_checked == 12);
    CHECK(feat_checked == 12);
    CHECK(fkd_checked == 12);
    CHECK(cos_checked == 12);
}
