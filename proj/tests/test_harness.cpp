#include <cmath>
#include <cstdlib>
#include <set>
#include <vector>

#include "doctest.h"
#include "upcl/errors.hpp"
#include "upcl/harness.hpp"

using namespace upcl;

namespace {

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

EncoderState identity_encoder(std::size_t d) {
    Rng rng(7);
    EncoderState state = EncoderState::init({d, d}, rng);
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) state.weights[0](r, c) = r == c ? 1.0 : 0.0;
    return state;
}

// well-separated four-class blobs, two tasks, a few epochs
RunConfig micro_config() {
    RunConfig cfg;
    cfg.blobs.class_count = 4;
    cfg.blobs.input_dim = 8;
    cfg.blobs.n_train = 20;
    cfg.blobs.n_test = 10;
    cfg.blobs.sigma = 0.05;
    cfg.task_count = 2;
    cfg.layer_sizes = {8, 16, 8};
    cfg.epochs_base = 6;
    cfg.epochs_increment = 4;
    cfg.batch_size = 32;
    cfg.memory_capacity = 20;
    return cfg;
}

bool injective(const Assignment& a) {
    std::set<std::size_t> used;
    for (const auto& [class_id, row] : a)
        if (!used.insert(row).second) return false;
    return true;
}

bool rows_bit_equal(const Matrix& a, const Matrix& b, std::size_t row_count) {
    if (a.cols != b.cols || a.rows < row_count || b.rows < row_count) return false;
    for (std::size_t i = 0; i < row_count * a.cols; ++i)
        if (a.data[i] != b.data[i]) return false;
    return true;
}

} // namespace

TEST_CASE("variant names and grid order") {
    CHECK(variant_name({HeadKind::UniformPrototype, MarginMode::Dynamic}) == "up_dynamic");
    CHECK(variant_name({HeadKind::CosineClassifier, MarginMode::None}) == "cos_none");

    const std::vector<VariantSpec> grid = ablation_grid();
    REQUIRE(grid.size() == 6);
    const char* expected[] = {"up_none",  "up_fixed",  "up_dynamic",
                              "cos_none", "cos_fixed", "cos_dynamic"};
    std::set<std::string> seen;
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(variant_name(grid[i]) == expected[i]);
        seen.insert(variant_name(grid[i]));
    }
    CHECK(seen.size() == 6);
}

TEST_CASE("metric aggregation worked examples") {
    Matrix confusion(2, 2);
    confusion(0, 0) = 3.0;
    confusion(0, 1) = 1.0;
    confusion(1, 1) = 6.0;

    SUBCASE("two-task averages") {
        const MetricsRecord m = compute_metrics({0.9, 0.7}, {1.0, 2.5}, confusion);
        CHECK(near(m.a_avg, 0.8, 1e-15));
        CHECK(m.a_last == 0.7);
        CHECK(m.ir == std::vector<double>{1.0, 2.5});
        REQUIRE(m.per_class_acc.size() == 2);
        CHECK(near(m.per_class_acc[0], 0.75, 1e-15));
        CHECK(near(m.per_class_acc[1], 1.0, 1e-15));
    }
    SUBCASE("single task collapses the average") {
        const MetricsRecord m = compute_metrics({0.42}, {1.0}, confusion);
        CHECK(m.a_last == m.a_avg);
        CHECK(m.a_last == 0.42);
    }
    SUBCASE("average identity on arbitrary series") {
        Rng rng(11);
        std::vector<double> accs;
        double sum = 0.0;
        for (int i = 0; i < 7; ++i) {
            accs.push_back(rng.uniform());
            sum += accs.back();
        }
        const MetricsRecord m = compute_metrics(accs, std::vector<double>(7, 1.0), confusion);
        CHECK(near(m.a_avg, sum / 7.0, 1e-12));
    }
    SUBCASE("empty row of the confusion gives zero class accuracy") {
        Matrix c3(3, 3);
        c3(0, 0) = 2.0;
        c3(2, 1) = 4.0;
        const MetricsRecord m = compute_metrics({1.0}, {1.0}, c3);
        CHECK(m.per_class_acc == std::vector<double>{1.0, 0.0, 0.0});
    }
    SUBCASE("no tasks is an error") {
        CHECK_THROWS_AS(compute_metrics({}, {}, confusion), EmptyInput);
    }
}

TEST_CASE("evaluation at the prototypes is perfect") {
    const std::size_t d = 4;
    Rng rng(3);
    const PrototypeSet protos =
        gram_schmidt_extend(PrototypeSet(d, Generator::GramSchmidt), 3, rng);

    LabeledDataset test;
    test.class_count = 3;
    test.inputs = protos.rows;
    test.labels = {0, 1, 2};

    Assignment assignment{{0, 0}, {1, 1}, {2, 2}};
    const EvalResult r = evaluate(identity_encoder(d), protos.rows, assignment, test);
    CHECK(r.accuracy == 1.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(r.confusion(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("evaluation follows the class-to-row assignment") {
    const std::size_t d = 4;
    Matrix rows(3, d);
    rows(0, 0) = 1.0;
    rows(1, 1) = 1.0;
    rows(2, 2) = 1.0;

    // class 0 lives on row 2; a feature at row 2 must come back as class 0
    Assignment assignment{{0, 2}, {1, 0}, {2, 1}};
    LabeledDataset test;
    test.class_count = 3;
    test.inputs = Matrix(1, d);
    test.inputs(0, 2) = 1.0;
    test.labels = {0};

    const EvalResult r = evaluate(identity_encoder(d), rows, assignment, test);
    CHECK(r.accuracy == 1.0);
    CHECK(r.confusion(0, 0) == 1.0);
}

TEST_CASE("score ties resolve to the smaller class id") {
    const std::size_t d = 4;
    Matrix rows(2, d);
    rows(0, 0) = 1.0;
    rows(1, 1) = 1.0;

    LabeledDataset test;
    test.class_count = 2;
    test.inputs = Matrix(1, d);
    test.inputs(0, 0) = 1.0;
    test.inputs(0, 1) = 1.0; // equidistant from both rows after normalization
    test.labels = {1};

    Assignment assignment{{0, 0}, {1, 1}};
    const EvalResult r = evaluate(identity_encoder(d), rows, assignment, test);
    CHECK(r.accuracy == 0.0);
    CHECK(r.confusion(1, 0) == 1.0);
}

TEST_CASE("evaluation rejects unassigned labels") {
    const std::size_t d = 4;
    Matrix rows(1, d);
    rows(0, 0) = 1.0;
    LabeledDataset test;
    test.class_count = 2;
    test.inputs = Matrix(1, d);
    test.inputs(0, 0) = 1.0;
    test.labels = {1};

    CHECK_THROWS_AS(evaluate(identity_encoder(d), rows, Assignment{{0, 0}}, test),
                    UnassignedClass);
    CHECK_THROWS_AS(evaluate(identity_encoder(d), rows, Assignment{}, test), UnassignedClass);
}

TEST_CASE("random encoders score at chance level") {
    const std::size_t C = 16, d = 16;
    double total = 0.0;
    const int seeds = 40;
    for (int s = 1; s <= seeds; ++s) {
        Rng data_rng(static_cast<std::uint64_t>(s));
        const BlobPair blobs = gen_blobs(static_cast<int>(C), d, 2, 10, 0.3, data_rng);

        Rng enc_rng(static_cast<std::uint64_t>(1000 + s));
        const EncoderState enc = EncoderState::init({d, d, d}, enc_rng);

        Rng proto_rng(static_cast<std::uint64_t>(2000 + s));
        const PrototypeSet protos =
            gram_schmidt_extend(PrototypeSet(d, Generator::GramSchmidt), C, proto_rng);

        Assignment assignment;
        for (std::size_t k = 0; k < C; ++k) assignment[static_cast<int>(k)] = k;
        total += evaluate(enc, protos.rows, assignment, blobs.test).accuracy;
    }
    const double mean = total / seeds;
    CHECK(near(mean, 1.0 / static_cast<double>(C), 0.04));
}

TEST_CASE("single-task run is plain supervised training") {
    RunConfig cfg = micro_config();
    cfg.task_count = 1;
    cfg.epochs_base = 12;
    cfg.milestones = {8};

    const RunResult r = run_experiment(cfg, {HeadKind::UniformPrototype, MarginMode::Dynamic});
    REQUIRE(r.metrics.task_acc.size() == 1);
    CHECK(r.metrics.a_last == r.metrics.a_avg);
    CHECK(r.metrics.a_last == r.metrics.task_acc[0]);
    CHECK(r.metrics.a_last >= 0.9);
    CHECK(r.metrics.ir[0] == 1.0);

    REQUIRE(r.task_logs.size() == 1);
    const TaskLog& log = r.task_logs[0];
    CHECK(log.head_rows_at_end.rows == 4);
    REQUIRE(!log.assignment_events.empty());
    CHECK(log.assignment_events.front().epoch == -1);
    for (const AssignmentEvent& ev : log.assignment_events) {
        CHECK(ev.task == 0);
        CHECK(injective(ev.map));
        CHECK(ev.map.size() == 4);
    }
}

TEST_CASE("prototype rows grow with the schedule and never move") {
    const RunConfig cfg = micro_config();
    const RunResult r = run_experiment(cfg, {HeadKind::UniformPrototype, MarginMode::Dynamic});
    REQUIRE(r.task_logs.size() == 2);

    CHECK(r.task_logs[0].head_rows_at_end.rows == 2);
    CHECK(r.task_logs[1].head_rows_at_end.rows == 4);
    CHECK(rows_bit_equal(r.task_logs[0].head_rows_at_end, r.task_logs[1].head_rows_at_end, 2));

    // assignments fixed at task 0 survive task 1 untouched
    const Assignment& final0 = r.task_logs[0].assignment_events.back().map;
    const Assignment& final1 = r.task_logs[1].assignment_events.back().map;
    CHECK(final1.size() == 4);
    for (const auto& [class_id, row] : final0) {
        REQUIRE(final1.count(class_id) == 1);
        CHECK(final1.at(class_id) == row);
    }
}

TEST_CASE("simplex head is laid down in full at task zero") {
    RunConfig cfg = micro_config();
    cfg.generator = Generator::SimplexEtf;
    const RunResult r = run_experiment(cfg, {HeadKind::UniformPrototype, MarginMode::Dynamic});
    CHECK(r.task_logs[0].head_rows_at_end.rows == 4);
    CHECK(r.task_logs[1].head_rows_at_end.rows == 4);
    CHECK(rows_bit_equal(r.task_logs[0].head_rows_at_end, r.task_logs[1].head_rows_at_end, 4));
}

TEST_CASE("identical config replays to identical metrics") {
    const RunConfig cfg = micro_config();
    const VariantSpec v{HeadKind::UniformPrototype, MarginMode::Dynamic};
    const RunResult a = run_experiment(cfg, v);
    const RunResult b = run_experiment(cfg, v);

    CHECK(a.metrics.task_acc == b.metrics.task_acc);
    CHECK(a.metrics.a_last == b.metrics.a_last);
    CHECK(a.metrics.a_avg == b.metrics.a_avg);
    CHECK(a.metrics.ir == b.metrics.ir);
    CHECK(a.metrics.confusion.data == b.metrics.confusion.data);
    REQUIRE(a.task_logs.size() == b.task_logs.size());
    for (std::size_t t = 0; t < a.task_logs.size(); ++t) {
        CHECK(a.task_logs[t].initial_loss == b.task_logs[t].initial_loss);
        CHECK(a.task_logs[t].head_rows_at_end.data == b.task_logs[t].head_rows_at_end.data);
    }
    CHECK(a.schedule.class_order == b.schedule.class_order);
}

TEST_CASE("uniform priors make margin modes agree on the first batch") {
    const RunConfig cfg = micro_config();

    SUBCASE("prototype head") {
        const RunResult none =
            run_experiment(cfg, {HeadKind::UniformPrototype, MarginMode::None});
        const RunResult dyn =
            run_experiment(cfg, {HeadKind::UniformPrototype, MarginMode::Dynamic});
        CHECK(near(none.task_logs[0].initial_loss, dyn.task_logs[0].initial_loss, 1e-9));
    }
    SUBCASE("cosine head") {
        const RunResult none =
            run_experiment(cfg, {HeadKind::CosineClassifier, MarginMode::None});
        const RunResult dyn =
            run_experiment(cfg, {HeadKind::CosineClassifier, MarginMode::Dynamic});
        CHECK(near(none.task_logs[0].initial_loss, dyn.task_logs[0].initial_loss, 1e-9));
    }
}

TEST_CASE("memory quotas shrink as classes accumulate") {
    const RunConfig cfg = micro_config();
    const RunResult r = run_experiment(cfg, {HeadKind::UniformPrototype, MarginMode::Dynamic});

    REQUIRE(r.task_logs[0].memory_counts.size() == 2);
    for (const auto& [class_id, n] : r.task_logs[0].memory_counts) CHECK(n == 10);
    REQUIRE(r.task_logs[1].memory_counts.size() == 4);
    for (const auto& [class_id, n] : r.task_logs[1].memory_counts) CHECK(n == 5);
}

TEST_CASE("imbalance grows over a rehearsal run") {
    RunConfig cfg;
    cfg.blobs.class_count = 8;
    cfg.blobs.input_dim = 8;
    cfg.blobs.n_train = 30;
    cfg.blobs.n_test = 5;
    cfg.blobs.sigma = 0.1;
    cfg.task_count = 4;
    cfg.layer_sizes = {8, 16, 8};
    cfg.epochs_base = 2;
    cfg.epochs_increment = 2;
    cfg.batch_size = 32;
    cfg.memory_capacity = 16;

    const RunResult r = run_experiment(cfg, {HeadKind::UniformPrototype, MarginMode::Dynamic});
    REQUIRE(r.metrics.ir.size() == 4);
    CHECK(r.metrics.ir[0] == 1.0);
    CHECK(near(r.metrics.ir[1], 30.0 / 8.0, 1e-12));
    CHECK(near(r.metrics.ir[2], 30.0 / 4.0, 1e-12));
    CHECK(near(r.metrics.ir[3], 30.0 / 2.0, 1e-12));
    for (std::size_t t = 1; t < 4; ++t) CHECK(r.metrics.ir[t] >= r.metrics.ir[t - 1]);
}

TEST_CASE("cosine head trains and keeps unit rows") {
    const RunConfig cfg = micro_config();
    const RunResult r = run_experiment(cfg, {HeadKind::CosineClassifier, MarginMode::Dynamic});

    REQUIRE(r.task_logs.size() == 2);
    CHECK(r.task_logs[0].head_rows_at_end.rows == 2);
    CHECK(r.task_logs[1].head_rows_at_end.rows == 4);
    const Matrix& w = r.task_logs[1].head_rows_at_end;
    for (std::size_t i = 0; i < w.rows; ++i) {
        double sq = 0.0;
        for (std::size_t c = 0; c < w.cols; ++c) sq += w(i, c) * w(i, c);
        CHECK(near(std::sqrt(sq), 1.0, 1e-9));
    }
    CHECK(r.task_logs[0].assignment_events.empty());
    CHECK(r.metrics.a_last >= 0.5);
}

TEST_CASE("the ablation grid shares one schedule") {
    RunConfig cfg = micro_config();
    cfg.epochs_base = 3;
    cfg.epochs_increment = 2;

    const auto table = run_ablation(cfg);
    REQUIRE(table.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(variant_name(table[i].first) == variant_name(ablation_grid()[i]));
        CHECK(table[i].second.metrics.task_acc.size() == 2);
        CHECK(table[i].second.schedule.class_order == table[0].second.schedule.class_order);
    }

    // same head, same uniform task-0 prior: first-batch losses agree
    CHECK(near(table[0].second.task_logs[0].initial_loss,
               table[2].second.task_logs[0].initial_loss, 1e-9));
    CHECK(near(table[3].second.task_logs[0].initial_loss,
               table[5].second.task_logs[0].initial_loss, 1e-9));
}
