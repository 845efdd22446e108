#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "upcl/assignment.hpp"
#include "upcl/config.hpp"
#include "upcl/dataflow.hpp"
#include "upcl/encoder.hpp"
#include "upcl/geometry.hpp"
#include "upcl/losses.hpp"
#include "upcl/memory.hpp"
#include "upcl/rng.hpp"

namespace upcl {

// one cell of the ablation grid
struct VariantSpec {
    HeadKind head = HeadKind::UniformPrototype;
    MarginMode margin = MarginMode::Dynamic;
};

std::string variant_name(const VariantSpec& v);
std::vector<VariantSpec> ablation_grid();

struct AssignmentEvent {
    std::size_t task = 0;
    int epoch = 0; // -1 marks the pre-training pass at task start
    Assignment map;
};

struct TaskLog {
    std::size_t task = 0;
    double accuracy = 0.0;
    double imbalance = 1.0;
    double initial_loss = 0.0; // combined loss of the first batch of epoch 0
    ClassCountTable train_counts;
    std::vector<AssignmentEvent> assignment_events;
    Matrix head_rows_at_end; // prototype or classifier rows after the task
    std::map<int, std::size_t> memory_counts;
};

struct MetricsRecord {
    std::vector<double> task_acc;
    double a_last = 0.0;
    double a_avg = 0.0;
    std::vector<double> ir;
    Matrix confusion;                  // final task, class_count x class_count
    std::vector<double> per_class_acc; // diagonal over row sums
};

MetricsRecord compute_metrics(const std::vector<double>& task_acc,
                              const std::vector<double>& ir_series, const Matrix& confusion);

struct EvalResult {
    double accuracy = 0.0;
    Matrix confusion;
};

// Top-1 accuracy of argmax cosine score over assigned classes; ties go to
// the smallest class id. `head_rows` holds prototypes or classifier
// weights, `test_data` only samples of seen classes.
EvalResult evaluate(const EncoderState& encoder, const Matrix& head_rows,
                    const Assignment& assignment, const LabeledDataset& test_data);

// Everything one incremental run mutates, advanced one task at a time.
struct RunContext {
    RunConfig cfg;
    VariantSpec variant;
    LabeledDataset train;
    LabeledDataset test;
    TaskSchedule schedule;

    EncoderState encoder;
    PrototypeSet protos;
    Matrix cos_weights;
    Matrix cos_velocity;
    Assignment assignment;
    ClassCenters centers;
    MemoryBuffer memory;
    std::optional<TeacherSnapshot> teacher;

    Rng proto_rng{0};
    Rng cos_rng{0};
    Rng batch_rng{0};

    std::vector<int> seen_classes;
    std::vector<TaskLog> logs;
    Matrix final_confusion;
};

RunContext make_run_context(const RunConfig& cfg, const VariantSpec& variant);

// One full task: train-set assembly, prior, head growth, epoch training
// with center tracking and assignment stabilization, memory update,
// teacher snapshot, evaluation over all seen classes.
TaskLog run_task(RunContext& ctx, std::size_t t);

struct RunResult {
    MetricsRecord metrics;
    std::vector<TaskLog> task_logs;
    TaskSchedule schedule;
};

RunResult run_experiment(const RunConfig& cfg, const VariantSpec& variant);

// All six head x margin cells under identical data and schedule seeds.
std::vector<std::pair<VariantSpec, RunResult>> run_ablation(const RunConfig& cfg);

} // namespace upcl
