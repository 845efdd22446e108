#include "upcl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "upcl/errors.hpp"

namespace upcl {

std::string variant_name(const VariantSpec& v) {
    const std::string head = v.head == HeadKind::UniformPrototype ? "up" : "cos";
    return head + "_" + margin_mode_name(v.margin);
}

std::vector<VariantSpec> ablation_grid() {
    std::vector<VariantSpec> grid;
    for (const HeadKind h : {HeadKind::UniformPrototype, HeadKind::CosineClassifier})
        for (const MarginMode m : {MarginMode::None, MarginMode::Fixed, MarginMode::Dynamic})
            grid.push_back(VariantSpec{h, m});
    return grid;
}

MetricsRecord compute_metrics(const std::vector<double>& task_acc,
                              const std::vector<double>& ir_series, const Matrix& confusion) {
    if (task_acc.empty()) throw EmptyInput("metrics need at least one task accuracy");

    MetricsRecord m;
    m.task_acc = task_acc;
    m.a_last = task_acc.back();
    double sum = 0.0;
    for (const double a : task_acc) sum += a;
    m.a_avg = sum / static_cast<double>(task_acc.size());
    m.ir = ir_series;
    m.confusion = confusion;

    m.per_class_acc.assign(confusion.rows, 0.0);
    for (std::size_t r = 0; r < confusion.rows; ++r) {
        double row_sum = 0.0;
        for (std::size_t c = 0; c < confusion.cols; ++c) row_sum += confusion(r, c);
        if (row_sum > 0.0) m.per_class_acc[r] = confusion(r, r) / row_sum;
    }
    return m;
}

EvalResult evaluate(const EncoderState& encoder, const Matrix& head_rows,
                    const Assignment& assignment, const LabeledDataset& test_data) {
    if (assignment.empty()) throw UnassignedClass("nothing assigned to evaluate against");
    if (test_data.size() == 0) throw EmptyInput("evaluation set is empty");

    const Matrix feats = encode(encoder, test_data.inputs);
    EvalResult r;
    const std::size_t C = static_cast<std::size_t>(test_data.class_count);
    r.confusion = Matrix(C, C);

    std::size_t hits = 0;
    for (std::size_t i = 0; i < test_data.size(); ++i) {
        const int truth = test_data.labels[i];
        if (assignment.count(truth) == 0)
            throw UnassignedClass("test label " + std::to_string(truth) + " was never assigned");

        int best_class = -1;
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& [class_id, row] : assignment) {
            const double score = dot(feats.row(i), head_rows.row(row), feats.cols);
            if (score > best) {
                best = score;
                best_class = class_id;
            }
        }
        if (best_class == truth) ++hits;
        r.confusion(static_cast<std::size_t>(truth), static_cast<std::size_t>(best_class)) += 1.0;
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(test_data.size());
    return r;
}

RunContext make_run_context(const RunConfig& cfg, const VariantSpec& variant) {
    validate(cfg);

    RunContext ctx;
    ctx.cfg = cfg;
    ctx.variant = variant;

    if (cfg.dataset_kind == "blobs") {
        Rng data_rng(derive_seed(cfg.run_seed, "data"));
        BlobPair blobs = gen_blobs(cfg.blobs.class_count, cfg.blobs.input_dim, cfg.blobs.n_train,
                                   cfg.blobs.n_test, cfg.blobs.sigma, data_rng);
        ctx.train = std::move(blobs.train);
        ctx.test = std::move(blobs.test);
    } else {
        ctx.train = read_idx(cfg.idx.train_images, cfg.idx.train_labels);
        ctx.test = read_idx(cfg.idx.test_images, cfg.idx.test_labels);
    }

    Rng schedule_rng(cfg.class_order_seed);
    ctx.schedule = make_schedule(ctx.train.class_count, cfg.task_count, schedule_rng);

    Rng encoder_rng(derive_seed(cfg.run_seed, "encoder-init"));
    ctx.encoder = EncoderState::init(cfg.layer_sizes, encoder_rng);

    const std::size_t d = cfg.layer_sizes.back();
    ctx.protos = PrototypeSet(d, cfg.generator);
    ctx.cos_weights = Matrix(0, d);
    ctx.cos_velocity = Matrix(0, d);
    ctx.centers = ClassCenters(d, cfg.ema_factor);
    ctx.memory.strategy = cfg.memory_strategy;
    ctx.memory.capacity = cfg.memory_capacity;

    ctx.proto_rng = Rng(derive_seed(cfg.run_seed, "prototypes"));
    ctx.cos_rng = Rng(derive_seed(cfg.run_seed, "cos-weights"));
    ctx.batch_rng = Rng(derive_seed(cfg.run_seed, "batch-order"));

    ctx.final_confusion = Matrix(static_cast<std::size_t>(ctx.train.class_count),
                                 static_cast<std::size_t>(ctx.train.class_count));
    return ctx;
}

namespace {

Matrix append_rows(const Matrix& base, const Matrix& extra) {
    Matrix out(base.rows + extra.rows, extra.cols);
    std::copy(base.data.begin(), base.data.end(), out.data.begin());
    std::copy(extra.data.begin(), extra.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(base.data.size()));
    return out;
}

void grow_head(RunContext& ctx, const std::vector<int>& new_classes) {
    const std::size_t d = ctx.cfg.layer_sizes.back();
    const std::size_t k = new_classes.size();

    if (ctx.variant.head == HeadKind::UniformPrototype) {
        switch (ctx.cfg.generator) {
            case Generator::GramSchmidt:
                ctx.protos = gram_schmidt_extend(ctx.protos, k, ctx.proto_rng);
                break;
            case Generator::SimplexEtf:
                // the full simplex is laid down once, since adding vertices
                // later would move existing rows
                if (ctx.protos.count() == 0)
                    ctx.protos = simplex_etf(static_cast<std::size_t>(ctx.train.class_count), d,
                                             ctx.proto_rng);
                break;
            case Generator::Muller:
                ctx.protos = muller_extend(ctx.protos, k, ctx.proto_rng);
                break;
            case Generator::Mhe:
                ctx.protos = mhe_extend(ctx.protos, k, ctx.cfg.mhe_iters, ctx.cfg.mhe_step,
                                        ctx.proto_rng)
                                 .protos;
                break;
        }
        return;
    }

    // cosine head: fresh learnable unit rows, one per class in id order
    const PrototypeSet fresh = muller_random(k, d, ctx.cos_rng);
    ctx.cos_weights = append_rows(ctx.cos_weights, fresh.rows);
    ctx.cos_velocity = append_rows(ctx.cos_velocity, Matrix(k, d));
    std::size_t row = ctx.cos_weights.rows - k;
    for (const int class_id : new_classes) ctx.assignment[class_id] = row++;
}

FeatureBatch slice_batch(const LabeledDataset& data, const std::vector<std::size_t>& order,
                         std::size_t begin, std::size_t end, Matrix& inputs_out) {
    const std::size_t n = end - begin;
    inputs_out = Matrix(n, data.input_dim());
    FeatureBatch batch;
    batch.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = order[begin + i];
        for (std::size_t c = 0; c < data.input_dim(); ++c)
            inputs_out(i, c) = data.inputs(src, c);
        batch.labels.push_back(data.labels[src]);
    }
    return batch;
}

} // namespace

TaskLog run_task(RunContext& ctx, std::size_t t) {
    const std::vector<int>& group = ctx.schedule.groups.at(t);
    std::vector<int> new_classes = group;
    std::sort(new_classes.begin(), new_classes.end());

    TaskLog log;
    log.task = t;

    TaskTrainSet ts = task_train_set(ctx.train, ctx.schedule, t, ctx.memory);
    const ClassPrior prior(ts.counts);
    log.imbalance = imbalance_ratio(ts.counts);
    log.train_counts = ts.counts;

    LossConfig loss_cfg;
    loss_cfg.temperature = ctx.cfg.tau;
    loss_cfg.margin_mode = ctx.variant.margin;
    loss_cfg.fixed_margin = ctx.cfg.fixed_margin;
    loss_cfg.feat_weight_base = ctx.cfg.feat_weight_base;
    loss_cfg.task_index = static_cast<int>(t);
    loss_cfg.old_class_count = static_cast<long>(ctx.seen_classes.size());
    loss_cfg.total_class_count = static_cast<long>(ctx.seen_classes.size() + new_classes.size());

    grow_head(ctx, new_classes);

    const Assignment base_assignment = ctx.variant.head == HeadKind::UniformPrototype
                                           ? ctx.assignment
                                           : Assignment{};
    std::vector<Assignment> assignment_history;
    bool assignment_frozen = ctx.variant.head != HeadKind::UniformPrototype;

    if (!assignment_frozen) {
        // pre-training pass so the first batch already has every new class
        // assigned to a prototype
        FeatureBatch all;
        all.feats = encode(ctx.encoder, ts.data.inputs);
        all.labels = ts.data.labels;
        update_centers(ctx.centers, all);
        ctx.assignment = assign_new_classes(ctx.centers, ctx.protos, base_assignment, new_classes);
        assignment_history.push_back(ctx.assignment);
        log.assignment_events.push_back({t, -1, ctx.assignment});
    }

    OptimizerState opt = OptimizerState::for_encoder(ctx.encoder);
    opt.learning_rate = ctx.cfg.learning_rate;
    opt.momentum = ctx.cfg.momentum;
    opt.weight_decay = ctx.cfg.weight_decay;
    opt.milestones = ctx.cfg.milestones;
    opt.decay_gamma = ctx.cfg.decay_gamma;

    const int epochs = t == 0 ? ctx.cfg.epochs_base : ctx.cfg.epochs_increment;
    const std::size_t n = ts.data.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    bool first_batch = true;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        ctx.batch_rng.shuffle(order);
        for (std::size_t begin = 0; begin < n; begin += ctx.cfg.batch_size) {
            const std::size_t end = std::min(n, begin + ctx.cfg.batch_size);
            Matrix batch_inputs;
            FeatureBatch batch = slice_batch(ts.data, order, begin, end, batch_inputs);

            ForwardCache cache = forward(ctx.encoder, batch_inputs);
            batch.feats = cache.features();
            update_centers(ctx.centers, batch);

            std::optional<FeatureBatch> teacher_batch;
            if (t > 0) {
                FeatureBatch tb;
                tb.feats = encode(ctx.teacher->state, batch_inputs);
                tb.labels = batch.labels;
                teacher_batch = std::move(tb);
            }

            double value = 0.0;
            Matrix grad_feats;
            if (ctx.variant.head == HeadKind::UniformPrototype) {
                LossResult loss = total_loss(batch, ctx.protos, ctx.assignment, prior, loss_cfg,
                                             teacher_batch);
                value = loss.value;
                grad_feats = std::move(loss.grad_feats);
            } else {
                CosineLossResult cos =
                    cosine_ce_loss(batch, ctx.cos_weights, ctx.assignment, prior, loss_cfg);
                const double l2 = t == 0 ? 0.0 : loss_cfg.lambda2();
                if (t > 0) {
                    LossResult fkd = fkd_loss(batch, *teacher_batch);
                    value = (1.0 - l2) * cos.value + l2 * fkd.value;
                    grad_feats = Matrix(batch.size(), batch.dim());
                    for (std::size_t idx = 0; idx < grad_feats.data.size(); ++idx)
                        grad_feats.data[idx] = (1.0 - l2) * cos.grad_feats.data[idx] +
                                               l2 * fkd.grad_feats.data[idx];
                } else {
                    value = cos.value;
                    grad_feats = std::move(cos.grad_feats);
                }
                Matrix grad_w = std::move(cos.grad_weights);
                for (double& g : grad_w.data) g *= (1.0 - l2);
                sgd_update(ctx.cos_weights, ctx.cos_velocity, grad_w, opt.learning_rate,
                           opt.momentum, opt.weight_decay);
                normalize_rows(ctx.cos_weights);
            }

            if (first_batch) {
                log.initial_loss = value;
                first_batch = false;
            }

            EncoderGrads grads = backward(ctx.encoder, cache, grad_feats);
            sgd_step(ctx.encoder, opt, grads);
        }

        schedule_epoch(opt, epoch);
        if (!assignment_frozen) {
            ctx.assignment =
                assign_new_classes(ctx.centers, ctx.protos, base_assignment, new_classes);
            assignment_history.push_back(ctx.assignment);
            log.assignment_events.push_back({t, epoch, ctx.assignment});
            if (has_stabilized(assignment_history, 3)) assignment_frozen = true;
        }
    }

    update_memory(ctx.memory, filter_classes(ctx.train, group), ctx.encoder);
    ctx.teacher = snapshot_teacher(ctx.encoder);

    for (const int class_id : new_classes) ctx.seen_classes.push_back(class_id);
    std::sort(ctx.seen_classes.begin(), ctx.seen_classes.end());

    const LabeledDataset eval_set = filter_classes(ctx.test, ctx.seen_classes);
    const Matrix& head_rows =
        ctx.variant.head == HeadKind::UniformPrototype ? ctx.protos.rows : ctx.cos_weights;
    EvalResult eval = evaluate(ctx.encoder, head_rows, ctx.assignment, eval_set);
    log.accuracy = eval.accuracy;
    ctx.final_confusion = eval.confusion;

    log.head_rows_at_end = head_rows;
    for (const auto& [class_id, rows] : ctx.memory.store)
        log.memory_counts[class_id] = rows.size();

    ctx.logs.push_back(log);
    return log;
}

RunResult run_experiment(const RunConfig& cfg, const VariantSpec& variant) {
    RunContext ctx = make_run_context(cfg, variant);
    std::vector<double> accs, irs;
    for (std::size_t t = 0; t < ctx.schedule.task_count(); ++t) {
        const TaskLog log = run_task(ctx, t);
        accs.push_back(log.accuracy);
        irs.push_back(log.imbalance);
    }

    RunResult result;
    result.metrics = compute_metrics(accs, irs, ctx.final_confusion);
    result.task_logs = ctx.logs;
    result.schedule = ctx.schedule;
    return result;
}

std::vector<std::pair<VariantSpec, RunResult>> run_ablation(const RunConfig& cfg) {
    std::vector<std::pair<VariantSpec, RunResult>> table;
    for (const VariantSpec& variant : ablation_grid())
        table.emplace_back(variant, run_experiment(cfg, variant));
    return table;
}

} // namespace upcl
