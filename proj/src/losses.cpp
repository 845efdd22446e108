#include "upcl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "upcl/errors.hpp"

namespace upcl {

ClassPrior::ClassPrior(const std::map<int, long>& class_counts) {
    long total = 0;
    for (const auto& [class_id, count] : class_counts) {
        if (count < 1)
            throw ZeroCount("class " + std::to_string(class_id) + " has count " +
                            std::to_string(count));
        total += count;
    }
    if (total == 0) throw EmptyInput("class prior needs at least one count");
    counts = class_counts;
    for (const auto& [class_id, count] : class_counts)
        freq[class_id] = static_cast<double>(count) / static_cast<double>(total);
}

const char* margin_mode_name(MarginMode m) {
    switch (m) {
        case MarginMode::None: return "none";
        case MarginMode::Fixed: return "fixed";
        case MarginMode::Dynamic: return "dynamic";
    }
    return "none";
}

MarginMode margin_mode_from_name(const std::string& name) {
    if (name == "none") return MarginMode::None;
    if (name == "fixed") return MarginMode::Fixed;
    if (name == "dynamic") return MarginMode::Dynamic;
    throw ConfigError("unknown margin mode '" + name + "'");
}

double LossConfig::feat_weight() const {
    return std::pow(feat_weight_base, static_cast<double>(task_index));
}

double LossConfig::lambda2() const {
    if (total_class_count <= 0 || old_class_count <= 0) return 0.0;
    return static_cast<double>(old_class_count) / static_cast<double>(total_class_count);
}

namespace {

double margin_offset(MarginMode mode, double fixed_margin, const ClassPrior& prior,
                     int class_of_logit, int true_class) {
    switch (mode) {
        case MarginMode::None:
            return 0.0;
        case MarginMode::Fixed:
            return class_of_logit == true_class ? -fixed_margin : 0.0;
        case MarginMode::Dynamic: {
            auto it = prior.freq.find(class_of_logit);
            if (it == prior.freq.end())
                throw MissingPrior("no prior frequency for class " +
                                   std::to_string(class_of_logit));
            return std::log(it->second);
        }
    }
    return 0.0;
}

// Shared core for proto_loss and cosine_ce_loss. `rows` maps assigned
// class ids to rows of `directions`. Fills grad_feats, and grad_weights
// when non-null.
double head_cross_entropy(const FeatureBatch& batch, const Matrix& directions,
                          const Assignment& assignment, const ClassPrior& prior,
                          const LossConfig& cfg, Matrix& grad_feats, Matrix* grad_weights) {
    const std::size_t n = batch.size();
    const std::size_t d = batch.dim();
    if (n == 0) throw EmptyInput("loss over an empty batch");
    if (directions.cols != d)
        throw DimensionMismatch("feature dim " + std::to_string(d) +
                                " does not match head dim " + std::to_string(directions.cols));
    if (assignment.empty()) throw UnassignedClass("no classes assigned");

    std::vector<int> class_ids;
    std::vector<std::size_t> class_rows;
    for (const auto& [class_id, row] : assignment) {
        class_ids.push_back(class_id);
        class_rows.push_back(row);
    }
    const std::size_t k = class_ids.size();

    grad_feats = Matrix(n, d);
    if (grad_weights) *grad_weights = Matrix(directions.rows, directions.cols);

    const double inv_tau = 1.0 / cfg.temperature;
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    std::vector<double> z(k), p(k);

    for (std::size_t i = 0; i < n; ++i) {
        const int label = batch.labels[i];
        const double* v = batch.feats.row(i);
        std::size_t target = k;
        for (std::size_t j = 0; j < k; ++j) {
            if (class_ids[j] == label) target = j;
            z[j] = (dot(v, directions.row(class_rows[j]), d) +
                    margin_offset(cfg.margin_mode, cfg.fixed_margin, prior, class_ids[j], label)) *
                   inv_tau;
        }
        if (target == k)
            throw UnassignedClass("batch label " + std::to_string(label) +
                                  " has no assigned prototype");

        const double zmax = *std::max_element(z.begin(), z.end());
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
        total += -(z[target] - zmax) + std::log(denom);

        for (std::size_t j = 0; j < k; ++j) {
            p[j] = std::exp(z[j] - zmax) / denom;
            const double coeff = (p[j] - (j == target ? 1.0 : 0.0)) * inv_tau * inv_n;
            const double* dir = directions.row(class_rows[j]);
            double* gf = grad_feats.row(i);
            for (std::size_t c = 0; c < d; ++c) gf[c] += coeff * dir[c];
            if (grad_weights) {
                double* gw = grad_weights->row(class_rows[j]);
                for (std::size_t c = 0; c < d; ++c) gw[c] += coeff * v[c];
            }
        }
    }
    return total * inv_n;
}

} // namespace

std::vector<std::pair<int, double>> proto_logits(const double* feat, const PrototypeSet& protos,
                                                 const Assignment& assignment,
                                                 const ClassPrior& prior, const LossConfig& cfg,
                                                 int label) {
    std::vector<std::pair<int, double>> out;
    for (const auto& [class_id, row] : assignment) {
        const double raw = dot(feat, protos.rows.row(row), protos.dim);
        const double offset =
            margin_offset(cfg.margin_mode, cfg.fixed_margin, prior, class_id, label);
        out.emplace_back(class_id, (raw + offset) / cfg.temperature);
    }
    return out;
}

LossResult proto_loss(const FeatureBatch& batch, const PrototypeSet& protos,
                      const Assignment& assignment, const ClassPrior& prior,
                      const LossConfig& cfg) {
    LossResult r;
    r.value = head_cross_entropy(batch, protos.rows, assignment, prior, cfg, r.grad_feats, nullptr);
    return r;
}

LossResult feat_loss(const FeatureBatch& batch, const LossConfig& cfg) {
    const std::size_t n = batch.size();
    const std::size_t d = batch.dim();
    LossResult r;
    r.grad_feats = Matrix(n, d);
    if (n < 2) return r;

    std::vector<std::size_t> anchors;
    std::vector<std::size_t> pos_count(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && batch.labels[j] == batch.labels[i]) ++pos_count[i];
        if (pos_count[i] > 0) anchors.push_back(i);
    }
    if (anchors.empty()) return r;

    Matrix sim(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            sim(i, j) = dot(batch.feats.row(i), batch.feats.row(j), d);

    const double inv_tau = 1.0 / cfg.temperature;
    const double inv_anchors = 1.0 / static_cast<double>(anchors.size());
    double total = 0.0;

    for (const std::size_t i : anchors) {
        double zmax = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < n; ++a)
            if (a != i) zmax = std::max(zmax, sim(i, a) * inv_tau);
        double denom = 0.0;
        for (std::size_t a = 0; a < n; ++a)
            if (a != i) denom += std::exp(sim(i, a) * inv_tau - zmax);
        const double log_denom = std::log(denom) + zmax;

        const double inv_pos = 1.0 / static_cast<double>(pos_count[i]);
        for (std::size_t p = 0; p < n; ++p)
            if (p != i && batch.labels[p] == batch.labels[i])
                total += -(sim(i, p) * inv_tau - log_denom) * inv_pos;

        // d(loss)/d(sim(i,a)) accumulated into both endpoint rows
        for (std::size_t a = 0; a < n; ++a) {
            if (a == i) continue;
            const double soft = std::exp(sim(i, a) * inv_tau - log_denom);
            const bool positive = batch.labels[a] == batch.labels[i];
            const double w =
                inv_anchors * inv_tau * (soft - (positive ? inv_pos : 0.0));
            const double* vi = batch.feats.row(i);
            const double* va = batch.feats.row(a);
            double* gi = r.grad_feats.row(i);
            double* ga = r.grad_feats.row(a);
            for (std::size_t c = 0; c < d; ++c) {
                gi[c] += w * va[c];
                ga[c] += w * vi[c];
            }
        }
    }
    r.value = total * inv_anchors;
    return r;
}

LossResult upcl_loss(const FeatureBatch& batch, const PrototypeSet& protos,
                     const Assignment& assignment, const ClassPrior& prior,
                     const LossConfig& cfg) {
    LossResult proto = proto_loss(batch, protos, assignment, prior, cfg);
    LossResult feat = feat_loss(batch, cfg);
    const double w = cfg.feat_weight();
    LossResult r;
    r.value = proto.value + w * feat.value;
    r.grad_feats = std::move(proto.grad_feats);
    for (std::size_t idx = 0; idx < r.grad_feats.data.size(); ++idx)
        r.grad_feats.data[idx] += w * feat.grad_feats.data[idx];
    return r;
}

LossResult fkd_loss(const FeatureBatch& student, const FeatureBatch& teacher) {
    const std::size_t n = student.size();
    const std::size_t d = student.dim();
    if (teacher.size() != n || teacher.dim() != d)
        throw DimensionMismatch("student and teacher feature shapes differ");
    if (n == 0) throw EmptyInput("distillation over an empty batch");

    LossResult r;
    r.grad_feats = Matrix(n, d);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.value += 1.0 - dot(teacher.feats.row(i), student.feats.row(i), d);
        const double* t = teacher.feats.row(i);
        double* g = r.grad_feats.row(i);
        for (std::size_t c = 0; c < d; ++c) g[c] = -t[c] * inv_n;
    }
    r.value *= inv_n;
    return r;
}

LossResult total_loss(const FeatureBatch& batch, const PrototypeSet& protos,
                      const Assignment& assignment, const ClassPrior& prior,
                      const LossConfig& cfg,
                      const std::optional<FeatureBatch>& teacher_feats) {
    LossResult upcl = upcl_loss(batch, protos, assignment, prior, cfg);
    if (cfg.task_index == 0) return upcl;
    if (!teacher_feats)
        throw MissingTeacher("task " + std::to_string(cfg.task_index) +
                             " needs teacher features");

    LossResult fkd = fkd_loss(batch, *teacher_feats);
    const double l2 = cfg.lambda2();
    LossResult r;
    r.value = (1.0 - l2) * upcl.value + l2 * fkd.value;
    r.grad_feats = Matrix(batch.size(), batch.dim());
    for (std::size_t idx = 0; idx < r.grad_feats.data.size(); ++idx)
        r.grad_feats.data[idx] =
            (1.0 - l2) * upcl.grad_feats.data[idx] + l2 * fkd.grad_feats.data[idx];
    return r;
}

CosineLossResult cosine_ce_loss(const FeatureBatch& batch, const Matrix& weights,
                                const Assignment& assignment, const ClassPrior& prior,
                                const LossConfig& cfg) {
    CosineLossResult r;
    r.value =
        head_cross_entropy(batch, weights, assignment, prior, cfg, r.grad_feats, &r.grad_weights);
    return r;
}

} // namespace upcl
