#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "upcl/assignment.hpp"
#include "upcl/common.hpp"
#include "upcl/geometry.hpp"

namespace upcl {

// Class frequencies counted over the task's training pool. freq[k] is
// count[k] / sum of counts and sums to 1.
struct ClassPrior {
    std::map<int, long> counts;
    std::map<int, double> freq;

    ClassPrior() = default;
    explicit ClassPrior(const std::map<int, long>& class_counts);
    ClassPrior(std::initializer_list<std::pair<const int, long>> init)
        : ClassPrior(std::map<int, long>(init)) {}

    bool has(int class_id) const { return freq.count(class_id) != 0; }
};

enum class MarginMode { None, Fixed, Dynamic };

const char* margin_mode_name(MarginMode m);
MarginMode margin_mode_from_name(const std::string& name);

struct LossConfig {
    double temperature = 0.1;
    MarginMode margin_mode = MarginMode::None;
    double fixed_margin = 0.1;
    double feat_weight_base = 0.5;
    int task_index = 0;
    long old_class_count = 0;
    long total_class_count = 0;

    // per-task weight on the feature-contrast term
    double feat_weight() const;
    // knowledge-distillation mixing weight, old classes over total classes
    double lambda2() const;
};

struct LossResult {
    double value = 0.0;
    Matrix grad_feats;
};

struct CosineLossResult {
    double value = 0.0;
    Matrix grad_feats;
    Matrix grad_weights;
};

// Adjusted, temperature-scaled logits for one feature row over all assigned
// classes, ordered by class id. The margin term depends on the mode:
// log-prior offset (Dynamic), -m on the true class (Fixed), or zero.
std::vector<std::pair<int, double>> proto_logits(const double* feat,
                                                 const PrototypeSet& protos,
                                                 const Assignment& assignment,
                                                 const ClassPrior& prior,
                                                 const LossConfig& cfg,
                                                 int label);

// Softmax cross-entropy of each feature against its class prototype over
// the assigned-class logits. Prototypes are constants; the gradient is
// with respect to the features.
LossResult proto_loss(const FeatureBatch& batch, const PrototypeSet& protos,
                      const Assignment& assignment, const ClassPrior& prior,
                      const LossConfig& cfg);

// Supervised contrastive loss across the batch. Anchors without a
// same-class partner are skipped; a batch with no valid anchor yields 0.
LossResult feat_loss(const FeatureBatch& batch, const LossConfig& cfg);

// proto_loss + feat_weight() * feat_loss, gradients combined likewise.
LossResult upcl_loss(const FeatureBatch& batch, const PrototypeSet& protos,
                     const Assignment& assignment, const ClassPrior& prior,
                     const LossConfig& cfg);

// Mean cosine gap between teacher and student rows. Gradient flows to the
// student only.
LossResult fkd_loss(const FeatureBatch& student, const FeatureBatch& teacher);

// (1 - lambda2) * upcl_loss + lambda2 * fkd_loss. The distillation term is
// skipped entirely at task 0.
LossResult total_loss(const FeatureBatch& batch, const PrototypeSet& protos,
                      const Assignment& assignment, const ClassPrior& prior,
                      const LossConfig& cfg,
                      const std::optional<FeatureBatch>& teacher_feats);

// Same logit and margin machinery as proto_loss with learnable weight rows
// in place of prototypes. Also returns the gradient with respect to the
// weights; the caller re-normalizes weight rows after each step.
CosineLossResult cosine_ce_loss(const FeatureBatch& batch, const Matrix& weights,
                                const Assignment& assignment, const ClassPrior& prior,
                                const LossConfig& cfg);

} // namespace upcl
