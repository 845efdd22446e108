#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "upcl/common.hpp"
#include "upcl/rng.hpp"

namespace upcl {

// Fully connected feature extractor: affine + ReLU on hidden layers, final
// affine followed by L2 normalization of each output row. `version` counts
// parameter updates so stale activation caches can be detected.
struct EncoderState {
    std::vector<std::size_t> layer_sizes;     // [input, hidden..., output]
    std::vector<Matrix> weights;              // weights[l] is out_l x in_l
    std::vector<std::vector<double>> biases;  // biases[l] has out_l entries
    std::uint64_t version = 0;

    static EncoderState init(const std::vector<std::size_t>& sizes, Rng& rng);

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t layer_count() const { return weights.size(); }
};

// Activations recorded by forward for use in backward. Valid only while
// the producing state's version is unchanged.
struct ForwardCache {
    std::uint64_t version = 0;
    Matrix inputs;
    std::vector<Matrix> pre_acts;   // affine outputs per layer
    std::vector<Matrix> post_acts;  // after ReLU per hidden layer, after normalize on the last
    std::vector<double> pre_norms;  // clamped norm of each final pre-normalization row

    const Matrix& features() const { return post_acts.back(); }
};

struct EncoderGrads {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

// momentum-SGD settings plus velocity buffers shaped like the parameters
struct OptimizerState {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0002;
    std::vector<int> milestones;
    double decay_gamma = 0.1;
    std::vector<Matrix> velocity_w;
    std::vector<std::vector<double>> velocity_b;
    std::set<int> applied_milestones;

    static OptimizerState for_encoder(const EncoderState& state);
};

ForwardCache forward(const EncoderState& state, const Matrix& inputs);

// forward without the cache, for evaluation and teacher passes
Matrix encode(const EncoderState& state, const Matrix& inputs);

// Exact chain rule through normalize, affine, and ReLU layers. The cache
// must come from a forward on the state's current parameters.
EncoderGrads backward(const EncoderState& state, const ForwardCache& cache,
                      const Matrix& grad_features);

// v <- momentum*v + grad + weight_decay*theta; theta <- theta - lr*v
void sgd_step(EncoderState& state, OptimizerState& opt, const EncoderGrads& grads);

// Shared update rule for any single learnable matrix (used by the cosine
// classifier head).
void sgd_update(Matrix& param, Matrix& velocity, const Matrix& grad, double lr, double momentum,
                double weight_decay);

// Applies the milestone decay lr *= gamma when `epoch` is a milestone not
// yet consumed.
void schedule_epoch(OptimizerState& opt, int epoch);

struct TeacherSnapshot {
    EncoderState state;
};

TeacherSnapshot snapshot_teacher(const EncoderState& state);

void save_encoder(const EncoderState& state, const std::string& path);
EncoderState load_encoder(const std::string& path);

} // namespace upcl
