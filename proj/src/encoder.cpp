#include "upcl/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "upcl/errors.hpp"

namespace upcl {

namespace {

constexpr double kNormEps = 1e-12;
constexpr char kMagic[4] = {'U', 'P', 'C', 'L'};
constexpr std::uint32_t kFormatVersion = 1;

} // namespace

EncoderState EncoderState::init(const std::vector<std::size_t>& sizes, Rng& rng) {
    if (sizes.size() < 2) throw ConfigError("encoder needs at least input and output sizes");
    for (std::size_t s : sizes)
        if (s == 0) throw ConfigError("encoder layer sizes must be positive");

    EncoderState state;
    state.layer_sizes = sizes;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const std::size_t fan_in = sizes[l];
        const std::size_t fan_out = sizes[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_out, fan_in);
        for (double& x : w.data) x = (2.0 * rng.uniform() - 1.0) * bound;
        state.weights.push_back(std::move(w));
        state.biases.emplace_back(fan_out, 0.0);
    }
    return state;
}

OptimizerState OptimizerState::for_encoder(const EncoderState& state) {
    OptimizerState opt;
    for (const Matrix& w : state.weights) {
        opt.velocity_w.emplace_back(w.rows, w.cols);
        opt.velocity_b.emplace_back(w.rows, 0.0);
    }
    return opt;
}

ForwardCache forward(const EncoderState& state, const Matrix& inputs) {
    if (inputs.cols != state.input_dim())
        throw DimensionMismatch("input width " + std::to_string(inputs.cols) +
                                " does not match encoder input " +
                                std::to_string(state.input_dim()));

    ForwardCache cache;
    cache.version = state.version;
    cache.inputs = inputs;

    const Matrix* current = &cache.inputs;
    const std::size_t n = inputs.rows;
    const std::size_t layers = state.layer_count();

    for (std::size_t l = 0; l < layers; ++l) {
        const Matrix& w = state.weights[l];
        const std::vector<double>& b = state.biases[l];
        Matrix pre(n, w.rows);
        for (std::size_t i = 0; i < n; ++i) {
            const double* in = current->row(i);
            double* out = pre.row(i);
            for (std::size_t r = 0; r < w.rows; ++r) out[r] = dot(w.row(r), in, w.cols) + b[r];
        }
        cache.pre_acts.push_back(pre);

        Matrix post = pre;
        if (l + 1 < layers) {
            for (double& x : post.data) x = std::max(x, 0.0);
        } else {
            cache.pre_norms.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                double* row = post.row(i);
                const double m = std::max(norm(row, post.cols), kNormEps);
                cache.pre_norms[i] = m;
                for (std::size_t c = 0; c < post.cols; ++c) row[c] /= m;
            }
        }
        cache.post_acts.push_back(std::move(post));
        current = &cache.post_acts.back();
    }
    return cache;
}

Matrix encode(const EncoderState& state, const Matrix& inputs) {
    return forward(state, inputs).features();
}

EncoderGrads backward(const EncoderState& state, const ForwardCache& cache,
                      const Matrix& grad_features) {
    if (cache.version != state.version)
        throw StaleCache("activation cache is older than the encoder parameters");
    const std::size_t layers = state.layer_count();
    const std::size_t n = cache.inputs.rows;
    if (!grad_features.same_shape(cache.post_acts.back()))
        throw DimensionMismatch("feature gradient shape mismatch");

    EncoderGrads grads;
    grads.weights.reserve(layers);
    grads.biases.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        grads.weights.emplace_back(state.weights[l].rows, state.weights[l].cols);
        grads.biases.emplace_back(state.weights[l].rows, 0.0);
    }

    // gradient with respect to the final pre-normalization activations
    Matrix delta(n, state.output_dim());
    for (std::size_t i = 0; i < n; ++i) {
        const double* gv = grad_features.row(i);
        const double* v = cache.post_acts.back().row(i);
        double* out = delta.row(i);
        const double m = cache.pre_norms[i];
        const double raw = norm(cache.pre_acts.back().row(i), state.output_dim());
        if (raw > kNormEps) {
            const double vg = dot(gv, v, state.output_dim());
            for (std::size_t c = 0; c < state.output_dim(); ++c)
                out[c] = (gv[c] - vg * v[c]) / m;
        } else {
            for (std::size_t c = 0; c < state.output_dim(); ++c) out[c] = gv[c] / m;
        }
    }

    for (std::size_t l = layers; l-- > 0;) {
        const Matrix& input_rows = l == 0 ? cache.inputs : cache.post_acts[l - 1];
        const Matrix& w = state.weights[l];
        Matrix& gw = grads.weights[l];
        std::vector<double>& gb = grads.biases[l];

        for (std::size_t i = 0; i < n; ++i) {
            const double* d = delta.row(i);
            const double* in = input_rows.row(i);
            for (std::size_t r = 0; r < w.rows; ++r) {
                const double dr = d[r];
                if (dr == 0.0) continue;
                double* gwr = gw.row(r);
                for (std::size_t c = 0; c < w.cols; ++c) gwr[c] += dr * in[c];
                gb[r] += dr;
            }
        }

        if (l == 0) break;
        Matrix prev(n, w.cols);
        for (std::size_t i = 0; i < n; ++i) {
            const double* d = delta.row(i);
            double* out = prev.row(i);
            for (std::size_t r = 0; r < w.rows; ++r) {
                const double dr = d[r];
                if (dr == 0.0) continue;
                const double* wr = w.row(r);
                for (std::size_t c = 0; c < w.cols; ++c) out[c] += dr * wr[c];
            }
            // ReLU mask from the previous layer's affine output
            const double* pre = cache.pre_acts[l - 1].row(i);
            for (std::size_t c = 0; c < w.cols; ++c)
                if (pre[c] <= 0.0) out[c] = 0.0;
        }
        delta = std::move(prev);
    }
    return grads;
}

void sgd_update(Matrix& param, Matrix& velocity, const Matrix& grad, double lr, double momentum,
                double weight_decay) {
    if (!param.same_shape(grad) || !param.same_shape(velocity))
        throw DimensionMismatch("optimizer shapes out of sync");
    for (std::size_t idx = 0; idx < param.data.size(); ++idx) {
        velocity.data[idx] =
            momentum * velocity.data[idx] + grad.data[idx] + weight_decay * param.data[idx];
        param.data[idx] -= lr * velocity.data[idx];
    }
}

void sgd_step(EncoderState& state, OptimizerState& opt, const EncoderGrads& grads) {
    for (std::size_t l = 0; l < state.layer_count(); ++l) {
        sgd_update(state.weights[l], opt.velocity_w[l], grads.weights[l], opt.learning_rate,
                   opt.momentum, opt.weight_decay);
        for (std::size_t r = 0; r < state.biases[l].size(); ++r) {
            double& vel = opt.velocity_b[l][r];
            vel = opt.momentum * vel + grads.biases[l][r] +
                  opt.weight_decay * state.biases[l][r];
            state.biases[l][r] -= opt.learning_rate * vel;
        }
    }
    ++state.version;
}

void schedule_epoch(OptimizerState& opt, int epoch) {
    if (std::find(opt.milestones.begin(), opt.milestones.end(), epoch) == opt.milestones.end())
        return;
    if (!opt.applied_milestones.insert(epoch).second) return;
    opt.learning_rate *= opt.decay_gamma;
}

TeacherSnapshot snapshot_teacher(const EncoderState& state) {
    return TeacherSnapshot{state};
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x & 0xff),
                          static_cast<unsigned char>((x >> 8) & 0xff),
                          static_cast<unsigned char>((x >> 16) & 0xff),
                          static_cast<unsigned char>((x >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ofstream& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw TruncatedFile("encoder file ended early");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::ifstream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw TruncatedFile("encoder file ended early");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
}

} // namespace

void save_encoder(const EncoderState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(state.layer_sizes.size()));
    for (std::size_t s : state.layer_sizes) put_u32(out, static_cast<std::uint32_t>(s));
    for (std::size_t l = 0; l < state.layer_count(); ++l) {
        for (double x : state.weights[l].data) put_f64(out, x);
        for (double x : state.biases[l]) put_f64(out, x);
    }
    if (!out) throw ConfigError("short write to '" + path + "'");
}

EncoderState load_encoder(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TruncatedFile("cannot open '" + path + "'");
    char magic[4];
    if (!in.read(magic, 4)) throw TruncatedFile("encoder file ended early");
    if (std::memcmp(magic, kMagic, 4) != 0) throw BadMagic("not an encoder parameter file");
    const std::uint32_t version = get_u32(in);
    if (version != kFormatVersion)
        throw BadMagic("unsupported encoder file version " + std::to_string(version));

    const std::uint32_t count = get_u32(in);
    if (count < 2) throw TruncatedFile("encoder file lists fewer than two layer sizes");
    std::vector<std::size_t> sizes(count);
    for (std::uint32_t i = 0; i < count; ++i) sizes[i] = get_u32(in);

    EncoderState state;
    state.layer_sizes = sizes;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        Matrix w(sizes[l + 1], sizes[l]);
        for (double& x : w.data) x = get_f64(in);
        std::vector<double> b(sizes[l + 1]);
        for (double& x : b) x = get_f64(in);
        state.weights.push_back(std::move(w));
        state.biases.push_back(std::move(b));
    }
    return state;
}

} // namespace upcl
