#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "upcl/geometry.hpp"
#include "upcl/losses.hpp"
#include "upcl/memory.hpp"

namespace upcl {

enum class HeadKind { UniformPrototype, CosineClassifier };

const char* head_kind_name(HeadKind h);
HeadKind head_kind_from_name(const std::string& name);

struct BlobParams {
    int class_count = 16;
    std::size_t input_dim = 32;
    std::size_t n_train = 400;
    std::size_t n_test = 50;
    double sigma = 0.45;
};

struct IdxPaths {
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
};

// Fully resolved experiment settings. Defaults describe the desk-scale
// blob benchmark; every field is reachable from the JSON config and most
// from command-line flags.
struct RunConfig {
    std::string dataset_kind = "blobs"; // "blobs" or "idx"
    BlobParams blobs;
    IdxPaths idx;

    std::size_t task_count = 4;
    std::uint64_t class_order_seed = 1;
    std::uint64_t run_seed = 1;

    HeadKind head = HeadKind::UniformPrototype;
    MarginMode margin_mode = MarginMode::Dynamic;
    Generator generator = Generator::GramSchmidt;
    double tau = 0.1;
    double feat_weight_base = 0.5;
    double fixed_margin = 0.1;
    double ema_factor = 0.9;
    std::size_t mhe_iters = 400;
    double mhe_step = 0.1;

    MemoryStrategy memory_strategy = MemoryStrategy::FixedTotal;
    std::size_t memory_capacity = 80;

    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0002;
    std::vector<int> milestones{30, 50};
    double decay_gamma = 0.1;

    int epochs_base = 60;
    int epochs_increment = 40;
    std::size_t batch_size = 64;
    std::vector<std::size_t> layer_sizes{32, 64, 64, 16};
};

// Throws ConfigError naming the offending field when values are out of
// range or mutually inconsistent.
void validate(const RunConfig& cfg);

// Defaults overlaid with the JSON object in `text`; unknown keys are
// rejected by name.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Resolved config as pretty-printed JSON (the inverse of parse).
std::string config_to_json(const RunConfig& cfg);

// Stable 16-hex-digit identifier derived from the resolved config and the
// variant/seed fields, so reruns of the same setup share an id.
std::string run_id(const RunConfig& cfg, const std::string& variant_name);

} // namespace upcl
