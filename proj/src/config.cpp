#include "upcl/config.hpp"

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"
#include "upcl/errors.hpp"

namespace upcl {

using nlohmann::json;

const char* head_kind_name(HeadKind h) {
    return h == HeadKind::UniformPrototype ? "up" : "cos";
}

HeadKind head_kind_from_name(const std::string& name) {
    if (name == "up") return HeadKind::UniformPrototype;
    if (name == "cos") return HeadKind::CosineClassifier;
    throw ConfigError("unknown head '" + name + "'");
}

namespace {

void require_keys(const json& obj, const std::string& scope,
                  std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("'" + scope + "' must be a JSON object");
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + scope);
    }
}

template <typename T>
void read_field(const json& obj, const std::string& scope, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + scope + "." + key + "'");
    }
}

std::string read_name(const json& obj, const std::string& scope, const char* key,
                      const std::string& fallback) {
    std::string name = fallback;
    read_field(obj, scope, key, name);
    return name;
}

void parse_dataset(const json& obj, RunConfig& cfg) {
    require_keys(obj, "dataset", {"kind", "blobs", "idx"});
    read_field(obj, "dataset", "kind", cfg.dataset_kind);
    if (obj.contains("blobs")) {
        const json& b = obj.at("blobs");
        require_keys(b, "dataset.blobs", {"class_count", "input_dim", "n_train", "n_test", "sigma"});
        read_field(b, "dataset.blobs", "class_count", cfg.blobs.class_count);
        read_field(b, "dataset.blobs", "input_dim", cfg.blobs.input_dim);
        read_field(b, "dataset.blobs", "n_train", cfg.blobs.n_train);
        read_field(b, "dataset.blobs", "n_test", cfg.blobs.n_test);
        read_field(b, "dataset.blobs", "sigma", cfg.blobs.sigma);
    }
    if (obj.contains("idx")) {
        const json& p = obj.at("idx");
        require_keys(p, "dataset.idx",
                     {"train_images", "train_labels", "test_images", "test_labels"});
        read_field(p, "dataset.idx", "train_images", cfg.idx.train_images);
        read_field(p, "dataset.idx", "train_labels", cfg.idx.train_labels);
        read_field(p, "dataset.idx", "test_images", cfg.idx.test_images);
        read_field(p, "dataset.idx", "test_labels", cfg.idx.test_labels);
    }
}

} // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;

    bool blank = true;
    for (const char ch : text)
        if (!std::isspace(static_cast<unsigned char>(ch))) {
            blank = false;
            break;
        }
    if (blank) return cfg;

    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    require_keys(root, "config",
                 {"dataset", "task_count", "class_order_seed", "run_seed", "head", "margin_mode",
                  "generator", "tau", "feat_weight_base", "fixed_margin", "ema_factor", "mhe",
                  "memory", "optimizer", "epochs", "batch_size", "layer_sizes"});

    if (root.contains("dataset")) parse_dataset(root.at("dataset"), cfg);
    read_field(root, "config", "task_count", cfg.task_count);
    read_field(root, "config", "class_order_seed", cfg.class_order_seed);
    read_field(root, "config", "run_seed", cfg.run_seed);
    cfg.head = head_kind_from_name(read_name(root, "config", "head", head_kind_name(cfg.head)));
    cfg.margin_mode = margin_mode_from_name(
        read_name(root, "config", "margin_mode", margin_mode_name(cfg.margin_mode)));
    cfg.generator =
        generator_from_name(read_name(root, "config", "generator", generator_name(cfg.generator)));
    read_field(root, "config", "tau", cfg.tau);
    read_field(root, "config", "feat_weight_base", cfg.feat_weight_base);
    read_field(root, "config", "fixed_margin", cfg.fixed_margin);
    read_field(root, "config", "ema_factor", cfg.ema_factor);

    if (root.contains("mhe")) {
        const json& m = root.at("mhe");
        require_keys(m, "mhe", {"iters", "step"});
        read_field(m, "mhe", "iters", cfg.mhe_iters);
        read_field(m, "mhe", "step", cfg.mhe_step);
    }
    if (root.contains("memory")) {
        const json& m = root.at("memory");
        require_keys(m, "memory", {"strategy", "capacity"});
        cfg.memory_strategy = memory_strategy_from_name(
            read_name(m, "memory", "strategy", memory_strategy_name(cfg.memory_strategy)));
        read_field(m, "memory", "capacity", cfg.memory_capacity);
    }
    if (root.contains("optimizer")) {
        const json& o = root.at("optimizer");
        require_keys(o, "optimizer", {"lr", "momentum", "weight_decay", "milestones", "gamma"});
        read_field(o, "optimizer", "lr", cfg.learning_rate);
        read_field(o, "optimizer", "momentum", cfg.momentum);
        read_field(o, "optimizer", "weight_decay", cfg.weight_decay);
        read_field(o, "optimizer", "milestones", cfg.milestones);
        read_field(o, "optimizer", "gamma", cfg.decay_gamma);
    }
    if (root.contains("epochs")) {
        const json& e = root.at("epochs");
        require_keys(e, "epochs", {"base", "increment"});
        read_field(e, "epochs", "base", cfg.epochs_base);
        read_field(e, "epochs", "increment", cfg.epochs_increment);
    }
    read_field(root, "config", "batch_size", cfg.batch_size);
    read_field(root, "config", "layer_sizes", cfg.layer_sizes);

    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

void validate(const RunConfig& cfg) {
    if (cfg.dataset_kind != "blobs" && cfg.dataset_kind != "idx")
        throw ConfigError("dataset.kind must be 'blobs' or 'idx'");
    if (cfg.dataset_kind == "idx" &&
        (cfg.idx.train_images.empty() || cfg.idx.train_labels.empty() ||
         cfg.idx.test_images.empty() || cfg.idx.test_labels.empty()))
        throw ConfigError("dataset.idx requires all four file paths");

    if (cfg.blobs.class_count < 2) throw ConfigError("dataset.blobs.class_count must be >= 2");
    if (cfg.blobs.input_dim == 0) throw ConfigError("dataset.blobs.input_dim must be >= 1");
    if (cfg.blobs.n_train == 0) throw ConfigError("dataset.blobs.n_train must be >= 1");
    if (cfg.blobs.n_test == 0) throw ConfigError("dataset.blobs.n_test must be >= 1");
    if (!(cfg.blobs.sigma > 0.0)) throw ConfigError("dataset.blobs.sigma must be > 0");

    if (cfg.task_count == 0) throw ConfigError("task_count must be >= 1");
    if (cfg.dataset_kind == "blobs" &&
        static_cast<std::size_t>(cfg.blobs.class_count) % cfg.task_count != 0)
        throw ConfigError("task_count must divide dataset.blobs.class_count");

    if (!(cfg.tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(cfg.feat_weight_base > 0.0)) throw ConfigError("feat_weight_base must be > 0");
    if (cfg.fixed_margin < 0.0) throw ConfigError("fixed_margin must be >= 0");
    if (cfg.ema_factor < 0.0 || cfg.ema_factor > 1.0)
        throw ConfigError("ema_factor must lie in [0, 1]");
    if (cfg.mhe_iters == 0) throw ConfigError("mhe.iters must be >= 1");
    if (!(cfg.mhe_step > 0.0)) throw ConfigError("mhe.step must be > 0");

    if (cfg.memory_capacity == 0) throw ConfigError("memory.capacity must be >= 1");

    if (!(cfg.learning_rate > 0.0)) throw ConfigError("optimizer.lr must be > 0");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
        throw ConfigError("optimizer.momentum must lie in [0, 1)");
    if (cfg.weight_decay < 0.0) throw ConfigError("optimizer.weight_decay must be >= 0");
    if (!(cfg.decay_gamma > 0.0) || cfg.decay_gamma > 1.0)
        throw ConfigError("optimizer.gamma must lie in (0, 1]");
    for (std::size_t i = 0; i + 1 < cfg.milestones.size(); ++i)
        if (cfg.milestones[i] >= cfg.milestones[i + 1])
            throw ConfigError("optimizer.milestones must be strictly increasing");
    for (const int m : cfg.milestones)
        if (m < 0) throw ConfigError("optimizer.milestones must be non-negative");

    if (cfg.epochs_base < 1) throw ConfigError("epochs.base must be >= 1");
    if (cfg.epochs_increment < 1) throw ConfigError("epochs.increment must be >= 1");
    if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");

    if (cfg.layer_sizes.size() < 2) throw ConfigError("layer_sizes needs at least input and output");
    for (const std::size_t s : cfg.layer_sizes)
        if (s == 0) throw ConfigError("layer_sizes entries must be >= 1");
    if (cfg.dataset_kind == "blobs" && cfg.layer_sizes.front() != cfg.blobs.input_dim)
        throw ConfigError("layer_sizes front must equal dataset.blobs.input_dim");

    if (cfg.dataset_kind == "blobs" && cfg.head == HeadKind::UniformPrototype) {
        const std::size_t d = cfg.layer_sizes.back();
        const std::size_t C = static_cast<std::size_t>(cfg.blobs.class_count);
        if (cfg.generator == Generator::GramSchmidt && C > d)
            throw ConfigError("layer_sizes back too small for gram_schmidt prototype count");
        if (cfg.generator == Generator::SimplexEtf && C > d + 1)
            throw ConfigError("layer_sizes back too small for simplex_etf prototype count");
    }
}

std::string config_to_json(const RunConfig& cfg) {
    json root;
    root["dataset"]["kind"] = cfg.dataset_kind;
    root["dataset"]["blobs"] = {{"class_count", cfg.blobs.class_count},
                                {"input_dim", cfg.blobs.input_dim},
                                {"n_train", cfg.blobs.n_train},
                                {"n_test", cfg.blobs.n_test},
                                {"sigma", cfg.blobs.sigma}};
    root["dataset"]["idx"] = {{"train_images", cfg.idx.train_images},
                              {"train_labels", cfg.idx.train_labels},
                              {"test_images", cfg.idx.test_images},
                              {"test_labels", cfg.idx.test_labels}};
    root["task_count"] = cfg.task_count;
    root["class_order_seed"] = cfg.class_order_seed;
    root["run_seed"] = cfg.run_seed;
    root["head"] = head_kind_name(cfg.head);
    root["margin_mode"] = margin_mode_name(cfg.margin_mode);
    root["generator"] = generator_name(cfg.generator);
    root["tau"] = cfg.tau;
    root["feat_weight_base"] = cfg.feat_weight_base;
    root["fixed_margin"] = cfg.fixed_margin;
    root["ema_factor"] = cfg.ema_factor;
    root["mhe"] = {{"iters", cfg.mhe_iters}, {"step", cfg.mhe_step}};
    root["memory"] = {{"strategy", memory_strategy_name(cfg.memory_strategy)},
                      {"capacity", cfg.memory_capacity}};
    root["optimizer"] = {{"lr", cfg.learning_rate},
                         {"momentum", cfg.momentum},
                         {"weight_decay", cfg.weight_decay},
                         {"milestones", cfg.milestones},
                         {"gamma", cfg.decay_gamma}};
    root["epochs"] = {{"base", cfg.epochs_base}, {"increment", cfg.epochs_increment}};
    root["batch_size"] = cfg.batch_size;
    root["layer_sizes"] = cfg.layer_sizes;
    return root.dump(2);
}

std::string run_id(const RunConfig& cfg, const std::string& variant_name) {
    // FNV-1a over the canonical JSON echo; nlohmann objects serialize with
    // sorted keys, so the digest is stable across rebuilds
    const std::string material = config_to_json(cfg) + "|" + variant_name;
    std::uint64_t hash = 1469598103934665603ULL;
    for (const unsigned char ch : material) {
        hash ^= ch;
        hash *= 1099511628211ULL;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(hash));
    return std::string(out);
}

} // namespace upcl
