#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "upcl/errors.hpp"
#include "upcl/grad_check.hpp"
#include "upcl/harness.hpp"
#include "upcl/report.hpp"

namespace fs = std::filesystem;
using namespace upcl;

namespace {

// every flag that can override a config-file value; presence is checked
// through CLI11 counts so unset flags never clobber file values
struct Overrides {
    std::string config_path;
    std::string out_root;
    std::string head;
    std::string margin;
    std::string generator;
    std::string memory_strategy;
    double tau = 0.0;
    double lr = 0.0;
    double sigma = 0.0;
    std::uint64_t run_seed = 0;
    std::uint64_t order_seed = 0;
    std::size_t tasks = 0;
    std::size_t capacity = 0;
    std::size_t batch = 0;
    std::size_t input_dim = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    int classes = 0;
    int epochs_base = 0;
    int epochs_inc = 0;
};

void add_run_options(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "JSON config file");
    cmd->add_option("--out", o.out_root, "output root (default $UPCL_OUT_DIR or ./runs)");
    cmd->add_option("--tau", o.tau, "softmax temperature");
    cmd->add_option("--seed", o.run_seed, "run seed");
    cmd->add_option("--class-order-seed", o.order_seed, "class order shuffle seed");
    cmd->add_option("--tasks", o.tasks, "number of tasks");
    cmd->add_option("--head", o.head, "classifier head: up | cos");
    cmd->add_option("--margin", o.margin, "margin mode: none | fixed | dynamic");
    cmd->add_option("--generator", o.generator,
                    "prototype generator: gram_schmidt | simplex_etf | muller | mhe");
    cmd->add_option("--memory-capacity", o.capacity, "rehearsal budget");
    cmd->add_option("--memory-strategy", o.memory_strategy,
                    "memory strategy: fixed_total | fixed_per_class");
    cmd->add_option("--lr", o.lr, "initial learning rate");
    cmd->add_option("--epochs-base", o.epochs_base, "epochs for the first task");
    cmd->add_option("--epochs-increment", o.epochs_inc, "epochs per later task");
    cmd->add_option("--batch-size", o.batch, "minibatch size");
    cmd->add_option("--classes", o.classes, "blob benchmark class count");
    cmd->add_option("--input-dim", o.input_dim, "blob benchmark input dimension");
    cmd->add_option("--n-train", o.n_train, "blob training samples per class");
    cmd->add_option("--n-test", o.n_test, "blob test samples per class");
    cmd->add_option("--sigma", o.sigma, "blob cluster spread");
}

RunConfig resolve_config(const CLI::App* cmd, const Overrides& o) {
    RunConfig cfg;
    if (cmd->count("--config")) cfg = parse_config_file(o.config_path);
    if (cmd->count("--tau")) cfg.tau = o.tau;
    if (cmd->count("--seed")) cfg.run_seed = o.run_seed;
    if (cmd->count("--class-order-seed")) cfg.class_order_seed = o.order_seed;
    if (cmd->count("--tasks")) cfg.task_count = o.tasks;
    if (cmd->count("--head")) cfg.head = head_kind_from_name(o.head);
    if (cmd->count("--margin")) cfg.margin_mode = margin_mode_from_name(o.margin);
    if (cmd->count("--generator")) cfg.generator = generator_from_name(o.generator);
    if (cmd->count("--memory-capacity")) cfg.memory_capacity = o.capacity;
    if (cmd->count("--memory-strategy"))
        cfg.memory_strategy = memory_strategy_from_name(o.memory_strategy);
    if (cmd->count("--lr")) cfg.learning_rate = o.lr;
    if (cmd->count("--epochs-base")) cfg.epochs_base = o.epochs_base;
    if (cmd->count("--epochs-increment")) cfg.epochs_increment = o.epochs_inc;
    if (cmd->count("--batch-size")) cfg.batch_size = o.batch;
    if (cmd->count("--classes")) cfg.blobs.class_count = o.classes;
    if (cmd->count("--input-dim")) {
        cfg.blobs.input_dim = o.input_dim;
        if (!cfg.layer_sizes.empty()) cfg.layer_sizes.front() = o.input_dim;
    }
    if (cmd->count("--n-train")) cfg.blobs.n_train = o.n_train;
    if (cmd->count("--n-test")) cfg.blobs.n_test = o.n_test;
    if (cmd->count("--sigma")) cfg.blobs.sigma = o.sigma;
    validate(cfg);
    return cfg;
}

std::string out_root(const CLI::App* cmd, const Overrides& o) {
    if (cmd->count("--out")) return o.out_root;
    if (const char* env = std::getenv("UPCL_OUT_DIR")) return env;
    return "runs";
}

std::string stamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%S", &tm);
    return buf;
}

fs::path fresh_dir(const std::string& root, const std::string& name) {
    const fs::path base = fs::path(root) / name;
    fs::path dir = base;
    int k = 1;
    while (fs::exists(dir)) dir = fs::path(base.string() + "_" + std::to_string(k++));
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

void write_run_outputs(const fs::path& dir, const RunConfig& cfg, const VariantSpec& variant,
                       const RunResult& result) {
    RunConfig echoed = cfg;
    echoed.head = variant.head;
    echoed.margin_mode = variant.margin;
    const std::string id = run_id(echoed, variant_name(variant));
    write_file(dir / "metrics.csv",
               metrics_csv(id, variant_name(variant), cfg.run_seed, result.metrics));
    write_file(dir / "confusion.csv", confusion_csv(result.metrics.confusion));
    write_file(dir / "memory.csv", memory_csv(result.task_logs));
    write_file(dir / "final.json", final_json(cfg, variant, result) + "\n");
}

int do_run(const CLI::App* cmd, const Overrides& o) {
    const RunConfig cfg = resolve_config(cmd, o);
    const VariantSpec variant{cfg.head, cfg.margin_mode};
    const RunResult result = run_experiment(cfg, variant);

    const fs::path dir =
        fresh_dir(out_root(cmd, o), stamp() + "_seed" + std::to_string(cfg.run_seed));
    write_run_outputs(dir, cfg, variant, result);

    std::cout << "run " << run_id(cfg, variant_name(variant)) << " variant="
              << variant_name(variant) << " A_last=" << format_double(result.metrics.a_last)
              << " A_avg=" << format_double(result.metrics.a_avg) << "\n"
              << "outputs: " << dir.string() << "\n";
    return 0;
}

int do_ablate(const CLI::App* cmd, const Overrides& o) {
    const RunConfig cfg = resolve_config(cmd, o);
    const fs::path parent = fresh_dir(
        out_root(cmd, o), stamp() + "_seed" + std::to_string(cfg.run_seed) + "_ablation");

    std::string table = "variant,run_id,a_last,a_avg\n";
    std::cout << "variant      A_last   A_avg\n";
    for (const auto& [variant, result] : run_ablation(cfg)) {
        const fs::path dir = parent / variant_name(variant);
        fs::create_directories(dir);
        write_run_outputs(dir, cfg, variant, result);

        RunConfig echoed = cfg;
        echoed.head = variant.head;
        echoed.margin_mode = variant.margin;
        table += variant_name(variant) + "," + run_id(echoed, variant_name(variant)) + "," +
                 format_double(result.metrics.a_last) + "," +
                 format_double(result.metrics.a_avg) + "\n";

        char line[80];
        std::snprintf(line, sizeof(line), "%-12s %.4f   %.4f", variant_name(variant).c_str(),
                      result.metrics.a_last, result.metrics.a_avg);
        std::cout << line << "\n";
    }
    write_file(parent / "ablation.csv", table);
    std::cout << "outputs: " << parent.string() << "\n";
    return 0;
}

int do_protos(const CLI::App* cmd, std::size_t d, const std::vector<std::size_t>& class_counts,
              int seeds, std::size_t mhe_iters, double mhe_step, const Overrides& o) {
    std::string csv = "generator,C,d,seed,min_cos_dist\n";
    for (const Generator g :
         {Generator::GramSchmidt, Generator::SimplexEtf, Generator::Muller, Generator::Mhe}) {
        for (const std::size_t C : class_counts) {
            for (int s = 0; s < seeds; ++s) {
                const std::string tag = generator_name(g) + "-C" + std::to_string(C);
                Rng rng(derive_seed(static_cast<std::uint64_t>(s), tag));
                PrototypeSet set;
                switch (g) {
                    case Generator::GramSchmidt:
                        set = gram_schmidt_extend(PrototypeSet(d, g), C, rng);
                        break;
                    case Generator::SimplexEtf:
                        set = simplex_etf(C, d, rng);
                        break;
                    case Generator::Muller:
                        set = muller_random(C, d, rng);
                        break;
                    case Generator::Mhe:
                        set = mhe_optimize(C, d, mhe_iters, mhe_step, rng).protos;
                        break;
                }
                csv += generator_name(g) + "," + std::to_string(C) + "," + std::to_string(d) +
                       "," + std::to_string(s) + "," +
                       format_double(min_cosine_distance(set)) + "\n";
            }
        }
    }

    const fs::path dir = fresh_dir(out_root(cmd, o), "protos_" + stamp());
    write_file(dir / "protos.csv", csv);
    std::cout << "outputs: " << (dir / "protos.csv").string() << "\n";
    return 0;
}

double encoder_gradient_error(std::uint64_t seed) {
    Rng rng(seed);
    EncoderState state = EncoderState::init({6, 8, 4}, rng);
    Matrix inputs(5, 6);
    for (double& v : inputs.data) v = rng.gaussian();
    const std::vector<int> labels{0, 1, 2, 0, 1};
    const PrototypeSet protos =
        gram_schmidt_extend(PrototypeSet(4, Generator::GramSchmidt), 3, rng);
    const Assignment assignment{{0, 0}, {1, 1}, {2, 2}};
    const ClassPrior prior({{0, 30}, {1, 40}, {2, 30}});
    LossConfig cfg;
    cfg.margin_mode = MarginMode::Dynamic;

    const auto loss_value = [&]() {
        FeatureBatch b;
        b.feats = encode(state, inputs);
        b.labels = labels;
        return proto_loss(b, protos, assignment, prior, cfg).value;
    };

    ForwardCache cache = forward(state, inputs);
    FeatureBatch batch;
    batch.feats = cache.features();
    batch.labels = labels;
    const LossResult loss = proto_loss(batch, protos, assignment, prior, cfg);
    const EncoderGrads grads = backward(state, cache, loss.grad_feats);

    const double h = 1e-5;
    double worst = 0.0;
    const auto probe = [&](double& slot, double g) {
        const double saved = slot;
        slot = saved + h;
        const double hi = loss_value();
        slot = saved - h;
        const double lo = loss_value();
        slot = saved;
        const double fd = (hi - lo) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - g) / std::max(1.0, std::abs(g)));
    };
    for (std::size_t l = 0; l < state.layer_count(); ++l) {
        for (std::size_t i = 0; i < state.weights[l].data.size(); ++i)
            probe(state.weights[l].data[i], grads.weights[l].data[i]);
        for (std::size_t r = 0; r < state.biases[l].size(); ++r)
            probe(state.biases[l][r], grads.biases[l][r]);
    }
    return worst;
}

int do_gradcheck(int trials, double tolerance) {
    const std::size_t n = 6, d = 8;
    const MarginMode modes[] = {MarginMode::None, MarginMode::Fixed, MarginMode::Dynamic};

    double proto_err = 0.0, feat_err = 0.0, fkd_err = 0.0, cos_err = 0.0, enc_err = 0.0;
    for (int t = 0; t < trials; ++t) {
        Rng rng(derive_seed(static_cast<std::uint64_t>(t), "gradcheck"));

        FeatureBatch batch;
        batch.feats = Matrix(n, d);
        for (double& v : batch.feats.data) v = rng.gaussian();
        for (std::size_t i = 0; i < n; ++i)
            batch.labels.push_back(static_cast<int>(i % 3));

        const PrototypeSet protos =
            gram_schmidt_extend(PrototypeSet(d, Generator::GramSchmidt), 3, rng);
        const Assignment assignment{{0, 0}, {1, 1}, {2, 2}};
        const ClassPrior prior({{0, 10 + rng.uniform_int(50)},
                                {1, 10 + rng.uniform_int(50)},
                                {2, 10 + rng.uniform_int(50)}});
        LossConfig cfg;
        cfg.margin_mode = modes[t % 3];
        cfg.task_index = 1;

        const auto with_feats = [&](const Matrix& x) {
            FeatureBatch b = batch;
            b.feats = x;
            return b;
        };

        proto_err = std::max(
            proto_err,
            grad_check(
                [&](const Matrix& x) {
                    return proto_loss(with_feats(x), protos, assignment, prior, cfg).value;
                },
                batch.feats, proto_loss(batch, protos, assignment, prior, cfg).grad_feats));

        feat_err = std::max(
            feat_err, grad_check([&](const Matrix& x) { return feat_loss(with_feats(x), cfg).value; },
                                 batch.feats, feat_loss(batch, cfg).grad_feats));

        FeatureBatch teacher;
        teacher.feats = muller_random(n, d, rng).rows;
        teacher.labels = batch.labels;
        fkd_err = std::max(
            fkd_err, grad_check([&](const Matrix& x) { return fkd_loss(with_feats(x), teacher).value; },
                                batch.feats, fkd_loss(batch, teacher).grad_feats));

        const Matrix weights = muller_random(3, d, rng).rows;
        const CosineLossResult cos = cosine_ce_loss(batch, weights, assignment, prior, cfg);
        cos_err = std::max(
            cos_err,
            grad_check(
                [&](const Matrix& x) {
                    return cosine_ce_loss(with_feats(x), weights, assignment, prior, cfg).value;
                },
                batch.feats, cos.grad_feats));
        cos_err = std::max(
            cos_err, grad_check(
                         [&](const Matrix& w) {
                             return cosine_ce_loss(batch, w, assignment, prior, cfg).value;
                         },
                         weights, cos.grad_weights));

        enc_err = std::max(enc_err, encoder_gradient_error(derive_seed(
                                        static_cast<std::uint64_t>(t), "gradcheck-encoder")));
    }

    nlohmann::json report;
    report["trials"] = trials;
    report["tolerance"] = tolerance;
    report["max_rel_error"] = {{"proto_loss", proto_err},
                               {"feat_loss", feat_err},
                               {"fkd_loss", fkd_err},
                               {"cosine_ce_loss", cos_err},
                               {"encoder", enc_err}};
    const bool pass = proto_err < tolerance && feat_err < tolerance && fkd_err < tolerance &&
                      cos_err < tolerance && enc_err < tolerance;
    report["pass"] = pass;
    std::cout << report.dump(2) << "\n";
    return pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"uniform-prototype incremental-learning laboratory"};
    app.require_subcommand(1);

    Overrides o;
    CLI::App* run_cmd = app.add_subcommand("run", "train one configuration across all tasks");
    add_run_options(run_cmd, o);
    CLI::App* ablate_cmd =
        app.add_subcommand("ablate", "run the six head/margin variants on shared data");
    add_run_options(ablate_cmd, o);

    CLI::App* protos_cmd =
        app.add_subcommand("protos", "prototype geometry study (min cosine distance CSV)");
    std::size_t d = 64;
    std::vector<std::size_t> class_counts{4, 8, 16, 32};
    int seeds = 20;
    std::size_t mhe_iters = 10;
    double mhe_step = 0.01;
    protos_cmd->add_option("--d", d, "embedding dimension");
    protos_cmd->add_option("--C", class_counts, "class counts, comma separated")
        ->delimiter(',');
    protos_cmd->add_option("--seeds", seeds, "seeds per cell");
    protos_cmd->add_option("--mhe-iters", mhe_iters, "descent iterations");
    protos_cmd->add_option("--mhe-step", mhe_step, "initial descent step");
    protos_cmd->add_option("--out", o.out_root, "output root");

    CLI::App* grad_cmd =
        app.add_subcommand("gradcheck", "finite-difference audit of every analytic gradient");
    int trials = 5;
    double tolerance = 1e-4;
    grad_cmd->add_option("--trials", trials, "random instances per gradient");
    grad_cmd->add_option("--tolerance", tolerance, "max relative error allowed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (run_cmd->parsed()) return do_run(run_cmd, o);
        if (ablate_cmd->parsed()) return do_ablate(ablate_cmd, o);
        if (protos_cmd->parsed())
            return do_protos(protos_cmd, d, class_counts, seeds, mhe_iters, mhe_step, o);
        return do_gradcheck(trials, tolerance);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
