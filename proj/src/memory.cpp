#include "upcl/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "upcl/dataflow.hpp"
#include "upcl/errors.hpp"

namespace upcl {

const char* memory_strategy_name(MemoryStrategy s) {
    return s == MemoryStrategy::FixedTotal ? "fixed_total" : "fixed_per_class";
}

MemoryStrategy memory_strategy_from_name(const std::string& name) {
    if (name == "fixed_total") return MemoryStrategy::FixedTotal;
    if (name == "fixed_per_class") return MemoryStrategy::FixedPerClass;
    throw ConfigError("unknown memory strategy '" + name + "'");
}

std::size_t MemoryBuffer::total_count() const {
    std::size_t total = 0;
    for (const auto& [class_id, rows] : store) total += rows.size();
    return total;
}

std::vector<std::size_t> herding_select(const Matrix& feats, std::size_t m) {
    const std::size_t n = feats.rows;
    const std::size_t d = feats.cols;
    if (n == 0 || m == 0) throw EmptyInput("herding needs rows and a positive budget");

    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) mu[c] += feats(i, c);
    for (double& x : mu) x /= static_cast<double>(n);

    const std::size_t picks = std::min(m, n);
    std::vector<std::size_t> chosen;
    std::vector<bool> used(n, false);
    std::vector<double> sum(d, 0.0);

    for (std::size_t step = 0; step < picks; ++step) {
        const double denom = static_cast<double>(step + 1);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (used[j]) continue;
            double dist2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double gap = mu[c] - (sum[c] + feats(j, c)) / denom;
                dist2 += gap * gap;
            }
            if (dist2 < best) {
                best = dist2;
                best_j = j;
            }
        }
        used[best_j] = true;
        chosen.push_back(best_j);
        for (std::size_t c = 0; c < d; ++c) sum[c] += feats(best_j, c);
    }
    return chosen;
}

void update_memory(MemoryBuffer& buffer, const LabeledDataset& task_data,
                   const EncoderState& encoder) {
    std::vector<int> new_classes;
    for (std::size_t i = 0; i < task_data.size(); ++i) {
        const int label = task_data.labels[i];
        if (buffer.store.count(label) == 0 &&
            std::find(new_classes.begin(), new_classes.end(), label) == new_classes.end())
            new_classes.push_back(label);
    }
    std::sort(new_classes.begin(), new_classes.end());

    std::size_t quota;
    if (buffer.strategy == MemoryStrategy::FixedTotal) {
        const std::size_t seen = buffer.classes_seen() + new_classes.size();
        quota = seen == 0 ? 0 : buffer.capacity / seen;
        if (quota == 0)
            throw CapacityZero("memory capacity " + std::to_string(buffer.capacity) +
                               " cannot hold " + std::to_string(seen) + " classes");
        for (auto& [class_id, rows] : buffer.store)
            if (rows.size() > quota) rows.resize(quota);
    } else {
        quota = buffer.capacity;
        if (quota == 0) throw CapacityZero("per-class memory budget is zero");
    }

    for (const int class_id : new_classes) {
        std::vector<std::size_t> row_ids;
        for (std::size_t i = 0; i < task_data.size(); ++i)
            if (task_data.labels[i] == class_id) row_ids.push_back(i);

        Matrix raw(row_ids.size(), task_data.input_dim());
        for (std::size_t r = 0; r < row_ids.size(); ++r)
            for (std::size_t c = 0; c < task_data.input_dim(); ++c)
                raw(r, c) = task_data.inputs(row_ids[r], c);

        const Matrix feats = encode(encoder, raw);
        const std::vector<std::size_t> picked = herding_select(feats, quota);

        std::vector<std::vector<double>> exemplars;
        for (const std::size_t r : picked) {
            std::vector<double> row(task_data.input_dim());
            for (std::size_t c = 0; c < task_data.input_dim(); ++c) row[c] = raw(r, c);
            exemplars.push_back(std::move(row));
        }
        buffer.store[class_id] = std::move(exemplars);
    }
}

double imbalance_ratio(const ClassCountTable& counts) {
    if (counts.empty()) throw EmptyInput("imbalance ratio of an empty count table");
    long lo = std::numeric_limits<long>::max();
    long hi = 0;
    for (const auto& [class_id, count] : counts) {
        if (count < 1)
            throw ZeroCount("class " + std::to_string(class_id) + " has count " +
                            std::to_string(count));
        lo = std::min(lo, count);
        hi = std::max(hi, count);
    }
    return static_cast<double>(hi) / static_cast<double>(lo);
}

} // namespace upcl
