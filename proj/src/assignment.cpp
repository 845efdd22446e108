#include "upcl/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "upcl/errors.hpp"

namespace upcl {

void update_centers(ClassCenters& centers, const FeatureBatch& feats) {
    if (feats.dim() != centers.dim)
        throw DimensionMismatch("feature dim " + std::to_string(feats.dim()) +
                                " does not match center dim " + std::to_string(centers.dim));

    std::map<int, std::pair<std::vector<double>, long>> sums;
    for (std::size_t i = 0; i < feats.size(); ++i) {
        auto& [sum, count] = sums[feats.labels[i]];
        if (sum.empty()) sum.assign(centers.dim, 0.0);
        const double* row = feats.feats.row(i);
        for (std::size_t c = 0; c < centers.dim; ++c) sum[c] += row[c];
        ++count;
    }

    const double lambda = centers.ema_factor;
    for (auto& [class_id, acc] : sums) {
        auto& [sum, count] = acc;
        for (std::size_t c = 0; c < centers.dim; ++c) sum[c] /= static_cast<double>(count);

        auto it = centers.by_class.find(class_id);
        if (it == centers.by_class.end()) {
            centers.by_class[class_id] = ClassCenters::Entry{std::move(sum), count};
        } else {
            auto& entry = it->second;
            for (std::size_t c = 0; c < centers.dim; ++c)
                entry.center[c] = lambda * entry.center[c] + (1.0 - lambda) * sum[c];
            entry.count_seen += count;
        }
    }
}

namespace {

// Potentials-based shortest-augmenting-path solver for rectangular
// assignment, rows <= cols. Returns the optimal total cost; `match_out`,
// when non-null, receives the column picked for each row.
double hungarian_value(const Matrix& cost,
                       const std::vector<std::size_t>& rows,
                       const std::vector<std::size_t>& cols,
                       std::vector<std::size_t>* match_out = nullptr) {
    const std::size_t n = rows.size();
    const std::size_t m = cols.size();
    if (n == 0) {
        if (match_out) match_out->clear();
        return 0.0;
    }

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);

    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            std::size_t j1 = 0;
            double delta = kInf;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::size_t> match(n, 0);
    double total = 0.0;
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] == 0) continue;
        match[p[j] - 1] = j - 1;
        total += cost(rows[p[j] - 1], cols[j - 1]);
    }
    if (match_out) *match_out = std::move(match);
    return total;
}

} // namespace

std::vector<std::size_t> solve_assignment(const Matrix& cost) {
    const std::size_t n = cost.rows;
    const std::size_t m = cost.cols;
    if (n > m)
        throw InfeasibleShape("cost matrix has " + std::to_string(n) + " rows but only " +
                              std::to_string(m) + " columns");
    if (n == 0) return {};
    for (double x : cost.data)
        if (!std::isfinite(x)) throw InfeasibleShape("cost matrix contains non-finite entries");

    std::vector<std::size_t> all_rows(n), all_cols(m);
    for (std::size_t i = 0; i < n; ++i) all_rows[i] = i;
    for (std::size_t j = 0; j < m; ++j) all_cols[j] = j;

    const double best = hungarian_value(cost, all_rows, all_cols);
    const double tol = 1e-9 * std::max(1.0, std::abs(best));

    // Fix rows one at a time onto the smallest column that still admits an
    // optimal completion, which yields the lexicographically smallest
    // optimal column sequence.
    std::vector<std::size_t> result(n, 0);
    std::vector<std::size_t> free_cols = all_cols;
    double prefix = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<std::size_t> rest_rows;
        for (std::size_t i = r + 1; i < n; ++i) rest_rows.push_back(i);

        bool fixed = false;
        for (std::size_t ci = 0; ci < free_cols.size(); ++ci) {
            const std::size_t c = free_cols[ci];
            std::vector<std::size_t> rest_cols;
            for (std::size_t k = 0; k < free_cols.size(); ++k)
                if (k != ci) rest_cols.push_back(free_cols[k]);
            const double completion = hungarian_value(cost, rest_rows, rest_cols);
            if (prefix + cost(r, c) + completion <= best + tol) {
                result[r] = c;
                prefix += cost(r, c);
                free_cols.erase(free_cols.begin() + static_cast<std::ptrdiff_t>(ci));
                fixed = true;
                break;
            }
        }
        if (!fixed) throw InfeasibleShape("assignment refinement failed to extend a prefix");
    }
    return result;
}

Assignment assign_new_classes(const ClassCenters& centers,
                              const PrototypeSet& protos,
                              const Assignment& assignment,
                              const std::vector<int>& new_class_ids) {
    std::vector<bool> taken(protos.count(), false);
    for (const auto& [class_id, row] : assignment) taken[row] = true;
    std::vector<std::size_t> free_rows;
    for (std::size_t r = 0; r < protos.count(); ++r)
        if (!taken[r]) free_rows.push_back(r);

    if (new_class_ids.size() > free_rows.size())
        throw NotEnoughPrototypes(std::to_string(new_class_ids.size()) + " new classes but only " +
                                  std::to_string(free_rows.size()) + " free prototypes");

    Matrix cost(new_class_ids.size(), free_rows.size());
    for (std::size_t i = 0; i < new_class_ids.size(); ++i) {
        const int class_id = new_class_ids[i];
        if (!centers.has(class_id))
            throw EmptyInput("class " + std::to_string(class_id) + " has no feature center");
        const auto& mu = centers.center(class_id);
        if (mu.size() != protos.dim)
            throw DimensionMismatch("center dim does not match prototype dim");
        for (std::size_t j = 0; j < free_rows.size(); ++j) {
            const double* phi = protos.rows.row(free_rows[j]);
            cost(i, j) = std::sqrt(squared_distance(mu.data(), phi, protos.dim));
        }
    }

    const std::vector<std::size_t> picked = solve_assignment(cost);
    Assignment merged = assignment;
    for (std::size_t i = 0; i < new_class_ids.size(); ++i)
        merged[new_class_ids[i]] = free_rows[picked[i]];
    return merged;
}

bool has_stabilized(const std::vector<Assignment>& history, std::size_t window) {
    if (window == 0) return true;
    if (history.size() < window) return false;
    const Assignment& last = history.back();
    for (std::size_t k = 2; k <= window; ++k)
        if (history[history.size() - k] != last) return false;
    return true;
}

} // namespace upcl
