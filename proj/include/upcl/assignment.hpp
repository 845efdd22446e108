#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "upcl/common.hpp"
#include "upcl/geometry.hpp"

namespace upcl {

// Running per-class feature centers. Centers are convex combinations of
// unit-normalized features and are never re-normalized, so their norm
// stays at or below 1.
struct ClassCenters {
    struct Entry {
        std::vector<double> center;
        long count_seen = 0;
    };

    std::size_t dim = 0;
    double ema_factor = 0.9;
    std::map<int, Entry> by_class;

    ClassCenters() = default;
    ClassCenters(std::size_t d, double lambda) : dim(d), ema_factor(lambda) {}

    bool has(int class_id) const { return by_class.count(class_id) != 0; }
    const std::vector<double>& center(int class_id) const { return by_class.at(class_id).center; }
};

// class-id -> prototype row index; injective, entries never change once set
using Assignment = std::map<int, std::size_t>;

// Folds a batch of unit features into the per-class centers.
// For each class in the batch: mu' = batch class mean, then
// center <- lambda*center + (1-lambda)*mu'. A class seen for the first
// time takes center = mu' directly.
void update_centers(ClassCenters& centers, const FeatureBatch& feats);

// Minimum-cost row->column injection for an n x m cost matrix, n <= m.
// Ties are broken toward the lexicographically smallest column sequence.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

// Matches each new class center to a free prototype row by Euclidean
// distance and merges the result into `assignment`. Existing entries are
// returned untouched.
Assignment assign_new_classes(const ClassCenters& centers,
                              const PrototypeSet& protos,
                              const Assignment& assignment,
                              const std::vector<int>& new_class_ids);

// True iff the last `window` entries of `history` are identical.
bool has_stabilized(const std::vector<Assignment>& history, std::size_t window);

} // namespace upcl
