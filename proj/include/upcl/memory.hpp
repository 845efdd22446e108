#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "upcl/common.hpp"
#include "upcl/encoder.hpp"

namespace upcl {

struct LabeledDataset;

enum class MemoryStrategy { FixedTotal, FixedPerClass };

const char* memory_strategy_name(MemoryStrategy s);
MemoryStrategy memory_strategy_from_name(const std::string& name);

// Rehearsal buffer of raw inputs, kept in herding order per class.
// `capacity` is the total budget under FixedTotal and the per-class budget
// under FixedPerClass.
struct MemoryBuffer {
    MemoryStrategy strategy = MemoryStrategy::FixedTotal;
    std::size_t capacity = 0;
    std::map<int, std::vector<std::vector<double>>> store;

    std::size_t classes_seen() const { return store.size(); }
    std::size_t total_count() const;
};

// class-id -> training-sample count over task data plus memory
using ClassCountTable = std::map<int, long>;

// Greedy iCaRL selection: repeatedly add the row that keeps the running
// mean of the chosen rows closest to the full mean. Returns min(m, n)
// indices in selection order; ties go to the smallest index.
std::vector<std::size_t> herding_select(const Matrix& feats, std::size_t m);

// Folds the current task's classes into the buffer. FixedTotal recomputes
// the per-class quota floor(capacity / classes seen), truncates old
// classes to it, and herds quota exemplars per new class. FixedPerClass
// herds `capacity` exemplars per new class and leaves old classes alone.
void update_memory(MemoryBuffer& buffer, const LabeledDataset& task_data,
                   const EncoderState& encoder);

// max class count over min class count
double imbalance_ratio(const ClassCountTable& counts);

} // namespace upcl
