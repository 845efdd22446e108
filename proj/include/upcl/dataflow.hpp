#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "upcl/common.hpp"
#include "upcl/memory.hpp"
#include "upcl/rng.hpp"

namespace upcl {

// class_count is the size of the label space; labels lie in [0, class_count)
struct LabeledDataset {
    Matrix inputs;
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const { return inputs.rows; }
    std::size_t input_dim() const { return inputs.cols; }
};

// fixed random class order split into equal contiguous groups, one per task
struct TaskSchedule {
    std::vector<int> class_order;
    std::vector<std::vector<int>> groups;

    std::size_t task_count() const { return groups.size(); }
};

// Isotropic Gaussian clusters around C unit-vector means.
struct BlobPair {
    LabeledDataset train;
    LabeledDataset test;
};

BlobPair gen_blobs(int class_count, std::size_t input_dim, std::size_t n_train,
                   std::size_t n_test, double sigma, Rng& rng);

LabeledDataset read_idx(const std::string& images_path, const std::string& labels_path);

// Writes inputs as height x width u8 images (values clamped to [0,1] and
// scaled by 255) plus a label file, in the same layout read_idx parses.
void write_idx(const LabeledDataset& data, const std::string& images_path,
               const std::string& labels_path, std::size_t height, std::size_t width);

TaskSchedule make_schedule(int class_count, std::size_t task_count, Rng& rng);

// rows of `data` whose label is in `classes`, in original order
LabeledDataset filter_classes(const LabeledDataset& data, const std::vector<int>& classes);

struct TaskTrainSet {
    LabeledDataset data;
    ClassCountTable counts;
};

// Union of task-t samples and every stored exemplar, with per-class counts.
TaskTrainSet task_train_set(const LabeledDataset& dataset, const TaskSchedule& schedule,
                            std::size_t t, const MemoryBuffer& memory);

} // namespace upcl
