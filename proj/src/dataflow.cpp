#include "upcl/dataflow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "upcl/errors.hpp"
#include "upcl/geometry.hpp"

namespace upcl {

BlobPair gen_blobs(int class_count, std::size_t input_dim, std::size_t n_train,
                   std::size_t n_test, double sigma, Rng& rng) {
    if (class_count < 2) throw ConfigError("blob generator needs at least two classes");
    if (sigma <= 0.0) throw ConfigError("blob spread must be positive");

    const std::size_t C = static_cast<std::size_t>(class_count);
    const PrototypeSet means = muller_random(C, input_dim, rng);

    auto draw = [&](std::size_t per_class) {
        LabeledDataset data;
        data.class_count = class_count;
        data.inputs = Matrix(C * per_class, input_dim);
        std::size_t row = 0;
        for (std::size_t k = 0; k < C; ++k) {
            const double* mean = means.rows.row(k);
            for (std::size_t s = 0; s < per_class; ++s, ++row) {
                double* out = data.inputs.row(row);
                for (std::size_t c = 0; c < input_dim; ++c)
                    out[c] = mean[c] + sigma * rng.gaussian();
                data.labels.push_back(static_cast<int>(k));
            }
        }
        return data;
    };

    BlobPair pair;
    pair.train = draw(n_train);
    pair.test = draw(n_test);
    return pair;
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t get_be_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw TruncatedFile("'" + path + "' ended inside a header");
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void put_be_u32(std::ofstream& out, std::uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>((x >> 24) & 0xff),
                          static_cast<unsigned char>((x >> 16) & 0xff),
                          static_cast<unsigned char>((x >> 8) & 0xff),
                          static_cast<unsigned char>(x & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace

LabeledDataset read_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw TruncatedFile("cannot open '" + images_path + "'");
    if (get_be_u32(img, images_path) != kImageMagic)
        throw BadMagic("'" + images_path + "' is not an image file");
    const std::uint32_t n = get_be_u32(img, images_path);
    const std::uint32_t height = get_be_u32(img, images_path);
    const std::uint32_t width = get_be_u32(img, images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw TruncatedFile("cannot open '" + labels_path + "'");
    if (get_be_u32(lab, labels_path) != kLabelMagic)
        throw BadMagic("'" + labels_path + "' is not a label file");
    const std::uint32_t label_n = get_be_u32(lab, labels_path);
    if (label_n != n)
        throw CountMismatch(std::to_string(n) + " images but " + std::to_string(label_n) +
                            " labels");

    const std::size_t dim = static_cast<std::size_t>(height) * width;
    std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * dim);
    if (!img.read(reinterpret_cast<char*>(pixels.data()),
                  static_cast<std::streamsize>(pixels.size())))
        throw TruncatedFile("'" + images_path + "' ended inside the pixel payload");
    std::vector<unsigned char> raw_labels(n);
    if (!lab.read(reinterpret_cast<char*>(raw_labels.data()),
                  static_cast<std::streamsize>(raw_labels.size())))
        throw TruncatedFile("'" + labels_path + "' ended inside the label payload");

    LabeledDataset data;
    data.inputs = Matrix(n, dim);
    for (std::size_t idx = 0; idx < pixels.size(); ++idx)
        data.inputs.data[idx] = static_cast<double>(pixels[idx]) / 255.0;
    int max_label = 0;
    for (unsigned char l : raw_labels) {
        data.labels.push_back(static_cast<int>(l));
        max_label = std::max(max_label, static_cast<int>(l));
    }
    data.class_count = n == 0 ? 0 : max_label + 1;
    return data;
}

void write_idx(const LabeledDataset& data, const std::string& images_path,
               const std::string& labels_path, std::size_t height, std::size_t width) {
    if (height * width != data.input_dim())
        throw DimensionMismatch("image shape " + std::to_string(height) + "x" +
                                std::to_string(width) + " does not match input dim " +
                                std::to_string(data.input_dim()));

    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw ConfigError("cannot open '" + images_path + "' for writing");
    put_be_u32(img, kImageMagic);
    put_be_u32(img, static_cast<std::uint32_t>(data.size()));
    put_be_u32(img, static_cast<std::uint32_t>(height));
    put_be_u32(img, static_cast<std::uint32_t>(width));
    for (double v : data.inputs.data) {
        const double clamped = std::min(1.0, std::max(0.0, v));
        const unsigned char byte = static_cast<unsigned char>(std::lround(clamped * 255.0));
        img.write(reinterpret_cast<const char*>(&byte), 1);
    }

    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw ConfigError("cannot open '" + labels_path + "' for writing");
    put_be_u32(lab, kLabelMagic);
    put_be_u32(lab, static_cast<std::uint32_t>(data.size()));
    for (int l : data.labels) {
        const unsigned char byte = static_cast<unsigned char>(l);
        lab.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

TaskSchedule make_schedule(int class_count, std::size_t task_count, Rng& rng) {
    if (class_count < 1 || task_count < 1)
        throw ConfigError("schedule needs at least one class and one task");
    if (static_cast<std::size_t>(class_count) % task_count != 0)
        throw IndivisibleSplit(std::to_string(task_count) + " tasks do not divide " +
                               std::to_string(class_count) + " classes");

    TaskSchedule schedule;
    schedule.class_order.resize(static_cast<std::size_t>(class_count));
    for (int k = 0; k < class_count; ++k) schedule.class_order[static_cast<std::size_t>(k)] = k;
    rng.shuffle(schedule.class_order);

    const std::size_t per_task = static_cast<std::size_t>(class_count) / task_count;
    for (std::size_t t = 0; t < task_count; ++t)
        schedule.groups.emplace_back(schedule.class_order.begin() + static_cast<std::ptrdiff_t>(t * per_task),
                                     schedule.class_order.begin() + static_cast<std::ptrdiff_t>((t + 1) * per_task));
    return schedule;
}

LabeledDataset filter_classes(const LabeledDataset& data, const std::vector<int>& classes) {
    const std::set<int> keep(classes.begin(), classes.end());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (keep.count(data.labels[i])) rows.push_back(i);

    LabeledDataset out;
    out.class_count = data.class_count;
    out.inputs = Matrix(rows.size(), data.input_dim());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < data.input_dim(); ++c)
            out.inputs(r, c) = data.inputs(rows[r], c);
        out.labels.push_back(data.labels[rows[r]]);
    }
    return out;
}

TaskTrainSet task_train_set(const LabeledDataset& dataset, const TaskSchedule& schedule,
                            std::size_t t, const MemoryBuffer& memory) {
    if (t >= schedule.task_count())
        throw ConfigError("task index " + std::to_string(t) + " out of range");

    const LabeledDataset fresh = filter_classes(dataset, schedule.groups[t]);
    std::size_t extra = 0;
    for (const auto& [class_id, rows] : memory.store) extra += rows.size();

    TaskTrainSet out;
    out.data.class_count = dataset.class_count;
    out.data.inputs = Matrix(fresh.size() + extra, dataset.input_dim());
    for (std::size_t i = 0; i < fresh.size(); ++i) {
        for (std::size_t c = 0; c < dataset.input_dim(); ++c)
            out.data.inputs(i, c) = fresh.inputs(i, c);
        out.data.labels.push_back(fresh.labels[i]);
    }
    std::size_t row = fresh.size();
    for (const auto& [class_id, exemplars] : memory.store) {
        for (const auto& x : exemplars) {
            for (std::size_t c = 0; c < dataset.input_dim(); ++c) out.data.inputs(row, c) = x[c];
            out.data.labels.push_back(class_id);
            ++row;
        }
    }

    for (const int label : out.data.labels) ++out.counts[label];
    return out;
}

} // namespace upcl
