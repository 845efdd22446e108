#include "upcl/report.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace upcl {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

std::string metrics_csv(const std::string& run_id, const std::string& variant,
                        std::uint64_t seed, const MetricsRecord& metrics) {
    std::ostringstream out;
    out << "run_id,variant,seed,task,acc,ir\n";
    for (std::size_t t = 0; t < metrics.task_acc.size(); ++t)
        out << run_id << ',' << variant << ',' << seed << ',' << t << ','
            << format_double(metrics.task_acc[t]) << ',' << format_double(metrics.ir[t]) << '\n';
    return out.str();
}

std::string confusion_csv(const Matrix& confusion) {
    std::ostringstream out;
    out << "row-class,col-class,count\n";
    for (std::size_t r = 0; r < confusion.rows; ++r)
        for (std::size_t c = 0; c < confusion.cols; ++c)
            out << r << ',' << c << ',' << static_cast<long long>(confusion(r, c)) << '\n';
    return out.str();
}

std::string memory_csv(const std::vector<TaskLog>& logs) {
    std::ostringstream out;
    out << "task,class_id,exemplar_count\n";
    for (const TaskLog& log : logs)
        for (const auto& [class_id, count] : log.memory_counts)
            out << log.task << ',' << class_id << ',' << count << '\n';
    return out.str();
}

std::string final_json(const RunConfig& cfg, const VariantSpec& variant,
                       const RunResult& result) {
    RunConfig echoed = cfg;
    echoed.head = variant.head;
    echoed.margin_mode = variant.margin;

    nlohmann::json root;
    root["run_id"] = run_id(echoed, variant_name(variant));
    root["variant"] = variant_name(variant);
    root["a_last"] = result.metrics.a_last;
    root["a_avg"] = result.metrics.a_avg;
    root["task_acc"] = result.metrics.task_acc;
    root["ir"] = result.metrics.ir;
    root["per_class_acc"] = result.metrics.per_class_acc;
    root["class_order"] = result.schedule.class_order;
    root["config"] = nlohmann::json::parse(config_to_json(echoed));

    nlohmann::json history = nlohmann::json::array();
    for (const TaskLog& log : result.task_logs)
        for (const AssignmentEvent& ev : log.assignment_events) {
            nlohmann::json entry;
            entry["task"] = ev.task;
            entry["epoch"] = ev.epoch;
            nlohmann::json map = nlohmann::json::object();
            for (const auto& [class_id, row] : ev.map) map[std::to_string(class_id)] = row;
            entry["map"] = map;
            history.push_back(entry);
        }
    root["assignment_history"] = history;
    return root.dump(2);
}

} // namespace upcl
