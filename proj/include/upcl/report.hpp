#pragma once

#include <string>

#include "upcl/harness.hpp"

namespace upcl {

// Round-trip-exact decimal form of a double ("%.17g").
std::string format_double(double v);

// One header line plus one line per task:
// run_id,variant,seed,task,acc,ir
std::string metrics_csv(const std::string& run_id, const std::string& variant,
                        std::uint64_t seed, const MetricsRecord& metrics);

// Dense matrix dump: row-class,col-class,count.
std::string confusion_csv(const Matrix& confusion);

// Exemplar counts after every task: task,class_id,exemplar_count.
std::string memory_csv(const std::vector<TaskLog>& logs);

// Full machine-readable run record: aggregate metrics, per-task accuracy,
// the resolved config (head and margin overwritten with the variant that
// actually ran, so the echo replays the run), and the assignment history.
std::string final_json(const RunConfig& cfg, const VariantSpec& variant,
                       const RunResult& result);

} // namespace upcl
