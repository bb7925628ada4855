#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drselect/data_model.hpp"
#include "drselect/metrics.hpp"

namespace drselect::evaluator {

struct GroundTruth {
    std::map<std::string, double> scores;  ///< dr id -> mean measure over the real queries
    DrRanking ranking;                      ///< method id "oracle"
};

/// Every qrels query counts; a query a run lacks scores 0.
GroundTruth ground_truth(const std::map<std::string, Run>& runs, const Qrels& qrels,
                         const metrics::EvalMeasure& measure);

struct MethodResult {
    double kendall_tau = 0.0;
    double delta_e = 0.0;  ///< in measure points x 100
    std::string selected;
};

/// Throws ValidationError unless both rankings cover the same retrievers.
MethodResult evaluate_method(const DrRanking& predicted, const GroundTruth& gt);

/// Methods as rows, collections as columns. Rows and columns keep
/// insertion order.
class Report {
public:
    void add(const std::string& method, const std::string& collection, const MethodResult& result);

    const std::vector<std::string>& methods() const noexcept { return methods_; }
    const std::vector<std::string>& collections() const noexcept { return collections_; }
    const MethodResult* find(const std::string& method, const std::string& collection) const;

    /// Means over the collections the method was evaluated on.
    double average_tau(const std::string& method) const;
    double average_delta_e(const std::string& method) const;

private:
    std::vector<std::string> methods_;
    std::vector<std::string> collections_;
    std::map<std::pair<std::string, std::string>, MethodResult> cells_;
};

enum class Format { Csv, Json, Markdown };

/// Throws ValidationError on an empty report. Output is a pure function of
/// the report.
std::string emit_report(const Report& report, Format format);

}  // namespace drselect::evaluator
