#include "drselect/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "drselect/error.hpp"

namespace drselect::evaluator {

GroundTruth ground_truth(const std::map<std::string, Run>& runs, const Qrels& qrels,
                         const metrics::EvalMeasure& measure)
{
    if (runs.empty()) {
        throw ValidationError("ground truth needs at least one run");
    }
    GroundTruth gt;
    for (const auto& [dr, run] : runs) {
        if (run.entries.empty()) {
            // A run with no results anywhere is a legitimate zero.
            gt.scores[dr] = 0.0;
            continue;
        }
        bool shared = false;
        for (const auto& [qid, docs] : qrels.judgments) {
            shared = shared || run.entries.contains(qid);
        }
        gt.scores[dr] = shared ? metrics::mean_metric(run, qrels, measure) : 0.0;
    }
    gt.ranking = DrRanking::from_scores("oracle", gt.scores);
    return gt;
}

MethodResult evaluate_method(const DrRanking& predicted, const GroundTruth& gt)
{
    const auto pred_scores = predicted.scores();
    std::set<std::string> a;
    std::set<std::string> b;
    for (const auto& [id, s] : pred_scores) {
        a.insert(id);
    }
    for (const auto& [id, s] : gt.scores) {
        b.insert(id);
    }
    if (a != b) {
        std::string msg = "ranking '" + predicted.method_id() + "' and the ground truth cover different retrievers:";
        for (const auto& id : a) {
            if (!b.contains(id)) {
                msg += " +" + id;
            }
        }
        for (const auto& id : b) {
            if (!a.contains(id)) {
                msg += " -" + id;
            }
        }
        throw ValidationError(msg);
    }
    MethodResult r;
    r.kendall_tau = metrics::kendall_tau(predicted, gt.ranking);
    r.delta_e = 100.0 * metrics::delta_e(gt.scores, predicted);
    r.selected = predicted.top();
    return r;
}

void Report::add(const std::string& method, const std::string& collection, const MethodResult& result)
{
    if (std::find(methods_.begin(), methods_.end(), method) == methods_.end()) {
        methods_.push_back(method);
    }
    if (std::find(collections_.begin(), collections_.end(), collection) == collections_.end()) {
        collections_.push_back(collection);
    }
    cells_[{method, collection}] = result;
}

const MethodResult* Report::find(const std::string& method, const std::string& collection) const
{
    auto it = cells_.find({method, collection});
    return it == cells_.end() ? nullptr : &it->second;
}

namespace {

template <typename Field>
double row_mean(const Report& r, const std::string& method, Field field)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : r.collections()) {
        if (const auto* cell = r.find(method, c)) {
            sum += field(*cell);
            ++n;
        }
    }
    if (n == 0) {
        throw ValidationError("method '" + method + "' has no results");
    }
    return sum / static_cast<double>(n);
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s(buf);
    if (s.find_first_not_of("-0.") == std::string::npos) {
        s = std::string(buf + (buf[0] == '-' ? 1 : 0));  // no "-0.00"
    }
    return s;
}

std::string emit_csv(const Report& r)
{
    std::string out = "method,metric";
    for (const auto& c : r.collections()) {
        out += "," + csv_field(c);
    }
    out += ",Avrg\n";
    for (const auto& m : r.methods()) {
        for (int metric = 0; metric < 2; ++metric) {
            out += csv_field(m) + (metric == 0 ? ",kendall_tau" : ",delta_e");
            for (const auto& c : r.collections()) {
                out += ',';
                if (const auto* cell = r.find(m, c)) {
                    out += format_double(metric == 0 ? cell->kendall_tau : cell->delta_e);
                }
            }
            out += ',' + format_double(metric == 0 ? r.average_tau(m) : r.average_delta_e(m)) + '\n';
        }
    }
    return out;
}

std::string emit_json(const Report& r)
{
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : r.methods()) {
        nlohmann::json results = nlohmann::json::object();
        for (const auto& c : r.collections()) {
            if (const auto* cell = r.find(m, c)) {
                results[c] = {{"kendall_tau", cell->kendall_tau},
                              {"delta_e", cell->delta_e},
                              {"selected", cell->selected}};
            }
        }
        methods.push_back({{"method", m},
                           {"results", results},
                           {"average", {{"kendall_tau", r.average_tau(m)}, {"delta_e", r.average_delta_e(m)}}}});
    }
    const nlohmann::json doc{{"collections", r.collections()}, {"methods", methods}};
    return doc.dump(2) + "\n";
}

std::string emit_markdown(const Report& r)
{
    std::string out;
    auto table = [&](const char* title, bool tau) {
        out += std::string("### ") + title + "\n\n| Method |";
        for (const auto& c : r.collections()) {
            out += " " + c + " |";
        }
        out += " Avrg |\n|---|";
        for (std::size_t i = 0; i <= r.collections().size(); ++i) {
            out += "---:|";
        }
        out += '\n';
        for (const auto& m : r.methods()) {
            out += "| " + m + " |";
            for (const auto& c : r.collections()) {
                const auto* cell = r.find(m, c);
                out += " " + (cell ? fixed(tau ? cell->kendall_tau : cell->delta_e, tau ? 3 : 2) : "-") + " |";
            }
            out += " " + fixed(tau ? r.average_tau(m) : r.average_delta_e(m), tau ? 3 : 2) + " |\n";
        }
    };
    table("Kendall tau", true);
    out += '\n';
    table("Delta e (x100)", false);
    return out;
}

}  // namespace

double Report::average_tau(const std::string& method) const
{
    return row_mean(*this, method, [](const MethodResult& m) { return m.kendall_tau; });
}

double Report::average_delta_e(const std::string& method) const
{
    return row_mean(*this, method, [](const MethodResult& m) { return m.delta_e; });
}

std::string emit_report(const Report& report, Format format)
{
    if (report.methods().empty()) {
        throw ValidationError("empty report");
    }
    switch (format) {
    case Format::Csv:
        return emit_csv(report);
    case Format::Json:
        return emit_json(report);
    case Format::Markdown:
        return emit_markdown(report);
    }
    return {};
}

}  // namespace drselect::evaluator
