#include <sstream>

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "drselect/baselines.hpp"
#include "drselect/cli.hpp"
#include "drselect/error.hpp"
#include "drselect/fusion.hpp"
#include "drselect/llm_gateway.hpp"
#include "drselect/metrics.hpp"

namespace py = pybind11;
using namespace drselect;

namespace {

baselines::QppConfig qpp_config(std::size_t top_k, bool normalize, std::size_t norm_depth, double fraction,
                                std::size_t entropy_top_k)
{
    baselines::QppConfig cfg;
    cfg.top_k = top_k;
    cfg.normalize = normalize;
    cfg.norm_depth = norm_depth;
    cfg.sigma_max_fraction = fraction;
    cfg.entropy_top_k = entropy_top_k;
    cfg.validate();
    return cfg;
}

using Predictor = std::optional<double> (*)(std::span<const double>, const baselines::QppConfig&);

void def_predictor(py::module_& m, const char* name, Predictor fn)
{
    m.def(
        name,
        [fn](const std::vector<double>& scores, std::size_t top_k, bool normalize, std::size_t norm_depth,
             double sigma_max_fraction, std::size_t entropy_top_k) {
            return fn(scores, qpp_config(top_k, normalize, norm_depth, sigma_max_fraction, entropy_top_k));
        },
        py::arg("scores"), py::arg("top_k") = 100, py::arg("normalize") = false, py::arg("norm_depth") = 100,
        py::arg("sigma_max_fraction") = 0.5, py::arg("entropy_top_k") = 10);
}

}  // namespace

PYBIND11_MODULE(_drselect, m)
{
    // translators run newest first, so the base class goes in first
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

    m.def(
        "rrf_fuse",
        [](const std::vector<std::vector<std::string>>& rankings, double k) {
            std::vector<std::pair<std::string, double>> out;
            for (const auto& it : fusion::rrf_fuse(rankings, k).items) {
                out.emplace_back(it.item_id, it.score);
            }
            return out;
        },
        py::arg("rankings"), py::arg("k") = fusion::kDefaultRrfK,
        "Fused (item_id, score) pairs, best first.");

    m.def(
        "rbo", [](const std::vector<std::string>& a, const std::vector<std::string>& b, double p) {
            return metrics::rbo(a, b, p);
        },
        py::arg("a"), py::arg("b"), py::arg("p") = 0.9);

    m.def(
        "ndcg_at_k",
        [](const std::vector<std::string>& ranked, const std::map<std::string, int>& grades, int k, bool exponential) {
            return metrics::ndcg_at_k(ranked, &grades, k, exponential ? metrics::Gain::Exponential : metrics::Gain::Linear);
        },
        py::arg("ranked"), py::arg("grades"), py::arg("k") = 10, py::arg("exponential") = false);

    m.def(
        "kendall_tau",
        [](const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
            return metrics::kendall_tau(DrRanking::from_scores("a", a), DrRanking::from_scores("b", b));
        },
        py::arg("a"), py::arg("b"), "Tau-b between two {id: score} maps over the same ids.");

    m.def(
        "delta_e",
        [](const std::map<std::string, double>& truth, const std::map<std::string, double>& predicted) {
            return metrics::delta_e(truth, DrRanking::from_scores("predicted", predicted));
        },
        py::arg("truth"), py::arg("predicted"));

    m.def(
        "rank_scores",
        [](const std::map<std::string, double>& scores) { return DrRanking::from_scores("scores", scores).order(); },
        py::arg("scores"), "Ids by score descending, ties by id.");

    def_predictor(m, "wig", &baselines::wig);
    def_predictor(m, "nqc", &baselines::nqc);
    def_predictor(m, "smv", &baselines::smv);
    def_predictor(m, "sigma", &baselines::sigma);
    def_predictor(m, "sigma_max", &baselines::sigma_max);
    def_predictor(m, "binary_entropy", &baselines::binary_entropy);

    m.def(
        "setwise_sort",
        [](std::vector<std::string> items, int set_size, const std::function<int(std::vector<std::string>)>& pick) {
            return llm::setwise_heap_sort(std::move(items), set_size, [&](std::span<const std::string> group) {
                return static_cast<std::size_t>(pick(std::vector<std::string>(group.begin(), group.end())));
            });
        },
        py::arg("items"), py::arg("set_size"), py::arg("pick"),
        "Sorts best first; pick(group) returns the index of the best member.");

    m.def(
        "parse_run",
        [](const std::string& text) {
            const Run run = parse_run(std::string_view(text));
            std::map<std::string, std::vector<std::pair<std::string, double>>> out;
            for (const auto& [qid, entries] : run.entries) {
                for (const auto& e : entries) {
                    out[qid].emplace_back(e.doc_id, e.score);
                }
            }
            return py::make_tuple(run.dr_id, out);
        },
        py::arg("text"), "(runtag, {query_id: [(doc_id, score), ...]}) from TREC run text.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out;
            std::ostringstream err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = cli::run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one drselect command; returns (exit_code, stdout, stderr).");
}
