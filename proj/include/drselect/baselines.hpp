#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drselect/data_model.hpp"
#include "drselect/larmor.hpp"
#include "drselect/retrieval.hpp"

namespace drselect::baselines {

struct QppConfig {
    std::size_t top_k = 100;
    bool normalize = false;
    std::size_t norm_depth = 100;      ///< docs averaged into the normalizing factor
    double sigma_max_fraction = 0.5;
    std::size_t entropy_top_k = 10;
    int alteration_variants = 5;
    int alteration_depth = 1000;       ///< depth of the lists retrieved for altered queries
    double rbo_p = 0.9;
    double k_rrf = fusion::kDefaultRrfK;
    std::uint64_t seed = 0;
    int workers = 1;

    void validate() const;
    /// Depth the real-query runs must be retrieved at for every predictor.
    int required_depth() const;
};

enum class Predictor { Entropy, Wig, Nqc, Smv, Sigma, SigmaMax, Clarity };

/// "entropy", "wig", "nqc", "smv", "sigma", "sigma-max", "clarity"
std::string_view to_string(Predictor p);
std::optional<Predictor> parse_predictor(std::string_view name);
/// Lower values predict a better retriever.
bool lower_is_better(Predictor p);
/// Whether `--normalize` changes the predictor.
bool supports_normalization(Predictor p);
/// Method id used in ranking files, e.g. "nqc" or "nqc-norm".
std::string method_id(Predictor p, bool normalize);

// Per-query predictors over one ranked score list (non-increasing). nullopt
// means the query cannot be scored and is skipped.

/// Mean of the top norm_depth scores.
std::optional<double> normalizing_factor(std::span<const double> scores, const QppConfig& cfg);

/// Shannon entropy of the softmax over the top entropy_top_k scores.
std::optional<double> binary_entropy(std::span<const double> scores, const QppConfig& cfg);
/// Mean of the top_k scores, minus the normalizing factor when normalizing.
std::optional<double> wig(std::span<const double> scores, const QppConfig& cfg);
/// Population standard deviation of the top_k scores.
std::optional<double> nqc(std::span<const double> scores, const QppConfig& cfg);
/// (1/k) sum s_i |ln(s_i / mean)| over the top_k scores; needs positive scores.
std::optional<double> smv(std::span<const double> scores, const QppConfig& cfg);
/// Largest std(top j) / j over prefixes j = 2..top_k.
std::optional<double> sigma(std::span<const double> scores, const QppConfig& cfg);
/// std / mean of the scores at or above sigma_max_fraction of the top score.
std::optional<double> sigma_max(std::span<const double> scores, const QppConfig& cfg);
/// KL divergence between the top-k language model (Jelinek-Mercer mixture,
/// lambda 0.6) and the corpus model. Docs unknown to `stats` or empty are
/// left out.
std::optional<double> clarity(std::span<const std::string> top_docs, const LexicalIndex& stats,
                              const QppConfig& cfg);

inline constexpr double kClarityLambda = 0.6;

struct PredictorScore {
    double mean = 0.0;
    std::size_t scored = 0;
    std::size_t skipped = 0;
};

/// Mean predictor value over the queries of a run. Throws when no query
/// can be scored. Clarity needs `stats`.
PredictorScore score_run(const Run& run, Predictor p, const QppConfig& cfg, const LexicalIndex* stats = nullptr);

/// Ranks the retrievers by their mean predictor value. Lower-is-better
/// predictors store the negated mean so the ranking still sorts descending.
/// `skipped` (optional) receives dr id -> skipped query count.
DrRanking qpp_ranking(const std::map<std::string, Run>& runs, Predictor p, const QppConfig& cfg,
                      const LexicalIndex* stats = nullptr, std::map<std::string, std::size_t>* skipped = nullptr);

/// Ranking from reported source-domain scores, a JSON object {dr_id: score}.
DrRanking msmarco_perf(std::string_view perf_json, const std::vector<std::string>& pool_ids);

/// Robustness to single-token deletions: for each query, the top_k docs of
/// the original query are rescored under every altered query and the value
/// is the mean per-doc standard deviation. Lower is better; stored negated.
DrRanking query_alteration(const larmor::Pool& pool, const std::vector<Query>& queries, const QppConfig& cfg);

/// Per query, RRF over all retrievers' lists is the reference; each
/// retriever scores its mean RBO against it. Every run may only hold queries
/// from `query_ids`; a missing query is an empty list.
DrRanking qpp_fusion(const std::map<std::string, Run>& runs, const std::vector<std::string>& query_ids,
                     const QppConfig& cfg);

}  // namespace drselect::baselines
