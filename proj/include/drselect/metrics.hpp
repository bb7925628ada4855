#pragma once

#include <map>
#include <span>
#include <string>

#include "drselect/data_model.hpp"

namespace drselect::metrics {

enum class Gain {
    Linear,       ///< gain = grade (trec_eval)
    Exponential,  ///< gain = 2^grade - 1
};

/// nDCG at a cutoff; the only measure the toolkit ranks retrievers by.
struct EvalMeasure {
    int cutoff = 10;
    Gain gain = Gain::Linear;
};

/// DCG over the first k of `ranked` with a log2(i + 1) discount, divided by
/// the DCG of all judged docs sorted by grade. 0 when nothing is relevant.
double ndcg_at_k(std::span<const std::string> ranked, const std::map<std::string, int>* judgments, int k,
                 Gain gain = Gain::Linear);

/// Mean over the queries of `qrels`; queries the run lacks contribute 0.
double mean_metric(const Run& run, const Qrels& qrels, const EvalMeasure& measure);

/// Extrapolated rank-biased overlap evaluated at depth min(|a|, |b|).
double rbo(std::span<const std::string> a, std::span<const std::string> b, double p);

/// Tau-b over retriever pairs, ties being equal method scores. Both
/// rankings must hold the same ids. Returns 1 for fewer than two ids and 0
/// when one side is entirely tied.
double kendall_tau(const DrRanking& a, const DrRanking& b);

/// Ground-truth best score minus the ground-truth score of the predicted
/// top retriever. Never negative; 0 iff the pick attains the best score.
double delta_e(const std::map<std::string, double>& gt_scores, const DrRanking& predicted);

}  // namespace drselect::metrics
