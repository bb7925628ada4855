#include "drselect/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <unordered_set>
#include <utility>
#include <vector>

#include "drselect/error.hpp"

namespace drselect::metrics {

namespace {

double gain_of(int grade, Gain gain)
{
    if (grade <= 0) {
        return 0.0;
    }
    return gain == Gain::Linear ? static_cast<double>(grade) : std::exp2(static_cast<double>(grade)) - 1.0;
}

}  // namespace

double ndcg_at_k(std::span<const std::string> ranked, const std::map<std::string, int>* judgments, int k, Gain gain)
{
    if (k < 1) {
        throw ValidationError("nDCG cutoff must be >= 1");
    }
    if (judgments == nullptr || judgments->empty()) {
        return 0.0;
    }
    std::vector<int> grades;
    grades.reserve(judgments->size());
    for (const auto& [doc, g] : *judgments) {
        grades.push_back(g);
    }
    std::sort(grades.begin(), grades.end(), std::greater<>());
    double ideal = 0.0;
    for (std::size_t i = 0; i < grades.size() && i < static_cast<std::size_t>(k); ++i) {
        ideal += gain_of(grades[i], gain) / std::log2(static_cast<double>(i) + 2.0);
    }
    if (ideal <= 0.0) {
        return 0.0;
    }
    double dcg = 0.0;
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i) {
        if (!seen.insert(ranked[i]).second) {
            throw ValidationError("duplicate doc '" + ranked[i] + "' in ranked list");
        }
        auto it = judgments->find(ranked[i]);
        if (it != judgments->end()) {
            dcg += gain_of(it->second, gain) / std::log2(static_cast<double>(i) + 2.0);
        }
    }
    return dcg / ideal;
}

double mean_metric(const Run& run, const Qrels& qrels, const EvalMeasure& measure)
{
    if (run.entries.empty()) {
        throw ValidationError("mean_metric: run '" + run.dr_id + "' is empty");
    }
    if (qrels.judgments.empty()) {
        throw ValidationError("mean_metric: qrels are empty");
    }
    bool shared = false;
    double sum = 0.0;
    for (const auto& [qid, docs] : qrels.judgments) {
        auto it = run.entries.find(qid);
        if (it == run.entries.end()) {
            continue;
        }
        shared = true;
        std::vector<std::string> ids;
        ids.reserve(std::min<std::size_t>(it->second.size(), static_cast<std::size_t>(measure.cutoff)));
        for (std::size_t i = 0; i < it->second.size() && i < static_cast<std::size_t>(measure.cutoff); ++i) {
            ids.push_back(it->second[i].doc_id);
        }
        sum += ndcg_at_k(ids, &docs, measure.cutoff, measure.gain);
    }
    if (!shared) {
        throw ValidationError("mean_metric: run '" + run.dr_id + "' and qrels share no query");
    }
    return sum / static_cast<double>(qrels.judgments.size());
}

double rbo(std::span<const std::string> a, std::span<const std::string> b, double p)
{
    if (a.empty() || b.empty()) {
        throw ValidationError("rbo: empty list");
    }
    if (!(p > 0.0 && p < 1.0)) {
        throw ValidationError("rbo: p must lie in (0, 1)");
    }
    const std::size_t d = std::min(a.size(), b.size());
    std::unordered_set<std::string_view> seen_a;
    std::unordered_set<std::string_view> seen_b;
    std::size_t overlap = 0;
    bool identical = true;
    double weight = 1.0;  // p^i
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        if (!seen_a.insert(a[i]).second || !seen_b.insert(b[i]).second) {
            throw ValidationError("rbo: duplicate item in input list");
        }
        if (a[i] == b[i]) {
            ++overlap;
        } else {
            identical = false;
            overlap += seen_b.contains(a[i]) ? 1 : 0;
            overlap += seen_a.contains(b[i]) ? 1 : 0;
        }
        weight *= p;
        sum += static_cast<double>(overlap) / static_cast<double>(i + 1) * weight;
    }
    if (identical) {
        return 1.0;
    }
    const double xd = static_cast<double>(overlap) / static_cast<double>(d);
    return xd * weight + (1.0 - p) / p * sum;
}

namespace {

// Merge sort counting exchanges (discordant pairs) on the second key.
std::uint64_t count_exchanges(std::vector<double>& v, std::vector<double>& tmp, std::size_t lo, std::size_t hi)
{
    if (hi - lo < 2) {
        return 0;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t swaps = count_exchanges(v, tmp, lo, mid) + count_exchanges(v, tmp, mid, hi);
    std::size_t i = lo;
    std::size_t j = mid;
    std::size_t k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += mid - i;
            tmp[k++] = v[j++];
        } else {
            tmp[k++] = v[i++];
        }
    }
    while (i < mid) {
        tmp[k++] = v[i++];
    }
    while (j < hi) {
        tmp[k++] = v[j++];
    }
    std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo), tmp.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

std::uint64_t tied_pairs(const std::vector<double>& sorted)
{
    std::uint64_t t = 0;
    std::uint64_t run = 1;
    for (std::size_t i = 1; i <= sorted.size(); ++i) {
        if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
            ++run;
        } else {
            t += run * (run - 1) / 2;
            run = 1;
        }
    }
    return t;
}

}  // namespace

double kendall_tau(const DrRanking& a, const DrRanking& b)
{
    const auto sa = a.scores();
    const auto sb = b.scores();
    if (sa.size() != a.size() || sb.size() != b.size()) {
        throw ValidationError("kendall_tau: duplicate ids in a ranking");
    }
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(sa.size());
    for (const auto& [id, s] : sa) {
        auto it = sb.find(id);
        if (it == sb.end()) {
            throw ValidationError("kendall_tau: '" + id + "' missing from " + b.method_id());
        }
        pairs.emplace_back(s, it->second);
    }
    if (sb.size() != sa.size()) {
        throw ValidationError("kendall_tau: rankings cover different retrievers");
    }
    const std::uint64_t n = pairs.size();
    if (n < 2) {
        return 1.0;
    }
    // Knight's O(n log n) tau-b.
    std::sort(pairs.begin(), pairs.end());
    std::uint64_t ties_a = 0;
    std::uint64_t ties_joint = 0;
    {
        std::uint64_t run_a = 1;
        std::uint64_t run_j = 1;
        for (std::size_t i = 1; i <= n; ++i) {
            const bool same_a = i < n && pairs[i].first == pairs[i - 1].first;
            const bool same_j = same_a && pairs[i].second == pairs[i - 1].second;
            if (same_a) {
                ++run_a;
            } else {
                ties_a += run_a * (run_a - 1) / 2;
                run_a = 1;
            }
            if (same_j) {
                ++run_j;
            } else {
                ties_joint += run_j * (run_j - 1) / 2;
                run_j = 1;
            }
        }
    }
    std::vector<double> second(n);
    for (std::size_t i = 0; i < n; ++i) {
        second[i] = pairs[i].second;
    }
    std::vector<double> tmp(n);
    const std::uint64_t discordant = count_exchanges(second, tmp, 0, n);
    const std::uint64_t ties_b = tied_pairs(second);
    const std::uint64_t total = n * (n - 1) / 2;
    const double num = static_cast<double>(total) - static_cast<double>(ties_a) - static_cast<double>(ties_b) +
                       static_cast<double>(ties_joint) - 2.0 * static_cast<double>(discordant);
    const double den = std::sqrt(static_cast<double>((total - ties_a) * (total - ties_b)));
    if (den == 0.0) {
        return 0.0;
    }
    return num / den;
}

double delta_e(const std::map<std::string, double>& gt_scores, const DrRanking& predicted)
{
    if (gt_scores.empty() || predicted.empty()) {
        throw ValidationError("delta_e: empty input");
    }
    const std::string& pick = predicted.top();
    auto it = gt_scores.find(pick);
    if (it == gt_scores.end()) {
        throw ValidationError("delta_e: selected retriever '" + pick + "' has no ground-truth score");
    }
    double best = it->second;
    for (const auto& [id, s] : gt_scores) {
        best = std::max(best, s);
    }
    return best - it->second;
}

}  // namespace drselect::metrics
