#include "drselect/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "drselect/error.hpp"
#include "drselect/fusion.hpp"
#include "drselect/metrics.hpp"
#include "drselect/parallel.hpp"

namespace drselect::baselines {

void QppConfig::validate() const
{
    if (top_k < 1 || norm_depth < 1 || entropy_top_k < 1) {
        throw ValidationError("top_k, norm_depth and entropy_top_k must be >= 1");
    }
    if (!(sigma_max_fraction > 0.0 && sigma_max_fraction <= 1.0)) {
        throw ValidationError("sigma_max_fraction must lie in (0, 1]");
    }
    if (alteration_variants < 1 || alteration_depth < 1) {
        throw ValidationError("alteration_variants and alteration_depth must be >= 1");
    }
    if (!(rbo_p > 0.0 && rbo_p < 1.0)) {
        throw ValidationError("rbo_p must lie in (0, 1)");
    }
    if (!(k_rrf > 0.0)) {
        throw ValidationError("k_rrf must be positive");
    }
}

int QppConfig::required_depth() const
{
    return static_cast<int>(std::max({top_k, norm_depth, entropy_top_k}));
}

std::string_view to_string(Predictor p)
{
    switch (p) {
    case Predictor::Entropy:
        return "entropy";
    case Predictor::Wig:
        return "wig";
    case Predictor::Nqc:
        return "nqc";
    case Predictor::Smv:
        return "smv";
    case Predictor::Sigma:
        return "sigma";
    case Predictor::SigmaMax:
        return "sigma-max";
    case Predictor::Clarity:
        return "clarity";
    }
    return "?";
}

std::optional<Predictor> parse_predictor(std::string_view name)
{
    for (Predictor p : {Predictor::Entropy, Predictor::Wig, Predictor::Nqc, Predictor::Smv, Predictor::Sigma,
                        Predictor::SigmaMax, Predictor::Clarity}) {
        if (name == to_string(p)) {
            return p;
        }
    }
    return std::nullopt;
}

bool lower_is_better(Predictor p)
{
    return p == Predictor::Entropy;
}

bool supports_normalization(Predictor p)
{
    return p == Predictor::Wig || p == Predictor::Nqc || p == Predictor::Smv || p == Predictor::Sigma;
}

std::string method_id(Predictor p, bool normalize)
{
    std::string id(to_string(p));
    if (normalize && supports_normalization(p)) {
        id += "-norm";
    }
    return id;
}

namespace {

std::span<const double> head(std::span<const double> s, std::size_t n)
{
    return s.first(std::min(n, s.size()));
}

double mean_of(std::span<const double> s)
{
    double sum = 0.0;
    for (double x : s) {
        sum += x;
    }
    return sum / static_cast<double>(s.size());
}

double pop_std(std::span<const double> s)
{
    const double mu = mean_of(s);
    double acc = 0.0;
    for (double x : s) {
        acc += (x - mu) * (x - mu);
    }
    return std::sqrt(acc / static_cast<double>(s.size()));
}

// Scores divided by their mean, written as s * n / sum so that scaling every
// input by an exactly representable factor gives bit-identical output.
std::optional<std::vector<double>> ratio_to_mean(std::span<const double> scores, std::span<const double> basis)
{
    double sum = 0.0;
    for (double x : basis) {
        sum += x;
    }
    if (!(sum > 0.0)) {
        return std::nullopt;
    }
    const double n = static_cast<double>(basis.size());
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = scores[i] * n / sum;
    }
    return out;
}

// The top_k scores, divided by the normalizing factor when asked to.
std::optional<std::vector<double>> working_scores(std::span<const double> scores, const QppConfig& cfg)
{
    const auto top = head(scores, cfg.top_k);
    if (!cfg.normalize) {
        return std::vector<double>(top.begin(), top.end());
    }
    return ratio_to_mean(top, head(scores, cfg.norm_depth));
}

}  // namespace

std::optional<double> normalizing_factor(std::span<const double> scores, const QppConfig& cfg)
{
    if (scores.empty()) {
        return std::nullopt;
    }
    return mean_of(head(scores, cfg.norm_depth));
}

std::optional<double> binary_entropy(std::span<const double> scores, const QppConfig& cfg)
{
    const auto top = head(scores, cfg.entropy_top_k);
    if (top.size() < 2) {
        return std::nullopt;
    }
    const double mx = *std::max_element(top.begin(), top.end());
    std::vector<double> w(top.size());
    double z = 0.0;
    for (std::size_t i = 0; i < top.size(); ++i) {
        w[i] = std::exp(top[i] - mx);
        z += w[i];
    }
    double h = 0.0;
    for (double x : w) {
        const double p = x / z;
        if (p > 0.0) {
            h -= p * std::log(p);
        }
    }
    return h;
}

std::optional<double> wig(std::span<const double> scores, const QppConfig& cfg)
{
    if (scores.empty()) {
        return std::nullopt;
    }
    const double m = mean_of(head(scores, cfg.top_k));
    if (!cfg.normalize) {
        return m;
    }
    return m - *normalizing_factor(scores, cfg);
}

std::optional<double> nqc(std::span<const double> scores, const QppConfig& cfg)
{
    if (std::min(scores.size(), cfg.top_k) < 2) {
        return std::nullopt;
    }
    const auto s = working_scores(scores, cfg);
    if (!s) {
        return std::nullopt;
    }
    return pop_std(*s);
}

std::optional<double> smv(std::span<const double> scores, const QppConfig& cfg)
{
    if (std::min(scores.size(), cfg.top_k) < 2) {
        return std::nullopt;
    }
    const auto s = working_scores(scores, cfg);
    if (!s) {
        return std::nullopt;
    }
    for (double x : *s) {
        if (!(x > 0.0)) {
            return std::nullopt;
        }
    }
    const double mu = mean_of(*s);
    double acc = 0.0;
    for (double x : *s) {
        acc += x * std::abs(std::log(x / mu));
    }
    return acc / static_cast<double>(s->size());
}

std::optional<double> sigma(std::span<const double> scores, const QppConfig& cfg)
{
    if (std::min(scores.size(), cfg.top_k) < 2) {
        return std::nullopt;
    }
    const auto s = working_scores(scores, cfg);
    if (!s) {
        return std::nullopt;
    }
    double best = 0.0;
    for (std::size_t j = 2; j <= s->size(); ++j) {
        const std::span<const double> prefix(s->data(), j);
        best = std::max(best, pop_std(prefix) / static_cast<double>(j));
    }
    return best;
}

std::optional<double> sigma_max(std::span<const double> scores, const QppConfig& cfg)
{
    if (scores.empty()) {
        return std::nullopt;
    }
    const double cut = cfg.sigma_max_fraction * scores[0];
    std::size_t n = 1;
    while (n < scores.size() && scores[n] >= cut) {
        ++n;
    }
    if (n == 1) {
        return 0.0;
    }
    const auto kept = scores.first(n);
    const auto s = ratio_to_mean(kept, kept);
    if (!s) {
        return std::nullopt;
    }
    return pop_std(*s);
}

std::optional<double> clarity(std::span<const std::string> top_docs, const LexicalIndex& stats,
                              const QppConfig& cfg)
{
    const double total = static_cast<double>(stats.total_tokens());
    if (total <= 0.0) {
        return std::nullopt;
    }
    std::vector<std::size_t> docs;
    for (std::size_t i = 0; i < top_docs.size() && i < cfg.top_k; ++i) {
        auto d = stats.doc_index(top_docs[i]);
        if (d && stats.doc_length(*d) > 0) {
            docs.push_back(*d);
        }
    }
    if (docs.empty()) {
        return std::nullopt;
    }
    // Mean of the per-doc maximum-likelihood models over the terms they use.
    std::map<LexicalIndex::TermId, double> doc_mass;
    for (std::size_t d : docs) {
        const double len = static_cast<double>(stats.doc_length(d));
        for (const auto& [t, tf] : stats.doc_terms(d)) {
            doc_mass[t] += static_cast<double>(tf) / len;
        }
    }
    const double nd = static_cast<double>(docs.size());
    const double lambda = kClarityLambda;
    double kl = 0.0;
    double covered = 0.0;
    for (const auto& [t, mass] : doc_mass) {
        const double pc = static_cast<double>(stats.cf(t)) / total;
        const double ptop = lambda * mass / nd + (1.0 - lambda) * pc;
        kl += ptop * std::log(ptop / pc);
        covered += pc;
    }
    // Every other term has P_top = (1 - lambda) P_corpus.
    const double rest = std::max(0.0, 1.0 - covered);
    kl += (1.0 - lambda) * std::log(1.0 - lambda) * rest;
    return std::max(0.0, kl);
}

PredictorScore score_run(const Run& run, Predictor p, const QppConfig& cfg, const LexicalIndex* stats)
{
    if (p == Predictor::Clarity && stats == nullptr) {
        throw ValidationError("clarity needs corpus statistics");
    }
    PredictorScore out;
    double sum = 0.0;
    for (const auto& [qid, entries] : run.entries) {
        std::optional<double> v;
        if (p == Predictor::Clarity) {
            v = clarity(run.ranked_ids(qid), *stats, cfg);
        } else {
            std::vector<double> scores;
            scores.reserve(entries.size());
            for (const auto& e : entries) {
                scores.push_back(e.score);
            }
            switch (p) {
            case Predictor::Entropy:
                v = binary_entropy(scores, cfg);
                break;
            case Predictor::Wig:
                v = wig(scores, cfg);
                break;
            case Predictor::Nqc:
                v = nqc(scores, cfg);
                break;
            case Predictor::Smv:
                v = smv(scores, cfg);
                break;
            case Predictor::Sigma:
                v = sigma(scores, cfg);
                break;
            case Predictor::SigmaMax:
                v = sigma_max(scores, cfg);
                break;
            case Predictor::Clarity:
                break;
            }
        }
        if (v && std::isfinite(*v)) {
            sum += *v;
            ++out.scored;
        } else {
            ++out.skipped;
        }
    }
    if (out.scored == 0) {
        throw ValidationError(std::string(to_string(p)) + ": no query of retriever '" + run.dr_id +
                              "' could be scored");
    }
    out.mean = sum / static_cast<double>(out.scored);
    return out;
}

DrRanking qpp_ranking(const std::map<std::string, Run>& runs, Predictor p, const QppConfig& cfg,
                      const LexicalIndex* stats, std::map<std::string, std::size_t>* skipped)
{
    cfg.validate();
    if (runs.empty()) {
        throw ValidationError("no runs to score");
    }
    std::map<std::string, double> scores;
    for (const auto& [dr, run] : runs) {
        const auto s = score_run(run, p, cfg, stats);
        scores[dr] = lower_is_better(p) ? -s.mean : s.mean;
        if (skipped != nullptr) {
            (*skipped)[dr] = s.skipped;
        }
    }
    return DrRanking::from_scores(method_id(p, cfg.normalize), scores);
}

DrRanking msmarco_perf(std::string_view perf_json, const std::vector<std::string>& pool_ids)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(perf_json);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("msmarco perf file: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ParseError("msmarco perf file must be a JSON object {dr_id: score}");
    }
    std::map<std::string, double> scores;
    std::vector<std::string> missing;
    for (const auto& id : pool_ids) {
        auto it = doc.find(id);
        if (it == doc.end()) {
            missing.push_back(id);
        } else if (!it->is_number()) {
            throw ParseError("msmarco perf file: score of '" + id + "' is not a number");
        } else {
            scores[id] = it->get<double>();
        }
    }
    if (!missing.empty()) {
        std::string msg = "msmarco perf file lacks retrievers:";
        for (const auto& id : missing) {
            msg += " " + id;
        }
        throw ValidationError(msg);
    }
    return DrRanking::from_scores("msmarco", scores);
}

DrRanking query_alteration(const larmor::Pool& pool, const std::vector<Query>& queries, const QppConfig& cfg)
{
    cfg.validate();
    if (pool.empty() || queries.empty()) {
        throw ValidationError("query alteration needs a pool and queries");
    }
    for (const auto& m : pool) {
        if (!m.retriever || !m.retriever->supports_live_search()) {
            throw UnsupportedBaseline("query alteration needs live search; retriever '" + m.dr_id +
                                      "' only replays a run file");
        }
    }
    std::map<std::string, double> scores;
    for (const auto& m : pool) {
        std::vector<std::optional<double>> values(queries.size());
        parallel_for(queries.size(), cfg.workers, [&](std::size_t qi) {
            const Query& q = queries[qi];
            const ScoredList original = m.retriever->search(q, static_cast<int>(cfg.top_k));
            if (original.docs.empty()) {
                return;
            }
            const auto variants = alter_query(q, cfg.alteration_variants, cfg.seed);
            // per doc, its score under each variant
            std::vector<std::vector<double>> per_doc(original.docs.size());
            for (const auto& v : variants) {
                const ScoredList altered = m.retriever->search(v, cfg.alteration_depth);
                std::unordered_map<std::string, double> lookup;
                double floor = 0.0;
                for (const auto& d : altered.docs) {
                    lookup.emplace(d.doc_id, d.score);
                }
                if (!altered.docs.empty()) {
                    floor = altered.docs.back().score;
                }
                for (std::size_t i = 0; i < original.docs.size(); ++i) {
                    auto it = lookup.find(original.docs[i].doc_id);
                    per_doc[i].push_back(it == lookup.end() ? floor : it->second);
                }
            }
            double acc = 0.0;
            for (const auto& s : per_doc) {
                acc += pop_std(s);
            }
            values[qi] = acc / static_cast<double>(per_doc.size());
        });
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& v : values) {
            if (v) {
                sum += *v;
                ++n;
            }
        }
        if (n == 0) {
            throw ValidationError("alteration: retriever '" + m.dr_id + "' returned nothing for every query");
        }
        scores[m.dr_id] = -(sum / static_cast<double>(n));
    }
    return DrRanking::from_scores("alteration", scores);
}

DrRanking qpp_fusion(const std::map<std::string, Run>& runs, const std::vector<std::string>& query_ids,
                     const QppConfig& cfg)
{
    cfg.validate();
    if (runs.empty() || query_ids.empty()) {
        throw ValidationError("qpp fusion needs runs and queries");
    }
    const std::set<std::string> known(query_ids.begin(), query_ids.end());
    for (const auto& [dr, run] : runs) {
        for (const auto& [qid, entries] : run.entries) {
            if (!known.contains(qid)) {
                throw ValidationError("qpp fusion: run '" + dr + "' has query '" + qid +
                                      "' outside the shared query set");
            }
        }
    }
    std::map<std::string, double> sums;
    for (const auto& qid : known) {
        std::vector<std::vector<std::string>> lists;
        lists.reserve(runs.size());
        for (const auto& [dr, run] : runs) {
            lists.push_back(run.ranked_ids(qid));
        }
        const auto reference = fusion::rrf_fuse(lists, cfg.k_rrf).ids();
        std::size_t i = 0;
        for (const auto& [dr, run] : runs) {
            const auto& mine = lists[i++];
            double v = 0.0;
            if (!mine.empty() && !reference.empty()) {
                v = metrics::rbo(mine, reference, cfg.rbo_p);
            }
            sums[dr] += v;
        }
    }
    for (auto& [dr, s] : sums) {
        s /= static_cast<double>(known.size());
    }
    return DrRanking::from_scores("qpp-fusion", sums);
}

}  // namespace drselect::baselines
