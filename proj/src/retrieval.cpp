#include "drselect/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "drselect/error.hpp"
#include "drselect/parallel.hpp"
#include "drselect/rng.hpp"
#include "drselect/text.hpp"

namespace drselect {

using nlohmann::json;

LexicalIndex::LexicalIndex(const Corpus& corpus)
{
    const std::size_t n = corpus.size();
    doc_ids_.reserve(n);
    doc_terms_.resize(n);
    doc_len_.resize(n);
    for (std::size_t d = 0; d < n; ++d) {
        const auto& doc = corpus.docs()[d];
        doc_ids_.push_back(doc.doc_id);
        doc_pos_.emplace(doc.doc_id, d);
        std::map<TermId, std::uint32_t> tf;
        // Title and body are indexed as one field.
        for (const auto& tok : text::tokenize(doc.title + " " + doc.text)) {
            auto [it, inserted] = term_pos_.emplace(tok, static_cast<TermId>(terms_.size()));
            if (inserted) {
                terms_.push_back(tok);
                df_.push_back(0);
                cf_.push_back(0);
                postings_.emplace_back();
            }
            ++tf[it->second];
        }
        auto& dt = doc_terms_[d];
        dt.assign(tf.begin(), tf.end());
        for (const auto& [t, f] : dt) {
            ++df_[t];
            cf_[t] += f;
            doc_len_[d] += f;
            postings_[t].emplace_back(static_cast<std::uint32_t>(d), f);
        }
        total_tokens_ += doc_len_[d];
    }
    doc_norm_.resize(n);
    for (std::size_t d = 0; d < n; ++d) {
        double sq = 0.0;
        for (const auto& [t, f] : doc_terms_[d]) {
            const double w = f * idf(t);
            sq += w * w;
        }
        doc_norm_[d] = std::sqrt(sq);
    }
}

std::optional<LexicalIndex::TermId> LexicalIndex::term_id(std::string_view term) const
{
    auto it = term_pos_.find(std::string(term));
    if (it == term_pos_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<std::size_t> LexicalIndex::doc_index(std::string_view doc_id) const
{
    auto it = doc_pos_.find(std::string(doc_id));
    if (it == doc_pos_.end()) {
        return std::nullopt;
    }
    return it->second;
}

double LexicalIndex::idf(TermId t) const
{
    return std::log(1.0 + static_cast<double>(num_docs()) / static_cast<double>(df_[t]));
}

std::vector<double> LexicalIndex::cosine_scores(std::string_view query_text) const
{
    std::vector<double> scores(num_docs(), 0.0);
    std::map<TermId, std::uint32_t> qtf;
    for (const auto& tok : text::tokenize(query_text)) {
        if (auto id = term_id(tok)) {
            ++qtf[*id];
        }
    }
    double qsq = 0.0;
    for (const auto& [t, f] : qtf) {
        const double idf_t = idf(t);
        const double wq = f * idf_t;
        qsq += wq * wq;
        for (const auto& [d, df] : postings_[t]) {
            scores[d] += wq * (df * idf_t);
        }
    }
    if (qsq == 0.0) {
        return scores;
    }
    const double qnorm = std::sqrt(qsq);
    for (std::size_t d = 0; d < scores.size(); ++d) {
        if (scores[d] != 0.0) {
            scores[d] /= qnorm * doc_norm_[d];
        }
    }
    return scores;
}

std::vector<std::pair<std::string, double>> LexicalIndex::tfidf_terms(std::string_view text_in) const
{
    std::map<std::string, std::uint32_t> tf;
    for (auto& tok : text::tokenize(text_in)) {
        ++tf[tok];
    }
    std::vector<std::pair<std::string, double>> out;
    out.reserve(tf.size());
    const double unknown_idf = std::log(1.0 + static_cast<double>(num_docs()));
    for (const auto& [term, f] : tf) {
        auto id = term_id(term);
        out.emplace_back(term, f * (id ? idf(*id) : unknown_idf));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

ScoredList RunFileRetriever::search(const Query& query, int top_k) const
{
    if (top_k < 1) {
        throw ValidationError("top_k must be >= 1");
    }
    auto it = run_.entries.find(query.query_id);
    if (it == run_.entries.end()) {
        throw MissingQuery("run '" + run_.dr_id + "' has no results for query '" + query.query_id + "'");
    }
    ScoredList out;
    out.depth = top_k;
    const std::size_t n = std::min<std::size_t>(it->second.size(), static_cast<std::size_t>(top_k));
    out.docs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.docs.push_back({it->second[i].doc_id, it->second[i].score});
    }
    return out;
}

LexicalRetriever::LexicalRetriever(std::shared_ptr<const LexicalIndex> index, double noise_sigma,
                                   std::uint64_t noise_seed)
    : index_(std::move(index)), sigma_(noise_sigma), seed_(noise_seed)
{
    if (!index_) {
        throw ValidationError("lexical retriever needs an index");
    }
    if (!(sigma_ >= 0.0)) {
        throw ValidationError("noise sigma must be non-negative");
    }
    doc_hash_.reserve(index_->num_docs());
    for (std::size_t d = 0; d < index_->num_docs(); ++d) {
        doc_hash_.push_back(text::fnv1a(index_->doc_id(d)));
    }
}

ScoredList LexicalRetriever::search(const Query& query, int top_k) const
{
    if (top_k < 1) {
        throw ValidationError("top_k must be >= 1");
    }
    std::vector<double> scores = index_->cosine_scores(query.text);
    std::vector<std::uint32_t> cand;
    cand.reserve(scores.size());
    if (sigma_ > 0.0) {
        const std::uint64_t qh = mix64(seed_, text::fnv1a(query.text));
        for (std::size_t d = 0; d < scores.size(); ++d) {
            SplitMix64 g(mix64(qh, doc_hash_[d]));
            scores[d] += sigma_ * g.normal();
            cand.push_back(static_cast<std::uint32_t>(d));
        }
    } else {
        for (std::size_t d = 0; d < scores.size(); ++d) {
            if (scores[d] > 0.0) {
                cand.push_back(static_cast<std::uint32_t>(d));
            }
        }
    }
    const auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return index_->doc_id(a) < index_->doc_id(b);
    };
    const std::size_t n = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(top_k));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end(), better);
    ScoredList out;
    out.depth = top_k;
    out.docs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.docs.push_back({index_->doc_id(cand[i]), scores[cand[i]]});
    }
    return out;
}

HttpRetriever::HttpRetriever(HttpSettings settings) : transport_(std::move(settings)) {}

ScoredList HttpRetriever::search(const Query& query, int top_k) const
{
    if (top_k < 1) {
        throw ValidationError("top_k must be >= 1");
    }
    const json req = {{"query_id", query.query_id}, {"text", query.text}, {"top_k", top_k}};
    const std::string body = transport_.post("/search", req.dump());
    std::vector<RunEntry> entries;
    try {
        const json resp = json::parse(body);
        std::map<std::string, double> best;
        for (const auto& r : resp.at("results")) {
            const double s = r.at("score").get<double>();
            if (!std::isfinite(s)) {
                continue;
            }
            auto [it, inserted] = best.emplace(r.at("doc_id").get<std::string>(), s);
            if (!inserted) {
                it->second = std::max(it->second, s);
            }
        }
        for (auto& [id, s] : best) {
            entries.push_back({id, s, 0});
        }
    } catch (const json::exception& e) {
        throw BackendUnavailable("malformed search response from " + transport_.settings().base_url + ": " + e.what());
    }
    normalize_ranking(entries, query.query_id);
    ScoredList out;
    out.depth = top_k;
    const std::size_t n = std::min<std::size_t>(entries.size(), static_cast<std::size_t>(top_k));
    for (std::size_t i = 0; i < n; ++i) {
        out.docs.push_back({entries[i].doc_id, entries[i].score});
    }
    return out;
}

std::shared_ptr<const Retriever> make_retriever(const PoolEntry& entry,
                                                std::shared_ptr<const LexicalIndex> target_index,
                                                const std::filesystem::path& base_dir)
{
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    switch (entry.backend) {
    case BackendKind::RunFile: {
        const auto path = resolve(entry.path_or_url);
        std::ifstream in(path);
        if (!in) {
            throw ValidationError("cannot open run file " + path.string() + " for '" + entry.dr_id + "'");
        }
        Run run = parse_run(in);
        run.dr_id = entry.dr_id;
        return std::make_shared<RunFileRetriever>(std::move(run));
    }
    case BackendKind::Http: {
        HttpSettings s;
        s.base_url = entry.path_or_url;
        s.timeout_ms = entry.timeout_ms;
        s.max_retries = entry.max_retries;
        return std::make_shared<HttpRetriever>(std::move(s));
    }
    case BackendKind::Lexical: {
        std::shared_ptr<const LexicalIndex> index = target_index;
        if (!entry.path_or_url.empty()) {
            const auto path = resolve(entry.path_or_url);
            std::ifstream in(path);
            if (!in) {
                throw ValidationError("cannot open corpus " + path.string() + " for '" + entry.dr_id + "'");
            }
            index = std::make_shared<LexicalIndex>(load_corpus(in, path.stem().string()));
        }
        if (!index) {
            throw ValidationError("lexical retriever '" + entry.dr_id + "' has no corpus to index");
        }
        return std::make_shared<LexicalRetriever>(std::move(index), entry.noise_sigma, entry.noise_seed);
    }
    }
    throw ValidationError("unknown backend");
}

BatchResult batch_search(const Retriever& retriever, std::span<const Query> queries, int top_k, int workers)
{
    if (queries.empty()) {
        throw ValidationError("batch_search needs at least one query");
    }
    std::vector<ScoredList> lists(queries.size());
    std::vector<std::exception_ptr> errors(queries.size());
    parallel_for(queries.size(), workers, [&](std::size_t i) {
        try {
            lists[i] = retriever.search(queries[i], top_k);
        } catch (const Error&) {
            errors[i] = std::current_exception();
        }
    });
    BatchResult out;
    std::exception_ptr first;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (errors[i]) {
            if (!first) {
                first = errors[i];
            }
            try {
                std::rethrow_exception(errors[i]);
            } catch (const Error& e) {
                out.errors[queries[i].query_id] = e.what();
            }
        } else {
            out.results[queries[i].query_id] = std::move(lists[i]);
        }
    }
    if (out.results.empty()) {
        std::rethrow_exception(first);
    }
    return out;
}

Run to_run(const std::string& dr_id, const std::map<std::string, ScoredList>& results)
{
    Run run;
    run.dr_id = dr_id;
    for (const auto& [qid, list] : results) {
        auto& entries = run.entries[qid];
        entries.reserve(list.docs.size());
        for (const auto& d : list.docs) {
            entries.push_back({d.doc_id, d.score, 0});
        }
        normalize_ranking(entries, qid);
    }
    return run;
}

std::vector<Query> alter_query(const Query& query, int num_variants, std::uint64_t seed)
{
    const auto tokens = text::split_ws(query.text);
    if (tokens.empty()) {
        throw ValidationError("cannot alter empty query '" + query.query_id + "'");
    }
    if (num_variants < 1) {
        throw ValidationError("num_variants must be >= 1");
    }
    if (tokens.size() == 1) {
        return {query};
    }
    const std::size_t count = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(num_variants));
    const std::size_t start = static_cast<std::size_t>(seed % tokens.size());
    std::vector<Query> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t drop = (start + i) % tokens.size();
        std::vector<std::string> kept;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            if (t != drop) {
                kept.push_back(tokens[t]);
            }
        }
        out.push_back({query.query_id + "#alt" + std::to_string(i + 1), text::join(kept, " "), query.source_doc_id});
    }
    return out;
}

}  // namespace drselect
