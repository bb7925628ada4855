#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "drselect/data_model.hpp"
#include "drselect/http.hpp"

namespace drselect {

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;

    bool operator==(const ScoredDoc&) const = default;
};

/// Result list for one query: scores non-increasing, doc ids distinct.
struct ScoredList {
    std::vector<ScoredDoc> docs;
    int depth = 0;  ///< the top_k the list was requested at

    bool operator==(const ScoredList&) const = default;
};

/// Term statistics of a corpus: the TF-IDF vector space behind the lexical
/// retriever, the mock LLM and the Clarity predictor.
class LexicalIndex {
public:
    using TermId = std::uint32_t;

    explicit LexicalIndex(const Corpus& corpus);

    std::size_t num_docs() const noexcept { return doc_ids_.size(); }
    std::size_t vocabulary_size() const noexcept { return terms_.size(); }
    std::optional<TermId> term_id(std::string_view term) const;
    const std::string& term(TermId id) const { return terms_[id]; }
    const std::string& doc_id(std::size_t doc) const { return doc_ids_[doc]; }
    std::optional<std::size_t> doc_index(std::string_view doc_id) const;

    std::uint32_t df(TermId t) const { return df_[t]; }
    /// Collection frequency of a term.
    std::uint64_t cf(TermId t) const { return cf_[t]; }
    std::uint64_t total_tokens() const noexcept { return total_tokens_; }
    /// ln(1 + N / df)
    double idf(TermId t) const;

    /// (term, tf) pairs of a document, term ids ascending.
    const std::vector<std::pair<TermId, std::uint32_t>>& doc_terms(std::size_t doc) const { return doc_terms_[doc]; }
    std::uint64_t doc_length(std::size_t doc) const { return doc_len_[doc]; }

    /// Cosine between the TF-IDF vector of `query_text` and every document.
    std::vector<double> cosine_scores(std::string_view query_text) const;

    /// TF-IDF weights (tf * idf) of the terms of an arbitrary text, heaviest
    /// first, ties by term ascending. Unknown terms get idf ln(1 + N).
    std::vector<std::pair<std::string, double>> tfidf_terms(std::string_view text) const;

private:
    std::vector<std::string> doc_ids_;
    std::unordered_map<std::string, std::size_t> doc_pos_;
    std::vector<std::string> terms_;
    std::unordered_map<std::string, TermId> term_pos_;
    std::vector<std::uint32_t> df_;
    std::vector<std::uint64_t> cf_;
    std::vector<std::vector<std::pair<TermId, std::uint32_t>>> doc_terms_;
    std::vector<std::uint64_t> doc_len_;
    std::vector<double> doc_norm_;
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> postings_;  // term -> (doc, tf)
    std::uint64_t total_tokens_ = 0;
};

/// An opaque search function. Implementations are immutable after
/// construction and callable concurrently.
class Retriever {
public:
    virtual ~Retriever() = default;
    /// At most top_k results. Throws MissingQuery / BackendUnavailable.
    virtual ScoredList search(const Query& query, int top_k) const = 0;
    /// False when the retriever can only replay stored results.
    virtual bool supports_live_search() const = 0;
};

class RunFileRetriever final : public Retriever {
public:
    explicit RunFileRetriever(Run run) : run_(std::move(run)) {}
    ScoredList search(const Query& query, int top_k) const override;
    bool supports_live_search() const override { return false; }
    const Run& run() const noexcept { return run_; }

private:
    Run run_;
};

/// TF-IDF cosine retriever. Documents with zero similarity are not
/// returned. With noise_sigma > 0 every document's score is perturbed by a
/// N(0, sigma^2) draw keyed on (noise_seed, query text, doc id), which yields
/// retrievers of controllably worse quality over the same index.
class LexicalRetriever final : public Retriever {
public:
    explicit LexicalRetriever(std::shared_ptr<const LexicalIndex> index, double noise_sigma = 0.0,
                              std::uint64_t noise_seed = 0);
    ScoredList search(const Query& query, int top_k) const override;
    bool supports_live_search() const override { return true; }

private:
    std::shared_ptr<const LexicalIndex> index_;
    double sigma_;
    std::uint64_t seed_;
    std::vector<std::uint64_t> doc_hash_;
};

/// `POST {base_url}/search` with `{"query_id", "text", "top_k"}`, expecting
/// `{"results": [{"doc_id", "score"}, ...]}`.
class HttpRetriever final : public Retriever {
public:
    explicit HttpRetriever(HttpSettings settings);
    ScoredList search(const Query& query, int top_k) const override;
    bool supports_live_search() const override { return true; }
    std::size_t requests_sent() const noexcept { return transport_.requests_sent(); }

private:
    HttpTransport transport_;
};

/// Builds the backend a pool manifest entry describes. Lexical members index
/// `target_index` unless they name their own corpus file. Relative paths
/// resolve against base_dir.
std::shared_ptr<const Retriever> make_retriever(const PoolEntry& entry,
                                                std::shared_ptr<const LexicalIndex> target_index,
                                                const std::filesystem::path& base_dir = {});

struct BatchResult {
    std::map<std::string, ScoredList> results;
    std::map<std::string, std::string> errors;  ///< query id -> message
};

/// Searches every query. Per-query failures are collected in `errors`; the
/// call throws only when every query failed.
BatchResult batch_search(const Retriever& retriever, std::span<const Query> queries, int top_k, int workers = 1);

/// Packs batch results into a Run tagged with dr_id.
Run to_run(const std::string& dr_id, const std::map<std::string, ScoredList>& results);

/// Single-token deletion variants, round-robin over positions starting at
/// seed mod token_count. A single-token query comes back unchanged.
std::vector<Query> alter_query(const Query& query, int num_variants, std::uint64_t seed);

}  // namespace drselect
