#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace drselect {

struct Document {
    std::string doc_id;
    std::string title;
    std::string text;

    bool operator==(const Document&) const = default;
};

/// In-memory target corpus. Iteration follows insertion order; doc ids are unique.
class Corpus {
public:
    Corpus() = default;
    /// Throws ValidationError on an empty or duplicated doc id, or on blank text.
    Corpus(std::string name, std::vector<Document> docs);

    const std::string& name() const noexcept { return name_; }
    const std::vector<Document>& docs() const noexcept { return docs_; }
    std::size_t size() const noexcept { return docs_.size(); }
    const Document* find(std::string_view doc_id) const;
    bool contains(std::string_view doc_id) const { return find(doc_id) != nullptr; }

private:
    std::string name_;
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Query {
    std::string query_id;
    std::string text;
    std::optional<std::string> source_doc_id;  ///< set only for generated queries

    bool operator==(const Query&) const = default;
};

struct RunEntry {
    std::string doc_id;
    double score = 0.0;
    int rank = 0;

    bool operator==(const RunEntry&) const = default;
};

/// One retriever's ranked lists, keyed by query id. Per query, ranks are
/// 1..n, scores are non-increasing and doc ids are distinct.
struct Run {
    std::string dr_id;
    std::map<std::string, std::vector<RunEntry>> entries;

    /// Doc ids of one query in rank order; empty if the query is absent.
    std::vector<std::string> ranked_ids(const std::string& query_id) const;

    bool operator==(const Run&) const = default;
};

/// Sorts by score descending then doc id ascending, rewrites ranks 1..n and
/// rejects duplicate doc ids.
void normalize_ranking(std::vector<RunEntry>& entries, std::string_view query_id);

/// Graded judgments, query id -> doc id -> grade.
struct Qrels {
    std::map<std::string, std::map<std::string, int>> judgments;
    /// Number of (qid, docid) lines that overwrote an earlier line while parsing.
    std::size_t overwritten = 0;

    void set(const std::string& query_id, const std::string& doc_id, int grade);
    /// Judgments of one query, nullptr if the query has none.
    const std::map<std::string, int>* for_query(const std::string& query_id) const;
    std::size_t size() const;

    bool operator==(const Qrels& o) const { return judgments == o.judgments; }
};

enum class BackendKind { RunFile, Http, Lexical };

std::string_view to_string(BackendKind kind);

/// One line of a pool manifest. Lexical members may carry an additive score
/// noise to build synthetic pools of known quality; HTTP members carry their
/// transport settings.
struct PoolEntry {
    std::string dr_id;
    BackendKind backend = BackendKind::Lexical;
    std::string path_or_url;
    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 0;
    int timeout_ms = 30000;
    int max_retries = 3;
};

struct DrPool {
    std::vector<PoolEntry> retrievers;

    std::vector<std::string> ids() const;
};

struct DrScore {
    std::string dr_id;
    double score = 0.0;

    bool operator==(const DrScore&) const = default;
};

/// An ordering of retrievers produced by one selection method. Entries are
/// sorted by score descending, ties by dr id ascending.
class DrRanking {
public:
    DrRanking() = default;
    static DrRanking from_scores(std::string method_id, const std::map<std::string, double>& scores);

    const std::string& method_id() const noexcept { return method_id_; }
    const std::vector<DrScore>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    /// Throws ValidationError when empty.
    const std::string& top() const;
    std::vector<std::string> order() const;
    std::map<std::string, double> scores() const;

    bool operator==(const DrRanking&) const = default;

private:
    std::string method_id_;
    std::vector<DrScore> entries_;
};

// TREC run files: `qid Q0 docid rank score runtag`.
Run parse_run(std::istream& in);
Run parse_run(std::string_view text);
void write_run(const Run& run, std::ostream& out);
std::string write_run(const Run& run);

// Qrels files: `qid 0 docid grade`.
Qrels parse_qrels(std::istream& in);
Qrels parse_qrels(std::string_view text);
void write_qrels(const Qrels& qrels, std::ostream& out);
std::string write_qrels(const Qrels& qrels);

/// BEIR corpus JSONL with `_id`, `title`, `text`.
Corpus load_corpus(std::istream& in, std::string name = {});

/// JSONL with `_id`, `text` and, for generated queries, `source_doc_id`.
std::vector<Query> load_queries(std::istream& in);
void write_queries(const std::vector<Query>& queries, std::ostream& out);

/// JSON array of `{"dr_id", "backend", "path_or_url"}` plus optional
/// `noise_sigma`, `noise_seed`, `timeout_ms`, `max_retries`.
DrPool parse_pool_manifest(std::string_view json_text);

/// `[{"dr_id": s, "score": f, "rank": n}, ...]`
std::string write_ranking_json(const DrRanking& ranking);
DrRanking parse_ranking_json(std::string_view json_text, std::string method_id);

/// k distinct documents drawn uniformly without replacement. Deterministic in seed.
std::vector<Document> sample_documents(const Corpus& corpus, std::size_t k, std::uint64_t seed);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

}  // namespace drselect
