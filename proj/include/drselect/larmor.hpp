#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "drselect/data_model.hpp"
#include "drselect/fusion.hpp"
#include "drselect/llm_gateway.hpp"
#include "drselect/metrics.hpp"
#include "drselect/retrieval.hpp"

namespace drselect::larmor {

/// Pipeline cut points: source-doc qrels (Q), RBO against the fused list
/// (QF), LLM judgments (QFJ), LLM reference lists (QFR), and the fusion of
/// QFJ and QFR (Full).
enum class Stage { Q, QF, QFJ, QFR, Full };

/// "q", "qf", "qfj", "qfr", "larmor"
std::string_view to_string(Stage stage);
std::optional<Stage> parse_stage(std::string_view name);

struct PipelineConfig {
    std::size_t k = 100;          ///< sampled documents
    int l = 10;                   ///< queries per sampled document
    std::size_t m = 100;          ///< fused documents judged and reranked per query
    int retrieval_depth = 1000;
    double k_rrf = fusion::kDefaultRrfK;
    double rbo_p = 0.9;
    metrics::EvalMeasure measure{};
    Stage stage = Stage::Full;
    std::uint64_t seed = 0;
    int set_size = 3;
    int workers = 1;

    /// Throws ValidationError on out-of-range values.
    void validate() const;
};

struct PoolMember {
    std::string dr_id;
    std::shared_ptr<const Retriever> retriever;
};
using Pool = std::vector<PoolMember>;

using ReferenceLists = std::map<std::string, std::vector<std::string>>;

struct PipelineArtifacts {
    std::vector<Query> generated_queries;
    std::map<std::string, Run> runs;                     ///< dr id -> run over the generated queries
    std::map<std::string, fusion::FusedRanking> fused;   ///< query id -> top-m fused documents
    std::optional<Qrels> pseudo_qrels;                   ///< binarized LLM judgments over the fused lists
    std::optional<ReferenceLists> reference_lists;       ///< query id -> LLM reranking of the fused list
    std::map<Stage, DrRanking> stage_rankings;
    std::size_t duplicate_queries = 0;                   ///< generated texts repeating an earlier one
};

// Individual steps. Each is a pure function of its inputs.

std::vector<Query> generate_pseudo_queries(const Corpus& corpus, const PipelineConfig& config,
                                           const llm::LlmGateway& gateway);

/// Searches every generated query with every pool member. Any failing
/// (retriever, query) pair is an error naming both. A query absent from a
/// run means the retriever returned nothing for it.
std::map<std::string, Run> retrieve_runs(const Pool& pool, const std::vector<Query>& queries,
                                         const PipelineConfig& config);

/// RRF over every pool member's list, truncated to m.
std::map<std::string, fusion::FusedRanking> build_fused(const PipelineArtifacts& artifacts, const Pool& pool,
                                                        const PipelineConfig& config);

/// Binarized judgments of every (query, fused doc) pair.
Qrels judge_fused(const PipelineArtifacts& artifacts, const Corpus& corpus, const PipelineConfig& config,
                  const llm::LlmGateway& gateway);

/// Setwise reranking of every fused list.
ReferenceLists rerank_fused(const PipelineArtifacts& artifacts, const Corpus& corpus, const PipelineConfig& config,
                            const llm::LlmGateway& gateway);

/// Mean measure with each query's source document as its only relevant doc.
DrRanking stage_q(const PipelineArtifacts& artifacts, const Pool& pool, const PipelineConfig& config);
/// Mean RBO of each retriever's lists against the fused lists.
DrRanking stage_qf(const PipelineArtifacts& artifacts, const Pool& pool, const PipelineConfig& config);
/// Mean measure against the pseudo-qrels; queries without a relevant doc count 0.
DrRanking stage_qfj(const PipelineArtifacts& artifacts, const Pool& pool, const PipelineConfig& config);
/// Mean RBO of each retriever's lists against the reference lists.
DrRanking stage_qfr(const PipelineArtifacts& artifacts, const Pool& pool, const PipelineConfig& config);

/// Artifact files of one pipeline run:
/// queries.jsonl, runs/{dr_id}.trec, fused.trec, pseudo_qrels.txt,
/// reference_lists.jsonl, ranking_{stage}.json. Writes are atomic (temp
/// file + rename), so a file that exists is complete.
class RunDirectory {
public:
    explicit RunDirectory(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }
    std::filesystem::path queries_path() const { return root_ / "queries.jsonl"; }
    std::filesystem::path run_path(const std::string& dr_id) const { return root_ / "runs" / (dr_id + ".trec"); }
    std::filesystem::path fused_path() const { return root_ / "fused.trec"; }
    std::filesystem::path qrels_path() const { return root_ / "pseudo_qrels.txt"; }
    std::filesystem::path reference_path() const { return root_ / "reference_lists.jsonl"; }
    std::filesystem::path ranking_path(std::string_view method) const;

    bool has_queries() const;
    bool has_runs(const Pool& pool) const;
    bool has_fused() const;
    bool has_qrels() const;
    bool has_reference_lists() const;

    std::vector<Query> load_queries() const;
    Run load_run(const std::string& dr_id) const;
    std::map<std::string, fusion::FusedRanking> load_fused() const;
    Qrels load_qrels() const;
    ReferenceLists load_reference_lists() const;

    void save_queries(const std::vector<Query>& queries) const;
    void save_run(const Run& run) const;
    void save_fused(const std::map<std::string, fusion::FusedRanking>& fused) const;
    void save_qrels(const Qrels& qrels) const;
    void save_reference_lists(const ReferenceLists& lists) const;
    void save_ranking(std::string_view method, const DrRanking& ranking) const;

private:
    std::filesystem::path root_;
};

/// Writes `content` to `path` through a sibling temp file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// Stateful driver over the steps above. With a run directory every step
/// first looks for its artifact on disk and only computes (then saves) what
/// is missing, so an interrupted pipeline resumes at the last finished step.
class Pipeline {
public:
    Pipeline(const Corpus& corpus, const Pool& pool, PipelineConfig config, const llm::LlmGateway* gateway,
             std::optional<RunDirectory> run_dir = std::nullopt);

    void ensure_queries(bool force = false);
    void ensure_runs(bool force = false);
    void ensure_fused(bool force = false);
    void ensure_judgments(bool force = false);
    void ensure_reference_lists(bool force = false);

    /// Computes the stage's prerequisites, then its ranking. Full also
    /// computes (and records) every sub-stage ranking.
    DrRanking rank(Stage stage);

    const PipelineArtifacts& artifacts() const noexcept { return artifacts_; }
    const PipelineConfig& config() const noexcept { return config_; }

private:
    const llm::LlmGateway& gateway() const;
    void record(Stage stage, const DrRanking& ranking);

    const Corpus& corpus_;
    const Pool& pool_;
    PipelineConfig config_;
    const llm::LlmGateway* gateway_;
    std::optional<RunDirectory> dir_;
    PipelineArtifacts artifacts_;
    bool have_queries_ = false;
    bool have_runs_ = false;
    bool have_fused_ = false;
};

struct LarmorResult {
    DrRanking ranking;
    PipelineArtifacts artifacts;
};

/// Runs the pipeline up to config.stage. The Full stage fuses the QFJ and
/// QFR rankings with RRF (k_rrf).
LarmorResult run_larmor(const Corpus& corpus, const Pool& pool, const PipelineConfig& config,
                        const llm::LlmGateway& gateway, std::optional<RunDirectory> run_dir = std::nullopt);

}  // namespace drselect::larmor
