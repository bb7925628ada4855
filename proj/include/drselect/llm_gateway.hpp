#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drselect/data_model.hpp"
#include "drselect/http.hpp"

namespace drselect {
class LexicalIndex;
}

namespace drselect::llm {

enum class Task { QueryGen, Judge, Setwise };

std::string_view to_string(Task task);

struct DomainHints {
    std::string query_type;  ///< e.g. "question", "counter-argument"
    std::string doc_type;    ///< e.g. "Wikipedia page", "scientific abstract"
};

/// A prompt with `{placeholder}` slots. Query generation needs `{document}`,
/// judging needs `{query}` and `{document}`, setwise ranking needs `{query}`
/// and `{candidates}`. `{query_type}` and `{doc_type}` are filled from the
/// domain hints. Any other `{identifier}` is rejected.
class PromptTemplate {
public:
    PromptTemplate(Task task, std::string text, DomainHints hints = {});

    Task task() const noexcept { return task_; }
    const std::string& text() const noexcept { return text_; }
    const DomainHints& hints() const noexcept { return hints_; }

    std::string render(const std::map<std::string, std::string>& values) const;

private:
    Task task_;
    std::string text_;
    DomainHints hints_;
};

/// Domains with shipped prompts: "generic", "wiki_qa", "scientific", "argument", "news".
std::vector<std::string> known_domains();
PromptTemplate default_template(Task task, std::string_view domain = "generic");
/// Reads a UTF-8 prompt asset.
PromptTemplate load_template(const std::filesystem::path& path, Task task, DomainHints hints = {});

struct GenerationParams {
    double top_p = 0.9;
    double temperature = 1.0;
    int max_tokens = 64;
    int n_samples = 1;
};

enum class GradedLabel { HighlyRelevant, SomewhatRelevant, NotRelevant };

std::string_view to_string(GradedLabel label);
/// Case-insensitive substring search for the three labels; the longest
/// matching label wins. nullopt when none occurs.
std::optional<GradedLabel> parse_label(std::string_view response);
/// HighlyRelevant -> 1, everything else -> 0.
int binarize(GradedLabel label);

/// One completion request. Besides the rendered prompt it carries the
/// structured inputs the prompt was built from, which text-only backends
/// ignore and the mock backend reads.
struct LlmRequest {
    Task task = Task::QueryGen;
    std::string prompt;
    GenerationParams params;
    int attempt = 0;  ///< 0 first try, 1 retry

    std::string document_id;
    std::string document;
    std::string query;
    std::optional<std::string> query_source_doc_id;
    std::vector<std::string> candidate_ids;
    std::vector<std::string> candidates;
};

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    /// Up to params.n_samples completions. Must be callable concurrently.
    virtual std::vector<std::string> complete(const LlmRequest& request) const = 0;
};

/// Deterministic stand-in for an LLM:
///  - query generation emits the document's top TF-IDF terms, the heaviest
///    always included, the rest sampled and shuffled per (seed, prompt, sample);
///  - judging answers Highly Relevant when the doc is the query's source or
///    covers at least half of the query's distinct tokens, Somewhat Relevant
///    on any overlap, Not Relevant otherwise;
///  - setwise picks the candidate covering most query tokens, first on ties.
class MockLlm final : public LlmBackend {
public:
    explicit MockLlm(std::uint64_t seed, std::shared_ptr<const LexicalIndex> stats = nullptr);
    std::vector<std::string> complete(const LlmRequest& request) const override;

    static constexpr std::size_t kQueryTerms = 4;
    static constexpr std::size_t kCandidateTerms = 8;

private:
    std::uint64_t seed_;
    std::shared_ptr<const LexicalIndex> stats_;
};

/// Fraction of the distinct tokens of `query` that occur in `doc`.
double token_overlap(std::string_view query, std::string_view doc);

struct HttpLlmSettings {
    HttpSettings http;
    std::string api_key_env = "DRSELECT_LLM_API_KEY";
    std::string model_name;
};

/// `POST {base_url}/generate` with `{"prompt", "top_p", "temperature",
/// "max_tokens", "n"}` expecting `{"outputs": [...]}`. The API key is read
/// from the environment variable named by api_key_env and sent as a bearer
/// token.
class HttpLlm final : public LlmBackend {
public:
    explicit HttpLlm(HttpLlmSettings settings);
    std::vector<std::string> complete(const LlmRequest& request) const override;

private:
    HttpLlmSettings settings_;
    HttpTransport transport_;
};

/// "Pick the most relevant of these" over at most set_size ids; returns the
/// index into the span.
using PickBest = std::function<std::size_t(std::span<const std::string>)>;

/// Heap sort whose sift step is one pick over a node and its set_size - 1
/// children. Returns a permutation of `items`, best first. An out-of-range
/// pick keeps the parent in place.
std::vector<std::string> setwise_heap_sort(std::vector<std::string> items, int set_size, const PickBest& pick);

struct GatewayOptions {
    GenerationParams query_gen{0.9, 1.0, 64, 1};
    GenerationParams judge{1.0, 0.0, 16, 1};
    GenerationParams setwise{1.0, 0.0, 8, 1};
    int candidate_token_budget = 128;  ///< whitespace tokens kept per setwise candidate
};

struct GatewayStats {
    std::atomic<std::size_t> backend_calls{0};
    std::atomic<std::size_t> judge_requests{0};
    std::atomic<std::size_t> setwise_comparisons{0};
    std::atomic<std::size_t> query_fallbacks{0};
    std::atomic<std::size_t> judge_fallbacks{0};
    std::atomic<std::size_t> setwise_fallbacks{0};
};

struct PromptSet {
    PromptTemplate query_gen = default_template(Task::QueryGen);
    PromptTemplate judge = default_template(Task::Judge);
    PromptTemplate setwise = default_template(Task::Setwise);
};

/// Builds prompts, calls the backend and parses the three kinds of answers.
class LlmGateway {
public:
    LlmGateway(std::shared_ptr<const LlmBackend> backend, PromptSet prompts = {}, GatewayOptions options = {});

    /// l queries with ids `{doc_id}#q{j}`, j = 1..l. Empty generations are
    /// re-requested once, then replaced by the title or the first 8 tokens.
    std::vector<Query> generate_queries(const Document& doc, int l) const;

    /// Unparseable answers are retried once, then count as NotRelevant.
    GradedLabel judge(const Query& query, const Document& doc) const;

    /// Setwise heap sort of the candidates with one LLM call per comparison.
    std::vector<std::string> setwise_rerank(const Query& query, const std::vector<const Document*>& candidates,
                                            int set_size = 3) const;

    const GatewayStats& stats() const noexcept { return *stats_; }
    const PromptSet& prompts() const noexcept { return prompts_; }

private:
    std::vector<std::string> call(LlmRequest& req) const;

    std::shared_ptr<const LlmBackend> backend_;
    PromptSet prompts_;
    GatewayOptions options_;
    std::unique_ptr<GatewayStats> stats_;
};

/// Title and text as they are shown to the LLM.
std::string document_view(const Document& doc);

}  // namespace drselect::llm
