#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <set>

#include "drselect/error.hpp"
#include "drselect/llm_gateway.hpp"
#include "drselect/retrieval.hpp"
#include "drselect/rng.hpp"
#include "drselect/text.hpp"
#include "world.hpp"

using namespace drselect;
using namespace drselect::llm;

namespace {

// Replays canned answers per task and records every request.
class ScriptedLlm final : public LlmBackend {
public:
    std::vector<std::string> complete(const LlmRequest& req) const override
    {
        std::lock_guard lock(mu_);
        requests.push_back(req);
        return answer(req);
    }
    std::function<std::vector<std::string>(const LlmRequest&)> answer;
    mutable std::vector<LlmRequest> requests;

private:
    mutable std::mutex mu_;
};

}  // namespace

TEST(PromptTemplate, ValidatesPlaceholders)
{
    EXPECT_NO_THROW(PromptTemplate(Task::QueryGen, "Doc: {document}"));
    EXPECT_THROW(PromptTemplate(Task::QueryGen, "no slot"), ValidationError);
    EXPECT_THROW(PromptTemplate(Task::Judge, "{query}"), ValidationError);
    EXPECT_THROW(PromptTemplate(Task::Judge, "{query} {document} {extra}"), ValidationError);
    EXPECT_NO_THROW(PromptTemplate(Task::Setwise, "{query_type} {query} {candidates}"));
    // braces that are not identifiers are plain text
    EXPECT_NO_THROW(PromptTemplate(Task::QueryGen, "{document} {} { x } {a-b}"));
}

TEST(PromptTemplate, Renders)
{
    const PromptTemplate t(Task::Judge, "[{query_type}] {query} / {document}", {"question", "page"});
    EXPECT_EQ(t.render({{"query", "q"}, {"document", "d"}}), "[question] q / d");
    EXPECT_THROW(t.render({{"query", "q"}}), ValidationError);
}

TEST(PromptTemplate, ShippedAssetsMatchDefaults)
{
    const std::filesystem::path root = std::filesystem::path(DRSELECT_SOURCE_DIR) / "prompts";
    for (const auto& domain : known_domains()) {
        for (Task t : {Task::QueryGen, Task::Judge, Task::Setwise}) {
            const auto def = default_template(t, domain);
            const auto path = root / domain / (std::string(to_string(t)) + ".txt");
            ASSERT_TRUE(std::filesystem::exists(path)) << path;
            EXPECT_EQ(load_template(path, t, def.hints()).text(), def.text()) << path;
        }
    }
    EXPECT_THROW(default_template(Task::Judge, "klingon"), ValidationError);
    EXPECT_THROW(load_template("/nonexistent/prompt.txt", Task::Judge), ValidationError);
}

TEST(ParseLabel, LongestMatchWins)
{
    EXPECT_EQ(parse_label("Highly Relevant"), GradedLabel::HighlyRelevant);
    EXPECT_EQ(parse_label("  somewhat RELEVANT."), GradedLabel::SomewhatRelevant);
    EXPECT_EQ(parse_label("The passage is not relevant"), GradedLabel::NotRelevant);
    EXPECT_EQ(parse_label("relevant"), std::nullopt);
    EXPECT_EQ(parse_label(""), std::nullopt);
    EXPECT_EQ(binarize(GradedLabel::HighlyRelevant), 1);
    EXPECT_EQ(binarize(GradedLabel::SomewhatRelevant), 0);
    EXPECT_EQ(binarize(GradedLabel::NotRelevant), 0);
}

TEST(TokenOverlap, Fraction)
{
    EXPECT_DOUBLE_EQ(token_overlap("a b c d", "b d x"), 0.5);
    EXPECT_DOUBLE_EQ(token_overlap("a a", "a"), 1.0);
    EXPECT_DOUBLE_EQ(token_overlap("", "a"), 0.0);
}

TEST(MockLlm, QueriesComeFromTopTerms)
{
    const auto w = testkit::make_world(2, 60, {0.0}, 1);
    MockLlm mock(9, w.index);
    LlmGateway gw(std::make_shared<MockLlm>(9, w.index));
    const Document& doc = w.corpus.docs()[0];
    const auto qs = gw.generate_queries(doc, 6);
    ASSERT_EQ(qs.size(), 6u);
    const auto top = w.index->tfidf_terms(document_view(doc));
    std::set<std::string> allowed;
    for (std::size_t i = 0; i < top.size() && i < MockLlm::kCandidateTerms; ++i) {
        allowed.insert(top[i].first);
    }
    for (std::size_t j = 0; j < qs.size(); ++j) {
        EXPECT_EQ(qs[j].query_id, doc.doc_id + "#q" + std::to_string(j + 1));
        EXPECT_EQ(qs[j].source_doc_id, doc.doc_id);
        const auto toks = drselect::text::split_ws(qs[j].text);
        EXPECT_EQ(toks.size(), std::min(MockLlm::kQueryTerms, allowed.size()));
        EXPECT_NE(std::find(toks.begin(), toks.end(), top[0].first), toks.end());
        for (const auto& t : toks) {
            EXPECT_TRUE(allowed.contains(t)) << t;
        }
    }
    EXPECT_EQ(gw.generate_queries(doc, 6), qs);
    LlmGateway other(std::make_shared<MockLlm>(10, w.index));
    EXPECT_NE(other.generate_queries(doc, 6), qs);
}

TEST(MockLlm, JudgeRules)
{
    LlmGateway gw(std::make_shared<MockLlm>(0));
    const Document src{"d1", "", "alpha beta gamma"};
    const Document half{"d2", "", "alpha beta zeta"};
    const Document some{"d3", "", "alpha zeta"};
    const Document none{"d4", "", "omega"};
    const Query q{"q", "alpha beta gamma delta", std::string("d1")};
    EXPECT_EQ(gw.judge(q, src), GradedLabel::HighlyRelevant);
    EXPECT_EQ(gw.judge(q, half), GradedLabel::HighlyRelevant);
    EXPECT_EQ(gw.judge(q, some), GradedLabel::SomewhatRelevant);
    EXPECT_EQ(gw.judge(q, none), GradedLabel::NotRelevant);
    const Query q2{"q2", "omega psi", std::string("d1")};
    EXPECT_EQ(gw.judge(q2, src), GradedLabel::HighlyRelevant);  // source doc
    EXPECT_EQ(gw.stats().judge_requests.load(), 5u);
}

TEST(MockLlm, SetwiseSortsByOverlap)
{
    LlmGateway gw(std::make_shared<MockLlm>(0));
    const std::vector<Document> docs{{"a", "", "x"}, {"b", "", "alpha"}, {"c", "", "alpha beta gamma"},
                                     {"d", "", "alpha beta"}, {"e", "", "zzz"}};
    std::vector<const Document*> ptrs;
    for (const auto& d : docs) {
        ptrs.push_back(&d);
    }
    const auto out = gw.setwise_rerank({"q", "alpha beta gamma", std::nullopt}, ptrs, 3);
    ASSERT_EQ(out.size(), 5u);
    EXPECT_EQ(std::vector<std::string>(out.begin(), out.begin() + 3), (std::vector<std::string>{"c", "d", "b"}));
    std::set<std::string> all(out.begin(), out.end());
    EXPECT_EQ(all.size(), 5u);
    EXPECT_THROW(gw.setwise_rerank({"q", "x", std::nullopt}, ptrs, 27), ValidationError);
}

TEST(SetwiseHeapSort, SortsAnyHiddenOrderForEverySetSize)
{
    SplitMix64 rng(17);
    for (int set_size = 2; set_size <= 6; ++set_size) {
        for (int n : {0, 1, 2, 3, 7, 20, 57}) {
            std::vector<std::string> items;
            for (int i = 0; i < n; ++i) {
                items.push_back("i" + std::to_string(i));
            }
            std::map<std::string, int> hidden;
            auto shuffled = items;
            rng.shuffle(shuffled);
            for (int i = 0; i < n; ++i) {
                hidden[shuffled[i]] = i;  // lower = better
            }
            const PickBest pick = [&](std::span<const std::string> g) {
                std::size_t best = 0;
                for (std::size_t i = 1; i < g.size(); ++i) {
                    if (hidden[g[i]] < hidden[g[best]]) {
                        best = i;
                    }
                }
                return best;
            };
            EXPECT_EQ(setwise_heap_sort(items, set_size, pick), shuffled) << set_size << " " << n;
        }
    }
    EXPECT_THROW(setwise_heap_sort({"a"}, 1, [](auto) { return std::size_t{0}; }), ValidationError);
}

TEST(SetwiseHeapSort, OutOfRangePickKeepsParent)
{
    const auto out = setwise_heap_sort({"a", "b", "c", "d"}, 3, [](auto) { return std::size_t{99}; });
    std::set<std::string> s(out.begin(), out.end());
    EXPECT_EQ(s.size(), 4u);
}

TEST(Gateway, QueryGenRetriesThenFallsBack)
{
    auto backend = std::make_shared<ScriptedLlm>();
    backend->answer = [](const LlmRequest& req) -> std::vector<std::string> {
        if (req.attempt == 0) {
            return {"  \"good query\"  ", "", "line one\nline two"};
        }
        return {""};
    };
    LlmGateway gw(backend);
    const auto qs = gw.generate_queries({"d9", "The Title", "body words here"}, 4);
    ASSERT_EQ(qs.size(), 4u);
    EXPECT_EQ(qs[0].text, "good query");
    EXPECT_EQ(qs[1].text, "The Title");
    EXPECT_EQ(qs[2].text, "line one");
    EXPECT_EQ(qs[3].text, "The Title");
    EXPECT_EQ(gw.stats().query_fallbacks.load(), 2u);
    ASSERT_EQ(backend->requests.size(), 2u);
    EXPECT_EQ(backend->requests[0].params.n_samples, 4);
    EXPECT_EQ(backend->requests[1].params.n_samples, 2);
    EXPECT_NE(backend->requests[0].prompt.find("body words here"), std::string::npos);

    backend->answer = [](const LlmRequest&) -> std::vector<std::string> { return {}; };
    const auto untitled = gw.generate_queries({"d8", "", "one two three four five six seven eight nine"}, 1);
    EXPECT_EQ(untitled[0].text, "one two three four five six seven eight");
    EXPECT_THROW(gw.generate_queries({"d7", "", "x"}, 0), ValidationError);
}

TEST(Gateway, JudgeFallsBackToNotRelevant)
{
    auto backend = std::make_shared<ScriptedLlm>();
    backend->answer = [](const LlmRequest& req) -> std::vector<std::string> {
        return {req.attempt == 0 ? "maybe?" : "I think it is Somewhat relevant"};
    };
    LlmGateway gw(backend);
    EXPECT_EQ(gw.judge({"q", "x", std::nullopt}, {"d", "", "y"}), GradedLabel::SomewhatRelevant);
    backend->answer = [](const LlmRequest&) -> std::vector<std::string> { return {"no idea"}; };
    EXPECT_EQ(gw.judge({"q", "x", std::nullopt}, {"d", "", "y"}), GradedLabel::NotRelevant);
    EXPECT_EQ(gw.stats().judge_fallbacks.load(), 1u);
    EXPECT_EQ(backend->requests.size(), 4u);
    EXPECT_EQ(backend->requests[0].params.temperature, 0.0);
}

TEST(Gateway, SetwisePromptAndFallback)
{
    auto backend = std::make_shared<ScriptedLlm>();
    backend->answer = [](const LlmRequest&) -> std::vector<std::string> { return {"Passage Q"}; };
    GatewayOptions opts;
    opts.candidate_token_budget = 2;
    LlmGateway gw(backend, {}, opts);
    const Document a{"a", "", "one two three"};
    const Document b{"b", "", "four five six"};
    const auto out = gw.setwise_rerank({"q", "query text", std::nullopt}, {&a, &b}, 3);
    EXPECT_EQ(out.size(), 2u);
    ASSERT_FALSE(backend->requests.empty());
    const auto& req = backend->requests[0];
    EXPECT_NE(req.prompt.find("Passage A: \"one two\""), std::string::npos) << req.prompt;
    EXPECT_NE(req.prompt.find("Passage B: \"four five\""), std::string::npos);
    EXPECT_EQ(req.candidate_ids, (std::vector<std::string>{"a", "b"}));
    EXPECT_GE(gw.stats().setwise_fallbacks.load(), 1u);
    EXPECT_THROW(gw.setwise_rerank({"q", "x", std::nullopt}, {&a, &a}, 3), ValidationError);
}

TEST(Gateway, RejectsMisassignedPrompts)
{
    PromptSet ps;
    ps.judge = default_template(Task::Setwise);
    EXPECT_THROW(LlmGateway(std::make_shared<MockLlm>(0), ps), ValidationError);
    EXPECT_THROW(LlmGateway(nullptr), ValidationError);
}
