#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "drselect/error.hpp"
#include "drselect/retrieval.hpp"
#include "world.hpp"

using namespace drselect;

namespace {

Corpus tiny()
{
    return Corpus("tiny", {{"d1", "", "apple banana apple"}, {"d2", "", "banana cherry"}, {"d3", "", "durian"}});
}

}  // namespace

TEST(LexicalIndex, TermStatistics)
{
    const LexicalIndex idx(tiny());
    EXPECT_EQ(idx.num_docs(), 3u);
    EXPECT_EQ(idx.vocabulary_size(), 4u);
    const auto banana = *idx.term_id("banana");
    EXPECT_EQ(idx.df(banana), 2u);
    EXPECT_EQ(idx.cf(*idx.term_id("apple")), 2u);
    EXPECT_EQ(idx.total_tokens(), 6u);
    EXPECT_DOUBLE_EQ(idx.idf(banana), std::log(1.0 + 3.0 / 2.0));
    EXPECT_FALSE(idx.term_id("zebra"));
    EXPECT_EQ(idx.doc_length(0), 3u);
}

TEST(LexicalIndex, CosineMatchesHandComputation)
{
    const LexicalIndex idx(tiny());
    const double ia = std::log(1.0 + 3.0);        // apple, df 1
    const double ib = std::log(1.0 + 1.5);        // banana, df 2
    const double ic = std::log(1.0 + 3.0);        // cherry, df 1
    const auto s = idx.cosine_scores("banana");
    // query vector (ib); d1 = (2 ia, ib); d2 = (ib, ic)
    EXPECT_NEAR(s[0], ib * ib / (ib * std::sqrt(4 * ia * ia + ib * ib)), 1e-12);
    EXPECT_NEAR(s[1], ib * ib / (ib * std::sqrt(ib * ib + ic * ic)), 1e-12);
    EXPECT_EQ(s[2], 0.0);
    EXPECT_EQ(idx.cosine_scores("zebra"), std::vector<double>(3, 0.0));
}

TEST(LexicalIndex, TfidfTermsOrder)
{
    const LexicalIndex idx(tiny());
    const auto t = idx.tfidf_terms("banana apple apple zebra");
    ASSERT_EQ(t.size(), 3u);
    EXPECT_EQ(t[0].first, "apple");  // 2 * ln 4
    EXPECT_EQ(t[1].first, "zebra");  // unknown: ln 4
    EXPECT_EQ(t[2].first, "banana");
}

TEST(LexicalRetriever, NoiselessReturnsOnlyMatches)
{
    auto idx = std::make_shared<LexicalIndex>(tiny());
    LexicalRetriever r(idx);
    const auto list = r.search({"q", "banana", std::nullopt}, 10);
    ASSERT_EQ(list.docs.size(), 2u);
    EXPECT_EQ(list.docs[0].doc_id, "d2");
    EXPECT_EQ(list.depth, 10);
    EXPECT_EQ(r.search({"q", "banana", std::nullopt}, 1).docs.size(), 1u);
    EXPECT_THROW(r.search({"q", "banana", std::nullopt}, 0), ValidationError);
}

TEST(LexicalRetriever, NoiseIsDeterministicAndKeyedOnSeed)
{
    auto idx = std::make_shared<LexicalIndex>(tiny());
    LexicalRetriever a(idx, 0.5, 1);
    LexicalRetriever b(idx, 0.5, 1);
    LexicalRetriever c(idx, 0.5, 2);
    const Query q{"q", "banana", std::nullopt};
    EXPECT_EQ(a.search(q, 10), b.search(q, 10));
    EXPECT_NE(a.search(q, 10), c.search(q, 10));
    EXPECT_EQ(a.search(q, 10).docs.size(), 3u);
    // keyed on query text, not id
    EXPECT_EQ(a.search({"other", "banana", std::nullopt}, 10), a.search(q, 10));
    EXPECT_THROW(LexicalRetriever(idx, -1.0), ValidationError);
}

TEST(LexicalRetriever, ScoresSortedAndDistinct)
{
    const auto w = testkit::make_world(3, 100, {0.0, 1.0}, 5);
    for (const auto& m : w.pool) {
        for (const auto& q : w.real_queries) {
            const auto list = m.retriever->search(q, 50);
            std::set<std::string> ids;
            for (std::size_t i = 0; i < list.docs.size(); ++i) {
                ids.insert(list.docs[i].doc_id);
                if (i > 0) {
                    EXPECT_GE(list.docs[i - 1].score, list.docs[i].score);
                }
            }
            EXPECT_EQ(ids.size(), list.docs.size());
        }
    }
}

TEST(RunFileRetriever, ReplaysAndRaisesMissingQuery)
{
    const drselect::Run run = parse_run("q1 Q0 a 1 3 x\nq1 Q0 b 2 2 x\nq1 Q0 c 3 1 x\n");
    RunFileRetriever r(run);
    EXPECT_FALSE(r.supports_live_search());
    const auto list = r.search({"q1", "ignored", std::nullopt}, 2);
    ASSERT_EQ(list.docs.size(), 2u);
    EXPECT_EQ(list.docs[1].doc_id, "b");
    EXPECT_THROW(r.search({"q2", "", std::nullopt}, 2), MissingQuery);
}

TEST(MakeRetriever, BuildsEachBackend)
{
    testkit::TempDir dir;
    testkit::write_text(dir.path() / "a.trec", "q1 Q0 d1 1 1 a\n");
    testkit::write_text(dir.path() / "c.jsonl", "{\"_id\": \"x\", \"text\": \"apple\"}\n");
    auto idx = std::make_shared<LexicalIndex>(tiny());

    PoolEntry rf{"a", BackendKind::RunFile, "a.trec"};
    auto r1 = make_retriever(rf, idx, dir.path());
    EXPECT_FALSE(r1->supports_live_search());

    PoolEntry lx{"b", BackendKind::Lexical, ""};
    EXPECT_EQ(make_retriever(lx, idx)->search({"q", "apple", std::nullopt}, 5).docs[0].doc_id, "d1");
    EXPECT_THROW(make_retriever(lx, nullptr), ValidationError);

    PoolEntry own{"c", BackendKind::Lexical, "c.jsonl"};
    EXPECT_EQ(make_retriever(own, idx, dir.path())->search({"q", "apple", std::nullopt}, 5).docs[0].doc_id, "x");

    PoolEntry missing{"d", BackendKind::RunFile, "nope.trec"};
    EXPECT_THROW(make_retriever(missing, idx, dir.path()), ValidationError);

    PoolEntry http{"e", BackendKind::Http, "http://127.0.0.1:1"};
    EXPECT_TRUE(make_retriever(http, idx)->supports_live_search());
}

TEST(BatchSearch, CollectsPerQueryErrors)
{
    const drselect::Run run = parse_run("q1 Q0 a 1 3 x\n");
    RunFileRetriever r(run);
    const std::vector<Query> qs{{"q1", "", std::nullopt}, {"q2", "", std::nullopt}};
    const auto res = batch_search(r, qs, 10, 2);
    EXPECT_EQ(res.results.size(), 1u);
    ASSERT_EQ(res.errors.size(), 1u);
    EXPECT_TRUE(res.errors.contains("q2"));
    const std::vector<Query> bad{{"q3", "", std::nullopt}};
    EXPECT_THROW(batch_search(r, bad, 10), MissingQuery);
    EXPECT_THROW(batch_search(r, {}, 10), ValidationError);
    const drselect::Run back = to_run("x", res.results);
    EXPECT_EQ(back.ranked_ids("q1"), std::vector<std::string>{"a"});
}

TEST(AlterQuery, DeletesOneTokenRoundRobin)
{
    const Query q{"q", "a b c", std::nullopt};
    const auto v = alter_query(q, 5, 1);
    ASSERT_EQ(v.size(), 3u);
    EXPECT_EQ(v[0].text, "a c");
    EXPECT_EQ(v[1].text, "a b");
    EXPECT_EQ(v[2].text, "b c");
    EXPECT_EQ(v[0].query_id, "q#alt1");
    EXPECT_EQ(alter_query(q, 2, 0).size(), 2u);
    const auto single = alter_query({"s", "word", std::nullopt}, 5, 0);
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(single[0].text, "word");
    EXPECT_THROW(alter_query({"e", "  ", std::nullopt}, 2, 0), ValidationError);
    EXPECT_THROW(alter_query(q, 0, 0), ValidationError);
}
