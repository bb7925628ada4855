#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>

#include "drselect/error.hpp"
#include "drselect/larmor.hpp"
#include "drselect/metrics.hpp"
#include "world.hpp"

using namespace drselect;
using namespace drselect::larmor;

namespace {

class CountingLlm final : public llm::LlmBackend {
public:
    explicit CountingLlm(std::shared_ptr<const llm::LlmBackend> inner) : inner_(std::move(inner)) {}
    std::vector<std::string> complete(const llm::LlmRequest& req) const override
    {
        ++calls[static_cast<int>(req.task)];
        return inner_->complete(req);
    }
    std::size_t count(llm::Task t) const { return calls[static_cast<int>(t)].load(); }
    mutable std::atomic<std::size_t> calls[3]{};

private:
    std::shared_ptr<const llm::LlmBackend> inner_;
};

PipelineConfig small_config()
{
    PipelineConfig c;
    c.k = 6;
    c.l = 2;
    c.m = 10;
    c.retrieval_depth = 50;
    c.seed = 3;
    c.workers = 2;
    return c;
}

// Hand-built artifacts over six docs and three run-file retrievers.
struct Fixture {
    Corpus corpus{"fx", {{"d1", "", "apple"}, {"d2", "", "banana"}, {"d3", "", "cherry"},
                         {"d4", "", "date"}, {"d5", "", "elder"}, {"d6", "", "fig"}}};
    Pool pool;
    PipelineArtifacts art;

    Fixture()
    {
        art.generated_queries = {{"g1", "apple", std::string("d1")}, {"g2", "banana", std::string("d2")}};
        add("A", "g1 Q0 d1 1 3 A\ng1 Q0 d2 2 2 A\ng1 Q0 d3 3 1 A\ng2 Q0 d2 1 3 A\ng2 Q0 d4 2 2 A\n");
        add("B", "g1 Q0 d2 1 3 B\ng1 Q0 d1 2 2 B\ng1 Q0 d3 3 1 B\ng2 Q0 d4 1 3 B\ng2 Q0 d2 2 2 B\n");
        add("C", "g1 Q0 d5 1 3 C\ng1 Q0 d6 2 2 C\ng2 Q0 d6 1 1 C\n");
    }
    void add(const std::string& id, const std::string& trec)
    {
        drselect::Run run = parse_run(trec);
        run.dr_id = id;
        art.runs[id] = run;
        pool.push_back({id, std::make_shared<RunFileRetriever>(run)});
    }
};

double dcg_rank(std::size_t rank)
{
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

}  // namespace

TEST(PipelineConfig, Validates)
{
    PipelineConfig c;
    EXPECT_NO_THROW(c.validate());
    c.m = 1001;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.k = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.rbo_p = 1.0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = {};
    c.set_size = 1;
    EXPECT_THROW(c.validate(), ValidationError);
    EXPECT_EQ(parse_stage("qfj"), Stage::QFJ);
    EXPECT_EQ(parse_stage("larmor"), Stage::Full);
    EXPECT_EQ(parse_stage("full"), std::nullopt);
}

TEST(StageQ, SourceDocIsTheOnlyRelevantDoc)
{
    Fixture f;
    const auto r = stage_q(f.art, f.pool, {});
    const auto s = r.scores();
    EXPECT_DOUBLE_EQ(s.at("A"), 1.0);
    EXPECT_DOUBLE_EQ(s.at("B"), (dcg_rank(2) + dcg_rank(2)) / 2.0);
    EXPECT_EQ(s.at("C"), 0.0);
    EXPECT_EQ(r.order(), (std::vector<std::string>{"A", "B", "C"}));
    const Pool single{f.pool[2]};
    EXPECT_EQ(stage_q(f.art, single, {}).size(), 1u);
}

TEST(BuildFused, SingleMemberAndHandRrf)
{
    Fixture f;
    PipelineConfig c;
    c.m = 2;
    const auto solo = build_fused(f.art, Pool{f.pool[0]}, c);
    EXPECT_EQ(solo.at("g1").ids(), (std::vector<std::string>{"d1", "d2"}));
    c.m = 100;
    const auto fused = build_fused(f.art, f.pool, c);
    // g1: d1 = 1/61+1/62, d2 = 1/62+1/61, d3 = 2/63, d5 = 1/61, d6 = 1/62
    EXPECT_EQ(fused.at("g1").ids(), (std::vector<std::string>{"d1", "d2", "d3", "d5", "d6"}));
    EXPECT_NEAR(fused.at("g1").items[2].score, 2.0 / 63, 1e-15);
    EXPECT_EQ(fused.at("g2").ids(), (std::vector<std::string>{"d2", "d4", "d6"}));
}

TEST(StageQf, MeanRboAgainstFused)
{
    Fixture f;
    PipelineConfig c;
    f.art.fused = build_fused(f.art, f.pool, c);
    const auto r = stage_qf(f.art, f.pool, c);
    for (const auto& m : f.pool) {
        double sum = 0.0;
        for (const auto& q : f.art.generated_queries) {
            sum += metrics::rbo(f.art.runs[m.dr_id].ranked_ids(q.query_id), f.art.fused[q.query_id].ids(), c.rbo_p);
        }
        EXPECT_NEAR(r.scores().at(m.dr_id), sum / 2.0, 1e-15) << m.dr_id;
    }
    // a member equal to the fused lists scores 1, a disjoint one 0
    drselect::Run same;
    drselect::Run apart;
    for (const auto& [qid, fr] : f.art.fused) {
        int rank = 1;
        for (const auto& item : fr.items) {
            same.entries[qid].push_back({item.item_id, 100.0 - rank, rank});
            ++rank;
        }
        apart.entries[qid].push_back({"zz", 1.0, 1});
    }
    f.art.runs["S"] = same;
    f.art.runs["Z"] = apart;
    Pool wider = f.pool;
    wider.push_back({"S", nullptr});
    wider.push_back({"Z", nullptr});
    const auto r2 = stage_qf(f.art, wider, c);
    // A's short lists are prefixes of the fused lists, so it ties S at depth min(|a|, |b|)
    EXPECT_EQ(r2.scores().at("S"), 1.0);
    EXPECT_EQ(r2.scores().at("A"), 1.0);
    EXPECT_EQ(r2.entries().front().score, 1.0);
    EXPECT_EQ(r2.order().back(), "Z");
    EXPECT_EQ(r2.scores().at("Z"), 0.0);
}

TEST(StageConsistency, IdentityReferenceAndTopOneJudgments)
{
    Fixture f;
    PipelineConfig c;
    f.art.fused = build_fused(f.art, f.pool, c);
    ReferenceLists refs;
    Qrels qrels;
    for (const auto& [qid, fr] : f.art.fused) {
        refs[qid] = fr.ids();
        for (std::size_t i = 0; i < fr.items.size(); ++i) {
            qrels.set(qid, fr.items[i].item_id, i == 0 ? 1 : 0);
        }
    }
    f.art.reference_lists = refs;
    f.art.pseudo_qrels = qrels;
    const auto qf = stage_qf(f.art, f.pool, c);
    const auto qfr = stage_qfr(f.art, f.pool, c);
    EXPECT_EQ(qfr.entries(), qf.entries());
    // qfj: reciprocal log-rank of the fused top doc in each member's list
    const auto qfj = stage_qfj(f.art, f.pool, c).scores();
    for (const auto& m : f.pool) {
        double sum = 0.0;
        for (const auto& q : f.art.generated_queries) {
            const auto ids = f.art.runs[m.dr_id].ranked_ids(q.query_id);
            const auto& top = f.art.fused[q.query_id].items.front().item_id;
            for (std::size_t i = 0; i < ids.size() && i < 10; ++i) {
                if (ids[i] == top) {
                    sum += dcg_rank(i + 1);
                }
            }
        }
        EXPECT_NEAR(qfj.at(m.dr_id), sum / 2.0, 1e-15) << m.dr_id;
    }
}

TEST(StageQfj, AllNotRelevantTiesInIdOrder)
{
    Fixture f;
    Qrels none;
    none.set("g1", "d1", 0);
    f.art.pseudo_qrels = none;
    const auto r = stage_qfj(f.art, f.pool, {});
    EXPECT_EQ(r.order(), (std::vector<std::string>{"A", "B", "C"}));
    for (const auto& e : r.entries()) {
        EXPECT_EQ(e.score, 0.0);
    }
    f.art.pseudo_qrels.reset();
    EXPECT_THROW(stage_qfj(f.art, f.pool, {}), ValidationError);
}

TEST(StageQfr, HiddenOrderReranker)
{
    Fixture f;
    PipelineConfig c;
    f.art.fused = build_fused(f.art, f.pool, c);
    // hidden relevance: ascending doc id, so member A's g1 list is the ideal
    class ById final : public llm::LlmBackend {
    public:
        std::vector<std::string> complete(const llm::LlmRequest& req) const override
        {
            const auto it = std::min_element(req.candidate_ids.begin(), req.candidate_ids.end());
            return {std::string("Passage ") + static_cast<char>('A' + (it - req.candidate_ids.begin()))};
        }
    };
    llm::LlmGateway gw(std::make_shared<ById>());
    f.art.reference_lists = rerank_fused(f.art, f.corpus, c, gw);
    for (const auto& [qid, ids] : *f.art.reference_lists) {
        EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end())) << qid;
        EXPECT_EQ(ids.size(), f.art.fused[qid].items.size());
    }
    const auto r = stage_qfr(f.art, f.pool, c);
    EXPECT_EQ(r.top(), "A");
    EXPECT_EQ(r.order().back(), "C");
}

TEST(StageQfr, SingletonListsTie)
{
    Fixture f;
    PipelineConfig c;
    c.m = 1;
    f.art.fused = build_fused(f.art, f.pool, c);
    ReferenceLists refs;
    for (const auto& [qid, fr] : f.art.fused) {
        ASSERT_EQ(fr.items.size(), 1u);
        refs[qid] = fr.ids();
    }
    f.art.reference_lists = refs;
    // g1 top is d1 (A's rank 1); g2 top is d2 (A's rank 1). Only A has both at rank 1.
    const auto s = stage_qfr(f.art, f.pool, c).scores();
    EXPECT_EQ(s.at("A"), 1.0);
}

TEST(Pipeline, FullRunOnWorld)
{
    const auto w = testkit::make_world(21, 120, {0.0, 0.5, 2.0}, 1);
    auto counting = std::make_shared<CountingLlm>(std::make_shared<llm::MockLlm>(5, w.index));
    llm::LlmGateway gw(counting);
    const auto cfg = small_config();
    const auto res = run_larmor(w.corpus, w.pool, cfg, gw);
    const auto& a = res.artifacts;
    EXPECT_EQ(a.generated_queries.size(), cfg.k * static_cast<std::size_t>(cfg.l));
    std::size_t judged = 0;
    for (const auto& [qid, fr] : a.fused) {
        EXPECT_LE(fr.items.size(), cfg.m);
        judged += fr.items.size();
        ASSERT_TRUE(a.reference_lists->contains(qid));
        EXPECT_EQ(a.reference_lists->at(qid).size(), fr.items.size());
    }
    EXPECT_EQ(judged, a.generated_queries.size() * cfg.m);
    EXPECT_EQ(gw.stats().judge_requests.load(), a.generated_queries.size() * cfg.m);
    EXPECT_EQ(counting->count(llm::Task::Judge), a.generated_queries.size() * cfg.m);
    EXPECT_LE(counting->count(llm::Task::Setwise),
              static_cast<std::size_t>(a.generated_queries.size() * 2.0 * cfg.m * std::log2(cfg.m)));
    // mock self-relevance: a source doc inside the fused list is judged relevant
    for (const auto& q : a.generated_queries) {
        const auto* j = a.pseudo_qrels->for_query(q.query_id);
        ASSERT_NE(j, nullptr);
        if (j->contains(*q.source_doc_id)) {
            EXPECT_EQ(j->at(*q.source_doc_id), 1) << q.query_id;
        }
    }
    for (Stage s : {Stage::Q, Stage::QF, Stage::QFJ, Stage::QFR, Stage::Full}) {
        EXPECT_TRUE(a.stage_rankings.contains(s));
    }
    EXPECT_EQ(a.stage_rankings.at(Stage::Q).order(), w.quality_order());
    const auto expect_full = fusion::fuse_dr_rankings({a.stage_rankings.at(Stage::QFJ), a.stage_rankings.at(Stage::QFR)});
    EXPECT_EQ(res.ranking.scores(), expect_full.scores());
    EXPECT_EQ(res.ranking.method_id(), "larmor");
    EXPECT_EQ(res.ranking.top(), w.quality_order().front());

    llm::LlmGateway gw2(std::make_shared<llm::MockLlm>(5, w.index));
    const auto again = run_larmor(w.corpus, w.pool, cfg, gw2);
    EXPECT_EQ(again.ranking, res.ranking);
    EXPECT_EQ(again.artifacts.generated_queries, a.generated_queries);
    EXPECT_EQ(again.artifacts.runs, a.runs);
    EXPECT_EQ(again.artifacts.fused, a.fused);
    EXPECT_EQ(*again.artifacts.pseudo_qrels, *a.pseudo_qrels);
    EXPECT_EQ(*again.artifacts.reference_lists, *a.reference_lists);
}

TEST(Pipeline, SingleStageSkipsLaterWork)
{
    const auto w = testkit::make_world(22, 80, {0.0, 1.0}, 1);
    auto counting = std::make_shared<CountingLlm>(std::make_shared<llm::MockLlm>(1, w.index));
    llm::LlmGateway gw(counting);
    auto cfg = small_config();
    cfg.stage = Stage::QF;
    const auto res = run_larmor(w.corpus, w.pool, cfg, gw);
    EXPECT_EQ(res.ranking.method_id(), "qf");
    EXPECT_EQ(counting->count(llm::Task::Judge), 0u);
    EXPECT_EQ(counting->count(llm::Task::Setwise), 0u);
    EXPECT_FALSE(res.artifacts.pseudo_qrels);
    EXPECT_THROW(run_larmor(w.corpus, Pool{w.pool[0]}, cfg, gw), ValidationError);
}

TEST(Pipeline, ResumesFromDiskAndForceInvalidates)
{
    const auto w = testkit::make_world(23, 80, {0.0, 1.0}, 1);
    testkit::TempDir tmp;
    const RunDirectory dir(tmp.path() / "run");
    const auto cfg = small_config();
    DrRanking first;
    {
        llm::LlmGateway gw(std::make_shared<llm::MockLlm>(2, w.index));
        first = run_larmor(w.corpus, w.pool, cfg, gw, dir).ranking;
    }
    for (const auto& p : {dir.queries_path(), dir.fused_path(), dir.qrels_path(), dir.reference_path(),
                          dir.ranking_path("larmor"), dir.ranking_path("q"), dir.run_path(w.pool[0].dr_id)}) {
        EXPECT_TRUE(std::filesystem::exists(p)) << p;
    }
    EXPECT_EQ(parse_ranking_json(testkit::read_text(dir.ranking_path("larmor")), "larmor"), first);

    // drop the reference lists: only setwise calls are made on resume
    std::filesystem::remove(dir.reference_path());
    {
        auto counting = std::make_shared<CountingLlm>(std::make_shared<llm::MockLlm>(2, w.index));
        llm::LlmGateway gw(counting);
        EXPECT_EQ(run_larmor(w.corpus, w.pool, cfg, gw, dir).ranking, first);
        EXPECT_EQ(counting->count(llm::Task::QueryGen), 0u);
        EXPECT_EQ(counting->count(llm::Task::Judge), 0u);
        EXPECT_GT(counting->count(llm::Task::Setwise), 0u);
    }
    // a lost run file is re-retrieved and invalidates fused, qrels and references
    std::filesystem::remove(dir.run_path(w.pool[1].dr_id));
    {
        auto counting = std::make_shared<CountingLlm>(std::make_shared<llm::MockLlm>(2, w.index));
        llm::LlmGateway gw(counting);
        EXPECT_EQ(run_larmor(w.corpus, w.pool, cfg, gw, dir).ranking, first);
        EXPECT_EQ(counting->count(llm::Task::QueryGen), 0u);
        EXPECT_GT(counting->count(llm::Task::Judge), 0u);
    }
    // forcing new queries with another LLM seed rebuilds everything downstream
    {
        llm::LlmGateway gw(std::make_shared<llm::MockLlm>(99, w.index));
        Pipeline p(w.corpus, w.pool, cfg, &gw, dir);
        p.ensure_queries(true);
        EXPECT_FALSE(std::filesystem::exists(dir.fused_path()));
        EXPECT_FALSE(std::filesystem::exists(dir.qrels_path()));
        EXPECT_FALSE(std::filesystem::exists(dir.run_path(w.pool[0].dr_id)));
        p.rank(Stage::QFJ);
        EXPECT_TRUE(std::filesystem::exists(dir.qrels_path()));
    }
}

TEST(Pipeline, RejectsStaleArtifacts)
{
    const auto w = testkit::make_world(24, 80, {0.0, 1.0}, 1);
    testkit::TempDir tmp;
    const RunDirectory dir(tmp.path());
    llm::LlmGateway gw(std::make_shared<llm::MockLlm>(2, w.index));
    auto cfg = small_config();
    cfg.stage = Stage::QFJ;
    run_larmor(w.corpus, w.pool, cfg, gw, dir);
    const auto good = testkit::read_text(dir.qrels_path());
    testkit::write_text(dir.qrels_path(), good + "ghost#q1 0 " + w.corpus.docs()[0].doc_id + " 1\n");
    EXPECT_THROW(run_larmor(w.corpus, w.pool, cfg, gw, dir), ValidationError);
    const auto qid = dir.load_queries().front().query_id;
    testkit::write_text(dir.qrels_path(), good + qid + " 0 not_a_doc 1\n");
    EXPECT_THROW(run_larmor(w.corpus, w.pool, cfg, gw, dir), ValidationError);
    testkit::write_text(dir.qrels_path(), good);
    EXPECT_NO_THROW(run_larmor(w.corpus, w.pool, cfg, gw, dir));
}

TEST(Pipeline, NeedsGatewayOnlyForLlmSteps)
{
    const auto w = testkit::make_world(25, 60, {0.0, 1.0}, 1);
    Pipeline p(w.corpus, w.pool, small_config(), nullptr);
    EXPECT_THROW(p.ensure_queries(), ValidationError);
    const Pool none;
    llm::LlmGateway gw(std::make_shared<llm::MockLlm>(2, w.index));
    Pipeline q(w.corpus, none, small_config(), &gw);
    EXPECT_NO_THROW(q.ensure_queries());
    EXPECT_THROW(q.ensure_runs(), ValidationError);
}
