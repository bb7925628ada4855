#include "drselect/larmor.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "drselect/error.hpp"
#include "drselect/parallel.hpp"

namespace drselect::larmor {

using nlohmann::json;

std::string_view to_string(Stage stage)
{
    switch (stage) {
    case Stage::Q:
        return "q";
    case Stage::QF:
        return "qf";
    case Stage::QFJ:
        return "qfj";
    case Stage::QFR:
        return "qfr";
    case Stage::Full:
        return "larmor";
    }
    return "?";
}

std::optional<Stage> parse_stage(std::string_view name)
{
    for (Stage s : {Stage::Q, Stage::QF, Stage::QFJ, Stage::QFR, Stage::Full}) {
        if (name == to_string(s)) {
            return s;
        }
    }
    return std::nullopt;
}

void PipelineConfig::validate() const
{
    if (k < 1 || l < 1 || m < 1) {
        throw ValidationError("k, l and m must all be >= 1");
    }
    if (retrieval_depth < 1 || m > static_cast<std::size_t>(retrieval_depth)) {
        throw ValidationError("m (" + std::to_string(m) + ") must not exceed the retrieval depth (" +
                              std::to_string(retrieval_depth) + ")");
    }
    if (!(k_rrf > 0.0)) {
        throw ValidationError("k_rrf must be positive");
    }
    if (!(rbo_p > 0.0 && rbo_p < 1.0)) {
        throw ValidationError("rbo_p must lie in (0, 1)");
    }
    if (measure.cutoff < 1) {
        throw ValidationError("measure cutoff must be >= 1");
    }
    if (set_size < 2 || set_size > 26) {
        throw ValidationError("setwise set size must lie in [2, 26]");
    }
}

namespace {

// Rethrows the in-flight exception as the same error class with context prepended.
[[noreturn]] void rethrow_with(const std::string& ctx)
{
    try {
        throw;
    } catch (const BackendUnavailable& e) {
        throw BackendUnavailable(ctx + ": " + e.what());
    } catch (const MissingQuery& e) {
        throw MissingQuery(ctx + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(ctx + ": " + e.what());
    } catch (const Error& e) {
        throw Error(ctx + ": " + e.what());
    }
}

const Run& run_of(const PipelineArtifacts& a, const std::string& dr_id)
{
    auto it = a.runs.find(dr_id);
    if (it == a.runs.end()) {
        throw ValidationError("no run for retriever '" + dr_id + "'");
    }
    return it->second;
}

template <typename PerQuery>
DrRanking rank_by_mean(std::string method, const PipelineArtifacts& a, const Pool& pool, PerQuery&& per_query)
{
    if (a.generated_queries.empty()) {
        throw ValidationError("no generated queries");
    }
    std::map<std::string, double> scores;
    for (const auto& member : pool) {
        const Run& run = run_of(a, member.dr_id);
        double sum = 0.0;
        for (const auto& q : a.generated_queries) {
            sum += per_query(q, run.ranked_ids(q.query_id));
        }
        scores[member.dr_id] = sum / static_cast<double>(a.generated_queries.size());
    }
    return DrRanking::from_scores(std::move(method), scores);
}

double rbo_or_zero(const std::vector<std::string>& a, const std::vector<std::string>& b, double p)
{
    if (a.empty() || b.empty()) {
        return 0.0;
    }
    return metrics::rbo(a, b, p);
}

const Document& doc_of(const Corpus& corpus, const std::string& doc_id)
{
    const Document* d = corpus.find(doc_id);
    if (d == nullptr) {
        throw ValidationError("document '" + doc_id + "' is not in the corpus");
    }
    return *d;
}

}  // namespace

std::vector<Query> generate_pseudo_queries(const Corpus& corpus, const PipelineConfig& config,
                                           const llm::LlmGateway& gateway)
{
    config.validate();
    const auto sample = sample_documents(corpus, config.k, config.seed);
    std::vector<std::vector<Query>> per_doc(sample.size());
    parallel_for(sample.size(), config.workers,
                 [&](std::size_t i) { per_doc[i] = gateway.generate_queries(sample[i], config.l); });
    std::vector<Query> out;
    out.reserve(sample.size() * static_cast<std::size_t>(config.l));
    for (auto& qs : per_doc) {
        for (auto& q : qs) {
            out.push_back(std::move(q));
        }
    }
    return out;
}

std::map<std::string, Run> retrieve_runs(const Pool& pool, const std::vector<Query>& queries,
                                         const PipelineConfig& config)
{
    std::map<std::string, Run> runs;
    for (const auto& member : pool) {
        if (!member.retriever) {
            throw ValidationError("retriever '" + member.dr_id + "' has no backend");
        }
        std::vector<ScoredList> lists(queries.size());
        parallel_for(queries.size(), config.workers, [&](std::size_t i) {
            try {
                lists[i] = member.retriever->search(queries[i], config.retrieval_depth);
            } catch (const Error&) {
                rethrow_with("retriever '" + member.dr_id + "', query '" + queries[i].query_id + "'");
            }
        });
        std::map<std::string, ScoredList> by_query;
        for (std::size_t i = 0; i < queries.size(); ++i) {
            if (!lists[i].docs.empty()) {
                by_query[queries[i].query_id] = std::move(lists[i]);
            }
        }
        runs[member.dr_id] = to_run(member.dr_id, by_query);
    }
    return runs;
}

std::map<std::string, fusion::FusedRanking> build_fused(const PipelineArtifacts& artifacts, const Pool& pool,
                                                        const PipelineConfig& config)
{
    if (pool.empty()) {
        throw ValidationError("empty retriever pool");
    }
    std::vector<const Run*> runs;
    for (const auto& member : pool) {
        runs.push_back(&run_of(artifacts, member.dr_id));
    }
    std::map<std::string, fusion::FusedRanking> fused;
    for (const auto& q : artifacts.generated_queries) {
        std::vector<std::vector<std::string>> lists;
        lists.reserve(runs.size());
        for (const Run* r : runs) {
            lists.push_back(r->ranked_ids(q.query_id));
        }
        fused[q.query_id] = fusion::rrf_fuse(lists, config.k_rrf, config.m);
    }
    return fused;
}

Qrels judge_fused(const PipelineArtifacts& artifacts, const Corpus& corpus, const PipelineConfig& config,
                  const llm::LlmGateway& gateway)
{
    const auto& queries = artifacts.generated_queries;
    std::vector<std::vector<std::pair<std::string, int>>> labels(queries.size());
    parallel_for(queries.size(), config.workers, [&](std::size_t i) {
        const auto& q = queries[i];
        auto it = artifacts.fused.find(q.query_id);
        if (it == artifacts.fused.end()) {
            return;
        }
        for (const auto& item : it->second.items) {
            try {
                const auto label = gateway.judge(q, doc_of(corpus, item.item_id));
                labels[i].emplace_back(item.item_id, llm::binarize(label));
            } catch (const Error&) {
                rethrow_with("judging query '" + q.query_id + "', doc '" + item.item_id + "'");
            }
        }
    });
    Qrels qrels;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        for (const auto& [doc, grade] : labels[i]) {
            qrels.set(queries[i].query_id, doc, grade);
        }
    }
    return qrels;
}

ReferenceLists rerank_fused(const PipelineArtifacts& artifacts, const Corpus& corpus, const PipelineConfig& config,
                            const llm::LlmGateway& gateway)
{
    const auto& queries = artifacts.generated_queries;
    std::vector<std::vector<std::string>> lists(queries.size());
    parallel_for(queries.size(), config.workers, [&](std::size_t i) {
        const auto& q = queries[i];
        auto it = artifacts.fused.find(q.query_id);
        if (it == artifacts.fused.end() || it->second.items.empty()) {
            return;
        }
        try {
            std::vector<const Document*> cands;
            for (const auto& item : it->second.items) {
                cands.push_back(&doc_of(corpus, item.item_id));
            }
            lists[i] = gateway.setwise_rerank(q, cands, config.set_size);
        } catch (const Error&) {
            rethrow_with("reranking query '" + q.query_id + "'");
        }
    });
    ReferenceLists out;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (!lists[i].empty()) {
            out[queries[i].query_id] = std::move(lists[i]);
        }
    }
    return out;
}

DrRanking stage_q(const PipelineArtifacts& artifacts, const Pool& pool, const PipelineConfig& config)
{
    return rank_by_mean("q", artifacts, pool, [&](const Query& q, const std::vector<std::string>& ids) {
        if (!q.source_doc_id) {
            throw ValidationError("generated query '" + q.query_id + "' has no source document");
        }
        const std::map<std::string, int> qrel{{*q.source_doc_id, 1}};
        return metrics::ndcg_at_k(ids, &qrel, config.measure.cutoff, config.measure.gain);
    });
}

DrRanking stage_qf(const PipelineArtifacts& artifacts, const Pool& pool, const PipelineConfig& config)
{
    return rank_by_mean("qf", artifacts, pool, [&](const Query& q, const std::vector<std::string>& ids) {
        auto it = artifacts.fused.find(q.query_id);
        return it == artifacts.fused.end() ? 0.0 : rbo_or_zero(ids, it->second.ids(), config.rbo_p);
    });
}

DrRanking stage_qfj(const PipelineArtifacts& artifacts, const Pool& pool, const PipelineConfig& config)
{
    if (!artifacts.pseudo_qrels) {
        throw ValidationError("stage qfj needs pseudo-judgments");
    }
    const Qrels& qrels = *artifacts.pseudo_qrels;
    return rank_by_mean("qfj", artifacts, pool, [&](const Query& q, const std::vector<std::string>& ids) {
        return metrics::ndcg_at_k(ids, qrels.for_query(q.query_id), config.measure.cutoff, config.measure.gain);
    });
}

DrRanking stage_qfr(const PipelineArtifacts& artifacts, const Pool& pool, const PipelineConfig& config)
{
    if (!artifacts.reference_lists) {
        throw ValidationError("stage qfr needs reference lists");
    }
    const auto& refs = *artifacts.reference_lists;
    return rank_by_mean("qfr", artifacts, pool, [&](const Query& q, const std::vector<std::string>& ids) {
        auto it = refs.find(q.query_id);
        return it == refs.end() ? 0.0 : rbo_or_zero(ids, it->second, config.rbo_p);
    });
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        out << content;
        if (!out.flush()) {
            throw Error("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunDirectory::RunDirectory(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path RunDirectory::ranking_path(std::string_view method) const
{
    return root_ / ("ranking_" + std::string(method) + ".json");
}

bool RunDirectory::has_queries() const
{
    return std::filesystem::exists(queries_path());
}

bool RunDirectory::has_runs(const Pool& pool) const
{
    for (const auto& m : pool) {
        if (!std::filesystem::exists(run_path(m.dr_id))) {
            return false;
        }
    }
    return !pool.empty();
}

bool RunDirectory::has_fused() const
{
    return std::filesystem::exists(fused_path());
}

bool RunDirectory::has_qrels() const
{
    return std::filesystem::exists(qrels_path());
}

bool RunDirectory::has_reference_lists() const
{
    return std::filesystem::exists(reference_path());
}

std::vector<Query> RunDirectory::load_queries() const
{
    std::istringstream in(read_file(queries_path()));
    return drselect::load_queries(in);
}

Run RunDirectory::load_run(const std::string& dr_id) const
{
    Run run = parse_run(read_file(run_path(dr_id)));
    run.dr_id = dr_id;
    return run;
}

std::map<std::string, fusion::FusedRanking> RunDirectory::load_fused() const
{
    const Run run = parse_run(read_file(fused_path()));
    std::map<std::string, fusion::FusedRanking> out;
    for (const auto& [qid, entries] : run.entries) {
        auto& f = out[qid];
        for (const auto& e : entries) {
            f.items.push_back({e.doc_id, e.score});
        }
    }
    return out;
}

Qrels RunDirectory::load_qrels() const
{
    return parse_qrels(read_file(qrels_path()));
}

ReferenceLists RunDirectory::load_reference_lists() const
{
    std::istringstream in(read_file(reference_path()));
    ReferenceLists out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const json o = json::parse(line);
            out[o.at("query_id").get<std::string>()] = o.at("doc_ids").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw ParseError(std::string("reference_lists.jsonl: ") + e.what(), lineno);
        }
    }
    return out;
}

void RunDirectory::save_queries(const std::vector<Query>& queries) const
{
    std::ostringstream out;
    write_queries(queries, out);
    write_file_atomic(queries_path(), out.str());
}

void RunDirectory::save_run(const Run& run) const
{
    write_file_atomic(run_path(run.dr_id), write_run(run));
}

void RunDirectory::save_fused(const std::map<std::string, fusion::FusedRanking>& fused) const
{
    Run run;
    run.dr_id = "fused";
    for (const auto& [qid, f] : fused) {
        if (f.items.empty()) {
            continue;
        }
        auto& entries = run.entries[qid];
        int rank = 1;
        for (const auto& item : f.items) {
            entries.push_back({item.item_id, item.score, rank++});
        }
    }
    write_file_atomic(fused_path(), write_run(run));
}

void RunDirectory::save_qrels(const Qrels& qrels) const
{
    write_file_atomic(qrels_path(), write_qrels(qrels));
}

void RunDirectory::save_reference_lists(const ReferenceLists& lists) const
{
    std::string s;
    for (const auto& [qid, ids] : lists) {
        s += json{{"query_id", qid}, {"doc_ids", ids}}.dump();
        s += '\n';
    }
    write_file_atomic(reference_path(), s);
}

void RunDirectory::save_ranking(std::string_view method, const DrRanking& ranking) const
{
    write_file_atomic(ranking_path(method), write_ranking_json(ranking));
}

Pipeline::Pipeline(const Corpus& corpus, const Pool& pool, PipelineConfig config, const llm::LlmGateway* gateway,
                   std::optional<RunDirectory> run_dir)
    : corpus_(corpus), pool_(pool), config_(config), gateway_(gateway), dir_(std::move(run_dir))
{
    config_.validate();
}

const llm::LlmGateway& Pipeline::gateway() const
{
    if (gateway_ == nullptr) {
        throw ValidationError("this pipeline step needs an LLM backend");
    }
    return *gateway_;
}

namespace {

void remove_if_exists(const std::filesystem::path& p)
{
    std::error_code ec;
    std::filesystem::remove(p, ec);
}

void check_provenance(const PipelineArtifacts& a, const Corpus& corpus)
{
    std::set<std::string> ids;
    for (const auto& q : a.generated_queries) {
        ids.insert(q.query_id);
    }
    auto check = [&](const std::string& qid, const char* what) {
        if (!ids.contains(qid)) {
            throw ValidationError(std::string(what) + " refers to unknown query '" + qid +
                                  "'; the run directory holds stale artifacts");
        }
    };
    auto check_doc = [&](const std::string& doc_id, const char* what) {
        if (!corpus.contains(doc_id)) {
            throw ValidationError(std::string(what) + " refers to document '" + doc_id + "' outside the corpus");
        }
    };
    for (const auto& [qid, f] : a.fused) {
        check(qid, "fused.trec");
        for (const auto& item : f.items) {
            check_doc(item.item_id, "fused.trec");
        }
    }
    if (a.pseudo_qrels) {
        for (const auto& [qid, docs] : a.pseudo_qrels->judgments) {
            check(qid, "pseudo_qrels.txt");
            for (const auto& [doc, grade] : docs) {
                check_doc(doc, "pseudo_qrels.txt");
            }
        }
    }
    if (a.reference_lists) {
        for (const auto& [qid, docs] : *a.reference_lists) {
            check(qid, "reference_lists.jsonl");
            for (const auto& doc : docs) {
                check_doc(doc, "reference_lists.jsonl");
            }
        }
    }
}

}  // namespace

void Pipeline::ensure_queries(bool force)
{
    if (have_queries_ && !force) {
        return;
    }
    if (dir_ && dir_->has_queries() && !force) {
        artifacts_.generated_queries = dir_->load_queries();
    } else {
        artifacts_.generated_queries = generate_pseudo_queries(corpus_, config_, gateway());
        if (dir_) {
            // Everything downstream was built from the old queries.
            std::filesystem::remove_all(dir_->root() / "runs");
            remove_if_exists(dir_->fused_path());
            remove_if_exists(dir_->qrels_path());
            remove_if_exists(dir_->reference_path());
            dir_->save_queries(artifacts_.generated_queries);
        }
        have_runs_ = have_fused_ = false;
        artifacts_.pseudo_qrels.reset();
        artifacts_.reference_lists.reset();
    }
    std::set<std::string> texts;
    artifacts_.duplicate_queries = 0;
    for (const auto& q : artifacts_.generated_queries) {
        if (!q.source_doc_id || !corpus_.contains(*q.source_doc_id)) {
            throw ValidationError("generated query '" + q.query_id + "' has no source document in the corpus");
        }
        if (!texts.insert(q.text).second) {
            ++artifacts_.duplicate_queries;
        }
    }
    have_queries_ = true;
}

void Pipeline::ensure_runs(bool force)
{
    if (have_runs_ && !force) {
        return;
    }
    ensure_queries();
    if (pool_.empty()) {
        throw ValidationError("empty retriever pool");
    }
    Pool missing;
    artifacts_.runs.clear();
    for (const auto& member : pool_) {
        if (dir_ && !force && std::filesystem::exists(dir_->run_path(member.dr_id))) {
            artifacts_.runs[member.dr_id] = dir_->load_run(member.dr_id);
        } else {
            missing.push_back(member);
        }
    }
    if (!missing.empty()) {
        auto runs = retrieve_runs(missing, artifacts_.generated_queries, config_);
        for (auto& [id, run] : runs) {
            if (dir_) {
                dir_->save_run(run);
            }
            artifacts_.runs[id] = std::move(run);
        }
        if (dir_) {
            remove_if_exists(dir_->fused_path());
            remove_if_exists(dir_->qrels_path());
            remove_if_exists(dir_->reference_path());
        }
        have_fused_ = false;
        artifacts_.pseudo_qrels.reset();
        artifacts_.reference_lists.reset();
    }
    have_runs_ = true;
}

void Pipeline::ensure_fused(bool force)
{
    if (have_fused_ && !force) {
        return;
    }
    ensure_runs();
    if (dir_ && dir_->has_fused() && !force) {
        artifacts_.fused = dir_->load_fused();
    } else {
        artifacts_.fused = build_fused(artifacts_, pool_, config_);
        if (dir_) {
            remove_if_exists(dir_->qrels_path());
            remove_if_exists(dir_->reference_path());
            dir_->save_fused(artifacts_.fused);
        }
        artifacts_.pseudo_qrels.reset();
        artifacts_.reference_lists.reset();
    }
    check_provenance(artifacts_, corpus_);
    have_fused_ = true;
}

void Pipeline::ensure_judgments(bool force)
{
    if (artifacts_.pseudo_qrels && !force) {
        return;
    }
    ensure_fused();
    if (dir_ && dir_->has_qrels() && !force) {
        artifacts_.pseudo_qrels = dir_->load_qrels();
    } else {
        artifacts_.pseudo_qrels = judge_fused(artifacts_, corpus_, config_, gateway());
        if (dir_) {
            dir_->save_qrels(*artifacts_.pseudo_qrels);
        }
    }
    check_provenance(artifacts_, corpus_);
}

void Pipeline::ensure_reference_lists(bool force)
{
    if (artifacts_.reference_lists && !force) {
        return;
    }
    ensure_fused();
    if (dir_ && dir_->has_reference_lists() && !force) {
        artifacts_.reference_lists = dir_->load_reference_lists();
    } else {
        artifacts_.reference_lists = rerank_fused(artifacts_, corpus_, config_, gateway());
        if (dir_) {
            dir_->save_reference_lists(*artifacts_.reference_lists);
        }
    }
    check_provenance(artifacts_, corpus_);
}

void Pipeline::record(Stage stage, const DrRanking& ranking)
{
    artifacts_.stage_rankings[stage] = ranking;
    if (dir_) {
        dir_->save_ranking(to_string(stage), ranking);
    }
}

DrRanking Pipeline::rank(Stage stage)
{
    DrRanking r;
    switch (stage) {
    case Stage::Q:
        ensure_runs();
        r = stage_q(artifacts_, pool_, config_);
        break;
    case Stage::QF:
        ensure_fused();
        r = stage_qf(artifacts_, pool_, config_);
        break;
    case Stage::QFJ:
        ensure_judgments();
        r = stage_qfj(artifacts_, pool_, config_);
        break;
    case Stage::QFR:
        ensure_reference_lists();
        r = stage_qfr(artifacts_, pool_, config_);
        break;
    case Stage::Full: {
        rank(Stage::Q);
        rank(Stage::QF);
        const DrRanking qfj = rank(Stage::QFJ);
        const DrRanking qfr = rank(Stage::QFR);
        const DrRanking fused = fusion::fuse_dr_rankings({qfj, qfr}, config_.k_rrf);
        r = DrRanking::from_scores("larmor", fused.scores());
        break;
    }
    }
    record(stage, r);
    return r;
}

LarmorResult run_larmor(const Corpus& corpus, const Pool& pool, const PipelineConfig& config,
                        const llm::LlmGateway& gateway, std::optional<RunDirectory> run_dir)
{
    if (pool.size() < 2) {
        throw ValidationError("retriever selection needs a pool of at least 2");
    }
    Pipeline p(corpus, pool, config, &gateway, std::move(run_dir));
    DrRanking r = p.rank(config.stage);
    return {std::move(r), p.artifacts()};
}

}  // namespace drselect::larmor
