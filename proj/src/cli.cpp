#include "drselect/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "drselect/error.hpp"
#include "drselect/evaluator.hpp"
#include "drselect/parallel.hpp"

namespace drselect::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p)
{
    fs::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

template <typename T>
void take(const json& obj, const char* key, T& target)
{
    if (auto it = obj.find(key); it != obj.end()) {
        target = it->get<T>();
    }
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where)
{
    if (!obj.is_object()) {
        throw ValidationError("config: " + where + " must be an object");
    }
    for (const auto& [key, v] : obj.items()) {
        if (!allowed.contains(key)) {
            throw ValidationError("config: unknown key '" + key + "' in " + where);
        }
    }
}

}  // namespace

void apply_config_json(RunConfig& cfg, const std::string& json_text, const fs::path& base_dir)
{
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    check_keys(doc,
               {"corpus", "pool", "llm", "out", "seed", "workers", "queries", "qrels", "domain", "prompt_dir",
                "msmarco_perf", "collection", "pipeline", "qpp", "llm_http"},
               "top level");
    try {
        for (auto [key, field] : {std::pair{"corpus", &cfg.corpus}, std::pair{"pool", &cfg.pool},
                                  std::pair{"out", &cfg.out}, std::pair{"queries", &cfg.queries},
                                  std::pair{"qrels", &cfg.qrels}, std::pair{"prompt_dir", &cfg.prompt_dir},
                                  std::pair{"msmarco_perf", &cfg.msmarco_perf}}) {
            if (auto it = doc.find(key); it != doc.end()) {
                *field = resolve(base_dir, it->get<std::string>());
            }
        }
        take(doc, "llm", cfg.llm);
        take(doc, "seed", cfg.seed);
        take(doc, "workers", cfg.workers);
        take(doc, "domain", cfg.domain);
        take(doc, "collection", cfg.collection);
        if (auto it = doc.find("pipeline"); it != doc.end()) {
            const json& p = *it;
            check_keys(p, {"k", "l", "m", "retrieval_depth", "k_rrf", "rbo_p", "cutoff", "gain", "set_size"},
                       "pipeline");
            take(p, "k", cfg.pipeline.k);
            take(p, "l", cfg.pipeline.l);
            take(p, "m", cfg.pipeline.m);
            take(p, "retrieval_depth", cfg.pipeline.retrieval_depth);
            take(p, "k_rrf", cfg.pipeline.k_rrf);
            take(p, "rbo_p", cfg.pipeline.rbo_p);
            take(p, "cutoff", cfg.pipeline.measure.cutoff);
            take(p, "set_size", cfg.pipeline.set_size);
            if (auto g = p.find("gain"); g != p.end()) {
                const auto name = g->get<std::string>();
                if (name == "linear") {
                    cfg.pipeline.measure.gain = metrics::Gain::Linear;
                } else if (name == "exponential") {
                    cfg.pipeline.measure.gain = metrics::Gain::Exponential;
                } else {
                    throw ValidationError("config: gain must be 'linear' or 'exponential'");
                }
            }
        }
        if (auto it = doc.find("qpp"); it != doc.end()) {
            const json& q = *it;
            check_keys(q,
                       {"top_k", "normalize", "norm_depth", "sigma_max_fraction", "entropy_top_k",
                        "alteration_variants", "alteration_depth"},
                       "qpp");
            take(q, "top_k", cfg.qpp.top_k);
            take(q, "normalize", cfg.qpp.normalize);
            take(q, "norm_depth", cfg.qpp.norm_depth);
            take(q, "sigma_max_fraction", cfg.qpp.sigma_max_fraction);
            take(q, "entropy_top_k", cfg.qpp.entropy_top_k);
            take(q, "alteration_variants", cfg.qpp.alteration_variants);
            take(q, "alteration_depth", cfg.qpp.alteration_depth);
        }
        if (auto it = doc.find("llm_http"); it != doc.end()) {
            const json& h = *it;
            check_keys(h, {"timeout_ms", "max_retries", "max_in_flight", "api_key_env", "model"}, "llm_http");
            take(h, "timeout_ms", cfg.llm_timeout_ms);
            take(h, "max_retries", cfg.llm_max_retries);
            take(h, "max_in_flight", cfg.llm_max_in_flight);
            take(h, "api_key_env", cfg.llm_api_key_env);
            take(h, "model", cfg.llm_model);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
}

namespace {

void log_event(std::ostream& err, const std::string& event, json fields = json::object())
{
    fields["event"] = event;
    err << fields.dump() << '\n';
}

std::string read_text(const fs::path& path, const char* what)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError(std::string("cannot open ") + what + " " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::set<std::string> kLarmorMethods{"larmor", "q", "qf", "qfj", "qfr"};
const std::set<std::string> kQueryMethods{"entropy", "wig", "nqc", "smv", "sigma", "sigma-max",
                                          "clarity", "alteration", "qpp-fusion"};

class Session {
public:
    Session(RunConfig cfg, std::ostream& out, std::ostream& err) : cfg_(std::move(cfg)), out_(out), err_(err)
    {
        if (cfg_.workers <= 0) {
            cfg_.workers = default_workers();
        }
        cfg_.pipeline.seed = cfg_.seed;
        cfg_.pipeline.workers = cfg_.workers;
        cfg_.qpp.seed = cfg_.seed;
        cfg_.qpp.workers = cfg_.workers;
        cfg_.qpp.rbo_p = cfg_.pipeline.rbo_p;
        cfg_.qpp.k_rrf = cfg_.pipeline.k_rrf;
    }

    const RunConfig& cfg() const { return cfg_; }

    const fs::path& out_dir()
    {
        if (cfg_.out.empty()) {
            throw ValidationError("--out is required");
        }
        return cfg_.out;
    }

    const Corpus& corpus()
    {
        if (!corpus_) {
            if (cfg_.corpus.empty()) {
                throw ValidationError("--corpus is required");
            }
            std::ifstream in(cfg_.corpus);
            if (!in) {
                throw ValidationError("cannot open corpus " + cfg_.corpus.string());
            }
            corpus_ = load_corpus(in, cfg_.corpus.stem().string());
            index_ = std::make_shared<LexicalIndex>(*corpus_);
            log_event(err_, "corpus_loaded", {{"path", cfg_.corpus.string()}, {"docs", corpus_->size()}});
        }
        return *corpus_;
    }

    std::shared_ptr<const LexicalIndex> index()
    {
        corpus();
        return index_;
    }

    const larmor::Pool& pool()
    {
        if (!pool_loaded_) {
            if (cfg_.pool.empty()) {
                throw ValidationError("--pool is required");
            }
            manifest_ = parse_pool_manifest(read_text(cfg_.pool, "pool manifest"));
            std::shared_ptr<const LexicalIndex> idx;
            if (!cfg_.corpus.empty()) {
                idx = index();
            }
            for (const auto& e : manifest_.retrievers) {
                pool_.push_back({e.dr_id, make_retriever(e, idx, cfg_.pool.parent_path())});
            }
            pool_loaded_ = true;
            log_event(err_, "pool_loaded", {{"path", cfg_.pool.string()}, {"retrievers", manifest_.ids()}});
        }
        return pool_;
    }

    std::vector<std::string> pool_ids()
    {
        pool();
        return manifest_.ids();
    }

    const llm::LlmGateway& gateway()
    {
        if (!gateway_) {
            std::shared_ptr<const llm::LlmBackend> backend;
            const std::string& spec = cfg_.llm;
            if (spec == "mock") {
                backend = std::make_shared<llm::MockLlm>(cfg_.seed, index());
            } else if (spec.rfind("mock:", 0) == 0) {
                std::uint64_t s = 0;
                try {
                    s = std::stoull(spec.substr(5));
                } catch (const std::exception&) {
                    throw ValidationError("bad mock seed in --llm " + spec);
                }
                backend = std::make_shared<llm::MockLlm>(s, index());
            } else if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
                llm::HttpLlmSettings s;
                s.http.base_url = spec;
                s.http.timeout_ms = cfg_.llm_timeout_ms;
                s.http.max_retries = cfg_.llm_max_retries;
                s.http.max_in_flight = cfg_.llm_max_in_flight;
                s.api_key_env = cfg_.llm_api_key_env;
                s.model_name = cfg_.llm_model;
                backend = std::make_shared<llm::HttpLlm>(std::move(s));
            } else {
                throw ValidationError("--llm must be 'mock', 'mock:SEED' or an http url, got '" + spec + "'");
            }
            gateway_ = std::make_unique<llm::LlmGateway>(backend, prompts());
        }
        return *gateway_;
    }

    larmor::Pipeline pipeline(bool with_pool)
    {
        static const larmor::Pool kNoPool;
        const larmor::Pool& p = with_pool ? pool() : kNoPool;
        return larmor::Pipeline(corpus(), p, cfg_.pipeline, &gateway(), larmor::RunDirectory(out_dir()));
    }

    std::vector<Query> real_queries()
    {
        std::ifstream in(cfg_.queries);
        if (!in) {
            throw ValidationError("cannot open queries " + cfg_.queries.string());
        }
        auto qs = load_queries(in);
        if (qs.empty()) {
            throw ValidationError("queries file " + cfg_.queries.string() + " is empty");
        }
        return qs;
    }

    int real_depth() const
    {
        return std::max(cfg_.qpp.required_depth(), cfg_.pipeline.measure.cutoff);
    }

    /// Runs of every pool member over the real queries, cached in runs_real/.
    std::map<std::string, Run> real_runs(const std::vector<Query>& queries)
    {
        std::set<std::string> qids;
        for (const auto& q : queries) {
            qids.insert(q.query_id);
        }
        std::map<std::string, Run> runs;
        const fs::path dir = out_dir() / "runs_real";
        for (const auto& m : pool()) {
            const fs::path path = dir / (m.dr_id + ".trec");
            if (fs::exists(path) && !cfg_.force) {
                Run run = parse_run(larmor::read_file(path));
                run.dr_id = m.dr_id;
                for (const auto& [qid, e] : run.entries) {
                    if (!qids.contains(qid)) {
                        throw ValidationError(path.string() + " holds query '" + qid +
                                              "' absent from the queries file; rerun with --force");
                    }
                }
                runs[m.dr_id] = std::move(run);
                continue;
            }
            std::vector<ScoredList> lists(queries.size());
            parallel_for(queries.size(), cfg_.workers,
                         [&](std::size_t i) { lists[i] = m.retriever->search(queries[i], real_depth()); });
            std::map<std::string, ScoredList> by_query;
            for (std::size_t i = 0; i < queries.size(); ++i) {
                if (!lists[i].docs.empty()) {
                    by_query[queries[i].query_id] = std::move(lists[i]);
                }
            }
            Run run = to_run(m.dr_id, by_query);
            larmor::write_file_atomic(path, write_run(run));
            log_event(err_, "real_run_written", {{"dr_id", m.dr_id}, {"queries", run.entries.size()}});
            runs[m.dr_id] = std::move(run);
        }
        return runs;
    }

    void save_ranking(const DrRanking& r)
    {
        const fs::path path = larmor::RunDirectory(out_dir()).ranking_path(r.method_id());
        larmor::write_file_atomic(path, write_ranking_json(r));
        std::string order;
        for (const auto& id : r.order()) {
            order += (order.empty() ? "" : " > ") + id;
        }
        out_ << r.method_id() << ": " << order << "\n";
        out_ << "selected: " << r.top() << "\n";
        out_ << "wrote " << path.string() << "\n";
        log_event(err_, "ranking_written", {{"method", r.method_id()}, {"path", path.string()}});
    }

    void log_llm_stats()
    {
        if (!gateway_) {
            return;
        }
        const auto& s = gateway_->stats();
        log_event(err_, "llm_stats",
                  {{"backend_calls", s.backend_calls.load()},
                   {"judge_requests", s.judge_requests.load()},
                   {"setwise_comparisons", s.setwise_comparisons.load()},
                   {"query_fallbacks", s.query_fallbacks.load()},
                   {"judge_fallbacks", s.judge_fallbacks.load()},
                   {"setwise_fallbacks", s.setwise_fallbacks.load()}});
    }

    std::ostream& out() { return out_; }
    std::ostream& err() { return err_; }

private:
    llm::PromptSet prompts() const
    {
        llm::PromptSet ps{llm::default_template(llm::Task::QueryGen, cfg_.domain),
                          llm::default_template(llm::Task::Judge, cfg_.domain),
                          llm::default_template(llm::Task::Setwise, cfg_.domain)};
        if (!cfg_.prompt_dir.empty()) {
            for (auto* t : {&ps.query_gen, &ps.judge, &ps.setwise}) {
                const fs::path path = cfg_.prompt_dir / (std::string(llm::to_string(t->task())) + ".txt");
                if (fs::exists(path)) {
                    *t = llm::load_template(path, t->task(), t->hints());
                }
            }
        }
        return ps;
    }

    RunConfig cfg_;
    std::ostream& out_;
    std::ostream& err_;
    std::optional<Corpus> corpus_;
    std::shared_ptr<const LexicalIndex> index_;
    DrPool manifest_;
    larmor::Pool pool_;
    bool pool_loaded_ = false;
    std::unique_ptr<llm::LlmGateway> gateway_;
};

void require_artifact(bool present, const std::string& artifact, const std::string& step)
{
    if (!present) {
        throw ValidationError("missing " + artifact + "; run `" + step + "` first");
    }
}

int cmd_stage(Session& s, const std::string& cmd)
{
    const larmor::RunDirectory dir(s.out_dir());
    const bool force = s.cfg().force;
    if (cmd == "gen-queries") {
        auto p = s.pipeline(false);
        p.ensure_queries(force);
        const auto& a = p.artifacts();
        s.out() << "queries: " << a.generated_queries.size() << " (" << a.duplicate_queries << " duplicate texts)\n";
        log_event(s.err(), "stage_done",
                  {{"stage", cmd}, {"queries", a.generated_queries.size()}, {"duplicates", a.duplicate_queries}});
    } else if (cmd == "retrieve") {
        require_artifact(dir.has_queries(), "queries.jsonl", "gen-queries");
        auto p = s.pipeline(true);
        p.ensure_runs(force);
        s.out() << "runs: " << p.artifacts().runs.size() << "\n";
        log_event(s.err(), "stage_done", {{"stage", cmd}, {"runs", p.artifacts().runs.size()}});
    } else if (cmd == "fuse") {
        require_artifact(dir.has_queries(), "queries.jsonl", "gen-queries");
        require_artifact(dir.has_runs(s.pool()), "runs/", "retrieve");
        auto p = s.pipeline(true);
        p.ensure_fused(force);
        s.out() << "fused: " << p.artifacts().fused.size() << " queries\n";
        log_event(s.err(), "stage_done", {{"stage", cmd}, {"queries", p.artifacts().fused.size()}});
    } else {
        require_artifact(dir.has_queries(), "queries.jsonl", "gen-queries");
        require_artifact(dir.has_runs(s.pool()), "runs/", "retrieve");
        require_artifact(dir.has_fused(), "fused.trec", "fuse");
        auto p = s.pipeline(true);
        if (cmd == "judge") {
            p.ensure_judgments(force);
            s.out() << "judgments: " << p.artifacts().pseudo_qrels->size() << "\n";
            log_event(s.err(), "stage_done", {{"stage", cmd}, {"judgments", p.artifacts().pseudo_qrels->size()}});
        } else {
            p.ensure_reference_lists(force);
            s.out() << "reference lists: " << p.artifacts().reference_lists->size() << "\n";
            log_event(s.err(), "stage_done",
                      {{"stage", cmd}, {"reference_lists", p.artifacts().reference_lists->size()}});
        }
    }
    s.log_llm_stats();
    return kExitOk;
}

int cmd_select(Session& s, const std::string& method)
{
    if (auto stage = larmor::parse_stage(method)) {
        if (s.pool().size() < 2 && *stage == larmor::Stage::Full) {
            throw ValidationError("retriever selection needs a pool of at least 2");
        }
        auto p = s.pipeline(true);
        if (s.cfg().force) {
            p.ensure_queries(true);
        }
        const DrRanking r = p.rank(*stage);
        s.out() << r.method_id() << ": " << (r.order().empty() ? "" : r.top()) << " selected\n";
        s.out() << "wrote " << larmor::RunDirectory(s.out_dir()).ranking_path(r.method_id()).string() << "\n";
        log_event(s.err(), "ranking_written", {{"method", r.method_id()},
                                               {"queries", p.artifacts().generated_queries.size()},
                                               {"duplicates", p.artifacts().duplicate_queries}});
        s.log_llm_stats();
        return kExitOk;
    }
    if (method == "msmarco") {
        if (s.cfg().msmarco_perf.empty()) {
            throw ValidationError("--method msmarco needs --msmarco-perf");
        }
        s.save_ranking(baselines::msmarco_perf(read_text(s.cfg().msmarco_perf, "msmarco perf file"), s.pool_ids()));
        return kExitOk;
    }
    if (!kQueryMethods.contains(method)) {
        throw ValidationError("unknown method '" + method + "'");
    }
    if (s.cfg().queries.empty()) {
        throw ValidationError("--method " + method + " needs real target queries (--queries)");
    }
    const auto queries = s.real_queries();
    if (method == "alteration") {
        s.save_ranking(baselines::query_alteration(s.pool(), queries, s.cfg().qpp));
        return kExitOk;
    }
    const auto runs = s.real_runs(queries);
    if (method == "qpp-fusion") {
        std::vector<std::string> ids;
        for (const auto& q : queries) {
            ids.push_back(q.query_id);
        }
        s.save_ranking(baselines::qpp_fusion(runs, ids, s.cfg().qpp));
        return kExitOk;
    }
    const auto predictor = *baselines::parse_predictor(method);
    std::shared_ptr<const LexicalIndex> stats;
    if (predictor == baselines::Predictor::Clarity) {
        stats = s.index();
    }
    std::map<std::string, std::size_t> skipped;
    const DrRanking r = baselines::qpp_ranking(runs, predictor, s.cfg().qpp, stats.get(), &skipped);
    for (const auto& [dr, n] : skipped) {
        if (n > 0) {
            log_event(s.err(), "queries_skipped", {{"method", r.method_id()}, {"dr_id", dr}, {"count", n}});
        }
    }
    s.save_ranking(r);
    return kExitOk;
}

int cmd_evaluate(Session& s)
{
    if (s.cfg().qrels.empty() || s.cfg().queries.empty()) {
        throw ValidationError("evaluate needs --gt-qrels and --queries");
    }
    const Qrels qrels = parse_qrels(read_text(s.cfg().qrels, "qrels"));
    if (qrels.overwritten > 0) {
        log_event(s.err(), "qrels_overwrites", {{"count", qrels.overwritten}});
    }
    const auto runs = s.real_runs(s.real_queries());
    const auto gt = evaluator::ground_truth(runs, qrels, s.cfg().pipeline.measure);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(s.out_dir())) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.rfind("ranking_", 0) == 0 && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw ValidationError("no ranking_*.json files in " + s.out_dir().string());
    }
    std::string collection = s.cfg().collection;
    if (collection.empty()) {
        collection = !s.cfg().corpus.empty() ? s.cfg().corpus.stem().string() : s.out_dir().filename().string();
    }
    evaluator::Report report;
    for (const auto& f : files) {
        const std::string method = f.stem().string().substr(std::string("ranking_").size());
        const DrRanking r = parse_ranking_json(larmor::read_file(f), method);
        report.add(method, collection, evaluator::evaluate_method(r, gt));
    }
    const fs::path& dir = s.out_dir();
    larmor::write_file_atomic(dir / "ground_truth.json", write_ranking_json(gt.ranking));
    larmor::write_file_atomic(dir / "report.csv", evaluator::emit_report(report, evaluator::Format::Csv));
    larmor::write_file_atomic(dir / "report.json", evaluator::emit_report(report, evaluator::Format::Json));
    const std::string md = evaluator::emit_report(report, evaluator::Format::Markdown);
    larmor::write_file_atomic(dir / "report.md", md);
    s.out() << md;
    log_event(s.err(), "report_written", {{"methods", report.methods().size()}, {"dir", dir.string()}});
    return kExitOk;
}

template <typename T>
using Accessor = std::function<T&(RunConfig&)>;

// Options registered on a subcommand. Flag values land in `flags` and are
// copied over the config-file values only when given on the command line.
class Options {
public:
    explicit Options(RunConfig& flags) : flags_(flags) {}

    template <typename T>
    void add(CLI::App* app, const std::string& name, Accessor<T> field, const std::string& desc)
    {
        auto* opt = app->add_option(name, field(flags_), desc);
        bindings_.push_back({opt, [this, field](RunConfig& c) { field(c) = field(flags_); }});
    }

    void flag(CLI::App* app, const std::string& name, Accessor<bool> field, const std::string& desc)
    {
        auto* opt = app->add_flag(name, field(flags_), desc);
        bindings_.push_back({opt, [this, field](RunConfig& c) { field(c) = field(flags_); }});
    }

    void apply(RunConfig& cfg) const
    {
        for (const auto& b : bindings_) {
            if (b.opt->count() > 0) {
                b.apply(cfg);
            }
        }
    }

private:
    struct Binding {
        CLI::Option* opt;
        std::function<void(RunConfig&)> apply;
    };
    RunConfig& flags_;
    std::vector<Binding> bindings_;
};

void add_common(Options& o, CLI::App* app, std::string& config_path)
{
    app->add_option("--config", config_path, "JSON config file; flags override its keys");
    o.add<fs::path>(app, "--corpus", [](RunConfig& c) -> fs::path& { return c.corpus; }, "corpus JSONL");
    o.add<fs::path>(app, "--pool", [](RunConfig& c) -> fs::path& { return c.pool; }, "pool manifest JSON");
    o.add<std::string>(app, "--llm", [](RunConfig& c) -> std::string& { return c.llm; },
                       "mock, mock:SEED or http://host:port");
    o.add<fs::path>(app, "--out", [](RunConfig& c) -> fs::path& { return c.out; }, "run directory");
    o.add<std::uint64_t>(app, "--seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }, "random seed");
    o.add<int>(app, "--workers", [](RunConfig& c) -> int& { return c.workers; }, "parallel workers (0 = all CPUs)");
    o.add<fs::path>(app, "--queries", [](RunConfig& c) -> fs::path& { return c.queries; },
                    "real target queries JSONL");
    o.add<fs::path>(app, "--qrels,--gt-qrels", [](RunConfig& c) -> fs::path& { return c.qrels; },
                    "ground-truth qrels");
    o.add<std::string>(app, "--domain", [](RunConfig& c) -> std::string& { return c.domain; }, "prompt domain");
    o.add<fs::path>(app, "--prompt-dir", [](RunConfig& c) -> fs::path& { return c.prompt_dir; },
                    "directory with query_gen.txt, judge.txt, setwise.txt");
    o.add<fs::path>(app, "--msmarco-perf", [](RunConfig& c) -> fs::path& { return c.msmarco_perf; },
                    "JSON {dr_id: score}");
    o.add<std::string>(app, "--collection", [](RunConfig& c) -> std::string& { return c.collection; },
                       "collection label in reports");
    o.add<std::size_t>(app, "--k", [](RunConfig& c) -> std::size_t& { return c.pipeline.k; }, "sampled documents");
    o.add<int>(app, "--l", [](RunConfig& c) -> int& { return c.pipeline.l; }, "queries per document");
    o.add<std::size_t>(app, "--m", [](RunConfig& c) -> std::size_t& { return c.pipeline.m; },
                       "fused documents judged per query");
    o.add<int>(app, "--depth", [](RunConfig& c) -> int& { return c.pipeline.retrieval_depth; },
               "retrieval depth for generated queries");
    o.add<int>(app, "--cutoff", [](RunConfig& c) -> int& { return c.pipeline.measure.cutoff; }, "nDCG cutoff");
    o.add<int>(app, "--set-size", [](RunConfig& c) -> int& { return c.pipeline.set_size; },
               "candidates per setwise comparison");
    o.add<std::size_t>(app, "--top-k", [](RunConfig& c) -> std::size_t& { return c.qpp.top_k; },
                       "docs per query used by predictors");
    o.flag(app, "--normalize", [](RunConfig& c) -> bool& { return c.qpp.normalize; },
           "normalize predictor scores by the mean top score");
    o.flag(app, "--force", [](RunConfig& c) -> bool& { return c.force; }, "recompute existing artifacts");
}

int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const BackendUnavailable*>(&e) != nullptr) {
        return kExitBackend;
    }
    if (dynamic_cast<const Error*>(&e) != nullptr) {
        return kExitUsage;
    }
    return 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Dense retriever selection for unlabeled corpora", "drselect"};
    app.require_subcommand(1);
    RunConfig flags;
    Options opts(flags);
    std::string config_path;
    std::string method;

    auto* select = app.add_subcommand("select", "rank the pool with one selection method");
    select->add_option("--method", method, "larmor, q, qf, qfj, qfr, msmarco, entropy, alteration, wig, nqc, "
                                           "smv, sigma, sigma-max, clarity, qpp-fusion")
        ->required();
    add_common(opts, select, config_path);
    auto* evaluate = app.add_subcommand("evaluate", "score every ranking file against ground truth");
    add_common(opts, evaluate, config_path);
    for (const char* name : {"gen-queries", "retrieve", "fuse", "judge", "rerank"}) {
        add_common(opts, app.add_subcommand(name, std::string("pipeline step: ") + name), config_path);
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            const fs::path path(config_path);
            apply_config_json(cfg, read_text(path, "config"), path.parent_path());
        }
        opts.apply(cfg);
        cfg.pipeline.validate();
        cfg.qpp.validate();

        Session session(std::move(cfg), out, err);
        const std::string cmd = app.get_subcommands().front()->get_name();
        log_event(err, "command", {{"name", cmd}, {"seed", session.cfg().seed}, {"workers", session.cfg().workers}});
        if (cmd == "select") {
            return cmd_select(session, method);
        }
        if (cmd == "evaluate") {
            return cmd_evaluate(session);
        }
        return cmd_stage(session, cmd);
    } catch (const std::exception& e) {
        log_event(err, "error", {{"message", e.what()}});
        return exit_code_for(e);
    }
}

}  // namespace drselect::cli
