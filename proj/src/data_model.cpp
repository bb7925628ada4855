#include "drselect/data_model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "drselect/error.hpp"
#include "drselect/rng.hpp"
#include "drselect/text.hpp"

namespace drselect {

using nlohmann::json;

Corpus::Corpus(std::string name, std::vector<Document> docs) : name_(std::move(name)), docs_(std::move(docs))
{
    index_.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        const auto& d = docs_[i];
        if (d.doc_id.empty()) {
            throw ValidationError("document " + std::to_string(i) + " has an empty doc id");
        }
        if (text::trim(d.text).empty()) {
            throw ValidationError("document '" + d.doc_id + "' has blank text");
        }
        if (!index_.emplace(d.doc_id, i).second) {
            throw ValidationError("duplicate doc id '" + d.doc_id + "'");
        }
    }
}

const Document* Corpus::find(std::string_view doc_id) const
{
    auto it = index_.find(std::string(doc_id));
    return it == index_.end() ? nullptr : &docs_[it->second];
}

std::vector<std::string> Run::ranked_ids(const std::string& query_id) const
{
    std::vector<std::string> ids;
    auto it = entries.find(query_id);
    if (it != entries.end()) {
        ids.reserve(it->second.size());
        for (const auto& e : it->second) {
            ids.push_back(e.doc_id);
        }
    }
    return ids;
}

void normalize_ranking(std::vector<RunEntry>& entries, std::string_view query_id)
{
    std::sort(entries.begin(), entries.end(), [](const RunEntry& a, const RunEntry& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.doc_id < b.doc_id;
    });
    std::set<std::string_view> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!seen.insert(entries[i].doc_id).second) {
            throw ValidationError("duplicate doc '" + entries[i].doc_id + "' for query '" + std::string(query_id) + "'");
        }
        entries[i].rank = static_cast<int>(i + 1);
    }
}

void Qrels::set(const std::string& query_id, const std::string& doc_id, int grade)
{
    judgments[query_id][doc_id] = grade;
}

const std::map<std::string, int>* Qrels::for_query(const std::string& query_id) const
{
    auto it = judgments.find(query_id);
    return it == judgments.end() ? nullptr : &it->second;
}

std::size_t Qrels::size() const
{
    std::size_t n = 0;
    for (const auto& [q, docs] : judgments) {
        n += docs.size();
    }
    return n;
}

std::string_view to_string(BackendKind kind)
{
    switch (kind) {
    case BackendKind::RunFile:
        return "run_file";
    case BackendKind::Http:
        return "http";
    case BackendKind::Lexical:
        return "lexical";
    }
    return "?";
}

std::vector<std::string> DrPool::ids() const
{
    std::vector<std::string> out;
    out.reserve(retrievers.size());
    for (const auto& r : retrievers) {
        out.push_back(r.dr_id);
    }
    return out;
}

DrRanking DrRanking::from_scores(std::string method_id, const std::map<std::string, double>& scores)
{
    DrRanking r;
    r.method_id_ = std::move(method_id);
    r.entries_.reserve(scores.size());
    for (const auto& [id, s] : scores) {
        if (!std::isfinite(s)) {
            throw ValidationError("non-finite score for '" + id + "' in method '" + r.method_id_ + "'");
        }
        r.entries_.push_back({id, s});
    }
    // std::map already yields ascending ids, so a stable sort keeps the tie-break.
    std::stable_sort(r.entries_.begin(), r.entries_.end(),
                     [](const DrScore& a, const DrScore& b) { return a.score > b.score; });
    return r;
}

const std::string& DrRanking::top() const
{
    if (entries_.empty()) {
        throw ValidationError("empty ranking '" + method_id_ + "'");
    }
    return entries_.front().dr_id;
}

std::vector<std::string> DrRanking::order() const
{
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) {
        out.push_back(e.dr_id);
    }
    return out;
}

std::map<std::string, double> DrRanking::scores() const
{
    std::map<std::string, double> out;
    for (const auto& e : entries_) {
        out.emplace(e.dr_id, e.score);
    }
    return out;
}

std::string format_double(double v)
{
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

namespace {

double parse_real(const std::string& s, std::size_t line, const char* what)
{
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw ParseError(std::string("invalid ") + what + " '" + s + "'", line);
    }
    return v;
}

long long parse_int(const std::string& s, std::size_t line, const char* what)
{
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(std::string("invalid ") + what + " '" + s + "'", line);
    }
    return v;
}

}  // namespace

Run parse_run(std::istream& in)
{
    Run run;
    bool have_tag = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto f = text::split_ws(line);
        if (f.empty()) {
            continue;
        }
        if (f.size() != 6) {
            throw ParseError("expected 6 fields 'qid Q0 docid rank score runtag', got " + std::to_string(f.size()),
                             lineno);
        }
        const long long rank = parse_int(f[3], lineno, "rank");
        if (rank < 1) {
            throw ParseError("rank must be positive", lineno);
        }
        const double score = parse_real(f[4], lineno, "score");
        if (!have_tag) {
            run.dr_id = f[5];
            have_tag = true;
        }
        run.entries[f[0]].push_back({f[2], score, static_cast<int>(rank)});
    }
    for (auto& [qid, list] : run.entries) {
        normalize_ranking(list, qid);
    }
    return run;
}

Run parse_run(std::string_view text)
{
    std::istringstream in{std::string(text)};
    return parse_run(in);
}

void write_run(const Run& run, std::ostream& out)
{
    const std::string tag = run.dr_id.empty() ? "run" : run.dr_id;
    for (const auto& [qid, list] : run.entries) {
        for (const auto& e : list) {
            out << qid << " Q0 " << e.doc_id << ' ' << e.rank << ' ' << format_double(e.score) << ' ' << tag << '\n';
        }
    }
}

std::string write_run(const Run& run)
{
    std::ostringstream out;
    write_run(run, out);
    return out.str();
}

Qrels parse_qrels(std::istream& in)
{
    Qrels q;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto f = text::split_ws(line);
        if (f.empty()) {
            continue;
        }
        if (f.size() != 4) {
            throw ParseError("expected 4 fields 'qid 0 docid grade', got " + std::to_string(f.size()), lineno);
        }
        const long long grade = parse_int(f[3], lineno, "grade");
        if (grade < 0 || grade > 1'000'000) {
            throw ParseError("grade out of range '" + f[3] + "'", lineno);
        }
        auto& slot = q.judgments[f[0]];
        if (slot.contains(f[2])) {
            ++q.overwritten;
        }
        slot[f[2]] = static_cast<int>(grade);
    }
    return q;
}

Qrels parse_qrels(std::string_view text)
{
    std::istringstream in{std::string(text)};
    return parse_qrels(in);
}

void write_qrels(const Qrels& qrels, std::ostream& out)
{
    for (const auto& [qid, docs] : qrels.judgments) {
        for (const auto& [doc, grade] : docs) {
            out << qid << " 0 " << doc << ' ' << grade << '\n';
        }
    }
}

std::string write_qrels(const Qrels& qrels)
{
    std::ostringstream out;
    write_qrels(qrels, out);
    return out.str();
}

namespace {

std::string id_field(const json& obj, const char* key, std::size_t lineno)
{
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        throw ParseError(std::string("missing '") + key + "'", lineno);
    }
    if (it->is_string()) {
        return it->get<std::string>();
    }
    if (it->is_number_integer()) {
        return std::to_string(it->get<long long>());
    }
    throw ParseError(std::string("'") + key + "' must be a string", lineno);
}

json parse_json_line(const std::string& line, std::size_t lineno)
{
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!obj.is_object()) {
        throw ParseError("expected a JSON object", lineno);
    }
    return obj;
}

}  // namespace

Corpus load_corpus(std::istream& in, std::string name)
{
    std::vector<Document> docs;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) {
            continue;
        }
        json obj = parse_json_line(line, lineno);
        Document d;
        d.doc_id = id_field(obj, "_id", lineno);
        auto t = obj.find("text");
        if (t == obj.end() || !t->is_string()) {
            throw ParseError("missing 'text'", lineno);
        }
        d.text = t->get<std::string>();
        if (auto ti = obj.find("title"); ti != obj.end() && ti->is_string()) {
            d.title = ti->get<std::string>();
        }
        if (d.doc_id.empty()) {
            throw ParseError("empty '_id'", lineno);
        }
        if (text::trim(d.text).empty()) {
            throw ParseError("blank 'text'", lineno);
        }
        if (!seen.insert(d.doc_id).second) {
            throw ParseError("duplicate '_id' '" + d.doc_id + "'", lineno);
        }
        docs.push_back(std::move(d));
    }
    return Corpus(std::move(name), std::move(docs));
}

std::vector<Query> load_queries(std::istream& in)
{
    std::vector<Query> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) {
            continue;
        }
        json obj = parse_json_line(line, lineno);
        Query q;
        q.query_id = id_field(obj, "_id", lineno);
        auto t = obj.find("text");
        if (t == obj.end() || !t->is_string()) {
            throw ParseError("missing 'text'", lineno);
        }
        q.text = t->get<std::string>();
        if (auto s = obj.find("source_doc_id"); s != obj.end() && s->is_string()) {
            q.source_doc_id = s->get<std::string>();
        }
        if (!seen.insert(q.query_id).second) {
            throw ParseError("duplicate query id '" + q.query_id + "'", lineno);
        }
        out.push_back(std::move(q));
    }
    return out;
}

void write_queries(const std::vector<Query>& queries, std::ostream& out)
{
    for (const auto& q : queries) {
        json obj = {{"_id", q.query_id}, {"text", q.text}};
        if (q.source_doc_id) {
            obj["source_doc_id"] = *q.source_doc_id;
        }
        out << obj.dump() << '\n';
    }
}

DrPool parse_pool_manifest(std::string_view json_text)
{
    json arr;
    try {
        arr = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("pool manifest: ") + e.what());
    }
    if (!arr.is_array()) {
        throw ParseError("pool manifest must be a JSON array");
    }
    DrPool pool;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& o = arr[i];
        const std::string where = "pool manifest entry " + std::to_string(i);
        if (!o.is_object() || !o.contains("dr_id") || !o["dr_id"].is_string()) {
            throw ParseError(where + ": missing 'dr_id'");
        }
        PoolEntry e;
        e.dr_id = o["dr_id"].get<std::string>();
        // dr ids double as run tags and file names
        const auto toks = text::split_ws(e.dr_id);
        if (toks.size() != 1 || toks[0] != e.dr_id || e.dr_id.find('/') != std::string::npos) {
            throw ValidationError(where + ": dr_id must be a single token without whitespace or '/'");
        }
        if ((o.contains("backend") && !o["backend"].is_string()) ||
            (o.contains("path_or_url") && !o["path_or_url"].is_string())) {
            throw ParseError(where + ": 'backend' and 'path_or_url' must be strings");
        }
        const std::string backend = o.value("backend", std::string("run_file"));
        if (backend == "run_file") {
            e.backend = BackendKind::RunFile;
        } else if (backend == "http") {
            e.backend = BackendKind::Http;
        } else if (backend == "lexical") {
            e.backend = BackendKind::Lexical;
        } else {
            throw ParseError(where + ": unknown backend '" + backend + "'");
        }
        e.path_or_url = o.value("path_or_url", std::string());
        if (e.backend != BackendKind::Lexical && e.path_or_url.empty()) {
            throw ParseError(where + ": 'path_or_url' is required for backend " + backend);
        }
        try {
            e.noise_sigma = o.value("noise_sigma", 0.0);
            e.noise_seed = o.value("noise_seed", std::uint64_t{0});
            e.timeout_ms = o.value("timeout_ms", 30000);
            e.max_retries = o.value("max_retries", 3);
        } catch (const json::exception& ex) {
            throw ParseError(where + ": " + ex.what());
        }
        if (e.noise_sigma < 0.0 || e.timeout_ms <= 0 || e.max_retries < 0) {
            throw ValidationError(where + ": negative noise_sigma, timeout_ms or max_retries");
        }
        if (!seen.insert(e.dr_id).second) {
            throw ValidationError("duplicate dr_id '" + e.dr_id + "' in pool manifest");
        }
        pool.retrievers.push_back(std::move(e));
    }
    return pool;
}

std::string write_ranking_json(const DrRanking& ranking)
{
    json arr = json::array();
    int rank = 1;
    for (const auto& e : ranking.entries()) {
        arr.push_back({{"dr_id", e.dr_id}, {"score", e.score}, {"rank", rank++}});
    }
    return arr.dump(2) + "\n";
}

DrRanking parse_ranking_json(std::string_view json_text, std::string method_id)
{
    json arr;
    try {
        arr = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("ranking file: ") + e.what());
    }
    if (!arr.is_array()) {
        throw ParseError("ranking file must be a JSON array");
    }
    std::map<std::string, double> scores;
    for (const auto& o : arr) {
        if (!o.is_object() || !o.contains("dr_id") || !o.contains("score")) {
            throw ParseError("ranking entry needs 'dr_id' and 'score'");
        }
        if (!o["dr_id"].is_string() || !o["score"].is_number()) {
            throw ParseError("ranking entry: 'dr_id' must be a string and 'score' a number");
        }
        if (!scores.emplace(o["dr_id"].get<std::string>(), o["score"].get<double>()).second) {
            throw ValidationError("duplicate dr_id in ranking file");
        }
    }
    return DrRanking::from_scores(std::move(method_id), scores);
}

std::vector<Document> sample_documents(const Corpus& corpus, std::size_t k, std::uint64_t seed)
{
    const std::size_t n = corpus.size();
    if (k < 1 || k > n) {
        throw ValidationError("sample size " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(idx[i], idx[i + rng.below(n - i)]);
    }
    std::vector<Document> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back(corpus.docs()[idx[i]]);
    }
    return out;
}

}  // namespace drselect
