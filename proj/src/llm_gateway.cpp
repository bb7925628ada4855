#include "drselect/llm_gateway.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "drselect/error.hpp"
#include "drselect/retrieval.hpp"
#include "drselect/rng.hpp"
#include "drselect/text.hpp"

namespace drselect::llm {

using nlohmann::json;

std::string_view to_string(Task task)
{
    switch (task) {
    case Task::QueryGen:
        return "query_gen";
    case Task::Judge:
        return "judge";
    case Task::Setwise:
        return "setwise";
    }
    return "?";
}

namespace {

std::set<std::string> required_placeholders(Task task)
{
    switch (task) {
    case Task::QueryGen:
        return {"document"};
    case Task::Judge:
        return {"query", "document"};
    case Task::Setwise:
        return {"query", "candidates"};
    }
    return {};
}

bool is_ident_char(char c)
{
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Calls fn(begin, end, name) for every `{identifier}` in s.
template <typename Fn>
void scan_placeholders(const std::string& s, Fn&& fn)
{
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '{') {
            continue;
        }
        std::size_t j = i + 1;
        while (j < s.size() && is_ident_char(s[j])) {
            ++j;
        }
        if (j > i + 1 && j < s.size() && s[j] == '}') {
            fn(i, j + 1, s.substr(i + 1, j - i - 1));
            i = j;
        }
    }
}

}  // namespace

PromptTemplate::PromptTemplate(Task task, std::string text_in, DomainHints hints)
    : task_(task), text_(std::move(text_in)), hints_(std::move(hints))
{
    const auto required = required_placeholders(task_);
    std::set<std::string> found;
    scan_placeholders(text_, [&](std::size_t, std::size_t, const std::string& name) {
        if (name == "query_type" || name == "doc_type") {
            return;
        }
        if (!required.contains(name)) {
            throw ValidationError("placeholder {" + name + "} is not allowed in a " + std::string(to_string(task_)) +
                                  " prompt");
        }
        found.insert(name);
    });
    for (const auto& r : required) {
        if (!found.contains(r)) {
            throw ValidationError(std::string(to_string(task_)) + " prompt lacks placeholder {" + r + "}");
        }
    }
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const
{
    std::string out;
    std::size_t last = 0;
    scan_placeholders(text_, [&](std::size_t b, std::size_t e, const std::string& name) {
        out.append(text_, last, b - last);
        if (name == "query_type") {
            out += hints_.query_type;
        } else if (name == "doc_type") {
            out += hints_.doc_type;
        } else {
            auto it = values.find(name);
            if (it == values.end()) {
                throw ValidationError("no value for placeholder {" + name + "}");
            }
            out += it->second;
        }
        last = e;
    });
    out.append(text_, last, std::string::npos);
    return out;
}

namespace {

struct DomainSpec {
    const char* name;
    const char* query_type;
    const char* doc_type;
};

constexpr std::array<DomainSpec, 5> kDomains{{
    {"generic", "search query", "document"},
    {"wiki_qa", "question", "Wikipedia page"},
    {"scientific", "scientific question or claim", "scientific title and abstract"},
    {"argument", "argument", "argument"},
    {"news", "news search query", "news article"},
}};

// Hints are baked into the shipped prompts; prompts/<domain>/<task>.txt hold the same text.
constexpr const char* kQueryGenText =
    "Write one {query_type} that the {doc_type} below answers. Be specific to its content and avoid "
    "generic wording.\n\n{doc_type}: {document}\n\n{query_type}:";
constexpr const char* kJudgeText =
    "Decide whether the {doc_type} answers the {query_type}. Reply with exactly one of 'Highly Relevant', "
    "'Somewhat Relevant', or 'Not Relevant'.\n\nQuery: {query}\n{doc_type}: {document}\n\nJudgement:";
constexpr const char* kSetwiseText =
    "Query: \"{query}\"\n\nWhich of the following passages is the most relevant to the query?\n\n{candidates}\n\n"
    "Answer with the label of the most relevant passage only, for example 'Passage A':";

const DomainSpec& find_domain(std::string_view domain)
{
    for (const auto& d : kDomains) {
        if (domain == d.name) {
            return d;
        }
    }
    throw ValidationError("unknown prompt domain '" + std::string(domain) + "'");
}

std::string bake(const char* tmpl, const DomainSpec& d)
{
    // Resolve the hint slots so the text carries only task placeholders.
    const std::string s = tmpl;
    std::string out;
    std::size_t last = 0;
    scan_placeholders(s, [&](std::size_t b, std::size_t e, const std::string& name) {
        out.append(s, last, b - last);
        if (name == "query_type") {
            out += d.query_type;
        } else if (name == "doc_type") {
            out += d.doc_type;
        } else {
            out.append(s, b, e - b);
        }
        last = e;
    });
    out.append(s, last, std::string::npos);
    return out;
}

}  // namespace

std::vector<std::string> known_domains()
{
    std::vector<std::string> out;
    for (const auto& d : kDomains) {
        out.emplace_back(d.name);
    }
    return out;
}

PromptTemplate default_template(Task task, std::string_view domain)
{
    const auto& d = find_domain(domain);
    const DomainHints hints{d.query_type, d.doc_type};
    switch (task) {
    case Task::QueryGen:
        return PromptTemplate(task, bake(kQueryGenText, d), hints);
    case Task::Judge:
        return PromptTemplate(task, bake(kJudgeText, d), hints);
    case Task::Setwise:
        return PromptTemplate(task, bake(kSetwiseText, d), hints);
    }
    throw ValidationError("unknown task");
}

PromptTemplate load_template(const std::filesystem::path& path, Task task, DomainHints hints)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open prompt file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string s = ss.str();
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) {
        s.pop_back();
    }
    return PromptTemplate(task, std::move(s), std::move(hints));
}

std::string_view to_string(GradedLabel label)
{
    switch (label) {
    case GradedLabel::HighlyRelevant:
        return "Highly Relevant";
    case GradedLabel::SomewhatRelevant:
        return "Somewhat Relevant";
    case GradedLabel::NotRelevant:
        return "Not Relevant";
    }
    return "?";
}

std::optional<GradedLabel> parse_label(std::string_view response)
{
    std::string lower(response);
    for (auto& c : lower) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
    }
    static constexpr std::array<std::pair<std::string_view, GradedLabel>, 3> kLabels{{
        {"somewhat relevant", GradedLabel::SomewhatRelevant},
        {"highly relevant", GradedLabel::HighlyRelevant},
        {"not relevant", GradedLabel::NotRelevant},
    }};
    // kLabels is ordered longest first.
    for (const auto& [needle, label] : kLabels) {
        if (lower.find(needle) != std::string::npos) {
            return label;
        }
    }
    return std::nullopt;
}

int binarize(GradedLabel label)
{
    return label == GradedLabel::HighlyRelevant ? 1 : 0;
}

double token_overlap(std::string_view query, std::string_view doc)
{
    const auto qt = text::tokenize(query);
    const std::set<std::string> qset(qt.begin(), qt.end());
    if (qset.empty()) {
        return 0.0;
    }
    const auto dt = text::tokenize(doc);
    const std::unordered_set<std::string> dset(dt.begin(), dt.end());
    std::size_t hit = 0;
    for (const auto& t : qset) {
        hit += dset.contains(t) ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(qset.size());
}

MockLlm::MockLlm(std::uint64_t seed, std::shared_ptr<const LexicalIndex> stats) : seed_(seed), stats_(std::move(stats))
{}

std::vector<std::string> MockLlm::complete(const LlmRequest& req) const
{
    const std::uint64_t base = mix64(mix64(seed_, text::fnv1a(req.prompt)), static_cast<std::uint64_t>(req.attempt));
    switch (req.task) {
    case Task::QueryGen: {
        std::vector<std::pair<std::string, double>> weighted;
        if (stats_) {
            weighted = stats_->tfidf_terms(req.document);
        } else {
            std::map<std::string, double> tf;
            for (auto& t : text::tokenize(req.document)) {
                tf[t] += 1.0;
            }
            weighted.assign(tf.begin(), tf.end());
            std::stable_sort(weighted.begin(), weighted.end(),
                             [](const auto& a, const auto& b) { return a.second > b.second; });
        }
        if (weighted.size() > kCandidateTerms) {
            weighted.resize(kCandidateTerms);
        }
        std::vector<std::string> out;
        const int n = std::max(req.params.n_samples, 1);
        for (int j = 0; j < n; ++j) {
            if (weighted.empty()) {
                out.emplace_back();
                continue;
            }
            SplitMix64 rng(mix64(base, static_cast<std::uint64_t>(j)));
            std::vector<std::string> rest;
            for (std::size_t i = 1; i < weighted.size(); ++i) {
                rest.push_back(weighted[i].first);
            }
            rng.shuffle(rest);
            std::vector<std::string> terms{weighted.front().first};
            for (std::size_t i = 0; i < rest.size() && terms.size() < kQueryTerms; ++i) {
                terms.push_back(rest[i]);
            }
            rng.shuffle(terms);
            out.push_back(text::join(terms, " "));
        }
        return out;
    }
    case Task::Judge: {
        if (req.query_source_doc_id && *req.query_source_doc_id == req.document_id) {
            return {std::string(to_string(GradedLabel::HighlyRelevant))};
        }
        const double r = token_overlap(req.query, req.document);
        const GradedLabel label = r >= 0.5  ? GradedLabel::HighlyRelevant
                                  : r > 0.0 ? GradedLabel::SomewhatRelevant
                                            : GradedLabel::NotRelevant;
        return {std::string(to_string(label))};
    }
    case Task::Setwise: {
        std::size_t best = 0;
        double best_r = -1.0;
        for (std::size_t i = 0; i < req.candidates.size(); ++i) {
            const double r = token_overlap(req.query, req.candidates[i]);
            if (r > best_r) {
                best_r = r;
                best = i;
            }
        }
        return {std::string("Passage ") + static_cast<char>('A' + best)};
    }
    }
    return {};
}

HttpLlm::HttpLlm(HttpLlmSettings settings) : settings_(std::move(settings)), transport_(settings_.http) {}

std::vector<std::string> HttpLlm::complete(const LlmRequest& req) const
{
    const json body = {{"prompt", req.prompt},
                       {"top_p", req.params.top_p},
                       {"temperature", req.params.temperature},
                       {"max_tokens", req.params.max_tokens},
                       {"n", req.params.n_samples}};
    std::vector<std::pair<std::string, std::string>> headers;
    if (!settings_.api_key_env.empty()) {
        if (const char* key = std::getenv(settings_.api_key_env.c_str()); key && *key) {
            headers.emplace_back("Authorization", std::string("Bearer ") + key);
        }
    }
    const std::string resp = transport_.post("/generate", body.dump(), headers);
    try {
        const json j = json::parse(resp);
        std::vector<std::string> out;
        for (const auto& o : j.at("outputs")) {
            out.push_back(o.is_string() ? o.get<std::string>() : std::string());
        }
        return out;
    } catch (const json::exception& e) {
        throw BackendUnavailable("malformed generate response from " + settings_.http.base_url + ": " + e.what());
    }
}

std::vector<std::string> setwise_heap_sort(std::vector<std::string> items, int set_size, const PickBest& pick)
{
    if (set_size < 2) {
        throw ValidationError("setwise set size must be >= 2");
    }
    const std::size_t n = items.size();
    if (n <= 1) {
        return items;
    }
    const std::size_t arity = static_cast<std::size_t>(set_size) - 1;
    std::vector<std::string> group;
    std::vector<std::size_t> slots;
    const auto sift_down = [&](std::size_t i, std::size_t size) {
        for (;;) {
            const std::size_t first = i * arity + 1;
            if (first >= size) {
                return;
            }
            group.clear();
            slots.clear();
            group.push_back(items[i]);
            slots.push_back(i);
            for (std::size_t c = first; c < first + arity && c < size; ++c) {
                group.push_back(items[c]);
                slots.push_back(c);
            }
            const std::size_t best = pick(std::span<const std::string>(group));
            if (best == 0 || best >= group.size()) {
                return;
            }
            std::swap(items[i], items[slots[best]]);
            i = slots[best];
        }
    };
    for (std::size_t i = (n - 2) / arity + 1; i-- > 0;) {
        sift_down(i, n);
    }
    for (std::size_t end = n - 1; end > 0; --end) {
        std::swap(items[0], items[end]);
        sift_down(0, end);
    }
    std::reverse(items.begin(), items.end());
    return items;
}

std::string document_view(const Document& doc)
{
    if (doc.title.empty()) {
        return doc.text;
    }
    return doc.title + "\n" + doc.text;
}

namespace {

std::string clean_generation(std::string_view s)
{
    s = text::trim(s);
    if (auto nl = s.find('\n'); nl != std::string_view::npos) {
        s = text::trim(s.substr(0, nl));
    }
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
        s = text::trim(s.substr(1, s.size() - 2));
    }
    return text::join(text::split_ws(s), " ");
}

std::optional<std::size_t> parse_passage_label(std::string_view response, std::size_t count)
{
    for (const auto& tok : text::tokenize(response)) {
        if (tok == "passage") {
            continue;
        }
        if (tok.size() == 1 && tok[0] >= 'a' && tok[0] <= 'z') {
            const std::size_t idx = static_cast<std::size_t>(tok[0] - 'a');
            if (idx < count) {
                return idx;
            }
            return std::nullopt;
        }
    }
    return std::nullopt;
}

std::string truncate_tokens(std::string_view s, int budget)
{
    auto toks = text::split_ws(s);
    if (budget > 0 && toks.size() > static_cast<std::size_t>(budget)) {
        toks.resize(static_cast<std::size_t>(budget));
    }
    return text::join(toks, " ");
}

}  // namespace

LlmGateway::LlmGateway(std::shared_ptr<const LlmBackend> backend, PromptSet prompts, GatewayOptions options)
    : backend_(std::move(backend)),
      prompts_(std::move(prompts)),
      options_(options),
      stats_(std::make_unique<GatewayStats>())
{
    if (!backend_) {
        throw ValidationError("LLM gateway needs a backend");
    }
    if (prompts_.query_gen.task() != Task::QueryGen || prompts_.judge.task() != Task::Judge ||
        prompts_.setwise.task() != Task::Setwise) {
        throw ValidationError("prompt set holds a template of the wrong task");
    }
}

std::vector<std::string> LlmGateway::call(LlmRequest& req) const
{
    ++stats_->backend_calls;
    return backend_->complete(req);
}

std::vector<Query> LlmGateway::generate_queries(const Document& doc, int l) const
{
    if (l < 1) {
        throw ValidationError("queries per document must be >= 1");
    }
    LlmRequest req;
    req.task = Task::QueryGen;
    req.document_id = doc.doc_id;
    req.document = document_view(doc);
    req.prompt = prompts_.query_gen.render({{"document", req.document}});
    req.params = options_.query_gen;
    req.params.n_samples = l;
    std::vector<std::string> texts(static_cast<std::size_t>(l));
    try {
        auto outs = call(req);
        for (std::size_t j = 0; j < texts.size() && j < outs.size(); ++j) {
            texts[j] = clean_generation(outs[j]);
        }
        const auto missing = static_cast<int>(std::count(texts.begin(), texts.end(), std::string()));
        if (missing > 0) {
            req.attempt = 1;
            req.params.n_samples = missing;
            auto retry = call(req);
            std::size_t r = 0;
            for (auto& t : texts) {
                if (t.empty() && r < retry.size()) {
                    t = clean_generation(retry[r++]);
                }
            }
        }
    } catch (const Error& e) {
        throw BackendUnavailable("query generation for doc '" + doc.doc_id + "' failed: " + e.what());
    }
    std::string fallback = clean_generation(doc.title);
    if (fallback.empty()) {
        auto toks = text::split_ws(doc.text);
        if (toks.size() > 8) {
            toks.resize(8);
        }
        fallback = text::join(toks, " ");
    }
    std::vector<Query> out;
    out.reserve(texts.size());
    for (std::size_t j = 0; j < texts.size(); ++j) {
        if (texts[j].empty()) {
            ++stats_->query_fallbacks;
            texts[j] = fallback;
        }
        out.push_back({doc.doc_id + "#q" + std::to_string(j + 1), texts[j], doc.doc_id});
    }
    return out;
}

GradedLabel LlmGateway::judge(const Query& query, const Document& doc) const
{
    ++stats_->judge_requests;
    LlmRequest req;
    req.task = Task::Judge;
    req.query = query.text;
    req.query_source_doc_id = query.source_doc_id;
    req.document_id = doc.doc_id;
    req.document = document_view(doc);
    req.prompt = prompts_.judge.render({{"query", query.text}, {"document", req.document}});
    req.params = options_.judge;
    for (int attempt = 0; attempt < 2; ++attempt) {
        req.attempt = attempt;
        for (const auto& out : call(req)) {
            if (auto label = parse_label(out)) {
                return *label;
            }
        }
    }
    ++stats_->judge_fallbacks;
    return GradedLabel::NotRelevant;
}

std::vector<std::string> LlmGateway::setwise_rerank(const Query& query, const std::vector<const Document*>& candidates,
                                                    int set_size) const
{
    std::map<std::string, const Document*> by_id;
    std::vector<std::string> ids;
    ids.reserve(candidates.size());
    for (const Document* d : candidates) {
        if (d == nullptr) {
            throw ValidationError("null setwise candidate");
        }
        if (!by_id.emplace(d->doc_id, d).second) {
            throw ValidationError("duplicate setwise candidate '" + d->doc_id + "'");
        }
        ids.push_back(d->doc_id);
    }
    const PickBest pick = [&](std::span<const std::string> group) -> std::size_t {
        ++stats_->setwise_comparisons;
        LlmRequest req;
        req.task = Task::Setwise;
        req.query = query.text;
        req.query_source_doc_id = query.source_doc_id;
        req.params = options_.setwise;
        std::string block;
        for (std::size_t i = 0; i < group.size(); ++i) {
            const std::string passage = truncate_tokens(document_view(*by_id.at(group[i])),
                                                        options_.candidate_token_budget);
            req.candidate_ids.push_back(group[i]);
            req.candidates.push_back(passage);
            if (i) {
                block += "\n\n";
            }
            block += "Passage ";
            block += static_cast<char>('A' + i);
            block += ": \"" + passage + "\"";
        }
        req.prompt = prompts_.setwise.render({{"query", query.text}, {"candidates", block}});
        for (int attempt = 0; attempt < 2; ++attempt) {
            req.attempt = attempt;
            for (const auto& out : call(req)) {
                if (auto idx = parse_passage_label(out, group.size())) {
                    return *idx;
                }
            }
        }
        ++stats_->setwise_fallbacks;
        return 0;
    };
    if (set_size > 26) {
        throw ValidationError("setwise set size is limited to 26 passage labels");
    }
    return setwise_heap_sort(std::move(ids), set_size, pick);
}

}  // namespace drselect::llm
