#include "drselect/fusion.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>

#include "drselect/error.hpp"
#include "drselect/text.hpp"

namespace drselect::fusion {

std::vector<std::string> FusedRanking::ids() const
{
    std::vector<std::string> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        out.push_back(it.item_id);
    }
    return out;
}

FusedRanking rrf_fuse(const std::vector<std::vector<std::string>>& rankings, double k_rrf, std::size_t depth)
{
    if (rankings.empty()) {
        throw ValidationError("rrf_fuse needs at least one ranking");
    }
    if (!(k_rrf > 0.0)) {
        throw ValidationError("k_rrf must be positive");
    }
    std::unordered_map<std::string, std::vector<std::size_t>> ranks;
    for (const auto& list : rankings) {
        std::set<std::string_view> seen;
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (!seen.insert(list[i]).second) {
                throw ValidationError("duplicate item '" + list[i] + "' in an rrf input ranking");
            }
            ranks[list[i]].push_back(i + 1);
        }
    }
    FusedRanking out;
    out.items.reserve(ranks.size());
    for (auto& [id, rs] : ranks) {
        std::sort(rs.begin(), rs.end());
        double s = 0.0;
        for (std::size_t r : rs) {
            s += 1.0 / (k_rrf + static_cast<double>(r));
        }
        out.items.push_back({id, s});
    }
    const auto better = [](const FusedItem& a, const FusedItem& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.item_id < b.item_id;
    };
    const std::size_t n = std::min(depth, out.items.size());
    std::partial_sort(out.items.begin(), out.items.begin() + static_cast<std::ptrdiff_t>(n), out.items.end(), better);
    out.items.resize(n);
    return out;
}

DrRanking fuse_dr_rankings(const std::vector<DrRanking>& rankings, double k_rrf)
{
    if (rankings.empty()) {
        throw ValidationError("fuse_dr_rankings needs at least one ranking");
    }
    const auto ref = rankings.front().order();
    const std::set<std::string> ref_ids(ref.begin(), ref.end());
    std::vector<std::vector<std::string>> lists;
    std::vector<std::string> sources;
    for (const auto& r : rankings) {
        auto order = r.order();
        const std::set<std::string> ids(order.begin(), order.end());
        if (ids != ref_ids) {
            std::vector<std::string> diff;
            std::set_symmetric_difference(ids.begin(), ids.end(), ref_ids.begin(), ref_ids.end(),
                                          std::back_inserter(diff));
            throw ValidationError("rankings cover different retrievers; symmetric difference: " +
                                  text::join(diff, ", "));
        }
        lists.push_back(std::move(order));
        sources.push_back(r.method_id());
    }
    std::sort(sources.begin(), sources.end());
    const FusedRanking fused = rrf_fuse(lists, k_rrf);
    std::map<std::string, double> scores;
    for (const auto& it : fused.items) {
        scores.emplace(it.item_id, it.score);
    }
    return DrRanking::from_scores("rrf(" + text::join(sources, "+") + ")", scores);
}

}  // namespace drselect::fusion
