#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "drselect/error.hpp"
#include "drselect/fusion.hpp"
#include "drselect/rng.hpp"

using namespace drselect;
using namespace drselect::fusion;

namespace {

using Lists = std::vector<std::vector<std::string>>;

// Straight-line reference: sum contributions per item, sort by (score desc, id asc).
std::vector<std::pair<std::string, double>> reference_rrf(const Lists& lists, double k)
{
    std::map<std::string, std::vector<double>> parts;
    for (const auto& l : lists) {
        for (std::size_t r = 0; r < l.size(); ++r) {
            parts[l[r]].push_back(1.0 / (k + static_cast<double>(r + 1)));
        }
    }
    std::vector<std::pair<std::string, double>> out;
    for (auto& [id, p] : parts) {
        std::sort(p.begin(), p.end(), std::greater<>());
        double s = 0.0;
        for (double x : p) {
            s += x;
        }
        out.emplace_back(id, s);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    return out;
}

Lists random_lists(SplitMix64& rng, std::size_t universe, std::size_t n_lists)
{
    Lists lists(n_lists);
    for (auto& l : lists) {
        std::vector<std::string> items;
        for (std::size_t i = 0; i < universe; ++i) {
            items.push_back("x" + std::to_string(i));
        }
        rng.shuffle(items);
        items.resize(1 + rng.below(universe));
        l = items;
    }
    return lists;
}

}  // namespace

TEST(RrfFuse, SingleInputKeepsOrder)
{
    for (double k : {1.0, 60.0, 1000.0}) {
        EXPECT_EQ(rrf_fuse({{"A", "B", "C"}}, k).ids(), (std::vector<std::string>{"A", "B", "C"}));
    }
}

TEST(RrfFuse, SwappedPairTiesAndBreaksById)
{
    const auto f = rrf_fuse({{"B", "A"}, {"A", "B"}}, 60.0);
    ASSERT_EQ(f.items.size(), 2u);
    EXPECT_EQ(f.ids(), (std::vector<std::string>{"A", "B"}));
    EXPECT_DOUBLE_EQ(f.items[0].score, 1.0 / 61 + 1.0 / 62);
    EXPECT_EQ(f.items[0].score, f.items[1].score);
}

TEST(RrfFuse, ThreeItemHandArithmetic)
{
    const auto f = rrf_fuse({{"A", "B", "C"}, {"C", "A", "B"}}, 60.0);
    EXPECT_EQ(f.ids(), (std::vector<std::string>{"A", "C", "B"}));
    EXPECT_NEAR(f.items[0].score, 1.0 / 61 + 1.0 / 62, 1e-12);
    EXPECT_NEAR(f.items[1].score, 1.0 / 63 + 1.0 / 61, 1e-12);
    EXPECT_NEAR(f.items[2].score, 1.0 / 62 + 1.0 / 63, 1e-12);
    EXPECT_NEAR(f.items[0].score, 0.032522, 1e-6);
    EXPECT_NEAR(f.items[1].score, 0.032266, 1e-6);
    EXPECT_NEAR(f.items[2].score, 0.032002, 1e-6);
}

TEST(RrfFuse, Errors)
{
    EXPECT_THROW(rrf_fuse({}), ValidationError);
    EXPECT_THROW(rrf_fuse({{"a"}}, 0.0), ValidationError);
    EXPECT_THROW(rrf_fuse({{"a", "a"}}), ValidationError);
}

TEST(RrfFuse, MatchesReferenceAndProperties)
{
    SplitMix64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        auto lists = random_lists(rng, 2 + rng.below(15), 1 + rng.below(5));
        const double k = 1.0 + static_cast<double>(rng.below(100));
        const auto ref = reference_rrf(lists, k);
        const auto got = rrf_fuse(lists, k);
        ASSERT_EQ(got.items.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            EXPECT_EQ(got.items[i].item_id, ref[i].first);
            EXPECT_NEAR(got.items[i].score, ref[i].second, 1e-15);
            EXPECT_GT(got.items[i].score, 0.0);
        }
        auto permuted = lists;
        rng.shuffle(permuted);
        EXPECT_EQ(rrf_fuse(permuted, k), got);
        for (std::size_t m = 1; m < got.items.size(); ++m) {
            const auto shallow = rrf_fuse(lists, k, m);
            const auto deeper = rrf_fuse(lists, k, m + 1);
            ASSERT_EQ(shallow.items.size(), m);
            EXPECT_TRUE(std::equal(shallow.items.begin(), shallow.items.end(), deeper.items.begin()));
        }
    }
}

TEST(RrfFuse, ConsensusFirstStaysFirst)
{
    SplitMix64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        auto lists = random_lists(rng, 10, 4);
        for (auto& l : lists) {
            l.insert(l.begin(), "zz_top");
        }
        EXPECT_EQ(rrf_fuse(lists).items.front().item_id, "zz_top");
    }
}

TEST(FuseDrRankings, TieBreakAndAgreement)
{
    const auto qfj = DrRanking::from_scores("qfj", {{"R1", 3}, {"R2", 2}, {"R3", 1}});
    const auto qfr = DrRanking::from_scores("qfr", {{"R1", 2}, {"R2", 3}, {"R3", 1}});
    const auto fused = fuse_dr_rankings({qfj, qfr});
    EXPECT_EQ(fused.order(), (std::vector<std::string>{"R1", "R2", "R3"}));
    EXPECT_EQ(fused.entries()[0].score, fused.entries()[1].score);
    EXPECT_DOUBLE_EQ(fused.entries()[0].score, 1.0 / 61 + 1.0 / 62);
    EXPECT_EQ(fused.method_id(), "rrf(qfj+qfr)");
    EXPECT_EQ(fuse_dr_rankings({qfj, qfj}).order(), qfj.order());
    const auto swapped = fuse_dr_rankings({qfr, qfj});
    EXPECT_EQ(swapped.order(), fused.order());
    EXPECT_EQ(swapped.scores(), fused.scores());
}

TEST(FuseDrRankings, MismatchListsDifference)
{
    const auto a = DrRanking::from_scores("a", {{"R1", 1}, {"R2", 2}});
    const auto b = DrRanking::from_scores("b", {{"R1", 1}, {"R3", 2}});
    try {
        fuse_dr_rankings({a, b});
        FAIL();
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("R2"), std::string::npos);
        EXPECT_NE(msg.find("R3"), std::string::npos);
        EXPECT_EQ(msg.find("R1"), std::string::npos);
    }
    EXPECT_THROW(fuse_dr_rankings({}), ValidationError);
}
