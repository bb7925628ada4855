#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "drselect/data_model.hpp"

namespace drselect::fusion {

inline constexpr double kDefaultRrfK = 60.0;

struct FusedItem {
    std::string item_id;
    double score = 0.0;

    bool operator==(const FusedItem&) const = default;
};

/// RRF output: scores strictly positive and non-increasing, ties by item id.
struct FusedRanking {
    std::vector<FusedItem> items;

    std::vector<std::string> ids() const;
    bool operator==(const FusedRanking&) const = default;
};

/// Reciprocal rank fusion. An item scores sum over the rankings that contain
/// it of 1 / (k_rrf + rank), rank 1-based. Each item's contributions are summed
/// in ascending rank order, so the result is bit-identical under any
/// permutation of `rankings`.
FusedRanking rrf_fuse(const std::vector<std::vector<std::string>>& rankings, double k_rrf = kDefaultRrfK,
                      std::size_t depth = std::numeric_limits<std::size_t>::max());

/// Fuses retriever rankings. All inputs must cover the same dr ids.
DrRanking fuse_dr_rankings(const std::vector<DrRanking>& rankings, double k_rrf = kDefaultRrfK);

}  // namespace drselect::fusion
