#pragma once

#include <vector>

#include <psrrr/common.hpp>

namespace psrrr {

/// Dense design whose columns are partitioned into contiguous, disjoint blocks.
/// Block l spans columns [offsets[l], offsets[l+1]).
struct GroupedDesign {
    Matrix x;
    std::vector<Index> offsets{0};

    Index n_rows() const { return x.rows(); }
    Index n_cols() const { return x.cols(); }
    Index n_groups() const { return static_cast<Index>(offsets.size()) - 1; }
    Index group_start(Index l) const { return offsets[static_cast<std::size_t>(l)]; }
    Index group_size(Index l) const {
        return offsets[static_cast<std::size_t>(l) + 1] - offsets[static_cast<std::size_t>(l)];
    }
    auto block(Index l) const { return x.middleCols(group_start(l), group_size(l)); }

    /// Block structure from a list of group sizes.
    static std::vector<Index> offsets_from_sizes(const std::vector<Index>& sizes) {
        std::vector<Index> off{0};
        for (auto s : sizes) off.push_back(off.back() + s);
        return off;
    }
};

} // namespace psrrr
