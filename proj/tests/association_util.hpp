// SPDX-License-Identifier: Apache-2.0
//
// Conversions between production token sets and the literal gathering oracle.

#pragma once

#include "regformer/association.hpp"
#include "regformer/oracles.hpp"

#include <algorithm>

namespace regformer::testing {

inline oracle::Matrix to_matrix(const Tensor& t) {
    oracle::Matrix m(t.dim(0), t.dim(1));
    std::copy(t.values().begin(), t.values().end(), m.data.begin());
    return m;
}

inline oracle::DenseLayer to_dense(const Linear& l) {
    return {to_matrix(l.weight), std::vector<double>(l.bias.values().begin(), l.bias.values().end())};
}

inline std::vector<std::vector<std::size_t>> neighbour_lists(const FrameTokens& t) {
    std::vector<std::vector<std::size_t>> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t s = 0; s < FrameTokens::kPoolSlots; ++s) {
            const std::size_t slot = i * FrameTokens::kPoolSlots + s;
            if (t.pool_weight[slot] > 0.0) out[i].push_back(t.pool_index[slot]);
        }
    }
    return out;
}

inline oracle::BatInstance make_instance(const FrameTokens& s, const FrameTokens& t, const MotionEmbedder& mlp) {
    oracle::BatInstance inst;
    inst.source_features = to_matrix(s.features);
    inst.target_features = to_matrix(t.features);
    inst.source_coords = s.coords;
    inst.target_coords = t.coords;
    inst.source_neighbours = neighbour_lists(s);
    inst.target_neighbours = neighbour_lists(t);
    inst.mlp = {to_dense(mlp.l1), to_dense(mlp.l2), to_dense(mlp.l3)};
    return inst;
}

/// Reorders the rows of a token set; neighbourhood references follow the rows.
inline FrameTokens permute_tokens(const FrameTokens& t, const std::vector<std::size_t>& order) {
    std::vector<std::size_t> new_row(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) new_row[order[r]] = r;
    FrameTokens out;
    out.features = index_select(t.features, 0, order);
    for (std::size_t r = 0; r < order.size(); ++r) {
        out.coords.push_back(t.coords[order[r]]);
        out.grid_index.push_back(t.grid_index[order[r]]);
        for (std::size_t s = 0; s < FrameTokens::kPoolSlots; ++s) {
            const std::size_t slot = order[r] * FrameTokens::kPoolSlots + s;
            out.pool_index.push_back(new_row[t.pool_index[slot]]);
            out.pool_weight.push_back(t.pool_weight[slot]);
        }
    }
    return out;
}

}  // namespace regformer::testing
