// Helpers shared by the in-process mock and the HTTP client so the two paths
// agree byte-for-byte on behavior (overflow estimates, token distributions).
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "quorum/backend.hpp"
#include "quorum/metrics.hpp"

namespace quorum::backend::detail {

// Byte-based token estimate used for window checks on backends whose real
// tokenizer is unknown (~4 bytes per token).
inline std::size_t estimate_tokens(std::size_t bytes) { return (bytes + 3) / 4; }

inline bool generate_overflows(const BackendDescriptor& d,
                               std::size_t prompt_bytes) {
    return estimate_tokens(prompt_bytes) +
               static_cast<std::size_t>(d.sampling.max_tokens) >
           static_cast<std::size_t>(d.context_window);
}

inline bool scoring_overflows(const BackendDescriptor& d,
                              std::size_t context_bytes,
                              std::size_t completion_bytes) {
    return estimate_tokens(context_bytes) + estimate_tokens(completion_bytes) >
           static_cast<std::size_t>(d.context_window);
}

// Dense script row -> sparse distribution (zero entries dropped).
inline metrics::TokenDistribution dist_from_row(const std::vector<double>& row,
                                                std::int32_t vocab_size) {
    std::vector<std::pair<std::int32_t, double>> probs;
    for (std::size_t id = 0; id < row.size(); ++id)
        if (row[id] > 0.0)
            probs.emplace_back(static_cast<std::int32_t>(id), row[id]);
    return metrics::TokenDistribution::from_probs(std::move(probs), vocab_size);
}

// Splits text into `count` contiguous pieces (as even as possible; pieces may
// be empty when text is shorter than count) with byte offsets anchored at
// base_offset. Used to synthesize wire token/offset arrays.
inline std::vector<std::pair<std::string, std::size_t>> chunk_text(
    const std::string& text, std::size_t count, std::size_t base_offset) {
    std::vector<std::pair<std::string, std::size_t>> pieces;
    pieces.reserve(count);
    const std::size_t base = count ? text.size() / count : 0;
    const std::size_t rem = count ? text.size() % count : 0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t len = base + (i < rem ? 1 : 0);
        pieces.emplace_back(text.substr(pos, len), base_offset + pos);
        pos += len;
    }
    return pieces;
}

}  // namespace quorum::backend::detail
