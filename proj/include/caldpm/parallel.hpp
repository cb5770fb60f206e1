#pragma once

#include <cstdint>
#include <functional>

#include <Eigen/Core>

namespace caldpm::parallel {

/// Samples per work chunk. Chunk boundaries (and therefore RNG streams) depend
/// only on this constant, never on the worker count.
inline constexpr Eigen::Index kChunk = 2048;

void set_workers(int workers);
int workers();

inline Eigen::Index chunk_count(Eigen::Index n, Eigen::Index chunk = kChunk) {
  return (n + chunk - 1) / chunk;
}

/// Runs fn(chunk_index, begin, end) for every chunk of [0, n). Chunks may run
/// concurrently and in any order; fn must only write chunk-private output.
void for_chunks(Eigen::Index n, const std::function<void(Eigen::Index, Eigen::Index, Eigen::Index)>& fn,
                Eigen::Index chunk = kChunk);

}  // namespace caldpm::parallel
