#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cachelm {

/// Concatenated id sequence (sentences joined by </s>) and its truncated
/// BPTT length.
struct TokenStream {
  std::vector<int> ids;
  std::size_t chunk_len = 0;
};

struct Chunk {
  std::span<const int> inputs;
  std::span<const int> targets;
  std::size_t offset = 0;  // index of inputs[0] in the stream
};

/// Non-overlapping windows: chunk c reads inputs ids[c*len, (c+1)*len) and
/// targets shifted by one. A trailing remainder is dropped.
/// Throws IngestionError when not even one chunk fits.
std::vector<Chunk> chunk(std::span<const int> ids, std::size_t chunk_len);

/// A step-major block of `batch` parallel streams: element t * batch + b is
/// step t of stream b.
struct ChunkBatch {
  std::size_t steps = 0;
  std::size_t batch = 0;
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<std::size_t> stream_offsets;  // stream position of inputs at step 0, per stream

  int input(std::size_t t, std::size_t b) const { return inputs[t * batch + b]; }
  int target(std::size_t t, std::size_t b) const { return targets[t * batch + b]; }
};

/// Splits `ids` into `streams` equal contiguous segments and chunks each
/// segment. With one stream the chunks match chunk().
std::vector<ChunkBatch> batchify(std::span<const int> ids, std::size_t streams, std::size_t chunk_len);

}  // namespace cachelm
