#include "cachelm/corpus/stream.hpp"

#include <string>

#include "cachelm/numcore/errors.hpp"

namespace cachelm {

std::vector<Chunk> chunk(std::span<const int> ids, std::size_t chunk_len) {
  if (chunk_len == 0) throw ConfigurationError("chunk_len must be positive");
  if (ids.size() < chunk_len + 1) {
    throw IngestionError("stream of " + std::to_string(ids.size()) + " ids is shorter than one chunk of " +
                         std::to_string(chunk_len));
  }
  const std::size_t n_chunks = (ids.size() - 1) / chunk_len;
  std::vector<Chunk> out;
  out.reserve(n_chunks);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    const std::size_t begin = c * chunk_len;
    out.push_back({ids.subspan(begin, chunk_len), ids.subspan(begin + 1, chunk_len), begin});
  }
  return out;
}

std::vector<ChunkBatch> batchify(std::span<const int> ids, std::size_t streams, std::size_t chunk_len) {
  if (streams == 0) throw ConfigurationError("batch_streams must be positive");
  const std::size_t segment = ids.size() / streams;
  std::vector<std::vector<Chunk>> per_stream;
  per_stream.reserve(streams);
  for (std::size_t s = 0; s < streams; ++s) per_stream.push_back(chunk(ids.subspan(s * segment, segment), chunk_len));

  const std::size_t n_chunks = per_stream.front().size();
  std::vector<ChunkBatch> out(n_chunks);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    ChunkBatch& cb = out[c];
    cb.steps = chunk_len;
    cb.batch = streams;
    cb.inputs.resize(chunk_len * streams);
    cb.targets.resize(chunk_len * streams);
    for (std::size_t s = 0; s < streams; ++s) {
      const Chunk& ch = per_stream[s][c];
      cb.stream_offsets.push_back(s * segment + ch.offset);
      for (std::size_t t = 0; t < chunk_len; ++t) {
        cb.inputs[t * streams + s] = ch.inputs[t];
        cb.targets[t * streams + s] = ch.targets[t];
      }
    }
  }
  return out;
}

}  // namespace cachelm
