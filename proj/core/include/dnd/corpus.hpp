#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnd {

inline constexpr std::int64_t kBosToken = 256;
inline constexpr std::int64_t kEosToken = 257;
inline constexpr std::size_t kByteVocab = 258;

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Byte-level ids, one per input byte.
std::vector<std::int64_t> tokenize(std::string_view text);
std::vector<std::int64_t> ingest(const std::filesystem::path& path);

// Renders one byte id for display (printable ASCII verbatim, the rest escaped).
std::string token_display(std::int64_t id);

// Row-major [batch, seq_len] inputs with next-token targets inside each
// window; the last position of a window has no target.
struct Batch {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<std::int64_t> tokens;
    std::vector<std::int64_t> targets;

    std::size_t target_count() const;
};

// Non-overlapping seq_len windows over a token stream; a trailing partial
// window is dropped.
class WindowedCorpus {
  public:
    WindowedCorpus(std::vector<std::int64_t> tokens, std::size_t seq_len);

    std::size_t window_count() const { return tokens_.size() / seq_len_; }
    std::size_t seq_len() const { return seq_len_; }
    std::span<const std::int64_t> window(std::size_t i) const;
    std::span<const std::int64_t> tokens() const { return tokens_; }

    Batch make_batch(std::span<const std::size_t> window_ids) const;
    // Uniform draw of `batch` windows.
    Batch sample(std::size_t batch, std::mt19937_64& rng) const;

  private:
    std::vector<std::int64_t> tokens_;
    std::size_t seq_len_;
};

}  // namespace dnd
