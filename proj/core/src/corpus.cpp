#include "dnd/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "dnd/ops.hpp"

namespace dnd {

std::vector<std::int64_t> tokenize(std::string_view text) {
    std::vector<std::int64_t> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(c);
    return ids;
}

std::vector<std::int64_t> ingest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read corpus file " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error while reading corpus file " + path.string());
    return tokenize(bytes);
}

std::string token_display(std::int64_t id) {
    if (id == kBosToken) return "<bos>";
    if (id == kEosToken) return "<eos>";
    if (id >= 0x20 && id < 0x7f) return std::string(1, static_cast<char>(id));
    if (id == '\n') return "\\n";
    if (id == '\t') return "\\t";
    char buf[8];
    std::snprintf(buf, sizeof(buf), "\\x%02x", static_cast<unsigned>(id & 0xff));
    return buf;
}

std::size_t Batch::target_count() const {
    return static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(), [](auto t) { return t != kIgnoreIndex; }));
}

WindowedCorpus::WindowedCorpus(std::vector<std::int64_t> tokens, std::size_t seq_len)
    : tokens_(std::move(tokens)), seq_len_(seq_len) {
    if (seq_len_ < 2) throw ContractError("corpus windows need seq_len >= 2");
}

std::span<const std::int64_t> WindowedCorpus::window(std::size_t i) const {
    if (i >= window_count()) throw IndexError("window " + std::to_string(i) + " out of range");
    return std::span<const std::int64_t>(tokens_).subspan(i * seq_len_, seq_len_);
}

Batch WindowedCorpus::make_batch(std::span<const std::size_t> window_ids) const {
    Batch b;
    b.batch = window_ids.size();
    b.seq_len = seq_len_;
    b.tokens.reserve(b.batch * seq_len_);
    b.targets.reserve(b.batch * seq_len_);
    for (auto id : window_ids) {
        auto w = window(id);
        b.tokens.insert(b.tokens.end(), w.begin(), w.end());
        b.targets.insert(b.targets.end(), w.begin() + 1, w.end());
        b.targets.push_back(kIgnoreIndex);
    }
    return b;
}

Batch WindowedCorpus::sample(std::size_t batch, std::mt19937_64& rng) const {
    if (window_count() == 0) throw ContractError("corpus has no complete window of " + std::to_string(seq_len_) + " tokens");
    std::uniform_int_distribution<std::size_t> pick(0, window_count() - 1);
    std::vector<std::size_t> ids(batch);
    for (auto& id : ids) id = pick(rng);
    return make_batch(ids);
}

}  // namespace dnd
