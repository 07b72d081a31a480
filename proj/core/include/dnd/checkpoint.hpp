#pragma once

#include <filesystem>
#include <memory>

#include "dnd/config.hpp"
#include "dnd/model.hpp"

namespace dnd {

// File layout: 8-byte magic "DNDCKPT1", little-endian u32 format version,
// u64 header length, JSON header (config, step, tensor manifest, router
// thresholds and buffers), then every tensor's float64 values in manifest
// order.
inline constexpr char kCheckpointMagic[8] = {'D', 'N', 'D', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    DndConfig config;
    std::size_t step = 0;
    std::unique_ptr<TransformerModel> model;
};

void save_checkpoint(const std::filesystem::path& path, const TransformerModel& model, const DndConfig& cfg,
                     std::size_t step);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dnd
