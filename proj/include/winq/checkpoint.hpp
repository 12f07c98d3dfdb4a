#pragma once

#include <string>

#include "winq/model.hpp"
#include "winq/train.hpp"

namespace winq {

// On-disk training state. Format: magic "WINQCKPT", u32 format version, a
// JSON metadata block (configs, step, seeds, quantizer specs, entry table),
// named little-endian float64 arrays (params, optimizer moments), and a
// trailing content digest. Save/load round-trips bit-exactly.
struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    ParamVector params;
    OptimizerState opt;

    // Layout reconstructed from the entry table + train config.
    QuantLayout layout() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);  // IoError on magic/digest mismatch

}  // namespace winq
