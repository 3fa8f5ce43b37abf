#pragma once

#include <string>

#include "petlab/encoder.hpp"

namespace petlab::ckpt {

// Binary snapshot of a model: magic "PTLB", format version, a JSON header
// (encoder config, attached strategy, tensor directory) and row-major float64
// tensor payloads in directory order. Load rebuilds the model, re-attaches
// the strategy and overwrites every tensor, so save -> load round-trips
// values bitwise.
void save_checkpoint(const DualEncoderModel& model, const std::string& path);
DualEncoderModel load_checkpoint(const std::string& path);

} // namespace petlab::ckpt
