#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsdet/tensor.hpp"

namespace capsdet {

// Serializable training state. Little-endian binary with magic "CAPSCKPT",
// a format version and a CRC32 trailer; any truncation or corruption fails
// the checksum before parsing, so a bad file never yields partial state.
struct Checkpoint {
    uint32_t version = 1;
    std::string model_kind;   // architecture tag
    std::string config_echo;  // flat key-value text that produced the run
    int64_t step = 0;
    uint64_t rng_key = 0;
    uint64_t rng_counter = 0;
    std::vector<std::string> names;  // parameter slots, canonical order
    std::vector<Tensor> values;
    std::vector<double> l2;
    std::vector<Tensor> adam_m;  // empty until the optimizer has stepped
    std::vector<Tensor> adam_v;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace capsdet
