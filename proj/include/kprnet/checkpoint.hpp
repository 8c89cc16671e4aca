#ifndef KPRNET_CHECKPOINT_HPP
#define KPRNET_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kprnet/tensor.hpp"

namespace kpr {

// KPRW container: magic "KPRW", u32 LE version=1, u32 tensor count, then per
// tensor: u16 name length, name bytes, u8 rank, u32 dims, float32 LE data.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::uint8_t* bytes, std::size_t len);

void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace kpr

#endif
