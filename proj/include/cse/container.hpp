#pragma once

// Self-describing named-tensor container used for checkpoints and cluster
// banks. Layout (all integers little-endian):
//
//   bytes 0..7   magic "CSETNSR1"
//   bytes 8..11  u32 header length
//   header       UTF-8 JSON: {"format_version": 1,
//                             "meta": {...},
//                             "tensors": [{"name","shape","dtype","offset","nbytes"}]}
//   payload      raw float32 data, offsets relative to payload start
//
// Round-trips are bit-lossless; loading validates magic, version and bounds.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cse/tensor.hpp"

namespace cse {

constexpr int kContainerFormatVersion = 1;

struct NamedTensorFile {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& find(const std::string& name) const;
};

void save_named_tensors(const std::string& path, const NamedTensorFile& file);
NamedTensorFile load_named_tensors(const std::string& path);

// FNV-1a 64-bit, used for parameter and file digests.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::string file_digest(const std::string& path);

} // namespace cse
