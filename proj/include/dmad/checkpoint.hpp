#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmad/nn.hpp"
#include "dmad/tensor.hpp"

namespace dmad {

/// DMAD-CKPT v1: a "DMAD-CKPT v1" header line, then per-parameter records of
///   <name>\n
///   <rank> <extent...>\n
///   raw little-endian float32 payload (4 * numel bytes)
/// Round-trips are bit-exact.
void write_checkpoint(const std::string& path, const NamedParams<float>& params);

std::map<std::string, Tensor> read_checkpoint(const std::string& path);

/// Copy checkpoint tensors into the given parameters by name. Missing names
/// and shape mismatches raise DataError.
void load_into(const std::map<std::string, Tensor>& ckpt, const NamedParams<float>& params);

/// FNV-1a over the raw float bytes, for frozen-weight audits.
std::uint64_t tensor_bytes_hash(const Tensor& t);
std::uint64_t params_hash(const NamedParams<float>& params, bool trainable_only = false);

} // namespace dmad
