#pragma once

#include <string>

#include "dmad/tensor.hpp"

namespace dmad {

/// Encode a [1 x h x w] or [h x w] image with values in [0, 1] as binary PGM
/// (P5, 8-bit, maxval 255). Round-trip error is at most 1/255 per pixel.
std::string save_pgm(const Tensor& image);

/// Decode binary P5 bytes into a [1 x h x w] tensor in [0, 1]. Malformed
/// headers and truncated payloads raise ParseError naming the byte offset.
Tensor load_pgm(const std::string& bytes);

void write_pgm_file(const std::string& path, const Tensor& image);
Tensor read_pgm_file(const std::string& path);

} // namespace dmad
