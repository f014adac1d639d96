#pragma once

#include <span>
#include <string>
#include <string_view>

#include "circuits/tensor.hpp"

namespace circuits {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);

/// Digest of an ordered image set: shapes and raw 64-bit values in order.
std::string image_set_digest(std::span<const Tensor> images);

}  // namespace circuits
