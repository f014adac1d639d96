#pragma once

#include <filesystem>
#include <string>

#include "circuits/model.hpp"

namespace circuits {

/// CFM1 model file.
///
///   bytes 0..7   magic "CFMODEL1"
///   bytes 8..15  header length L, unsigned 64-bit little-endian
///   next L bytes UTF-8 JSON header: format version, layer specs, metadata
///                and a payload table (one entry per parameterized layer)
///   remainder    for each payload entry in order: weights then biases as
///                little-endian IEEE-754 binary32, row-major
///
/// Parameters are stored as float32; models built by this library keep
/// their parameters float32-representable, so save followed by load is
/// bit-identical.
inline constexpr char kModelMagic[] = "CFMODEL1";
inline constexpr int kModelFormatVersion = 1;

std::string serialize_model(const ModelGraph& model);
/// Throws FormatError (bad magic or header), VersionError, ShapeError
/// (payload table disagrees with the architecture) or TruncatedError.
ModelGraph deserialize_model(const std::string& bytes);

void save_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

/// SHA-256 of serialize_model(model).
std::string model_digest(const ModelGraph& model);

}  // namespace circuits
