#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clbruno/errors.hpp"
#include "clbruno/model.hpp"

namespace clbruno {

inline constexpr char kModelMagic[4] = {'C', 'L', 'B', '1'};
inline constexpr std::uint32_t kModelFormatVersion = 1;
/// magic + version + body length
inline constexpr std::size_t kModelPreambleSize = 16;
inline constexpr std::size_t kModelChecksumSize = 8;

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize(const ClBrunoModel& model);
/// Validates magic, length, checksum and version in that order before
/// reading any field.
ClBrunoModel deserialize(std::span<const std::uint8_t> bytes);

/// Writes to a temporary sibling and renames it over `path`.
void save_model(const ClBrunoModel& model, const std::string& path);
ClBrunoModel load_model(const std::string& path);

/// Checksum of the serialized model; changes whenever any stored value does.
std::uint64_t model_fingerprint(const ClBrunoModel& model);

}  // namespace clbruno
