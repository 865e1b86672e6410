#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "prescribe/orf.h"

namespace prescribe::orf {

inline constexpr int kModelFormatVersion = 1;

std::string serialize_model(const OrfModel& model);
// Throws ModelFormatError on a malformed file or a fingerprint mismatch.
OrfModel parse_model(std::string_view text);

void save_model(const OrfModel& model, const std::filesystem::path& path);
// When `expected_dictionary_hash` is given, a model encoded with a different
// dictionary is rejected.
OrfModel load_model(const std::filesystem::path& path,
                    std::optional<std::uint64_t> expected_dictionary_hash = std::nullopt);

}  // namespace prescribe::orf
