#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace rkpinn {

/// 17 significant digits with a '.' decimal separator, independent of the
/// global locale.
[[nodiscard]] std::string format_double(double value);

void write_text_file(const std::filesystem::path& path, std::string_view content);
[[nodiscard]] std::string read_text_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
[[nodiscard]] std::string fnv1a_hex(std::string_view data);

}  // namespace rkpinn
