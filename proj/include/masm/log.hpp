#pragma once

#include <optional>
#include <string>

namespace masm {

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

/// Maps "error"/"warn"/"info"/"debug"; anything else is nullopt.
std::optional<LogLevel> parse_log_level(const std::string& name);

/// Process-wide threshold; messages above it are dropped. Defaults to info.
void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes "[level] message" to stderr when level passes the threshold.
/// Diagnostics never go to the run artifacts, which must stay byte-stable.
void log_line(LogLevel level, const std::string& message);

inline void log_error(const std::string& m) { log_line(LogLevel::kError, m); }
inline void log_warn(const std::string& m) { log_line(LogLevel::kWarn, m); }
inline void log_info(const std::string& m) { log_line(LogLevel::kInfo, m); }
inline void log_debug(const std::string& m) { log_line(LogLevel::kDebug, m); }

}  // namespace masm
