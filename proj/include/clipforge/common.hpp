#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace clipforge {

inline constexpr double kPi = 3.14159265358979323846;

// All recoverable failures surface as clipforge::Error. The CLI maps the two
// subclasses onto its exit codes (ConfigError -> 1, RuntimeError -> 2).
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct RuntimeError : Error {
  explicit RuntimeError(const std::string& msg) : Error(msg) {}
};

inline std::string strformat(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  char buf[1024];
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return std::string(buf);
}

// Deterministic float text form: shortest representation that round-trips a
// double (%.17g is exact but noisy; try increasing precision until it parses
// back bit-identically).
inline std::string format_double(double v) {
  char buf[64];
  for (int prec = 9; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return std::string(buf);
}

template <typename Cond>
inline void require(const Cond& cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Log threshold comes from the CLIPFORGE_LOG environment variable
// (error|warn|info|debug); unset defaults to warn so library users and the
// test suite stay quiet while the CLI can opt into progress lines.
inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("CLIPFORGE_LOG");
    if (env == nullptr) return LogLevel::kWarn;
    std::string s(env);
    if (s == "error") return LogLevel::kError;
    if (s == "warn") return LogLevel::kWarn;
    if (s == "info") return LogLevel::kInfo;
    if (s == "debug") return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return level;
}

inline void log_line(LogLevel level, const std::string& msg) {
  if (level > log_level()) return;
  const char* tag = level == LogLevel::kError  ? "error"
                    : level == LogLevel::kWarn ? "warn"
                    : level == LogLevel::kInfo ? "info"
                                               : "debug";
  std::fprintf(stderr, "[clipforge %s] %s\n", tag, msg.c_str());
}

inline void log_info(const std::string& msg) { log_line(LogLevel::kInfo, msg); }
inline void log_debug(const std::string& msg) { log_line(LogLevel::kDebug, msg); }

// Little-endian binary helpers for the CLPF/CLPV file formats. Explicit byte
// packing keeps the formats portable regardless of host endianness.
inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw RuntimeError(strformat("truncated file while reading %s", what));
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v & 0xffffffffu));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t lo = read_u32(is, what);
  std::uint64_t hi = read_u32(is, what);
  return lo | (hi << 32);
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline float read_f32(std::istream& is, const char* what) {
  std::uint32_t bits = read_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

inline double read_f64(std::istream& is, const char* what) {
  std::uint64_t bits = read_u64(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace clipforge
