#pragma once

#include <stdexcept>
#include <string>

namespace relprox {

// Stable error categories; the CLI prints err::name(kind) so scripts can
// match on it.
enum class ErrKind {
    shape_mismatch,
    invalid_argument,
    non_finite,
    stale_tape,
    non_scalar_root,
    zero_vector,
    no_salient_region,
    format_version,
    checksum,
    truncated,
    io,
    config_unknown_key,
    config_bad_value,
    config_mismatch,
    divergence,
};

namespace err {
inline const char* name(ErrKind k) {
    switch (k) {
        case ErrKind::shape_mismatch: return "shape_mismatch";
        case ErrKind::invalid_argument: return "invalid_argument";
        case ErrKind::non_finite: return "non_finite";
        case ErrKind::stale_tape: return "stale_tape";
        case ErrKind::non_scalar_root: return "non_scalar_root";
        case ErrKind::zero_vector: return "zero_vector";
        case ErrKind::no_salient_region: return "no_salient_region";
        case ErrKind::format_version: return "format_version";
        case ErrKind::checksum: return "checksum";
        case ErrKind::truncated: return "truncated";
        case ErrKind::io: return "io";
        case ErrKind::config_unknown_key: return "config_unknown_key";
        case ErrKind::config_bad_value: return "config_bad_value";
        case ErrKind::config_mismatch: return "config_mismatch";
        case ErrKind::divergence: return "divergence";
    }
    return "unknown";
}
}  // namespace err

class Error : public std::runtime_error {
  public:
    Error(ErrKind kind, const std::string& what)
        : std::runtime_error(std::string(err::name(kind)) + ": " + what), kind_(kind) {}
    ErrKind kind() const { return kind_; }

  private:
    ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace relprox
