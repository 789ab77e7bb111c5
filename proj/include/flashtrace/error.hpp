#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flashtrace {

enum class Errc {
  invalid_argument,
  out_of_range,
  non_finite,
  shape_mismatch,
  degenerate_target,
  no_input_mass,
  undefined_alignment,
  context_too_short,
  infeasible,
  bad_magic,
  unsupported_version,
  truncated,
  io_failure,
  bad_config,
  working_set_exceeded,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind rather than the message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), detail_(what) {}

  Errc code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace flashtrace
