#include "flashtrace/error.hpp"

namespace flashtrace {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid argument";
    case Errc::out_of_range: return "index out of range";
    case Errc::non_finite: return "non-finite value";
    case Errc::shape_mismatch: return "shape mismatch";
    case Errc::degenerate_target: return "degenerate target";
    case Errc::no_input_mass: return "no input mass";
    case Errc::undefined_alignment: return "undefined alignment";
    case Errc::context_too_short: return "context too short for top-10%";
    case Errc::infeasible: return "infeasible";
    case Errc::bad_magic: return "bad magic";
    case Errc::unsupported_version: return "unsupported version";
    case Errc::truncated: return "truncated";
    case Errc::io_failure: return "i/o failure";
    case Errc::bad_config: return "bad config";
    case Errc::working_set_exceeded: return "working set exceeded";
  }
  return "unknown error";
}

}  // namespace flashtrace
