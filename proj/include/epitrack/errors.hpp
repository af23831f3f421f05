#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace epitrack {

// Stable error codes shared by the library, the CLI and the HTTP API.
enum class Errc {
  bad_request,
  conflicting_duplicate,
  duplicate_report,
  illegal_transition,
  unknown_person,
  no_patients,
  empty_window,
  non_finite_state,
  unsorted_input,
};

constexpr std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::bad_request: return "bad_request";
    case Errc::conflicting_duplicate: return "conflicting_duplicate";
    case Errc::duplicate_report: return "duplicate_report";
    case Errc::illegal_transition: return "illegal_transition";
    case Errc::unknown_person: return "unknown_person";
    case Errc::no_patients: return "no_patients";
    case Errc::empty_window: return "empty_window";
    case Errc::non_finite_state: return "non_finite_state";
    case Errc::unsorted_input: return "unsorted_input";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool ok, Errc code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

}  // namespace epitrack
