#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace chsurgeon {

enum class ErrorCode {
  io_failure,
  invariant_violation,
  bad_magic,
  truncated_payload,
  dtype_unsupported,
  manifest_mismatch,
  count_out_of_range,
  index_out_of_range,
  duplicate_source,
  length_mismatch,
  dim_mismatch,
  empty_list,
  nonpositive_gt,
  kind_mismatch,
  weight_length_mismatch,
  protocol_violation,
  adapter_crash,
  timeout,
  spec_invalid,
  too_many_candidates,
  invalid_argument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io_failure: return "io-failure";
    case ErrorCode::invariant_violation: return "invariant-violation";
    case ErrorCode::bad_magic: return "bad-magic";
    case ErrorCode::truncated_payload: return "truncated-payload";
    case ErrorCode::dtype_unsupported: return "dtype-unsupported";
    case ErrorCode::manifest_mismatch: return "manifest-mismatch";
    case ErrorCode::count_out_of_range: return "count-out-of-range";
    case ErrorCode::index_out_of_range: return "index-out-of-range";
    case ErrorCode::duplicate_source: return "duplicate-source";
    case ErrorCode::length_mismatch: return "length-mismatch";
    case ErrorCode::dim_mismatch: return "dim-mismatch";
    case ErrorCode::empty_list: return "empty-list";
    case ErrorCode::nonpositive_gt: return "nonpositive-gt";
    case ErrorCode::kind_mismatch: return "kind-mismatch";
    case ErrorCode::weight_length_mismatch: return "weight-length-mismatch";
    case ErrorCode::protocol_violation: return "protocol-violation";
    case ErrorCode::adapter_crash: return "adapter-crash";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::spec_invalid: return "spec-invalid";
    case ErrorCode::too_many_candidates: return "too-many-candidates";
    case ErrorCode::invalid_argument: return "invalid-argument";
  }
  return "unknown";
}

// Every failure raised by the library carries one of the codes above so that
// callers (the CLI in particular) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace chsurgeon
