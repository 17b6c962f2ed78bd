#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace easysec {

enum class ErrorCode {
  Parameter,      // argument outside its documented domain
  Input,          // malformed or inconsistent input data
  Frame,          // wire message with the wrong length
  MalformedField, // wire message with an out-of-range field
  Accounting,     // transcript cannot be accounted (incomplete run)
  ProtocolOrder,  // message arrived with no matching session state
  Configuration,  // bad topology, scenario or CLI configuration
  Refused,        // operation refused by policy (insecure link, expired PID)
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Parameter: return "parameter error";
    case ErrorCode::Input: return "input error";
    case ErrorCode::Frame: return "frame error";
    case ErrorCode::MalformedField: return "malformed-field error";
    case ErrorCode::Accounting: return "accounting error";
    case ErrorCode::ProtocolOrder: return "protocol-order error";
    case ErrorCode::Configuration: return "configuration error";
    case ErrorCode::Refused: return "refused";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace easysec
