#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flygm {

// Bad input data or files: CLI maps these to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad invocation/config: CLI maps these to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class FlowClass : uint8_t { Afferent = 0, Intrinsic = 1, Efferent = 2 };

enum class NtType : uint8_t {
  ACH = 0,
  GLU = 1,
  ASP = 2,
  HIS = 3,
  GABA = 4,
  GLY = 5,
  UNKNOWN = 6,
};

inline std::string_view to_string(FlowClass f) {
  switch (f) {
    case FlowClass::Afferent: return "afferent";
    case FlowClass::Intrinsic: return "intrinsic";
    case FlowClass::Efferent: return "efferent";
  }
  return "?";
}

inline std::string_view to_string(NtType t) {
  switch (t) {
    case NtType::ACH: return "ACH";
    case NtType::GLU: return "GLU";
    case NtType::ASP: return "ASP";
    case NtType::HIS: return "HIS";
    case NtType::GABA: return "GABA";
    case NtType::GLY: return "GLY";
    case NtType::UNKNOWN: return "UNKNOWN";
  }
  return "?";
}

// excitatory: ACH, GLU, ASP, HIS; inhibitory: GABA, GLY.
// UNKNOWN defaults to excitatory unless configured otherwise.
inline bool is_excitatory(NtType t, bool unknown_is_excitatory = true) {
  switch (t) {
    case NtType::GABA:
    case NtType::GLY: return false;
    case NtType::UNKNOWN: return unknown_is_excitatory;
    default: return true;
  }
}

}  // namespace flygm
