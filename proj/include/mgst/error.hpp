#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "mgst/real.hpp"

namespace mgst {
inline namespace MGST_ABI {

enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kBadMagic,
  kTruncatedPayload,
  kExtentMismatch,
  kVersionMismatch,
  kPresetMismatch,
  kNonFinite,
  kNonDeterministic,
  kConfig,
  kIo,
  kEmptyDataset,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace MGST_ABI
}  // namespace mgst
