// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace sdflow {

// Mirrors the integer codes exported through the C API.
enum class ErrorCode : int {
  kOk = 0,
  kDimension = 1,
  kParameter = 2,
  kConfiguration = 3,
  kData = 4,
  kContract = 5,
  kLoad = 6,
  kDivergence = 7,
  kIo = 8,
  kInternal = 99,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define SDFLOW_DEFINE_ERROR(Name, Code)                                 \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  };

SDFLOW_DEFINE_ERROR(DimensionError, kDimension)
SDFLOW_DEFINE_ERROR(ParameterError, kParameter)
SDFLOW_DEFINE_ERROR(ConfigError, kConfiguration)
SDFLOW_DEFINE_ERROR(DataError, kData)
SDFLOW_DEFINE_ERROR(ContractError, kContract)
SDFLOW_DEFINE_ERROR(LoadError, kLoad)
SDFLOW_DEFINE_ERROR(DivergenceError, kDivergence)
SDFLOW_DEFINE_ERROR(IoError, kIo)

#undef SDFLOW_DEFINE_ERROR

}  // namespace sdflow
