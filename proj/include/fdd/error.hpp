#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fdd {

enum class ErrorCode
{
  empty_dataset,
  non_finite_value,
  invalid_design,
  insufficient_support,
  singular_fit,
  weak_first_stage,
  degenerate_denominator,
  rank_deficient,
  too_few_clusters,
  singular_bread,
  all_replicates_failed,
  missing_limits,
  precondition,
  invalid_spec,
  file_not_found,
  header_mismatch,
  parse_error,
  config_error
};

inline std::string_view to_string(ErrorCode code)
{
  switch (code) {
    case ErrorCode::empty_dataset: return "EMPTY_DATASET";
    case ErrorCode::non_finite_value: return "NON_FINITE_VALUE";
    case ErrorCode::invalid_design: return "INVALID_DESIGN";
    case ErrorCode::insufficient_support: return "INSUFFICIENT_SUPPORT";
    case ErrorCode::singular_fit: return "SINGULAR_FIT";
    case ErrorCode::weak_first_stage: return "WEAK_FIRST_STAGE";
    case ErrorCode::degenerate_denominator: return "DEGENERATE_DENOMINATOR";
    case ErrorCode::rank_deficient: return "RANK_DEFICIENT";
    case ErrorCode::too_few_clusters: return "TOO_FEW_CLUSTERS";
    case ErrorCode::singular_bread: return "SINGULAR_BREAD";
    case ErrorCode::all_replicates_failed: return "ALL_REPLICATES_FAILED";
    case ErrorCode::missing_limits: return "MISSING_LIMITS";
    case ErrorCode::precondition: return "PRECONDITION";
    case ErrorCode::invalid_spec: return "INVALID_SPEC";
    case ErrorCode::file_not_found: return "FILE_NOT_FOUND";
    case ErrorCode::header_mismatch: return "HEADER_MISMATCH";
    case ErrorCode::parse_error: return "PARSE_ERROR";
    case ErrorCode::config_error: return "CONFIG_ERROR";
  }
  return "UNKNOWN";
}

//! Library error: a machine-readable code, an optional context tag (a row
//! number, a "cohort/side" cell, a column name) and a human message.
class Error : public std::runtime_error
{
public:
  Error(ErrorCode code, const std::string& message, std::string context = {})
    : std::runtime_error(message)
    , code_(code)
    , context_(std::move(context))
  {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }

private:
  ErrorCode code_;
  std::string context_;
};

} // namespace fdd
