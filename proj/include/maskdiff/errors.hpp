#pragma once

#include <stdexcept>
#include <string>

namespace maskdiff {

// Error taxonomy for the whole library. The CLI maps each class to its own
// exit code, so library code should throw one of these rather than a bare
// std::runtime_error.

// Malformed or contradictory configuration (unknown keys, bad values).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Broken external inputs: word lists, vocab misses, checkpoint files, CSVs.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric domain problems: non-finite values, undefined metrics.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Precondition violations by the caller; these indicate bugs, not bad data.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {
[[noreturn]] void contract_fail(const std::string& msg, const char* file, int line);
}  // namespace detail

}  // namespace maskdiff

// Cheap precondition check used across the library; throws ContractError.
#define MD_CHECK(cond, msg)                                       \
  do {                                                            \
    if (!(cond)) ::maskdiff::detail::contract_fail((msg), __FILE__, __LINE__); \
  } while (0)
