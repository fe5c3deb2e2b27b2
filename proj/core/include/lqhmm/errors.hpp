#ifndef LQHMM_ERRORS_HPP
#define LQHMM_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace lqhmm {

/// Parameter or model-spec value outside its admissible range.
class InvalidParameterError : public std::invalid_argument {
 public:
  explicit InvalidParameterError(const std::string& msg)
      : std::invalid_argument(msg) {}
};

/// Malformed input data (CSV parse failures, monotonicity violations).
class DataFormatError : public std::runtime_error {
 public:
  explicit DataFormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite intermediate or zero normalizer; carries the subject index
/// when the failure is attributable to one subject (-1 otherwise).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg, int subject_index = -1)
      : std::runtime_error(msg), subject_index(subject_index) {}
  int subject_index;
};

/// Fit collapsed to an exact interpolation (zero ALD scale).
class DegenerateFitError : public std::runtime_error {
 public:
  explicit DegenerateFitError(const std::string& msg)
      : std::runtime_error(msg) {}
};

/// Rank-deficient regression design; names the collinear columns.
class IdentifiabilityError : public std::runtime_error {
 public:
  IdentifiabilityError(const std::string& msg, std::vector<std::string> columns)
      : std::runtime_error(msg), columns(std::move(columns)) {}
  std::vector<std::string> columns;
};

/// No EM start converged; carries the log-likelihood trace of every start.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& msg,
                   std::vector<std::vector<double>> traces)
      : std::runtime_error(msg), traces(std::move(traces)) {}
  std::vector<std::vector<double>> traces;
};

}  // namespace lqhmm

#endif
