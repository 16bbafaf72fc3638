#pragma once

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace tallfit {

// Error taxonomy mirrored by the C API status codes.
enum class ErrorKind {
  InvalidArgument,  // bad call / bad configuration
  Data,             // schema violations, parse failures, degenerate data
  Numeric,          // non-convergence, singular systems
  Io                // file system failures
};

class TfError : public std::runtime_error {
 public:
  TfError(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct UsageError : TfError {
  explicit UsageError(const std::string& m) : TfError(ErrorKind::InvalidArgument, m) {}
};
struct DataError : TfError {
  explicit DataError(const std::string& m) : TfError(ErrorKind::Data, m) {}
};
struct NumericError : TfError {
  explicit NumericError(const std::string& m) : TfError(ErrorKind::Numeric, m) {}
};
struct IoError : TfError {
  explicit IoError(const std::string& m) : TfError(ErrorKind::Io, m) {}
};

// Neumaier compensated accumulator. Long sums of likelihood terms must agree
// between the full and collapsed representations to ~1e-10 absolute, which
// plain recursive summation cannot guarantee at 10^5+ terms.
class NeumaierSum {
 public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

class StopWatch {
 public:
  StopWatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    auto d = std::chrono::steady_clock::now() - start_;
    return std::chrono::duration<double>(d).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace tallfit
