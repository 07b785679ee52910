#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace replin {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Arr = Eigen::ArrayXd;

// All recoverable failures are reported through this type. `token()` is a
// stable machine-checkable identifier; what() additionally carries detail.
class Error : public std::runtime_error {
 public:
  Error(std::string token, const std::string& detail = "")
      : std::runtime_error(detail.empty() ? token : token + ": " + detail),
        token_(std::move(token)) {}

  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

}  // namespace replin
