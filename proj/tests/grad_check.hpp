#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "usbl/model.hpp"

namespace gradcheck {

struct Result {
  double relative_error = 0.0;  // |g - fd| / |fd|
  double max_abs_error = 0.0;
};

/// Central differences of the log posterior, step 1e-5 * max(1, |x_i|).
inline Result compare(const usbl::Posterior& post, const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  post(x, g);
  Eigen::VectorXd fd(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(x(i)));
    Eigen::VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    fd(i) = (post(a) - post(b)) / (a(i) - b(i));
  }
  Result r;
  r.max_abs_error = (g - fd).cwiseAbs().maxCoeff();
  r.relative_error = (g - fd).norm() / std::max(fd.norm(), 1e-300);
  return r;
}

}  // namespace gradcheck
