#pragma once

#include "gncde/types.hpp"

namespace gncde {

enum class Interp {
  NaturalCubic,
  Linear,
};

/// Second derivatives of the natural cubic spline through `knots` (one
/// column per channel) at unit knot spacing. First and last rows are zero.
Matrix natural_cubic_second_derivs(const Matrix& knots);

/// Continuous path through rows of a knot matrix, one channel per column,
/// with knot i at time t = i. Evaluations outside [0, n-1] extrapolate the
/// nearest segment's polynomial.
class ControlPath {
 public:
  ControlPath(Matrix knots, Interp scheme);

  Index n_knots() const { return knots_.rows(); }
  Index n_channels() const { return knots_.cols(); }
  Interp scheme() const { return scheme_; }

  Vector value(double t) const;
  /// Right-continuous at interior knots (uses the segment starting there).
  Vector derivative(double t) const;
  /// Derivative of the polynomial of a specific segment; lets an integrator
  /// that steps up to a knot keep using the segment it started in, which
  /// matters for the piecewise-linear scheme.
  Vector derivative_in(double t, Index segment) const;

  Index segment_of(double t) const;

 private:
  Matrix knots_;
  Matrix curvature_;  // second derivatives at knots (cubic scheme)
  Interp scheme_;
};

}  // namespace gncde
