#include "gncde/spline.hpp"

#include <algorithm>
#include <cmath>

namespace gncde {

Matrix natural_cubic_second_derivs(const Matrix& knots) {
  const Index n = knots.rows();
  const Index c = knots.cols();
  Matrix m = Matrix::Zero(n, c);
  const Index interior = n - 2;
  if (interior <= 0) return m;

  // Tridiagonal system (sub/sup 1, diagonal 4) at unit spacing, solved with
  // the Thomas sweep; right-hand side is six times the second difference.
  Matrix rhs(interior, c);
  for (Index i = 0; i < interior; ++i) {
    rhs.row(i) = 6.0 * (knots.row(i + 2) - 2.0 * knots.row(i + 1) + knots.row(i));
  }
  Vector sup(interior);
  double pivot = 4.0;
  sup(0) = 1.0 / pivot;
  rhs.row(0) /= pivot;
  for (Index i = 1; i < interior; ++i) {
    pivot = 4.0 - sup(i - 1);
    sup(i) = 1.0 / pivot;
    rhs.row(i) = (rhs.row(i) - rhs.row(i - 1)) / pivot;
  }
  m.row(interior) = rhs.row(interior - 1);
  for (Index i = interior - 2; i >= 0; --i) {
    m.row(i + 1) = rhs.row(i) - sup(i) * m.row(i + 2);
  }
  return m;
}

ControlPath::ControlPath(Matrix knots, Interp scheme) : knots_(std::move(knots)), scheme_(scheme) {
  if (knots_.rows() < 2) {
    throw ValidationError("a control path needs at least two knots, got " +
                          std::to_string(knots_.rows()));
  }
  if (knots_.cols() < 1) throw ValidationError("a control path needs at least one channel");
  if (!knots_.allFinite()) throw ValidationError("control path knots must all be finite");
  if (scheme_ == Interp::NaturalCubic) {
    curvature_ = natural_cubic_second_derivs(knots_);
  }
}

Index ControlPath::segment_of(double t) const {
  if (std::isnan(t)) throw ValidationError("control path evaluated at NaN");
  const auto raw = static_cast<Index>(std::floor(t));
  return std::clamp<Index>(raw, 0, knots_.rows() - 2);
}

Vector ControlPath::value(double t) const {
  const Index i = segment_of(t);
  const double s = t - static_cast<double>(i);
  const double u = 1.0 - s;
  Vector out = u * knots_.row(i).transpose() + s * knots_.row(i + 1).transpose();
  if (scheme_ == Interp::NaturalCubic) {
    out += ((u * u * u - u) / 6.0) * curvature_.row(i).transpose() +
           ((s * s * s - s) / 6.0) * curvature_.row(i + 1).transpose();
  }
  return out;
}

Vector ControlPath::derivative(double t) const { return derivative_in(t, segment_of(t)); }

Vector ControlPath::derivative_in(double t, Index segment) const {
  if (std::isnan(t)) throw ValidationError("control path evaluated at NaN");
  if (segment < 0 || segment > knots_.rows() - 2) {
    throw ValidationError("control path segment " + std::to_string(segment) +
                          " is out of range for " + std::to_string(knots_.rows()) + " knots");
  }
  Vector out = (knots_.row(segment + 1) - knots_.row(segment)).transpose();
  if (scheme_ == Interp::NaturalCubic) {
    const double s = t - static_cast<double>(segment);
    const double u = 1.0 - s;
    out += ((1.0 - 3.0 * u * u) / 6.0) * curvature_.row(segment).transpose() +
           ((3.0 * s * s - 1.0) / 6.0) * curvature_.row(segment + 1).transpose();
  }
  return out;
}

}  // namespace gncde
