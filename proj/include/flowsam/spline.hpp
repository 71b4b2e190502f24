#pragma once

#include <Eigen/Core>

namespace flowsam {

// Monotone rational-quadratic spline on [-tail, tail] with identity
// unit-slope extensions outside. A spline with K bins is decoded from a raw
// parameter block of length 3K-1:
//   raw[0      .. K-2   ]  x-side logits for interior knot positions
//   raw[K-1    .. 2K-3  ]  y-side logits for interior knot positions
//   raw[2K-2   .. 3K-2  ]  K+1 knot derivatives through softplus
// Knot positions come from softmax fractions (one logit pinned to zero) with
// a minimum bin fraction, so boundary knots sit exactly at (+-tail, +-tail).
struct SplineSpec {
  int knots = 9;             // K = number of bins
  double tail = 5.0;         // half-width of the spline interval
  double min_frac = 1e-3;    // minimum bin fraction
  double deriv_floor = 1e-3; // additive floor after softplus

  int raw_size() const { return 3 * knots - 1; }
};

struct DecodedSpline {
  Eigen::ArrayXd xk, yk;  // K+1 knot coordinates
  Eigen::ArrayXd dk;      // K+1 positive derivatives
  Eigen::ArrayXd px, py;  // K softmax fractions (pre min-frac), kept for backprop
};

DecodedSpline decode_spline(const SplineSpec& spec, const double* raw);

// Raw block that decodes to (approximately) the identity on [-tail, tail].
Eigen::VectorXd identity_raw(const SplineSpec& spec);

// Evaluates the transform at u. Returns y; writes the slope and the active
// bin (-1 when u lies in a tail).
double spline_forward(const DecodedSpline& dec, double u, double* slope,
                      int* bin);

// Inverse transform (exact, via the quadratic formula inside the bin).
double spline_inverse(const DecodedSpline& dec, double y);

// Accumulates d(gnll * (0.5 y^2 - ln slope))/d raw into g_raw (length 3K-1)
// for a sample at u falling in `bin`. No-op for tail samples.
void spline_nll_backward(const SplineSpec& spec, const double* raw,
                         const DecodedSpline& dec, double u, int bin,
                         double gnll, double* g_raw);

}  // namespace flowsam
