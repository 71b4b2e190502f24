#include "flowsam/spline.hpp"

#include <cmath>

namespace flowsam {

namespace {

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// softmax over (logits[0..k-2], 0) with max subtraction
Eigen::ArrayXd pinned_softmax(const double* logits, int k) {
  Eigen::ArrayXd e(k);
  double mx = 0.0;
  for (int i = 0; i + 1 < k; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    double l = (i + 1 < k) ? logits[i] : 0.0;
    e[i] = std::exp(l - mx);
    sum += e[i];
  }
  return e / sum;
}

}  // namespace

DecodedSpline decode_spline(const SplineSpec& spec, const double* raw) {
  const int k = spec.knots;
  const double c = 1.0 - k * spec.min_frac;
  const double span = 2.0 * spec.tail;

  DecodedSpline dec;
  dec.px = pinned_softmax(raw, k);
  dec.py = pinned_softmax(raw + (k - 1), k);
  dec.xk.resize(k + 1);
  dec.yk.resize(k + 1);
  dec.dk.resize(k + 1);
  double x = -spec.tail, y = -spec.tail;
  for (int i = 0; i < k; ++i) {
    dec.xk[i] = x;
    dec.yk[i] = y;
    x += span * (spec.min_frac + c * dec.px[i]);
    y += span * (spec.min_frac + c * dec.py[i]);
  }
  dec.xk[k] = spec.tail;
  dec.yk[k] = spec.tail;
  for (int i = 0; i <= k; ++i)
    dec.dk[i] = softplus(raw[2 * k - 2 + i]) + spec.deriv_floor;
  return dec;
}

Eigen::VectorXd identity_raw(const SplineSpec& spec) {
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(spec.raw_size());
  // softplus(r) + floor = 1  =>  r = log(exp(1 - floor) - 1)
  double r = std::log(std::expm1(1.0 - spec.deriv_floor));
  for (int i = 0; i <= spec.knots; ++i) raw[2 * spec.knots - 2 + i] = r;
  return raw;
}

double spline_forward(const DecodedSpline& dec, double u, double* slope,
                      int* bin) {
  const int k = static_cast<int>(dec.xk.size()) - 1;
  if (u <= dec.xk[0] || u >= dec.xk[k]) {
    if (slope) *slope = 1.0;
    if (bin) *bin = -1;
    return u;
  }
  int lo = 0, hi = k;  // invariant: xk[lo] <= u < xk[hi]
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    (u < dec.xk[mid] ? hi : lo) = mid;
  }
  const double w = dec.xk[lo + 1] - dec.xk[lo];
  const double h = dec.yk[lo + 1] - dec.yk[lo];
  const double s = h / w;
  const double d0 = dec.dk[lo], d1 = dec.dk[lo + 1];
  const double xi = (u - dec.xk[lo]) / w;
  const double t = xi * (1.0 - xi);
  const double den = s + (d0 + d1 - 2.0 * s) * t;
  const double y = dec.yk[lo] + h * (s * xi * xi + d0 * t) / den;
  if (slope) {
    const double ns =
        d1 * xi * xi + 2.0 * s * t + d0 * (1.0 - xi) * (1.0 - xi);
    *slope = s * s * ns / (den * den);
  }
  if (bin) *bin = lo;
  return y;
}

double spline_inverse(const DecodedSpline& dec, double y) {
  const int k = static_cast<int>(dec.yk.size()) - 1;
  if (y <= dec.yk[0] || y >= dec.yk[k]) return y;
  int lo = 0, hi = k;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    (y < dec.yk[mid] ? hi : lo) = mid;
  }
  const double w = dec.xk[lo + 1] - dec.xk[lo];
  const double h = dec.yk[lo + 1] - dec.yk[lo];
  const double s = h / w;
  const double d0 = dec.dk[lo], d1 = dec.dk[lo + 1];
  const double dy = y - dec.yk[lo];
  const double q = d0 + d1 - 2.0 * s;
  const double a = h * (s - d0) + dy * q;
  const double b = h * d0 - dy * q;
  const double c = -s * dy;
  // monotone bin => the stable root lies in [0, 1]
  const double disc = std::sqrt(std::max(0.0, b * b - 4.0 * a * c));
  const double xi = 2.0 * c / (-b - disc);
  return dec.xk[lo] + xi * w;
}

void spline_nll_backward(const SplineSpec& spec, const double* raw,
                         const DecodedSpline& dec, double u, int bin,
                         double gnll, double* g_raw) {
  if (bin < 0) return;
  const int k = spec.knots;
  const double span = 2.0 * spec.tail;
  const double c = 1.0 - k * spec.min_frac;

  const double w = dec.xk[bin + 1] - dec.xk[bin];
  const double h = dec.yk[bin + 1] - dec.yk[bin];
  const double s = h / w;
  const double d0 = dec.dk[bin], d1 = dec.dk[bin + 1];
  const double xi = (u - dec.xk[bin]) / w;
  const double t = xi * (1.0 - xi);
  const double den = s + (d0 + d1 - 2.0 * s) * t;
  const double ny = s * xi * xi + d0 * t;
  const double ns = d1 * xi * xi + 2.0 * s * t + d0 * (1.0 - xi) * (1.0 - xi);
  const double y = dec.yk[bin] + h * ny / den;

  // nll = 0.5 y^2 - ln slope, slope = s^2 ns / den^2
  const double gy = gnll * y;
  const double glns = -gnll;

  double g_y0 = gy;                       // knot coordinate Y_bin
  double g_h = gy * ny / den;             // direct height term of y
  const double g_ny = gy * h / den;
  double g_den = -gy * h * ny / (den * den) - 2.0 * glns / den;
  const double g_ns = glns / ns;
  double g_s = glns * 2.0 / s;

  const double om = 1.0 - xi;
  double g_xi = g_ny * (2.0 * s * xi + d0 * (1.0 - 2.0 * xi)) +
                g_ns * (2.0 * d1 * xi + 2.0 * s * (1.0 - 2.0 * xi) -
                        2.0 * d0 * om) +
                g_den * (d0 + d1 - 2.0 * s) * (1.0 - 2.0 * xi);
  g_s += g_ny * xi * xi + g_ns * 2.0 * t + g_den * (1.0 - 2.0 * t);
  double g_d0 = g_ny * t + g_ns * om * om + g_den * t;
  double g_d1 = g_ns * xi * xi + g_den * t;

  // s = h/w, xi = (u - X_bin)/w
  g_h += g_s / w;
  double g_w = -g_s * s / w - g_xi * xi / w;
  double g_x0 = -g_xi / w;

  // widths/heights feed knot positions through the prefix sum
  Eigen::ArrayXd g_width = Eigen::ArrayXd::Zero(k);
  Eigen::ArrayXd g_height = Eigen::ArrayXd::Zero(k);
  g_width[bin] += g_w;
  g_height[bin] += g_h;
  for (int j = 0; j < bin; ++j) {
    g_width[j] += g_x0;
    g_height[j] += g_y0;
  }

  // width_j = span (min_frac + c p_j); softmax backward with pinned logit
  double dot_x = 0.0, dot_y = 0.0;
  for (int j = 0; j < k; ++j) {
    g_width[j] *= span * c;
    g_height[j] *= span * c;
    dot_x += dec.px[j] * g_width[j];
    dot_y += dec.py[j] * g_height[j];
  }
  for (int j = 0; j + 1 < k; ++j) {
    g_raw[j] += dec.px[j] * (g_width[j] - dot_x);
    g_raw[k - 1 + j] += dec.py[j] * (g_height[j] - dot_y);
  }

  g_raw[2 * k - 2 + bin] += logistic(raw[2 * k - 2 + bin]) * g_d0;
  g_raw[2 * k - 1 + bin] += logistic(raw[2 * k - 1 + bin]) * g_d1;
}

}  // namespace flowsam
