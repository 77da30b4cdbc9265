#include "ssmlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ssmlab/kernels.hpp"

namespace ssmlab::la {

namespace {

double norm_1(const Mat& x) {  // max column sum
  double best = 0.0;
  for (std::size_t j = 0; j < x.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) s += std::fabs(x(i, j));
    best = std::max(best, s);
  }
  return best;
}

}  // namespace

Mat matmul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) throw std::invalid_argument("matmul: shape mismatch");
  Mat out(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double* oi = &out.a[i * out.cols];
    for (std::size_t k = 0; k < x.cols; ++k)
      kernels::axpy(x(i, k), &y.a[k * y.cols], oi, y.cols);
  }
  return out;
}

Mat transpose(const Mat& x) {
  Mat out(x.cols, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
  return out;
}

Mat add(const Mat& x, const Mat& y) {
  Mat out = x;
  kernels::add(x.a.data(), y.a.data(), out.a.data(), out.a.size());
  return out;
}

Mat scale(const Mat& x, double s) {
  Mat out = x;
  kernels::scale(x.a.data(), s, out.a.data(), out.a.size());
  return out;
}

double norm_inf(const Mat& x) {
  double best = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) s += std::fabs(x(i, j));
    best = std::max(best, s);
  }
  return best;
}

double norm_fro(const Mat& x) {
  return std::sqrt(kernels::dot(x.a.data(), x.a.data(), x.a.size()));
}

std::vector<double> matvec(const Mat& m, const std::vector<double>& x) {
  if (m.cols != x.size()) throw std::invalid_argument("matvec: shape mismatch");
  std::vector<double> y(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    y[i] = kernels::dot(&m.a[i * m.cols], x.data(), m.cols);
  return y;
}

Lu lu_factor(const Mat& m) {
  if (m.rows != m.cols) throw std::invalid_argument("lu_factor: square required");
  const std::size_t n = m.rows;
  Lu f;
  f.lu = m;
  f.piv.resize(n);
  Mat& a = f.lu;
  double max_entry = 0.0;
  for (double v : a.a) max_entry = std::max(max_entry, std::fabs(v));
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::fabs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::fabs(a(i, k)) > best) { best = std::fabs(a(i, k)); p = i; }
    f.piv[k] = static_cast<int>(p);
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
      f.sign = -f.sign;
    }
    const double pivot = a(k, k);
    if (std::fabs(pivot) <= 1e-300 ||
        (max_entry > 0.0 && std::fabs(pivot) < 1e-14 * max_entry)) {
      throw std::runtime_error("lu_factor: matrix is singular to working precision (pivot " +
                               std::to_string(pivot) + " vs scale " + std::to_string(max_entry) + ")");
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double l = a(i, k) / pivot;
      a(i, k) = l;
      if (l != 0.0) kernels::axpy(-l, &a.a[k * n + k + 1], &a.a[i * n + k + 1], n - k - 1);
    }
  }
  return f;
}

std::vector<double> Lu::solve(const std::vector<double>& b) const {
  const std::size_t n = lu.rows;
  std::vector<double> x = b;
  for (std::size_t k = 0; k < n; ++k) {
    std::swap(x[k], x[static_cast<std::size_t>(piv[k])]);
    // forward substitution folded into the pivot loop
  }
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) x[i] -= lu(i, j) * x[j];
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t j = ii + 1; j < n; ++j) x[ii] -= lu(ii, j) * x[j];
    x[ii] /= lu(ii, ii);
  }
  return x;
}

Mat Lu::solve(const Mat& b) const {
  Mat out(b.rows, b.cols);
  std::vector<double> col(b.rows);
  for (std::size_t j = 0; j < b.cols; ++j) {
    for (std::size_t i = 0; i < b.rows; ++i) col[i] = b(i, j);
    auto x = solve(col);
    for (std::size_t i = 0; i < b.rows; ++i) out(i, j) = x[i];
  }
  return out;
}

std::vector<double> solve(const Mat& m, const std::vector<double>& b) {
  return lu_factor(m).solve(b);
}

Mat solve(const Mat& m, const Mat& b) { return lu_factor(m).solve(b); }

Mat inverse(const Mat& m) { return solve(m, Mat::identity(m.rows)); }

double det(const Mat& m) {
  Lu f;
  try {
    f = lu_factor(m);
  } catch (const std::runtime_error&) {
    return 0.0;
  }
  double d = f.sign;
  for (std::size_t i = 0; i < m.rows; ++i) d *= f.lu(i, i);
  return d;
}

double cond_1(const Mat& m) {
  try {
    return norm_1(m) * norm_1(inverse(m));
  } catch (const std::runtime_error&) {
    return std::numeric_limits<double>::infinity();
  }
}

Mat expm(const Mat& m) {
  if (m.rows != m.cols) throw std::invalid_argument("expm: square required");
  const std::size_t n = m.rows;
  // Higham's Pade-13 coefficients.
  static const double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                             1187353796428800.0,  129060195264000.0,   10559470521600.0,
                             670442572800.0,      33522128640.0,       1323241920.0,
                             40840800.0,          960960.0,            16380.0,
                             182.0,               1.0};
  const double theta13 = 5.371920351148152;
  const double nrm = norm_1(m);
  int s = 0;
  Mat a = m;
  if (nrm > theta13) {
    s = static_cast<int>(std::ceil(std::log2(nrm / theta13)));
    a = scale(m, std::ldexp(1.0, -s));
  }
  const Mat a2 = matmul(a, a);
  const Mat a4 = matmul(a2, a2);
  const Mat a6 = matmul(a2, a4);
  const Mat id = Mat::identity(n);

  // U = A (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
  Mat w1 = add(add(scale(a6, b[13]), scale(a4, b[11])), scale(a2, b[9]));
  Mat w = add(matmul(a6, w1), add(add(scale(a6, b[7]), scale(a4, b[5])),
                                  add(scale(a2, b[3]), scale(id, b[1]))));
  Mat u = matmul(a, w);
  // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
  Mat z1 = add(add(scale(a6, b[12]), scale(a4, b[10])), scale(a2, b[8]));
  Mat v = add(matmul(a6, z1), add(add(scale(a6, b[6]), scale(a4, b[4])),
                                  add(scale(a2, b[2]), scale(id, b[0]))));
  Mat num = add(v, u);
  Mat den = add(v, scale(u, -1.0));
  Mat r = solve(den, num);
  for (int i = 0; i < s; ++i) r = matmul(r, r);
  return r;
}

std::vector<double> eig_sym(Mat m) {
  if (m.rows != m.cols) throw std::invalid_argument("eig_sym: square required");
  const std::size_t n = m.rows;
  // Cyclic Jacobi sweeps.
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
    if (off < 1e-26 * std::max(1.0, norm_fro(m))) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = m(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

namespace {

using cd = std::complex<double>;

// Complex Hessenberg QR with Wilkinson shift, eigenvalues only.
std::vector<cd> hessenberg_qr_eig(std::vector<cd> h, std::size_t n) {
  auto at = [&](std::size_t i, std::size_t j) -> cd& { return h[i * n + j]; };
  std::vector<cd> eigs;
  eigs.reserve(n);
  std::size_t hi = n;  // active block is [0, hi)
  int guard = 0;
  const int max_total_iters = static_cast<int>(60 * n + 200);
  while (hi > 0) {
    if (++guard > max_total_iters)
      throw std::runtime_error("eig: QR iteration failed to converge");
    if (hi == 1) {
      eigs.push_back(at(0, 0));
      break;
    }
    // Deflate converged subdiagonals at the bottom of the active block.
    const double eps = std::numeric_limits<double>::epsilon();
    std::size_t l = hi - 1;
    while (l > 0) {
      const double small = eps * (std::abs(at(l - 1, l - 1)) + std::abs(at(l, l))) + 1e-300;
      if (std::abs(at(l, l - 1)) <= small) break;
      --l;
    }
    if (l > 0 && std::abs(at(l, l - 1)) <=
                     eps * (std::abs(at(l - 1, l - 1)) + std::abs(at(l, l))) + 1e-300)
      at(l, l - 1) = 0.0;
    if (l == hi - 1) {
      eigs.push_back(at(hi - 1, hi - 1));
      --hi;
      continue;
    }

    // Wilkinson shift from trailing 2x2 of the active block.
    const cd a = at(hi - 2, hi - 2), b = at(hi - 2, hi - 1);
    const cd c = at(hi - 1, hi - 2), d = at(hi - 1, hi - 1);
    const cd delta = (a - d) * 0.5;
    cd mu;
    const cd disc = std::sqrt(delta * delta + b * c);
    const cd den1 = delta + disc, den2 = delta - disc;
    const cd den = std::abs(den1) >= std::abs(den2) ? den1 : den2;
    mu = std::abs(den) > 1e-300 ? d - (b * c) / den : d;

    // Explicit shifted QR step on rows/cols [l, hi): H <- Q^H (H - mu I) -> RQ + mu I.
    const std::size_t m0 = l, m1 = hi;
    for (std::size_t i = m0; i < m1; ++i) at(i, i) -= mu;
    std::vector<double> cs(m1 - m0, 1.0);
    std::vector<cd> sn(m1 - m0, 0.0);
    for (std::size_t k = m0; k + 1 < m1; ++k) {
      cd x = at(k, k), y = at(k + 1, k);
      double ax = std::abs(x), r = std::hypot(ax, std::abs(y));
      double cc;
      cd ss;
      if (r < 1e-300) {
        cc = 1.0;
        ss = 0.0;
      } else if (ax < 1e-300) {
        cc = 0.0;
        ss = std::conj(y) / std::abs(y);
      } else {
        cc = ax / r;
        ss = (x / ax) * std::conj(y) / r;
      }
      cs[k - m0] = cc;
      sn[k - m0] = ss;
      for (std::size_t j = k; j < m1; ++j) {
        const cd t1 = at(k, j), t2 = at(k + 1, j);
        at(k, j) = cc * t1 + ss * t2;
        at(k + 1, j) = -std::conj(ss) * t1 + cc * t2;
      }
    }
    for (std::size_t k = m0; k + 1 < m1; ++k) {
      const double cc = cs[k - m0];
      const cd ss = sn[k - m0];
      const std::size_t top = m0;
      for (std::size_t i = top; i <= std::min(k + 1, m1 - 1); ++i) {
        const cd t1 = at(i, k), t2 = at(i, k + 1);
        at(i, k) = cc * t1 + std::conj(ss) * t2;
        at(i, k + 1) = -ss * t1 + cc * t2;
      }
    }
    for (std::size_t i = m0; i < m1; ++i) at(i, i) += mu;
  }
  return eigs;
}

}  // namespace

std::vector<std::complex<double>> eig(Mat m) {
  if (m.rows != m.cols) throw std::invalid_argument("eig: square required");
  const std::size_t n = m.rows;
  if (n == 0) return {};
  if (n == 1) return {cd(m(0, 0), 0.0)};

  // Householder reduction to upper Hessenberg.
  for (std::size_t k = 0; k + 2 < n; ++k) {
    double alpha = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) alpha += m(i, k) * m(i, k);
    alpha = std::sqrt(alpha);
    if (alpha < 1e-300) continue;
    if (m(k + 1, k) > 0) alpha = -alpha;
    std::vector<double> v(n, 0.0);
    v[k + 1] = m(k + 1, k) - alpha;
    for (std::size_t i = k + 2; i < n; ++i) v[i] = m(i, k);
    double vnorm2 = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) vnorm2 += v[i] * v[i];
    if (vnorm2 < 1e-300) continue;
    const double beta = 2.0 / vnorm2;
    // m <- (I - beta v v^T) m
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k + 1; i < n; ++i) s += v[i] * m(i, j);
      s *= beta;
      for (std::size_t i = k + 1; i < n; ++i) m(i, j) -= s * v[i];
    }
    // m <- m (I - beta v v^T)
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) s += m(i, j) * v[j];
      s *= beta;
      for (std::size_t j = k + 1; j < n; ++j) m(i, j) -= s * v[j];
    }
  }
  std::vector<cd> h(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      h[i * n + j] = (i > j + 1) ? cd(0.0, 0.0) : cd(m(i, j), 0.0);
  return hessenberg_qr_eig(std::move(h), n);
}

double power_iteration_psd(std::size_t n, const std::vector<double>& start,
                           void (*op)(const double*, double*, std::size_t, const void*),
                           const void* ctx, int iters) {
  std::vector<double> x = start, y(n);
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    op(x.data(), y.data(), n, ctx);
    const double nrm = std::sqrt(kernels::dot(y.data(), y.data(), n));
    if (nrm < 1e-300) return 0.0;
    kernels::scale(y.data(), 1.0 / nrm, x.data(), n);
    const double prev = lambda;
    op(x.data(), y.data(), n, ctx);
    lambda = kernels::dot(x.data(), y.data(), n);
    if (it > 4 && std::fabs(lambda - prev) <= 1e-13 * std::fabs(lambda)) break;
  }
  return lambda;
}

}  // namespace ssmlab::la
