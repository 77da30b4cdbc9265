#pragma once
// Small dense linear algebra: row-major Mat, LU solve, matrix exponential,
// eigenvalues (symmetric Jacobi and unsymmetric Hessenberg-QR), and power
// iteration helpers. Sized for state dimensions h <= 64 and bound-constant
// matrices up to a few hundred; no attempt at blocked/large-scale routines.

#include <complex>
#include <cstddef>
#include <vector>

namespace ssmlab::la {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;  // row-major

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}
  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

Mat matmul(const Mat& x, const Mat& y);
Mat transpose(const Mat& x);
Mat add(const Mat& x, const Mat& y);
Mat scale(const Mat& x, double s);
double norm_inf(const Mat& x);  // max row sum
double norm_fro(const Mat& x);

// y = M x
std::vector<double> matvec(const Mat& m, const std::vector<double>& x);

// PA = LU with partial pivoting. Throws std::runtime_error on (numerical)
// singularity, carrying a reciprocal condition estimate in the message.
struct Lu {
  Mat lu;
  std::vector<int> piv;
  int sign = 1;
  std::vector<double> solve(const std::vector<double>& b) const;
  Mat solve(const Mat& b) const;  // column-wise
};
Lu lu_factor(const Mat& m);

// Solve m x = b / m X = B without exposing the factorization.
std::vector<double> solve(const Mat& m, const std::vector<double>& b);
Mat solve(const Mat& m, const Mat& b);

Mat inverse(const Mat& m);
double det(const Mat& m);

// 1-norm condition estimate kappa_1(m) = ||m||_1 * ||m^-1||_1 (exact inverse,
// fine at these sizes). Returns +inf for singular m.
double cond_1(const Mat& m);

// Scaling-and-squaring Pade-13 matrix exponential.
Mat expm(const Mat& m);

// Eigenvalues of a real symmetric matrix via cyclic Jacobi, ascending.
std::vector<double> eig_sym(Mat m);

// Eigenvalues of a general real matrix via Hessenberg reduction + shifted QR
// (Francis double shift). Order unspecified.
std::vector<std::complex<double>> eig(Mat m);

// Largest eigenvalue (in modulus) of the positive semidefinite operator
// x -> op(x) by power iteration; op must be symmetric PSD.
double power_iteration_psd(std::size_t n,
                           const std::vector<double>& start,
                           void (*op)(const double*, double*, std::size_t, const void*),
                           const void* ctx, int iters = 200);

}  // namespace ssmlab::la
