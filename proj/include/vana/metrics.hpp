#pragma once

#include <filesystem>

#include "vana/tensor.hpp"

namespace vana {

// Mean vector [m] and covariance [m, m] of one feature distribution.
// Covariance must be symmetric (within 1e-9) and PSD up to -1e-9 eigenvalue
// noise.
struct GaussianMoments {
  Tensor<double> mu;
  Tensor<double> sigma;

  std::int64_t dim() const { return mu.size(); }
};

// Sample mean and 1/(N-1)-normalized, symmetrized covariance of feature rows
// [N, m]; N >= 2.
GaussianMoments gaussian_moments(const Tensor<double>& samples);

// Fréchet distance between two Gaussians:
//   sqrt(||mu0-mu1||^2 + Tr(S0 + S1 - 2 (S0 S1)^{1/2})).
// The matrix square root is evaluated through the symmetric eigendecomposition
// of S0^{1/2} S1 S0^{1/2}; a negative trace residue below 1e-8 is clamped to
// zero.
double frechet_gaussian(const GaussianMoments& a, const GaussianMoments& b);

// Eigenvalues/vectors of a symmetric matrix via cyclic Jacobi rotations.
// Exposed for tests; inputs of a few hundred dimensions are fine.
struct SymmetricEigen {
  std::vector<double> values;
  Tensor<double> vectors;  // columns are eigenvectors
};
SymmetricEigen symmetric_eigen(const Tensor<double>& m);

// Feature matrix from a headerless CSV of comma-separated rows, one sample
// per line.
Tensor<double> read_csv_matrix(const std::filesystem::path& path);

}  // namespace vana
