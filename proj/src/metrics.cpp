#include "vana/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace vana {

namespace {

void require_moments(const GaussianMoments& g, const char* which) {
  const std::int64_t m = g.mu.size();
  if (g.mu.rank() != 1 || g.sigma.shape() != Shape{m, m})
    throw ShapeError(std::string("frechet_gaussian: ") + which + " moments malformed: mu " +
                     shape_str(g.mu.shape()) + ", sigma " + shape_str(g.sigma.shape()));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = i + 1; j < m; ++j)
      if (std::abs(g.sigma(i, j) - g.sigma(j, i)) > 1e-9)
        throw ValueError(std::string("frechet_gaussian: ") + which +
                         " covariance not symmetric within 1e-9");
}

Tensor<double> matmul_sym(const Tensor<double>& a, const Tensor<double>& b) {
  const std::int64_t m = a.dim(0);
  Tensor<double> out({m, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < m; ++j) {
      double acc = 0;
      for (std::int64_t k = 0; k < m; ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

}  // namespace

SymmetricEigen symmetric_eigen(const Tensor<double>& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1))
    throw ShapeError("symmetric_eigen: expected square matrix, got " + shape_str(m.shape()));
  const std::int64_t n = m.dim(0);
  Tensor<double> a = m;
  Tensor<double> v({n, n});
  for (std::int64_t i = 0; i < n; ++i) v(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0, fro = 0;
    for (std::int64_t p = 0; p < n; ++p)
      for (std::int64_t q = 0; q < n; ++q) {
        fro += a(p, q) * a(p, q);
        if (q > p) off += a(p, q) * a(p, q);
      }
    if (off <= 1e-30 * std::max(1.0, fro)) break;
    for (std::int64_t p = 0; p < n; ++p)
      for (std::int64_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::int64_t i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (std::int64_t i = 0; i < n; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
        }
        for (std::int64_t i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
  }
  SymmetricEigen e;
  e.values.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) e.values[static_cast<std::size_t>(i)] = a(i, i);
  e.vectors = std::move(v);
  return e;
}

GaussianMoments gaussian_moments(const Tensor<double>& samples) {
  if (samples.rank() != 2)
    throw ShapeError("gaussian_moments: samples must be [N,m], got " +
                     shape_str(samples.shape()));
  const std::int64_t n = samples.dim(0), m = samples.dim(1);
  if (n < 2) throw ValueError("gaussian_moments: need at least 2 samples, got " +
                              std::to_string(n));
  GaussianMoments g;
  g.mu = Tensor<double>({m});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) g.mu[j] += samples(i, j);
  for (std::int64_t j = 0; j < m; ++j) g.mu[j] /= static_cast<double>(n);

  g.sigma = Tensor<double>({m, m});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t a = 0; a < m; ++a) {
      const double da = samples(i, a) - g.mu[a];
      for (std::int64_t b = a; b < m; ++b)
        g.sigma(a, b) += da * (samples(i, b) - g.mu[b]);
    }
  for (std::int64_t a = 0; a < m; ++a)
    for (std::int64_t b = a; b < m; ++b) {
      g.sigma(a, b) /= static_cast<double>(n - 1);
      g.sigma(b, a) = g.sigma(a, b);
    }
  return g;
}

double frechet_gaussian(const GaussianMoments& a, const GaussianMoments& b) {
  require_moments(a, "first");
  require_moments(b, "second");
  const std::int64_t m = a.dim();
  if (b.dim() != m)
    throw ShapeError("frechet_gaussian: dimension mismatch: " + std::to_string(m) + " vs " +
                     std::to_string(b.dim()));

  double mean_term = 0;
  for (std::int64_t i = 0; i < m; ++i) {
    const double d = a.mu[i] - b.mu[i];
    mean_term += d * d;
  }

  // S0^{1/2} from the eigendecomposition, rejecting covariances that are
  // negative beyond tolerance.
  const auto check_psd = [](const SymmetricEigen& e, const char* which) {
    for (double lambda : e.values)
      if (lambda < -1e-9)
        throw ValueError(std::string("frechet_gaussian: ") + which +
                         " covariance has eigenvalue " + std::to_string(lambda) +
                         " below -1e-9");
  };
  const SymmetricEigen e0 = symmetric_eigen(a.sigma);
  check_psd(e0, "first");
  const SymmetricEigen e1 = symmetric_eigen(b.sigma);
  check_psd(e1, "second");

  Tensor<double> root0({m, m});
  for (std::int64_t i = 0; i < m; ++i) {
    const double r = std::sqrt(std::max(0.0, e0.values[static_cast<std::size_t>(i)]));
    for (std::int64_t r0 = 0; r0 < m; ++r0)
      for (std::int64_t c0 = 0; c0 < m; ++c0)
        root0(r0, c0) += e0.vectors(r0, i) * r * e0.vectors(c0, i);
  }

  Tensor<double> middle = matmul_sym(matmul_sym(root0, b.sigma), root0);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = i + 1; j < m; ++j) {
      const double s = 0.5 * (middle(i, j) + middle(j, i));
      middle(i, j) = s;
      middle(j, i) = s;
    }
  const SymmetricEigen em = symmetric_eigen(middle);
  double trace_sqrt = 0;
  for (double lambda : em.values) trace_sqrt += std::sqrt(std::max(0.0, lambda));

  double trace_term = -2.0 * trace_sqrt;
  for (std::int64_t i = 0; i < m; ++i) trace_term += a.sigma(i, i) + b.sigma(i, i);

  double d2 = mean_term + trace_term;
  if (d2 < -1e-8)
    throw ValueError("frechet_gaussian: squared distance " + std::to_string(d2) +
                     " negative beyond tolerance");
  // The eigendecomposition route leaves residue of either sign at the 1e-13
  // scale for (near-)identical moments; the square root would amplify it, so
  // squared distances inside the tolerance band collapse to zero.
  if (d2 < 1e-8) return 0.0;
  return std::sqrt(d2);
}

Tensor<double> read_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path.string());
  std::vector<double> values;
  std::int64_t rows = 0, cols = -1;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::int64_t this_cols = 0;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("csv: bad number '" + cell + "' at " + path.string() + ":" +
                                 std::to_string(lineno));
      }
      ++this_cols;
    }
    if (cols == -1) cols = this_cols;
    if (this_cols != cols)
      throw std::runtime_error("csv: ragged row at " + path.string() + ":" +
                               std::to_string(lineno));
    ++rows;
  }
  if (rows == 0) throw std::runtime_error("csv: no data rows in " + path.string());
  return Tensor<double>({rows, cols}, std::move(values));
}

}  // namespace vana
