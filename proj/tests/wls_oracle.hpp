#pragma once

#include "fdd/kernels_llr.hpp"

#include <cmath>
#include <map>
#include <random>
#include <vector>

namespace fdd::testing {

// Independent weighted least squares oracle in long double: builds the normal
// equations in unscaled powers of (x - t), solves by Gaussian elimination and
// forms the HC1 and CR1 sandwiches for the intercept from full matrices.
struct OracleFit
{
  long double intercept = 0, slope = 0, hc = 0, cr = 0;
  std::size_t n = 0;
};

inline OracleFit wls_oracle(const std::vector<LlrRow>& rows, const FitOptions& opt)
{
  const int k = opt.poly_order + 1;
  std::vector<std::vector<long double>> z;
  std::vector<long double> w, v;
  std::vector<ClusterId> g;
  for (const auto& r : rows) {
    const bool above = r.x > opt.cutoff || (r.x == opt.cutoff && opt.at_cutoff == CutoffSide::treated);
    if (above != (opt.side == Side::above))
      continue;
    const long double u = std::abs((r.x - opt.cutoff) / opt.h);
    long double kw = 0;
    switch (opt.kernel) {
      case Kernel::triangular: kw = u < 1 ? 1 - u : 0; break;
      case Kernel::uniform: kw = u <= 1 ? 1 : 0; break;
      case Kernel::epanechnikov: kw = u < 1 ? 0.75L * (1 - u * u) : 0; break;
    }
    if (kw * r.weight <= 0)
      continue;
    const long double d = static_cast<long double>(r.x) - opt.cutoff;
    std::vector<long double> zi{ 1, d };
    if (k == 3)
      zi.push_back(d * d);
    z.push_back(zi);
    w.push_back(kw * r.weight);
    v.push_back(r.v);
    g.push_back(r.cluster);
  }
  const std::size_t n = z.size();
  // A = Z'WZ, b = Z'Wv
  std::vector<std::vector<long double>> a(k, std::vector<long double>(k + 1, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      for (int q = 0; q < k; ++q)
        a[p][q] += w[i] * z[i][p] * z[i][q];
      a[p][k] += w[i] * z[i][p] * v[i];
    }
  // inverse of A by Gauss-Jordan on [A | I]
  std::vector<std::vector<long double>> m(k, std::vector<long double>(2 * k, 0));
  for (int p = 0; p < k; ++p) {
    for (int q = 0; q < k; ++q)
      m[p][q] = a[p][q];
    m[p][k + p] = 1;
  }
  for (int c = 0; c < k; ++c) {
    int piv = c;
    for (int r = c + 1; r < k; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c]))
        piv = r;
    std::swap(m[c], m[piv]);
    const long double d = m[c][c];
    for (auto& e : m[c])
      e /= d;
    for (int r = 0; r < k; ++r)
      if (r != c) {
        const long double f = m[r][c];
        for (int q = 0; q < 2 * k; ++q)
          m[r][q] -= f * m[c][q];
      }
  }
  std::vector<long double> beta(k, 0);
  for (int p = 0; p < k; ++p)
    for (int q = 0; q < k; ++q)
      beta[p] += m[p][k + q] * a[q][k];

  OracleFit o;
  o.n = n;
  o.intercept = beta[0];
  o.slope = beta[1];
  long double hc = 0;
  std::map<ClusterId, long double> sums;
  for (std::size_t i = 0; i < n; ++i) {
    long double fit = 0, lever = 0;
    for (int p = 0; p < k; ++p) {
      fit += z[i][p] * beta[p];
      lever += m[0][k + p] * z[i][p];
    }
    const long double psi = lever * w[i] * (v[i] - fit);
    hc += psi * psi;
    sums[g[i]] += psi;
  }
  const long double nn = n, kk = k, gg = sums.size();
  o.hc = hc * nn / (nn - kk);
  long double cr = 0;
  for (const auto& [id, s] : sums)
    cr += s * s;
  o.cr = gg >= 2 ? cr * gg / (gg - 1) * (nn - 1) / (nn - kk) : o.hc;
  return o;
}

inline std::vector<LlrRow> random_rows(std::mt19937_64& rng, std::size_t n, double cutoff, double spread)
{
  std::uniform_real_distribution<double> ux(cutoff - spread, cutoff + spread);
  std::normal_distribution<double> nz(0.0, 1.0);
  std::uniform_real_distribution<double> uw(0.5, 2.0);
  std::vector<LlrRow> rows(n);
  for (auto& r : rows) {
    r.x = ux(rng);
    r.v = 1.0 + 0.7 * (r.x - cutoff) + nz(rng);
    r.weight = uw(rng);
    r.cluster = static_cast<ClusterId>(std::floor((r.x - cutoff) / 0.25));
  }
  return rows;
}

} // namespace fdd::testing
