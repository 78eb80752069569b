#pragma once

namespace fblab {

// Standard normal density, distribution and quantile.
double normal_pdf(double x);
double normal_cdf(double x);
// Upper tail 1 - cdf(x), accurate far into the tail.
double normal_sf(double x);
// Inverse of normal_cdf on (0, 1) (Wichura's AS241, ~1e-16 relative accuracy).
// Returns -inf / +inf at 0 / 1.
double normal_quantile(double p);

}  // namespace fblab
