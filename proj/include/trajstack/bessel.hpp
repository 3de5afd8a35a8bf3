#pragma once

namespace trajstack::special {

/// Modified Bessel function of the second kind K_nu(x) for nu >= 0, x > 0.
///
/// Temme's series is used for x < 2 and Steed's continued fraction otherwise;
/// both produce K_mu and K_{mu+1} for the fractional order |mu| <= 1/2, which
/// is then carried to nu by forward recurrence (stable for K).
double bessel_k(double nu, double x);

}  // namespace trajstack::special
