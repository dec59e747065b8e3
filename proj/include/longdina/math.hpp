#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace longdina {

inline double logistic(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("logit: argument must be in (0,1)");
  return std::log(p / (1.0 - p));
}

inline double norm_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Regularized lower incomplete gamma P(a,x); series for x < a+1, continued
// fraction otherwise (Numerical Recipes style).
inline double gamma_p(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw std::domain_error("gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  // Lentz continued fraction for Q(a,x)
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  const double q = std::exp(-x + a * std::log(x) - gln) * h;
  return 1.0 - q;
}

// Upper-tail probability of a chi-square variate.
inline double chi_square_sf(double x, double df) {
  if (df <= 0.0) throw std::domain_error("chi_square_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return 1.0 - gamma_p(0.5 * df, 0.5 * x);
}

// Standard bivariate normal CDF P(X<=h, Y<=k) with correlation r,
// Drezner & Wesolowsky Gauss-Legendre scheme as refined by Genz (2004).
inline double bvn_cdf(double h, double k, double r) {
  // 20-point Gauss-Legendre rule, symmetric halves
  static const double x20[10] = {0.9931285991850949, 0.9639719272779138,
                                 0.9122344282513259, 0.8391169718222188,
                                 0.7463319064601508, 0.6360536807265150,
                                 0.5108670019508271, 0.3737060887154196,
                                 0.2277858511416451, 0.0765265211334973};
  static const double w20[10] = {0.0176140071391521, 0.0406014298003869,
                                 0.0626720483341091, 0.0832767415767048,
                                 0.1019301198172404, 0.1181945319615184,
                                 0.1316886384491766, 0.1420961093183820,
                                 0.1491729864726037, 0.1527533871307258};
  if (r > 0.9999) return norm_cdf(std::min(h, k));
  if (r < -0.9999) return std::max(0.0, norm_cdf(h) - norm_cdf(-k));
  const double tp = 2.0 * M_PI;
  double bvn = 0.0;
  if (std::fabs(r) <= 0.925) {
    const double hk = h * k, hs = 0.5 * (h * h + k * k);
    const double asr = std::asin(r);
    for (int i = 0; i < 10; ++i) {
      for (int sign = -1; sign <= 1; sign += 2) {
        const double sn = std::sin(0.5 * asr * (1.0 + sign * x20[i]));
        bvn += w20[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    bvn = bvn * asr / (2.0 * tp) + norm_cdf(h) * norm_cdf(k);
    return bvn;
  }
  // |r| > 0.925: Genz tail formulation
  double hh = h, kk = k;
  if (r < 0.0) kk = -kk;
  const double hk = hh * kk;
  if (std::fabs(r) < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (hh - kk) * (hh - kk);
    const double c = (4.0 - hk) / 8.0, d = (12.0 - hk) / 16.0;
    const double asq = -(bs / as + hk) / 2.0;
    if (asq > -100.0) {
      bvn = a * std::exp(asq) *
            (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 +
             c * d * as * as / 5.0);
    }
    if (-hk < 100.0) {
      const double b = std::sqrt(bs);
      bvn -= std::exp(-hk / 2.0) * std::sqrt(tp) * norm_cdf(-b / a) * b *
             (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    for (int i = 0; i < 10; ++i) {
      for (int sign = -1; sign <= 1; sign += 2) {
        const double xs0 = a * (1.0 + sign * x20[i]);
        const double xs = xs0 * xs0;
        const double rs = std::sqrt(1.0 - xs);
        const double asq2 = -(bs / xs + hk) / 2.0;
        if (asq2 > -100.0) {
          bvn += a * w20[i] * std::exp(asq2) *
                 (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs -
                  (1.0 + c * xs * (1.0 + d * xs)));
        }
      }
    }
    bvn = -bvn / tp;
  }
  if (r > 0.0) {
    bvn += norm_cdf(-std::max(hh, kk));
  } else {
    bvn = -bvn;
    if (kk > hh) bvn += norm_cdf(kk) - norm_cdf(hh);
  }
  return bvn;
}

// splitmix64; used to derive independent per-unit seeds from a master seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace longdina
