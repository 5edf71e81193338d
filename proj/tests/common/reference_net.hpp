#pragma once

// Straightforward double-precision CHW evaluation of a NetworkSpec, written
// independently of the packed production kernels. Used as the oracle for
// forward values and, through central differences, for gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "purekit/network.hpp"

namespace reftest {

struct Act {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  double& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
  double at(int ci, int y, int x) const { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
};

// Flat parameter vector in entry order.
inline std::vector<double> flat_params(const purekit::NetworkParams& p) {
  std::vector<double> out;
  for (const auto& e : p.entries()) out.insert(out.end(), e.values.begin(), e.values.end());
  return out;
}

// `pattern`, when given, receives the sign of every leaky-ReLU input.
inline std::vector<double> forward(const purekit::NetworkSpec& spec, const std::vector<double>& theta,
                                   const std::vector<double>& image, std::vector<char>* pattern = nullptr) {
  if (pattern) pattern->clear();
  Act a{spec.input.channels, spec.input.height, spec.input.width, image};
  std::size_t off = 0;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case purekit::LayerKind::conv: {
        const int k = l.kernel;
        const int ho = (a.h + 2 * l.pad - k) / l.stride + 1;
        const int wo = (a.w + 2 * l.pad - k) / l.stride + 1;
        Act b{l.out_channels, ho, wo, std::vector<double>(static_cast<std::size_t>(l.out_channels) * ho * wo)};
        const std::size_t wsize = static_cast<std::size_t>(l.out_channels) * l.in_channels * k * k;
        for (int o = 0; o < l.out_channels; ++o)
          for (int y = 0; y < ho; ++y)
            for (int x = 0; x < wo; ++x) {
              double s = theta[off + wsize + o];
              for (int i = 0; i < l.in_channels; ++i)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const int yy = y * l.stride - l.pad + ky, xx = x * l.stride - l.pad + kx;
                    if (yy < 0 || yy >= a.h || xx < 0 || xx >= a.w) continue;
                    s += theta[off + ((static_cast<std::size_t>(o) * l.in_channels + i) * k + ky) * k + kx] *
                         a.at(i, yy, xx);
                  }
              b.at(o, y, x) = s;
            }
        off += wsize + l.out_channels;
        a = std::move(b);
        break;
      }
      case purekit::LayerKind::leaky_relu:
        for (double& v : a.v) {
          if (pattern) pattern->push_back(v > 0);
          v = v > 0 ? v : l.slope * v;
        }
        break;
      case purekit::LayerKind::avg_pool: {
        const int k = l.kernel;
        Act b{a.c, a.h / k, a.w / k, std::vector<double>(static_cast<std::size_t>(a.c) * (a.h / k) * (a.w / k))};
        for (int c = 0; c < b.c; ++c)
          for (int y = 0; y < b.h; ++y)
            for (int x = 0; x < b.w; ++x) {
              double s = 0;
              for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx) s += a.at(c, y * k + dy, x * k + dx);
              b.at(c, y, x) = s / (k * k);
            }
        a = std::move(b);
        break;
      }
      case purekit::LayerKind::global_sum: {
        Act b{a.c, 1, 1, std::vector<double>(static_cast<std::size_t>(a.c))};
        for (int c = 0; c < a.c; ++c) {
          double s = 0;
          for (int y = 0; y < a.h; ++y)
            for (int x = 0; x < a.w; ++x) s += a.at(c, y, x);
          b.v[static_cast<std::size_t>(c)] = s;
        }
        a = std::move(b);
        break;
      }
      case purekit::LayerKind::dense: {
        Act b{l.out_channels, 1, 1, std::vector<double>(static_cast<std::size_t>(l.out_channels))};
        const std::size_t wsize = static_cast<std::size_t>(l.out_channels) * l.in_channels;
        for (int o = 0; o < l.out_channels; ++o) {
          double s = theta[off + wsize + o];
          for (int i = 0; i < l.in_channels; ++i) s += theta[off + static_cast<std::size_t>(o) * l.in_channels + i] * a.v[static_cast<std::size_t>(i)];
          b.v[static_cast<std::size_t>(o)] = s;
        }
        off += wsize + l.out_channels;
        a = std::move(b);
        break;
      }
    }
  }
  return a.v;
}

// max_i |a_i - b_i| / max_i |b_i|
inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& oracle) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    num = std::max(num, std::abs(analytic[i] - oracle[i]));
    den = std::max(den, std::abs(oracle[i]));
  }
  return den > 0 ? num / den : num;
}

// sum_k w_k * output_k
inline double weighted_output(const purekit::NetworkSpec& spec, const std::vector<double>& theta,
                              const std::vector<double>& image, const std::vector<double>& w,
                              std::vector<char>* pattern = nullptr) {
  const auto y = forward(spec, theta, image, pattern);
  double s = 0;
  for (std::size_t k = 0; k < y.size(); ++k) s += w[k] * y[k];
  return s;
}

inline double cross_entropy(const purekit::NetworkSpec& spec, const std::vector<double>& theta,
                            const std::vector<double>& image, int label, std::vector<char>* pattern = nullptr) {
  const auto y = forward(spec, theta, image, pattern);
  const double mx = *std::max_element(y.begin(), y.end());
  double z = 0;
  for (double v : y) z += std::exp(v - mx);
  return -(y[static_cast<std::size_t>(label)] - mx - std::log(z));
}

struct FdCheck {
  std::vector<double> analytic, oracle;
  std::size_t skipped = 0;
  double error() const { return max_rel_error(analytic, oracle); }
};

// Central differences of f over var[idx]. A coordinate whose stencil changes
// the activation pattern straddles a kink, where the difference quotient is
// not a derivative; it is skipped and counted.
inline FdCheck central_differences(std::vector<double>& var, const std::vector<std::size_t>& idx,
                                   const std::vector<double>& analytic, double h,
                                   const std::function<double(std::vector<char>*)>& f) {
  FdCheck out;
  std::vector<char> base, up_pat, dn_pat;
  f(&base);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const std::size_t i = idx[j];
    const double v = var[i];
    var[i] = v + h;
    const double up = f(&up_pat);
    var[i] = v - h;
    const double dn = f(&dn_pat);
    var[i] = v;
    if (up_pat != base || dn_pat != base) {
      ++out.skipped;
      continue;
    }
    out.analytic.push_back(analytic[j]);
    out.oracle.push_back((up - dn) / (2 * h));
  }
  return out;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace reftest
