#pragma once

// Test-only finite-difference oracle for gradient checks. Independent of the
// backward implementation: it re-runs forward passes around perturbed leaf
// values and compares the central difference against the analytic gradient.

#include <algorithm>
#include <cmath>
#include <vector>

#include "specmap/autodiff.hpp"
#include "specmap/rng.hpp"

namespace fdtest {

template <typename Real>
specmap::ad::Tensor<Real> rand_tensor(std::vector<int> shape, specmap::Rng& rng,
                                      double scale = 1.0) {
    specmap::ad::Tensor<Real> t(std::move(shape));
    for (auto& v : t.data) v = Real(scale * rng.next_normal());
    return t;
}

// Max relative error over the checked elements. Tiny gradient components are
// measured against 1% of the gradient's max magnitude so the comparison
// stays meaningful where the true derivative is near zero.
// `element_stride` > 1 spot-checks every k-th element (for big leaves).
inline double fd_check(specmap::ad::Graph<double>& g, specmap::ad::NodeId leaf,
                       specmap::ad::NodeId loss, size_t element_stride = 1, double h = 1e-5) {
    g.backward(loss);
    const auto analytic = g.grad(leaf).data;
    const auto base = g.val(leaf).data;
    double gmax = 0.0;
    for (double a : analytic) gmax = std::max(gmax, std::abs(a));

    double worst = 0.0;
    for (size_t i = 0; i < base.size(); i += element_stride) {
        auto probe = base;
        const double hi = h * std::max(1.0, std::abs(base[i]));
        probe[i] = base[i] + hi;
        g.set_leaf(leaf, probe);
        g.recompute();
        const double up = g.val(loss).data[0];
        probe[i] = base[i] - hi;
        g.set_leaf(leaf, probe);
        g.recompute();
        const double dn = g.val(loss).data[0];
        const double fd = (up - dn) / (2.0 * hi);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-2 * gmax, 1e-10});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    g.set_leaf(leaf, base);
    g.recompute();
    return worst;
}

}  // namespace fdtest
