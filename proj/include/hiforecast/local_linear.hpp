#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "hiforecast/common.hpp"
#include "hiforecast/grid.hpp"

namespace hiforecast {

enum class Kernel {
    epanechnikov,  // 0.75 (1 - u^2) on (-1, 1)
    uniform        // 0.5 on (-1, 1)
};

template <typename Scalar>
Scalar kernel_weight(Kernel k, Scalar u) {
    const Scalar au = u < Scalar(0) ? -u : u;
    if (au >= Scalar(1)) {
        return Scalar(0);
    }
    switch (k) {
        case Kernel::epanechnikov:
            return Scalar(0.75) * (Scalar(1) - u * u);
        case Kernel::uniform:
            return Scalar(0.5);
    }
    return Scalar(0);
}

namespace detail {

template <typename Scalar>
struct LocalFit1D {
    VectorX<Scalar> values;
    // Targets where the window had fewer than two distinct abscissae and the
    // fit fell back to a locally-constant (Nadaraya-Watson) estimate.
    std::vector<Eigen::Index> nw_fallbacks;
};

// Weighted degree-1 least squares at each target, over the points of a
// sorted sample. Reproduces constants and linear data exactly wherever the
// full fit is used. Throws BandwidthError on an empty kernel window.
template <typename Scalar>
LocalFit1D<Scalar> local_linear_1d(const VectorX<Scalar>& xs, const VectorX<Scalar>& ys,
                                   const VectorX<Scalar>& targets, Scalar h, Kernel kernel) {
    LocalFit1D<Scalar> out;
    out.values.resize(targets.size());
    const Scalar* begin = xs.data();
    const Scalar* end = xs.data() + xs.size();
    for (Eigen::Index k = 0; k < targets.size(); ++k) {
        const Scalar t = targets[k];
        const Scalar* lo = std::lower_bound(begin, end, t - h);
        const Scalar* hi = std::upper_bound(lo, end, t + h);
        Scalar s0 = 0, s1 = 0, s2 = 0, r0 = 0, r1 = 0;
        Scalar first_x = 0;
        bool any = false;
        bool distinct = false;
        for (const Scalar* p = lo; p != hi; ++p) {
            const Scalar d = (*p - t) / h;
            const Scalar w = kernel_weight(kernel, d);
            if (w <= Scalar(0)) {
                continue;
            }
            const Scalar y = ys[p - begin];
            s0 += w;
            s1 += w * d;
            s2 += w * d * d;
            r0 += w * y;
            r1 += w * d * y;
            if (!any) {
                any = true;
                first_x = *p;
            } else if (*p != first_x) {
                distinct = true;
            }
        }
        if (!any) {
            throw BandwidthError("local_linear_1d: empty kernel window at target index " +
                                 std::to_string(k) + " (t=" + format_double(double(t)) +
                                 "); bandwidth " + format_double(double(h)) + " too small");
        }
        const Scalar det = s0 * s2 - s1 * s1;
        if (!distinct || det <= Scalar(1e-12) * s0 * s0) {
            out.values[k] = r0 / s0;
            out.nw_fallbacks.push_back(k);
        } else {
            out.values[k] = (s2 * r0 - s1 * r1) / det;
        }
    }
    return out;
}

}  // namespace detail
}  // namespace hiforecast
