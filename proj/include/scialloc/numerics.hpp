#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace scialloc {

struct RootOptions {
    double x_tolerance = 1e-10;  // stop when the bracket is narrower than this
    double f_tolerance = 0.0;    // stop when |f| <= this
    int max_iterations = 200;
};

struct RootResult {
    double x = 0.0;
    double fx = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Root of a continuous f on [lo, hi] given f(lo) and f(hi) of opposite sign
/// (or one of them zero). Regula falsi with the Illinois weight, falling back
/// to bisection whenever two consecutive steps fail to halve the bracket.
template <class F>
RootResult bracketed_root(F&& f, double lo, double hi, double f_lo, double f_hi,
                          const RootOptions& opt = {}) {
    RootResult res;
    if (f_lo == 0.0) return {lo, 0.0, 0, true};
    if (f_hi == 0.0) return {hi, 0.0, 0, true};
    double a = lo, b = hi, fa = f_lo, fb = f_hi;
    int side = 0;
    double width_two_ago = std::abs(b - a) * 2.0;
    double width_prev = std::abs(b - a);
    for (int it = 1; it <= opt.max_iterations; ++it) {
        const double width = std::abs(b - a);
        double x;
        const bool stalled = width > 0.5 * width_two_ago;
        if (!stalled && fb != fa) {
            x = (a * fb - b * fa) / (fb - fa);
            if (!(x > std::min(a, b) && x < std::max(a, b))) x = 0.5 * (a + b);
        } else {
            x = 0.5 * (a + b);
        }
        width_two_ago = width_prev;
        width_prev = width;
        const double fx = f(x);
        res = {x, fx, it, false};
        if (fx == 0.0 || std::abs(fx) <= opt.f_tolerance) {
            res.converged = true;
            return res;
        }
        if ((fx > 0.0) == (fa > 0.0)) {
            a = x;
            fa = fx;
            if (side == -1) fb *= 0.5;
            side = -1;
        } else {
            b = x;
            fb = fx;
            if (side == 1) fa *= 0.5;
            side = 1;
        }
        if (std::abs(b - a) <= opt.x_tolerance) {
            res.converged = true;
            return res;
        }
        // Bracket collapsed to adjacent doubles.
        if (std::nextafter(std::min(a, b), std::numeric_limits<double>::infinity()) >=
            std::max(a, b)) {
            res.converged = true;
            return res;
        }
    }
    return res;
}

template <class F>
RootResult bracketed_root(F&& f, double lo, double hi, const RootOptions& opt = {}) {
    const double f_lo = f(lo);
    const double f_hi = f(hi);
    return bracketed_root(f, lo, hi, f_lo, f_hi, opt);
}

/// Plain bisection, used where the predicate is only monotone (not continuous).
template <class Pred>
double bisect_predicate(Pred&& is_high, double lo, double hi, int iterations = 200,
                        double x_tolerance = 0.0) {
    for (int i = 0; i < iterations && hi - lo > x_tolerance; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (is_high(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return 0.5 * (lo + hi);
}

struct MaximizeResult {
    double x = 0.0;
    double fx = 0.0;
};

/// Golden-section search for the maximum of a unimodal f on [lo, hi].
template <class F>
MaximizeResult golden_section_maximize(F&& f, double lo, double hi, double x_tolerance = 1e-12,
                                       int max_iterations = 400) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < max_iterations && (b - a) > x_tolerance; ++i) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    MaximizeResult best{c, fc};
    if (fd > best.fx) best = {d, fd};
    for (double x : {lo, hi}) {
        const double fx = f(x);
        if (fx > best.fx) best = {x, fx};
    }
    return best;
}

/// Neumaier-compensated sum; order of accumulation is the order of the span.
inline double compensated_sum(std::span<const double> xs) {
    double sum = 0.0, comp = 0.0;
    for (double x : xs) {
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x)) {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    return sum + comp;
}

}  // namespace scialloc
