#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pedro/tensor.hpp"

namespace pedro {

inline double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

namespace detail {
template <typename S>
inline S sign0(S v) {
    return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0));
}
}  // namespace detail

// Elementwise rational function R(x) = (sum_j a_j x^j) / (1 + |sum_i b_i x^i|),
// numerator degrees 0..len(a)-1, denominator degrees 1..len(b). The denominator
// is >= 1 everywhere, so evaluation is pole-free. With per_term_abs the
// denominator is 1 + sum_i |b_i x^i| instead. Differentiable in x, a, b;
// the absolute value takes subgradient 0 at its kink.
template <typename S>
Tensor<S> rational_eval(const Tensor<S>& x, const Tensor<S>& a, const Tensor<S>& b,
                        bool per_term_abs = false) {
    if (a.ndim() != 1 || a.dim(0) < 1) throw std::invalid_argument("rational_eval: bad numerator");
    if (b.ndim() != 1 || b.dim(0) < 1)
        throw std::invalid_argument("rational_eval: bad denominator");
    const int na = a.dim(0);
    const int nb = b.dim(0);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const std::size_t n = out.numel();
    const S* px = x.data().data();
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (std::size_t e = 0; e < n; ++e) {
        const S xv = px[e];
        S num = pa[na - 1];
        for (int j = na - 2; j >= 0; --j) num = num * xv + pa[j];
        S den;
        if (per_term_abs) {
            const S ax = std::abs(xv);
            S pw = ax;
            den = S(1);
            for (int i = 0; i < nb; ++i) {
                den += std::abs(pb[i]) * pw;
                pw *= ax;
            }
        } else {
            S inner = pb[nb - 1];
            for (int i = nb - 2; i >= 0; --i) inner = inner * xv + pb[i];
            den = S(1) + std::abs(xv * inner);
        }
        po[e] = num / den;
    }
    if (detail::track_grad<S>({&x, &a, &b})) {
        auto xi = x.impl(), ai = a.impl(), bi = b.impl(); auto* oi = out.impl().get();
        detail::attach(out, "rational", {xi, ai, bi}, [xi, ai, bi, oi, na, nb,
                                                       per_term_abs]() {
            const std::size_t n2 = oi->value.size();
            const S* px2 = xi->value.data();
            const S* pa2 = ai->value.data();
            const S* pb2 = bi->value.data();
            const S* g = oi->grad.data();
            const bool need_x = xi->requires_grad;
            const bool need_a = ai->requires_grad;
            const bool need_b = bi->requires_grad;
            if (need_x) xi->ensure_grad();
            if (need_a) ai->ensure_grad();
            if (need_b) bi->ensure_grad();
            std::vector<S> xpow(static_cast<std::size_t>(std::max(na, nb + 1)));
            for (std::size_t e = 0; e < n2; ++e) {
                const S xv = px2[e];
                const S gv = g[e];
                if (gv == S(0)) continue;
                xpow[0] = S(1);
                for (int j = 1; j < static_cast<int>(xpow.size()); ++j)
                    xpow[static_cast<std::size_t>(j)] = xpow[static_cast<std::size_t>(j - 1)] * xv;
                S num = 0, dnum = 0;
                for (int j = 0; j < na; ++j) {
                    num += pa2[j] * xpow[static_cast<std::size_t>(j)];
                    if (j >= 1) dnum += static_cast<S>(j) * pa2[j] * xpow[static_cast<std::size_t>(j - 1)];
                }
                S den, dden_dx = 0;
                if (per_term_abs) {
                    const S ax = std::abs(xv);
                    const S sx = detail::sign0(xv);
                    den = S(1);
                    S pw = ax, pwm1 = S(1);
                    for (int i = 1; i <= nb; ++i) {
                        den += std::abs(pb2[i - 1]) * pw;
                        dden_dx += std::abs(pb2[i - 1]) * static_cast<S>(i) * pwm1 * sx;
                        pwm1 = pw;
                        pw *= ax;
                    }
                } else {
                    S p = 0, dp = 0;
                    for (int i = 1; i <= nb; ++i) {
                        p += pb2[i - 1] * xpow[static_cast<std::size_t>(i)];
                        dp += static_cast<S>(i) * pb2[i - 1] * xpow[static_cast<std::size_t>(i - 1)];
                    }
                    const S sp = detail::sign0(p);
                    den = S(1) + std::abs(p);
                    dden_dx = sp * dp;
                }
                const S inv = S(1) / den;
                const S inv2 = inv * inv;
                if (need_x) xi->grad[e] += gv * (dnum * inv - num * inv2 * dden_dx);
                if (need_a)
                    for (int j = 0; j < na; ++j)
                        ai->grad[j] += gv * xpow[static_cast<std::size_t>(j)] * inv;
                if (need_b) {
                    if (per_term_abs) {
                        const S ax = std::abs(xv);
                        S pw = ax;
                        for (int i = 1; i <= nb; ++i) {
                            bi->grad[i - 1] +=
                                gv * (-num * inv2) * detail::sign0(pb2[i - 1]) * pw;
                            pw *= ax;
                        }
                    } else {
                        S p = 0;
                        for (int i = 1; i <= nb; ++i)
                            p += pb2[i - 1] * xpow[static_cast<std::size_t>(i)];
                        const S sp = detail::sign0(p);
                        for (int i = 1; i <= nb; ++i)
                            bi->grad[i - 1] +=
                                gv * (-num * inv2) * sp * xpow[static_cast<std::size_t>(i)];
                    }
                }
            }
        });
    }
    return out;
}

// Trainable rational activation; default order: numerator degree 6 (7 coeffs),
// denominator degrees 1..5 (5 coeffs).
template <typename S>
struct RationalActivation {
    Tensor<S> a;
    Tensor<S> b;
    bool per_term_abs = false;

    static RationalActivation identity(int num_coeffs = 7, int den_coeffs = 5) {
        RationalActivation r;
        r.a = Tensor<S>::zeros({num_coeffs});
        if (num_coeffs >= 2) r.a.at(1) = S(1);
        r.b = Tensor<S>::zeros({den_coeffs});
        r.a.set_requires_grad(true);
        r.b.set_requires_grad(true);
        return r;
    }

    static RationalActivation from_coeffs(const std::vector<double>& av,
                                          const std::vector<double>& bv,
                                          bool per_term = false) {
        RationalActivation r;
        std::vector<S> ac(av.begin(), av.end()), bc(bv.begin(), bv.end());
        const int an = static_cast<int>(ac.size());
        const int bn = static_cast<int>(bc.size());
        r.a = Tensor<S>::from_data({an}, std::move(ac));
        r.b = Tensor<S>::from_data({bn}, std::move(bc));
        r.a.set_requires_grad(true);
        r.b.set_requires_grad(true);
        r.per_term_abs = per_term;
        return r;
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return rational_eval(x, a, b, per_term_abs); }
};

struct RationalFit {
    std::vector<double> a;
    std::vector<double> b;
    double mse = 0;
    double max_abs_err = 0;
};

// Least-squares fit of a rational activation to `ref` on a uniform grid, by
// Adam from an identity-like start. Requires points >= 10 * (numerator degree
// + denominator degree). Throws if ref is non-finite anywhere on the grid.
RationalFit fit_rational_to(const std::function<double(double)>& ref, double lo, double hi,
                            int points, int num_coeffs = 7, int den_coeffs = 5,
                            bool per_term_abs = false);

// Fit against exact-erf GELU on [-3,3], 601 points; computed once per process.
const RationalFit& gelu_rational_fit();

// Either a trainable rational activation or a fixed function, interchangeable
// inside a vector generator.
template <typename S>
class ActivationUnit {
  public:
    enum class Kind { rational, relu, gelu };

    static ActivationUnit rational(RationalActivation<S> r) {
        ActivationUnit u;
        u.kind_ = Kind::rational;
        u.rat_ = std::move(r);
        return u;
    }

    static ActivationUnit fixed(const std::string& kind) {
        ActivationUnit u;
        if (kind == "relu")
            u.kind_ = Kind::relu;
        else if (kind == "gelu")
            u.kind_ = Kind::gelu;
        else
            throw std::invalid_argument("unknown fixed activation: " + kind);
        return u;
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        switch (kind_) {
            case Kind::rational: return rat_(x);
            case Kind::relu: return relu(x);
            case Kind::gelu: return gelu(x);
        }
        throw std::logic_error("bad activation kind");
    }

    bool is_rational() const { return kind_ == Kind::rational; }
    Kind kind() const { return kind_; }

    RationalActivation<S>& rational_ref() {
        if (!is_rational()) throw std::logic_error("activation is not rational");
        return rat_;
    }
    const RationalActivation<S>& rational_ref() const {
        if (!is_rational()) throw std::logic_error("activation is not rational");
        return rat_;
    }

    // Trainable coefficient tensors (empty for fixed activations).
    std::vector<Tensor<S>> trainable() {
        if (!is_rational()) return {};
        return {rat_.a, rat_.b};
    }

  private:
    Kind kind_ = Kind::gelu;
    RationalActivation<S> rat_;
};

}  // namespace pedro
