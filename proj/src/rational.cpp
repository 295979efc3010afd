#include "pedro/rational.hpp"

#include <cmath>
#include <stdexcept>

#include "pedro/optim.hpp"

namespace pedro {

namespace {

struct Candidate {
    std::vector<double> a, b;
    double mse = 0, max_abs_err = 0;
};

Candidate run_fit(const std::vector<double>& xs, const std::vector<double>& ys,
                  std::vector<double> a_start, std::vector<double> b_start,
                  bool per_term_abs, const std::vector<double>& lrs, int steps_per_lr) {
    const int points = static_cast<int>(xs.size());
    auto x = Tensor<double>::from_data({points}, xs);
    auto y = Tensor<double>::from_data({points}, ys);

    const int an = static_cast<int>(a_start.size());
    const int bn = static_cast<int>(b_start.size());
    auto a = Tensor<double>::from_data({an}, std::move(a_start)).set_requires_grad(true);
    auto b = Tensor<double>::from_data({bn}, std::move(b_start)).set_requires_grad(true);

    AdamW<double> opt({a, b}, lrs.front());
    for (double lr : lrs) {
        opt.set_lr(lr);
        for (int s = 0; s < steps_per_lr; ++s) {
            opt.zero_grad();
            auto d = sub(rational_eval(x, a, b, per_term_abs), y);
            auto loss = scale(sum(mul(d, d)), 1.0 / points);
            loss.backward();
            opt.step();
        }
    }

    Candidate c;
    c.a = a.data();
    c.b = b.data();
    NoGradGuard ng;
    auto r = rational_eval(x, a, b, per_term_abs);
    for (int i = 0; i < points; ++i) {
        const double e = r.at(i) - ys[static_cast<std::size_t>(i)];
        c.mse += e * e;
        c.max_abs_err = std::max(c.max_abs_err, std::abs(e));
    }
    c.mse /= points;
    return c;
}

}  // namespace

RationalFit fit_rational_to(const std::function<double(double)>& ref, double lo, double hi,
                            int points, int num_coeffs, int den_coeffs, bool per_term_abs) {
    if (num_coeffs < 1 || den_coeffs < 1)
        throw std::invalid_argument("fit_rational_to: need at least one coefficient per side");
    if (!(lo < hi)) throw std::invalid_argument("fit_rational_to: empty interval");
    const int min_points = 10 * ((num_coeffs - 1) + den_coeffs);
    if (points < min_points)
        throw std::invalid_argument("fit_rational_to: need at least " +
                                    std::to_string(min_points) + " grid points");

    // The fit drives its own backward passes, so it must not inherit a
    // caller's NoGradGuard (adapters get constructed inside inference scopes).
    struct EnableGrad {
        bool prev = g_grad_enabled;
        EnableGrad() { g_grad_enabled = true; }
        ~EnableGrad() { g_grad_enabled = prev; }
    } enable_grad;

    std::vector<double> xs(static_cast<std::size_t>(points));
    std::vector<double> ys(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
        const double t = lo + (hi - lo) * i / (points - 1);
        const double v = ref(t);
        if (!std::isfinite(v))
            throw std::domain_error("fit_rational_to: reference is non-finite at x=" +
                                    std::to_string(t));
        xs[static_cast<std::size_t>(i)] = t;
        ys[static_cast<std::size_t>(i)] = v;
    }

    // The |.| subgradient is 0 exactly at b == 0, so a zero start leaves the
    // denominator untouched: stage one is a pure polynomial fit. Stage two
    // restarts from that optimum with the denominator nudged alive and a
    // gentle schedule so the polynomial solution isn't destroyed. Keep
    // whichever stage fits better (exactly-polynomial references keep b = 0).
    std::vector<double> a0(static_cast<std::size_t>(num_coeffs), 0.0);
    if (num_coeffs >= 2) a0[1] = 1.0;
    const std::vector<double> coarse = {0.05, 0.02, 0.01, 0.005, 0.002, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5};
    const std::vector<double> gentle = {0.002, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5};
    const Candidate flat = run_fit(xs, ys, a0, std::vector<double>(den_coeffs, 0.0),
                                   per_term_abs, coarse, 800);
    const Candidate bent = run_fit(xs, ys, flat.a, std::vector<double>(den_coeffs, 0.01),
                                   per_term_abs, gentle, 1500);
    const Candidate& best = bent.mse < flat.mse ? bent : flat;

    RationalFit out;
    out.a = best.a;
    out.b = best.b;
    out.mse = best.mse;
    out.max_abs_err = best.max_abs_err;
    return out;
}

const RationalFit& gelu_rational_fit() {
    static const RationalFit fit = fit_rational_to(gelu_scalar, -3.0, 3.0, 601);
    return fit;
}

}  // namespace pedro
