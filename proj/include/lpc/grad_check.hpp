// Central-difference gradient verification against the tape.
//
// The caller populates analytic gradients (zero_grad, forward, backward) and
// hands over a loss functional that re-evaluates the scalar objective from the
// parameters' current values. The checker perturbs one coordinate at a time.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lpc/rng.hpp"
#include "lpc/tape.hpp"

namespace lpc {

struct GradCheckResult {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::string worst_param;
    Eigen::Index worst_row = -1;
    Eigen::Index worst_col = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    long coords_checked = 0;
    bool all_finite = true;

    bool ok(double tol) const { return all_finite && max_rel_err <= tol; }
    std::string describe() const;
};

// Compares params[i]->grad against (f(w+h) - f(w-h)) / 2h with relative error
// |analytic - numeric| / max(1, |numeric|). With max_coords_per_param > 0
// only a subset of coordinates is probed: a random subset when rng is given,
// an evenly strided one otherwise.
GradCheckResult finite_diff_grad_check(const std::vector<Parameter*>& params,
                                       const std::function<double()>& loss_fn,
                                       double h = 1e-5,
                                       long max_coords_per_param = -1,
                                       RngStream* rng = nullptr);

}  // namespace lpc
