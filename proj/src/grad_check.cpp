#include "lpc/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lpc {

std::string GradCheckResult::describe() const {
    std::ostringstream os;
    os << "checked " << coords_checked << " coords, max_rel_err=" << max_rel_err
       << " max_abs_err=" << max_abs_err;
    if (!worst_param.empty()) {
        os << " at " << worst_param << "(" << worst_row << "," << worst_col
           << ") analytic=" << worst_analytic << " numeric=" << worst_numeric;
    }
    if (!all_finite) os << " [non-finite values seen]";
    return os.str();
}

GradCheckResult finite_diff_grad_check(const std::vector<Parameter*>& params,
                                       const std::function<double()>& loss_fn,
                                       double h, long max_coords_per_param,
                                       RngStream* rng) {
    GradCheckResult res;
    for (Parameter* p : params) {
        const long n = static_cast<long>(p->value.size());
        if (n == 0) continue;

        std::vector<long> coords;
        if (max_coords_per_param > 0 && n > max_coords_per_param) {
            if (rng != nullptr) {
                std::vector<long> all(static_cast<std::size_t>(n));
                std::iota(all.begin(), all.end(), 0L);
                for (long i = 0; i < max_coords_per_param; ++i) {
                    const long j =
                        i + static_cast<long>(rng->next_below(static_cast<std::uint64_t>(n - i)));
                    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
                }
                coords.assign(all.begin(), all.begin() + max_coords_per_param);
            } else {
                const long stride = (n + max_coords_per_param - 1) / max_coords_per_param;
                for (long i = 0; i < n; i += stride) coords.push_back(i);
            }
        } else {
            coords.resize(static_cast<std::size_t>(n));
            std::iota(coords.begin(), coords.end(), 0L);
        }

        for (long c : coords) {
            double* w = p->value.data() + c;
            const double saved = *w;
            *w = saved + h;
            const double fp = loss_fn();
            *w = saved - h;
            const double fm = loss_fn();
            *w = saved;

            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = *(p->grad.data() + c);
            if (!std::isfinite(numeric) || !std::isfinite(analytic)) res.all_finite = false;
            const double abs_err = std::abs(analytic - numeric);
            const double rel_err = abs_err / std::max(1.0, std::abs(numeric));
            ++res.coords_checked;
            if (rel_err > res.max_rel_err || res.coords_checked == 1) {
                res.max_rel_err = rel_err;
                res.worst_param = p->name;
                res.worst_row = static_cast<Eigen::Index>(c % p->value.rows());
                res.worst_col = static_cast<Eigen::Index>(c / p->value.rows());
                res.worst_analytic = analytic;
                res.worst_numeric = numeric;
            }
            res.max_abs_err = std::max(res.max_abs_err, abs_err);
        }
    }
    return res;
}

}  // namespace lpc
