#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tsda/tensor.hpp"

// Central finite-difference gradient oracle, independent of the tape: it only
// ever re-evaluates the scalar function under test.
namespace testsupport {

template <typename T>
struct GradCheckResult {
    bool ok = true;
    double worst = 0.0;
    std::string detail;
};

// f maps the current contents of *inputs to a scalar; analytic[i] must hold
// df/d(inputs[i]) as computed by the implementation under test.
template <typename T>
GradCheckResult<T> check_gradients(std::vector<tsda::Tensor<T>*> inputs,
                                   const std::function<double()>& f,
                                   const std::vector<tsda::Tensor<T>>& analytic, double rtol,
                                   double atol, double step_scale = 0.0) {
    GradCheckResult<T> res;
    double h_base = step_scale > 0.0
                        ? step_scale
                        : (sizeof(T) == 8 ? 1e-5 : 1e-2);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        tsda::Tensor<T>& x = *inputs[t];
        for (long i = 0; i < x.numel(); ++i) {
            T orig = x[i];
            double h = h_base * std::max(1.0, std::abs(static_cast<double>(orig)));
            x[i] = orig + static_cast<T>(h);
            double fp = f();
            x[i] = orig - static_cast<T>(h);
            double fm = f();
            x[i] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double an = static_cast<double>(analytic[t][i]);
            double err = std::abs(fd - an);
            double tol = rtol * std::max(std::abs(fd), std::abs(an)) + atol;
            if (err > res.worst) res.worst = err;
            if (err > tol) {
                res.ok = false;
                res.detail = "input " + std::to_string(t) + " elem " + std::to_string(i) +
                             ": analytic " + std::to_string(an) + " vs fd " + std::to_string(fd);
                return res;
            }
        }
    }
    return res;
}

}  // namespace testsupport
