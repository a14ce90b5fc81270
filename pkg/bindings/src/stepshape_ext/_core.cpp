// Native group shaping over flat buffers.
//
// Groups arrive in CSR form: trajectory i's step entries occupy
// [boundaries[i], boundaries[i+1]) in the flattened valid/sims arrays, so a
// group of n trajectories carries n + 1 boundary offsets. The arithmetic
// mirrors the reference Python implementation operation for operation
// (sequential left-to-right sums, single IEEE ops); compiled with
// -ffp-contract=off the results are bit-identical.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <tuple>

namespace py = pybind11;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using IndexArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

std::tuple<py::array_t<double>, py::array_t<double>, py::array_t<double>>
shape_group(DoubleArray rewards, ByteArray valid, DoubleArray sims, IndexArray boundaries,
            bool sample_std, double std_floor) {
    if (rewards.ndim() != 1 || valid.ndim() != 1 || sims.ndim() != 1 || boundaries.ndim() != 1) {
        throw std::invalid_argument("all inputs must be one-dimensional");
    }
    const py::ssize_t n = rewards.shape(0);
    if (n == 0) {
        throw std::invalid_argument("cannot shape an empty group");
    }
    if (boundaries.shape(0) != n + 1) {
        throw std::invalid_argument("boundaries must hold n + 1 offsets");
    }
    if (!(std_floor > 0.0)) {
        throw std::invalid_argument("std_floor must be positive");
    }
    const auto* b = boundaries.data();
    const py::ssize_t total = valid.shape(0);
    if (sims.shape(0) != total) {
        throw std::invalid_argument("valid and sims must have equal length");
    }
    if (b[0] != 0 || b[n] != total) {
        throw std::invalid_argument("boundaries must start at 0 and end at the signal count");
    }
    for (py::ssize_t i = 0; i < n; ++i) {
        if (b[i + 1] < b[i]) {
            throw std::invalid_argument("boundaries must be non-decreasing");
        }
    }

    py::array_t<double> group_adv(n);
    py::array_t<double> coefficients(total);
    py::array_t<double> step_adv(total);
    double* adv = group_adv.mutable_data();
    double* coef = coefficients.mutable_data();
    double* shaped = step_adv.mutable_data();
    const double* r = rewards.data();
    const std::uint8_t* v = valid.data();
    const double* s = sims.data();

    {
        py::gil_scoped_release release;

        double sum = 0.0;
        for (py::ssize_t i = 0; i < n; ++i) sum += r[i];
        const double mean = sum / static_cast<double>(n);
        double squared = 0.0;
        for (py::ssize_t i = 0; i < n; ++i) {
            const double d = r[i] - mean;
            squared += d * d;
        }
        double variance;
        if (sample_std) {
            variance = n > 1 ? squared / static_cast<double>(n - 1) : 0.0;
        } else {
            variance = squared / static_cast<double>(n);
        }
        const double std = std::sqrt(variance);
        if (std == 0.0) {
            for (py::ssize_t i = 0; i < n; ++i) adv[i] = 0.0;
        } else {
            const double denom = std > std_floor ? std : std_floor;
            for (py::ssize_t i = 0; i < n; ++i) adv[i] = (r[i] - mean) / denom;
        }

        for (py::ssize_t i = 0; i < n; ++i) {
            const bool positive = r[i] == 1.0;
            for (std::int64_t k = b[i]; k < b[i + 1]; ++k) {
                double c;
                if (positive) {
                    c = 1.0;
                } else {
                    c = v[k] ? 1.0 - s[k] : 1.0;
                }
                coef[k] = c;
                shaped[k] = adv[i] * c;
            }
        }
    }
    return {group_adv, coefficients, step_adv};
}

int score_pair(const std::string& predicted, const std::string& gold) {
    // runtime bridge: stepshape is looked up at call time, never at build time
    py::module_ reward = py::module_::import("stepshape.reward");
    return reward.attr("rule_reward")(predicted, gold).cast<int>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Flat-buffer group shaping kernel and scoring bridge";
    m.def(
        "shape_group", &shape_group,
        py::arg("rewards"), py::arg("valid"), py::arg("sims"), py::arg("boundaries"),
        py::arg("sample_std") = false, py::arg("std_floor") = 1e-6,
        "Group advantages, per-step coefficients and shaped step advantages.\n\n"
        "Signals are flattened across trajectories; boundaries holds n + 1 CSR\n"
        "offsets. Positive (reward == 1) trajectories keep coefficient 1 on\n"
        "every step; negative steps get 1 - sim when valid, else 1. Returns\n"
        "(group_advantages, coefficients, step_advantages).");
    m.def(
        "score_pair", &score_pair, py::arg("predicted"), py::arg("gold"),
        "Binary rule reward for an answer pair, delegated to stepshape.reward.");
}
