#pragma once

// Shared fixtures: a real-world style quarterly transition matrix on a
// 9-grade scale (percent units, published rounding, grade 8 unobserved) and
// small helpers for building panels in tests.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rrl/domain.hpp"

namespace testdata {

inline Eigen::MatrixXd quarterly_1990q1_percent() {
    Eigen::MatrixXd m(8, 9);
    m << 99.65, 0.35, 0,     0,     0,     0,     0,     0, 0,
         0.37,  96.33, 2.21, 0,     0,     1.10,  0,     0, 0,
         0,     0,     96.15, 0.77, 1.54,  1.54,  0,     0, 0,
         0,     0,     0,     94.90, 1.02, 3.06,  0,     0, 1.02,
         0.99,  0,     0,     1.48,  92.11, 3.94, 0.98,  0, 0.50,
         0,     0.87,  0,     0,     1.74,  94.78, 0.87, 0, 1.74,
         0,     0,     0,     0,     0,     2.78,  83.33, 0, 13.89,
         0,     0,     0,     0,     0,     0,     0,     0, 0;
    return m;
}

inline rrl::TransitionPanel quarterly_1990q1_panel() {
    const Eigen::MatrixXd rates = quarterly_1990q1_percent() / 100.0;
    std::vector<rrl::TransitionObservation> obs;
    obs.push_back(rrl::TransitionObservation::from_rates("1990Q1", rates));
    return rrl::TransitionPanel(rrl::RatingScale::numbered(9), std::move(obs));
}

}  // namespace testdata
