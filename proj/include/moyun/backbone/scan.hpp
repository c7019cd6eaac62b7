#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "moyun/backbone/patchify.hpp"

namespace moyun {

// Causal linear recurrence over a token sequence, per channel j:
//   h_i = a(i,j) * h_{i-1} + gain(i,j) * x(i,j) * B(:,i)
//   y(i,j) = C(:,i) . h_i + D(j) * x(i,j)
// with h_0 = 0 and a state vector of size S per channel.
//
// Layout: x, a, gain are (d x n), B and C are (S x n), D is (d).
template <class Scalar>
inline Mat<Scalar> ssm_scan(const Mat<Scalar>& x, const Mat<Scalar>& a,
                            const Mat<Scalar>& B, const Mat<Scalar>& C,
                            const Vec<Scalar>& D, const Mat<Scalar>* gain = nullptr) {
    const Eigen::Index d = x.rows();
    const Eigen::Index n = x.cols();
    const Eigen::Index S = B.rows();
    if (a.rows() != d || a.cols() != n || B.cols() != n || C.rows() != S ||
        C.cols() != n || D.size() != d || (gain && (gain->rows() != d || gain->cols() != n))) {
        throw std::invalid_argument("ssm_scan: parameter shapes inconsistent with input");
    }
    if (!x.allFinite() || !a.allFinite() || !B.allFinite() || !C.allFinite() ||
        !D.allFinite() || (gain && !gain->allFinite())) {
        throw std::invalid_argument("ssm_scan: non-finite parameters");
    }
    Mat<Scalar> y(d, n);
    Mat<Scalar> h = Mat<Scalar>::Zero(d, S);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vec<Scalar> gx =
            gain ? Vec<Scalar>(gain->col(i).cwiseProduct(x.col(i))) : Vec<Scalar>(x.col(i));
        h = (h.array().colwise() * a.col(i).array()).matrix();
        h.noalias() += gx * B.col(i).transpose();
        y.col(i).noalias() = h * C.col(i);
        y.col(i) += D.cwiseProduct(x.col(i));
    }
    return y;
}

}  // namespace moyun
