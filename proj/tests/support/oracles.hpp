#pragma once

// Independent reference computations. These deliberately use the most literal formulation
// (explicit loops, textbook iterations) and share no code with the library paths they check.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace stainnorm::oracle {

/// Uniform-window SSIM by explicit loops: per-window means, variances and covariance
/// from their definitions, averaged over every window position.
inline double naive_ssim(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, int window, double c1, double c2,
                         int stride = 1) {
    const int rows = static_cast<int>(a.rows());
    const int cols = static_cast<int>(a.cols());
    const double count = static_cast<double>(window) * window;
    double total = 0;
    int windows = 0;
    for (int y = 0; y + window <= rows; y += stride) {
        for (int x = 0; x + window <= cols; x += stride) {
            double sa = 0, sb = 0;
            for (int dy = 0; dy < window; ++dy) {
                for (int dx = 0; dx < window; ++dx) {
                    sa += a(y + dy, x + dx);
                    sb += b(y + dy, x + dx);
                }
            }
            const double ma = sa / count;
            const double mb = sb / count;
            double va = 0, vb = 0, cov = 0;
            for (int dy = 0; dy < window; ++dy) {
                for (int dx = 0; dx < window; ++dx) {
                    const double da = a(y + dy, x + dx) - ma;
                    const double db = b(y + dy, x + dx) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= count;
            vb /= count;
            cov /= count;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    }
    return total / windows;
}

/// Self-attention by explicit loops over output location j and attended location i.
inline Eigen::MatrixXd dense_attention(const Eigen::MatrixXd& x, const Eigen::MatrixXd& wq,
                                       const Eigen::MatrixXd& wk, const Eigen::MatrixXd& wv, double mu) {
    const Eigen::Index c = x.rows();
    const Eigen::Index n = x.cols();
    const Eigen::Index cb = wq.rows();
    Eigen::MatrixXd out(c, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        std::vector<double> logit(static_cast<size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = 0;
            for (Eigen::Index r = 0; r < cb; ++r) {
                double qj = 0, ki = 0;
                for (Eigen::Index m = 0; m < c; ++m) {
                    qj += wq(r, m) * x(m, j);
                    ki += wk(r, m) * x(m, i);
                }
                s += ki * qj;
            }
            logit[static_cast<size_t>(i)] = s;
        }
        double peak = logit[0];
        for (double l : logit) {
            peak = std::max(peak, l);
        }
        double z = 0;
        for (double l : logit) {
            z += std::exp(l - peak);
        }
        for (Eigen::Index ch = 0; ch < c; ++ch) {
            double o = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                double vi = 0;
                for (Eigen::Index m = 0; m < c; ++m) {
                    vi += wv(ch, m) * x(m, i);
                }
                o += std::exp(logit[static_cast<size_t>(i)] - peak) / z * vi;
            }
            out(ch, j) = mu * o + x(ch, j);
        }
    }
    return out;
}

/// Projected gradient descent for min ||V s - o||^2, s >= 0, run far past convergence.
inline Eigen::Vector2d nnls_projected_gradient(const Eigen::Matrix<double, 3, 2>& v, const Eigen::Vector3d& o) {
    const Eigen::Matrix2d g = v.transpose() * v;
    const double step = 1.0 / g.eigenvalues().real().maxCoeff();
    Eigen::Vector2d s = Eigen::Vector2d::Zero();
    for (int it = 0; it < 20000; ++it) {
        s = (s - step * (g * s - v.transpose() * o)).cwiseMax(0.0);
    }
    return s;
}

/// Plain Lee-Seung multiplicative-update NMF, od ~= w h, from the given starting factors.
inline void nmf_multiplicative(const Eigen::MatrixXd& od, Eigen::MatrixXd& w, Eigen::MatrixXd& h, int iters) {
    constexpr double kTiny = 1e-300;
    for (int it = 0; it < iters; ++it) {
        h.array() *= (w.transpose() * od).array() / ((w.transpose() * w * h).array() + kTiny);
        w.array() *= (od * h.transpose()).array() / ((w * h * h.transpose()).array() + kTiny);
    }
}

inline double largest_singular_value(const Eigen::MatrixXd& m) {
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

/// Direct 4x4 convolution from the definition. x is cin x (h*w); kernel flattened (out, in, 4, 4).
inline Eigen::MatrixXd naive_conv2d(const Eigen::MatrixXd& x, int h, int w, const Eigen::VectorXd& kernel,
                                    const Eigen::VectorXd& bias, int stride, int pad, int& ho, int& wo) {
    const int cin = static_cast<int>(x.rows());
    const int cout = static_cast<int>(bias.size());
    ho = (h + 2 * pad - 4) / stride + 1;
    wo = (w + 2 * pad - 4) / stride + 1;
    Eigen::MatrixXd out(cout, ho * wo);
    for (int o = 0; o < cout; ++o) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = bias(o);
                for (int c = 0; c < cin; ++c) {
                    for (int ky = 0; ky < 4; ++ky) {
                        for (int kx = 0; kx < 4; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
                                continue;
                            }
                            acc += kernel(((o * cin + c) * 4 + ky) * 4 + kx) * x(c, iy * w + ix);
                        }
                    }
                }
                out(o, oy * wo + ox) = acc;
            }
        }
    }
    return out;
}

/// Transposed convolution as the gather form: out(o, y, x) sums every input whose stride-2
/// footprint lands on (y, x). kernel flattened (in, out, 4, 4).
inline Eigen::MatrixXd naive_conv_transpose2d(const Eigen::MatrixXd& x, int h, int w, const Eigen::VectorXd& kernel,
                                              const Eigen::VectorXd& bias, int stride, int pad, int& ho, int& wo) {
    const int cin = static_cast<int>(x.rows());
    const int cout = static_cast<int>(bias.size());
    ho = (h - 1) * stride - 2 * pad + 4;
    wo = (w - 1) * stride - 2 * pad + 4;
    Eigen::MatrixXd out(cout, ho * wo);
    for (int o = 0; o < cout; ++o) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = bias(o);
                for (int c = 0; c < cin; ++c) {
                    for (int ky = 0; ky < 4; ++ky) {
                        for (int kx = 0; kx < 4; ++kx) {
                            const int ny = oy + pad - ky;
                            const int nx = ox + pad - kx;
                            if (ny % stride != 0 || nx % stride != 0 || ny < 0 || nx < 0) {
                                continue;
                            }
                            const int iy = ny / stride;
                            const int ix = nx / stride;
                            if (iy >= h || ix >= w) {
                                continue;
                            }
                            acc += kernel(((c * cout + o) * 4 + ky) * 4 + kx) * x(c, iy * w + ix);
                        }
                    }
                }
                out(o, oy * wo + ox) = acc;
            }
        }
    }
    return out;
}

}  // namespace stainnorm::oracle
