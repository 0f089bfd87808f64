#pragma once

// Raw convolution kernels shared by the trainable layers. Weights are laid
// out [a][b][ci][co]; an output pixel (i, j) reads input (i + a - pad_t,
// j + b - pad_l), with out-of-range inputs treated as zero.

#include "invflow/tensor.hpp"

namespace invflow::detail {

struct ConvGeometry {
    int h = 0, w = 0, cin = 0;        // input
    int out_h = 0, out_w = 0, cout = 0;
    int k = 1;
    int pad_t = 0, pad_l = 0;
};

inline void conv_accumulate(const ConvGeometry& g, const Real* x, const Real* w, Real* y) {
    const std::size_t tap = static_cast<std::size_t>(g.cin) * g.cout;
    for (int i = 0; i < g.out_h; ++i)
        for (int j = 0; j < g.out_w; ++j) {
            Real* yp = y + (static_cast<std::size_t>(i) * g.out_w + j) * g.cout;
            for (int a = 0; a < g.k; ++a) {
                const int ii = i + a - g.pad_t;
                if (ii < 0 || ii >= g.h) continue;
                for (int b = 0; b < g.k; ++b) {
                    const int jj = j + b - g.pad_l;
                    if (jj < 0 || jj >= g.w) continue;
                    const Real* xp = x + (static_cast<std::size_t>(ii) * g.w + jj) * g.cin;
                    const Real* wp = w + (static_cast<std::size_t>(a) * g.k + b) * tap;
                    for (int ci = 0; ci < g.cin; ++ci) {
                        const Real v = xp[ci];
                        if (v == 0) continue;
                        const Real* row = wp + static_cast<std::size_t>(ci) * g.cout;
                        for (int co = 0; co < g.cout; ++co) yp[co] += v * row[co];
                    }
                }
            }
        }
}

// gx += conv^T(gy)
inline void conv_adjoint_accumulate(const ConvGeometry& g, const Real* gy, const Real* w, Real* gx) {
    const std::size_t tap = static_cast<std::size_t>(g.cin) * g.cout;
    for (int i = 0; i < g.out_h; ++i)
        for (int j = 0; j < g.out_w; ++j) {
            const Real* gp = gy + (static_cast<std::size_t>(i) * g.out_w + j) * g.cout;
            for (int a = 0; a < g.k; ++a) {
                const int ii = i + a - g.pad_t;
                if (ii < 0 || ii >= g.h) continue;
                for (int b = 0; b < g.k; ++b) {
                    const int jj = j + b - g.pad_l;
                    if (jj < 0 || jj >= g.w) continue;
                    Real* xp = gx + (static_cast<std::size_t>(ii) * g.w + jj) * g.cin;
                    const Real* wp = w + (static_cast<std::size_t>(a) * g.k + b) * tap;
                    for (int ci = 0; ci < g.cin; ++ci) {
                        const Real* row = wp + static_cast<std::size_t>(ci) * g.cout;
                        Real s = 0;
                        for (int co = 0; co < g.cout; ++co) s += row[co] * gp[co];
                        xp[ci] += s;
                    }
                }
            }
        }
}

// gw[a][b][ci][co] += sum_{i,j} x(i + a - pad_t, j + b - pad_l, ci) * gy(i, j, co)
inline void conv_weight_grad_accumulate(const ConvGeometry& g, const Real* x, const Real* gy, Real* gw) {
    const std::size_t tap = static_cast<std::size_t>(g.cin) * g.cout;
    for (int i = 0; i < g.out_h; ++i)
        for (int j = 0; j < g.out_w; ++j) {
            const Real* gp = gy + (static_cast<std::size_t>(i) * g.out_w + j) * g.cout;
            for (int a = 0; a < g.k; ++a) {
                const int ii = i + a - g.pad_t;
                if (ii < 0 || ii >= g.h) continue;
                for (int b = 0; b < g.k; ++b) {
                    const int jj = j + b - g.pad_l;
                    if (jj < 0 || jj >= g.w) continue;
                    const Real* xp = x + (static_cast<std::size_t>(ii) * g.w + jj) * g.cin;
                    Real* wp = gw + (static_cast<std::size_t>(a) * g.k + b) * tap;
                    for (int ci = 0; ci < g.cin; ++ci) {
                        const Real v = xp[ci];
                        if (v == 0) continue;
                        Real* row = wp + static_cast<std::size_t>(ci) * g.cout;
                        for (int co = 0; co < g.cout; ++co) row[co] += v * gp[co];
                    }
                }
            }
        }
}

}  // namespace invflow::detail
