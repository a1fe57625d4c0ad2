// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "adfg/kernels/gemm.hpp"

namespace adfg::numerics {

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite()) {
        throw NumericError(std::string("non-finite value produced by ") + op);
    }
}

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op, const char* what) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": " + what + " must be a matrix, got " + shape_string(t.shape()));
    }
}

// b broadcasts against a when b's shape equals a trailing slice of a's shape.
template <typename T>
std::size_t broadcast_period(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
        throw DimensionError(std::string(op) + ": shape " + shape_string(bs) + " does not broadcast to " +
                             shape_string(as));
    }
    return b.numel();
}

template <typename T>
T sigmoid(T x) {
    return T{1} / (T{1} + std::exp(-x));
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require_matrix(av, "matmul", "lhs");
    require_matrix(bv, "matmul", "rhs");
    if (av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul: inner extents differ, " + shape_string(av.shape()) + " · " +
                             shape_string(bv.shape()));
    }
    const kernels::GemmDims d{av.dim(0), av.dim(1), bv.dim(1)};
    Tensor<T> out({d.m, d.n});
    kernels::gemm_nn<T>(d, av.data(), bv.data(), out.data(), false);
    return tape.record("matmul", std::move(out), {a, b}, [a, b, d](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(a)) {
            // dA[m×k] = dC[m×n] · Bᵀ
            kernels::gemm_nt<T>({d.m, d.n, d.k}, g.data(), tp.value(b).data(), tp.grad_buffer(a).data(), true);
        }
        if (tp.requires_grad(b)) {
            // dB[k×n] = Aᵀ · dC
            kernels::gemm_tn<T>({d.k, d.m, d.n}, tp.value(a).data(), g.data(), tp.grad_buffer(b).data(), true);
        }
    });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(w);
    require_matrix(xv, "linear", "input");
    require_matrix(wv, "linear", "weight");
    if (xv.dim(1) != wv.dim(1)) {
        throw DimensionError("linear: input " + shape_string(xv.shape()) + " does not match weight " +
                             shape_string(wv.shape()));
    }
    const kernels::GemmDims d{xv.dim(0), xv.dim(1), wv.dim(0)};
    Tensor<T> out({d.m, d.n});
    kernels::gemm_nt<T>(d, xv.data(), wv.data(), out.data(), false);
    return tape.record("linear", std::move(out), {x, w}, [x, w, d](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(x)) {
            // dX[m×k] = dY[m×n] · W[n×k]
            kernels::gemm_nn<T>({d.m, d.n, d.k}, g.data(), tp.value(w).data(), tp.grad_buffer(x).data(), true);
        }
        if (tp.requires_grad(w)) {
            // dW[n×k] = dYᵀ · X
            kernels::gemm_tn<T>({d.n, d.m, d.k}, g.data(), tp.value(x).data(), tp.grad_buffer(w).data(), true);
        }
    });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    const std::size_t period = broadcast_period(av, bv, "add");
    Tensor<T> out = av;
    out.set_requires_grad(false);
    auto od = out.data();
    const auto bd = bv.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] += bd[i % period];
    }
    return tape.record("add", std::move(out), {a, b}, [a, b, period](Tape<T>& tp, const Tensor<T>& g) {
        const auto gd = g.data();
        if (tp.requires_grad(a)) {
            auto ga = tp.grad_buffer(a).data();
            for (std::size_t i = 0; i < gd.size(); ++i) {
                ga[i] += gd[i];
            }
        }
        if (tp.requires_grad(b)) {
            auto gb = tp.grad_buffer(b).data();
            for (std::size_t i = 0; i < gd.size(); ++i) {
                gb[i % period] += gd[i];
            }
        }
    });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    const std::size_t period = broadcast_period(av, bv, "mul");
    Tensor<T> out(av.shape());
    auto od = out.data();
    const auto ad = av.data();
    const auto bd = bv.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] = ad[i] * bd[i % period];
    }
    return tape.record("mul", std::move(out), {a, b}, [a, b, period](Tape<T>& tp, const Tensor<T>& g) {
        const auto gd = g.data();
        if (tp.requires_grad(a)) {
            const auto bd2 = tp.value(b).data();
            auto ga = tp.grad_buffer(a).data();
            for (std::size_t i = 0; i < gd.size(); ++i) {
                ga[i] += gd[i] * bd2[i % period];
            }
        }
        if (tp.requires_grad(b)) {
            const auto ad2 = tp.value(a).data();
            auto gb = tp.grad_buffer(b).data();
            for (std::size_t i = 0; i < gd.size(); ++i) {
                gb[i % period] += gd[i] * ad2[i];
            }
        }
    });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
    Tensor<T> out = tape.value(a);
    out.set_requires_grad(false);
    for (auto& v : out.data()) {
        v *= factor;
    }
    return tape.record("scale", std::move(out), {a}, [a, factor](Tape<T>& tp, const Tensor<T>& g) {
        auto ga = tp.grad_buffer(a).data();
        const auto gd = g.data();
        for (std::size_t i = 0; i < gd.size(); ++i) {
            ga[i] += gd[i] * factor;
        }
    });
}

template <typename T>
Var silu(Tape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        out[i] = xv[i] * sigmoid(xv[i]);
    }
    return tape.record("silu", std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
        const auto& xs = tp.value(x);
        auto gx = tp.grad_buffer(x).data();
        for (std::size_t i = 0; i < xs.numel(); ++i) {
            const T s = sigmoid(xs[i]);
            gx[i] += g[i] * s * (T{1} + xs[i] * (T{1} - s));
        }
    });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    T total{0};
    for (const T v : xv.data()) {
        total += v;
    }
    return tape.record("sum", Tensor<T>::scalar(total), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
        const T gv = g[0];
        for (auto& v : tp.grad_buffer(x).data()) {
            v += gv;
        }
    });
}

template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const std::int32_t> ids) {
    const auto& tv = tape.value(table);
    require_matrix(tv, "embedding", "table");
    if (ids.empty()) {
        throw DimensionError("embedding: empty id sequence");
    }
    const std::size_t vocab = tv.dim(0);
    const std::size_t width = tv.dim(1);
    Tensor<T> out({ids.size(), width});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
            throw InvalidArgument("embedding: id " + std::to_string(ids[t]) + " outside vocabulary of " +
                                  std::to_string(vocab));
        }
        const auto src = tv.row(static_cast<std::size_t>(ids[t]));
        std::copy(src.begin(), src.end(), out.row(t).begin());
    }
    std::vector<std::int32_t> id_copy(ids.begin(), ids.end());
    return tape.record("embedding", std::move(out), {table},
                       [table, id_copy = std::move(id_copy)](Tape<T>& tp, const Tensor<T>& g) {
                           auto& gt = tp.grad_buffer(table);
                           for (std::size_t t = 0; t < id_copy.size(); ++t) {
                               auto dst = gt.row(static_cast<std::size_t>(id_copy[t]));
                               const auto src = g.row(t);
                               for (std::size_t j = 0; j < dst.size(); ++j) {
                                   dst[j] += src[j];
                               }
                           }
                       });
}

template <typename T>
Var concat_last(Tape<T>& tape, const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_last: no inputs");
    }
    const auto& first = tape.value(parts.front());
    Shape lead(first.shape().begin(), first.shape().end() - 1);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var p : parts) {
        const auto& pv = tape.value(p);
        if (Shape(pv.shape().begin(), pv.shape().end() - 1) != lead) {
            throw DimensionError("concat_last: leading extents differ, " + shape_string(pv.shape()) + " vs " +
                                 shape_string(first.shape()));
        }
        widths.push_back(pv.cols());
        total += pv.cols();
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    Tensor<T> out(out_shape);
    const std::size_t rows = first.rows();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& pv = tape.value(parts[p]);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto src = pv.row(r);
            std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
        }
        offset += widths[p];
    }
    return tape.record("concat_last", std::move(out), parts,
                       [parts, widths, rows](Tape<T>& tp, const Tensor<T>& g) {
                           std::size_t off = 0;
                           for (std::size_t p = 0; p < parts.size(); ++p) {
                               if (tp.requires_grad(parts[p])) {
                                   auto& gp = tp.grad_buffer(parts[p]);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       const auto src = g.row(r);
                                       auto dst = gp.row(r);
                                       for (std::size_t j = 0; j < widths[p]; ++j) {
                                           dst[j] += src[off + j];
                                       }
                                   }
                               }
                               off += widths[p];
                           }
                       });
}

template <typename T>
Var rms_norm(Tape<T>& tape, Var x, Var gain, double eps) {
    if (!(eps > 0.0)) {
        throw InvalidArgument("rms_norm: eps must be positive");
    }
    const auto& xv = tape.value(x);
    const auto& gv = tape.value(gain);
    const std::size_t d = xv.cols();
    if (gv.numel() != d) {
        throw DimensionError("rms_norm: gain " + shape_string(gv.shape()) + " does not match last extent of " +
                             shape_string(xv.shape()));
    }
    const std::size_t rows = xv.rows();
    Tensor<T> out(xv.shape());
    auto inv_rms = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto xr = xv.row(r);
        double ms = 0.0;
        for (const T v : xr) {
            ms += static_cast<double>(v) * static_cast<double>(v);
        }
        ms /= static_cast<double>(d);
        const T inv = static_cast<T>(1.0 / std::sqrt(ms + eps));
        (*inv_rms)[r] = inv;
        auto yr = out.row(r);
        for (std::size_t j = 0; j < d; ++j) {
            yr[j] = xr[j] * inv * gv[j];
        }
    }
    return tape.record("rms_norm", std::move(out), {x, gain},
                       [x, gain, inv_rms, rows, d](Tape<T>& tp, const Tensor<T>& g) {
                           const auto& xs = tp.value(x);
                           const auto& gs = tp.value(gain);
                           const bool want_x = tp.requires_grad(x);
                           const bool want_g = tp.requires_grad(gain);
                           Tensor<T>* gx = want_x ? &tp.grad_buffer(x) : nullptr;
                           Tensor<T>* gg = want_g ? &tp.grad_buffer(gain) : nullptr;
                           for (std::size_t r = 0; r < rows; ++r) {
                               const T inv = (*inv_rms)[r];
                               const auto xr = xs.row(r);
                               const auto dy = g.row(r);
                               if (gg != nullptr) {
                                   for (std::size_t j = 0; j < d; ++j) {
                                       (*gg)[j] += dy[j] * xr[j] * inv;
                                   }
                               }
                               if (gx != nullptr) {
                                   // dx = inv · (g·dy − x̂ · mean(g·dy·x̂)), x̂ = x·inv
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       dot += static_cast<double>(gs[j] * dy[j]) * static_cast<double>(xr[j] * inv);
                                   }
                                   const T mean_dot = static_cast<T>(dot / static_cast<double>(d));
                                   auto dxr = gx->row(r);
                                   for (std::size_t j = 0; j < d; ++j) {
                                       dxr[j] += inv * (gs[j] * dy[j] - xr[j] * inv * mean_dot);
                                   }
                               }
                           }
                       });
}

template <typename T>
double softmax_xent_value(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                          std::span<const std::uint8_t> mask) {
    const std::size_t rows = logits.rows();
    const std::size_t vocab = logits.cols();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (mask[r] == 0) {
            continue;
        }
        const auto lr = logits.row(r);
        const double peak = static_cast<double>(*std::max_element(lr.begin(), lr.end()));
        double z = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            z += std::exp(static_cast<double>(lr[j]) - peak);
        }
        total += peak + std::log(z) - static_cast<double>(lr[static_cast<std::size_t>(targets[r])]);
        ++count;
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

template <typename T>
Var softmax_xent(Tape<T>& tape, Var logits, std::span<const std::int32_t> targets,
                 std::span<const std::uint8_t> mask) {
    const auto& lv = tape.value(logits);
    require_matrix(lv, "softmax_xent", "logits");
    const std::size_t rows = lv.dim(0);
    const std::size_t vocab = lv.dim(1);
    if (targets.size() != rows || mask.size() != rows) {
        throw DimensionError("softmax_xent: targets/mask length must equal the number of logit rows");
    }
    std::size_t count = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (mask[r] == 0) {
            continue;
        }
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
            throw InvalidArgument("softmax_xent: target " + std::to_string(targets[r]) + " outside [0, " +
                                  std::to_string(vocab) + ")");
        }
        ++count;
    }
    if (count == 0) {
        throw InvalidArgument("softmax_xent: every position is masked, the loss is empty");
    }
    const double loss = softmax_xent_value(lv, targets, mask);
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> msk(mask.begin(), mask.end());
    return tape.record(
        "softmax_xent", Tensor<T>::scalar(static_cast<T>(loss)), {logits},
        [logits, tgt = std::move(tgt), msk = std::move(msk), count, rows, vocab](Tape<T>& tp, const Tensor<T>& g) {
            const auto& ls = tp.value(logits);
            auto& gl = tp.grad_buffer(logits);
            const double coef = static_cast<double>(g[0]) / static_cast<double>(count);
            std::vector<double> probs(vocab);
            for (std::size_t r = 0; r < rows; ++r) {
                if (msk[r] == 0) {
                    continue;
                }
                const auto lr = ls.row(r);
                const double peak = static_cast<double>(*std::max_element(lr.begin(), lr.end()));
                double z = 0.0;
                for (std::size_t j = 0; j < vocab; ++j) {
                    probs[j] = std::exp(static_cast<double>(lr[j]) - peak);
                    z += probs[j];
                }
                auto gr = gl.row(r);
                for (std::size_t j = 0; j < vocab; ++j) {
                    const double onehot = j == static_cast<std::size_t>(tgt[r]) ? 1.0 : 0.0;
                    gr[j] += static_cast<T>(coef * (probs[j] / z - onehot));
                }
            }
        });
}

template <typename T>
void rope_inplace(std::span<T> row, std::int32_t position, std::size_t n_heads, double base, bool inverse) {
    const std::size_t head_dim = row.size() / n_heads;
    const std::size_t half = head_dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(position) * freq;
        const T c = static_cast<T>(std::cos(angle));
        const T s = static_cast<T>(inverse ? -std::sin(angle) : std::sin(angle));
        for (std::size_t h = 0; h < n_heads; ++h) {
            T& x0 = row[h * head_dim + 2 * i];
            T& x1 = row[h * head_dim + 2 * i + 1];
            const T a = x0;
            const T b = x1;
            x0 = a * c - b * s;
            x1 = a * s + b * c;
        }
    }
}

template <typename T>
Var rope(Tape<T>& tape, Var x, std::span<const std::int32_t> positions, std::size_t n_heads, double base) {
    const auto& xv = tape.value(x);
    require_matrix(xv, "rope", "input");
    if (n_heads == 0 || xv.cols() % n_heads != 0) {
        throw DimensionError("rope: width " + std::to_string(xv.cols()) + " is not a multiple of n_heads");
    }
    if ((xv.cols() / n_heads) % 2 != 0) {
        throw DimensionError("rope: head dimension must be even");
    }
    if (positions.size() != xv.rows()) {
        throw DimensionError("rope: one position per row required");
    }
    Tensor<T> out = xv;
    out.set_requires_grad(false);
    for (std::size_t t = 0; t < out.rows(); ++t) {
        rope_inplace<T>(out.row(t), positions[t], n_heads, base, false);
    }
    std::vector<std::int32_t> pos(positions.begin(), positions.end());
    return tape.record("rope", std::move(out), {x},
                       [x, pos = std::move(pos), n_heads, base](Tape<T>& tp, const Tensor<T>& g) {
                           // The rotation is orthogonal, so its adjoint is the inverse rotation.
                           Tensor<T> back = g;
                           for (std::size_t t = 0; t < back.rows(); ++t) {
                               rope_inplace<T>(back.row(t), pos[t], n_heads, base, true);
                           }
                           auto gx = tp.grad_buffer(x).data();
                           for (std::size_t i = 0; i < gx.size(); ++i) {
                               gx[i] += back[i];
                           }
                       });
}

namespace {

// First row index of the segment that contains each row.
std::vector<std::size_t> segment_starts(std::span<const std::int32_t> segments, std::size_t rows) {
    std::vector<std::size_t> start(rows, 0);
    if (segments.empty()) {
        return start;
    }
    if (segments.size() != rows) {
        throw DimensionError("causal_attention: one segment id per row required");
    }
    for (std::size_t t = 1; t < rows; ++t) {
        start[t] = segments[t] == segments[t - 1] ? start[t - 1] : t;
    }
    return start;
}

}  // namespace

template <typename T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t n_heads, std::span<const std::int32_t> segments) {
    const auto& qv = tape.value(q);
    const auto& kv = tape.value(k);
    const auto& vv = tape.value(v);
    require_matrix(qv, "causal_attention", "q");
    if (qv.shape() != kv.shape() || qv.shape() != vv.shape()) {
        throw DimensionError("causal_attention: q, k, v shapes differ");
    }
    if (n_heads == 0 || qv.cols() % n_heads != 0) {
        throw DimensionError("causal_attention: width is not a multiple of n_heads");
    }
    const std::size_t rows = qv.rows();
    const std::size_t width = qv.cols();
    const std::size_t head_dim = width / n_heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
    auto start = std::make_shared<std::vector<std::size_t>>(segment_starts(segments, rows));

    // probs[h][offset[t] + (s − start[t])] for keys s ∈ [start[t], t].
    auto offset = std::make_shared<std::vector<std::size_t>>(rows + 1, 0);
    for (std::size_t t = 0; t < rows; ++t) {
        (*offset)[t + 1] = (*offset)[t] + (t - (*start)[t] + 1);
    }
    const std::size_t per_head = (*offset)[rows];
    auto probs = std::make_shared<std::vector<T>>(n_heads * per_head);

    Tensor<T> out({rows, width});
    const auto qd = qv.data();
    const auto kd = kv.data();
    const auto vd = vv.data();
    auto od = out.data();
#pragma omp parallel for collapse(2) schedule(static) if (rows * per_head > 4096)
    for (std::ptrdiff_t hh = 0; hh < static_cast<std::ptrdiff_t>(n_heads); ++hh) {
        for (std::ptrdiff_t tt = 0; tt < static_cast<std::ptrdiff_t>(rows); ++tt) {
            const auto h = static_cast<std::size_t>(hh);
            const auto t = static_cast<std::size_t>(tt);
            const std::size_t col = h * head_dim;
            const std::size_t s0 = (*start)[t];
            T* p = probs->data() + h * per_head + (*offset)[t];
            const T* qrow = qd.data() + t * width + col;
            T peak = -std::numeric_limits<T>::infinity();
            for (std::size_t s = s0; s <= t; ++s) {
                const T* krow = kd.data() + s * width + col;
                T dot{0};
                for (std::size_t j = 0; j < head_dim; ++j) {
                    dot += qrow[j] * krow[j];
                }
                p[s - s0] = dot * inv_sqrt;
                peak = std::max(peak, p[s - s0]);
            }
            double z = 0.0;
            for (std::size_t s = s0; s <= t; ++s) {
                p[s - s0] = static_cast<T>(std::exp(static_cast<double>(p[s - s0] - peak)));
                z += static_cast<double>(p[s - s0]);
            }
            const T inv_z = static_cast<T>(1.0 / z);
            T* orow = od.data() + t * width + col;
            std::fill(orow, orow + head_dim, T{0});
            for (std::size_t s = s0; s <= t; ++s) {
                p[s - s0] *= inv_z;
                const T* vrow = vd.data() + s * width + col;
                for (std::size_t j = 0; j < head_dim; ++j) {
                    orow[j] += p[s - s0] * vrow[j];
                }
            }
        }
    }

    return tape.record(
        "causal_attention", std::move(out), {q, k, v},
        [q, k, v, n_heads, rows, width, head_dim, inv_sqrt, start, offset, probs, per_head](Tape<T>& tp,
                                                                                          const Tensor<T>& g) {
            const auto qs = tp.value(q).data();
            const auto ks = tp.value(k).data();
            const auto vs = tp.value(v).data();
            Tensor<T> dq({rows, width});
            Tensor<T> dk({rows, width});
            Tensor<T> dv({rows, width});
            const auto gd = g.data();
            // Heads own disjoint column slices, so they can run concurrently.
#pragma omp parallel for schedule(static) if (rows * per_head > 4096)
            for (std::ptrdiff_t hh = 0; hh < static_cast<std::ptrdiff_t>(n_heads); ++hh) {
                const auto h = static_cast<std::size_t>(hh);
                const std::size_t col = h * head_dim;
                std::vector<T> dp;
                for (std::size_t t = 0; t < rows; ++t) {
                    const std::size_t s0 = (*start)[t];
                    const T* p = probs->data() + h * per_head + (*offset)[t];
                    const T* grow = gd.data() + t * width + col;
                    dp.assign(t - s0 + 1, T{0});
                    double dot_pd = 0.0;
                    for (std::size_t s = s0; s <= t; ++s) {
                        const T* vrow = vs.data() + s * width + col;
                        T acc{0};
                        for (std::size_t j = 0; j < head_dim; ++j) {
                            acc += grow[j] * vrow[j];
                        }
                        dp[s - s0] = acc;
                        dot_pd += static_cast<double>(p[s - s0]) * static_cast<double>(acc);
                        T* dvrow = dv.data().data() + s * width + col;
                        for (std::size_t j = 0; j < head_dim; ++j) {
                            dvrow[j] += p[s - s0] * grow[j];
                        }
                    }
                    const T centre = static_cast<T>(dot_pd);
                    const T* qrow = qs.data() + t * width + col;
                    T* dqrow = dq.data().data() + t * width + col;
                    for (std::size_t s = s0; s <= t; ++s) {
                        const T ds = p[s - s0] * (dp[s - s0] - centre) * inv_sqrt;
                        const T* krow = ks.data() + s * width + col;
                        T* dkrow = dk.data().data() + s * width + col;
                        for (std::size_t j = 0; j < head_dim; ++j) {
                            dqrow[j] += ds * krow[j];
                            dkrow[j] += ds * qrow[j];
                        }
                    }
                }
            }
            const std::pair<Var, const Tensor<T>*> parts[] = {{q, &dq}, {k, &dk}, {v, &dv}};
            for (const auto& [var, grad] : parts) {
                if (tp.requires_grad(var)) {
                    auto dst = tp.grad_buffer(var).data();
                    const auto src = grad->data();
                    for (std::size_t i = 0; i < dst.size(); ++i) {
                        dst[i] += src[i];
                    }
                }
            }
        });
}

#define ADFG_INSTANTIATE_OPS(T)                                                                                   \
    template void ensure_finite<T>(const Tensor<T>&, const char*);                                               \
    template Var matmul<T>(Tape<T>&, Var, Var);                                                                  \
    template Var linear<T>(Tape<T>&, Var, Var);                                                                  \
    template Var add<T>(Tape<T>&, Var, Var);                                                                     \
    template Var mul<T>(Tape<T>&, Var, Var);                                                                     \
    template Var scale<T>(Tape<T>&, Var, T);                                                                     \
    template Var silu<T>(Tape<T>&, Var);                                                                         \
    template Var sum<T>(Tape<T>&, Var);                                                                          \
    template Var embedding<T>(Tape<T>&, Var, std::span<const std::int32_t>);                                     \
    template Var concat_last<T>(Tape<T>&, const std::vector<Var>&);                                              \
    template Var rms_norm<T>(Tape<T>&, Var, Var, double);                                                        \
    template Var softmax_xent<T>(Tape<T>&, Var, std::span<const std::int32_t>, std::span<const std::uint8_t>);   \
    template double softmax_xent_value<T>(const Tensor<T>&, std::span<const std::int32_t>,                      \
                                          std::span<const std::uint8_t>);                                        \
    template void rope_inplace<T>(std::span<T>, std::int32_t, std::size_t, double, bool);                        \
    template Var rope<T>(Tape<T>&, Var, std::span<const std::int32_t>, std::size_t, double);                     \
    template Var causal_attention<T>(Tape<T>&, Var, Var, Var, std::size_t, std::span<const std::int32_t>);

ADFG_INSTANTIATE_OPS(float)
ADFG_INSTANTIATE_OPS(double)

}  // namespace adfg::numerics
