#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "pathmem/array.hpp"
#include "pathmem/errors.hpp"

namespace pathmem {

// Handle into a Tape. Cheap to copy; only meaningful with the tape that
// produced it.
struct Var {
    std::uint32_t index = UINT32_MAX;
    bool valid() const { return index != UINT32_MAX; }
};

enum class EwOp { add, sub, mul };
enum class SegmentOp { sum, mean, max, min, std_dev };

// Straight-line reverse-mode tape. Every op records its output value and a
// pull closure; backward() visits nodes exactly once in reverse recording
// order, which is a valid reverse topological order because inputs always
// precede outputs. Values are immutable once recorded and a tape belongs to
// one worker.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(DenseArray value) { return push(std::move(value), {}); }

    // Same mechanics as leaf; the name documents that nobody reads its grad.
    Var constant(DenseArray value) { return push(std::move(value), {}); }

    const DenseArray& value(Var v) const { return node(v).value; }

    const DenseArray& grad(Var v) const {
        if (!backward_done_) throw ContractError("grad() before backward()");
        return node(v).grad;
    }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- arithmetic ----

    Var matmul(Var a, Var b) {
        const DenseArray& A = value(a);
        const DenseArray& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
            throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape()) + " and " +
                                 shape_str(B.shape()));
        }
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        DenseArray out(Shape{m, n});
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = A.data() + i * k;
            double* orow = out.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = B.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
        Var o = push(std::move(out), {});
        node(o).pull = [this, a, b, o, m, k, n] {
            const DenseArray& A2 = value(a);
            const DenseArray& B2 = value(b);
            const DenseArray& G = node(o).grad;
            DenseArray& ga = node(a).grad;
            DenseArray& gb = node(b).grad;
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = G.data() + i * n;
                double* garow = ga.data() + i * k;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = B2.data() + p * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    garow[p] += acc;
                }
            }
            // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i) {
                const double* arow = A2.data() + i * k;
                const double* grow = G.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = arow[p];
                    if (av == 0.0) continue;
                    double* gbrow = gb.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        };
        return o;
    }

    Var transpose(Var a) {
        const DenseArray& A = value(a);
        if (A.rank() != 2) throw DimensionError("transpose: array " + shape_str(A.shape()) + " is not rank-2");
        const std::size_t m = A.rows(), n = A.cols();
        DenseArray out(Shape{n, m});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.at2(j, i) = A.at2(i, j);
        Var o = push(std::move(out), {});
        node(o).pull = [this, a, o, m, n] {
            const DenseArray& G = node(o).grad;
            DenseArray& ga = node(a).grad;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga.at2(i, j) += G.at2(j, i);
        };
        return o;
    }

    Var elementwise(EwOp op, Var a, Var b) {
        switch (op) {
            case EwOp::add: return add(a, b);
            case EwOp::sub: return sub(a, b);
            case EwOp::mul: return mul(a, b);
        }
        throw ConfigError("elementwise: unknown op kind");
    }

    Var add(Var a, Var b) { return binary(a, b, EwOp::add); }
    Var sub(Var a, Var b) { return binary(a, b, EwOp::sub); }
    Var mul(Var a, Var b) { return binary(a, b, EwOp::mul); }

    // y = alpha * x + beta, elementwise.
    Var axpb(Var x, double alpha, double beta) {
        const DenseArray& X = value(x);
        DenseArray out(X.shape());
        for (std::size_t i = 0; i < X.size(); ++i) out[i] = alpha * X[i] + beta;
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, o, alpha] {
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < G.size(); ++i) gx[i] += alpha * G[i];
        };
        return o;
    }

    // ---- nonlinearities ----

    Var sigmoid(Var x) {
        const DenseArray& X = value(x);
        DenseArray out(X.shape());
        for (std::size_t i = 0; i < X.size(); ++i) out[i] = stable_sigmoid(X[i]);
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, o] {
            const DenseArray& Y = node(o).value;
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i] * Y[i] * (1.0 - Y[i]);
        };
        return o;
    }

    Var relu(Var x) {
        const DenseArray& X = value(x);
        DenseArray out(X.shape());
        for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] > 0.0 ? X[i] : 0.0;
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, o] {
            const DenseArray& X2 = value(x);
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < G.size(); ++i)
                if (X2[i] > 0.0) gx[i] += G[i];
        };
        return o;
    }

    Var log(Var x) {
        const DenseArray& X = value(x);
        DenseArray out(X.shape());
        for (std::size_t i = 0; i < X.size(); ++i) {
            if (X[i] <= 0.0) throw DomainError("log: non-positive input " + std::to_string(X[i]));
            out[i] = std::log(X[i]);
        }
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, o] {
            const DenseArray& X2 = value(x);
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i] / X2[i];
        };
        return o;
    }

    Var sqrt(Var x) {
        const DenseArray& X = value(x);
        DenseArray out(X.shape());
        for (std::size_t i = 0; i < X.size(); ++i) {
            if (X[i] < 0.0) throw DomainError("sqrt: negative input " + std::to_string(X[i]));
            out[i] = std::sqrt(X[i]);
        }
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, o] {
            // Subgradient guard at 0.
            const DenseArray& Y = node(o).value;
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i] * 0.5 / std::max(Y[i], 1e-12);
        };
        return o;
    }

    Var clamp(Var x, double lo, double hi) {
        const DenseArray& X = value(x);
        DenseArray out(X.shape());
        for (std::size_t i = 0; i < X.size(); ++i) out[i] = std::min(std::max(X[i], lo), hi);
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, o, lo, hi] {
            const DenseArray& X2 = value(x);
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < G.size(); ++i)
                if (X2[i] > lo && X2[i] < hi) gx[i] += G[i];
        };
        return o;
    }

    // Row-wise normalization with variance computed as (1/d) * sum((x-mu)^2).
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
        const DenseArray& X = value(x);
        const DenseArray& Gn = value(gain);
        const DenseArray& Bs = value(bias);
        if (X.rank() != 2 || Gn.rank() != 1 || Bs.rank() != 1 || Gn.shape()[0] != X.cols() ||
            Bs.shape()[0] != X.cols()) {
            throw DimensionError("layer_norm: shapes " + shape_str(X.shape()) + ", " +
                                 shape_str(Gn.shape()) + ", " + shape_str(Bs.shape()));
        }
        if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
        const std::size_t n = X.rows(), d = X.cols();
        DenseArray out(X.shape());
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = X.data() + i * d;
            double mu = 0.0;
            for (std::size_t j = 0; j < d; ++j) mu += row[j];
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + eps);
            double* orow = out.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) orow[j] = (row[j] - mu) * inv * Gn[j] + Bs[j];
        }
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, gain, bias, o, eps, n, d] {
            const DenseArray& X2 = value(x);
            const DenseArray& Gn2 = value(gain);
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            DenseArray& ggain = node(gain).grad;
            DenseArray& gbias = node(bias).grad;
            std::vector<double> xhat(d);
            for (std::size_t i = 0; i < n; ++i) {
                const double* row = X2.data() + i * d;
                const double* grow = G.data() + i * d;
                double mu = 0.0;
                for (std::size_t j = 0; j < d; ++j) mu += row[j];
                mu /= static_cast<double>(d);
                double var = 0.0;
                for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
                var /= static_cast<double>(d);
                const double inv = 1.0 / std::sqrt(var + eps);
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    xhat[j] = (row[j] - mu) * inv;
                    const double gh = grow[j] * Gn2[j];
                    m1 += gh;
                    m2 += gh * xhat[j];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                double* gxrow = gx.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) {
                    const double gh = grow[j] * Gn2[j];
                    gxrow[j] += inv * (gh - m1 - xhat[j] * m2);
                    ggain[j] += grow[j] * xhat[j];
                    gbias[j] += grow[j];
                }
            }
        };
        return o;
    }

    // ---- gather / scatter / segments ----

    Var gather_rows(Var x, std::vector<std::uint32_t> rows) {
        const DenseArray& X = value(x);
        if (X.rank() != 2) throw DimensionError("gather_rows: array " + shape_str(X.shape()) + " is not rank-2");
        const std::size_t n = X.rows(), d = X.cols();
        for (std::uint32_t r : rows)
            if (r >= n) throw IndexError("gather_rows: row " + std::to_string(r) + " out of range " + std::to_string(n));
        DenseArray out(Shape{rows.size(), d});
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy_n(X.data() + rows[i] * d, d, out.data() + i * d);
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, o, rows = std::move(rows), d] {
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const double* grow = G.data() + i * d;
                double* gxrow = gx.data() + rows[i] * d;
                for (std::size_t j = 0; j < d; ++j) gxrow[j] += grow[j];
            }
        };
        return o;
    }

    // Place row i of x at rows[i] of a zero [num_rows x d] array. Rows must be
    // distinct.
    Var scatter_rows(Var x, std::vector<std::uint32_t> rows, std::size_t num_rows) {
        const DenseArray& X = value(x);
        if (X.rank() != 2) throw DimensionError("scatter_rows: array " + shape_str(X.shape()) + " is not rank-2");
        if (rows.size() != X.rows()) throw DimensionError("scatter_rows: index count mismatch");
        const std::size_t d = X.cols();
        std::vector<bool> seen(num_rows, false);
        for (std::uint32_t r : rows) {
            if (r >= num_rows) throw IndexError("scatter_rows: row " + std::to_string(r) + " out of range " + std::to_string(num_rows));
            if (seen[r]) throw ContractError("scatter_rows: duplicate destination row " + std::to_string(r));
            seen[r] = true;
        }
        DenseArray out(Shape{num_rows, d});
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy_n(X.data() + i * d, d, out.data() + rows[i] * d);
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, o, rows = std::move(rows), d] {
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const double* grow = G.data() + rows[i] * d;
                double* gxrow = gx.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) gxrow[j] += grow[j];
            }
        };
        return o;
    }

    // Per-segment reduction over message rows. Empty segments yield zero rows;
    // max/min route the gradient to the first attaining element in row order;
    // std uses the population form with an eps-guarded denominator.
    Var segment_reduce(SegmentOp kind, Var messages, std::vector<std::uint32_t> segment_ids,
                       std::size_t num_segments) {
        const DenseArray& M = value(messages);
        if (M.rank() != 2) throw DimensionError("segment_reduce: array " + shape_str(M.shape()) + " is not rank-2");
        if (segment_ids.size() != M.rows()) throw DimensionError("segment_reduce: id count mismatch");
        const std::size_t e = M.rows(), d = M.cols();
        for (std::uint32_t s : segment_ids)
            if (s >= num_segments)
                throw IndexError("segment_reduce: segment id " + std::to_string(s) + " out of range " +
                                 std::to_string(num_segments));

        std::vector<std::uint32_t> counts(num_segments, 0);
        for (std::uint32_t s : segment_ids) ++counts[s];

        DenseArray out(Shape{num_segments, d});
        std::vector<std::uint32_t> arg;  // max/min winners per (segment, col)
        std::vector<double> means;       // std needs per-segment means in backward

        switch (kind) {
            case SegmentOp::sum:
            case SegmentOp::mean: {
                for (std::size_t i = 0; i < e; ++i) {
                    const double* row = M.data() + i * d;
                    double* orow = out.data() + segment_ids[i] * d;
                    for (std::size_t j = 0; j < d; ++j) orow[j] += row[j];
                }
                if (kind == SegmentOp::mean) {
                    for (std::size_t s = 0; s < num_segments; ++s) {
                        if (counts[s] == 0) continue;
                        double* orow = out.data() + s * d;
                        for (std::size_t j = 0; j < d; ++j) orow[j] /= counts[s];
                    }
                }
                break;
            }
            case SegmentOp::max:
            case SegmentOp::min: {
                arg.assign(num_segments * d, UINT32_MAX);
                const bool is_max = kind == SegmentOp::max;
                for (std::size_t i = 0; i < e; ++i) {
                    const double* row = M.data() + i * d;
                    const std::size_t s = segment_ids[i];
                    for (std::size_t j = 0; j < d; ++j) {
                        std::uint32_t& a = arg[s * d + j];
                        if (a == UINT32_MAX || (is_max ? row[j] > M[a * d + j] : row[j] < M[a * d + j]))
                            a = static_cast<std::uint32_t>(i);
                    }
                }
                for (std::size_t s = 0; s < num_segments; ++s)
                    for (std::size_t j = 0; j < d; ++j)
                        if (arg[s * d + j] != UINT32_MAX) out.at2(s, j) = M[arg[s * d + j] * d + j];
                break;
            }
            case SegmentOp::std_dev: {
                means.assign(num_segments * d, 0.0);
                for (std::size_t i = 0; i < e; ++i) {
                    const double* row = M.data() + i * d;
                    double* mrow = means.data() + segment_ids[i] * d;
                    for (std::size_t j = 0; j < d; ++j) mrow[j] += row[j];
                }
                for (std::size_t s = 0; s < num_segments; ++s) {
                    if (counts[s] == 0) continue;
                    for (std::size_t j = 0; j < d; ++j) means[s * d + j] /= counts[s];
                }
                for (std::size_t i = 0; i < e; ++i) {
                    const double* row = M.data() + i * d;
                    const double* mrow = means.data() + segment_ids[i] * d;
                    double* orow = out.data() + segment_ids[i] * d;
                    for (std::size_t j = 0; j < d; ++j) orow[j] += (row[j] - mrow[j]) * (row[j] - mrow[j]);
                }
                for (std::size_t s = 0; s < num_segments; ++s) {
                    if (counts[s] == 0) continue;
                    double* orow = out.data() + s * d;
                    for (std::size_t j = 0; j < d; ++j) orow[j] = std::sqrt(orow[j] / counts[s]);
                }
                break;
            }
        }

        Var o = push(std::move(out), {});
        node(o).pull = [this, messages, o, kind, segment_ids = std::move(segment_ids),
                        counts = std::move(counts), arg = std::move(arg), means = std::move(means), d] {
            const DenseArray& M2 = value(messages);
            const DenseArray& Y = node(o).value;
            const DenseArray& G = node(o).grad;
            DenseArray& gm = node(messages).grad;
            switch (kind) {
                case SegmentOp::sum:
                    for (std::size_t i = 0; i < segment_ids.size(); ++i) {
                        const double* grow = G.data() + segment_ids[i] * d;
                        double* gmrow = gm.data() + i * d;
                        for (std::size_t j = 0; j < d; ++j) gmrow[j] += grow[j];
                    }
                    break;
                case SegmentOp::mean:
                    for (std::size_t i = 0; i < segment_ids.size(); ++i) {
                        const std::size_t s = segment_ids[i];
                        const double* grow = G.data() + s * d;
                        double* gmrow = gm.data() + i * d;
                        for (std::size_t j = 0; j < d; ++j) gmrow[j] += grow[j] / counts[s];
                    }
                    break;
                case SegmentOp::max:
                case SegmentOp::min:
                    for (std::size_t s = 0; s * d < arg.size(); ++s)
                        for (std::size_t j = 0; j < d; ++j) {
                            const std::uint32_t a = arg[s * d + j];
                            if (a != UINT32_MAX) gm[a * d + j] += G[s * d + j];
                        }
                    break;
                case SegmentOp::std_dev:
                    for (std::size_t i = 0; i < segment_ids.size(); ++i) {
                        const std::size_t s = segment_ids[i];
                        const double* grow = G.data() + s * d;
                        const double* row = M2.data() + i * d;
                        double* gmrow = gm.data() + i * d;
                        for (std::size_t j = 0; j < d; ++j) {
                            const double denom = counts[s] * std::max(Y[s * d + j], 1e-8);
                            gmrow[j] += grow[j] * (row[j] - means[s * d + j]) / denom;
                        }
                    }
                    break;
            }
        };
        return o;
    }

    // Multiply each row by a fixed (non-differentiated) scalar.
    Var row_scale(Var x, std::vector<double> scale) {
        const DenseArray& X = value(x);
        if (X.rank() != 2 || scale.size() != X.rows())
            throw DimensionError("row_scale: scale count " + std::to_string(scale.size()) +
                                 " vs array " + shape_str(X.shape()));
        const std::size_t n = X.rows(), d = X.cols();
        DenseArray out(X.shape());
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = X.data() + i * d;
            double* orow = out.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) orow[j] = row[j] * scale[i];
        }
        Var o = push(std::move(out), {});
        node(o).pull = [this, x, o, scale = std::move(scale), d] {
            const DenseArray& G = node(o).grad;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < scale.size(); ++i) {
                const double* grow = G.data() + i * d;
                double* gxrow = gx.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) gxrow[j] += grow[j] * scale[i];
            }
        };
        return o;
    }

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw ContractError("concat_rows: no parts");
        const std::size_t d = value(parts[0]).cols();
        std::size_t total = 0;
        for (Var p : parts) {
            if (value(p).cols() != d) throw DimensionError("concat_rows: column mismatch");
            total += value(p).rows();
        }
        DenseArray out(Shape{total, d});
        std::size_t off = 0;
        for (Var p : parts) {
            const DenseArray& P = value(p);
            std::copy_n(P.data(), P.size(), out.data() + off * d);
            off += P.rows();
        }
        Var o = push(std::move(out), {});
        node(o).pull = [this, parts, o, d] {
            const DenseArray& G = node(o).grad;
            std::size_t off2 = 0;
            for (Var p : parts) {
                DenseArray& gp = node(p).grad;
                const std::size_t sz = gp.size();
                const double* gsrc = G.data() + off2 * d;
                for (std::size_t i = 0; i < sz; ++i) gp[i] += gsrc[i];
                off2 += gp.size() / d;
            }
        };
        return o;
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw ContractError("concat_cols: no parts");
        const std::size_t n = value(parts[0]).rows();
        std::size_t total = 0;
        for (Var p : parts) {
            if (value(p).rows() != n) throw DimensionError("concat_cols: row mismatch");
            total += value(p).cols();
        }
        DenseArray out(Shape{n, total});
        std::size_t off = 0;
        for (Var p : parts) {
            const DenseArray& P = value(p);
            const std::size_t d = P.cols();
            for (std::size_t i = 0; i < n; ++i)
                std::copy_n(P.data() + i * d, d, out.data() + i * total + off);
            off += d;
        }
        Var o = push(std::move(out), {});
        node(o).pull = [this, parts, o, n, total] {
            const DenseArray& G = node(o).grad;
            std::size_t off2 = 0;
            for (Var p : parts) {
                DenseArray& gp = node(p).grad;
                const std::size_t d = gp.size() / std::max<std::size_t>(n, 1);
                for (std::size_t i = 0; i < n; ++i) {
                    const double* grow = G.data() + i * total + off2;
                    double* gprow = gp.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) gprow[j] += grow[j];
                }
                off2 += d;
            }
        };
        return o;
    }

    // ---- reductions ----

    Var reduce_sum(Var x) {
        const DenseArray& X = value(x);
        double acc = 0.0;
        for (std::size_t i = 0; i < X.size(); ++i) acc += X[i];
        Var o = push(DenseArray::scalar(acc), {});
        node(o).pull = [this, x, o] {
            const double g = node(o).grad[0];
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        };
        return o;
    }

    Var reduce_mean(Var x) {
        const DenseArray& X = value(x);
        const std::size_t n = std::max<std::size_t>(X.size(), 1);
        double acc = 0.0;
        for (std::size_t i = 0; i < X.size(); ++i) acc += X[i];
        Var o = push(DenseArray::scalar(acc / n), {});
        node(o).pull = [this, x, o, n] {
            const double g = node(o).grad[0] / n;
            DenseArray& gx = node(x).grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        };
        return o;
    }

    // Treat consecutive column pairs as complex numbers and multiply h by w
    // normalized to unit modulus per pair.
    Var complex_rotate(Var h, Var w, double modulus_eps = 1e-8) {
        const DenseArray& H = value(h);
        const DenseArray& W = value(w);
        if (!H.same_shape(W))
            throw DimensionError("complex_rotate: shapes " + shape_str(H.shape()) + " and " + shape_str(W.shape()));
        if (H.size() % 2 != 0 || (H.rank() == 2 && H.cols() % 2 != 0))
            throw DimensionError("complex_rotate: pair dimension must be even, got " + shape_str(H.shape()));
        const std::size_t pairs = H.size() / 2;
        DenseArray out(H.shape());
        for (std::size_t p = 0; p < pairs; ++p) {
            const double hr = H[2 * p], hi = H[2 * p + 1];
            const double wr = W[2 * p], wi = W[2 * p + 1];
            const double m = std::max(std::sqrt(wr * wr + wi * wi), modulus_eps);
            const double ur = wr / m, ui = wi / m;
            out[2 * p] = hr * ur - hi * ui;
            out[2 * p + 1] = hr * ui + hi * ur;
        }
        Var o = push(std::move(out), {});
        node(o).pull = [this, h, w, o, pairs, modulus_eps] {
            const DenseArray& H2 = value(h);
            const DenseArray& W2 = value(w);
            const DenseArray& G = node(o).grad;
            DenseArray& gh = node(h).grad;
            DenseArray& gw = node(w).grad;
            for (std::size_t p = 0; p < pairs; ++p) {
                const double hr = H2[2 * p], hi = H2[2 * p + 1];
                const double wr = W2[2 * p], wi = W2[2 * p + 1];
                const double raw = std::sqrt(wr * wr + wi * wi);
                const double m = std::max(raw, modulus_eps);
                const double ur = wr / m, ui = wi / m;
                const double gr = G[2 * p], gi = G[2 * p + 1];
                gh[2 * p] += gr * ur + gi * ui;
                gh[2 * p + 1] += -gr * ui + gi * ur;
                const double gur = gr * hr + gi * hi;
                const double gui = -gr * hi + gi * hr;
                if (raw >= modulus_eps) {
                    const double m3 = m * m * m;
                    gw[2 * p] += gur * (wi * wi / m3) + gui * (-wr * wi / m3);
                    gw[2 * p + 1] += gur * (-wr * wi / m3) + gui * (wr * wr / m3);
                } else {
                    gw[2 * p] += gur / m;
                    gw[2 * p + 1] += gui / m;
                }
            }
        };
        return o;
    }

    // ---- backward ----

    void backward(Var loss) {
        if (backward_done_) throw ContractError("backward() called twice on one record");
        const DenseArray& L = value(loss);
        if (L.size() != 1 || L.rank() > 1)
            throw ContractError("backward: loss has shape " + shape_str(L.shape()) + ", expected a scalar");
        for (Node& n : nodes_) {
            n.grad = DenseArray(n.value.shape());
        }
        nodes_[loss.index].grad[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].pull) nodes_[i].pull();
        }
        backward_done_ = true;
    }

private:
    struct Node {
        DenseArray value;
        DenseArray grad;
        std::function<void()> pull;
    };

    Node& node(Var v) {
        if (!v.valid() || v.index >= nodes_.size()) throw ContractError("invalid Var handle");
        return nodes_[v.index];
    }
    const Node& node(Var v) const {
        if (!v.valid() || v.index >= nodes_.size()) throw ContractError("invalid Var handle");
        return nodes_[v.index];
    }

    Var push(DenseArray v, std::function<void()> pull) {
        if (backward_done_) throw ContractError("recording on a tape after backward()");
        nodes_.push_back(Node{std::move(v), DenseArray(), std::move(pull)});
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    static double stable_sigmoid(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    // Equal shapes, or b a rank-1 vector broadcast across the rows of rank-2 a.
    Var binary(Var a, Var b, EwOp op) {
        const DenseArray& A = value(a);
        const DenseArray& B = value(b);
        const bool broadcast = !A.same_shape(B);
        if (broadcast && !(A.rank() == 2 && B.rank() == 1 && B.shape()[0] == A.cols())) {
            throw DimensionError("elementwise: shapes " + shape_str(A.shape()) + " and " +
                                 shape_str(B.shape()) + " are not compatible");
        }
        DenseArray out(A.shape());
        const std::size_t n = A.size();
        const std::size_t d = broadcast ? B.size() : n;
        for (std::size_t i = 0; i < n; ++i) {
            const double bv = B[broadcast ? i % d : i];
            switch (op) {
                case EwOp::add: out[i] = A[i] + bv; break;
                case EwOp::sub: out[i] = A[i] - bv; break;
                case EwOp::mul: out[i] = A[i] * bv; break;
            }
        }
        Var o = push(std::move(out), {});
        node(o).pull = [this, a, b, o, op, broadcast, d] {
            const DenseArray& A2 = value(a);
            const DenseArray& B2 = value(b);
            const DenseArray& G = node(o).grad;
            DenseArray& ga = node(a).grad;
            DenseArray& gb = node(b).grad;
            const std::size_t n2 = G.size();
            for (std::size_t i = 0; i < n2; ++i) {
                const std::size_t bi = broadcast ? i % d : i;
                switch (op) {
                    case EwOp::add:
                        ga[i] += G[i];
                        gb[bi] += G[i];
                        break;
                    case EwOp::sub:
                        ga[i] += G[i];
                        gb[bi] -= G[i];
                        break;
                    case EwOp::mul:
                        ga[i] += G[i] * B2[bi];
                        gb[bi] += G[i] * A2[i];
                        break;
                }
            }
        };
        return o;
    }

    // Deque keeps value/grad references stable while later ops are recorded.
    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace pathmem
