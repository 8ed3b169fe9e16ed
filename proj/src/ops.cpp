#include "mft/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "mft/error.hpp"
#include "gemm.hpp"

namespace mft::ad {

namespace {

void require_rank2(const Tensor& t, const char* op, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": " + what + " must be a matrix, got " + to_string(t.shape()));
    }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

Tensor transpose(const Tensor& w) {
    const std::size_t r = w.shape()[0], c = w.shape()[1];
    Tensor t({c, r});
    detail::transpose(w.data().data(), t.data().data(), r, c);
    return t;
}

} // namespace

double stable_sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Var matmul(Tape& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require_rank2(av, "matmul", "left operand");
    require_rank2(bv, "matmul", "right operand");
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    if (bv.shape()[0] != k) {
        throw ShapeError("matmul: inner extents differ, " + to_string(av.shape()) + " · " + to_string(bv.shape()));
    }
    Tensor out({m, n});
    detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return tape.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            // dA += dY · Bᵀ
            const Tensor bt = transpose(t.value(b));
            detail::gemm_nn(g.data().data(), bt.data().data(), t.grad_buffer(a).data().data(), m, n, k);
        }
        if (t.requires_grad(b)) {
            // dB += Aᵀ · dY
            const Tensor at = transpose(t.value(a));
            detail::gemm_nn(at.data().data(), g.data().data(), t.grad_buffer(b).data().data(), k, m, n);
        }
    });
}

Var linear(Tape& tape, Var x, Var weight, std::optional<Var> bias) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(weight);
    require_rank2(xv, "linear", "input");
    require_rank2(wv, "linear", "weight");
    const std::size_t rows = xv.shape()[0], in = xv.shape()[1], out = wv.shape()[0];
    if (wv.shape()[1] != in) {
        throw ShapeError("linear: input " + to_string(xv.shape()) + " does not match weight " + to_string(wv.shape()));
    }
    Tensor y({rows, out});
    if (bias) {
        const auto& bv = tape.value(*bias);
        if (bv.size() != out) {
            throw ShapeError("linear: bias " + to_string(bv.shape()) + " does not match weight " + to_string(wv.shape()));
        }
        for (std::size_t i = 0; i < rows; ++i) std::copy(bv.data().begin(), bv.data().end(), y.data().begin() + i * out);
    }
    const Tensor wt = transpose(wv);
    detail::gemm_nn(xv.data().data(), wt.data().data(), y.data().data(), rows, in, out);

    std::vector<Var> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    return tape.record("linear", std::move(y), std::move(inputs), [x, weight, bias, rows, in, out](Tape& t, const Tensor& g) {
        const double* gy = g.data().data();
        if (t.requires_grad(x)) {
            // dX += dY · W
            detail::gemm_nn(gy, t.value(weight).data().data(), t.grad_buffer(x).data().data(), rows, out, in);
        }
        if (t.requires_grad(weight)) {
            // dW += dYᵀ · X
            const Tensor gt = transpose(g);
            detail::gemm_nn(gt.data().data(), t.value(x).data().data(), t.grad_buffer(weight).data().data(), out, rows,
                            in);
        }
        if (bias && t.requires_grad(*bias)) {
            double* gb = t.grad_buffer(*bias).data().data();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < out; ++j) gb[j] += gy[i * out + j];
        }
    });
}

Var add(Tape& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require_same(av, bv, "add");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return tape.record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        for (auto v : {a, b}) {
            if (!t.requires_grad(v)) continue;
            auto& gv = t.grad_buffer(v);
            for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
        }
    });
}

Var mul(Tape& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require_same(av, bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return tape.record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            const auto& bv = t.value(b);
            auto& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(b)) {
            const auto& av = t.value(a);
            auto& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var scale(Tape& tape, Var a, double factor) {
    Tensor out = tape.value(a);
    for (auto& v : out.data()) v *= factor;
    return tape.record("scale", std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
        auto& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
}

Var sum(Tape& tape, Var a) {
    double s = 0.0;
    for (double v : tape.value(a).data()) s += v;
    return tape.record("sum", Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
        const double s = g[0];
        for (auto& v : t.grad_buffer(a).data()) v += s;
    });
}

Var sigmoid(Tape& tape, Var x) {
    Tensor out = tape.value(x);
    for (auto& v : out.data()) v = stable_sigmoid(v);
    auto saved = std::make_shared<Tensor>(out);
    return tape.record("sigmoid", std::move(out), {x}, [x, saved](Tape& t, const Tensor& g) {
        auto& gx = t.grad_buffer(x);
        const auto& s = *saved;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (1.0 - s[i]);
    });
}

Var silu(Tape& tape, Var x) {
    const auto& xv = tape.value(x);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * stable_sigmoid(xv[i]);
    return tape.record("silu", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        const auto& xv = t.value(x);
        auto& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = stable_sigmoid(xv[i]);
            gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
} // namespace

Var gelu(Tape& tape, Var x) {
    const auto& xv = tape.value(x);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double u = xv[i];
        out[i] = 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
    }
    return tape.record("gelu", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        const auto& xv = t.value(x);
        auto& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double u = xv[i];
            const double th = std::tanh(kGeluC * (u + kGeluA * u * u * u));
            const double d = 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
            gx[i] += g[i] * d;
        }
    });
}

Var rms_norm(Tape& tape, Var x, Var gain, double eps) {
    const auto& xv = tape.value(x);
    const auto& gv = tape.value(gain);
    require_rank2(xv, "rms_norm", "input");
    const std::size_t rows = xv.shape()[0], d = xv.shape()[1];
    if (gv.size() != d) {
        throw ShapeError("rms_norm: gain " + to_string(gv.shape()) + " does not match input " + to_string(xv.shape()));
    }
    Tensor out(xv.shape());
    auto inv_rms = std::make_shared<std::vector<double>>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += xv[i * d + j] * xv[i * d + j];
        const double r = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
        (*inv_rms)[i] = r;
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] * r * gv[j];
    }
    return tape.record("rms_norm", std::move(out), {x, gain}, [x, gain, inv_rms, rows, d](Tape& t, const Tensor& g) {
        const auto& xv = t.value(x);
        const auto& gv = t.value(gain);
        const bool want_x = t.requires_grad(x), want_g = t.requires_grad(gain);
        Tensor* gx = want_x ? &t.grad_buffer(x) : nullptr;
        Tensor* gg = want_g ? &t.grad_buffer(gain) : nullptr;
        for (std::size_t i = 0; i < rows; ++i) {
            const double r = (*inv_rms)[i];
            double dot = 0.0; // sum_j dxhat_j * xhat_j
            for (std::size_t j = 0; j < d; ++j) {
                const double xhat = xv[i * d + j] * r;
                const double dy = g[i * d + j];
                if (gg) (*gg)[j] += dy * xhat;
                dot += dy * gv[j] * xhat;
            }
            if (!gx) continue;
            const double mean_dot = dot / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
                const double xhat = xv[i * d + j] * r;
                (*gx)[i * d + j] += r * (g[i * d + j] * gv[j] - xhat * mean_dot);
            }
        }
    });
}

Var embedding(Tape& tape, Var table, std::span<const std::int32_t> ids) {
    const auto& tv = tape.value(table);
    require_rank2(tv, "embedding", "table");
    const std::size_t vocab = tv.shape()[0], d = tv.shape()[1];
    if (ids.empty()) throw ShapeError("embedding: no indices given");
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw ShapeError("embedding: index " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                             " outside table of " + std::to_string(vocab) + " rows");
        }
        std::copy_n(tv.data().begin() + static_cast<std::size_t>(ids[i]) * d, d, out.data().begin() + i * d);
    }
    auto saved = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
    return tape.record("embedding", std::move(out), {table}, [table, saved, d](Tape& t, const Tensor& g) {
        auto& gt = t.grad_buffer(table);
        const auto& ids = *saved;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const std::size_t r = static_cast<std::size_t>(ids[i]);
            for (std::size_t j = 0; j < d; ++j) gt[r * d + j] += g[i * d + j];
        }
    });
}

Var concat_rows(Tape& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    require_rank2(av, "concat_rows", "first operand");
    require_rank2(bv, "concat_rows", "second operand");
    if (av.shape()[1] != bv.shape()[1]) {
        throw ShapeError("concat_rows: column mismatch " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
    }
    const std::size_t n1 = av.shape()[0], n2 = bv.shape()[0], d = av.shape()[1];
    std::vector<double> data(av.data().begin(), av.data().end());
    data.insert(data.end(), bv.data().begin(), bv.data().end());
    Tensor out({n1 + n2, d}, std::move(data));
    return tape.record("concat_rows", std::move(out), {a, b}, [a, b, n1, d](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            auto& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < n1 * d; ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[n1 * d + i];
        }
    });
}

Var select_rows(Tape& tape, Var x, std::span<const std::size_t> rows) {
    const auto& xv = tape.value(x);
    require_rank2(xv, "select_rows", "input");
    const std::size_t n = xv.shape()[0], d = xv.shape()[1];
    if (rows.empty()) throw ShapeError("select_rows: no rows requested");
    Tensor out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) {
            throw ShapeError("select_rows: row " + std::to_string(rows[i]) + " outside input " + to_string(xv.shape()));
        }
        std::copy_n(xv.data().begin() + rows[i] * d, d, out.data().begin() + i * d);
    }
    auto saved = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
    return tape.record("select_rows", std::move(out), {x}, [x, saved, d](Tape& t, const Tensor& g) {
        auto& gx = t.grad_buffer(x);
        const auto& rows = *saved;
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gx[rows[i] * d + j] += g[i * d + j];
    });
}

Var causal_attention(Tape& tape, Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads) {
    const auto& qv = tape.value(q);
    const auto& kv = tape.value(k);
    const auto& vv = tape.value(v);
    require_rank2(qv, "causal_attention", "query");
    require_same(qv, kv, "causal_attention");
    require_same(qv, vv, "causal_attention");
    const std::size_t dim = qv.shape()[1];
    if (qv.shape()[0] != batch * seq) {
        throw ShapeError("causal_attention: " + to_string(qv.shape()) + " rows do not equal batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq));
    }
    if (heads == 0 || dim % heads != 0) {
        throw ShapeError("causal_attention: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                         " heads");
    }
    const std::size_t hd = dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    // probs[b][h][t][s], s <= t
    auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq, 0.0);
    Tensor out({batch * seq, dim});
    const double* Q = qv.data().data();
    const double* K = kv.data().data();
    const double* V = vv.data().data();
    double* O = out.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* P = probs->data() + (b * heads + h) * seq * seq;
            for (std::size_t t = 0; t < seq; ++t) {
                const double* qt = Q + (b * seq + t) * dim + h * hd;
                double* pt = P + t * seq;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t s = 0; s <= t; ++s) {
                    const double* ks = K + (b * seq + s) * dim + h * hd;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) dot += qt[c] * ks[c];
                    pt[s] = dot * inv_sqrt;
                    mx = std::max(mx, pt[s]);
                }
                double z = 0.0;
                for (std::size_t s = 0; s <= t; ++s) {
                    pt[s] = std::exp(pt[s] - mx);
                    z += pt[s];
                }
                const double inv_z = 1.0 / z;
                double* ot = O + (b * seq + t) * dim + h * hd;
                for (std::size_t s = 0; s <= t; ++s) {
                    pt[s] *= inv_z;
                    const double p = pt[s];
                    const double* vs = V + (b * seq + s) * dim + h * hd;
                    for (std::size_t c = 0; c < hd; ++c) ot[c] += p * vs[c];
                }
            }
        }
    }

    return tape.record("causal_attention", std::move(out), {q, k, v},
                       [q, k, v, probs, batch, seq, heads, dim, hd, inv_sqrt](Tape& t, const Tensor& g) {
        const double* Q = t.value(q).data().data();
        const double* K = t.value(k).data().data();
        const double* V = t.value(v).data().data();
        const bool want_q = t.requires_grad(q), want_k = t.requires_grad(k), want_v = t.requires_grad(v);
        double* gq = want_q ? t.grad_buffer(q).data().data() : nullptr;
        double* gk = want_k ? t.grad_buffer(k).data().data() : nullptr;
        double* gv = want_v ? t.grad_buffer(v).data().data() : nullptr;
        const double* G = g.data().data();
        std::vector<double> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                const double* P = probs->data() + (b * heads + h) * seq * seq;
                for (std::size_t tt = 0; tt < seq; ++tt) {
                    const double* pt = P + tt * seq;
                    const double* got = G + (b * seq + tt) * dim + h * hd;
                    double weighted = 0.0;
                    for (std::size_t s = 0; s <= tt; ++s) {
                        const double* vs = V + (b * seq + s) * dim + h * hd;
                        double dot = 0.0;
                        for (std::size_t c = 0; c < hd; ++c) dot += got[c] * vs[c];
                        dp[s] = dot;
                        weighted += pt[s] * dot;
                        if (gv) {
                            double* gvs = gv + (b * seq + s) * dim + h * hd;
                            for (std::size_t c = 0; c < hd; ++c) gvs[c] += pt[s] * got[c];
                        }
                    }
                    if (!gq && !gk) continue;
                    const double* qt = Q + (b * seq + tt) * dim + h * hd;
                    double* gqt = gq ? gq + (b * seq + tt) * dim + h * hd : nullptr;
                    for (std::size_t s = 0; s <= tt; ++s) {
                        const double ds = pt[s] * (dp[s] - weighted) * inv_sqrt;
                        const double* ks = K + (b * seq + s) * dim + h * hd;
                        if (gqt)
                            for (std::size_t c = 0; c < hd; ++c) gqt[c] += ds * ks[c];
                        if (gk) {
                            double* gks = gk + (b * seq + s) * dim + h * hd;
                            for (std::size_t c = 0; c < hd; ++c) gks[c] += ds * qt[c];
                        }
                    }
                }
            }
        }
    });
}

Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const std::int32_t> targets) {
    const auto& lv = tape.value(logits);
    require_rank2(lv, "softmax_cross_entropy", "logits");
    const std::size_t rows = lv.shape()[0], vocab = lv.shape()[1];
    if (targets.size() != rows) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         to_string(lv.shape()));
    }
    auto probs = std::make_shared<Tensor>(lv.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const auto tgt = targets[i];
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab) {
            throw ShapeError("softmax_cross_entropy: target " + std::to_string(tgt) + " at row " + std::to_string(i) +
                             " outside vocabulary of " + std::to_string(vocab));
        }
        const double* li = lv.data().data() + i * vocab;
        double* pi = probs->data().data() + i * vocab;
        const double mx = *std::max_element(li, li + vocab);
        double z = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            pi[j] = std::exp(li[j] - mx);
            z += pi[j];
        }
        const double log_z = std::log(z) + mx;
        total += log_z - li[tgt];
        for (std::size_t j = 0; j < vocab; ++j) pi[j] /= z;
    }
    const double inv_rows = 1.0 / static_cast<double>(rows);
    auto saved_targets = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
    return tape.record("softmax_cross_entropy", Tensor::scalar(total * inv_rows), {logits},
                       [logits, probs, saved_targets, rows, vocab, inv_rows](Tape& t, const Tensor& g) {
        auto& gl = t.grad_buffer(logits);
        const double s = g[0] * inv_rows;
        for (std::size_t i = 0; i < rows; ++i) {
            const auto tgt = static_cast<std::size_t>((*saved_targets)[i]);
            for (std::size_t j = 0; j < vocab; ++j) {
                const double p = (*probs)[i * vocab + j] - (j == tgt ? 1.0 : 0.0);
                gl[i * vocab + j] += s * p;
            }
        }
    });
}

} // namespace mft::ad
