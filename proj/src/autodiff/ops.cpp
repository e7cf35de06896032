#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hypercast/autodiff.hpp"
#include "hypercast/kernels.hpp"

namespace hypercast::ad {
namespace {

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    return static_cast<std::size_t>(a);
}

void same_tape(const Tensor& a, const Tensor& b, const char* op) {
    if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": tensors from different tapes");
}

// Per-output-dimension strides into each operand; 0 on broadcast dims.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> strides(r, 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t src = s.size() - 1 - i;
        const std::size_t dst = r - 1 - i;
        strides[dst] = s[src] == 1 ? 0 : stride;
        stride *= s[src];
    }
    return strides;
}

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
        out[r - 1 - i] = std::max(da, db);
    }
    return {out, aligned_strides(a, out), aligned_strides(b, out)};
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
    const std::size_t r = bc.out.size();
    const std::size_t n = numel(bc.out);
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += bc.stride_a[d];
            ib += bc.stride_b[d];
            if (idx[d] < bc.out[d]) break;
            ia -= bc.stride_a[d] * bc.out[d];
            ib -= bc.stride_b[d] * bc.out[d];
            idx[d] = 0;
        }
    }
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
    same_tape(a, b, op);
    Tape& tape = a.tape();
    const auto& k = kernels::active();
    auto av = a.value();
    auto bv = b.value();
    const Shape& as = a.shape();
    const Shape& bs = b.shape();

    if (as == bs) {
        std::vector<double> out(av.size());
        switch (kind) {
            case BinaryKind::add: k.add(av.data(), bv.data(), out.data(), out.size()); break;
            case BinaryKind::mul: k.mul(av.data(), bv.data(), out.data(), out.size()); break;
            case BinaryKind::sub:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
                break;
        }
        const std::size_t ia = a.id(), ib = b.id();
        return tape.record(op, as, std::move(out), {ia, ib}, [ia, ib, kind](Tape& t, const Tape::Node& self) {
            const auto& g = self.grad;
            const auto& kt = kernels::active();
            const bool need_a = t.node(ia).requires_grad;
            const bool need_b = t.node(ib).requires_grad;
            switch (kind) {
                case BinaryKind::add:
                    if (need_a) kt.axpy(1.0, g.data(), t.grad_of(ia).data(), g.size());
                    if (need_b) kt.axpy(1.0, g.data(), t.grad_of(ib).data(), g.size());
                    break;
                case BinaryKind::sub:
                    if (need_a) kt.axpy(1.0, g.data(), t.grad_of(ia).data(), g.size());
                    if (need_b) kt.axpy(-1.0, g.data(), t.grad_of(ib).data(), g.size());
                    break;
                case BinaryKind::mul: {
                    if (need_a) {
                        auto& ga = t.grad_of(ia);
                        const auto& bv2 = t.node(ib).value;
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                    }
                    if (need_b) {
                        auto& gb = t.grad_of(ib);
                        const auto& av2 = t.node(ia).value;
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
                    }
                    break;
                }
            }
        });
    }

    // Fast path: b repeats over a's leading dims (bias rows, positional tables).
    if (bs.size() <= as.size() && std::equal(bs.begin(), bs.end(), as.end() - static_cast<long>(bs.size()))) {
        const std::size_t inner = bv.size();
        const std::size_t outer = av.size() / inner;
        std::vector<double> out(av.size());
        for (std::size_t o = 0; o < outer; ++o) {
            const double* ap = av.data() + o * inner;
            double* op2 = out.data() + o * inner;
            switch (kind) {
                case BinaryKind::add: k.add(ap, bv.data(), op2, inner); break;
                case BinaryKind::mul: k.mul(ap, bv.data(), op2, inner); break;
                case BinaryKind::sub:
                    for (std::size_t i = 0; i < inner; ++i) op2[i] = ap[i] - bv[i];
                    break;
            }
        }
        const std::size_t ia = a.id(), ib = b.id();
        return tape.record(op, as, std::move(out), {ia, ib},
                           [ia, ib, kind, inner, outer](Tape& t, const Tape::Node& self) {
                               const auto& g = self.grad;
                               const auto& kt = kernels::active();
                               const bool need_a = t.node(ia).requires_grad;
                               const bool need_b = t.node(ib).requires_grad;
                               if (need_a) {
                                   auto& ga = t.grad_of(ia);
                                   if (kind == BinaryKind::mul) {
                                       const auto& bv2 = t.node(ib).value;
                                       for (std::size_t o = 0; o < outer; ++o)
                                           for (std::size_t i = 0; i < inner; ++i)
                                               ga[o * inner + i] += g[o * inner + i] * bv2[i];
                                   } else {
                                       kt.axpy(1.0, g.data(), ga.data(), g.size());
                                   }
                               }
                               if (need_b) {
                                   auto& gb = t.grad_of(ib);
                                   if (kind == BinaryKind::mul) {
                                       const auto& av2 = t.node(ia).value;
                                       for (std::size_t o = 0; o < outer; ++o)
                                           for (std::size_t i = 0; i < inner; ++i)
                                               gb[i] += g[o * inner + i] * av2[o * inner + i];
                                   } else {
                                       const double sign = kind == BinaryKind::sub ? -1.0 : 1.0;
                                       for (std::size_t o = 0; o < outer; ++o)
                                           kt.axpy(sign, g.data() + o * inner, gb.data(), inner);
                                   }
                               }
                           });
    }

    Broadcast bc = make_broadcast(as, bs, op);
    std::vector<double> out(numel(bc.out));
    for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (kind) {
            case BinaryKind::add: out[i] = av[ia] + bv[ib]; break;
            case BinaryKind::sub: out[i] = av[ia] - bv[ib]; break;
            case BinaryKind::mul: out[i] = av[ia] * bv[ib]; break;
        }
    });
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(op, bc.out, std::move(out), {ia, ib}, [ia, ib, kind, bc](Tape& t, const Tape::Node& self) {
        const auto& g = self.grad;
        const bool need_a = t.node(ia).requires_grad;
        const bool need_b = t.node(ib).requires_grad;
        std::vector<double>* ga = need_a ? &t.grad_of(ia) : nullptr;
        std::vector<double>* gb = need_b ? &t.grad_of(ib) : nullptr;
        const auto& av2 = t.node(ia).value;
        const auto& bv2 = t.node(ib).value;
        for_each_broadcast(bc, [&](std::size_t i, std::size_t xa, std::size_t xb) {
            switch (kind) {
                case BinaryKind::add:
                    if (ga) (*ga)[xa] += g[i];
                    if (gb) (*gb)[xb] += g[i];
                    break;
                case BinaryKind::sub:
                    if (ga) (*ga)[xa] += g[i];
                    if (gb) (*gb)[xb] -= g[i];
                    break;
                case BinaryKind::mul:
                    if (ga) (*ga)[xa] += g[i] * bv2[xb];
                    if (gb) (*gb)[xb] += g[i] * av2[xa];
                    break;
            }
        });
    });
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
    std::size_t outer;
    std::size_t length;
    std::size_t inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

std::vector<double> softmax_rows(std::span<const double> x, std::size_t cols, std::span<const double> mask) {
    std::vector<double> out(x.size());
    const std::size_t rows = cols == 0 ? 0 : x.size() / cols;
    const std::size_t msize = mask.size();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * cols;
        double* yr = out.data() + r * cols;
        const double* mr = msize ? mask.data() + (r * cols) % msize : nullptr;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = mr ? xr[c] + mr[c] : xr[c];
            yr[c] = v;
            mx = std::max(mx, v);
        }
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double e = std::isinf(yr[c]) && yr[c] < 0 ? 0.0 : std::exp(yr[c] - mx);
            yr[c] = e;
            total += e;
        }
        const double inv = 1.0 / total;
        for (std::size_t c = 0; c < cols; ++c) yr[c] *= inv;
    }
    return out;
}

void softmax_backward(Tape& t, const Tape::Node& self, std::size_t input) {
    const auto& y = self.value;
    const auto& g = self.grad;
    auto& gx = t.grad_of(input);
    const std::size_t cols = self.shape.back();
    const std::size_t rows = cols == 0 ? 0 : y.size() / cols;
    const auto& k = kernels::active();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = y.data() + r * cols;
        const double* gr = g.data() + r * cols;
        double* out = gx.data() + r * cols;
        const double s = k.dot(yr, gr, cols);
        for (std::size_t c = 0; c < cols; ++c) out[c] += yr[c] * (gr[c] - s);
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
    auto xv = x.value();
    std::vector<double> out(xv.begin(), xv.end());
    for (double& v : out) v *= factor;
    const std::size_t ix = x.id();
    return x.tape().record("scale", x.shape(), std::move(out), {ix}, [ix, factor](Tape& t, const Tape::Node& self) {
        kernels::active().axpy(factor, self.grad.data(), t.grad_of(ix).data(), self.grad.size());
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    same_tape(a, b, "matmul");
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(as) + " and " + shape_str(bs));
    const std::size_t m = as[as.size() - 2];
    const std::size_t kdim = as.back();
    const std::size_t kb = bs[bs.size() - 2];
    const std::size_t n = bs.back();
    if (kdim != kb) throw ShapeError("matmul: inner dimension mismatch " + shape_str(as) + " x " + shape_str(bs));
    const bool shared = bs.size() == 2;
    if (!shared && !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2))
        throw ShapeError("matmul: batch dimension mismatch " + shape_str(as) + " x " + shape_str(bs));

    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
    Shape out_shape(as.begin(), as.end() - 1);
    out_shape.push_back(n);

    const auto& k = kernels::active();
    auto av = a.value();
    auto bv = b.value();
    std::vector<double> out(numel(out_shape), 0.0);
    if (shared) {
        k.gemm_nn(av.data(), bv.data(), out.data(), batch * m, kdim, n);
    } else {
        for (std::size_t i = 0; i < batch; ++i)
            k.gemm_nn(av.data() + i * m * kdim, bv.data() + i * kdim * n, out.data() + i * m * n, m, kdim, n);
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record("matmul", std::move(out_shape), std::move(out), {ia, ib},
                           [ia, ib, batch, m, kdim, n, shared](Tape& t, const Tape::Node& self) {
                               const auto& kt = kernels::active();
                               const auto& g = self.grad;
                               const auto& av2 = t.node(ia).value;
                               const auto& bv2 = t.node(ib).value;
                               if (t.node(ia).requires_grad) {
                                   auto& ga = t.grad_of(ia);
                                   if (shared) {
                                       kt.gemm_nt(g.data(), bv2.data(), ga.data(), batch * m, n, kdim);
                                   } else {
                                       for (std::size_t i = 0; i < batch; ++i)
                                           kt.gemm_nt(g.data() + i * m * n, bv2.data() + i * kdim * n,
                                                      ga.data() + i * m * kdim, m, n, kdim);
                                   }
                               }
                               if (t.node(ib).requires_grad) {
                                   auto& gb = t.grad_of(ib);
                                   if (shared) {
                                       kt.gemm_tn(av2.data(), g.data(), gb.data(), batch * m, kdim, n);
                                   } else {
                                       for (std::size_t i = 0; i < batch; ++i)
                                           kt.gemm_tn(av2.data() + i * m * kdim, g.data() + i * m * n,
                                                      gb.data() + i * kdim * n, m, kdim, n);
                                   }
                               }
                           });
}

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm) {
    const Shape& xs = x.shape();
    const std::size_t r = xs.size();
    if (perm.size() != r) throw ShapeError("transpose: permutation rank mismatch for " + shape_str(xs));
    std::vector<bool> seen(r, false);
    for (std::size_t p : perm) {
        if (p >= r || seen[p]) throw ShapeError("transpose: invalid permutation for " + shape_str(xs));
        seen[p] = true;
    }
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * xs[d];
    Shape out_shape(r);
    std::vector<std::size_t> src_stride(r);
    for (std::size_t d = 0; d < r; ++d) {
        out_shape[d] = xs[perm[d]];
        src_stride[d] = in_stride[perm[d]];
    }
    // Offsets are shared by forward and backward, so compute them once.
    const std::size_t n = x.size();
    auto offsets = std::make_shared<std::vector<std::size_t>>(n);
    {
        std::vector<std::size_t> idx(r, 0);
        std::size_t off = 0;
        for (std::size_t i = 0; i < n; ++i) {
            (*offsets)[i] = off;
            for (std::size_t d = r; d-- > 0;) {
                ++idx[d];
                off += src_stride[d];
                if (idx[d] < out_shape[d]) break;
                off -= src_stride[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    }
    auto xv = x.value();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*offsets)[i]];
    const std::size_t ix = x.id();
    return x.tape().record("transpose", std::move(out_shape), std::move(out), {ix},
                           [ix, offsets](Tape& t, const Tape::Node& self) {
                               auto& gx = t.grad_of(ix);
                               const auto& g = self.grad;
                               for (std::size_t i = 0; i < g.size(); ++i) gx[(*offsets)[i]] += g[i];
                           });
}

Tensor transpose_last2(const Tensor& x) {
    const std::size_t r = x.rank();
    if (r < 2) throw ShapeError("transpose_last2: rank < 2 for " + shape_str(x.shape()));
    std::vector<std::size_t> perm(r);
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[r - 1], perm[r - 2]);
    return transpose(x, perm);
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto xv = x.value();
    std::vector<double> out(xv.begin(), xv.end());
    const std::size_t ix = x.id();
    return x.tape().record("reshape", std::move(shape), std::move(out), {ix}, [ix](Tape& t, const Tape::Node& self) {
        kernels::active().axpy(1.0, self.grad.data(), t.grad_of(ix).data(), self.grad.size());
    });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
    const Shape& xs = x.shape();
    if (begin >= end || end > xs[ax])
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         shape_str(xs));
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return index_select(x, static_cast<int>(ax), idx);
}

Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "index_select");
    const Shape& xs = x.shape();
    for (std::size_t i : indices)
        if (i >= xs[ax]) throw ShapeError("index_select: index " + std::to_string(i) + " out of range for " + shape_str(xs));
    const AxisSplit sp = split_axis(xs, ax);
    Shape out_shape = xs;
    out_shape[ax] = indices.size();
    auto xv = x.value();
    std::vector<double> out(numel(out_shape));
    const std::size_t nsel = indices.size();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < nsel; ++j)
            std::copy_n(xv.data() + (o * sp.length + indices[j]) * sp.inner, sp.inner,
                        out.data() + (o * nsel + j) * sp.inner);
    const std::size_t ix = x.id();
    return x.tape().record("index_select", std::move(out_shape), std::move(out), {ix},
                           [ix, sp, indices](Tape& t, const Tape::Node& self) {
                               auto& gx = t.grad_of(ix);
                               const auto& g = self.grad;
                               const auto& kt = kernels::active();
                               const std::size_t nsel2 = indices.size();
                               for (std::size_t o = 0; o < sp.outer; ++o)
                                   for (std::size_t j = 0; j < nsel2; ++j)
                                       kt.axpy(1.0, g.data() + (o * nsel2 + j) * sp.inner,
                                               gx.data() + (o * sp.length + indices[j]) * sp.inner, sp.inner);
                           });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts[0].shape();
    const std::size_t ax = normalize_axis(axis, first.size(), "concat");
    Shape out_shape = first;
    out_shape[ax] = 0;
    std::vector<std::size_t> ids;
    std::vector<std::size_t> lengths;
    for (const Tensor& p : parts) {
        same_tape(parts[0], p, "concat");
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == ax || s[d] == first[d];
        if (!ok) throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
        out_shape[ax] += s[ax];
        ids.push_back(p.id());
        lengths.push_back(s[ax]);
    }
    const AxisSplit sp = split_axis(out_shape, ax);
    std::vector<double> out(numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        auto pv = parts[pi].value();
        const std::size_t block = lengths[pi] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(pv.data() + o * block, block, out.data() + o * sp.length * sp.inner + offset * sp.inner);
        offset += lengths[pi];
    }
    auto inputs = ids;
    return parts[0].tape().record("concat", std::move(out_shape), std::move(out), std::move(inputs),
                                  [ids, lengths, sp](Tape& t, const Tape::Node& self) {
                                      const auto& g = self.grad;
                                      const auto& kt = kernels::active();
                                      std::size_t off = 0;
                                      for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                                          const std::size_t block = lengths[pi] * sp.inner;
                                          if (t.node(ids[pi]).requires_grad) {
                                              auto& gp = t.grad_of(ids[pi]);
                                              for (std::size_t o = 0; o < sp.outer; ++o)
                                                  kt.axpy(1.0, g.data() + o * sp.length * sp.inner + off * sp.inner,
                                                          gp.data() + o * block, block);
                                          }
                                          off += lengths[pi];
                                      }
                                  });
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "mean");
    const Shape& xs = x.shape();
    const AxisSplit sp = split_axis(xs, ax);
    Shape out_shape = xs;
    if (keepdim)
        out_shape[ax] = 1;
    else
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    auto xv = x.value();
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    const double inv = 1.0 / static_cast<double>(sp.length);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.length; ++l) {
            const double* src = xv.data() + (o * sp.length + l) * sp.inner;
            double* dst = out.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    for (double& v : out) v *= inv;
    const std::size_t ix = x.id();
    return x.tape().record("mean", std::move(out_shape), std::move(out), {ix},
                           [ix, sp, inv](Tape& t, const Tape::Node& self) {
                               auto& gx = t.grad_of(ix);
                               const auto& g = self.grad;
                               for (std::size_t o = 0; o < sp.outer; ++o)
                                   for (std::size_t l = 0; l < sp.length; ++l)
                                       kernels::active().axpy(inv, g.data() + o * sp.inner,
                                                              gx.data() + (o * sp.length + l) * sp.inner, sp.inner);
                           });
}

Tensor softmax(const Tensor& x) {
    if (x.rank() == 0) throw ShapeError("softmax: scalar input");
    const std::size_t cols = x.shape().back();
    std::vector<double> out = softmax_rows(x.value(), cols, {});
    const std::size_t ix = x.id();
    return x.tape().record("softmax", x.shape(), std::move(out), {ix},
                           [ix](Tape& t, const Tape::Node& self) { softmax_backward(t, self, ix); });
}

Tensor masked_softmax(const Tensor& x, const Tensor& mask) {
    same_tape(x, mask, "masked_softmax");
    const Shape& xs = x.shape();
    const Shape& ms = mask.shape();
    if (ms.size() > xs.size() || !std::equal(ms.rbegin(), ms.rend(), xs.rbegin()))
        throw ShapeError("masked_softmax: mask " + shape_str(ms) + " is not a suffix of " + shape_str(xs));
    if (mask.requires_grad()) throw std::invalid_argument("masked_softmax: mask must be constant");
    const std::size_t cols = xs.back();
    std::vector<double> out = softmax_rows(x.value(), cols, mask.value());
    const std::size_t ix = x.id();
    return x.tape().record("masked_softmax", xs, std::move(out), {ix},
                           [ix](Tape& t, const Tape::Node& self) { softmax_backward(t, self, ix); });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor leaky_relu(const Tensor& x, double slope) {
    auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
    const std::size_t ix = x.id();
    return x.tape().record(slope == 0.0 ? "relu" : "leaky_relu", x.shape(), std::move(out), {ix},
                           [ix, slope](Tape& t, const Tape::Node& self) {
                               auto& gx = t.grad_of(ix);
                               const auto& xv2 = t.node(ix).value;
                               const auto& g = self.grad;
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv2[i] > 0.0 ? g[i] : slope * g[i];
                           });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    same_tape(x, gain, "layer_norm");
    same_tape(x, bias, "layer_norm");
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match feature size of " + shape_str(x.shape()));
    const std::size_t rows = x.size() / d;
    auto xv = x.value();
    auto gv = gain.value();
    auto bv = bias.value();
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += xr[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (xr[c] - mu) * is;
            (*xhat)[r * d + c] = h;
            out[r * d + c] = h * gv[c] + bv[c];
        }
    }
    const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
    return x.tape().record("layer_norm", x.shape(), std::move(out), {ix, ig, ib},
                           [ix, ig, ib, d, rows, xhat, inv_std](Tape& t, const Tape::Node& self) {
                               const auto& g = self.grad;
                               const auto& gv2 = t.node(ig).value;
                               if (t.node(ig).requires_grad) {
                                   auto& gg = t.grad_of(ig);
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * (*xhat)[r * d + c];
                               }
                               if (t.node(ib).requires_grad) {
                                   auto& gb = t.grad_of(ib);
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
                               }
                               if (t.node(ix).requires_grad) {
                                   auto& gx = t.grad_of(ix);
                                   std::vector<double> dxhat(d);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       double m1 = 0.0, m2 = 0.0;
                                       for (std::size_t c = 0; c < d; ++c) {
                                           dxhat[c] = g[r * d + c] * gv2[c];
                                           m1 += dxhat[c];
                                           m2 += dxhat[c] * (*xhat)[r * d + c];
                                       }
                                       m1 /= static_cast<double>(d);
                                       m2 /= static_cast<double>(d);
                                       const double is = (*inv_std)[r];
                                       for (std::size_t c = 0; c < d; ++c)
                                           gx[r * d + c] += is * (dxhat[c] - m1 - (*xhat)[r * d + c] * m2);
                                   }
                               }
                           });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    auto xv = x.value();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        (*mask)[i] = u < p ? 0.0 : keep_scale;
        out[i] = xv[i] * (*mask)[i];
    }
    const std::size_t ix = x.id();
    return x.tape().record("dropout", x.shape(), std::move(out), {ix}, [ix, mask](Tape& t, const Tape::Node& self) {
        auto& gx = t.grad_of(ix);
        const auto& g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    same_tape(pred, target, "mse_loss");
    if (pred.shape() != target.shape())
        throw ShapeError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    auto pv = pred.value();
    auto tv = target.value();
    const std::size_t n = pv.size();
    if (n == 0) throw ShapeError("mse_loss: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += (pv[i] - tv[i]) * (pv[i] - tv[i]);
    const std::size_t ip = pred.id(), it = target.id();
    return pred.tape().record("mse_loss", Shape{}, {acc / static_cast<double>(n)}, {ip, it},
                              [ip, it, n](Tape& t, const Tape::Node& self) {
                                  const double g = self.grad[0] * 2.0 / static_cast<double>(n);
                                  const auto& pv2 = t.node(ip).value;
                                  const auto& tv2 = t.node(it).value;
                                  if (t.node(ip).requires_grad) {
                                      auto& gp = t.grad_of(ip);
                                      for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pv2[i] - tv2[i]);
                                  }
                                  if (t.node(it).requires_grad) {
                                      auto& gt = t.grad_of(it);
                                      for (std::size_t i = 0; i < n; ++i) gt[i] -= g * (pv2[i] - tv2[i]);
                                  }
                              });
}

Tensor sum_all(const Tensor& x) {
    const std::size_t n = x.size();
    return scale(mean(reshape(x, {n}), 0), static_cast<double>(n));
}

Tensor causal_mask(Tape& tape, std::size_t n) {
    std::vector<double> m(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -std::numeric_limits<double>::infinity();
    // Built directly: record() rejects non-finite values.
    return tape.constant({n, n}, std::move(m));
}

}  // namespace hypercast::ad
