#include "acunet/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <utility>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace acunet {

namespace {

// ---- small dense kernels ----------------------------------------------
// Row-major GEMMs, tiled on the wide axis so the tile under reduction stays
// in cache, with 4-wide unrolling on the reduction axis. Within a factor of
// a few of tuned BLAS at the shapes used here.

constexpr int kTileN = 512;

// Shared inner stripe for the saxpy-style GEMMs: four C rows in flight,
// two reduction steps per pass, scalars fetched through `a_at(k, row)`.
template <typename AAt>
void gemm_rows4(int M, int N, int K, AAt&& a_at, const double* __restrict B,
                double* __restrict C, int n0, int n1) {
    int m = 0;
    for (; m + 4 <= M; m += 4) {
        double* c0 = C + static_cast<size_t>(m) * N;
        double* c1 = c0 + N;
        double* c2 = c1 + N;
        double* c3 = c2 + N;
        int k = 0;
        for (; k + 2 <= K; k += 2) {
            const double* b0 = B + static_cast<size_t>(k) * N;
            const double* b1 = b0 + N;
            const double a00 = a_at(k, m), a01 = a_at(k + 1, m);
            const double a10 = a_at(k, m + 1), a11 = a_at(k + 1, m + 1);
            const double a20 = a_at(k, m + 2), a21 = a_at(k + 1, m + 2);
            const double a30 = a_at(k, m + 3), a31 = a_at(k + 1, m + 3);
            for (int n = n0; n < n1; ++n) {
                const double bv0 = b0[n], bv1 = b1[n];
                c0[n] += a00 * bv0 + a01 * bv1;
                c1[n] += a10 * bv0 + a11 * bv1;
                c2[n] += a20 * bv0 + a21 * bv1;
                c3[n] += a30 * bv0 + a31 * bv1;
            }
        }
        for (; k < K; ++k) {
            const double* b = B + static_cast<size_t>(k) * N;
            const double v0 = a_at(k, m), v1 = a_at(k, m + 1);
            const double v2 = a_at(k, m + 2), v3 = a_at(k, m + 3);
            for (int n = n0; n < n1; ++n) {
                const double bv = b[n];
                c0[n] += v0 * bv;
                c1[n] += v1 * bv;
                c2[n] += v2 * bv;
                c3[n] += v3 * bv;
            }
        }
    }
    for (; m < M; ++m) {
        double* c = C + static_cast<size_t>(m) * N;
        int k = 0;
        for (; k + 2 <= K; k += 2) {
            const double* b0 = B + static_cast<size_t>(k) * N;
            const double* b1 = b0 + N;
            const double a0 = a_at(k, m), a1 = a_at(k + 1, m);
            for (int n = n0; n < n1; ++n) c[n] += a0 * b0[n] + a1 * b1[n];
        }
        for (; k < K; ++k) {
            const double av = a_at(k, m);
            const double* b = B + static_cast<size_t>(k) * N;
            for (int n = n0; n < n1; ++n) c[n] += av * b[n];
        }
    }
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(int M, int N, int K, const double* __restrict A, const double* __restrict B,
          double* __restrict C) {
    for (int n0 = 0; n0 < N; n0 += kTileN) {
        const int n1 = std::min(N, n0 + kTileN);
        gemm_rows4(
            M, N, K,
            [A, K](int k, int m) { return A[static_cast<size_t>(m) * K + k]; }, B, C, n0, n1);
    }
}

// C[M,N] += A[M,K] * B[N,K]^T; K is the wide axis here, so the dot products
// run over K tiles with 4 rows of A in flight.
void gemm_nt(int M, int N, int K, const double* __restrict A, const double* __restrict B,
          double* __restrict C) {
    for (int k0 = 0; k0 < K; k0 += kTileN) {
        const int k1 = std::min(K, k0 + kTileN);
        int m = 0;
        for (; m + 4 <= M; m += 4) {
            const double* a0 = A + static_cast<size_t>(m) * K;
            const double* a1 = a0 + K;
            const double* a2 = a1 + K;
            const double* a3 = a2 + K;
            for (int n = 0; n < N; ++n) {
                const double* b = B + static_cast<size_t>(n) * K;
                double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
                for (int k = k0; k < k1; ++k) {
                    const double bv = b[k];
                    s0 += a0[k] * bv;
                    s1 += a1[k] * bv;
                    s2 += a2[k] * bv;
                    s3 += a3[k] * bv;
                }
                C[static_cast<size_t>(m) * N + n] += s0;
                C[static_cast<size_t>(m + 1) * N + n] += s1;
                C[static_cast<size_t>(m + 2) * N + n] += s2;
                C[static_cast<size_t>(m + 3) * N + n] += s3;
            }
        }
        for (; m < M; ++m) {
            const double* a = A + static_cast<size_t>(m) * K;
            for (int n = 0; n < N; ++n) {
                const double* b = B + static_cast<size_t>(n) * K;
                double s = 0;
                for (int k = k0; k < k1; ++k) s += a[k] * b[k];
                C[static_cast<size_t>(m) * N + n] += s;
            }
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(int M, int N, int K, const double* __restrict A, const double* __restrict B,
          double* __restrict C) {
    for (int n0 = 0; n0 < N; n0 += kTileN) {
        const int n1 = std::min(N, n0 + kTileN);
        gemm_rows4(
            M, N, K,
            [A, M](int k, int m) { return A[static_cast<size_t>(k) * M + m]; }, B, C, n0, n1);
    }
}

// Direct 3x3 stride-1 same-padded convolution of one sample, accumulating
// into `out` (K planes of H x W). Everything stays cache-resident; this is
// the hot path for the U-Net blocks.
void conv3x3_same_acc(const double* __restrict x, int C, int H, int W,
                      const double* __restrict w, int K, double* __restrict out) {
    for (int k = 0; k < K; ++k) {
        double* ok = out + static_cast<size_t>(k) * H * W;
        for (int c = 0; c < C; ++c) {
            const double* xc = x + static_cast<size_t>(c) * H * W;
            const double* wk = w + (static_cast<size_t>(k) * C + c) * 9;
            const double w00 = wk[0], w01 = wk[1], w02 = wk[2];
            const double w10 = wk[3], w11 = wk[4], w12 = wk[5];
            const double w20 = wk[6], w21 = wk[7], w22 = wk[8];
            for (int oh = 0; oh < H; ++oh) {
                const double* r0 = oh > 0 ? xc + static_cast<size_t>(oh - 1) * W : nullptr;
                const double* r1 = xc + static_cast<size_t>(oh) * W;
                const double* r2 = oh < H - 1 ? xc + static_cast<size_t>(oh + 1) * W : nullptr;
                double* orow = ok + static_cast<size_t>(oh) * W;
                if (r0 && r2) {
                    for (int ow = 1; ow < W - 1; ++ow) {
                        orow[ow] += w00 * r0[ow - 1] + w01 * r0[ow] + w02 * r0[ow + 1] +
                                    w10 * r1[ow - 1] + w11 * r1[ow] + w12 * r1[ow + 1] +
                                    w20 * r2[ow - 1] + w21 * r2[ow] + w22 * r2[ow + 1];
                    }
                    orow[0] += w01 * r0[0] + w02 * r0[1] + w11 * r1[0] + w12 * r1[1] +
                               w21 * r2[0] + w22 * r2[1];
                    orow[W - 1] += w00 * r0[W - 2] + w01 * r0[W - 1] + w10 * r1[W - 2] +
                                   w11 * r1[W - 1] + w20 * r2[W - 2] + w21 * r2[W - 1];
                } else {
                    const double* ra = r0 ? r0 : r1;
                    const double* rb = r0 ? r1 : r2;
                    const double wa0 = r0 ? w00 : w10, wa1 = r0 ? w01 : w11,
                                 wa2 = r0 ? w02 : w12;
                    const double wb0 = r0 ? w10 : w20, wb1 = r0 ? w11 : w21,
                                 wb2 = r0 ? w12 : w22;
                    for (int ow = 1; ow < W - 1; ++ow) {
                        orow[ow] += wa0 * ra[ow - 1] + wa1 * ra[ow] + wa2 * ra[ow + 1] +
                                    wb0 * rb[ow - 1] + wb1 * rb[ow] + wb2 * rb[ow + 1];
                    }
                    orow[0] += wa1 * ra[0] + wa2 * ra[1] + wb1 * rb[0] + wb2 * rb[1];
                    orow[W - 1] += wa0 * ra[W - 2] + wa1 * ra[W - 1] + wb0 * rb[W - 2] +
                                   wb1 * rb[W - 1];
                }
            }
        }
    }
}

// Weight gradient of the same 3x3 stride-1 same-padded convolution:
// dw[k,c,i,j] += sum over the valid window of g[k] * shifted x[c].
void conv3x3_same_dw(const double* __restrict x, int C, int H, int W,
                     const double* __restrict g, int K, double* __restrict dw) {
    for (int k = 0; k < K; ++k) {
        const double* gk = g + static_cast<size_t>(k) * H * W;
        for (int c = 0; c < C; ++c) {
            const double* xc = x + static_cast<size_t>(c) * H * W;
            double acc[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
            for (int oh = 0; oh < H; ++oh) {
                const double* grow = gk + static_cast<size_t>(oh) * W;
                for (int i = 0; i < 3; ++i) {
                    const int ih = oh + i - 1;
                    if (ih < 0 || ih >= H) continue;
                    const double* xr = xc + static_cast<size_t>(ih) * W;
                    double s0 = 0, s1 = 0, s2 = 0;
                    for (int ow = 1; ow < W - 1; ++ow) {
                        const double gv = grow[ow];
                        s0 += gv * xr[ow - 1];
                        s1 += gv * xr[ow];
                        s2 += gv * xr[ow + 1];
                    }
                    s1 += grow[0] * xr[0];
                    s2 += grow[0] * xr[1];
                    s0 += grow[W - 1] * xr[W - 2];
                    s1 += grow[W - 1] * xr[W - 1];
                    acc[i * 3 + 0] += s0;
                    acc[i * 3 + 1] += s1;
                    acc[i * 3 + 2] += s2;
                }
            }
            double* d = dw + (static_cast<size_t>(k) * C + c) * 9;
            for (int t = 0; t < 9; ++t) d[t] += acc[t];
        }
    }
}

// col[(c*kh+i)*kw+j, oh*OW+ow] = in[c, oh*stride+i-pad, ow*stride+j-pad], 0 outside.
void im2col(const double* __restrict in, int C, int H, int W, int kh, int kw, int stride,
            int pad, int OH, int OW, double* __restrict col) {
    for (int c = 0; c < C; ++c) {
        const double* inc = in + static_cast<size_t>(c) * H * W;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                double* row = col + (static_cast<size_t>(c) * kh * kw +
                                     static_cast<size_t>(i) * kw + j) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride + i - pad;
                    double* dst = row + static_cast<size_t>(oh) * OW;
                    if (ih < 0 || ih >= H) {
                        std::fill(dst, dst + OW, 0.0);
                        continue;
                    }
                    const double* src = inc + static_cast<size_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride + j - pad;
                        dst[ow] = (iw < 0 || iw >= W) ? 0.0 : src[iw];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add the column matrix back into image layout.
void col2im_add(const double* __restrict col, int C, int H, int W, int kh, int kw,
                int stride, int pad, int OH, int OW, double* __restrict in_grad) {
    for (int c = 0; c < C; ++c) {
        double* inc = in_grad + static_cast<size_t>(c) * H * W;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const double* row = col + (static_cast<size_t>(c) * kh * kw +
                                           static_cast<size_t>(i) * kw + j) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride + i - pad;
                    if (ih < 0 || ih >= H) continue;
                    const double* src = row + static_cast<size_t>(oh) * OW;
                    double* dst = inc + static_cast<size_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride + j - pad;
                        if (iw >= 0 && iw < W) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

bool want_grad(std::initializer_list<const Tensor*> ins) {
    for (const Tensor* t : ins) {
        if (t->requires_grad()) return true;
    }
    return false;
}

}  // namespace

// ---- Tensor -------------------------------------------------------------

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void tune_allocator() {
#ifdef __GLIBC__
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)done;
#endif
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::make(std::vector<int> shape, bool requires_grad) {
    for (int d : shape) {
        if (d < 0) throw DimensionError("tensor: negative dimension in " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(shape_numel(n->shape)), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return make(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = make(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw DimensionError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
    }
    Tensor t = make(std::move(shape), requires_grad);
    t.data() = std::move(values);
    return t;
}

std::vector<double>& Tensor::grad() {
    ensure_grad();
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    return node_->grad;
}

void Tensor::ensure_grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    auto n = std::make_shared<Node>(*node_);
    return Tensor(std::move(n));
}

// ---- GradTape -------------------------------------------------------------

void GradTape::record(Tensor output, std::function<void()> backward_fn) {
    entries_.push_back(Entry{std::move(output), std::move(backward_fn)});
}

void GradTape::backward(Tensor loss) {
    if (entries_.empty()) throw Error("backward: tape is empty");
    if (loss.numel() != 1) {
        throw Error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    loss.ensure_grad();
    loss.grad()[0] = 1.0;
    for (size_t i = entries_.size(); i-- > 0;) {
        Entry& e = entries_[i];
        if (e.output.has_grad()) {
            e.backward_fn();
        }
        // This output's grad has now been fully consumed by its producer.
        e.output.free_grad();
    }
    clear();
}

void GradTape::clear() {
    entries_.clear();
}

// ---- conv2d ----------------------------------------------------------------

Tensor conv2d(GradTape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    check(input.ndim() == 4, "conv2d: input must be 4-D [B,C,H,W], got " + shape_str(input.shape()));
    check(weight.ndim() == 4, "conv2d: weight must be 4-D [K,C,kh,kw], got " + shape_str(weight.shape()));
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int K = weight.dim(0), WC = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    check(WC == C, "conv2d: input channel axis 1 is " + std::to_string(C) +
                       " but weight expects " + std::to_string(WC));
    check(bias.ndim() == 1 && bias.dim(0) == K,
          "conv2d: bias must be [K=" + std::to_string(K) + "], got " + shape_str(bias.shape()));
    if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
    if (padding < 0) throw ArgumentError("conv2d: padding must be >= 0");
    check(kh <= H + 2 * padding && kw <= W + 2 * padding,
          "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
              " exceeds padded input " + std::to_string(H + 2 * padding) + "x" +
              std::to_string(W + 2 * padding));

    const int OH = (H + 2 * padding - kh) / stride + 1;
    const int OW = (W + 2 * padding - kw) / stride + 1;
    const int ckk = C * kh * kw;
    const int64_t ohw = static_cast<int64_t>(OH) * OW;

    // Same-padded 3x3 stride-1 convs on large maps skip im2col entirely;
    // small deep maps stay on the GEMM path where it runs faster.
    const bool direct3x3 = stride == 1 && kh == 3 && kw == 3 && padding == 1 && H >= 2 &&
                           W >= 2 && static_cast<int64_t>(H) * W >= 1024;
    const bool direct1x1 = stride == 1 && kh == 1 && kw == 1 && padding == 0;

    Tensor out = Tensor::zeros({B, K, OH, OW});
    std::vector<double> col;
    if (!direct3x3 && !direct1x1) col.resize(static_cast<size_t>(ckk) * ohw);
    const double* wd = weight.data().data();
    const double* bd = bias.data().data();
    for (int b = 0; b < B; ++b) {
        const double* in_b = input.data().data() + static_cast<size_t>(b) * C * H * W;
        double* out_b = out.data().data() + static_cast<size_t>(b) * K * ohw;
        for (int k = 0; k < K; ++k) {
            std::fill(out_b + static_cast<size_t>(k) * ohw, out_b + static_cast<size_t>(k + 1) * ohw,
                      bd[k]);
        }
        if (direct3x3) {
            conv3x3_same_acc(in_b, C, H, W, wd, K, out_b);
        } else if (direct1x1) {
            gemm_nn(K, static_cast<int>(ohw), C, wd, in_b, out_b);
        } else {
            im2col(in_b, C, H, W, kh, kw, stride, padding, OH, OW, col.data());
            gemm_nn(K, static_cast<int>(ohw), ckk, wd, col.data(), out_b);
        }
    }

    if (tape && want_grad({&input, &weight, &bias})) {
        out.set_requires_grad(true);
        Tensor in_c = input, w_c = weight, b_c = bias, out_c = out;
        tape->record(out, [in_c, w_c, b_c, out_c, B, C, H, W, K, kh, kw, stride, padding, OH,
                           OW]() mutable {
            const int ckk = C * kh * kw;
            const int64_t ohw = static_cast<int64_t>(OH) * OW;
            const std::vector<double>& go = out_c.grad();
            if (b_c.requires_grad()) {
                std::vector<double>& gb = b_c.grad();
                for (int b = 0; b < B; ++b) {
                    const double* g = go.data() + static_cast<size_t>(b) * K * ohw;
                    for (int k = 0; k < K; ++k) {
                        double s = 0;
                        const double* gk = g + static_cast<size_t>(k) * ohw;
                        for (int64_t n = 0; n < ohw; ++n) s += gk[n];
                        gb[static_cast<size_t>(k)] += s;
                    }
                }
            }
            const bool need_w = w_c.requires_grad();
            const bool need_in = in_c.requires_grad();
            if (!need_w && !need_in) return;

            const bool direct3x3 = stride == 1 && kh == 3 && kw == 3 && padding == 1 &&
                                   H >= 2 && W >= 2 && static_cast<int64_t>(H) * W >= 1024;
            const bool direct1x1 = stride == 1 && kh == 1 && kw == 1 && padding == 0;
            const bool generic = !direct3x3 && !direct1x1;

            std::vector<double> col;
            std::vector<double> wflip;  // [C, K, kh, kw], for the direct input pass
            std::vector<double> wt;     // weight transposed to [ckk, K]
            std::vector<double> dcol;
            if (generic) col.resize(static_cast<size_t>(ckk) * ohw);
            if (need_in) {
                in_c.ensure_grad();
                const double* wd = w_c.data().data();
                if (direct3x3) {
                    // input gradient = convolution of g with the flipped kernel
                    wflip.resize(static_cast<size_t>(C) * K * 9);
                    for (int k = 0; k < K; ++k) {
                        for (int c = 0; c < C; ++c) {
                            for (int t = 0; t < 9; ++t) {
                                wflip[(static_cast<size_t>(c) * K + k) * 9 + (8 - t)] =
                                    wd[(static_cast<size_t>(k) * C + c) * 9 + t];
                            }
                        }
                    }
                } else if (generic || direct1x1) {
                    wt.assign(static_cast<size_t>(ckk) * K, 0.0);
                    for (int k = 0; k < K; ++k) {
                        for (int r = 0; r < ckk; ++r) {
                            wt[static_cast<size_t>(r) * K + k] =
                                wd[static_cast<size_t>(k) * ckk + r];
                        }
                    }
                    if (generic) dcol.assign(static_cast<size_t>(ckk) * ohw, 0.0);
                }
            }
            if (need_w) w_c.ensure_grad();

            for (int b = 0; b < B; ++b) {
                const double* g = go.data() + static_cast<size_t>(b) * K * ohw;
                const double* in_b = in_c.data().data() + static_cast<size_t>(b) * C * H * W;
                if (need_w) {
                    if (direct3x3) {
                        conv3x3_same_dw(in_b, C, H, W, g, K, w_c.grad().data());
                    } else if (direct1x1) {
                        gemm_nt(K, C, static_cast<int>(ohw), g, in_b, w_c.grad().data());
                    } else {
                        im2col(in_b, C, H, W, kh, kw, stride, padding, OH, OW, col.data());
                        gemm_nt(K, ckk, static_cast<int>(ohw), g, col.data(), w_c.grad().data());
                    }
                }
                if (need_in) {
                    double* gi = in_c.grad().data() + static_cast<size_t>(b) * C * H * W;
                    if (direct3x3) {
                        conv3x3_same_acc(g, K, H, W, wflip.data(), C, gi);
                    } else if (direct1x1) {
                        gemm_nn(C, static_cast<int>(ohw), K, wt.data(), g, gi);
                    } else {
                        std::fill(dcol.begin(), dcol.end(), 0.0);
                        gemm_nn(ckk, static_cast<int>(ohw), K, wt.data(), g, dcol.data());
                        col2im_add(dcol.data(), C, H, W, kh, kw, stride, padding, OH, OW, gi);
                    }
                }
            }
        });
    }
    return out;
}

// ---- conv_transpose2d -------------------------------------------------------

Tensor conv_transpose2d(GradTape* tape, const Tensor& input, const Tensor& weight,
                        const Tensor& bias) {
    check(input.ndim() == 4,
          "conv_transpose2d: input must be 4-D [B,C,H,W], got " + shape_str(input.shape()));
    check(weight.ndim() == 4 && weight.dim(2) == 2 && weight.dim(3) == 2,
          "conv_transpose2d: weight must be [C,K,2,2], got " + shape_str(weight.shape()));
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int WC = weight.dim(0), K = weight.dim(1);
    check(WC == C, "conv_transpose2d: input channel axis 1 is " + std::to_string(C) +
                       " but weight expects " + std::to_string(WC));
    check(bias.ndim() == 1 && bias.dim(0) == K,
          "conv_transpose2d: bias must be [K=" + std::to_string(K) + "], got " +
              shape_str(bias.shape()));

    const int OH = 2 * H, OW = 2 * W;
    Tensor out = Tensor::zeros({B, K, OH, OW});
    const double* wd = weight.data().data();
    const double* bd = bias.data().data();
    for (int b = 0; b < B; ++b) {
        const double* in_b = input.data().data() + static_cast<size_t>(b) * C * H * W;
        double* out_b = out.data().data() + static_cast<size_t>(b) * K * OH * OW;
        for (int k = 0; k < K; ++k) {
            std::fill(out_b + static_cast<size_t>(k) * OH * OW,
                      out_b + static_cast<size_t>(k + 1) * OH * OW, bd[k]);
        }
        for (int c = 0; c < C; ++c) {
            const double* in_c = in_b + static_cast<size_t>(c) * H * W;
            for (int k = 0; k < K; ++k) {
                const double* wck = wd + (static_cast<size_t>(c) * K + k) * 4;
                double* oc = out_b + static_cast<size_t>(k) * OH * OW;
                for (int h = 0; h < H; ++h) {
                    const double* ir = in_c + static_cast<size_t>(h) * W;
                    double* o0 = oc + static_cast<size_t>(2 * h) * OW;
                    double* o1 = o0 + OW;
                    for (int w = 0; w < W; ++w) {
                        const double v = ir[w];
                        o0[2 * w] += v * wck[0];
                        o0[2 * w + 1] += v * wck[1];
                        o1[2 * w] += v * wck[2];
                        o1[2 * w + 1] += v * wck[3];
                    }
                }
            }
        }
    }

    if (tape && want_grad({&input, &weight, &bias})) {
        out.set_requires_grad(true);
        Tensor in_c = input, w_c = weight, b_c = bias, out_c = out;
        tape->record(out, [in_c, w_c, b_c, out_c, B, C, H, W, K, OH, OW]() mutable {
            const std::vector<double>& go = out_c.grad();
            if (b_c.requires_grad()) {
                std::vector<double>& gb = b_c.grad();
                for (int b = 0; b < B; ++b) {
                    for (int k = 0; k < K; ++k) {
                        const double* g =
                            go.data() + (static_cast<size_t>(b) * K + k) * OH * OW;
                        double s = 0;
                        for (int64_t n = 0; n < static_cast<int64_t>(OH) * OW; ++n) s += g[n];
                        gb[static_cast<size_t>(k)] += s;
                    }
                }
            }
            const bool need_w = w_c.requires_grad();
            const bool need_in = in_c.requires_grad();
            if (!need_w && !need_in) return;
            if (need_w) w_c.ensure_grad();
            if (need_in) in_c.ensure_grad();
            const double* wd = w_c.data().data();
            for (int b = 0; b < B; ++b) {
                const double* in_b = in_c.data().data() + static_cast<size_t>(b) * C * H * W;
                const double* go_b = go.data() + static_cast<size_t>(b) * K * OH * OW;
                for (int c = 0; c < C; ++c) {
                    for (int k = 0; k < K; ++k) {
                        const double* g = go_b + static_cast<size_t>(k) * OH * OW;
                        const double* wck = wd + (static_cast<size_t>(c) * K + k) * 4;
                        double* gw = need_w ? w_c.grad().data() + (static_cast<size_t>(c) * K + k) * 4
                                            : nullptr;
                        double gw0 = 0, gw1 = 0, gw2 = 0, gw3 = 0;
                        for (int h = 0; h < H; ++h) {
                            const double* g0 = g + static_cast<size_t>(2 * h) * OW;
                            const double* g1 = g0 + OW;
                            const double* ir = in_b + static_cast<size_t>(c) * H * W +
                                               static_cast<size_t>(h) * W;
                            double* gi = need_in ? in_c.grad().data() +
                                                       static_cast<size_t>(b) * C * H * W +
                                                       static_cast<size_t>(c) * H * W +
                                                       static_cast<size_t>(h) * W
                                                 : nullptr;
                            for (int w = 0; w < W; ++w) {
                                const double a = g0[2 * w], bv = g0[2 * w + 1];
                                const double cv = g1[2 * w], dv = g1[2 * w + 1];
                                if (need_in) {
                                    gi[w] += a * wck[0] + bv * wck[1] + cv * wck[2] + dv * wck[3];
                                }
                                if (need_w) {
                                    const double x = ir[w];
                                    gw0 += x * a;
                                    gw1 += x * bv;
                                    gw2 += x * cv;
                                    gw3 += x * dv;
                                }
                            }
                        }
                        if (need_w) {
                            gw[0] += gw0;
                            gw[1] += gw1;
                            gw[2] += gw2;
                            gw[3] += gw3;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---- max_pool2d --------------------------------------------------------------

Tensor max_pool2d(GradTape* tape, const Tensor& input) {
    check(input.ndim() == 4,
          "max_pool2d: input must be 4-D [B,C,H,W], got " + shape_str(input.shape()));
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    check(H % 2 == 0, "max_pool2d: spatial axis 2 has odd size " + std::to_string(H));
    check(W % 2 == 0, "max_pool2d: spatial axis 3 has odd size " + std::to_string(W));
    const int OH = H / 2, OW = W / 2;

    Tensor out = Tensor::zeros({B, C, OH, OW});
    auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(out.numel()));
    const double* in = input.data().data();
    double* o = out.data().data();
    int64_t oi = 0;
    for (int bc = 0; bc < B * C; ++bc) {
        const double* plane = in + static_cast<size_t>(bc) * H * W;
        for (int oh = 0; oh < OH; ++oh) {
            const double* r0 = plane + static_cast<size_t>(2 * oh) * W;
            const double* r1 = r0 + W;
            for (int ow = 0; ow < OW; ++ow, ++oi) {
                // first (row-major) occurrence wins on ties
                int off = 0;
                double best = r0[2 * ow];
                if (r0[2 * ow + 1] > best) { best = r0[2 * ow + 1]; off = 1; }
                if (r1[2 * ow] > best) { best = r1[2 * ow]; off = 2; }
                if (r1[2 * ow + 1] > best) { best = r1[2 * ow + 1]; off = 3; }
                o[oi] = best;
                const int ih = 2 * oh + off / 2, iw = 2 * ow + off % 2;
                (*argmax)[static_cast<size_t>(oi)] =
                    static_cast<int32_t>(static_cast<int64_t>(ih) * W + iw);
            }
        }
    }

    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        Tensor in_c = input, out_c = out;
        tape->record(out, [in_c, out_c, argmax, B, C, H, W, OH, OW]() mutable {
            in_c.ensure_grad();
            const std::vector<double>& go = out_c.grad();
            double* gi = in_c.grad().data();
            int64_t oi = 0;
            for (int bc = 0; bc < B * C; ++bc) {
                double* plane = gi + static_cast<size_t>(bc) * H * W;
                const int64_t n = static_cast<int64_t>(OH) * OW;
                for (int64_t j = 0; j < n; ++j, ++oi) {
                    plane[(*argmax)[static_cast<size_t>(oi)]] += go[static_cast<size_t>(oi)];
                }
            }
        });
    }
    return out;
}

// ---- batch_norm ----------------------------------------------------------------

BatchNormParams make_batch_norm(int channels, double momentum, double epsilon) {
    BatchNormParams p;
    p.scale = Tensor::full({channels}, 1.0, true);
    p.shift = Tensor::zeros({channels}, true);
    p.running_mean = Tensor::zeros({channels});
    p.running_var = Tensor::full({channels}, 1.0);
    p.momentum = momentum;
    p.epsilon = epsilon;
    return p;
}

Tensor batch_norm(GradTape* tape, const Tensor& input, BatchNormParams& params, bool training) {
    check(input.ndim() == 2 || input.ndim() == 4,
          "batch_norm: input must be [B,K] or [B,K,H,W], got " + shape_str(input.shape()));
    const int B = input.dim(0), K = input.dim(1);
    const int HW = input.ndim() == 4 ? input.dim(2) * input.dim(3) : 1;
    check(params.scale.dim(0) == K, "batch_norm: channel axis 1 is " + std::to_string(K) +
                                        " but params expect " + std::to_string(params.scale.dim(0)));
    const int64_t n_per_ch = static_cast<int64_t>(B) * HW;
    check(n_per_ch >= 1, "batch_norm: empty batch");
    if (params.epsilon <= 0) throw ArgumentError("batch_norm: epsilon must be > 0");

    auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(K), 0.0);
    auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(K), 0.0);
    const double* in = input.data().data();

    if (training) {
        for (int k = 0; k < K; ++k) {
            double s = 0;
            for (int b = 0; b < B; ++b) {
                const double* p = in + (static_cast<size_t>(b) * K + k) * HW;
                for (int i = 0; i < HW; ++i) s += p[i];
            }
            (*mean)[static_cast<size_t>(k)] = s / static_cast<double>(n_per_ch);
        }
        for (int k = 0; k < K; ++k) {
            const double m = (*mean)[static_cast<size_t>(k)];
            double s = 0;
            for (int b = 0; b < B; ++b) {
                const double* p = in + (static_cast<size_t>(b) * K + k) * HW;
                for (int i = 0; i < HW; ++i) {
                    const double d = p[i] - m;
                    s += d * d;
                }
            }
            const double var = s / static_cast<double>(n_per_ch);
            (*invstd)[static_cast<size_t>(k)] = 1.0 / std::sqrt(var + params.epsilon);
            params.running_mean.data()[static_cast<size_t>(k)] =
                params.momentum * params.running_mean.data()[static_cast<size_t>(k)] +
                (1.0 - params.momentum) * m;
            params.running_var.data()[static_cast<size_t>(k)] =
                params.momentum * params.running_var.data()[static_cast<size_t>(k)] +
                (1.0 - params.momentum) * var;
        }
    } else {
        for (int k = 0; k < K; ++k) {
            (*mean)[static_cast<size_t>(k)] = params.running_mean.data()[static_cast<size_t>(k)];
            (*invstd)[static_cast<size_t>(k)] =
                1.0 / std::sqrt(params.running_var.data()[static_cast<size_t>(k)] + params.epsilon);
        }
    }

    Tensor out = Tensor::zeros(input.shape());
    double* o = out.data().data();
    const double* sc = params.scale.data().data();
    const double* sh = params.shift.data().data();
    for (int b = 0; b < B; ++b) {
        for (int k = 0; k < K; ++k) {
            const double m = (*mean)[static_cast<size_t>(k)];
            const double is = (*invstd)[static_cast<size_t>(k)];
            const double g = sc[k], be = sh[k];
            const double* p = in + (static_cast<size_t>(b) * K + k) * HW;
            double* q = o + (static_cast<size_t>(b) * K + k) * HW;
            for (int i = 0; i < HW; ++i) q[i] = g * ((p[i] - m) * is) + be;
        }
    }

    if (tape && want_grad({&input, &params.scale, &params.shift})) {
        out.set_requires_grad(true);
        Tensor in_c = input, sc_c = params.scale, sh_c = params.shift, out_c = out;
        tape->record(out, [in_c, sc_c, sh_c, out_c, mean, invstd, training, B, K, HW]() mutable {
            const int64_t n_per_ch = static_cast<int64_t>(B) * HW;
            const std::vector<double>& go = out_c.grad();
            const double* in = in_c.data().data();
            const bool need_in = in_c.requires_grad();
            if (sc_c.requires_grad()) sc_c.ensure_grad();
            if (sh_c.requires_grad()) sh_c.ensure_grad();
            if (need_in) in_c.ensure_grad();
            for (int k = 0; k < K; ++k) {
                const double m = (*mean)[static_cast<size_t>(k)];
                const double is = (*invstd)[static_cast<size_t>(k)];
                double sg = 0, sgx = 0;
                for (int b = 0; b < B; ++b) {
                    const size_t base = (static_cast<size_t>(b) * K + k) * HW;
                    for (int i = 0; i < HW; ++i) {
                        const double g = go[base + i];
                        sg += g;
                        sgx += g * ((in[base + i] - m) * is);
                    }
                }
                if (sc_c.requires_grad()) sc_c.grad()[static_cast<size_t>(k)] += sgx;
                if (sh_c.requires_grad()) sh_c.grad()[static_cast<size_t>(k)] += sg;
                if (!need_in) continue;
                const double gamma = sc_c.data()[static_cast<size_t>(k)];
                if (training) {
                    const double inv_n = 1.0 / static_cast<double>(n_per_ch);
                    for (int b = 0; b < B; ++b) {
                        const size_t base = (static_cast<size_t>(b) * K + k) * HW;
                        for (int i = 0; i < HW; ++i) {
                            const double xhat = (in[base + i] - m) * is;
                            in_c.grad()[base + i] +=
                                gamma * is * (go[base + i] - sg * inv_n - xhat * sgx * inv_n);
                        }
                    }
                } else {
                    for (int b = 0; b < B; ++b) {
                        const size_t base = (static_cast<size_t>(b) * K + k) * HW;
                        for (int i = 0; i < HW; ++i) {
                            in_c.grad()[base + i] += gamma * is * go[base + i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---- elementwise activations ----------------------------------------------------

Tensor elu(GradTape* tape, const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    const double* in = input.data().data();
    double* o = out.data().data();
    const int64_t n = input.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double x = in[i];
        o[i] = x >= 0.0 ? x : std::expm1(x);
    }
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        Tensor in_c = input, out_c = out;
        tape->record(out, [in_c, out_c, n]() mutable {
            in_c.ensure_grad();
            const std::vector<double>& go = out_c.grad();
            const std::vector<double>& od = out_c.data();
            std::vector<double>& gi = in_c.grad();
            for (int64_t i = 0; i < n; ++i) {
                const double d = od[static_cast<size_t>(i)] < 0.0 ? od[static_cast<size_t>(i)] + 1.0
                                                                  : 1.0;
                gi[static_cast<size_t>(i)] += go[static_cast<size_t>(i)] * d;
            }
        });
    }
    return out;
}

Tensor sigmoid(GradTape* tape, const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    const double* in = input.data().data();
    double* o = out.data().data();
    const int64_t n = input.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double x = in[i];
        if (x >= 0.0) {
            o[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            o[i] = e / (1.0 + e);
        }
    }
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        Tensor in_c = input, out_c = out;
        tape->record(out, [in_c, out_c, n]() mutable {
            in_c.ensure_grad();
            const std::vector<double>& go = out_c.grad();
            const std::vector<double>& od = out_c.data();
            std::vector<double>& gi = in_c.grad();
            for (int64_t i = 0; i < n; ++i) {
                const double s = od[static_cast<size_t>(i)];
                gi[static_cast<size_t>(i)] += go[static_cast<size_t>(i)] * s * (1.0 - s);
            }
        });
    }
    return out;
}

// ---- linear ----------------------------------------------------------------------

Tensor linear(GradTape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
    check(input.ndim() == 2, "linear: input must be 2-D [B,N], got " + shape_str(input.shape()));
    check(weight.ndim() == 2, "linear: weight must be 2-D [M,N], got " + shape_str(weight.shape()));
    const int B = input.dim(0), N = input.dim(1);
    const int M = weight.dim(0);
    check(weight.dim(1) == N, "linear: input feature axis 1 is " + std::to_string(N) +
                                  " but weight expects " + std::to_string(weight.dim(1)));
    check(bias.ndim() == 1 && bias.dim(0) == M,
          "linear: bias must be [M=" + std::to_string(M) + "], got " + shape_str(bias.shape()));

    Tensor out = Tensor::zeros({B, M});
    double* o = out.data().data();
    const double* bd = bias.data().data();
    for (int b = 0; b < B; ++b) {
        std::copy(bd, bd + M, o + static_cast<size_t>(b) * M);
    }
    gemm_nt(B, M, N, input.data().data(), weight.data().data(), o);

    if (tape && want_grad({&input, &weight, &bias})) {
        out.set_requires_grad(true);
        Tensor in_c = input, w_c = weight, b_c = bias, out_c = out;
        tape->record(out, [in_c, w_c, b_c, out_c, B, M, N]() mutable {
            const std::vector<double>& go = out_c.grad();
            if (b_c.requires_grad()) {
                std::vector<double>& gb = b_c.grad();
                for (int b = 0; b < B; ++b) {
                    for (int m = 0; m < M; ++m) gb[static_cast<size_t>(m)] += go[static_cast<size_t>(b) * M + m];
                }
            }
            if (w_c.requires_grad()) {
                w_c.ensure_grad();
                // dW[m,n] += sum_b go[b,m] * in[b,n]
                gemm_tn(M, N, B, go.data(), in_c.data().data(), w_c.grad().data());
            }
            if (in_c.requires_grad()) {
                in_c.ensure_grad();
                // dIn[b,n] += sum_m go[b,m] * W[m,n]
                gemm_nn(B, N, M, go.data(), w_c.data().data(), in_c.grad().data());
            }
        });
    }
    return out;
}

// ---- film --------------------------------------------------------------------------

Tensor film(GradTape* tape, const Tensor& input, const Tensor& gamma, const Tensor& beta) {
    check(input.ndim() == 4 || input.ndim() == 2,
          "film: input must be [B,K,H,W] or [B,K], got " + shape_str(input.shape()));
    const int B = input.dim(0), K = input.dim(1);
    const int HW = input.ndim() == 4 ? input.dim(2) * input.dim(3) : 1;
    check(gamma.ndim() == 2 && gamma.dim(0) == B && gamma.dim(1) == K,
          "film: gamma must be [B,K]=" + shape_str({B, K}) + ", got " + shape_str(gamma.shape()));
    check(beta.ndim() == 2 && beta.dim(0) == B && beta.dim(1) == K,
          "film: beta must be [B,K]=" + shape_str({B, K}) + ", got " + shape_str(beta.shape()));

    Tensor out = Tensor::zeros(input.shape());
    const double* in = input.data().data();
    const double* g = gamma.data().data();
    const double* be = beta.data().data();
    double* o = out.data().data();
    for (int b = 0; b < B; ++b) {
        for (int k = 0; k < K; ++k) {
            const double gv = g[static_cast<size_t>(b) * K + k];
            const double bv = be[static_cast<size_t>(b) * K + k];
            const size_t base = (static_cast<size_t>(b) * K + k) * HW;
            for (int i = 0; i < HW; ++i) o[base + i] = gv * in[base + i] + bv;
        }
    }

    if (tape && want_grad({&input, &gamma, &beta})) {
        out.set_requires_grad(true);
        Tensor in_c = input, g_c = gamma, b_c = beta, out_c = out;
        tape->record(out, [in_c, g_c, b_c, out_c, B, K, HW]() mutable {
            const std::vector<double>& go = out_c.grad();
            const double* in = in_c.data().data();
            const double* g = g_c.data().data();
            const bool need_in = in_c.requires_grad();
            const bool need_g = g_c.requires_grad();
            const bool need_b = b_c.requires_grad();
            if (need_in) in_c.ensure_grad();
            if (need_g) g_c.ensure_grad();
            if (need_b) b_c.ensure_grad();
            for (int b = 0; b < B; ++b) {
                for (int k = 0; k < K; ++k) {
                    const size_t bk = static_cast<size_t>(b) * K + k;
                    const size_t base = bk * HW;
                    double sg = 0, sgx = 0;
                    for (int i = 0; i < HW; ++i) {
                        const double gv = go[base + i];
                        sg += gv;
                        sgx += gv * in[base + i];
                        if (need_in) in_c.grad()[base + i] += gv * g[bk];
                    }
                    if (need_g) g_c.grad()[bk] += sgx;
                    if (need_b) b_c.grad()[bk] += sg;
                }
            }
        });
    }
    return out;
}

// ---- elementwise/shape utility ops ----------------------------------------------------

Tensor add(GradTape* tape, const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "add: shape " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* o = out.data().data();
    for (int64_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
    if (tape && want_grad({&a, &b})) {
        out.set_requires_grad(true);
        Tensor a_c = a, b_c = b, out_c = out;
        tape->record(out, [a_c, b_c, out_c, n]() mutable {
            const std::vector<double>& go = out_c.grad();
            if (a_c.requires_grad()) {
                a_c.ensure_grad();
                for (int64_t i = 0; i < n; ++i) a_c.grad()[static_cast<size_t>(i)] += go[static_cast<size_t>(i)];
            }
            if (b_c.requires_grad()) {
                b_c.ensure_grad();
                for (int64_t i = 0; i < n; ++i) b_c.grad()[static_cast<size_t>(i)] += go[static_cast<size_t>(i)];
            }
        });
    }
    return out;
}

Tensor mul(GradTape* tape, const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mul: shape " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* o = out.data().data();
    for (int64_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i];
    if (tape && want_grad({&a, &b})) {
        out.set_requires_grad(true);
        Tensor a_c = a, b_c = b, out_c = out;
        tape->record(out, [a_c, b_c, out_c, n]() mutable {
            const std::vector<double>& go = out_c.grad();
            if (a_c.requires_grad()) {
                a_c.ensure_grad();
                for (int64_t i = 0; i < n; ++i) {
                    a_c.grad()[static_cast<size_t>(i)] +=
                        go[static_cast<size_t>(i)] * b_c.data()[static_cast<size_t>(i)];
                }
            }
            if (b_c.requires_grad()) {
                b_c.ensure_grad();
                for (int64_t i = 0; i < n; ++i) {
                    b_c.grad()[static_cast<size_t>(i)] +=
                        go[static_cast<size_t>(i)] * a_c.data()[static_cast<size_t>(i)];
                }
            }
        });
    }
    return out;
}

Tensor sum(GradTape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double s = 0;
    for (double v : x.data()) s += v;
    out.data()[0] = s;
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor x_c = x, out_c = out;
        tape->record(out, [x_c, out_c]() mutable {
            x_c.ensure_grad();
            const double g = out_c.grad()[0];
            for (double& v : x_c.grad()) v += g;
        });
    }
    return out;
}

Tensor reshape(GradTape* tape, const Tensor& x, std::vector<int> new_shape) {
    check(shape_numel(new_shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    Tensor out = Tensor::from_vector(std::move(new_shape), x.data());
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor x_c = x, out_c = out;
        tape->record(out, [x_c, out_c]() mutable {
            x_c.ensure_grad();
            const std::vector<double>& go = out_c.grad();
            std::vector<double>& gi = x_c.grad();
            for (size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
        });
    }
    return out;
}

Tensor pad2d(GradTape* tape, const Tensor& x, int out_h, int out_w) {
    check(x.ndim() == 4, "pad2d: input must be 4-D, got " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    check(out_h >= H && out_w >= W, "pad2d: target " + std::to_string(out_h) + "x" +
                                        std::to_string(out_w) + " smaller than input " +
                                        std::to_string(H) + "x" + std::to_string(W));
    Tensor out = Tensor::zeros({B, C, out_h, out_w});
    const double* in = x.data().data();
    double* o = out.data().data();
    for (int bc = 0; bc < B * C; ++bc) {
        for (int h = 0; h < H; ++h) {
            std::copy(in + (static_cast<size_t>(bc) * H + h) * W,
                      in + (static_cast<size_t>(bc) * H + h) * W + W,
                      o + (static_cast<size_t>(bc) * out_h + h) * out_w);
        }
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor x_c = x, out_c = out;
        tape->record(out, [x_c, out_c, B, C, H, W, out_h, out_w]() mutable {
            x_c.ensure_grad();
            const std::vector<double>& go = out_c.grad();
            std::vector<double>& gi = x_c.grad();
            for (int bc = 0; bc < B * C; ++bc) {
                for (int h = 0; h < H; ++h) {
                    const size_t src = (static_cast<size_t>(bc) * out_h + h) * out_w;
                    const size_t dst = (static_cast<size_t>(bc) * H + h) * W;
                    for (int w = 0; w < W; ++w) gi[dst + w] += go[src + w];
                }
            }
        });
    }
    return out;
}

Tensor crop2d(GradTape* tape, const Tensor& x, int out_h, int out_w) {
    check(x.ndim() == 4, "crop2d: input must be 4-D, got " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    check(out_h <= H && out_w <= W, "crop2d: target " + std::to_string(out_h) + "x" +
                                        std::to_string(out_w) + " larger than input " +
                                        std::to_string(H) + "x" + std::to_string(W));
    Tensor out = Tensor::zeros({B, C, out_h, out_w});
    const double* in = x.data().data();
    double* o = out.data().data();
    for (int bc = 0; bc < B * C; ++bc) {
        for (int h = 0; h < out_h; ++h) {
            std::copy(in + (static_cast<size_t>(bc) * H + h) * W,
                      in + (static_cast<size_t>(bc) * H + h) * W + out_w,
                      o + (static_cast<size_t>(bc) * out_h + h) * out_w);
        }
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor x_c = x, out_c = out;
        tape->record(out, [x_c, out_c, B, C, H, W, out_h, out_w]() mutable {
            x_c.ensure_grad();
            const std::vector<double>& go = out_c.grad();
            std::vector<double>& gi = x_c.grad();
            for (int bc = 0; bc < B * C; ++bc) {
                for (int h = 0; h < out_h; ++h) {
                    const size_t dst = (static_cast<size_t>(bc) * H + h) * W;
                    const size_t src = (static_cast<size_t>(bc) * out_h + h) * out_w;
                    for (int w = 0; w < out_w; ++w) gi[dst + w] += go[src + w];
                }
            }
        });
    }
    return out;
}

// ---- orthogonal init -------------------------------------------------------------------

Tensor orthogonal_init(const std::vector<int>& shape, Rng& rng) {
    if (shape.empty() || shape_numel(shape) == 0) {
        throw DimensionError("orthogonal_init: zero-sized shape " + shape_str(shape));
    }
    const int rows = shape[0];
    const int cols = static_cast<int>(shape_numel(shape) / rows);

    // Gaussian fill, then modified Gram-Schmidt along the shorter axis.
    std::vector<double> m(static_cast<size_t>(rows) * cols);
    for (double& v : m) v = rng.gauss();

    const bool by_rows = rows <= cols;
    const int nvec = by_rows ? rows : cols;
    const int len = by_rows ? cols : rows;
    auto at = [&](int v, int i) -> double& {
        return by_rows ? m[static_cast<size_t>(v) * cols + i] : m[static_cast<size_t>(i) * cols + v];
    };
    for (int v = 0; v < nvec; ++v) {
        for (int u = 0; u < v; ++u) {
            double dot = 0;
            for (int i = 0; i < len; ++i) dot += at(u, i) * at(v, i);
            for (int i = 0; i < len; ++i) at(v, i) -= dot * at(u, i);
        }
        double norm = 0;
        for (int i = 0; i < len; ++i) norm += at(v, i) * at(v, i);
        norm = std::sqrt(norm);
        for (int i = 0; i < len; ++i) at(v, i) /= norm;
    }
    return Tensor::from_vector(shape, std::move(m), true);
}

Tensor orthogonal_init(const std::vector<int>& shape, uint64_t seed) {
    Rng rng(seed);
    return orthogonal_init(shape, rng);
}

}  // namespace acunet
