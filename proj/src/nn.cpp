#include "fiberseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace fiberseg::nn {

namespace {

// unified (N, C, D, H, W) view; rank-4 tensors get depth 1
struct Dims5 {
    int64_t n, c, d, h, w;
    int64_t spatial() const { return d * h * w; }
};

Dims5 dims5(const Tensor& t) {
    if (t.rank() == 4) return {t.extent(0), t.extent(1), 1, t.extent(2), t.extent(3)};
    if (t.rank() == 5) return {t.extent(0), t.extent(1), t.extent(2), t.extent(3), t.extent(4)};
    throw ShapeMismatch("layer input must be rank 4 (NCHW) or rank 5 (NCDHW)");
}

std::vector<int64_t> shape5(const Tensor& like, int64_t n, int64_t c, int64_t d, int64_t h,
                            int64_t w) {
    if (like.rank() == 4) return {n, c, h, w};
    return {n, c, d, h, w};
}

void he_uniform(Tensor& t, int64_t fan_in, std::mt19937& rng) {
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-limit, limit);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
}

const Tensor& single(const std::vector<const Tensor*>& in, const char* kind) {
    if (in.size() != 1) throw ShapeMismatch(std::string(kind) + ": expects one input");
    return *in[0];
}

}  // namespace

void check_finite(const Tensor& t, const char* where) {
    for (int64_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i]))
            throw NonFiniteValue(std::string(where) + ": non-finite value");
}

void Layer::zero_grads() {
    for (Tensor* g : grads()) std::fill(g->raw().begin(), g->raw().end(), 0.0f);
}

// ---------------------------------------------------------------- Conv

Conv::Conv(int dims, int64_t in_ch, int64_t out_ch, int64_t kernel, std::mt19937& init_rng)
    : dims_(dims), in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel) {
    if (dims != 2 && dims != 3) throw InvalidSpec("Conv: dims must be 2 or 3");
    if (kernel % 2 == 0) throw InvalidSpec("Conv: kernel must be odd for same padding");
    std::vector<int64_t> wshape = dims == 2
        ? std::vector<int64_t>{out_ch, in_ch, kernel, kernel}
        : std::vector<int64_t>{out_ch, in_ch, kernel, kernel, kernel};
    weight_ = Tensor(wshape);
    grad_weight_ = Tensor(wshape, 0.0f);
    bias_ = Tensor({out_ch}, 0.0f);
    grad_bias_ = Tensor({out_ch}, 0.0f);
    int64_t fan_in = in_ch;
    for (int a = 0; a < dims; ++a) fan_in *= kernel;
    he_uniform(weight_, fan_in, init_rng);
}

Tensor Conv::forward(const std::vector<const Tensor*>& in, bool) {
    const Tensor& x = single(in, "conv");
    const Dims5 s = dims5(x);
    if (s.c != in_ch_) throw ShapeMismatch("conv: input channel count mismatch");
    cached_in_ = x;

    const int64_t kd = dims_ == 3 ? kernel_ : 1;
    const int64_t kh = kernel_, kw = kernel_;
    const int64_t pd = (kd - 1) / 2, ph = (kh - 1) / 2, pw = (kw - 1) / 2;

    Tensor out(shape5(x, s.n, out_ch_, s.d, s.h, s.w));
    const int64_t out_sp = s.spatial();
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t oc = 0; oc < out_ch_; ++oc) {
            float* o = out.data() + (n * out_ch_ + oc) * out_sp;
            std::fill_n(o, out_sp, bias_[oc]);
        }

    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t oc = 0; oc < out_ch_; ++oc)
            for (int64_t ic = 0; ic < in_ch_; ++ic) {
                const float* xi = x.data() + (n * in_ch_ + ic) * s.spatial();
                float* o = out.data() + (n * out_ch_ + oc) * out_sp;
                const float* wk = weight_.data() + (oc * in_ch_ + ic) * kd * kh * kw;
                for (int64_t dz = 0; dz < kd; ++dz)
                    for (int64_t dy = 0; dy < kh; ++dy)
                        for (int64_t dx = 0; dx < kw; ++dx) {
                            const float wv = wk[(dz * kh + dy) * kw + dx];
                            if (wv == 0.0f) continue;
                            const int64_t z0 = std::max<int64_t>(0, pd - dz);
                            const int64_t z1 = std::min(s.d, s.d + pd - dz);
                            const int64_t y0 = std::max<int64_t>(0, ph - dy);
                            const int64_t y1 = std::min(s.h, s.h + ph - dy);
                            const int64_t x0 = std::max<int64_t>(0, pw - dx);
                            const int64_t x1 = std::min(s.w, s.w + pw - dx);
                            for (int64_t z = z0; z < z1; ++z)
                                for (int64_t y = y0; y < y1; ++y) {
                                    float* orow = o + (z * s.h + y) * s.w;
                                    const float* irow =
                                        xi + ((z + dz - pd) * s.h + (y + dy - ph)) * s.w + (dx - pw);
                                    for (int64_t xx = x0; xx < x1; ++xx)
                                        orow[xx] += wv * irow[xx];
                                }
                        }
            }
    return out;
}

std::vector<Tensor> Conv::backward(const Tensor& grad_out) {
    const Tensor& x = cached_in_;
    const Dims5 s = dims5(x);
    const int64_t kd = dims_ == 3 ? kernel_ : 1;
    const int64_t kh = kernel_, kw = kernel_;
    const int64_t pd = (kd - 1) / 2, ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const int64_t sp = s.spatial();

    Tensor grad_in(x.shape(), 0.0f);

    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t oc = 0; oc < out_ch_; ++oc) {
            const float* go = grad_out.data() + (n * out_ch_ + oc) * sp;
            double gb = 0.0;
            for (int64_t i = 0; i < sp; ++i) gb += go[i];
            grad_bias_[oc] += static_cast<float>(gb);
            for (int64_t ic = 0; ic < in_ch_; ++ic) {
                const float* xi = x.data() + (n * in_ch_ + ic) * sp;
                float* gi = grad_in.data() + (n * in_ch_ + ic) * sp;
                float* gw = grad_weight_.data() + (oc * in_ch_ + ic) * kd * kh * kw;
                const float* wk = weight_.data() + (oc * in_ch_ + ic) * kd * kh * kw;
                for (int64_t dz = 0; dz < kd; ++dz)
                    for (int64_t dy = 0; dy < kh; ++dy)
                        for (int64_t dx = 0; dx < kw; ++dx) {
                            const float wv = wk[(dz * kh + dy) * kw + dx];
                            double gwacc = 0.0;
                            const int64_t z0 = std::max<int64_t>(0, pd - dz);
                            const int64_t z1 = std::min(s.d, s.d + pd - dz);
                            const int64_t y0 = std::max<int64_t>(0, ph - dy);
                            const int64_t y1 = std::min(s.h, s.h + ph - dy);
                            const int64_t x0 = std::max<int64_t>(0, pw - dx);
                            const int64_t x1 = std::min(s.w, s.w + pw - dx);
                            for (int64_t z = z0; z < z1; ++z)
                                for (int64_t y = y0; y < y1; ++y) {
                                    const float* gorow = go + (z * s.h + y) * s.w;
                                    const int64_t off =
                                        ((z + dz - pd) * s.h + (y + dy - ph)) * s.w + (dx - pw);
                                    const float* irow = xi + off;
                                    float* girow = gi + off;
                                    for (int64_t xx = x0; xx < x1; ++xx) {
                                        gwacc += static_cast<double>(gorow[xx]) * irow[xx];
                                        girow[xx] += wv * gorow[xx];
                                    }
                                }
                            gw[(dz * kh + dy) * kw + dx] += static_cast<float>(gwacc);
                        }
            }
        }
    return {std::move(grad_in)};
}

// ---------------------------------------------------------------- UpConv

UpConv::UpConv(int dims, int64_t in_ch, int64_t out_ch, std::mt19937& init_rng)
    : dims_(dims), in_ch_(in_ch), out_ch_(out_ch) {
    if (dims != 2 && dims != 3) throw InvalidSpec("UpConv: dims must be 2 or 3");
    std::vector<int64_t> wshape = dims == 2
        ? std::vector<int64_t>{in_ch, out_ch, 2, 2}
        : std::vector<int64_t>{in_ch, out_ch, 2, 2, 2};
    weight_ = Tensor(wshape);
    grad_weight_ = Tensor(wshape, 0.0f);
    bias_ = Tensor({out_ch}, 0.0f);
    grad_bias_ = Tensor({out_ch}, 0.0f);
    int64_t fan_in = in_ch;
    for (int a = 0; a < dims; ++a) fan_in *= 2;
    he_uniform(weight_, fan_in, init_rng);
}

Tensor UpConv::forward(const std::vector<const Tensor*>& in, bool) {
    const Tensor& x = single(in, "upconv");
    const Dims5 s = dims5(x);
    if (s.c != in_ch_) throw ShapeMismatch("upconv: input channel count mismatch");
    cached_in_ = x;

    const int64_t kd = dims_ == 3 ? 2 : 1;
    const int64_t out_d = dims_ == 3 ? s.d * 2 : s.d;
    const int64_t out_h = s.h * 2, out_w = s.w * 2;
    Tensor out(shape5(x, s.n, out_ch_, out_d, out_h, out_w));
    const int64_t osp = out_d * out_h * out_w;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t oc = 0; oc < out_ch_; ++oc)
            std::fill_n(out.data() + (n * out_ch_ + oc) * osp, osp, bias_[oc]);

    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t ic = 0; ic < in_ch_; ++ic) {
            const float* xi = x.data() + (n * in_ch_ + ic) * s.spatial();
            for (int64_t oc = 0; oc < out_ch_; ++oc) {
                float* o = out.data() + (n * out_ch_ + oc) * osp;
                const float* wk = weight_.data() + (ic * out_ch_ + oc) * kd * 4;
                for (int64_t dz = 0; dz < kd; ++dz)
                    for (int64_t dy = 0; dy < 2; ++dy)
                        for (int64_t dx = 0; dx < 2; ++dx) {
                            const float wv = wk[(dz * 2 + dy) * 2 + dx];
                            for (int64_t z = 0; z < s.d; ++z)
                                for (int64_t y = 0; y < s.h; ++y) {
                                    const float* irow = xi + (z * s.h + y) * s.w;
                                    const int64_t oz = dims_ == 3 ? 2 * z + dz : z;
                                    float* orow = o + (oz * out_h + 2 * y + dy) * out_w + dx;
                                    for (int64_t xx = 0; xx < s.w; ++xx)
                                        orow[2 * xx] += wv * irow[xx];
                                }
                        }
            }
        }
    return out;
}

std::vector<Tensor> UpConv::backward(const Tensor& grad_out) {
    const Tensor& x = cached_in_;
    const Dims5 s = dims5(x);
    const int64_t kd = dims_ == 3 ? 2 : 1;
    const int64_t out_d = dims_ == 3 ? s.d * 2 : s.d;
    const int64_t out_h = s.h * 2, out_w = s.w * 2;
    const int64_t osp = out_d * out_h * out_w;

    Tensor grad_in(x.shape(), 0.0f);
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t oc = 0; oc < out_ch_; ++oc) {
            const float* go = grad_out.data() + (n * out_ch_ + oc) * osp;
            double gb = 0.0;
            for (int64_t i = 0; i < osp; ++i) gb += go[i];
            grad_bias_[oc] += static_cast<float>(gb);
        }

    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t ic = 0; ic < in_ch_; ++ic) {
            const float* xi = x.data() + (n * in_ch_ + ic) * s.spatial();
            float* gi = grad_in.data() + (n * in_ch_ + ic) * s.spatial();
            for (int64_t oc = 0; oc < out_ch_; ++oc) {
                const float* go = grad_out.data() + (n * out_ch_ + oc) * osp;
                const float* wk = weight_.data() + (ic * out_ch_ + oc) * kd * 4;
                float* gw = grad_weight_.data() + (ic * out_ch_ + oc) * kd * 4;
                for (int64_t dz = 0; dz < kd; ++dz)
                    for (int64_t dy = 0; dy < 2; ++dy)
                        for (int64_t dx = 0; dx < 2; ++dx) {
                            const float wv = wk[(dz * 2 + dy) * 2 + dx];
                            double gwacc = 0.0;
                            for (int64_t z = 0; z < s.d; ++z)
                                for (int64_t y = 0; y < s.h; ++y) {
                                    const float* irow = xi + (z * s.h + y) * s.w;
                                    float* girow = gi + (z * s.h + y) * s.w;
                                    const int64_t oz = dims_ == 3 ? 2 * z + dz : z;
                                    const float* gorow = go + (oz * out_h + 2 * y + dy) * out_w + dx;
                                    for (int64_t xx = 0; xx < s.w; ++xx) {
                                        const float g = gorow[2 * xx];
                                        gwacc += static_cast<double>(g) * irow[xx];
                                        girow[xx] += wv * g;
                                    }
                                }
                            gw[(dz * 2 + dy) * 2 + dx] += static_cast<float>(gwacc);
                        }
            }
        }
    return {std::move(grad_in)};
}

// ---------------------------------------------------------------- MaxPool

Tensor MaxPool::forward(const std::vector<const Tensor*>& in, bool) {
    const Tensor& x = single(in, "maxpool");
    const Dims5 s = dims5(x);
    const int64_t kd = dims_ == 3 ? 2 : 1;
    if (s.h % 2 != 0 || s.w % 2 != 0 || (dims_ == 3 && s.d % 2 != 0))
        throw ShapeMismatch("maxpool: spatial extents must be even");
    const int64_t od = dims_ == 3 ? s.d / 2 : s.d;
    const int64_t oh = s.h / 2, ow = s.w / 2;

    in_shape_ = x.shape();
    Tensor out(shape5(x, s.n, s.c, od, oh, ow));
    argmax_.assign(static_cast<size_t>(out.size()), 0);

    int64_t oi = 0;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c) {
            const float* xi = x.data() + (n * s.c + c) * s.spatial();
            const int64_t base = (n * s.c + c) * s.spatial();
            for (int64_t z = 0; z < od; ++z)
                for (int64_t y = 0; y < oh; ++y)
                    for (int64_t xx = 0; xx < ow; ++xx, ++oi) {
                        float best = -std::numeric_limits<float>::infinity();
                        int64_t best_idx = 0;
                        for (int64_t dz = 0; dz < kd; ++dz)
                            for (int64_t dy = 0; dy < 2; ++dy)
                                for (int64_t dx = 0; dx < 2; ++dx) {
                                    const int64_t iz = dims_ == 3 ? 2 * z + dz : z;
                                    const int64_t idx =
                                        (iz * s.h + 2 * y + dy) * s.w + 2 * xx + dx;
                                    if (xi[idx] > best) {
                                        best = xi[idx];
                                        best_idx = idx;
                                    }
                                }
                        out[oi] = best;
                        argmax_[static_cast<size_t>(oi)] = base + best_idx;
                    }
        }
    return out;
}

std::vector<Tensor> MaxPool::backward(const Tensor& grad_out) {
    Tensor grad_in(in_shape_, 0.0f);
    for (int64_t i = 0; i < grad_out.size(); ++i)
        grad_in[argmax_[static_cast<size_t>(i)]] += grad_out[i];
    return {std::move(grad_in)};
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int64_t channels, float momentum, float eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
    gamma_ = Tensor({channels}, 1.0f);
    beta_ = Tensor({channels}, 0.0f);
    grad_gamma_ = Tensor({channels}, 0.0f);
    grad_beta_ = Tensor({channels}, 0.0f);
    running_mean_ = Tensor({channels}, 0.0f);
    running_var_ = Tensor({channels}, 1.0f);
}

Tensor BatchNorm::forward(const std::vector<const Tensor*>& in, bool training) {
    const Tensor& x = single(in, "batch_norm");
    const Dims5 s = dims5(x);
    if (s.c != channels_) throw ShapeMismatch("batch_norm: channel count mismatch");
    const int64_t sp = s.spatial();
    Tensor out(x.shape());

    if (training) {
        const double m = static_cast<double>(s.n * sp);
        xhat_ = Tensor(x.shape());
        inv_std_.assign(static_cast<size_t>(channels_), 0.0);
        trained_forward_ = true;
        for (int64_t c = 0; c < channels_; ++c) {
            double sum = 0.0, sq = 0.0;
            for (int64_t n = 0; n < s.n; ++n) {
                const float* xi = x.data() + (n * s.c + c) * sp;
                for (int64_t i = 0; i < sp; ++i) {
                    sum += xi[i];
                    sq += static_cast<double>(xi[i]) * xi[i];
                }
            }
            const double mean = sum / m;
            const double var = std::max(0.0, sq / m - mean * mean);  // biased
            const double istd = 1.0 / std::sqrt(var + eps_);
            inv_std_[static_cast<size_t>(c)] = istd;
            const float g = gamma_[c], b = beta_[c];
            for (int64_t n = 0; n < s.n; ++n) {
                const float* xi = x.data() + (n * s.c + c) * sp;
                float* xh = xhat_.data() + (n * s.c + c) * sp;
                float* o = out.data() + (n * s.c + c) * sp;
                for (int64_t i = 0; i < sp; ++i) {
                    xh[i] = static_cast<float>((xi[i] - mean) * istd);
                    o[i] = g * xh[i] + b;
                }
            }
            running_mean_[c] = momentum_ * running_mean_[c] + (1 - momentum_) * static_cast<float>(mean);
            running_var_[c] = momentum_ * running_var_[c] + (1 - momentum_) * static_cast<float>(var);
        }
    } else {
        // inference: per-channel affine map from running statistics
        for (int64_t c = 0; c < channels_; ++c) {
            const float istd = 1.0f / std::sqrt(running_var_[c] + eps_);
            const float scale = gamma_[c] * istd;
            const float shift = beta_[c] - running_mean_[c] * scale;
            for (int64_t n = 0; n < s.n; ++n) {
                const float* xi = x.data() + (n * s.c + c) * sp;
                float* o = out.data() + (n * s.c + c) * sp;
                for (int64_t i = 0; i < sp; ++i) o[i] = scale * xi[i] + shift;
            }
        }
    }
    return out;
}

std::vector<Tensor> BatchNorm::backward(const Tensor& grad_out) {
    if (!trained_forward_)
        throw NonFiniteValue("batch_norm: backward without a training forward pass");
    const Dims5 s = dims5(grad_out);
    const int64_t sp = s.spatial();
    const double m = static_cast<double>(s.n * sp);
    Tensor grad_in(grad_out.shape());

    for (int64_t c = 0; c < channels_; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t n = 0; n < s.n; ++n) {
            const float* go = grad_out.data() + (n * s.c + c) * sp;
            const float* xh = xhat_.data() + (n * s.c + c) * sp;
            for (int64_t i = 0; i < sp; ++i) {
                sum_g += go[i];
                sum_gx += static_cast<double>(go[i]) * xh[i];
            }
        }
        grad_gamma_[c] += static_cast<float>(sum_gx);
        grad_beta_[c] += static_cast<float>(sum_g);

        const double g = gamma_[c];
        const double istd = inv_std_[static_cast<size_t>(c)];
        for (int64_t n = 0; n < s.n; ++n) {
            const float* go = grad_out.data() + (n * s.c + c) * sp;
            const float* xh = xhat_.data() + (n * s.c + c) * sp;
            float* gi = grad_in.data() + (n * s.c + c) * sp;
            for (int64_t i = 0; i < sp; ++i)
                gi[i] = static_cast<float>(g * istd / m *
                                           (m * go[i] - sum_g - xh[i] * sum_gx));
        }
    }
    return {std::move(grad_in)};
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(float rate, uint64_t seed) : rate_(rate), rng_(seed) {
    if (rate < 0.0f || rate >= 1.0f) throw InvalidSpec("dropout: rate must be in [0, 1)");
}

Tensor Dropout::forward(const std::vector<const Tensor*>& in, bool training) {
    const Tensor& x = single(in, "dropout");
    in_shape_ = x.shape();
    if (!training || rate_ == 0.0f) {
        applied_ = false;
        return x;
    }
    applied_ = true;
    const float keep = 1.0f - rate_;
    const float scale = 1.0f / keep;
    std::bernoulli_distribution dist(keep);
    mask_.resize(static_cast<size_t>(x.size()));
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        mask_[static_cast<size_t>(i)] = dist(rng_) ? 1 : 0;
        out[i] = mask_[static_cast<size_t>(i)] ? x[i] * scale : 0.0f;
    }
    return out;
}

std::vector<Tensor> Dropout::backward(const Tensor& grad_out) {
    if (!applied_) return {grad_out};
    const float scale = 1.0f / (1.0f - rate_);
    Tensor grad_in(in_shape_);
    for (int64_t i = 0; i < grad_out.size(); ++i)
        grad_in[i] = mask_[static_cast<size_t>(i)] ? grad_out[i] * scale : 0.0f;
    return {std::move(grad_in)};
}

// ---------------------------------------------------------------- Relu / Sigmoid

Tensor Relu::forward(const std::vector<const Tensor*>& in, bool) {
    const Tensor& x = single(in, "relu");
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
    cached_out_ = out;
    return out;
}

std::vector<Tensor> Relu::backward(const Tensor& grad_out) {
    Tensor grad_in(grad_out.shape());
    for (int64_t i = 0; i < grad_out.size(); ++i)
        grad_in[i] = cached_out_[i] > 0.0f ? grad_out[i] : 0.0f;
    return {std::move(grad_in)};
}

Tensor Sigmoid::forward(const std::vector<const Tensor*>& in, bool) {
    const Tensor& x = single(in, "sigmoid");
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i)
        out[i] = 1.0f / (1.0f + std::exp(-x[i]));
    cached_out_ = out;
    return out;
}

std::vector<Tensor> Sigmoid::backward(const Tensor& grad_out) {
    Tensor grad_in(grad_out.shape());
    for (int64_t i = 0; i < grad_out.size(); ++i) {
        const float y = cached_out_[i];
        grad_in[i] = grad_out[i] * y * (1.0f - y);
    }
    return {std::move(grad_in)};
}

// ---------------------------------------------------------------- Concat

Tensor Concat::forward(const std::vector<const Tensor*>& in, bool) {
    if (in.size() < 2) throw ShapeMismatch("concat: expects at least two inputs");
    in_shapes_.clear();
    const Dims5 s0 = dims5(*in[0]);
    int64_t total_c = 0;
    for (const Tensor* t : in) {
        const Dims5 s = dims5(*t);
        if (s.n != s0.n || s.d != s0.d || s.h != s0.h || s.w != s0.w)
            throw ShapeMismatch("concat: non-channel extents differ");
        total_c += s.c;
        in_shapes_.push_back(t->shape());
    }
    Tensor out(shape5(*in[0], s0.n, total_c, s0.d, s0.h, s0.w));
    const int64_t sp = s0.spatial();
    for (int64_t n = 0; n < s0.n; ++n) {
        int64_t coff = 0;
        for (const Tensor* t : in) {
            const Dims5 s = dims5(*t);
            std::copy_n(t->data() + n * s.c * sp, s.c * sp,
                        out.data() + (n * total_c + coff) * sp);
            coff += s.c;
        }
    }
    return out;
}

std::vector<Tensor> Concat::backward(const Tensor& grad_out) {
    const Dims5 so = dims5(grad_out);
    const int64_t sp = so.spatial();
    std::vector<Tensor> grads;
    grads.reserve(in_shapes_.size());
    for (const auto& shape : in_shapes_) grads.emplace_back(shape);
    for (int64_t n = 0; n < so.n; ++n) {
        int64_t coff = 0;
        for (Tensor& g : grads) {
            const Dims5 s = dims5(g);
            std::copy_n(grad_out.data() + (n * so.c + coff) * sp, s.c * sp,
                        g.data() + n * s.c * sp);
            coff += s.c;
        }
    }
    return grads;
}

// ---------------------------------------------------------------- Network

int Network::add(std::unique_ptr<Layer> layer, std::vector<int> inputs) {
    for (int i : inputs)
        if (i != kInput && (i < 0 || i >= static_cast<int>(nodes_.size())))
            throw InvalidSpec("Network::add: input node id out of range");
    nodes_.push_back({std::move(layer), std::move(inputs)});
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Network::forward(const Tensor& input, bool training) {
    if (nodes_.empty()) throw InvalidSpec("Network::forward: empty network");
    activations_.assign(nodes_.size(), Tensor());
    // keep the input around via pointer; activations index by node
    for (size_t i = 0; i < nodes_.size(); ++i) {
        std::vector<const Tensor*> in;
        in.reserve(nodes_[i].inputs.size());
        for (int j : nodes_[i].inputs)
            in.push_back(j == kInput ? &input : &activations_[static_cast<size_t>(j)]);
        activations_[i] = nodes_[i].layer->forward(in, training);
    }
    return activations_.back();
}

Tensor Network::backward(const Tensor& grad_out) {
    std::vector<Tensor> node_grads(nodes_.size());
    Tensor input_grad;
    node_grads.back() = grad_out;
    for (size_t ri = nodes_.size(); ri-- > 0;) {
        if (node_grads[ri].rank() == 0) continue;  // unused branch
        auto in_grads = nodes_[ri].layer->backward(node_grads[ri]);
        if (in_grads.size() != nodes_[ri].inputs.size())
            throw ShapeMismatch("Network::backward: input grad arity mismatch");
        for (size_t k = 0; k < in_grads.size(); ++k) {
            const int j = nodes_[ri].inputs[k];
            Tensor& dst = j == kInput ? input_grad : node_grads[static_cast<size_t>(j)];
            if (dst.rank() == 0) {
                dst = std::move(in_grads[k]);
            } else {
                for (int64_t i = 0; i < dst.size(); ++i) dst[i] += in_grads[k][i];
            }
        }
        node_grads[ri] = Tensor();  // release
    }
    return input_grad;
}

std::vector<Tensor*> Network::parameters() {
    std::vector<Tensor*> out;
    for (auto& n : nodes_)
        for (Tensor* p : n.layer->params()) out.push_back(p);
    return out;
}

std::vector<Tensor*> Network::gradients() {
    std::vector<Tensor*> out;
    for (auto& n : nodes_)
        for (Tensor* g : n.layer->grads()) out.push_back(g);
    return out;
}

std::vector<Tensor*> Network::buffers() {
    std::vector<Tensor*> out;
    for (auto& n : nodes_)
        for (Tensor* b : n.layer->buffers()) out.push_back(b);
    return out;
}

int64_t Network::parameter_count() {
    int64_t n = 0;
    for (Tensor* p : parameters()) n += p->size();
    return n;
}

void Network::zero_grads() {
    for (auto& n : nodes_) n.layer->zero_grads();
}

// ---------------------------------------------------------------- Loss / metrics

BceResult bce_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred.shape(), target.shape(), "bce_loss");
    constexpr float kEps = 1e-7f;
    const int64_t n = pred.size();
    double loss = 0.0;
    Tensor grad(pred.shape());
    for (int64_t i = 0; i < n; ++i) {
        const float p = std::clamp(pred[i], kEps, 1.0f - kEps);
        const float y = target[i];
        loss += -(y * std::log(p) + (1.0f - y) * std::log(1.0f - p));
        grad[i] = (p - y) / (p * (1.0f - p)) / static_cast<float>(n);
    }
    return {loss / static_cast<double>(n), std::move(grad)};
}

double pixel_accuracy(const Tensor& pred, const Tensor& target, float thr) {
    require_same_shape(pred.shape(), target.shape(), "pixel_accuracy");
    int64_t correct = 0;
    for (int64_t i = 0; i < pred.size(); ++i)
        correct += (pred[i] > thr) == (target[i] > 0.5f) ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------- Optimizers

void step_adam(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads,
               AdamState& state, float lr, float beta1, float beta2, float eps) {
    if (state.m.empty()) {
        for (Tensor* p : params) {
            state.m.emplace_back(p->shape(), 0.0f);
            state.v.emplace_back(p->shape(), 0.0f);
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (int64_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (1 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

void step_rmsprop(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads,
                  RmsPropState& state, float lr, float rho, float eps) {
    if (state.v.empty())
        for (Tensor* p : params) state.v.emplace_back(p->shape(), 0.0f);
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        Tensor& v = state.v[k];
        for (int64_t i = 0; i < p.size(); ++i) {
            v[i] = rho * v[i] + (1 - rho) * g[i] * g[i];
            p[i] -= lr * g[i] / (std::sqrt(v[i]) + eps);
        }
    }
}

// ---------------------------------------------------------------- Training

void TrainConfig::validate() const {
    if (learning_rate < 0) throw InvalidSpec("TrainConfig: learning_rate must be >= 0");
    if (batch_size < 1) throw InvalidSpec("TrainConfig: batch_size must be >= 1");
    if (epochs < 0) throw InvalidSpec("TrainConfig: epochs must be >= 0");
}

Tensor stack_batch(const std::vector<const Tensor*>& items) {
    if (items.empty()) throw EmptyDataset("stack_batch: no items");
    const auto& s0 = items[0]->shape();
    std::vector<int64_t> shape;
    shape.push_back(static_cast<int64_t>(items.size()));
    shape.insert(shape.end(), s0.begin(), s0.end());
    Tensor out(shape);
    const int64_t item_size = items[0]->size();
    for (size_t b = 0; b < items.size(); ++b) {
        if (items[b]->shape() != s0) throw ShapeMismatch("stack_batch: item shapes differ");
        std::copy_n(items[b]->data(), item_size, out.data() + static_cast<int64_t>(b) * item_size);
    }
    return out;
}

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    uint64_t x = a * 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull + c + 1;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

std::pair<double, double> evaluate_set(Network& net, const Dataset& set, int batch_size) {
    if (set.inputs.empty()) return {0.0, 0.0};
    double loss = 0.0, acc = 0.0;
    int64_t total = 0;
    for (size_t i = 0; i < set.inputs.size(); i += static_cast<size_t>(batch_size)) {
        std::vector<const Tensor*> xs, ys;
        for (size_t b = i; b < std::min(set.inputs.size(), i + static_cast<size_t>(batch_size)); ++b) {
            xs.push_back(&set.inputs[b]);
            ys.push_back(&set.targets[b]);
        }
        Tensor x = stack_batch(xs);
        Tensor y = stack_batch(ys);
        Tensor pred = net.forward(x, false);
        auto bce = bce_loss(pred, y);
        const int64_t n = static_cast<int64_t>(xs.size());
        loss += bce.loss * static_cast<double>(n);
        acc += pixel_accuracy(pred, y) * static_cast<double>(n);
        total += n;
    }
    return {loss / static_cast<double>(total), acc / static_cast<double>(total)};
}

}  // namespace

TrainHistory train(Network& net, const Dataset& train_set, const Dataset& val_set,
                   const TrainConfig& cfg, const AugmentFn& augment) {
    cfg.validate();
    if (train_set.inputs.empty()) throw EmptyDataset("train: empty training set");
    if (train_set.inputs.size() != train_set.targets.size())
        throw ShapeMismatch("train: inputs/targets length mismatch");

    TrainHistory history;
    std::mt19937_64 shuffle_rng(cfg.seed);
    AdamState adam;
    RmsPropState rms;
    int64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(train_set.inputs.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double ep_loss = 0.0, ep_acc = 0.0;
        int64_t ep_items = 0;

        for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), i + static_cast<size_t>(cfg.batch_size));
            std::vector<Tensor> aug_holder;
            aug_holder.reserve(2 * (end - i));
            std::vector<const Tensor*> xs, ys;
            for (size_t b = i; b < end; ++b) {
                const size_t idx = order[b];
                if (augment) {
                    auto [ax, ay] = augment(train_set.inputs[idx], train_set.targets[idx],
                                            mix_seed(cfg.seed, static_cast<uint64_t>(epoch), idx));
                    aug_holder.push_back(std::move(ax));
                    aug_holder.push_back(std::move(ay));
                    xs.push_back(&aug_holder[aug_holder.size() - 2]);
                    ys.push_back(&aug_holder[aug_holder.size() - 1]);
                } else {
                    xs.push_back(&train_set.inputs[idx]);
                    ys.push_back(&train_set.targets[idx]);
                }
            }

            Tensor x = stack_batch(xs);
            Tensor y = stack_batch(ys);
            net.zero_grads();
            Tensor pred = net.forward(x, true);
            auto bce = bce_loss(pred, y);
            if (!std::isfinite(bce.loss))
                throw NonFiniteValue("train: loss is not finite");
            const double acc = pixel_accuracy(pred, y);
            net.backward(bce.grad);

            auto params = net.parameters();
            auto grads = net.gradients();
            if (cfg.optimizer == Optimizer::Adam)
                step_adam(params, grads, adam, cfg.learning_rate);
            else
                step_rmsprop(params, grads, rms, cfg.learning_rate);

            ++step;
            history.steps.push_back({step, epoch, bce.loss, acc});
            const double n = static_cast<double>(xs.size());
            ep_loss += bce.loss * n;
            ep_acc += acc * n;
            ep_items += static_cast<int64_t>(xs.size());
        }

        auto [val_loss, val_acc] = evaluate_set(net, val_set, cfg.batch_size);
        history.epochs.push_back({epoch, ep_loss / static_cast<double>(ep_items),
                                  ep_acc / static_cast<double>(ep_items), val_loss, val_acc});
    }
    return history;
}

void TrainHistory::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write history: " + path);
    f << "step,epoch,loss,accuracy,val_loss,val_accuracy\n";
    for (const auto& s : steps)
        f << s.step << "," << s.epoch << "," << s.loss << "," << s.accuracy << ",,\n";
    for (const auto& e : epochs)
        f << "," << e.epoch << "," << e.loss << "," << e.accuracy << "," << e.val_loss << ","
          << e.val_accuracy << "\n";
}

}  // namespace fiberseg::nn
