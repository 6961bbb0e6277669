#include "gsec/nn/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <sstream>

namespace gsec::nn {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
void kaiming(Tensor<T>& t, double fan_in, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (auto& v : t.values()) {
        v = static_cast<T>(std_dev * standard_normal(rng));
    }
}

template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

void require(bool ok, const std::string& what) {
    if (!ok) {
        throw ShapeMismatch(what);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out, bool with_bias)
    : weight(name + ".weight", {in, out}), bias(name + ".bias", {with_bias ? out : 0}), has_bias_(with_bias) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
    kaiming(weight.value, in_features(), rng);
    bias.value.fill(T(0));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
    x.require_rank(2, "Linear input");
    require(x.dim(1) == in_features(), "Linear: input has " + std::to_string(x.dim(1)) + " features, expected " +
                                           std::to_string(in_features()));
    input_ = x;
    const int m = x.dim(0);
    Tensor<T> y({m, out_features()});
    MapR<T> ym(y.data(), m, out_features());
    ym.noalias() = CMapR<T>(x.data(), m, in_features()) * CMapR<T>(weight.value.data(), in_features(), out_features());
    if (has_bias_) {
        ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value.data(), out_features());
    }
    return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
    const int m = input_.dim(0);
    require(grad_out.rank() == 2 && grad_out.dim(0) == m && grad_out.dim(1) == out_features(),
            "Linear backward: gradient shape " + shape_string(grad_out.shape()));
    CMapR<T> g(grad_out.data(), m, out_features());
    CMapR<T> x(input_.data(), m, in_features());
    MapR<T>(weight.grad.data(), in_features(), out_features()).noalias() += x.transpose() * g;
    if (has_bias_) {
        // plain loops: Eigen's vectorized sums peel by pointer alignment, so
        // their rounding would depend on where the heap put the buffers
        for (int i = 0; i < m; ++i) {
            for (int o = 0; o < out_features(); ++o) {
                bias.grad[o] += g(i, o);
            }
        }
    }
    Tensor<T> dx({m, in_features()});
    MapR<T>(dx.data(), m, in_features()).noalias() =
        g * CMapR<T>(weight.value.data(), in_features(), out_features()).transpose();
    return dx;
}

template <typename T>
void Linear<T>::collect(ParamList<T>& params) {
    params.push_back(&weight);
    if (has_bias_) {
        params.push_back(&bias);
    }
}

template <typename T>
void Linear<T>::collect_state(StateList<T>& state) {
    state.emplace_back(weight.name, &weight.value);
    if (has_bias_) {
        state.emplace_back(bias.name, &bias.value);
    }
}

// ---------------------------------------------------------------------------
// BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(const std::string& n, int channels)
    : gamma(n + ".gamma", {channels}),
      beta(n + ".beta", {channels}),
      running_mean({channels}, T(0)),
      running_var({channels}, T(1)),
      name(n) {
    gamma.value.fill(T(1));
}

namespace {

// Calls fn(channel, offset, stride, count) for each contiguous run of a
// channel's elements, in memory order. Rank-2 rows interleave channels, so
// each run there is a single element.
template <typename T, typename Fn>
void for_each_channel_run(const Tensor<T>& x, Fn&& fn) {
    if (x.rank() == 2) {
        const auto m = static_cast<std::size_t>(x.dim(0));
        const int c = x.dim(1);
        for (std::size_t row = 0; row < m; ++row) {
            for (int ch = 0; ch < c; ++ch) {
                fn(ch, row * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch), std::size_t{1}, std::size_t{1});
            }
        }
    } else {
        const std::size_t plane = x.plane();
        for (int n = 0; n < x.n(); ++n) {
            for (int ch = 0; ch < x.c(); ++ch) {
                fn(ch, (static_cast<std::size_t>(n) * static_cast<std::size_t>(x.c()) + static_cast<std::size_t>(ch)) * plane,
                   std::size_t{1}, plane);
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x) {
    require(x.rank() == 2 || x.rank() == 4, "BatchNorm expects rank 2 or 4, got " + shape_string(x.shape()));
    require(x.dim(1) == channels(), "BatchNorm '" + name + "': channel mismatch " + shape_string(x.shape()));
    const int c = channels();
    const std::size_t per_channel = x.size() / static_cast<std::size_t>(c);
    std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
    std::vector<double> var(static_cast<std::size_t>(c), 0.0);
    cached_training_ = training;
    if (training) {
        for_each_channel_run(x, [&](int ch, std::size_t off, std::size_t stride, std::size_t count) {
            double s = 0.0;
            for (std::size_t i = 0; i < count; ++i) {
                s += static_cast<double>(x[off + i * stride]);
            }
            mean[static_cast<std::size_t>(ch)] += s;
        });
        for (auto& m : mean) {
            m /= static_cast<double>(per_channel);
        }
        for_each_channel_run(x, [&](int ch, std::size_t off, std::size_t stride, std::size_t count) {
            const double mu = mean[static_cast<std::size_t>(ch)];
            double s = 0.0;
            for (std::size_t i = 0; i < count; ++i) {
                const double d = static_cast<double>(x[off + i * stride]) - mu;
                s += d * d;
            }
            var[static_cast<std::size_t>(ch)] += s;
        });
        for (int ch = 0; ch < c; ++ch) {
            const auto k = static_cast<std::size_t>(ch);
            const double biased = var[k] / static_cast<double>(per_channel);
            const double unbiased = per_channel > 1 ? var[k] / static_cast<double>(per_channel - 1) : biased;
            var[k] = biased;
            running_mean[k] = static_cast<T>((1.0 - kBatchNormMomentum) * static_cast<double>(running_mean[k]) +
                                             kBatchNormMomentum * mean[k]);
            running_var[k] = static_cast<T>((1.0 - kBatchNormMomentum) * static_cast<double>(running_var[k]) +
                                            kBatchNormMomentum * unbiased);
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean[static_cast<std::size_t>(ch)] = static_cast<double>(running_mean[static_cast<std::size_t>(ch)]);
            var[static_cast<std::size_t>(ch)] = static_cast<double>(running_var[static_cast<std::size_t>(ch)]);
        }
    }
    inv_std_.resize(static_cast<std::size_t>(c));
    for (std::size_t k = 0; k < inv_std_.size(); ++k) {
        inv_std_[k] = static_cast<T>(1.0 / std::sqrt(var[k] + kBatchNormEps));
    }
    normalized_ = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for_each_channel_run(x, [&](int ch, std::size_t off, std::size_t stride, std::size_t count) {
        const auto k = static_cast<std::size_t>(ch);
        const T mu = static_cast<T>(mean[k]);
        const T is = inv_std_[k];
        const T g = gamma.value[k];
        const T b = beta.value[k];
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t j = off + i * stride;
            const T xh = (x[j] - mu) * is;
            normalized_[j] = xh;
            y[j] = g * xh + b;
        }
    });
    return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out) {
    normalized_.require_same_shape(grad_out, "BatchNorm backward");
    const int c = channels();
    const double per_channel = static_cast<double>(grad_out.size() / static_cast<std::size_t>(c));
    std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0);
    std::vector<double> sum_gx(static_cast<std::size_t>(c), 0.0);
    for_each_channel_run(grad_out, [&](int ch, std::size_t off, std::size_t stride, std::size_t count) {
        double sg = 0.0;
        double sgx = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t j = off + i * stride;
            sg += static_cast<double>(grad_out[j]);
            sgx += static_cast<double>(grad_out[j]) * static_cast<double>(normalized_[j]);
        }
        sum_g[static_cast<std::size_t>(ch)] += sg;
        sum_gx[static_cast<std::size_t>(ch)] += sgx;
    });
    for (int ch = 0; ch < c; ++ch) {
        const auto k = static_cast<std::size_t>(ch);
        gamma.grad[k] += static_cast<T>(sum_gx[k]);
        beta.grad[k] += static_cast<T>(sum_g[k]);
    }
    Tensor<T> dx(grad_out.shape());
    for_each_channel_run(grad_out, [&](int ch, std::size_t off, std::size_t stride, std::size_t count) {
        const auto k = static_cast<std::size_t>(ch);
        const T scale = gamma.value[k] * inv_std_[k];
        if (cached_training_) {
            const T mean_g = static_cast<T>(sum_g[k] / per_channel);
            const T mean_gx = static_cast<T>(sum_gx[k] / per_channel);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t j = off + i * stride;
                dx[j] = scale * (grad_out[j] - mean_g - normalized_[j] * mean_gx);
            }
        } else {
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t j = off + i * stride;
                dx[j] = scale * grad_out[j];
            }
        }
    });
    return dx;
}

template <typename T>
void BatchNorm<T>::collect(ParamList<T>& params) {
    params.push_back(&gamma);
    params.push_back(&beta);
}

template <typename T>
void BatchNorm<T>::collect_state(StateList<T>& state) {
    state.emplace_back(gamma.name, &gamma.value);
    state.emplace_back(beta.name, &beta.value);
    state.emplace_back(name + ".running_mean", &running_mean);
    state.emplace_back(name + ".running_var", &running_var);
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x) {
    output_ = Tensor<T>(x.shape());
    const T* in = x.data();
    T* out = output_.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = in[i] > T(0) ? in[i] : T(0);
    }
    return output_;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& grad_out) {
    output_.require_same_shape(grad_out, "Relu backward");
    Tensor<T> dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] = output_[i] > T(0) ? grad_out[i] : T(0);
    }
    return dx;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x) {
    output_ = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        output_[i] = sigmoid(x[i]);
    }
    return output_;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& grad_out) {
    output_.require_same_shape(grad_out, "Sigmoid backward");
    Tensor<T> dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] = grad_out[i] * output_[i] * (T(1) - output_[i]);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Conv2d (general)

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in, int out, int kernel, int stride, int padding, int groups,
                  bool with_bias)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), padding_(padding), groups_(groups), has_bias_(with_bias) {
    if (in <= 0 || out <= 0 || kernel <= 0 || stride <= 0 || padding < 0 || groups <= 0 || in % groups != 0 ||
        out % groups != 0) {
        throw ShapeMismatch("Conv2d '" + name + "': invalid geometry");
    }
    weight = Param<T>(name + ".weight", {out, in / groups, kernel, kernel});
    bias = Param<T>(name + ".bias", {with_bias ? out : 0});
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
    kaiming(weight.value, static_cast<double>(in_ / groups_ * kernel_ * kernel_), rng);
    bias.value.fill(T(0));
}

namespace {

struct ConvGeometry {
    int h_in, w_in, h_out, w_out, k, stride, pad;

    // Output columns ox whose input column ox*stride + kx - pad is in range.
    std::pair<int, int> valid_x(int kx) const {
        return valid(kx, w_in, w_out);
    }
    std::pair<int, int> valid_y(int ky) const {
        return valid(ky, h_in, h_out);
    }

private:
    std::pair<int, int> valid(int kk, int in, int out) const {
        const int shift = kk - pad;
        int lo = 0;
        while (lo < out && lo * stride + shift < 0) {
            ++lo;
        }
        int hi = out;
        while (hi > lo && (hi - 1) * stride + shift >= in) {
            --hi;
        }
        return {lo, hi};
    }
};

// out_plane += w * shifted(in_plane) over the valid window; the shared inner
// loop of every direct convolution here.
template <typename T>
void accumulate_tap(const ConvGeometry& g, int ky, int kx, T w, const T* in, T* out) {
    const auto [y0, y1] = g.valid_y(ky);
    const auto [x0, x1] = g.valid_x(kx);
    for (int oy = y0; oy < y1; ++oy) {
        const T* irow = in + static_cast<std::ptrdiff_t>(oy * g.stride + ky - g.pad) * g.w_in;
        T* orow = out + static_cast<std::ptrdiff_t>(oy) * g.w_out;
        if (g.stride == 1) {
            const T* src = irow + (kx - g.pad);
            for (int ox = x0; ox < x1; ++ox) {
                orow[ox] += w * src[ox];
            }
        } else {
            for (int ox = x0; ox < x1; ++ox) {
                orow[ox] += w * irow[ox * g.stride + kx - g.pad];
            }
        }
    }
}

// Returns sum(out_grad * shifted(in)) and adds w * out_grad into in_grad.
template <typename T>
T backprop_tap(const ConvGeometry& g, int ky, int kx, T w, const T* in, const T* gout, T* gin) {
    const auto [y0, y1] = g.valid_y(ky);
    const auto [x0, x1] = g.valid_x(kx);
    T dw = T(0);
    for (int oy = y0; oy < y1; ++oy) {
        const std::ptrdiff_t in_off = static_cast<std::ptrdiff_t>(oy * g.stride + ky - g.pad) * g.w_in;
        const T* irow = in + in_off;
        T* girow = gin + in_off;
        const T* grow = gout + static_cast<std::ptrdiff_t>(oy) * g.w_out;
        T acc = T(0);
        if (g.stride == 1) {
            const std::ptrdiff_t shift = kx - g.pad;
            for (int ox = x0; ox < x1; ++ox) {
                acc += grow[ox] * irow[ox + shift];
                girow[ox + shift] += w * grow[ox];
            }
        } else {
            for (int ox = x0; ox < x1; ++ox) {
                const int ix = ox * g.stride + kx - g.pad;
                acc += grow[ox] * irow[ix];
                girow[ix] += w * grow[ox];
            }
        }
        dw += acc;
    }
    return dw;
}

}  // namespace

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
    x.require_rank(4, "Conv2d input");
    require(x.c() == in_, "Conv2d: input has " + std::to_string(x.c()) + " channels, expected " + std::to_string(in_));
    input_ = x;
    const ConvGeometry g{x.h(), x.w(), (x.h() + 2 * padding_ - kernel_) / stride_ + 1,
                         (x.w() + 2 * padding_ - kernel_) / stride_ + 1, kernel_, stride_, padding_};
    require(g.h_out > 0 && g.w_out > 0, "Conv2d: input smaller than kernel");
    Tensor<T> y({x.n(), out_, g.h_out, g.w_out});
    const int in_per_group = in_ / groups_;
    const int out_per_group = out_ / groups_;
    for (int n = 0; n < x.n(); ++n) {
        for (int oc = 0; oc < out_; ++oc) {
            T* out = y.channel(n, oc);
            if (has_bias_) {
                std::fill(out, out + y.plane(), bias.value[static_cast<std::size_t>(oc)]);
            }
            const int group = oc / out_per_group;
            for (int icg = 0; icg < in_per_group; ++icg) {
                const T* in = x.channel(n, group * in_per_group + icg);
                for (int ky = 0; ky < kernel_; ++ky) {
                    for (int kx = 0; kx < kernel_; ++kx) {
                        accumulate_tap(g, ky, kx, weight.value.at(oc, icg, ky, kx), in, out);
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
    const ConvGeometry g{input_.h(), input_.w(), grad_out.h(), grad_out.w(), kernel_, stride_, padding_};
    require(grad_out.rank() == 4 && grad_out.n() == input_.n() && grad_out.c() == out_,
            "Conv2d backward: gradient shape " + shape_string(grad_out.shape()));
    Tensor<T> dx(input_.shape());
    const int in_per_group = in_ / groups_;
    const int out_per_group = out_ / groups_;
    for (int n = 0; n < input_.n(); ++n) {
        for (int oc = 0; oc < out_; ++oc) {
            const T* gout = grad_out.channel(n, oc);
            if (has_bias_) {
                T s = T(0);
                for (std::size_t i = 0; i < grad_out.plane(); ++i) {
                    s += gout[i];
                }
                bias.grad[static_cast<std::size_t>(oc)] += s;
            }
            const int group = oc / out_per_group;
            for (int icg = 0; icg < in_per_group; ++icg) {
                const int ic = group * in_per_group + icg;
                for (int ky = 0; ky < kernel_; ++ky) {
                    for (int kx = 0; kx < kernel_; ++kx) {
                        weight.grad.at(oc, icg, ky, kx) += backprop_tap(
                            g, ky, kx, weight.value.at(oc, icg, ky, kx), input_.channel(n, ic), gout, dx.channel(n, ic));
                    }
                }
            }
        }
    }
    return dx;
}

template <typename T>
void Conv2d<T>::collect(ParamList<T>& params) {
    params.push_back(&weight);
    if (has_bias_) {
        params.push_back(&bias);
    }
}

template <typename T>
void Conv2d<T>::collect_state(StateList<T>& state) {
    state.emplace_back(weight.name, &weight.value);
    if (has_bias_) {
        state.emplace_back(bias.name, &bias.value);
    }
}

// ---------------------------------------------------------------------------
// DepthwiseConv

template <typename T>
DepthwiseConv<T>::DepthwiseConv(const std::string& name, int channels, int kernel)
    : weight(name + ".weight", {channels, 1, kernel, kernel}) {
    if (kernel % 2 == 0) {
        throw ShapeMismatch("DepthwiseConv needs an odd kernel for same padding");
    }
}

template <typename T>
void DepthwiseConv<T>::init(Rng& rng) {
    kaiming(weight.value, static_cast<double>(kernel() * kernel()), rng);
}

template <typename T>
Tensor<T> DepthwiseConv<T>::forward(const Tensor<T>& x) {
    x.require_rank(4, "DepthwiseConv input");
    require(x.c() == channels(), "DepthwiseConv: expected " + std::to_string(channels()) + " channels, got " +
                                     shape_string(x.shape()));
    input_ = x;
    const int k = kernel();
    const ConvGeometry g{x.h(), x.w(), x.h(), x.w(), k, 1, k / 2};
    Tensor<T> y(x.shape());
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T* w = weight.value.channel(c, 0);
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    accumulate_tap(g, ky, kx, w[ky * k + kx], x.channel(n, c), y.channel(n, c));
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> DepthwiseConv<T>::backward(const Tensor<T>& grad_out) {
    input_.require_same_shape(grad_out, "DepthwiseConv backward");
    const int k = kernel();
    const ConvGeometry g{input_.h(), input_.w(), input_.h(), input_.w(), k, 1, k / 2};
    Tensor<T> dx(input_.shape());
    for (int n = 0; n < input_.n(); ++n) {
        for (int c = 0; c < input_.c(); ++c) {
            const T* w = weight.value.channel(c, 0);
            T* gw = weight.grad.channel(c, 0);
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    gw[ky * k + kx] += backprop_tap(g, ky, kx, w[ky * k + kx], input_.channel(n, c),
                                                    grad_out.channel(n, c), dx.channel(n, c));
                }
            }
        }
    }
    return dx;
}

template <typename T>
void DepthwiseConv<T>::collect(ParamList<T>& params) {
    params.push_back(&weight);
}

template <typename T>
void DepthwiseConv<T>::collect_state(StateList<T>& state) {
    state.emplace_back(weight.name, &weight.value);
}

// ---------------------------------------------------------------------------
// PointwiseConv

template <typename T>
PointwiseConv<T>::PointwiseConv(const std::string& name, int in, int out, bool with_bias)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {with_bias ? out : 0}), has_bias_(with_bias) {}

template <typename T>
void PointwiseConv<T>::init(Rng& rng) {
    kaiming(weight.value, in_channels(), rng);
    bias.value.fill(T(0));
}

template <typename T>
Tensor<T> PointwiseConv<T>::forward(const Tensor<T>& x) {
    x.require_rank(4, "PointwiseConv input");
    require(x.c() == in_channels(), "PointwiseConv: expected " + std::to_string(in_channels()) +
                                        " channels, got " + shape_string(x.shape()));
    input_ = x;
    const auto hw = static_cast<Eigen::Index>(x.plane());
    Tensor<T> y({x.n(), out_channels(), x.h(), x.w()});
    CMapR<T> w(weight.value.data(), out_channels(), in_channels());
    for (int n = 0; n < x.n(); ++n) {
        MapR<T> yn(y.channel(n, 0), out_channels(), hw);
        yn.noalias() = w * CMapR<T>(x.channel(n, 0), in_channels(), hw);
        if (has_bias_) {
            yn.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.value.data(), out_channels());
        }
    }
    return y;
}

template <typename T>
Tensor<T> PointwiseConv<T>::backward(const Tensor<T>& grad_out) {
    require(grad_out.rank() == 4 && grad_out.n() == input_.n() && grad_out.c() == out_channels() &&
                grad_out.h() == input_.h() && grad_out.w() == input_.w(),
            "PointwiseConv backward: gradient shape " + shape_string(grad_out.shape()));
    const auto hw = static_cast<Eigen::Index>(input_.plane());
    Tensor<T> dx(input_.shape());
    CMapR<T> w(weight.value.data(), out_channels(), in_channels());
    MapR<T> gw(weight.grad.data(), out_channels(), in_channels());
    for (int n = 0; n < input_.n(); ++n) {
        CMapR<T> g(grad_out.channel(n, 0), out_channels(), hw);
        gw.noalias() += g * CMapR<T>(input_.channel(n, 0), in_channels(), hw).transpose();
        MapR<T>(dx.channel(n, 0), in_channels(), hw).noalias() = w.transpose() * g;
        if (has_bias_) {
            for (int o = 0; o < out_channels(); ++o) {
                T sum = 0;
                for (Eigen::Index k = 0; k < hw; ++k) {
                    sum += g(o, k);
                }
                bias.grad[o] += sum;
            }
        }
    }
    return dx;
}

template <typename T>
void PointwiseConv<T>::collect(ParamList<T>& params) {
    params.push_back(&weight);
    if (has_bias_) {
        params.push_back(&bias);
    }
}

template <typename T>
void PointwiseConv<T>::collect_state(StateList<T>& state) {
    state.emplace_back(weight.name, &weight.value);
    if (has_bias_) {
        state.emplace_back(bias.name, &bias.value);
    }
}

// ---------------------------------------------------------------------------
// Dsc / DoubleDsc

template <typename T>
Dsc<T>::Dsc(const std::string& name, int in, int out)
    : depthwise(name + ".depthwise", in, 3), pointwise(name + ".pointwise", in, out, false) {}

template <typename T>
void Dsc<T>::init(Rng& rng) {
    depthwise.init(rng);
    pointwise.init(rng);
}

template <typename T>
Tensor<T> Dsc<T>::forward(const Tensor<T>& x) {
    return pointwise.forward(depthwise.forward(x));
}

template <typename T>
Tensor<T> Dsc<T>::backward(const Tensor<T>& grad_out) {
    return depthwise.backward(pointwise.backward(grad_out));
}

template <typename T>
void Dsc<T>::collect(ParamList<T>& params) {
    depthwise.collect(params);
    pointwise.collect(params);
}

template <typename T>
void Dsc<T>::collect_state(StateList<T>& state) {
    depthwise.collect_state(state);
    pointwise.collect_state(state);
}

template <typename T>
DoubleDsc<T>::DoubleDsc(const std::string& name, int in, int out)
    : first(name + ".dsc1", in, out),
      first_norm(name + ".bn1", out),
      second(name + ".dsc2", out, out),
      second_norm(name + ".bn2", out) {}

template <typename T>
void DoubleDsc<T>::init(Rng& rng) {
    first.init(rng);
    second.init(rng);
}

template <typename T>
void DoubleDsc<T>::set_training(bool training) {
    first_norm.training = training;
    second_norm.training = training;
}

template <typename T>
Tensor<T> DoubleDsc<T>::forward(const Tensor<T>& x) {
    auto y = first_relu.forward(first_norm.forward(first.forward(x)));
    return second_relu.forward(second_norm.forward(second.forward(y)));
}

template <typename T>
Tensor<T> DoubleDsc<T>::backward(const Tensor<T>& grad_out) {
    auto g = second.backward(second_norm.backward(second_relu.backward(grad_out)));
    return first.backward(first_norm.backward(first_relu.backward(g)));
}

template <typename T>
void DoubleDsc<T>::collect(ParamList<T>& params) {
    first.collect(params);
    first_norm.collect(params);
    second.collect(params);
    second_norm.collect(params);
}

template <typename T>
void DoubleDsc<T>::collect_state(StateList<T>& state) {
    first.collect_state(state);
    first_norm.collect_state(state);
    second.collect_state(state);
    second_norm.collect_state(state);
}

// ---------------------------------------------------------------------------
// Cbam

template <typename T>
Cbam<T>::Cbam(const std::string& name, int channels, int reduction)
    : fc1(name + ".fc1", channels, channels / reduction),
      fc2(name + ".fc2", channels / reduction, channels),
      spatial(name + ".spatial", 2, 1, kSpatialKernel, 1, kSpatialKernel / 2, 1, true) {
    if (reduction <= 0 || channels % reduction != 0) {
        throw ShapeMismatch("Cbam '" + name + "': reduction " + std::to_string(reduction) + " must divide " +
                            std::to_string(channels) + " channels");
    }
}

template <typename T>
void Cbam<T>::init(Rng& rng) {
    fc1.init(rng);
    fc2.init(rng);
    spatial.init(rng);
}

template <typename T>
Tensor<T> Cbam<T>::forward(const Tensor<T>& x) {
    x.require_rank(4, "Cbam input");
    require(x.c() == channels(), "Cbam: expected " + std::to_string(channels()) + " channels, got " +
                                     shape_string(x.shape()));
    input_ = x;
    const int n_batch = x.n();
    const int c = x.c();
    const std::size_t plane = x.plane();

    // Channel descriptors: rows [0, N) average-pooled, rows [N, 2N) max-pooled.
    Tensor<T> pooled({2 * n_batch, c});
    channel_argmax_.assign(static_cast<std::size_t>(n_batch * c), 0);
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const T* p = x.channel(n, ch);
            T sum = T(0);
            T best = p[0];
            std::size_t arg = 0;
            for (std::size_t i = 0; i < plane; ++i) {
                sum += p[i];
                if (p[i] > best) {
                    best = p[i];
                    arg = i;
                }
            }
            pooled[static_cast<std::size_t>(n * c + ch)] = sum / static_cast<T>(plane);
            pooled[static_cast<std::size_t>((n_batch + n) * c + ch)] = best;
            channel_argmax_[static_cast<std::size_t>(n * c + ch)] = static_cast<int>(arg);
        }
    }
    const auto mlp = fc2.forward(mlp_relu.forward(fc1.forward(pooled)));
    channel_gate_ = Tensor<T>({n_batch, c});
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            channel_gate_[static_cast<std::size_t>(n * c + ch)] =
                sigmoid(mlp[static_cast<std::size_t>(n * c + ch)] + mlp[static_cast<std::size_t>((n_batch + n) * c + ch)]);
        }
    }
    gated_ = Tensor<T>(x.shape());
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const T gate = channel_gate_[static_cast<std::size_t>(n * c + ch)];
            const T* src = x.channel(n, ch);
            T* dst = gated_.channel(n, ch);
            for (std::size_t i = 0; i < plane; ++i) {
                dst[i] = src[i] * gate;
            }
        }
    }

    // Spatial descriptors: channel mean and channel max of the gated map.
    Tensor<T> descriptors({n_batch, 2, x.h(), x.w()});
    spatial_argmax_.assign(static_cast<std::size_t>(n_batch) * plane, 0);
    for (int n = 0; n < n_batch; ++n) {
        T* mean = descriptors.channel(n, 0);
        T* mx = descriptors.channel(n, 1);
        std::copy(gated_.channel(n, 0), gated_.channel(n, 0) + plane, mean);
        std::copy(gated_.channel(n, 0), gated_.channel(n, 0) + plane, mx);
        int* arg = spatial_argmax_.data() + static_cast<std::size_t>(n) * plane;
        for (int ch = 1; ch < c; ++ch) {
            const T* p = gated_.channel(n, ch);
            for (std::size_t i = 0; i < plane; ++i) {
                mean[i] += p[i];
                if (p[i] > mx[i]) {
                    mx[i] = p[i];
                    arg[i] = ch;
                }
            }
        }
        const T inv_c = T(1) / static_cast<T>(c);
        for (std::size_t i = 0; i < plane; ++i) {
            mean[i] *= inv_c;
        }
    }
    const auto logits = spatial.forward(descriptors);
    spatial_gate_ = Tensor<T>(logits.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        spatial_gate_[i] = sigmoid(logits[i]);
    }
    Tensor<T> y(x.shape());
    for (int n = 0; n < n_batch; ++n) {
        const T* gate = spatial_gate_.channel(n, 0);
        for (int ch = 0; ch < c; ++ch) {
            const T* src = gated_.channel(n, ch);
            T* dst = y.channel(n, ch);
            for (std::size_t i = 0; i < plane; ++i) {
                dst[i] = src[i] * gate[i];
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> Cbam<T>::backward(const Tensor<T>& grad_out) {
    input_.require_same_shape(grad_out, "Cbam backward");
    const int n_batch = input_.n();
    const int c = input_.c();
    const std::size_t plane = input_.plane();

    // Through the spatial gate.
    Tensor<T> grad_gated(input_.shape());
    Tensor<T> grad_logits(spatial_gate_.shape());
    for (int n = 0; n < n_batch; ++n) {
        const T* gate = spatial_gate_.channel(n, 0);
        T* gl = grad_logits.channel(n, 0);
        for (int ch = 0; ch < c; ++ch) {
            const T* g = grad_out.channel(n, ch);
            const T* v = gated_.channel(n, ch);
            T* gg = grad_gated.channel(n, ch);
            for (std::size_t i = 0; i < plane; ++i) {
                gg[i] = g[i] * gate[i];
                gl[i] += g[i] * v[i];
            }
        }
        for (std::size_t i = 0; i < plane; ++i) {
            gl[i] *= gate[i] * (T(1) - gate[i]);
        }
    }
    const auto grad_desc = spatial.backward(grad_logits);
    const T inv_c = T(1) / static_cast<T>(c);
    for (int n = 0; n < n_batch; ++n) {
        const T* gmean = grad_desc.channel(n, 0);
        const T* gmax = grad_desc.channel(n, 1);
        const int* arg = spatial_argmax_.data() + static_cast<std::size_t>(n) * plane;
        for (int ch = 0; ch < c; ++ch) {
            T* gg = grad_gated.channel(n, ch);
            for (std::size_t i = 0; i < plane; ++i) {
                gg[i] += gmean[i] * inv_c;
            }
        }
        for (std::size_t i = 0; i < plane; ++i) {
            grad_gated.channel(n, arg[i])[i] += gmax[i];
        }
    }

    // Through the channel gate.
    Tensor<T> dx(input_.shape());
    Tensor<T> grad_mlp({2 * n_batch, c});
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const auto k = static_cast<std::size_t>(n * c + ch);
            const T gate = channel_gate_[k];
            const T* gg = grad_gated.channel(n, ch);
            const T* src = input_.channel(n, ch);
            T* d = dx.channel(n, ch);
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) {
                acc += gg[i] * src[i];
                d[i] = gg[i] * gate;
            }
            const T gz = acc * gate * (T(1) - gate);
            grad_mlp[k] = gz;
            grad_mlp[static_cast<std::size_t>((n_batch + n) * c + ch)] = gz;
        }
    }
    const auto grad_pooled = fc1.backward(mlp_relu.backward(fc2.backward(grad_mlp)));
    const T inv_plane = T(1) / static_cast<T>(plane);
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const T g_avg = grad_pooled[static_cast<std::size_t>(n * c + ch)] * inv_plane;
            const T g_max = grad_pooled[static_cast<std::size_t>((n_batch + n) * c + ch)];
            T* d = dx.channel(n, ch);
            for (std::size_t i = 0; i < plane; ++i) {
                d[i] += g_avg;
            }
            d[channel_argmax_[static_cast<std::size_t>(n * c + ch)]] += g_max;
        }
    }
    return dx;
}

template <typename T>
void Cbam<T>::collect(ParamList<T>& params) {
    fc1.collect(params);
    fc2.collect(params);
    spatial.collect(params);
}

template <typename T>
void Cbam<T>::collect_state(StateList<T>& state) {
    fc1.collect_state(state);
    fc2.collect_state(state);
    spatial.collect_state(state);
}

// ---------------------------------------------------------------------------
// Pooling / resampling

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x) {
    x.require_rank(4, "MaxPool2 input");
    require(x.h() % 2 == 0 && x.w() % 2 == 0, "MaxPool2 needs even spatial dims, got " + shape_string(x.shape()));
    input_shape_ = x.shape();
    const int ho = x.h() / 2;
    const int wo = x.w() / 2;
    Tensor<T> y({x.n(), x.c(), ho, wo});
    argmax_.resize(y.size());
    std::size_t k = 0;
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T* in = x.channel(n, c);
            const std::size_t base = static_cast<std::size_t>(in - x.data());
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox, ++k) {
                    std::size_t best = static_cast<std::size_t>(2 * oy) * static_cast<std::size_t>(x.w()) +
                                       static_cast<std::size_t>(2 * ox);
                    const std::size_t candidates[3] = {best + 1, best + static_cast<std::size_t>(x.w()),
                                                       best + static_cast<std::size_t>(x.w()) + 1};
                    for (const auto cand : candidates) {
                        if (in[cand] > in[best]) {
                            best = cand;
                        }
                    }
                    y[k] = in[best];
                    argmax_[k] = base + best;
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& grad_out) {
    require(grad_out.size() == argmax_.size(), "MaxPool2 backward: gradient size mismatch");
    Tensor<T> dx(input_shape_);
    for (std::size_t k = 0; k < argmax_.size(); ++k) {
        dx[argmax_[k]] += grad_out[k];
    }
    return dx;
}

namespace {

struct LerpTap {
    int lo;
    int hi;
    double frac;  // weight of `hi`
};

// Source taps for x2 upsampling with half-pixel centers:
// src = (dst + 0.5) / 2 - 0.5, clamped below at 0.
std::vector<LerpTap> upsample_taps(int in) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(2 * in));
    for (int o = 0; o < 2 * in; ++o) {
        const double src = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
        const int lo = static_cast<int>(std::floor(src));
        const int hi = std::min(lo + 1, in - 1);
        taps[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
    }
    return taps;
}

}  // namespace

template <typename T>
Tensor<T> UpsampleBilinear2<T>::forward(const Tensor<T>& x) {
    x.require_rank(4, "UpsampleBilinear2 input");
    input_shape_ = x.shape();
    const auto ty = upsample_taps(x.h());
    const auto tx = upsample_taps(x.w());
    const int ho = 2 * x.h();
    const int wo = 2 * x.w();
    Tensor<T> y({x.n(), x.c(), ho, wo});
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const T* in = x.channel(n, c);
            T* out = y.channel(n, c);
            for (int oy = 0; oy < ho; ++oy) {
                const auto& a = ty[static_cast<std::size_t>(oy)];
                const T fy = static_cast<T>(a.frac);
                const T* r0 = in + static_cast<std::ptrdiff_t>(a.lo) * x.w();
                const T* r1 = in + static_cast<std::ptrdiff_t>(a.hi) * x.w();
                T* orow = out + static_cast<std::ptrdiff_t>(oy) * wo;
                for (int ox = 0; ox < wo; ++ox) {
                    const auto& b = tx[static_cast<std::size_t>(ox)];
                    const T fx = static_cast<T>(b.frac);
                    const T top = r0[b.lo] + fx * (r0[b.hi] - r0[b.lo]);
                    const T bottom = r1[b.lo] + fx * (r1[b.hi] - r1[b.lo]);
                    orow[ox] = top + fy * (bottom - top);
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> UpsampleBilinear2<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> dx(input_shape_);
    require(grad_out.rank() == 4 && grad_out.h() == 2 * dx.h() && grad_out.w() == 2 * dx.w() &&
                grad_out.n() == dx.n() && grad_out.c() == dx.c(),
            "UpsampleBilinear2 backward: gradient shape " + shape_string(grad_out.shape()));
    const auto ty = upsample_taps(dx.h());
    const auto tx = upsample_taps(dx.w());
    const int wo = grad_out.w();
    for (int n = 0; n < dx.n(); ++n) {
        for (int c = 0; c < dx.c(); ++c) {
            const T* g = grad_out.channel(n, c);
            T* d = dx.channel(n, c);
            for (int oy = 0; oy < grad_out.h(); ++oy) {
                const auto& a = ty[static_cast<std::size_t>(oy)];
                const T fy = static_cast<T>(a.frac);
                T* r0 = d + static_cast<std::ptrdiff_t>(a.lo) * dx.w();
                T* r1 = d + static_cast<std::ptrdiff_t>(a.hi) * dx.w();
                const T* grow = g + static_cast<std::ptrdiff_t>(oy) * wo;
                for (int ox = 0; ox < wo; ++ox) {
                    const auto& b = tx[static_cast<std::size_t>(ox)];
                    const T fx = static_cast<T>(b.frac);
                    const T top = grow[ox] * (T(1) - fy);
                    const T bottom = grow[ox] * fy;
                    r0[b.lo] += top * (T(1) - fx);
                    r0[b.hi] += top * fx;
                    r1[b.lo] += bottom * (T(1) - fx);
                    r1[b.hi] += bottom * fx;
                }
            }
        }
    }
    return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    a.require_rank(4, "concat_channels");
    b.require_rank(4, "concat_channels");
    require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
            "concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    Tensor<T> y({a.n(), a.c() + b.c(), a.h(), a.w()});
    const std::size_t sa = static_cast<std::size_t>(a.c()) * a.plane();
    const std::size_t sb = static_cast<std::size_t>(b.c()) * b.plane();
    for (int n = 0; n < a.n(); ++n) {
        std::copy(a.channel(n, 0), a.channel(n, 0) + sa, y.channel(n, 0));
        std::copy(b.channel(n, 0), b.channel(n, 0) + sb, y.channel(n, a.c()));
    }
    return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first_channels) {
    x.require_rank(4, "split_channels");
    require(first_channels >= 0 && first_channels <= x.c(), "split_channels: bad split");
    Tensor<T> a({x.n(), first_channels, x.h(), x.w()});
    Tensor<T> b({x.n(), x.c() - first_channels, x.h(), x.w()});
    const std::size_t sa = static_cast<std::size_t>(a.c()) * x.plane();
    const std::size_t sb = static_cast<std::size_t>(b.c()) * x.plane();
    for (int n = 0; n < x.n(); ++n) {
        std::copy(x.channel(n, 0), x.channel(n, 0) + sa, a.data() + static_cast<std::size_t>(n) * sa);
        std::copy(x.channel(n, first_channels), x.channel(n, first_channels) + sb,
                  b.data() + static_cast<std::size_t>(n) * sb);
    }
    return {std::move(a), std::move(b)};
}

#define GSEC_INSTANTIATE_LAYERS(T)                                                   \
    template class Linear<T>;                                                        \
    template class BatchNorm<T>;                                                     \
    template class Relu<T>;                                                          \
    template class Sigmoid<T>;                                                       \
    template class Conv2d<T>;                                                        \
    template class DepthwiseConv<T>;                                                 \
    template class PointwiseConv<T>;                                                 \
    template class Dsc<T>;                                                           \
    template class DoubleDsc<T>;                                                     \
    template class Cbam<T>;                                                          \
    template class MaxPool2<T>;                                                      \
    template class UpsampleBilinear2<T>;                                             \
    template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);       \
    template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, int);

GSEC_INSTANTIATE_LAYERS(float)
GSEC_INSTANTIATE_LAYERS(double)

#undef GSEC_INSTANTIATE_LAYERS

}  // namespace gsec::nn
