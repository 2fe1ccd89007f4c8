#include "flood/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace flood::nn {

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) fail(ErrorCategory::invalid_argument, "tensor dimensions must be positive, got " + shape_text(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_text(const Shape& s) {
    std::string out = "(";
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (k) out += ",";
        out += std::to_string(s[k]);
    }
    return out + ")";
}

template <class T>
Tensor<T>::Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape_size(shape)) {
        fail(ErrorCategory::size_mismatch, "tensor " + shape_text(shape) + " given " + std::to_string(values.size()) + " values");
    }
}

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

void require4(const Shape& s, const char* what) {
    if (s.size() != 4) fail(ErrorCategory::invalid_argument, std::string(what) + ": expected (N,C,H,W), got " + shape_text(s));
}

// Fixed-order row sum. Eigen's vectorized reductions peel by address alignment, which
// would make gradients depend on where the buffer happens to live.
template <class T>
T row_sum(const T* p, std::size_t n) {
    T s = 0;
    for (std::size_t k = 0; k < n; ++k) s += p[k];
    return s;
}

int conv_out(int n, int k, int s, int p, const char* what) {
    const int span = n + 2 * p - k;
    if (span < 0) {
        fail(ErrorCategory::invalid_argument,
             std::string(what) + ": kernel " + std::to_string(k) + " larger than padded extent " + std::to_string(n + 2 * p));
    }
    return span / s + 1;
}

// Output columns ox with 0 <= ox * s - p + kj < W.
inline void valid_range(int W, int Wo, int s, int p, int kj, int& lo, int& hi) {
    const int a = p - kj;
    lo = a > 0 ? (a + s - 1) / s : 0;
    const int b = W - 1 + p - kj;
    hi = b < 0 ? 0 : std::min(Wo, b / s + 1);
    if (hi < lo) hi = lo;
}

// cols is (C*K*K) x (Ho*Wo), row-major.
template <class T>
void im2col(const T* x, int C, int H, int W, int K, int s, int p, int Ho, int Wo, T* cols) {
    const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int ki = 0; ki < K; ++ki) {
            for (int kj = 0; kj < K; ++kj) {
                T* dst = cols + (static_cast<std::size_t>(c * K + ki) * K + kj) * plane;
                int lo, hi;
                valid_range(W, Wo, s, p, kj, lo, hi);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * s - p + ki;
                    T* row = dst + static_cast<std::size_t>(oy) * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(row, row + Wo, T(0));
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(iy) * W - p + kj;
                    std::fill(row, row + lo, T(0));
                    if (s == 1) {
                        std::copy(src + lo, src + hi, row + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) row[ox] = src[ox * s];
                    }
                    std::fill(row + hi, row + Wo, T(0));
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates cols into x.
template <class T>
void col2im(const T* cols, int C, int H, int W, int K, int s, int p, int Ho, int Wo, T* x) {
    const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
    if (s == K && p == 0 && Ho * K == H && Wo * K == W) {
        // Non-overlapping tiles: every x element receives exactly one entry; write x row by row.
        for (int c = 0; c < C; ++c) {
            for (int oy = 0; oy < Ho; ++oy) {
                for (int ki = 0; ki < K; ++ki) {
                    T* __restrict dst = x + (static_cast<std::size_t>(c) * H + oy * K + ki) * W;
                    for (int kj = 0; kj < K; ++kj) {
                        const T* __restrict src = cols + (static_cast<std::size_t>(c * K + ki) * K + kj) * plane + static_cast<std::size_t>(oy) * Wo;
                        for (int ox = 0; ox < Wo; ++ox) dst[ox * K + kj] += src[ox];
                    }
                }
            }
        }
        return;
    }
    for (int c = 0; c < C; ++c) {
        T* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int ki = 0; ki < K; ++ki) {
            for (int kj = 0; kj < K; ++kj) {
                const T* src = cols + (static_cast<std::size_t>(c * K + ki) * K + kj) * plane;
                int lo, hi;
                valid_range(W, Wo, s, p, kj, lo, hi);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * s - p + ki;
                    if (iy < 0 || iy >= H) continue;
                    const T* __restrict row = src + static_cast<std::size_t>(oy) * Wo;
                    T* __restrict dst = xc + static_cast<std::size_t>(iy) * W - p + kj;
                    if (s == 1) {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] += row[ox];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox * s] += row[ox];
                    }
                }
            }
        }
    }
}

// Stride-1 convolution with few output channels: Z = W' x with W' rows ordered (o, ki, kj),
// then y[o] accumulates the K*K shifted planes of Z. Avoids both im2col and a GEMM with a
// handful of rows.
template <class T>
void shift_gather(const T* z, T* y, int H, int W, int Ho, int Wo, int dy, int dx) {
    // y[oy][ox] += z[oy + dy][ox + dx]
    const int oy0 = std::max(0, -dy), oy1 = std::min(Ho, H - dy);
    const int ox0 = std::max(0, -dx), ox1 = std::min(Wo, W - dx);
    for (int oy = oy0; oy < oy1; ++oy) {
        const T* __restrict src = z + static_cast<std::size_t>(oy + dy) * W + dx;
        T* __restrict dst = y + static_cast<std::size_t>(oy) * Wo;
        for (int ox = ox0; ox < ox1; ++ox) dst[ox] += src[ox];
    }
}

template <class T>
void shift_scatter(T* z, const T* y, int H, int W, int Ho, int Wo, int dy, int dx) {
    // z[oy + dy][ox + dx] = y[oy][ox]
    const int oy0 = std::max(0, -dy), oy1 = std::min(Ho, H - dy);
    const int ox0 = std::max(0, -dx), ox1 = std::min(Wo, W - dx);
    for (int oy = oy0; oy < oy1; ++oy) {
        T* __restrict dst = z + static_cast<std::size_t>(oy + dy) * W + dx;
        const T* __restrict src = y + static_cast<std::size_t>(oy) * Wo;
        for (int ox = ox0; ox < ox1; ++ox) dst[ox] = src[ox];
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Layer specs
// ---------------------------------------------------------------------------

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::conv_transpose: return "conv_transpose";
        case LayerKind::prelu: return "prelu";
        case LayerKind::batch_norm: return "batch_norm";
        case LayerKind::residual_block: return "residual_block";
        case LayerKind::sigmoid: return "sigmoid";
    }
    return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
    for (LayerKind k : {LayerKind::conv, LayerKind::conv_transpose, LayerKind::prelu, LayerKind::batch_norm,
                        LayerKind::residual_block, LayerKind::sigmoid}) {
        if (s == layer_kind_name(k)) return k;
    }
    fail(ErrorCategory::config, "unknown layer kind '" + s + "'");
}

namespace {

void check_spec(const LayerSpec& spec) {
    const std::string name = layer_kind_name(spec.kind);
    if (spec.in_channels <= 0 || spec.out_channels <= 0 || spec.kernel <= 0 || spec.stride <= 0 || spec.padding < 0) {
        fail(ErrorCategory::invalid_argument, name + ": channels, kernel and stride must be positive, padding nonnegative");
    }
    switch (spec.kind) {
        case LayerKind::prelu:
        case LayerKind::batch_norm:
        case LayerKind::sigmoid:
            if (spec.in_channels != spec.out_channels) fail(ErrorCategory::invalid_argument, name + ": in and out channels differ");
            break;
        case LayerKind::residual_block:
            if (spec.in_channels != spec.out_channels) fail(ErrorCategory::invalid_argument, name + ": in and out channels differ");
            if (spec.stride != 1 || spec.kernel != 2 * spec.padding + 1) {
                fail(ErrorCategory::invalid_argument, name + ": needs stride 1 and kernel = 2 * padding + 1");
            }
            break;
        default:
            break;
    }
}

}  // namespace

Shape layer_output_shape(const LayerSpec& spec, const Shape& chw) {
    check_spec(spec);
    if (chw.size() != 3) fail(ErrorCategory::invalid_argument, "layer input must be (C,H,W)");
    if (chw[0] != spec.in_channels) {
        fail(ErrorCategory::invalid_argument, std::string(layer_kind_name(spec.kind)) + ": expects " +
                                                  std::to_string(spec.in_channels) + " channels, got " + std::to_string(chw[0]));
    }
    switch (spec.kind) {
        case LayerKind::conv:
            return {spec.out_channels, conv_out(chw[1], spec.kernel, spec.stride, spec.padding, "conv"),
                    conv_out(chw[2], spec.kernel, spec.stride, spec.padding, "conv")};
        case LayerKind::conv_transpose: {
            const int h = (chw[1] - 1) * spec.stride - 2 * spec.padding + spec.kernel;
            const int w = (chw[2] - 1) * spec.stride - 2 * spec.padding + spec.kernel;
            if (h <= 0 || w <= 0) fail(ErrorCategory::invalid_argument, "conv_transpose: empty output");
            return {spec.out_channels, h, w};
        }
        default:
            return chw;
    }
}

std::size_t layer_parameter_count(const LayerSpec& spec) {
    check_spec(spec);
    const std::size_t ci = static_cast<std::size_t>(spec.in_channels);
    const std::size_t co = static_cast<std::size_t>(spec.out_channels);
    const std::size_t kk = static_cast<std::size_t>(spec.kernel) * static_cast<std::size_t>(spec.kernel);
    switch (spec.kind) {
        case LayerKind::conv:
        case LayerKind::conv_transpose: return ci * co * kk + co;
        case LayerKind::prelu: return ci;
        case LayerKind::batch_norm: return 2 * ci;
        case LayerKind::residual_block: return 2 * (ci * ci * kk + ci) + 2 * (2 * ci) + 2 * ci;
        case LayerKind::sigmoid: return 0;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Network configs
// ---------------------------------------------------------------------------

namespace {

LayerSpec conv(int ci, int co, int k, int s = 1, int p = 0) { return {LayerKind::conv, ci, co, k, s, p}; }
LayerSpec convt(int ci, int co, int k, int s = 1, int p = 0) { return {LayerKind::conv_transpose, ci, co, k, s, p}; }
LayerSpec bn(int c) { return {LayerKind::batch_norm, c, c, 1, 1, 0}; }
LayerSpec act(int c) { return {LayerKind::prelu, c, c, 1, 1, 0}; }
LayerSpec res(int c) { return {LayerKind::residual_block, c, c, 3, 1, 1}; }

void push_norm_act(std::vector<LayerSpec>& v, LayerSpec l) {
    const int c = l.out_channels;
    v.push_back(l);
    v.push_back(bn(c));
    v.push_back(act(c));
}

}  // namespace

NetworkConfig NetworkConfig::desk() {
    NetworkConfig c;
    push_norm_act(c.layers, conv(5, 16, 3, 1, 1));
    push_norm_act(c.layers, conv(16, 64, 4, 4, 0));
    c.layers.push_back(res(64));
    c.layers.push_back(res(64));
    push_norm_act(c.layers, convt(64, 32, 4, 4, 0));
    c.layers.push_back(conv(32, 3, 3, 1, 1));
    c.state_skip = true;
    return c;
}

NetworkConfig NetworkConfig::full() {
    NetworkConfig c;
    auto& v = c.layers;
    push_norm_act(v, conv(5, 16, 5, 1, 0));        // 100 -> 96
    push_norm_act(v, conv(16, 64, 1, 1, 0));
    push_norm_act(v, conv(64, 64, 2, 2, 0));       // 48
    push_norm_act(v, conv(64, 128, 1, 1, 0));
    push_norm_act(v, conv(128, 128, 4, 4, 0));     // 12
    push_norm_act(v, conv(128, 256, 1, 1, 0));
    v.push_back(res(256));                         // layers 7-8
    v.push_back(res(256));                         // layers 9-10
    push_norm_act(v, convt(256, 128, 3, 2, 0));    // 25
    push_norm_act(v, convt(128, 64, 2, 2, 0));     // 50
    push_norm_act(v, conv(64, 64, 1, 1, 0));
    push_norm_act(v, convt(64, 32, 2, 2, 0));      // 100
    push_norm_act(v, conv(32, 32, 1, 1, 0));
    push_norm_act(v, conv(32, 16, 3, 1, 1));
    push_norm_act(v, conv(16, 3, 1, 1, 0));
    return c;
}

NetworkConfig NetworkConfig::patch_discriminator(int channels) {
    NetworkConfig c;
    c.input_channels = channels;
    c.output_channels = 1;
    c.layers.push_back(conv(channels, 16, 4, 2, 1));
    c.layers.push_back(act(16));
    push_norm_act(c.layers, conv(16, 32, 4, 2, 1));
    c.layers.push_back(conv(32, 1, 3, 1, 1));
    c.param_seed = 13;
    return c;
}

std::string NetworkConfig::to_text() const {
    std::ostringstream os;
    os << "# kind in out kernel stride padding\n";
    os << "option input_channels " << input_channels << "\n";
    os << "option output_channels " << output_channels << "\n";
    os << "option state_skip " << (state_skip ? 1 : 0) << "\n";
    os << "option param_seed " << param_seed << "\n";
    for (const LayerSpec& l : layers) {
        os << layer_kind_name(l.kind) << ' ' << l.in_channels << ' ' << l.out_channels << ' ' << l.kernel << ' '
           << l.stride << ' ' << l.padding << "\n";
    }
    return os.str();
}

NetworkConfig NetworkConfig::parse(const std::string& text) {
    NetworkConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word)) continue;
        const std::string where = "layers line " + std::to_string(lineno);
        if (word == "option") {
            std::string key;
            long long value = 0;
            if (!(ls >> key >> value)) fail(ErrorCategory::config, where + ": expected 'option <key> <value>'");
            if (key == "input_channels") c.input_channels = static_cast<int>(value);
            else if (key == "output_channels") c.output_channels = static_cast<int>(value);
            else if (key == "state_skip") c.state_skip = value != 0;
            else if (key == "param_seed") c.param_seed = static_cast<std::uint64_t>(value);
            else fail(ErrorCategory::config, where + ": unknown option '" + key + "'");
        } else {
            LayerSpec l;
            l.kind = parse_layer_kind(word);
            if (!(ls >> l.in_channels >> l.out_channels >> l.kernel >> l.stride >> l.padding)) {
                fail(ErrorCategory::config, where + ": expected 'kind in out kernel stride padding'");
            }
            c.layers.push_back(l);
        }
        std::string extra;
        if (ls >> extra) fail(ErrorCategory::config, where + ": trailing text '" + extra + "'");
    }
    if (c.layers.empty()) fail(ErrorCategory::config, "layer list is empty");
    return c;
}

std::size_t NetworkConfig::parameter_count() const {
    std::size_t n = 0;
    for (const LayerSpec& l : layers) n += layer_parameter_count(l);
    return n;
}

Shape NetworkConfig::output_shape(int h, int w) const {
    if (layers.empty()) fail(ErrorCategory::invalid_argument, "network has no layers");
    Shape s{input_channels, h, w};
    for (const LayerSpec& l : layers) s = layer_output_shape(l, s);
    if (s[0] != output_channels) {
        fail(ErrorCategory::invalid_argument, "network produces " + std::to_string(s[0]) + " channels, expected " +
                                                  std::to_string(output_channels));
    }
    if (state_skip && (s[1] != h || s[2] != w || output_channels > input_channels)) {
        fail(ErrorCategory::invalid_argument, "state skip needs an output of the input's spatial size, got " + shape_text(s) +
                                                  " for " + std::to_string(h) + "x" + std::to_string(w));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Functional forms
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int padding) {
    require4(x.shape, "conv input");
    require4(w.shape, "conv weights");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), K = w.dim(2);
    if (w.dim(1) != C || w.dim(3) != K) fail(ErrorCategory::invalid_argument, "conv: weights " + shape_text(w.shape) + " do not fit input " + shape_text(x.shape));
    if (b.size() != static_cast<std::size_t>(Co)) fail(ErrorCategory::invalid_argument, "conv: bias size mismatch");
    if (stride <= 0 || padding < 0) fail(ErrorCategory::invalid_argument, "conv: bad stride or padding");
    const int Ho = conv_out(H, K, stride, padding, "conv"), Wo = conv_out(W, K, stride, padding, "conv");
    const int rows = C * K * K, plane = Ho * Wo;
    Tensor<T> y({N, Co, Ho, Wo});
    std::vector<T> cols(static_cast<std::size_t>(rows) * plane);
    CMapR<T> wm(w.data(), Co, rows);
    for (int n = 0; n < N; ++n) {
        im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, K, stride, padding, Ho, Wo, cols.data());
        MapR<T> ym(y.data() + static_cast<std::size_t>(n) * Co * plane, Co, plane);
        ym.noalias() = wm * CMapR<T>(cols.data(), rows, plane);
        for (int o = 0; o < Co; ++o) ym.row(o).array() += b.values[o];
    }
    return y;
}

template <class T>
ConvGrads<T> conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad_out, int stride, int padding) {
    require4(x.shape, "conv input");
    require4(grad_out.shape, "conv output gradient");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), K = w.dim(2);
    const int Ho = conv_out(H, K, stride, padding, "conv"), Wo = conv_out(W, K, stride, padding, "conv");
    if (grad_out.shape != Shape{N, Co, Ho, Wo}) fail(ErrorCategory::invalid_argument, "conv: output gradient has wrong shape");
    const int rows = C * K * K, plane = Ho * Wo;
    ConvGrads<T> g{Tensor<T>(x.shape), Tensor<T>(w.shape), Tensor<T>({Co})};
    std::vector<T> cols(static_cast<std::size_t>(rows) * plane), dcols(cols.size());
    CMapR<T> wm(w.data(), Co, rows);
    MapR<T> dw(g.weights.data(), Co, rows);
    for (int n = 0; n < N; ++n) {
        im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, K, stride, padding, Ho, Wo, cols.data());
        CMapR<T> gm(grad_out.data() + static_cast<std::size_t>(n) * Co * plane, Co, plane);
        dw.noalias() += gm * CMapR<T>(cols.data(), rows, plane).transpose();
        for (int o = 0; o < Co; ++o) g.bias.values[o] += row_sum(gm.data() + static_cast<std::size_t>(o) * plane, static_cast<std::size_t>(plane));
        MapR<T>(dcols.data(), rows, plane).noalias() = wm.transpose() * gm;
        col2im(dcols.data(), C, H, W, K, stride, padding, Ho, Wo, g.input.data() + static_cast<std::size_t>(n) * C * H * W);
    }
    return g;
}

template <class T>
Tensor<T> prelu(const Tensor<T>& x, const std::vector<T>& slope) {
    require4(x.shape, "prelu input");
    const int N = x.dim(0), C = x.dim(1);
    if (slope.size() != static_cast<std::size_t>(C) && slope.size() != 1) fail(ErrorCategory::invalid_argument, "prelu: slope size mismatch");
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor<T> y(x.shape);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const T a = slope.size() == 1 ? slope[0] : slope[c];
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            const T* __restrict src = x.data() + off;
            T* __restrict dst = y.data() + off;
            for (std::size_t k = 0; k < plane; ++k) dst[k] = std::max(src[k], T(0)) + a * std::min(src[k], T(0));
        }
    }
    return y;
}

namespace {

template <class T>
struct BnCache {
    std::vector<T> mean;
    std::vector<T> inv_std;
};

template <class T>
Tensor<T> bn_apply(const Tensor<T>& x, const std::vector<T>& scale, const std::vector<T>& shift, std::vector<T>& running_mean,
                   std::vector<T>& running_var, bool training, T momentum, T eps, BnCache<T>* cache) {
    require4(x.shape, "batch_norm input");
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const std::size_t count = static_cast<std::size_t>(N) * plane;
    if (scale.size() != static_cast<std::size_t>(C) || shift.size() != scale.size() || running_mean.size() != scale.size() ||
        running_var.size() != scale.size()) {
        fail(ErrorCategory::invalid_argument, "batch_norm: parameter size mismatch");
    }
    Tensor<T> y(x.shape);
    if (cache) {
        cache->mean.assign(static_cast<std::size_t>(C), T(0));
        cache->inv_std.assign(static_cast<std::size_t>(C), T(0));
    }
    for (int c = 0; c < C; ++c) {
        T mean, var;
        if (training) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) s += p[k];
            }
            const double m = s / static_cast<double>(count);
            double ss = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = x.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    const double d = p[k] - m;
                    ss += d * d;
                }
            }
            mean = static_cast<T>(m);
            var = static_cast<T>(ss / static_cast<double>(count));
            const T unbiased = count > 1 ? static_cast<T>(ss / static_cast<double>(count - 1)) : var;
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const T inv = T(1) / std::sqrt(var + eps);
        if (cache) {
            cache->mean[c] = mean;
            cache->inv_std[c] = inv;
        }
        const T sc = scale[c], sh = shift[c];
        for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            const T* __restrict src = x.data() + off;
            T* __restrict dst = y.data() + off;
            for (std::size_t k = 0; k < plane; ++k) dst[k] = sc * ((src[k] - mean) * inv) + sh;
        }
    }
    return y;
}

}  // namespace

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const std::vector<T>& scale, const std::vector<T>& shift, std::vector<T>& running_mean,
                     std::vector<T>& running_var, bool training, T momentum, T eps) {
    return bn_apply(x, scale, shift, running_mean, running_var, training, momentum, eps, static_cast<BnCache<T>*>(nullptr));
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    for (std::size_t k = 0; k < x.size(); ++k) {
        const T v = x.values[k];
        // Split by sign so large |v| never overflows exp.
        if (v >= T(0)) {
            y.values[k] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            y.values[k] = e / (T(1) + e);
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace {

template <class T>
void uniform_fill(Tensor<T>& t, Rng& rng, double bound) {
    for (T& v : t.values) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
class ConvLayer final : public Layer<T> {
public:
    explicit ConvLayer(const LayerSpec& s)
        : spec_(s), w_({s.out_channels, s.in_channels, s.kernel, s.kernel}), b_({s.out_channels}) {
        w_.track_grad();
        b_.track_grad();
    }
    LayerSpec spec() const override { return spec_; }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        require4(x.shape, "conv input");
        if (x.dim(1) != spec_.in_channels) fail(ErrorCategory::invalid_argument, "conv: channel mismatch for input " + shape_text(x.shape));
        in_shape_ = x.shape;
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), K = spec_.kernel, Co = spec_.out_channels;
        Ho_ = conv_out(H, K, spec_.stride, spec_.padding, "conv");
        Wo_ = conv_out(W, K, spec_.stride, spec_.padding, "conv");
        const int rows = C * K * K, plane = Ho_ * Wo_;
        Tensor<T> y({N, Co, Ho_, Wo_});
        shifted_ = spec_.stride == 1 && K > 1 && Co * K * K <= 32;
        if (shifted_) {
            x_ = x;
            const int taps = Co * K * K, hw = H * W;
            wshift_.resize(static_cast<std::size_t>(taps) * C);
            for (int o = 0; o < Co; ++o)
                for (int c = 0; c < C; ++c)
                    for (int t = 0; t < K * K; ++t)
                        wshift_[(static_cast<std::size_t>(o) * K * K + t) * C + c] = w_.values[(static_cast<std::size_t>(o) * C + c) * K * K + t];
            std::vector<T> z(static_cast<std::size_t>(taps) * hw);
            for (int n = 0; n < N; ++n) {
                MapR<T>(z.data(), taps, hw).noalias() =
                    CMapR<T>(wshift_.data(), taps, C) * CMapR<T>(x.data() + static_cast<std::size_t>(n) * C * hw, C, hw);
                T* yn = y.data() + static_cast<std::size_t>(n) * Co * plane;
                for (int o = 0; o < Co; ++o) {
                    T* yo = yn + static_cast<std::size_t>(o) * plane;
                    std::fill(yo, yo + plane, b_.values[o]);
                    for (int ki = 0; ki < K; ++ki)
                        for (int kj = 0; kj < K; ++kj)
                            shift_gather(z.data() + static_cast<std::size_t>((o * K + ki) * K + kj) * hw, yo, H, W, Ho_, Wo_,
                                         ki - spec_.padding, kj - spec_.padding);
                }
            }
            return y;
        }
        direct_ = K == 1 && spec_.stride == 1 && spec_.padding == 0;
        if (direct_) {
            cols_ = x.values;
        } else {
            cols_.resize(static_cast<std::size_t>(N) * rows * plane);
        }
        CMapR<T> wm(w_.data(), Co, rows);
        for (int n = 0; n < N; ++n) {
            T* cols = cols_.data() + static_cast<std::size_t>(n) * rows * plane;
            if (!direct_) {
                im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, K, spec_.stride, spec_.padding, Ho_, Wo_, cols);
            }
            MapR<T> ym(y.data() + static_cast<std::size_t>(n) * Co * plane, Co, plane);
            ym.noalias() = wm * CMapR<T>(cols, rows, plane);
            for (int o = 0; o < Co; ++o) ym.row(o).array() += b_.values[o];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const int N = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3], K = spec_.kernel, Co = spec_.out_channels;
        const int rows = C * K * K, plane = Ho_ * Wo_;
        if (g.shape != Shape{N, Co, Ho_, Wo_}) fail(ErrorCategory::invalid_argument, "conv: output gradient has wrong shape");
        Tensor<T> dx(in_shape_);
        if (shifted_) {
            const int taps = Co * K * K, hw = H * W;
            std::vector<T> dz(static_cast<std::size_t>(taps) * hw), dws(static_cast<std::size_t>(taps) * C, T(0));
            CMapR<T> ws(wshift_.data(), taps, C);
            MapR<T> dwm(dws.data(), taps, C);
            for (int n = 0; n < N; ++n) {
                const T* gn = g.data() + static_cast<std::size_t>(n) * Co * plane;
                std::fill(dz.begin(), dz.end(), T(0));
                for (int o = 0; o < Co; ++o) {
                    const T* go = gn + static_cast<std::size_t>(o) * plane;
                    T s = 0;
                    for (int k = 0; k < plane; ++k) s += go[k];
                    b_.grad[o] += s;
                    for (int ki = 0; ki < K; ++ki)
                        for (int kj = 0; kj < K; ++kj)
                            shift_scatter(dz.data() + static_cast<std::size_t>((o * K + ki) * K + kj) * hw, go, H, W, Ho_, Wo_,
                                          ki - spec_.padding, kj - spec_.padding);
                }
                CMapR<T> dzm(dz.data(), taps, hw);
                CMapR<T> xn(x_.data() + static_cast<std::size_t>(n) * C * hw, C, hw);
                MapR<T>(dx.data() + static_cast<std::size_t>(n) * C * hw, C, hw).noalias() = ws.transpose() * dzm;
                dwm.noalias() += dzm * xn.transpose();
            }
            for (int o = 0; o < Co; ++o)
                for (int c = 0; c < C; ++c)
                    for (int t = 0; t < K * K; ++t)
                        w_.grad[(static_cast<std::size_t>(o) * C + c) * K * K + t] += dws[(static_cast<std::size_t>(o) * K * K + t) * C + c];
            return dx;
        }
        std::vector<T> dcols(direct_ ? 0 : static_cast<std::size_t>(rows) * plane);
        CMapR<T> wm(w_.data(), Co, rows);
        MapR<T> dw(w_.grad.data(), Co, rows);
        for (int n = 0; n < N; ++n) {
            CMapR<T> gm(g.data() + static_cast<std::size_t>(n) * Co * plane, Co, plane);
            dw.noalias() += gm * CMapR<T>(cols_.data() + static_cast<std::size_t>(n) * rows * plane, rows, plane).transpose();
            for (int o = 0; o < Co; ++o) b_.grad[o] += row_sum(gm.data() + static_cast<std::size_t>(o) * plane, static_cast<std::size_t>(plane));
            T* dxn = dx.data() + static_cast<std::size_t>(n) * C * H * W;
            if (direct_) {
                MapR<T>(dxn, rows, plane).noalias() = wm.transpose() * gm;
            } else {
                MapR<T>(dcols.data(), rows, plane).noalias() = wm.transpose() * gm;
                col2im(dcols.data(), C, H, W, K, spec_.stride, spec_.padding, Ho_, Wo_, dxn);
            }
        }
        return dx;
    }

    std::vector<Tensor<T>*> parameters() override { return {&w_, &b_}; }

    void initialize(Rng& rng) override {
        const double fan_in = static_cast<double>(spec_.in_channels) * spec_.kernel * spec_.kernel;
        uniform_fill(w_, rng, std::sqrt(6.0 / fan_in));
        std::fill(b_.values.begin(), b_.values.end(), T(0));
    }

private:
    LayerSpec spec_;
    Tensor<T> w_, b_;
    Shape in_shape_;
    int Ho_ = 0, Wo_ = 0;
    bool direct_ = false;
    bool shifted_ = false;
    Tensor<T> x_;
    std::vector<T> wshift_;
    std::vector<T> cols_;
};

// Weights (Cin, Cout, K, K); the forward pass is the adjoint of a convolution.
template <class T>
class ConvTransposeLayer final : public Layer<T> {
public:
    explicit ConvTransposeLayer(const LayerSpec& s)
        : spec_(s), w_({s.in_channels, s.out_channels, s.kernel, s.kernel}), b_({s.out_channels}) {
        w_.track_grad();
        b_.track_grad();
    }
    LayerSpec spec() const override { return spec_; }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        require4(x.shape, "conv_transpose input");
        if (x.dim(1) != spec_.in_channels) fail(ErrorCategory::invalid_argument, "conv_transpose: channel mismatch for input " + shape_text(x.shape));
        x_ = x;
        const Shape out = layer_output_shape(spec_, {x.dim(1), x.dim(2), x.dim(3)});
        const int N = x.dim(0), Ci = x.dim(1), Hi = x.dim(2), Wi = x.dim(3), K = spec_.kernel, Co = spec_.out_channels;
        Ho_ = out[1];
        Wo_ = out[2];
        const int rows = Co * K * K, plane = Hi * Wi;
        Tensor<T> y({N, Co, Ho_, Wo_});
        std::vector<T> cols(static_cast<std::size_t>(rows) * plane);
        CMapR<T> wm(w_.data(), Ci, rows);
        for (int n = 0; n < N; ++n) {
            MapR<T>(cols.data(), rows, plane).noalias() =
                wm.transpose() * CMapR<T>(x.data() + static_cast<std::size_t>(n) * Ci * plane, Ci, plane);
            T* yn = y.data() + static_cast<std::size_t>(n) * Co * Ho_ * Wo_;
            col2im(cols.data(), Co, Ho_, Wo_, K, spec_.stride, spec_.padding, Hi, Wi, yn);
            for (int o = 0; o < Co; ++o) {
                T* p = yn + static_cast<std::size_t>(o) * Ho_ * Wo_;
                for (int k = 0; k < Ho_ * Wo_; ++k) p[k] += b_.values[o];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const int N = x_.dim(0), Ci = x_.dim(1), Hi = x_.dim(2), Wi = x_.dim(3), K = spec_.kernel, Co = spec_.out_channels;
        if (g.shape != Shape{N, Co, Ho_, Wo_}) fail(ErrorCategory::invalid_argument, "conv_transpose: output gradient has wrong shape");
        const int rows = Co * K * K, plane = Hi * Wi;
        Tensor<T> dx(x_.shape);
        std::vector<T> dcols(static_cast<std::size_t>(rows) * plane);
        CMapR<T> wm(w_.data(), Ci, rows);
        MapR<T> dw(w_.grad.data(), Ci, rows);
        for (int n = 0; n < N; ++n) {
            const T* gn = g.data() + static_cast<std::size_t>(n) * Co * Ho_ * Wo_;
            im2col(gn, Co, Ho_, Wo_, K, spec_.stride, spec_.padding, Hi, Wi, dcols.data());
            CMapR<T> dc(dcols.data(), rows, plane);
            MapR<T>(dx.data() + static_cast<std::size_t>(n) * Ci * plane, Ci, plane).noalias() = wm * dc;
            dw.noalias() += CMapR<T>(x_.data() + static_cast<std::size_t>(n) * Ci * plane, Ci, plane) * dc.transpose();
            for (int o = 0; o < Co; ++o) {
                const T* p = gn + static_cast<std::size_t>(o) * Ho_ * Wo_;
                T s = 0;
                for (int k = 0; k < Ho_ * Wo_; ++k) s += p[k];
                b_.grad[o] += s;
            }
        }
        return dx;
    }

    std::vector<Tensor<T>*> parameters() override { return {&w_, &b_}; }

    void initialize(Rng& rng) override {
        // Each output pixel sees about in_channels * ceil(K / stride)^2 inputs.
        const int taps = (spec_.kernel + spec_.stride - 1) / spec_.stride;
        const double fan_in = static_cast<double>(spec_.in_channels) * taps * taps;
        uniform_fill(w_, rng, std::sqrt(6.0 / fan_in));
        std::fill(b_.values.begin(), b_.values.end(), T(0));
    }

private:
    LayerSpec spec_;
    Tensor<T> w_, b_;
    Tensor<T> x_;
    int Ho_ = 0, Wo_ = 0;
};

template <class T>
class PReluLayer final : public Layer<T> {
public:
    explicit PReluLayer(const LayerSpec& s) : spec_(s), a_({s.in_channels}, T(0.25)) { a_.track_grad(); }
    LayerSpec spec() const override { return spec_; }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        require4(x.shape, "prelu input");
        if (x.dim(1) != spec_.in_channels) fail(ErrorCategory::invalid_argument, "prelu: channel mismatch");
        x_ = x;
        return prelu(x, a_.values);
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const int N = x_.dim(0), C = x_.dim(1);
        const std::size_t plane = static_cast<std::size_t>(x_.dim(2)) * x_.dim(3);
        Tensor<T> dx(x_.shape);
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                const T a = a_.values[c];
                T da = 0;
                for (std::size_t k = 0; k < plane; ++k) {
                    const T v = x_.values[off + k];
                    if (v >= T(0)) {
                        dx.values[off + k] = g.values[off + k];
                    } else {
                        dx.values[off + k] = a * g.values[off + k];
                        da += g.values[off + k] * v;
                    }
                }
                a_.grad[c] += da;
            }
        }
        return dx;
    }

    std::vector<Tensor<T>*> parameters() override { return {&a_}; }
    void initialize(Rng&) override { std::fill(a_.values.begin(), a_.values.end(), T(0.25)); }

private:
    LayerSpec spec_;
    Tensor<T> a_;
    Tensor<T> x_;
};

template <class T>
class BatchNormLayer final : public Layer<T> {
public:
    explicit BatchNormLayer(const LayerSpec& s)
        : spec_(s), gamma_({s.in_channels}, T(1)), beta_({s.in_channels}), mean_({s.in_channels}), var_({s.in_channels}, T(1)) {
        gamma_.track_grad();
        beta_.track_grad();
    }
    LayerSpec spec() const override { return spec_; }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        if (x.shape.size() == 4 && x.dim(1) != spec_.in_channels) fail(ErrorCategory::invalid_argument, "batch_norm: channel mismatch");
        training_ = training;
        x_ = x;
        return bn_apply(x, gamma_.values, beta_.values, mean_.values, var_.values, training, T(0.1), T(1e-5), &cache_);
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const int N = x_.dim(0), C = x_.dim(1);
        const std::size_t plane = static_cast<std::size_t>(x_.dim(2)) * x_.dim(3);
        const double count = static_cast<double>(N) * static_cast<double>(plane);
        Tensor<T> dx(x_.shape);
        std::vector<T> xhat(x_.size());
        for (int c = 0; c < C; ++c) {
            double sg = 0.0, sgx = 0.0;
            for (int n = 0; n < N; ++n) {
                const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    const T xh = (x_.values[off + k] - cache_.mean[c]) * cache_.inv_std[c];
                    xhat[off + k] = xh;
                    sg += g.values[off + k];
                    sgx += static_cast<double>(g.values[off + k]) * xh;
                }
            }
            beta_.grad[c] += static_cast<T>(sg);
            gamma_.grad[c] += static_cast<T>(sgx);
            const T k1 = gamma_.values[c] * cache_.inv_std[c];
            const T mg = static_cast<T>(sg / count), mgx = static_cast<T>(sgx / count);
            for (int n = 0; n < N; ++n) {
                const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    dx.values[off + k] = training_ ? k1 * (g.values[off + k] - mg - xhat[off + k] * mgx)
                                                   : k1 * g.values[off + k];
                }
            }
        }
        return dx;
    }

    std::vector<Tensor<T>*> parameters() override { return {&gamma_, &beta_}; }
    std::vector<Tensor<T>*> buffers() override { return {&mean_, &var_}; }
    void initialize(Rng&) override {
        std::fill(gamma_.values.begin(), gamma_.values.end(), T(1));
        std::fill(beta_.values.begin(), beta_.values.end(), T(0));
        std::fill(mean_.values.begin(), mean_.values.end(), T(0));
        std::fill(var_.values.begin(), var_.values.end(), T(1));
    }

private:
    LayerSpec spec_;
    Tensor<T> gamma_, beta_, mean_, var_;
    BnCache<T> cache_;
    Tensor<T> x_;
    bool training_ = true;
};

template <class T>
class SigmoidLayer final : public Layer<T> {
public:
    explicit SigmoidLayer(const LayerSpec& s) : spec_(s) {}
    LayerSpec spec() const override { return spec_; }
    Tensor<T> forward(const Tensor<T>& x, bool) override {
        y_ = sigmoid(x);
        return y_;
    }
    Tensor<T> backward(const Tensor<T>& g) override {
        Tensor<T> dx(y_.shape);
        for (std::size_t k = 0; k < dx.size(); ++k) dx.values[k] = g.values[k] * y_.values[k] * (T(1) - y_.values[k]);
        return dx;
    }

private:
    LayerSpec spec_;
    Tensor<T> y_;
};

// conv-bn-prelu-conv-bn, plus the input, then prelu.
template <class T>
class ResidualLayer final : public Layer<T> {
public:
    explicit ResidualLayer(const LayerSpec& s) : spec_(s) {
        const int c = s.in_channels;
        const LayerSpec cv{LayerKind::conv, c, c, s.kernel, 1, s.padding};
        parts_.push_back(std::make_unique<ConvLayer<T>>(cv));
        parts_.push_back(std::make_unique<BatchNormLayer<T>>(bn(c)));
        parts_.push_back(std::make_unique<PReluLayer<T>>(act(c)));
        parts_.push_back(std::make_unique<ConvLayer<T>>(cv));
        parts_.push_back(std::make_unique<BatchNormLayer<T>>(bn(c)));
        out_ = std::make_unique<PReluLayer<T>>(act(c));
    }
    LayerSpec spec() const override { return spec_; }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        Tensor<T> y = x;
        for (auto& p : parts_) y = p->forward(y, training);
        for (std::size_t k = 0; k < y.size(); ++k) y.values[k] += x.values[k];
        return out_->forward(y, training);
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        const Tensor<T> skip = out_->backward(g);
        Tensor<T> d = skip;
        for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) d = (*it)->backward(d);
        for (std::size_t k = 0; k < d.size(); ++k) d.values[k] += skip.values[k];
        return d;
    }

    std::vector<Tensor<T>*> parameters() override {
        std::vector<Tensor<T>*> out;
        for (auto& p : parts_) for (Tensor<T>* t : p->parameters()) out.push_back(t);
        for (Tensor<T>* t : out_->parameters()) out.push_back(t);
        return out;
    }
    std::vector<Tensor<T>*> buffers() override {
        std::vector<Tensor<T>*> out;
        for (auto& p : parts_) for (Tensor<T>* t : p->buffers()) out.push_back(t);
        return out;
    }
    void initialize(Rng& rng) override {
        for (auto& p : parts_) p->initialize(rng);
        out_->initialize(rng);
    }

private:
    LayerSpec spec_;
    std::vector<std::unique_ptr<Layer<T>>> parts_;
    std::unique_ptr<Layer<T>> out_;
};

}  // namespace

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec) {
    check_spec(spec);
    switch (spec.kind) {
        case LayerKind::conv: return std::make_unique<ConvLayer<T>>(spec);
        case LayerKind::conv_transpose: return std::make_unique<ConvTransposeLayer<T>>(spec);
        case LayerKind::prelu: return std::make_unique<PReluLayer<T>>(spec);
        case LayerKind::batch_norm: return std::make_unique<BatchNormLayer<T>>(spec);
        case LayerKind::residual_block: return std::make_unique<ResidualLayer<T>>(spec);
        case LayerKind::sigmoid: return std::make_unique<SigmoidLayer<T>>(spec);
    }
    fail(ErrorCategory::invalid_argument, "unknown layer kind");
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <class T>
Network<T>::Network(const NetworkConfig& config) : config_(config) {
    if (config_.layers.empty()) fail(ErrorCategory::invalid_argument, "network has no layers");
    int channels = config_.input_channels;
    for (const LayerSpec& l : config_.layers) {
        if (l.in_channels != channels) {
            fail(ErrorCategory::invalid_argument, std::string(layer_kind_name(l.kind)) + " layer expects " +
                                                      std::to_string(l.in_channels) + " channels but receives " +
                                                      std::to_string(channels));
        }
        layers_.push_back(make_layer<T>(l));
        channels = l.out_channels;
    }
    if (channels != config_.output_channels) {
        fail(ErrorCategory::invalid_argument, "network ends with " + std::to_string(channels) + " channels, expected " +
                                                  std::to_string(config_.output_channels));
    }
    initialize();
}

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, bool training) {
    require4(x.shape, "network input");
    if (x.dim(1) != config_.input_channels) {
        fail(ErrorCategory::invalid_argument, "network expects " + std::to_string(config_.input_channels) + " input channels, got " +
                                                  shape_text(x.shape));
    }
    config_.output_shape(x.dim(2), x.dim(3));
    Tensor<T> y = x;
    for (auto& l : layers_) y = l->forward(y, training);
    if (config_.state_skip) {
        const int N = x.dim(0), C = config_.output_channels;
        const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const T* src = x.data() + (static_cast<std::size_t>(n) * x.dim(1) + c) * plane;
                T* dst = y.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) dst[k] += src[k];
            }
        }
    }
    input_channels_seen_ = x.dim(1);
    return y;
}

template <class T>
Tensor<T> Network<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    if (config_.state_skip) {
        const int N = g.dim(0), C = config_.output_channels;
        const std::size_t plane = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const T* src = grad_out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                T* dst = g.data() + (static_cast<std::size_t>(n) * input_channels_seen_ + c) * plane;
                for (std::size_t k = 0; k < plane; ++k) dst[k] += src[k];
            }
        }
    }
    return g;
}

template <class T>
std::vector<Tensor<T>*> Network<T>::parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_) for (Tensor<T>* t : l->parameters()) out.push_back(t);
    return out;
}

template <class T>
std::vector<Tensor<T>*> Network<T>::buffers() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_) for (Tensor<T>* t : l->buffers()) out.push_back(t);
    return out;
}

template <class T>
void Network<T>::zero_grad() {
    for (Tensor<T>* t : parameters()) t->zero_grad();
}

template <class T>
std::size_t Network<T>::parameter_count() {
    std::size_t n = 0;
    for (Tensor<T>* t : parameters()) n += t->size();
    return n;
}

template <class T>
void Network<T>::initialize() {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        Rng rng(config_.param_seed, {static_cast<std::uint64_t>(k)});
        layers_[k]->initialize(rng);
    }
}

template <class T>
void Network<T>::zero_last_layer() {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        const LayerKind k = (*it)->spec().kind;
        if (k == LayerKind::conv || k == LayerKind::conv_transpose) {
            for (Tensor<T>* t : (*it)->parameters()) std::fill(t->values.begin(), t->values.end(), T(0));
            return;
        }
    }
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    if (s == "rmsprop") return OptimizerKind::rmsprop;
    fail(ErrorCategory::config, "unknown optimizer '" + s + "' (sgd, adam, rmsprop)");
}

Schedule parse_schedule(const std::string& s) {
    if (s == "fixed") return Schedule::fixed;
    if (s == "inverse_sqrt") return Schedule::inverse_sqrt;
    if (s == "periodic") return Schedule::periodic;
    fail(ErrorCategory::config, "unknown lr_schedule '" + s + "' (fixed, inverse_sqrt, periodic)");
}

double scheduled_lr(Schedule s, double base, int epoch, int period) {
    if (epoch < 1) fail(ErrorCategory::invalid_argument, "epochs are counted from 1");
    switch (s) {
        case Schedule::fixed: return base;
        case Schedule::inverse_sqrt: return base / std::sqrt(static_cast<double>(epoch));
        case Schedule::periodic: {
            if (period < 1) fail(ErrorCategory::config, "lr_period must be positive");
            const double phase = static_cast<double>((epoch - 1) % period) / period;
            return base * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
        }
    }
    return base;
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<Tensor<float>*> params, double lr)
    : kind_(kind), params_(std::move(params)), lr_(lr) {
    for (Tensor<float>* p : params_) {
        m_.emplace_back(p->size(), 0.0f);
        v_.emplace_back(kind_ == OptimizerKind::sgd ? 0 : p->size(), 0.0f);
    }
}

void Optimizer::step() {
    ++t_;
    constexpr double momentum = 0.9, beta1 = 0.9, beta2 = 0.999, alpha = 0.99, eps = 1e-8;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor<float>& p = *params_[k];
        std::vector<float>& m = m_[k];
        std::vector<float>& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = p.grad[i];
            switch (kind_) {
                case OptimizerKind::sgd:
                    m[i] = static_cast<float>(momentum * m[i] + g);
                    p.values[i] = static_cast<float>(p.values[i] - lr_ * m[i]);
                    break;
                case OptimizerKind::adam: {
                    m[i] = static_cast<float>(beta1 * m[i] + (1.0 - beta1) * g);
                    v[i] = static_cast<float>(beta2 * v[i] + (1.0 - beta2) * g * g);
                    const double mh = m[i] / c1, vh = v[i] / c2;
                    p.values[i] = static_cast<float>(p.values[i] - lr_ * mh / (std::sqrt(vh) + eps));
                    break;
                }
                case OptimizerKind::rmsprop:
                    v[i] = static_cast<float>(alpha * v[i] + (1.0 - alpha) * g * g);
                    p.values[i] = static_cast<float>(p.values[i] - lr_ * g / (std::sqrt(static_cast<double>(v[i])) + eps));
                    break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Instantiations
// ---------------------------------------------------------------------------

#define FLOOD_NN_INSTANTIATE(T)                                                                                         \
    template struct Tensor<T>;                                                                                          \
    template std::unique_ptr<Layer<T>> make_layer<T>(const LayerSpec&);                                                 \
    template class Network<T>;                                                                                          \
    template Tensor<T> conv_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);                \
    template ConvGrads<T> conv_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);            \
    template Tensor<T> prelu<T>(const Tensor<T>&, const std::vector<T>&);                                              \
    template Tensor<T> batch_norm<T>(const Tensor<T>&, const std::vector<T>&, const std::vector<T>&, std::vector<T>&, \
                                     std::vector<T>&, bool, T, T);                                                      \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);

FLOOD_NN_INSTANTIATE(float)
FLOOD_NN_INSTANTIATE(double)

}  // namespace flood::nn
