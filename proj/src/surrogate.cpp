#include "flood/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace flood::surrogate {

namespace fs = std::filesystem;
using nn::Network;
using nn::Tensor;
using scenario::input_channels;
using scenario::target_channels;

namespace {

constexpr std::uint64_t shuffle_tag = 0x5348'5546;
constexpr std::uint64_t noise_tag = 0x4e4f'4953;
constexpr std::uint64_t label_tag = 0x4c41'4245;

std::vector<double> as_float_precision(std::vector<double> v) {
    for (double& x : v) x = static_cast<float>(x);
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Normalization and models
// ---------------------------------------------------------------------------

Normalizer Normalizer::from_stats(const scenario::ChannelStats& s) {
    if (s.mean.size() != static_cast<std::size_t>(input_channels) || s.std.size() != s.mean.size()) {
        fail(ErrorCategory::invalid_argument, "input statistics need one entry per input channel");
    }
    Normalizer n;
    n.mean = as_float_precision(s.mean);
    n.std = as_float_precision(s.std);
    return n;
}

double Normalizer::scale(int c) const {
    const double s = std.at(static_cast<std::size_t>(c));
    return s > 0.0 ? s : 1.0;
}

namespace {

void affine(std::vector<float>& x, int channels, const Normalizer& n, bool forward) {
    if (x.size() % static_cast<std::size_t>(channels) != 0) fail(ErrorCategory::size_mismatch, "field is not a whole number of channels");
    const std::size_t cells = x.size() / static_cast<std::size_t>(channels);
    for (int c = 0; c < channels; ++c) {
        const double m = n.mean[c], s = n.scale(c);
        float* p = x.data() + static_cast<std::size_t>(c) * cells;
        for (std::size_t k = 0; k < cells; ++k) {
            p[k] = forward ? static_cast<float>((p[k] - m) / s) : static_cast<float>(p[k] * s + m);
        }
    }
}

}  // namespace

void Normalizer::standardize_input(std::vector<float>& x) const { affine(x, input_channels, *this, true); }
void Normalizer::standardize_state(std::vector<float>& x) const { affine(x, target_channels, *this, true); }
void Normalizer::destandardize_state(std::vector<float>& x) const { affine(x, target_channels, *this, false); }

Model::Model(const nn::NetworkConfig& config, const Normalizer& n, const GridSpec& g, double lead)
    : net(config), norm(n), grid(g), lead_time(lead) {
    norm.mean = as_float_precision(norm.mean);
    norm.std = as_float_precision(norm.std);
    if (config.input_channels != input_channels || config.output_channels != target_channels) {
        fail(ErrorCategory::invalid_argument, "surrogate network must map 5 channels to 3");
    }
    const nn::Shape out = config.output_shape(g.ny, g.nx);
    if (out[1] != g.ny || out[2] != g.nx) {
        fail(ErrorCategory::invalid_argument, "network maps a " + std::to_string(g.ny) + "x" + std::to_string(g.nx) +
                                                  " grid to " + nn::shape_text(out));
    }
    if (!(lead > 0.0)) fail(ErrorCategory::invalid_argument, "lead time must be positive");
}

nn::NetworkConfig network_config_from(const Config& c) {
    const std::string arch = c.get_string("arch");
    nn::NetworkConfig nc;
    if (arch == "desk") {
        nc = nn::NetworkConfig::desk();
        nc.state_skip = c.get_bool("state_skip");
    } else if (arch == "full") {
        nc = nn::NetworkConfig::full();
        nc.state_skip = c.get_bool("state_skip");
    } else if (arch == "custom") {
        const std::string file = c.get_string("layers_file");
        if (file.empty()) fail(ErrorCategory::config, "arch = custom needs layers_file");
        std::ifstream in(file);
        if (!in) fail(ErrorCategory::io, "cannot open layers file " + file);
        std::ostringstream ss;
        ss << in.rdbuf();
        nc = nn::NetworkConfig::parse(ss.str());
    } else {
        fail(ErrorCategory::config, "unknown arch '" + arch + "' (desk, full, custom)");
    }
    nc.param_seed = c.get_u64("param_seed");
    return nc;
}

void save_model(const fs::path& path, Model& model) {
    std::vector<NamedArray> arrays;
    arrays.push_back({"norm_mean", {static_cast<std::size_t>(input_channels)}, to_float(model.norm.mean)});
    arrays.push_back({"norm_std", {static_cast<std::size_t>(input_channels)}, to_float(model.norm.std)});
    arrays.push_back({"lead_time", {1}, {static_cast<float>(model.lead_time)}});
    auto add = [&](const char* prefix, const std::vector<Tensor<float>*>& ts) {
        for (std::size_t k = 0; k < ts.size(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "%s_%03zu", prefix, k);
            std::vector<std::size_t> shape(ts[k]->shape.begin(), ts[k]->shape.end());
            arrays.push_back({name, shape, ts[k]->values});
        }
    };
    add("param", model.net.parameters());
    add("buffer", model.net.buffers());
    write_array_file(path, model.grid, arrays);
    const fs::path layers = fs::path(path.string() + ".layers");
    std::ofstream out(layers);
    if (!out) fail(ErrorCategory::io, "cannot write " + layers.string());
    out << model.net.config().to_text();
    if (!out) fail(ErrorCategory::io, "failed writing " + layers.string());
}

Model load_model(const fs::path& path) {
    const fs::path layers = fs::path(path.string() + ".layers");
    std::ifstream in(layers);
    if (!in) fail(ErrorCategory::io, "cannot open " + layers.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const nn::NetworkConfig config = nn::NetworkConfig::parse(ss.str());
    const ArrayFile f = read_array_file(path);
    Normalizer norm;
    norm.mean = to_double(f.get("norm_mean").values);
    norm.std = to_double(f.get("norm_std").values);
    if (norm.mean.size() != static_cast<std::size_t>(input_channels) || norm.std.size() != norm.mean.size()) {
        fail(ErrorCategory::size_mismatch, "model normalization has the wrong size");
    }
    Model model(config, norm, f.grid, f.get("lead_time").values.at(0));
    auto fill = [&](const char* prefix, const std::vector<Tensor<float>*>& ts) {
        for (std::size_t k = 0; k < ts.size(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "%s_%03zu", prefix, k);
            const NamedArray& a = f.get(name);
            if (a.values.size() != ts[k]->size()) {
                fail(ErrorCategory::size_mismatch, std::string(name) + " has " + std::to_string(a.values.size()) +
                                                       " values, the layer list needs " + std::to_string(ts[k]->size()));
            }
            ts[k]->values = a.values;
        }
    };
    fill("param", model.net.parameters());
    fill("buffer", model.net.buffers());
    return model;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

TrainData make_data(const std::vector<scenario::TrainingSample>& samples, const Normalizer& norm) {
    TrainData d;
    if (samples.empty()) return d;
    d.grid = samples.front().grid;
    const std::size_t n = d.grid.cells();
    d.count = samples.size();
    d.inputs.reserve(d.count * input_channels * n);
    d.targets.reserve(d.count * target_channels * n);
    for (const auto& s : samples) {
        require_same_grid(d.grid, s.grid, "training sample");
        if (s.input.size() != input_channels * n || s.target.size() != target_channels * n) {
            fail(ErrorCategory::size_mismatch, "training sample channels do not match its grid");
        }
        std::vector<float> in = s.input, out = s.target;
        norm.standardize_input(in);
        norm.standardize_state(out);
        d.inputs.insert(d.inputs.end(), in.begin(), in.end());
        d.targets.insert(d.targets.end(), out.begin(), out.end());
    }
    return d;
}

TrainData load_split(const fs::path& dir, const scenario::Manifest& m, const std::string& split, const Normalizer& norm,
                     std::size_t max_samples) {
    const std::vector<std::string>* files = nullptr;
    if (split == "train") files = &m.train;
    else if (split == "val") files = &m.val;
    else fail(ErrorCategory::invalid_argument, "unknown split '" + split + "'");
    std::size_t count = files->size();
    if (max_samples > 0) count = std::min(count, max_samples);
    std::vector<scenario::TrainingSample> samples;
    samples.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        samples.push_back(scenario::read_sample(dir / (*files)[k]));
        require_same_grid(m.grid, samples.back().grid, "dataset sample");
    }
    TrainData d = make_data(samples, norm);
    d.grid = m.grid;
    return d;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < 1) fail(ErrorCategory::config, "epochs must be positive");
    if (batch_size < 1) fail(ErrorCategory::config, "batch_size must be positive");
    if (!(lr > 0.0) || !(d_lr > 0.0)) fail(ErrorCategory::config, "learning rates must be positive");
    if (lr_period < 1) fail(ErrorCategory::config, "lr_period must be positive");
    if (input_noise_sigma < 0.0) fail(ErrorCategory::config, "input_noise_sigma must be nonnegative");
    if (l1_weight < 0.0 || adversarial_weight < 0.0) fail(ErrorCategory::config, "loss weights must be nonnegative");
    if (!(l1_weight + adversarial_weight > 0.0)) fail(ErrorCategory::config, "l1_weight + adversarial_weight must be positive");
    if (mode == TrainMode::l1_cnn && adversarial_weight != 0.0) {
        fail(ErrorCategory::config, "train_mode l1_cnn needs adversarial_weight = 0");
    }
    for (const auto& r : {label_real, label_fake}) {
        if (!(r[0] >= 0.0 && r[0] <= r[1] && r[1] <= 1.0)) fail(ErrorCategory::config, "label ranges must satisfy 0 <= lo <= hi <= 1");
    }
}

TrainConfig TrainConfig::from_config(const Config& c) {
    TrainConfig t;
    const std::string mode = c.get_string("train_mode");
    if (mode == "l1_cnn") t.mode = TrainMode::l1_cnn;
    else if (mode == "cgan") t.mode = TrainMode::cgan;
    else fail(ErrorCategory::config, "unknown train_mode '" + mode + "' (l1_cnn, cgan)");
    t.epochs = static_cast<int>(c.get_int("epochs"));
    t.batch_size = static_cast<int>(c.get_int("batch_size"));
    t.optimizer = nn::parse_optimizer(c.get_string("optimizer"));
    t.lr = c.get_real("lr");
    t.schedule = nn::parse_schedule(c.get_string("lr_schedule"));
    t.lr_period = static_cast<int>(c.get_int("lr_period"));
    t.input_noise_sigma = c.get_real("input_noise_sigma");
    t.l1_weight = c.get_real("l1_weight");
    t.adversarial_weight = c.get_real("adversarial_weight");
    t.d_lr = c.get_real("d_lr");
    t.label_real = {c.get_real("label_real_lo"), c.get_real("label_real_hi")};
    t.label_fake = {c.get_real("label_fake_lo"), c.get_real("label_fake_hi")};
    t.seed = c.get_u64("train_seed");
    t.validate();
    return t;
}

namespace {

void check_data(const Model& model, const TrainData& d, const char* what) {
    if (d.count == 0) fail(ErrorCategory::invalid_argument, std::string(what) + " is empty");
    require_same_grid(model.grid, d.grid, what);
}

void gather(const TrainData& d, const std::vector<std::size_t>& order, std::size_t start, std::size_t b, Tensor<float>& x,
            Tensor<float>& t) {
    const std::size_t n = d.cells();
    const int ny = d.grid.ny, nx = d.grid.nx, bi = static_cast<int>(b);
    x = Tensor<float>({bi, input_channels, ny, nx});
    t = Tensor<float>({bi, target_channels, ny, nx});
    for (std::size_t k = 0; k < b; ++k) {
        const std::size_t s = order[start + k];
        std::copy_n(d.inputs.begin() + static_cast<std::ptrdiff_t>(s * input_channels * n), input_channels * n,
                    x.values.begin() + static_cast<std::ptrdiff_t>(k * input_channels * n));
        std::copy_n(d.targets.begin() + static_cast<std::ptrdiff_t>(s * target_channels * n), target_channels * n,
                    t.values.begin() + static_cast<std::ptrdiff_t>(k * target_channels * n));
    }
}

// Gaussian noise on the state channels; inputs are standardized, so sigma is in std units.
void add_noise(Tensor<float>& x, double sigma, Rng& rng) {
    if (sigma <= 0.0) return;
    const int N = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < target_channels; ++c) {
            float* p = x.data() + (static_cast<std::size_t>(n) * input_channels + c) * plane;
            for (std::size_t k = 0; k < plane; ++k) p[k] = static_cast<float>(p[k] + sigma * rng.normal());
        }
    }
}

// Mean |y - t| and its gradient scaled by `weight`.
double l1_loss(const Tensor<float>& y, const Tensor<float>& t, float weight, Tensor<float>& grad) {
    grad = Tensor<float>(y.shape);
    const float inv = 1.0f / static_cast<float>(y.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const float d = y.values[k] - t.values[k];
        sum += std::abs(static_cast<double>(d));
        const float s = d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
        grad.values[k] = weight * (s * inv);
    }
    return sum / static_cast<double>(y.size());
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, {shuffle_tag, static_cast<std::uint64_t>(epoch)});
    rng.shuffle(order);
    return order;
}

void require_finite(double loss, const char* what, int epoch, std::size_t batch) {
    if (!std::isfinite(loss)) {
        fail(ErrorCategory::divergence, std::string(what) + " became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                                            std::to_string(batch));
    }
}

// (N, 3+5, H, W) pairs: candidates then condition channels.
template <class T>
Tensor<T> pair_input(const Tensor<T>& candidate, const Tensor<T>& condition) {
    if (candidate.shape.size() != 4 || condition.shape.size() != 4 || candidate.dim(0) != condition.dim(0) ||
        candidate.dim(2) != condition.dim(2) || candidate.dim(3) != condition.dim(3)) {
        fail(ErrorCategory::invalid_argument, "discriminator candidate " + nn::shape_text(candidate.shape) +
                                                  " does not match condition " + nn::shape_text(condition.shape));
    }
    const int N = candidate.dim(0), cc = candidate.dim(1), cd = condition.dim(1);
    const std::size_t plane = static_cast<std::size_t>(candidate.dim(2)) * candidate.dim(3);
    Tensor<T> out({N, cc + cd, candidate.dim(2), candidate.dim(3)});
    for (int n = 0; n < N; ++n) {
        T* dst = out.data() + static_cast<std::size_t>(n) * (cc + cd) * plane;
        std::copy_n(candidate.data() + static_cast<std::size_t>(n) * cc * plane, cc * plane, dst);
        std::copy_n(condition.data() + static_cast<std::size_t>(n) * cd * plane, cd * plane, dst + cc * plane);
    }
    return out;
}

// Real pairs in the first half of the batch, generated pairs in the second.
Tensor<float> mixed_pairs(const Tensor<float>& real, const Tensor<float>& fake, const Tensor<float>& condition) {
    const Tensor<float> a = pair_input(real, condition), b = pair_input(fake, condition);
    Tensor<float> out = a;
    out.shape[0] *= 2;
    out.values.insert(out.values.end(), b.values.begin(), b.values.end());
    return out;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double logistic(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double evaluate_l1(Model& model, const TrainData& data, int batch_size) {
    check_data(model, data, "evaluation data");
    std::vector<std::size_t> order(data.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    double sum = 0.0;
    Tensor<float> x, t;
    for (std::size_t start = 0; start < data.count; start += static_cast<std::size_t>(batch_size)) {
        const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.count - start);
        gather(data, order, start, b, x, t);
        const Tensor<float> y = model.net.forward(x, false);
        for (std::size_t k = 0; k < y.size(); ++k) sum += std::abs(static_cast<double>(y.values[k]) - t.values[k]);
    }
    return sum / (static_cast<double>(data.count) * target_channels * static_cast<double>(data.cells()));
}

TrainHistory train_l1(Model& model, const TrainData& train, const TrainData* val, const TrainConfig& cfg, std::ostream* log) {
    cfg.validate();
    check_data(model, train, "training data");
    if (val) check_data(model, *val, "validation data");
    TrainHistory hist;
    nn::Optimizer opt(cfg.optimizer, model.net.parameters(), cfg.lr);
    Tensor<float> x, t, grad;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        opt.set_lr(nn::scheduled_lr(cfg.schedule, cfg.lr, epoch, cfg.lr_period));
        const std::vector<std::size_t> order = epoch_order(train.count, cfg.seed, epoch);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < train.count; start += static_cast<std::size_t>(cfg.batch_size), ++batches) {
            const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train.count - start);
            gather(train, order, start, b, x, t);
            Rng noise(cfg.seed, {noise_tag, static_cast<std::uint64_t>(epoch), batches});
            add_noise(x, cfg.input_noise_sigma, noise);
            const Tensor<float> y = model.net.forward(x, true);
            const double loss = l1_loss(y, t, 1.0f, grad);
            require_finite(loss, "training loss", epoch, batches);
            model.net.zero_grad();
            model.net.backward(grad);
            opt.step();
            total += loss;
        }
        hist.train_loss.push_back(total / static_cast<double>(batches));
        if (val) hist.val_loss.push_back(evaluate_l1(model, *val, cfg.batch_size));
        if (log) {
            *log << "epoch " << epoch << " lr " << opt.lr() << " train_l1 " << hist.train_loss.back();
            if (val) *log << " val_l1 " << hist.val_loss.back();
            *log << "\n" << std::flush;
        }
    }
    return hist;
}

TrainHistory train_cgan(Model& g, Network<float>& d, const TrainData& train, const TrainData* val, const TrainConfig& cfg,
                        std::ostream* log) {
    cfg.validate();
    check_data(g, train, "training data");
    if (val) check_data(g, *val, "validation data");
    if (d.config().input_channels != input_channels + target_channels || d.config().output_channels != 1) {
        fail(ErrorCategory::invalid_argument, "discriminator must map 8 channels to 1");
    }
    TrainHistory hist;
    nn::Optimizer g_opt(cfg.optimizer, g.net.parameters(), cfg.lr);
    nn::Optimizer d_opt(cfg.optimizer, d.parameters(), cfg.d_lr);
    const float l1w = static_cast<float>(cfg.l1_weight);
    const bool adversarial = cfg.adversarial_weight > 0.0;
    Tensor<float> x, t, grad;
    auto draw = [](Rng& rng, const std::array<double, 2>& range, std::array<double, 2>& seen) {
        const double v = rng.uniform(range[0], range[1]);
        seen[0] = std::min(seen[0], v);
        seen[1] = std::max(seen[1], v);
        return v;
    };
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = nn::scheduled_lr(cfg.schedule, cfg.lr, epoch, cfg.lr_period);
        g_opt.set_lr(lr);
        d_opt.set_lr(nn::scheduled_lr(cfg.schedule, cfg.d_lr, epoch, cfg.lr_period));
        const std::vector<std::size_t> order = epoch_order(train.count, cfg.seed, epoch);
        double total = 0.0, d_total = 0.0, adv_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < train.count; start += static_cast<std::size_t>(cfg.batch_size), ++batches) {
            const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train.count - start);
            gather(train, order, start, b, x, t);
            Rng noise(cfg.seed, {noise_tag, static_cast<std::uint64_t>(epoch), batches});
            add_noise(x, cfg.input_noise_sigma, noise);
            Rng labels(cfg.seed, {label_tag, static_cast<std::uint64_t>(epoch), batches});
            const Tensor<float> fake = g.net.forward(x, !cfg.generator_frozen);

            // Discriminator step on real and generated pairs.
            const Tensor<float> pairs = mixed_pairs(t, fake, x);
            const Tensor<float> logits = d.forward(pairs, true);
            const std::size_t half = logits.size() / 2;
            Tensor<float> dgrad(logits.shape);
            double d_loss = 0.0;
            for (std::size_t k = 0; k < logits.size(); ++k) {
                const double y = k < half ? draw(labels, cfg.label_real, hist.real_label_range)
                                          : draw(labels, cfg.label_fake, hist.fake_label_range);
                const double l = logits.values[k];
                d_loss += softplus(l) - y * l;
                dgrad.values[k] = static_cast<float>((logistic(l) - y) / static_cast<double>(logits.size()));
            }
            d_loss /= static_cast<double>(logits.size());
            require_finite(d_loss, "discriminator loss", epoch, batches);
            d.zero_grad();
            d.backward(dgrad);
            d_opt.step();
            d_total += d_loss;

            if (cfg.generator_frozen) {
                Tensor<float> unused;
                total += l1_loss(fake, t, 1.0f, unused);
                continue;
            }
            // Generator step.
            const double loss = l1_loss(fake, t, l1w, grad);
            require_finite(loss, "training loss", epoch, batches);
            if (adversarial) {
                const Tensor<float> logits2 = d.forward(mixed_pairs(t, fake, x), true);
                Tensor<float> g2(logits2.shape);
                double adv = 0.0;
                for (std::size_t k = half; k < logits2.size(); ++k) {
                    const double y = draw(labels, cfg.label_real, hist.real_label_range);
                    const double l = logits2.values[k];
                    adv += softplus(l) - y * l;
                    g2.values[k] = static_cast<float>((logistic(l) - y) / static_cast<double>(half));
                }
                adv /= static_cast<double>(half);
                require_finite(adv, "adversarial loss", epoch, batches);
                adv_total += adv;
                const Tensor<float> din = d.backward(g2);
                const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
                const std::size_t per = static_cast<std::size_t>(input_channels + target_channels) * plane;
                const float aw = static_cast<float>(cfg.adversarial_weight);
                for (std::size_t n = 0; n < b; ++n) {
                    const float* src = din.data() + (b + n) * per;
                    float* dst = grad.data() + n * target_channels * plane;
                    for (std::size_t k = 0; k < target_channels * plane; ++k) dst[k] += aw * src[k];
                }
            }
            g.net.zero_grad();
            g.net.backward(grad);
            g_opt.step();
            total += loss;
        }
        const double nb = static_cast<double>(batches);
        hist.train_loss.push_back(total / nb);
        hist.d_loss.push_back(d_total / nb);
        hist.g_adv_loss.push_back(adv_total / nb);
        if (val) hist.val_loss.push_back(evaluate_l1(g, *val, cfg.batch_size));
        if (log) {
            *log << "epoch " << epoch << " lr " << lr << " train_l1 " << hist.train_loss.back() << " d_bce " << hist.d_loss.back();
            if (adversarial) *log << " g_adv " << hist.g_adv_loss.back();
            if (val) *log << " val_l1 " << hist.val_loss.back();
            *log << "\n" << std::flush;
        }
    }
    return hist;
}

template <class T>
Tensor<T> patch_discriminator_forward(Network<T>& d, const Tensor<T>& candidate, const Tensor<T>& condition, bool training) {
    return nn::sigmoid(d.forward(pair_input(candidate, condition), training));
}

template Tensor<float> patch_discriminator_forward<float>(Network<float>&, const Tensor<float>&, const Tensor<float>&, bool);
template Tensor<double> patch_discriminator_forward<double>(Network<double>&, const Tensor<double>&, const Tensor<double>&, bool);

double discriminator_accuracy(Network<float>& d, Model& g, const TrainData& data) {
    check_data(g, data, "evaluation data");
    std::vector<std::size_t> order(data.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Tensor<float> x, t;
    std::size_t right = 0, total = 0;
    for (std::size_t start = 0; start < data.count; start += 8) {
        const std::size_t b = std::min<std::size_t>(8, data.count - start);
        gather(data, order, start, b, x, t);
        const Tensor<float> fake = g.net.forward(x, false);
        const Tensor<float> logits = d.forward(mixed_pairs(t, fake, x), false);
        const std::size_t half = logits.size() / 2;
        for (std::size_t k = 0; k < logits.size(); ++k) {
            const bool says_real = logits.values[k] > 0.0f;
            right += (k < half) == says_real ? 1 : 0;
        }
        total += logits.size();
    }
    return static_cast<double>(right) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

std::vector<float> predict_raw(Model& model, const std::vector<float>& input) {
    const std::size_t n = model.grid.cells();
    if (input.size() != input_channels * n) fail(ErrorCategory::size_mismatch, "input does not match the model grid");
    std::vector<float> x = input;
    model.norm.standardize_input(x);
    const Tensor<float> y = model.net.forward(Tensor<float>({1, input_channels, model.grid.ny, model.grid.nx}, std::move(x)), false);
    std::vector<float> out = y.values;
    model.norm.destandardize_state(out);
    return out;
}

FlowState state_from_prediction(const GridSpec& grid, const std::vector<float>& raw, double time) {
    const std::size_t n = grid.cells();
    if (raw.size() != target_channels * n) fail(ErrorCategory::size_mismatch, "prediction does not match the grid");
    Field h(n), qx(n), qy(n);
    for (std::size_t c = 0; c < n; ++c) {
        const double hv = raw[c], u = raw[n + c], v = raw[2 * n + c];
        if (!std::isfinite(hv) || !std::isfinite(u) || !std::isfinite(v)) {
            fail(ErrorCategory::divergence, "surrogate produced a non-finite value at cell " + std::to_string(c));
        }
        h[c] = std::max(0.0, hv);
        qx[c] = h[c] > 0.0 ? u : 0.0;
        qy[c] = h[c] > 0.0 ? v : 0.0;
    }
    return FlowState(grid, std::move(h), std::move(qx), std::move(qy), time);
}

FlowState predict(Model& model, const FlowState& state, const ForcingPlan& forcing) {
    require_same_grid(model.grid, state.grid(), "surrogate input state");
    const std::vector<float> raw = predict_raw(model, scenario::make_input(state, forcing, model.lead_time));
    return state_from_prediction(model.grid, raw, state.time() + model.lead_time);
}

std::vector<FlowState> rollout(Model& model, const FlowState& state0, const ForcingPlan& forcing, int n_steps) {
    if (n_steps < 0) fail(ErrorCategory::invalid_argument, "rollout step count must be nonnegative");
    const double end = state0.time() + n_steps * model.lead_time;
    if (n_steps > 0 && end > forcing.duration * (1.0 + 1e-12) + 1e-9) {
        fail(ErrorCategory::invalid_argument, "forcing covers " + std::to_string(forcing.duration) + " s, rollout needs " +
                                                  std::to_string(end) + " s");
    }
    std::vector<FlowState> out{state0};
    out.reserve(static_cast<std::size_t>(n_steps) + 1);
    for (int k = 0; k < n_steps; ++k) out.push_back(predict(model, out.back(), forcing));
    return out;
}

}  // namespace flood::surrogate
