#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "flood/config.hpp"
#include "flood/field.hpp"
#include "flood/nn.hpp"
#include "flood/scenario.hpp"

/// The learned one-step operator: a network over standardized (state, forcing) inputs that
/// predicts the state one lead time ahead, its training loops and autoregressive rollout.
namespace flood::surrogate {

/// Per-channel standardization of the 5 input channels. Predicted states use the
/// statistics of the input state channels, so an unchanged state maps to itself.
struct Normalizer {
    std::vector<double> mean = std::vector<double>(scenario::input_channels, 0.0);
    std::vector<double> std = std::vector<double>(scenario::input_channels, 1.0);

    static Normalizer from_stats(const scenario::ChannelStats& input_stats);

    /// Zero standard deviations are treated as 1.
    double scale(int channel) const;
    void standardize_input(std::vector<float>& x) const;   // 5 x cells
    void standardize_state(std::vector<float>& x) const;   // 3 x cells
    void destandardize_state(std::vector<float>& x) const;
};

struct Model {
    nn::Network<float> net;
    Normalizer norm;
    GridSpec grid;
    double lead_time = 1800.0;

    Model() = default;
    Model(const nn::NetworkConfig& config, const Normalizer& norm, const GridSpec& grid, double lead_time);
};

/// Network config named by `arch` (desk, full, custom) with `layers_file` for custom;
/// the parameter seed comes from `param_seed`.
nn::NetworkConfig network_config_from(const Config& c);

/// `<path>` holds parameters, batch-norm statistics and normalization; `<path>.layers`
/// holds the layer list.
void save_model(const std::filesystem::path& path, Model& model);
Model load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Standardized samples of one dataset split held in memory.
struct TrainData {
    GridSpec grid;
    std::size_t count = 0;
    std::vector<float> inputs;   // count x 5 x cells
    std::vector<float> targets;  // count x 3 x cells

    std::size_t cells() const { return grid.cells(); }
};

/// Reads the samples of the "train" or "val" split; max_samples = 0 keeps all.
TrainData load_split(const std::filesystem::path& dataset_dir, const scenario::Manifest& manifest, const std::string& split,
                     const Normalizer& norm, std::size_t max_samples = 0);

/// Builds standardized data from raw samples (used for in-memory toy sets).
TrainData make_data(const std::vector<scenario::TrainingSample>& samples, const Normalizer& norm);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class TrainMode { l1_cnn, cgan };

struct TrainConfig {
    TrainMode mode = TrainMode::l1_cnn;
    int epochs = 30;
    int batch_size = 8;
    nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
    double lr = 1e-3;
    nn::Schedule schedule = nn::Schedule::fixed;
    int lr_period = 10;
    double input_noise_sigma = 0.01;   // fraction of the per-channel training std
    double l1_weight = 1.0;
    double adversarial_weight = 0.0;
    double d_lr = 2e-4;
    std::array<double, 2> label_real{0.9, 1.0};
    std::array<double, 2> label_fake{0.0, 0.1};
    std::uint64_t seed = 11;
    bool generator_frozen = false;

    void validate() const;
    static TrainConfig from_config(const Config& c);
};

struct TrainHistory {
    std::vector<double> train_loss;  // mean L1 over the epoch's batches
    std::vector<double> val_loss;    // empty without validation data
    std::vector<double> d_loss;      // cgan only
    std::vector<double> g_adv_loss;  // cgan only
    // Extremes of the soft labels drawn for the discriminator (cgan only).
    std::array<double, 2> real_label_range{1.0, 0.0};
    std::array<double, 2> fake_label_range{1.0, 0.0};
};

/// Mean absolute error in standardized units over every target value.
double evaluate_l1(Model& model, const TrainData& data, int batch_size = 8);

TrainHistory train_l1(Model& model, const TrainData& train, const TrainData* val, const TrainConfig& cfg,
                      std::ostream* log = nullptr);

TrainHistory train_cgan(Model& generator, nn::Network<float>& discriminator, const TrainData& train, const TrainData* val,
                        const TrainConfig& cfg, std::ostream* log = nullptr);

/// Per-patch realness in (0, 1) of candidate (N, 3, H, W) given condition (N, 5, H, W).
template <class T>
nn::Tensor<T> patch_discriminator_forward(nn::Network<T>& d, const nn::Tensor<T>& candidate, const nn::Tensor<T>& condition,
                                          bool training = false);

/// Fraction of patches classified correctly (real > 0.5, generated < 0.5) in inference mode.
double discriminator_accuracy(nn::Network<float>& d, Model& generator, const TrainData& data);

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Raw 5-channel input to raw 3-channel prediction (h, qx, qy); no clamping.
std::vector<float> predict_raw(Model& model, const std::vector<float>& input);

/// The state one lead time after `state`, with h clamped to >= 0 and momentum zeroed
/// where h == 0.
FlowState predict(Model& model, const FlowState& state, const ForcingPlan& forcing);

/// state0 followed by n_steps autoregressive predictions.
std::vector<FlowState> rollout(Model& model, const FlowState& state0, const ForcingPlan& forcing, int n_steps);

/// Converts a raw prediction into a valid state.
FlowState state_from_prediction(const GridSpec& grid, const std::vector<float>& raw, double time);

}  // namespace flood::surrogate
