#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <cstdint>
#include <vector>

#include "flood/field.hpp"
#include "flood/scenario.hpp"
#include "flood/surrogate.hpp"

/// Measurement update of a predicted state from partial, noisy observations, and the
/// empirical covariances it needs.
namespace flood::assim {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Dense update inputs: observation map H (m x n), prior covariance P (n x n, symmetric
/// PSD) and observation covariance R (m x m, symmetric PD).
struct GaussianUpdateSpec {
    MatrixXd H;
    MatrixXd P;
    MatrixXd R;

    /// Checks dimensions, symmetry, P >= 0 (eigenvalues >= -1e-10 ||P||) and R > 0.
    void validate() const;
};

/// x + P H^T (H P H^T + R)^{-1} (z - H x), solved through an LDLT factorization of the
/// innovation covariance. Throws singular when its condition number exceeds 1e12.
VectorXd measurement_update(const VectorXd& x, const VectorXd& z, const GaussianUpdateSpec& spec);

/// Gaspari-Cohn fifth-order taper: 1 at distance 0, 0 from `radius` on. A zero radius
/// keeps only distance 0.
double gaspari_cohn(double distance, double radius);

/// Sample covariance of error vectors (one per column), tapered by gaspari_cohn of the
/// distance in cells between the entries' cells, symmetrized and clipped to PSD. Entries
/// are channel-major over the grid: index = channel * cells + cell. Dense, for small grids.
MatrixXd estimate_covariance(const MatrixXd& errors, double localization_radius, const GridSpec& grid);

/// The same tapered covariance without materializing it: entries are computed on demand
/// from the stored samples, and only pairs of cells within the radius are nonzero. The
/// taper is a positive definite correlation, so the tapered matrix stays PSD.
class LocalizedCovariance {
public:
    LocalizedCovariance(const MatrixXd& errors, double localization_radius, const GridSpec& grid);

    /// Wraps an explicit matrix (no taper, every entry kept).
    static LocalizedCovariance from_dense(const MatrixXd& P, const GridSpec& grid);

    Index size() const { return n_; }
    double radius() const { return radius_; }
    double operator()(Index a, Index b) const;

    /// Columns `cols` of P as a sparse n x cols.size() matrix.
    SparseMatrix columns(const std::vector<Index>& cols) const;

    /// Every entry; only sensible for small grids.
    MatrixXd dense() const;

private:
    LocalizedCovariance() = default;

    GridSpec grid_;
    Index n_ = 0;
    int channels_ = 0;
    double radius_ = 0.0;
    bool explicit_ = false;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> samples_;  // n x K, centred, / sqrt(K-1)
    MatrixXd dense_;
    std::vector<std::pair<int, int>> offsets_;  // cell offsets within the radius
    std::vector<double> taper_;                 // taper per offset
};

/// The update for H selecting entries `observed` of the state vector, with P given by
/// its covariance columns: x + P_:,o (P_o,o + R)^{-1} (z - x_o).
VectorXd selector_update(const VectorXd& x, const std::vector<Index>& observed, const VectorXd& z,
                         const LocalizedCovariance& P, const MatrixXd& R);

/// One observed value of the state: channel 0 = h, 1 = qx, 2 = qy.
struct Spot {
    std::size_t cell = 0;
    int channel = 0;
    double value = 0.0;
    double variance = 0.0;  // observation error variance, > 0
};

/// State as a channel-major vector (h, qx, qy) and back.
VectorXd flatten(const FlowState& s);
FlowState unflatten(const GridSpec& grid, const VectorXd& v, double time);

/// Applies selector_update with R = diag(spot variances) to the flattened prediction, then
/// restores the state invariants (h >= 0, no momentum in dry cells).
FlowState spot_correct(const FlowState& prediction, const std::vector<Spot>& spots, const LocalizedCovariance& P);

// ---------------------------------------------------------------------------
// Corrected rollouts
// ---------------------------------------------------------------------------

/// One-step surrogate errors (clamped prediction - target) in physical units, one sample
/// per column, for covariance estimation.
MatrixXd one_step_errors(surrogate::Model& model, const std::vector<scenario::TrainingSample>& samples);

struct ObservationPlan {
    double fraction = 0.1;                       // share of cells observed per step
    std::array<double, 3> noise_std{0, 0, 0};    // per channel; also the assumed R
    std::uint64_t seed = 17;
};

/// Spots at a random `fraction` of the cells (all three channels), drawn afresh for step
/// `step`, with values from `truth` plus Gaussian noise of the plan's standard deviation.
std::vector<Spot> observe(const FlowState& truth, const ObservationPlan& plan, int step);

/// Surrogate rollout where each prediction is corrected with observations of
/// reference[k] before being fed back. reference[0] is the initial state.
std::vector<FlowState> assimilated_rollout(surrogate::Model& model, const ForcingPlan& forcing,
                                           const std::vector<FlowState>& reference, int n_steps,
                                           const LocalizedCovariance& P, const ObservationPlan& plan);

}  // namespace flood::assim
