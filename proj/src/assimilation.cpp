#include "flood/assimilation.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace flood::assim {

namespace {

constexpr std::uint64_t observe_tag = 0x4f42'5356;

std::string dims(Index r, Index c) { return std::to_string(r) + "x" + std::to_string(c); }

// Solves S y = d; S must be symmetric positive definite and reasonably conditioned.
VectorXd solve_innovation(const MatrixXd& S, const VectorXd& d) {
    const Eigen::LDLT<MatrixXd> ldlt(S);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        fail(ErrorCategory::singular, "innovation covariance H P H^T + R is not positive definite");
    }
    // The LDLT solve pseudo-inverts zero pivots, so the pivot spread is checked as well.
    const VectorXd piv = ldlt.vectorD().cwiseAbs();
    const double rc = std::min(ldlt.rcond(), piv.minCoeff() / piv.maxCoeff());
    if (!(rc >= 1e-12)) {
        fail(ErrorCategory::singular, "innovation covariance is singular (condition number estimate " +
                                          std::to_string(rc > 0 ? 1.0 / rc : INFINITY) + " > 1e12)");
    }
    return ldlt.solve(d);
}

void require_symmetric(const MatrixXd& A, const char* what) {
    const double scale = std::max(A.cwiseAbs().maxCoeff(), 1e-300);
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) fail(ErrorCategory::invalid_argument, std::string(what) + " is not symmetric");
}

void require_pd(const MatrixXd& R) {
    require_symmetric(R, "R");
    const Eigen::LLT<MatrixXd> llt(R);
    if (llt.info() != Eigen::Success) fail(ErrorCategory::invalid_argument, "R is not positive definite");
}

int channels_of(Index n, const GridSpec& grid) {
    const auto cells = static_cast<Index>(grid.cells());
    if (n <= 0 || n % cells != 0) {
        fail(ErrorCategory::size_mismatch, "state vector of length " + std::to_string(n) + " is not a whole number of " +
                                               std::to_string(cells) + "-cell channels");
    }
    return static_cast<int>(n / cells);
}

double cell_distance(const GridSpec& g, Index a, Index b) {
    const auto cells = static_cast<Index>(g.cells());
    const Index ca = a % cells, cb = b % cells;
    const double di = static_cast<double>(ca % g.nx - cb % g.nx), dj = static_cast<double>(ca / g.nx - cb / g.nx);
    return std::sqrt(di * di + dj * dj);
}

// Centred samples scaled by 1/sqrt(K-1), so S S^T is the sample covariance.
MatrixXd centred(const MatrixXd& errors) {
    if (errors.cols() < 2) fail(ErrorCategory::invalid_argument, "covariance estimation needs at least 2 samples");
    // Deviations from the first sample first, so identical samples give exact zeros.
    MatrixXd E = errors.colwise() - errors.col(0);
    E = E.colwise() - E.rowwise().mean();
    E /= std::sqrt(static_cast<double>(errors.cols() - 1));
    return E;
}

}  // namespace

void GaussianUpdateSpec::validate() const {
    const Index n = P.rows(), m = R.rows();
    if (P.cols() != n || R.cols() != m || H.rows() != m || H.cols() != n) {
        fail(ErrorCategory::size_mismatch, "H is " + dims(H.rows(), H.cols()) + ", P is " + dims(P.rows(), P.cols()) +
                                               ", R is " + dims(R.rows(), R.cols()));
    }
    require_symmetric(P, "P");
    if (n > 0) {
        const VectorXd ev = Eigen::SelfAdjointEigenSolver<MatrixXd>(P, Eigen::EigenvaluesOnly).eigenvalues();
        const double norm = ev.cwiseAbs().maxCoeff();
        if (ev.minCoeff() < -1e-10 * norm) fail(ErrorCategory::invalid_argument, "P is not positive semidefinite");
    }
    require_pd(R);
}

VectorXd measurement_update(const VectorXd& x, const VectorXd& z, const GaussianUpdateSpec& spec) {
    spec.validate();
    if (x.size() != spec.P.rows() || z.size() != spec.R.rows()) {
        fail(ErrorCategory::size_mismatch, "x has " + std::to_string(x.size()) + " entries and z " + std::to_string(z.size()) +
                                               "; H is " + dims(spec.H.rows(), spec.H.cols()));
    }
    if (z.size() == 0) return x;
    const MatrixXd PHt = spec.P * spec.H.transpose();
    const MatrixXd S = spec.H * PHt + spec.R;
    return x + PHt * solve_innovation(S, z - spec.H * x);
}

double gaspari_cohn(double d, double radius) {
    d = std::abs(d);
    if (radius <= 0.0) return d == 0.0 ? 1.0 : 0.0;
    const double c = radius / 2.0, r = d / c;
    if (r >= 2.0) return 0.0;
    const double r2 = r * r, r3 = r2 * r, r4 = r3 * r, r5 = r4 * r;
    if (r <= 1.0) return -r5 / 4.0 + r4 / 2.0 + 5.0 * r3 / 8.0 - 5.0 * r2 / 3.0 + 1.0;
    return r5 / 12.0 - r4 / 2.0 + 5.0 * r3 / 8.0 + 5.0 * r2 / 3.0 - 5.0 * r + 4.0 - 2.0 / (3.0 * r);
}

MatrixXd estimate_covariance(const MatrixXd& errors, double radius, const GridSpec& grid) {
    channels_of(errors.rows(), grid);
    if (radius < 0.0) fail(ErrorCategory::invalid_argument, "localization radius must be nonnegative");
    const MatrixXd E = centred(errors);
    MatrixXd P = E * E.transpose();
    const Index n = P.rows();
    for (Index b = 0; b < n; ++b)
        for (Index a = 0; a < n; ++a) P(a, b) *= gaspari_cohn(cell_distance(grid, a, b), radius);
    P = 0.5 * (P + P.transpose());
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P);
    if (eig.eigenvalues().minCoeff() < 0.0) {
        const VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
        P = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
        P = 0.5 * (P + P.transpose());
    }
    return P;
}

LocalizedCovariance::LocalizedCovariance(const MatrixXd& errors, double radius, const GridSpec& grid)
    : grid_(grid), n_(errors.rows()), channels_(channels_of(errors.rows(), grid)), radius_(radius) {
    if (radius < 0.0) fail(ErrorCategory::invalid_argument, "localization radius must be nonnegative");
    samples_ = centred(errors);
    const int reach = static_cast<int>(std::ceil(radius));
    for (int dj = -reach; dj <= reach; ++dj) {
        for (int di = -reach; di <= reach; ++di) {
            const double t = gaspari_cohn(std::hypot(di, dj), radius);
            if (t > 0.0) {
                offsets_.emplace_back(di, dj);
                taper_.push_back(t);
            }
        }
    }
}

LocalizedCovariance LocalizedCovariance::from_dense(const MatrixXd& P, const GridSpec& grid) {
    if (P.rows() != P.cols()) fail(ErrorCategory::size_mismatch, "covariance must be square");
    LocalizedCovariance c;
    c.grid_ = grid;
    c.n_ = P.rows();
    c.channels_ = channels_of(P.rows(), grid);
    c.radius_ = INFINITY;
    c.explicit_ = true;
    c.dense_ = P;
    return c;
}

double LocalizedCovariance::operator()(Index a, Index b) const {
    if (explicit_) return dense_(a, b);
    const double t = gaspari_cohn(cell_distance(grid_, a, b), radius_);
    return t == 0.0 ? 0.0 : t * samples_.row(a).dot(samples_.row(b));
}

SparseMatrix LocalizedCovariance::columns(const std::vector<Index>& cols) const {
    std::vector<Eigen::Triplet<double>> entries;
    const auto cells = static_cast<Index>(grid_.cells());
    for (std::size_t k = 0; k < cols.size(); ++k) {
        const Index j = cols[k];
        if (j < 0 || j >= n_) fail(ErrorCategory::invalid_argument, "covariance column " + std::to_string(j) + " out of range");
        const auto col = static_cast<Index>(k);
        if (explicit_) {
            for (Index a = 0; a < n_; ++a)
                if (dense_(a, j) != 0.0) entries.emplace_back(a, col, dense_(a, j));
            continue;
        }
        const Index cell = j % cells;
        const int ci = static_cast<int>(cell % grid_.nx), cj = static_cast<int>(cell / grid_.nx);
        const auto sj = samples_.row(j);
        for (std::size_t o = 0; o < offsets_.size(); ++o) {
            const int i = ci + offsets_[o].first, jj = cj + offsets_[o].second;
            if (i < 0 || jj < 0 || i >= grid_.nx || jj >= grid_.ny) continue;
            const auto other = static_cast<Index>(grid_.index(i, jj));
            for (int c = 0; c < channels_; ++c) {
                const Index a = c * cells + other;
                entries.emplace_back(a, col, taper_[o] * samples_.row(a).dot(sj));
            }
        }
    }
    SparseMatrix out(n_, static_cast<Index>(cols.size()));
    out.setFromTriplets(entries.begin(), entries.end());
    return out;
}

MatrixXd LocalizedCovariance::dense() const {
    if (explicit_) return dense_;
    MatrixXd P(n_, n_);
    for (Index b = 0; b < n_; ++b)
        for (Index a = 0; a < n_; ++a) P(a, b) = (*this)(a, b);
    return P;
}

VectorXd selector_update(const VectorXd& x, const std::vector<Index>& observed, const VectorXd& z,
                         const LocalizedCovariance& P, const MatrixXd& R) {
    const auto m = static_cast<Index>(observed.size());
    if (x.size() != P.size() || z.size() != m || R.rows() != m || R.cols() != m) {
        fail(ErrorCategory::size_mismatch, "x has " + std::to_string(x.size()) + " entries, P is " + dims(P.size(), P.size()) +
                                               ", z has " + std::to_string(z.size()) + ", R is " + dims(R.rows(), R.cols()) +
                                               " for " + std::to_string(m) + " observations");
    }
    if (m == 0) return x;
    require_pd(R);
    const SparseMatrix PHt = P.columns(observed);
    // Rows of PHt at the observed entries give H P H^T; an entry may be observed twice.
    std::vector<std::vector<Index>> slots(static_cast<std::size_t>(x.size()));
    for (Index k = 0; k < m; ++k) slots[static_cast<std::size_t>(observed[static_cast<std::size_t>(k)])].push_back(k);
    MatrixXd S = R;
    for (Index col = 0; col < m; ++col) {
        for (SparseMatrix::InnerIterator it(PHt, col); it; ++it) {
            for (Index row : slots[static_cast<std::size_t>(it.row())]) S(row, col) += it.value();
        }
    }
    VectorXd d(m);
    for (Index k = 0; k < m; ++k) d(k) = z(k) - x(observed[static_cast<std::size_t>(k)]);
    return x + PHt * solve_innovation(S, d);
}

VectorXd flatten(const FlowState& s) {
    const auto n = static_cast<Index>(s.grid().cells());
    VectorXd v(3 * n);
    v.segment(0, n) = Eigen::Map<const VectorXd>(s.h().data(), n);
    v.segment(n, n) = Eigen::Map<const VectorXd>(s.qx().data(), n);
    v.segment(2 * n, n) = Eigen::Map<const VectorXd>(s.qy().data(), n);
    return v;
}

FlowState unflatten(const GridSpec& grid, const VectorXd& v, double time) {
    const std::size_t n = grid.cells();
    if (v.size() != static_cast<Index>(3 * n)) fail(ErrorCategory::size_mismatch, "state vector does not match the grid");
    Field h(n), qx(n), qy(n);
    for (std::size_t c = 0; c < n; ++c) {
        const auto i = static_cast<Index>(c);
        h[c] = std::max(0.0, v(i));
        qx[c] = h[c] > 0.0 ? v(static_cast<Index>(n) + i) : 0.0;
        qy[c] = h[c] > 0.0 ? v(static_cast<Index>(2 * n) + i) : 0.0;
    }
    return FlowState(grid, std::move(h), std::move(qx), std::move(qy), time);
}

FlowState spot_correct(const FlowState& prediction, const std::vector<Spot>& spots, const LocalizedCovariance& P) {
    if (spots.empty()) return prediction;
    const GridSpec& g = prediction.grid();
    const std::size_t n = g.cells();
    std::vector<Index> observed;
    VectorXd z(static_cast<Index>(spots.size()));
    VectorXd r(static_cast<Index>(spots.size()));
    for (std::size_t k = 0; k < spots.size(); ++k) {
        const Spot& s = spots[k];
        if (s.cell >= n) fail(ErrorCategory::invalid_argument, "spot cell " + std::to_string(s.cell) + " is outside the grid");
        if (s.channel < 0 || s.channel > 2) fail(ErrorCategory::invalid_argument, "spot channel must be 0 (h), 1 (qx) or 2 (qy)");
        if (!(s.variance > 0.0)) fail(ErrorCategory::invalid_argument, "spot variance must be positive");
        observed.push_back(static_cast<Index>(static_cast<std::size_t>(s.channel) * n + s.cell));
        z(static_cast<Index>(k)) = s.value;
        r(static_cast<Index>(k)) = s.variance;
    }
    const MatrixXd R = r.asDiagonal();
    return unflatten(g, selector_update(flatten(prediction), observed, z, P, R), prediction.time());
}

MatrixXd one_step_errors(surrogate::Model& model, const std::vector<scenario::TrainingSample>& samples) {
    const std::size_t n = model.grid.cells();
    MatrixXd E(static_cast<Index>(3 * n), static_cast<Index>(samples.size()));
    for (std::size_t k = 0; k < samples.size(); ++k) {
        require_same_grid(model.grid, samples[k].grid, "error sample");
        const FlowState pred = surrogate::state_from_prediction(model.grid, surrogate::predict_raw(model, samples[k].input), 0.0);
        VectorXd e = flatten(pred);
        for (std::size_t i = 0; i < 3 * n; ++i) e(static_cast<Index>(i)) -= samples[k].target[i];
        E.col(static_cast<Index>(k)) = e;
    }
    return E;
}

std::vector<Spot> observe(const FlowState& truth, const ObservationPlan& plan, int step) {
    if (!(plan.fraction > 0.0 && plan.fraction <= 1.0)) fail(ErrorCategory::invalid_argument, "observed fraction must be in (0, 1]");
    for (double s : plan.noise_std)
        if (!(s > 0.0)) fail(ErrorCategory::invalid_argument, "observation noise std must be positive");
    const std::size_t n = truth.grid().cells();
    const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(plan.fraction * static_cast<double>(n))));
    Rng rng(plan.seed, {observe_tag, static_cast<std::uint64_t>(step)});
    std::vector<std::size_t> cells(n);
    std::iota(cells.begin(), cells.end(), std::size_t{0});
    rng.shuffle(cells);
    cells.resize(count);
    std::sort(cells.begin(), cells.end());
    const Field* ch[3] = {&truth.h(), &truth.qx(), &truth.qy()};
    std::vector<Spot> spots;
    spots.reserve(3 * count);
    for (int c = 0; c < 3; ++c) {
        const double sd = plan.noise_std[static_cast<std::size_t>(c)];
        for (std::size_t cell : cells) spots.push_back({cell, c, (*ch[c])[cell] + sd * rng.normal(), sd * sd});
    }
    return spots;
}

std::vector<FlowState> assimilated_rollout(surrogate::Model& model, const ForcingPlan& forcing, const std::vector<FlowState>& reference,
                                           int n_steps, const LocalizedCovariance& P, const ObservationPlan& plan) {
    if (n_steps < 0) fail(ErrorCategory::invalid_argument, "rollout step count must be nonnegative");
    if (reference.size() < static_cast<std::size_t>(n_steps) + 1) {
        fail(ErrorCategory::invalid_argument, "reference has " + std::to_string(reference.size()) + " states, " +
                                                  std::to_string(n_steps) + " steps need " + std::to_string(n_steps + 1));
    }
    const double t0 = reference[0].time();
    for (int k = 1; k <= n_steps; ++k) {
        if (std::abs(reference[k].time() - (t0 + k * model.lead_time)) > 1e-6 * model.lead_time) {
            fail(ErrorCategory::invalid_argument, "reference state " + std::to_string(k) + " is not one lead time after the previous");
        }
    }
    if (n_steps > 0 && t0 + n_steps * model.lead_time > forcing.duration * (1.0 + 1e-12) + 1e-9) {
        fail(ErrorCategory::invalid_argument, "forcing does not cover the rollout horizon");
    }
    std::vector<FlowState> out{reference[0]};
    for (int k = 1; k <= n_steps; ++k) {
        const FlowState pred = surrogate::predict(model, out.back(), forcing);
        out.push_back(spot_correct(pred, observe(reference[static_cast<std::size_t>(k)], plan, k), P));
    }
    return out;
}

}  // namespace flood::assim
