#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lmest/error.hpp"

namespace lmest {

inline constexpr int kMissing = -1;

// Lower clamp for conditional response probabilities after every M-step.
inline constexpr double kProbFloor = 1e-10;

enum class TransitionLayout { Pairwise, Difference };

inline const char* to_string(TransitionLayout layout) {
  return layout == TransitionLayout::Pairwise ? "pairwise" : "difference";
}

inline TransitionLayout parse_layout(const std::string& s) {
  if (s == "pairwise") return TransitionLayout::Pairwise;
  if (s == "difference") return TransitionLayout::Difference;
  fail(ErrorKind::Usage, "unknown layout '" + s + "' (expected pairwise|difference)");
}

//---------------------------------------------------------------------------//
// Categorical responses indexed (unit, occasion, item); kMissing marks a gap.
class ResponsePanel {
 public:
  ResponsePanel() = default;

  ResponsePanel(int n, int T, std::vector<int> cats, std::vector<int> y)
      : n_(n), T_(T), r_(static_cast<int>(cats.size())), cats_(std::move(cats)),
        y_(std::move(y)) {
    require(n_ >= 1 && T_ >= 1 && r_ >= 1, "response panel needs n, T, r >= 1");
    require(y_.size() == static_cast<std::size_t>(n_) * T_ * r_,
            "response array size does not match n*T*r");
    for (int j = 0; j < r_; ++j)
      require(cats_[j] >= 2, "item " + std::to_string(j + 1) + " has fewer than 2 categories");
    for (std::size_t idx = 0; idx < y_.size(); ++idx) {
      int v = y_[idx];
      int j = static_cast<int>(idx % r_);
      require(v == kMissing || (v >= 0 && v < cats_[j]),
              "response out of range for item " + std::to_string(j + 1));
    }
  }

  int n() const { return n_; }
  int T() const { return T_; }
  int r() const { return r_; }
  const std::vector<int>& cats() const { return cats_; }
  const std::vector<int>& values() const { return y_; }

  int operator()(int i, int t, int j) const { return y_[offset(i, t) + j]; }

  std::span<const int> occasion(int i, int t) const {
    return {y_.data() + offset(i, t), static_cast<std::size_t>(r_)};
  }

  // Panel made of the listed units, in order (repeats allowed).
  ResponsePanel select_units(std::span<const int> units) const {
    std::vector<int> y;
    y.reserve(units.size() * T_ * r_);
    for (int i : units) {
      auto first = y_.begin() + static_cast<std::ptrdiff_t>(offset(i, 0));
      y.insert(y.end(), first, first + static_cast<std::ptrdiff_t>(T_) * r_);
    }
    return ResponsePanel(static_cast<int>(units.size()), T_, cats_, std::move(y));
  }

  // Same responses with only the listed items kept.
  ResponsePanel select_items(int count) const {
    require(count >= 1 && count <= r_, "item selection out of range");
    std::vector<int> y;
    y.reserve(static_cast<std::size_t>(n_) * T_ * count);
    for (int i = 0; i < n_; ++i)
      for (int t = 0; t < T_; ++t)
        for (int j = 0; j < count; ++j) y.push_back((*this)(i, t, j));
    return ResponsePanel(n_, T_, std::vector<int>(cats_.begin(), cats_.begin() + count),
                         std::move(y));
  }

 private:
  std::size_t offset(int i, int t) const {
    return (static_cast<std::size_t>(i) * T_ + t) * r_;
  }

  int n_ = 0, T_ = 0, r_ = 0;
  std::vector<int> cats_;
  std::vector<int> y_;
};

//---------------------------------------------------------------------------//
// Per-unit, per-occasion covariates. The full series x_i^(t) is kept (for
// serialization) together with the two designs the latent model uses:
//   init design  : occasion 1, columns init_cols  (n x q1)
//   trans design : occasions 2..T, columns trans_cols  (n*(T-1) x q2)
class CovariatePanel {
 public:
  CovariatePanel() = default;

  CovariatePanel(int n, int T, Eigen::MatrixXd series, std::vector<int> init_cols,
                 std::vector<int> trans_cols, std::vector<std::string> names = {})
      : n_(n), T_(T), series_(std::move(series)), init_cols_(std::move(init_cols)),
        trans_cols_(std::move(trans_cols)), names_(std::move(names)) {
    require(n_ >= 1 && T_ >= 1, "covariate panel needs n, T >= 1");
    require(series_.rows() == static_cast<Eigen::Index>(n_) * T_,
            "covariate rows do not match n*T");
    require(series_.allFinite(), "covariates must be finite (missing covariates are not supported)");
    const int q = static_cast<int>(series_.cols());
    if (names_.empty())
      for (int c = 0; c < q; ++c) names_.push_back("x_" + std::to_string(c + 1));
    require(static_cast<int>(names_.size()) == q, "covariate name count mismatch");
    for (int c : init_cols_) require(c >= 0 && c < q, "initial covariate column out of range");
    for (int c : trans_cols_) require(c >= 0 && c < q, "transition covariate column out of range");

    init_.resize(n_, static_cast<Eigen::Index>(init_cols_.size()));
    trans_.resize(static_cast<Eigen::Index>(n_) * (T_ - 1),
                  static_cast<Eigen::Index>(trans_cols_.size()));
    for (int i = 0; i < n_; ++i) {
      for (std::size_t c = 0; c < init_cols_.size(); ++c)
        init_(i, static_cast<Eigen::Index>(c)) = series_(static_cast<Eigen::Index>(i) * T_, init_cols_[c]);
      for (int t = 1; t < T_; ++t)
        for (std::size_t c = 0; c < trans_cols_.size(); ++c)
          trans_(static_cast<Eigen::Index>(i) * (T_ - 1) + t - 1, static_cast<Eigen::Index>(c)) =
              series_(static_cast<Eigen::Index>(i) * T_ + t, trans_cols_[c]);
    }
  }

  // Same columns for both designs, as in the simulated covariate scenarios.
  static CovariatePanel shared(int n, int T, Eigen::MatrixXd series,
                               std::vector<std::string> names = {}) {
    std::vector<int> cols(static_cast<std::size_t>(series.cols()));
    for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = static_cast<int>(c);
    return CovariatePanel(n, T, std::move(series), cols, cols, std::move(names));
  }

  // Intercept-only design (q1 = q2 = 0).
  static CovariatePanel empty(int n, int T) {
    return CovariatePanel(n, T, Eigen::MatrixXd(static_cast<Eigen::Index>(n) * T, 0), {}, {});
  }

  int n() const { return n_; }
  int T() const { return T_; }
  int q() const { return static_cast<int>(series_.cols()); }
  int q1() const { return static_cast<int>(init_cols_.size()); }
  int q2() const { return static_cast<int>(trans_cols_.size()); }
  const std::vector<int>& init_cols() const { return init_cols_; }
  const std::vector<int>& trans_cols() const { return trans_cols_; }
  const std::vector<std::string>& names() const { return names_; }

  const Eigen::MatrixXd& series() const { return series_; }
  const Eigen::MatrixXd& init_design() const { return init_; }
  const Eigen::MatrixXd& trans_design() const { return trans_; }

  auto init_row(int i) const { return init_.row(i); }
  // t is a 0-based occasion index >= 1.
  auto trans_row(int i, int t) const {
    return trans_.row(static_cast<Eigen::Index>(i) * (T_ - 1) + t - 1);
  }

  void check_matches(const ResponsePanel& panel) const {
    require(n_ == panel.n() && T_ == panel.T(),
            "covariate panel dimensions do not match the response panel");
  }

  CovariatePanel select_units(std::span<const int> units) const {
    Eigen::MatrixXd s(static_cast<Eigen::Index>(units.size()) * T_, series_.cols());
    for (std::size_t m = 0; m < units.size(); ++m)
      s.middleRows(static_cast<Eigen::Index>(m) * T_, T_) =
          series_.middleRows(static_cast<Eigen::Index>(units[m]) * T_, T_);
    return CovariatePanel(static_cast<int>(units.size()), T_, std::move(s), init_cols_,
                          trans_cols_, names_);
  }

 private:
  int n_ = 0, T_ = 0;
  Eigen::MatrixXd series_;
  std::vector<int> init_cols_, trans_cols_;
  std::vector<std::string> names_;
  Eigen::MatrixXd init_, trans_;
};

//---------------------------------------------------------------------------//
// phi[j](y, u) = P(Y_j = y | U = u); columns are probability vectors.
struct MeasurementParams {
  int k = 0;
  std::vector<Eigen::MatrixXd> phi;

  int r() const { return static_cast<int>(phi.size()); }

  void validate(double tol = 1e-10) const {
    require(k >= 1, "measurement block needs k >= 1");
    for (std::size_t j = 0; j < phi.size(); ++j) {
      require(phi[j].cols() == k, "phi column count differs from k");
      require((phi[j].array() >= 0.0).all() && (phi[j].array() <= 1.0).all(),
              "phi entries must lie in [0,1]");
      for (int u = 0; u < k; ++u)
        require(std::abs(phi[j].col(u).sum() - 1.0) <= tol, "phi column does not sum to 1");
    }
  }

  void check_matches(const ResponsePanel& panel) const {
    require(r() == panel.r(), "phi item count does not match the panel");
    for (int j = 0; j < r(); ++j)
      require(phi[j].rows() == panel.cats()[j], "phi category count does not match the panel");
  }
};

struct LatentChainParams {
  Eigen::VectorXd initial;     // pi_u
  Eigen::MatrixXd transition;  // Pi(u, v) = pi_{v|u}

  int k() const { return static_cast<int>(initial.size()); }

  void validate(double tol = 1e-10) const {
    require(initial.size() >= 1, "empty initial vector");
    require(transition.rows() == initial.size() && transition.cols() == initial.size(),
            "transition matrix must be k x k");
    require((initial.array() >= 0.0).all() && (initial.array() <= 1.0).all() &&
                (transition.array() >= 0.0).all() && (transition.array() <= 1.0).all(),
            "chain probabilities must lie in [0,1]");
    require(std::abs(initial.sum() - 1.0) <= tol, "initial vector does not sum to 1");
    for (Eigen::Index u = 0; u < transition.rows(); ++u)
      require(std::abs(transition.row(u).sum() - 1.0) <= tol, "transition row does not sum to 1");
  }
};

// Multinomial-logit latent block.
//   beta            : (1+q1) x (k-1); column u-1 holds (beta_0u, beta_1u) for u = 2..k
//   Pairwise layout : gamma_pairwise[u] is (1+q2) x (k-1), columns are the
//                     destinations v != u in ascending order
//   Difference layout: gamma_intercept(u, v) for u != v (diagonal unused, 0);
//                      gamma_slope is q2 x k with column 0 fixed at zero
struct CovariateLatentParams {
  TransitionLayout layout = TransitionLayout::Pairwise;
  int k = 0, q1 = 0, q2 = 0;
  Eigen::MatrixXd beta;
  std::vector<Eigen::MatrixXd> gamma_pairwise;
  Eigen::MatrixXd gamma_intercept;
  Eigen::MatrixXd gamma_slope;

  static CovariateLatentParams zeros(int k, int q1, int q2, TransitionLayout layout) {
    CovariateLatentParams p;
    p.layout = layout;
    p.k = k;
    p.q1 = q1;
    p.q2 = q2;
    p.beta = Eigen::MatrixXd::Zero(1 + q1, k - 1);
    if (layout == TransitionLayout::Pairwise) {
      p.gamma_pairwise.assign(k, Eigen::MatrixXd::Zero(1 + q2, k - 1));
    } else {
      p.gamma_intercept = Eigen::MatrixXd::Zero(k, k);
      p.gamma_slope = Eigen::MatrixXd::Zero(q2, k);
    }
    return p;
  }

  void validate() const {
    require(k >= 1, "latent block needs k >= 1");
    require(beta.rows() == 1 + q1 && beta.cols() == k - 1, "beta has the wrong shape");
    require(beta.allFinite(), "beta must be finite");
    if (layout == TransitionLayout::Pairwise) {
      require(static_cast<int>(gamma_pairwise.size()) == k, "gamma needs one block per origin state");
      for (const auto& g : gamma_pairwise) {
        require(g.rows() == 1 + q2 && g.cols() == k - 1, "gamma block has the wrong shape");
        require(g.allFinite(), "gamma must be finite");
      }
    } else {
      require(gamma_intercept.rows() == k && gamma_intercept.cols() == k,
              "gamma intercepts must be k x k");
      require(gamma_slope.rows() == q2 && gamma_slope.cols() == k, "gamma slopes must be q2 x k");
      require(gamma_intercept.allFinite() && gamma_slope.allFinite(), "gamma must be finite");
      require(q2 == 0 || gamma_slope.col(0).isZero(0.0),
              "difference layout fixes the slope vector of state 1 at zero");
    }
  }
};

using LatentParams = std::variant<LatentChainParams, CovariateLatentParams>;

struct ModelParams {
  MeasurementParams measurement;
  LatentParams latent;

  int k() const { return measurement.k; }
  bool has_covariates() const { return std::holds_alternative<CovariateLatentParams>(latent); }
  const LatentChainParams& chain() const { return std::get<LatentChainParams>(latent); }
  const CovariateLatentParams& regression() const { return std::get<CovariateLatentParams>(latent); }
};

//---------------------------------------------------------------------------//
// Expected state indicators b(i,t,u) and transition indicators bb(i,t,u,v),
// t >= 1 (0-based) for the latter. loglik is empty for three-step moments.
struct PosteriorMoments {
  int n = 0, T = 0, k = 0;
  std::vector<double> b;
  std::vector<double> bb;
  std::optional<double> loglik;

  PosteriorMoments() = default;
  PosteriorMoments(int n_, int T_, int k_)
      : n(n_), T(T_), k(k_),
        b(static_cast<std::size_t>(n_) * T_ * k_, 0.0),
        bb(static_cast<std::size_t>(n_) * (T_ > 0 ? T_ - 1 : 0) * k_ * k_, 0.0) {}

  double& b_at(int i, int t, int u) { return b[b_offset(i, t) + u]; }
  double b_at(int i, int t, int u) const { return b[b_offset(i, t) + u]; }
  double& bb_at(int i, int t, int u, int v) { return bb[bb_offset(i, t) + u * k + v]; }
  double bb_at(int i, int t, int u, int v) const { return bb[bb_offset(i, t) + u * k + v]; }

  std::span<double> b_unit(int i) {
    return {b.data() + b_offset(i, 0), static_cast<std::size_t>(T) * k};
  }
  std::span<double> bb_unit(int i) {
    return {bb.data() + static_cast<std::size_t>(i) * (T - 1) * k * k,
            static_cast<std::size_t>(T - 1) * k * k};
  }

  std::size_t b_offset(int i, int t) const {
    return (static_cast<std::size_t>(i) * T + t) * k;
  }
  // t is a 0-based occasion >= 1
  std::size_t bb_offset(int i, int t) const {
    return (static_cast<std::size_t>(i) * (T - 1) + (t - 1)) * k * k;
  }
};

// lambda(t, u) = P(U^(t) = u).
struct StateMarginals {
  Eigen::MatrixXd lambda;
};

}  // namespace lmest
