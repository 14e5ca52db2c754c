#ifndef IQBO_ACQUISITION_HPP
#define IQBO_ACQUISITION_HPP

#include "iqbo/cmp.hpp"

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>

namespace iqbo::acquisition {

using Rng = std::mt19937_64;

enum class MaxValueMethod { ThompsonGrid, Gumbel };

struct MaxValueSamples {
    std::vector<double> values;
    MaxValueMethod method = MaxValueMethod::ThompsonGrid;
    /// Set when every grid variance sat at the floor and the samples collapsed to max(mean).
    bool degenerate = false;
};

/// Draw `count` samples of max_x f(x) over the grid from a Gaussian with the given mean and
/// covariance. Thompson draws joint vectors through a jittered Cholesky; Gumbel matches a
/// Gumbel law to the 0.25/0.5/0.75 quantiles of prod_i Phi((y - mean_i) / sd_i) and samples
/// it by inverse transform (only the diagonal of `cov` is read).
MaxValueSamples sample_max_values(const Vector& mean, const Matrix& cov, int count, MaxValueMethod method,
                                  Rng& rng);

/// Convenience overload over a deconditional posterior on a grid in the target space.
MaxValueSamples sample_max_values(const cmp::DeconditionalPosterior& post_f, const PointSet& grid, int count,
                                  MaxValueMethod method, std::uint64_t seed);

struct AcquisitionScore {
    double score = 0.0;
    std::vector<double> gammas;
    /// Noisy variant only: quadrature failed the doubling check.
    bool quadrature_flagged = false;
};

/// Entropy reduction of a standard normal truncated above at gamma:
/// gamma phi(gamma) / (2 Phi(gamma)) - log Phi(gamma).
double truncation_entropy_gain(double gamma);

/// log of the gain, accurate far into the upper tail where the gain itself underflows.
double log_truncation_entropy_gain(double gamma);

/// log of the averaged gain, computed without underflow.
double cmes_log_score(double mean, double sd, const std::vector<double>& maxes);

/// Max-value entropy score with gamma = (f* - mean) / sd, averaged over samples.
AcquisitionScore cmes_score(double mean, double sd, const std::vector<double>& maxes);
AcquisitionScore cmes_score(const Vector& a, const cmp::AggregatePosterior& post_g, const MaxValueSamples& maxes);

/// Noise-aware variant: H[z | a] minus the average entropy of p(z | g(a) <= f*), the latter by
/// piecewise Gauss-Legendre quadrature with `quad_points` nodes per panel. With
/// `check_convergence` the integral is repeated at twice the order and flagged when the
/// relative change exceeds 1e-4.
AcquisitionScore cmes_noisy_score(double mean, double sd, double noise_var, const std::vector<double>& maxes,
                                  int quad_points = 64, bool check_convergence = false);
AcquisitionScore cmes_noisy_score(const Vector& a, const cmp::AggregatePosterior& post_g,
                                  const MaxValueSamples& maxes, double noise_var, int quad_points = 64,
                                  bool check_convergence = false);

/// Entropy of p(z | g(a) <= f*) by the same quadrature.
double noisy_truncated_entropy(double mean, double sd, double noise_var, double f_star, int quad_points);

/// Density of z given g(a) <= f* when g(a) ~ N(mean, sd^2) and z = g(a) + N(0, noise_var).
double noisy_truncated_log_density(double z, double mean, double sd, double noise_var, double f_star);

/// mean + sqrt(beta) * sd
double ucb_score(double mean, double sd, double beta);

/// (mean - incumbent) Phi(u) + sd phi(u) with u = (mean - incumbent) / sd.
double ei_score(double mean, double sd, double incumbent);

enum class PolicyKind { Cmes, CmesNoisy, MesOnG, UcbOnG, EiOnG, EstEquivalent, Random };

std::string_view to_string(PolicyKind kind);
PolicyKind policy_from_string(std::string_view name);

/// Everything a policy needs to score a finite candidate set: the posterior of g on the
/// candidates plus policy parameters.
struct PolicyState {
    Vector mean;
    Vector sd;
    /// Observation noise variance per candidate (CMES-noisy).
    Vector noise_var;
    MaxValueSamples maxes;
    double beta = 1.0;
    double incumbent = -std::numeric_limits<double>::infinity();
    int quad_points = 64;
    std::uint64_t seed = 0;
};

/// Per-candidate scores; larger is better. Random policy returns all zeros. CMES and MES
/// scores are reported relative to the best candidate (best = 1), a common positive factor
/// that keeps both the argmax and the argmax of score / cost while avoiding underflow.
Vector score_candidates(PolicyKind policy, const PolicyState& state);

/// argmax of the policy score with lowest-index tie-break. `Random` draws uniformly from a
/// stream seeded with state.seed.
std::size_t select_query(PolicyKind policy, const PolicyState& state);

/// Index into the grid of the largest posterior mean; ties go to the lowest index.
std::size_t recommend_x(const cmp::DeconditionalPosterior& post_f, const PointSet& grid);
std::size_t recommend_x(const Vector& grid_means);

} // namespace iqbo::acquisition

#endif
