#pragma once

#include "odfatlas/common.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace odfatlas::lme {

// One observation of one coefficient: value at age t (months) for a subject.
struct LongitudinalSample {
  int subject = 0;
  double age = 0;
  double value = 0;
};

// Random-intercept model y = beta0 + beta1*t + alpha_subject + eps,
// alpha ~ N(0, delta2), eps ~ N(0, sigma2), fit by maximum likelihood.
struct LmeFit {
  double beta0 = 0;
  double beta1 = 0;
  double sigma2 = 0;
  double delta2 = 0;
  double se_beta0 = 0;
  double se_beta1 = 0;
  std::map<int, double> alpha;  // subject -> predicted random intercept
  double loglik = 0;
  int n_obs = 0;
  int n_subjects = 0;
};

// Raised when the design cannot identify the mixed model (fewer than two
// subjects, fewer than three observations, fewer than two distinct ages, or
// no subject observed twice).  Carries a plain least-squares fallback with
// delta2 = 0 so callers can still report a trend.
class DegenerateDesignError : public ValidationError {
public:
  DegenerateDesignError(const std::string& msg, LmeFit fallback)
      : ValidationError(msg), fallback_(std::make_shared<LmeFit>(std::move(fallback))) {}

  const LmeFit& fallback() const { return *fallback_; }

private:
  std::shared_ptr<const LmeFit> fallback_;
};

// Profiled maximum likelihood: for each variance ratio rho = delta2/sigma2
// the fixed effects and sigma2 have closed forms, leaving a 1-D bounded
// minimization over rho in [0, 1000] (tolerance 1e-10); rho = 0 is also
// checked explicitly so the boundary solution is exact.
LmeFit fit_lme(const std::vector<LongitudinalSample>& samples);

// Design shared by many responses over the same (subject, age) pairs — the
// atlas fits one design against every coefficient of every voxel.
class LmeDesign {
public:
  explicit LmeDesign(const std::vector<std::pair<int, double>>& subject_age);

  bool degenerate() const { return !reason_.empty(); }
  const std::string& degenerate_reason() const { return reason_; }
  int n_obs() const { return static_cast<int>(age_.size()); }
  int n_subjects() const { return static_cast<int>(subject_ids_.size()); }
  const std::vector<int>& subject_ids() const { return subject_ids_; }

  // values in the same order as the (subject, age) pairs
  LmeFit fit(const Eigen::VectorXd& values) const;      // throws DegenerateDesignError
  LmeFit ols_fit(const Eigen::VectorXd& values) const;  // delta2 = 0 fallback

private:
  std::vector<double> age_;
  std::vector<int> group_;          // row -> index into subject_ids_
  std::vector<int> subject_ids_;    // sorted, unique
  std::vector<double> sub_n_, sub_st_;
  double sum_t_ = 0, sum_tt_ = 0;
  int n_distinct_ages_ = 0;
  std::string reason_;
};

// beta0 + beta1 * t, plus the subject's predicted intercept if given.
double predict(const LmeFit& fit, double t);
double predict(const LmeFit& fit, double t, int subject);

// R^2 = 1 - |obs - fit|_F^2 / |obs - grand_mean|_F^2 across sessions, where
// the grand mean is taken per coefficient.  Constant observations give 0.
double r2_frobenius(const std::vector<Eigen::VectorXd>& observed,
                    const std::vector<Eigen::VectorXd>& fitted);

// Bounded scalar minimization (golden section with parabolic steps).
double brent_minimize(const std::function<double(double)>& f, double lo, double hi,
                      double tol, int max_iter = 200);

}  // namespace odfatlas::lme
