#include "odfatlas/lme.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace odfatlas::lme {

namespace {

constexpr double kRhoMax = 1000.0;
constexpr double kRhoTol = 1e-10;
// floor inside logs only, so exact fits do not produce NaNs
constexpr double kTinyVar = 1e-300;

}  // namespace

double brent_minimize(const std::function<double(double)>& f, double lo, double hi,
                      double tol, int max_iter) {
  if (!(hi > lo)) {
    throw ValidationError("brent_minimize: empty interval");
  }
  const double golden = 0.5 * (3.0 - std::sqrt(5.0));
  double a = lo, b = hi;
  double x = a + golden * (b - a);
  double w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0, e = 0;
  for (int iter = 0; iter < max_iter; ++iter) {
    const double m = 0.5 * (a + b);
    const double tol1 = tol + std::numeric_limits<double>::epsilon() * std::abs(x);
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) break;

    bool parabolic = false;
    if (std::abs(e) > tol1) {
      const double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0) p = -p;
      q = std::abs(q);
      const double e_prev = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * e_prev) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (m > x) ? tol1 : -tol1;
        parabolic = true;
      }
    }
    if (!parabolic) {
      e = (x < m) ? b - x : a - x;
      d = golden * e;
    }
    const double u = (std::abs(d) >= tol1) ? x + d : x + ((d > 0) ? tol1 : -tol1);
    const double fu = f(u);
    if (fu <= fx) {
      if (u < x) b = x; else a = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return x;
}

LmeDesign::LmeDesign(const std::vector<std::pair<int, double>>& subject_age) {
  if (subject_age.empty()) {
    throw ValidationError("lme: no observations");
  }
  std::set<int> ids;
  std::set<double> ages;
  for (const auto& [subject, age] : subject_age) {
    if (!(age >= 0) || !std::isfinite(age)) {
      throw ValidationError("lme: ages must be finite and non-negative");
    }
    ids.insert(subject);
    ages.insert(age);
  }
  subject_ids_.assign(ids.begin(), ids.end());
  n_distinct_ages_ = static_cast<int>(ages.size());

  sub_n_.assign(subject_ids_.size(), 0.0);
  sub_st_.assign(subject_ids_.size(), 0.0);
  age_.reserve(subject_age.size());
  group_.reserve(subject_age.size());
  for (const auto& [subject, age] : subject_age) {
    const auto it = std::lower_bound(subject_ids_.begin(), subject_ids_.end(), subject);
    const int g = static_cast<int>(it - subject_ids_.begin());
    age_.push_back(age);
    group_.push_back(g);
    sub_n_[static_cast<std::size_t>(g)] += 1.0;
    sub_st_[static_cast<std::size_t>(g)] += age;
    sum_t_ += age;
    sum_tt_ += age * age;
  }

  if (subject_ids_.size() < 2) {
    reason_ = "lme: need at least two distinct subjects";
  } else if (subject_age.size() < 3) {
    reason_ = "lme: need at least three observations";
  } else if (n_distinct_ages_ < 2) {
    reason_ = "lme: need at least two distinct ages";
  } else if (*std::max_element(sub_n_.begin(), sub_n_.end()) < 2.0) {
    reason_ = "lme: no subject observed twice, variances are not separable";
  }
}

LmeFit LmeDesign::ols_fit(const Eigen::VectorXd& values) const {
  const int n = n_obs();
  if (values.size() != n) {
    throw ValidationError("lme: value count does not match the design");
  }
  const double nn = static_cast<double>(n);
  double sy = 0, sty = 0;
  for (int i = 0; i < n; ++i) {
    sy += values[i];
    sty += age_[static_cast<std::size_t>(i)] * values[i];
  }

  LmeFit fit;
  fit.n_obs = n;
  fit.n_subjects = n_subjects();
  double i00 = 0, i11 = 0;  // diagonal of (X^T X)^{-1}
  if (n_distinct_ages_ >= 2 && n >= 2) {
    const double det = nn * sum_tt_ - sum_t_ * sum_t_;
    fit.beta0 = (sum_tt_ * sy - sum_t_ * sty) / det;
    fit.beta1 = (nn * sty - sum_t_ * sy) / det;
    i00 = sum_tt_ / det;
    i11 = nn / det;
  } else {
    fit.beta0 = sy / nn;
    fit.beta1 = 0.0;
    i00 = 1.0 / nn;
  }
  double quad = 0;
  for (int i = 0; i < n; ++i) {
    const double r = values[i] - fit.beta0 - fit.beta1 * age_[static_cast<std::size_t>(i)];
    quad += r * r;
  }
  fit.sigma2 = quad / nn;
  fit.delta2 = 0.0;
  fit.se_beta0 = std::sqrt(fit.sigma2 * i00);
  fit.se_beta1 = std::sqrt(fit.sigma2 * i11);
  for (int id : subject_ids_) fit.alpha[id] = 0.0;
  fit.loglik = -0.5 * (nn * std::log(2.0 * M_PI * std::max(fit.sigma2, kTinyVar)) + nn);
  return fit;
}

LmeFit LmeDesign::fit(const Eigen::VectorXd& values) const {
  const int n = n_obs();
  if (values.size() != n) {
    throw ValidationError("lme: value count does not match the design");
  }
  if (degenerate()) {
    throw DegenerateDesignError(reason_, ols_fit(values));
  }

  const int ns = n_subjects();
  const double nn = static_cast<double>(n);
  std::vector<double> sub_sy(static_cast<std::size_t>(ns), 0.0);
  double sy = 0, sty = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    sub_sy[static_cast<std::size_t>(group_[static_cast<std::size_t>(i)])] += values[i];
    sy += values[i];
    sty += age_[static_cast<std::size_t>(i)] * values[i];
    syy += values[i] * values[i];
  }

  // profile objective: N log sigma2(rho) + sum_s log(1 + rho n_s); the
  // per-subject block inverse is I - (rho/(1+rho n_s)) J
  struct Eval {
    double beta0, beta1, sigma2, logdet;
    double i00, i11;  // diagonal of (X^T W^{-1} X)^{-1}
  };
  const auto evaluate = [&](double rho) {
    double a00 = nn, a01 = sum_t_, a11 = sum_tt_;
    double b0 = sy, b1 = sty, q = syy;
    double logdet = 0;
    for (int s = 0; s < ns; ++s) {
      const auto su = static_cast<std::size_t>(s);
      const double k = rho / (1.0 + rho * sub_n_[su]);
      a00 -= k * sub_n_[su] * sub_n_[su];
      a01 -= k * sub_n_[su] * sub_st_[su];
      a11 -= k * sub_st_[su] * sub_st_[su];
      b0 -= k * sub_n_[su] * sub_sy[su];
      b1 -= k * sub_st_[su] * sub_sy[su];
      q -= k * sub_sy[su] * sub_sy[su];
      logdet += std::log1p(rho * sub_n_[su]);
    }
    const double det = a00 * a11 - a01 * a01;
    Eval ev;
    ev.beta0 = (a11 * b0 - a01 * b1) / det;
    ev.beta1 = (a00 * b1 - a01 * b0) / det;
    const double quad = q - ev.beta0 * b0 - ev.beta1 * b1;
    ev.sigma2 = std::max(quad, 0.0) / nn;
    ev.logdet = logdet;
    ev.i00 = a11 / det;
    ev.i11 = a00 / det;
    return ev;
  };
  // quad is computed by cancellation against syy, so residual variance below
  // this floor is indistinguishable from an exact fit; flooring the log keeps
  // the profile flat there instead of rewarding whichever rho underflows first
  const double var_floor = std::max(kTinyVar, 1e-14 * (syy / nn));
  const auto objective = [&](double rho) {
    const Eval ev = evaluate(rho);
    return nn * std::log(std::max(ev.sigma2, var_floor)) + ev.logdet;
  };

  double rho = brent_minimize(objective, 0.0, kRhoMax, kRhoTol);
  const double g0 = objective(0.0);
  if (g0 <= objective(rho) + 1e-12 * (1.0 + std::abs(g0))) {
    rho = 0.0;
  }

  const Eval ev = evaluate(rho);
  LmeFit fit;
  fit.n_obs = n;
  fit.n_subjects = ns;
  fit.beta0 = ev.beta0;
  fit.beta1 = ev.beta1;
  fit.sigma2 = ev.sigma2;
  fit.delta2 = rho * ev.sigma2;
  fit.se_beta0 = std::sqrt(ev.sigma2 * ev.i00);
  fit.se_beta1 = std::sqrt(ev.sigma2 * ev.i11);
  for (int s = 0; s < ns; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const double mean_resid =
        sub_sy[su] - fit.beta0 * sub_n_[su] - fit.beta1 * sub_st_[su];
    fit.alpha[subject_ids_[su]] = rho * mean_resid / (1.0 + rho * sub_n_[su]);
  }
  fit.loglik = -0.5 * (nn * std::log(2.0 * M_PI * std::max(ev.sigma2, kTinyVar)) +
                       ev.logdet + nn);
  return fit;
}

LmeFit fit_lme(const std::vector<LongitudinalSample>& samples) {
  std::vector<std::pair<int, double>> subject_age;
  subject_age.reserve(samples.size());
  Eigen::VectorXd values(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    subject_age.emplace_back(samples[i].subject, samples[i].age);
    values[static_cast<Eigen::Index>(i)] = samples[i].value;
  }
  return LmeDesign(subject_age).fit(values);
}

double predict(const LmeFit& fit, double t) { return fit.beta0 + fit.beta1 * t; }

double predict(const LmeFit& fit, double t, int subject) {
  const auto it = fit.alpha.find(subject);
  if (it == fit.alpha.end()) {
    throw ValidationError("predict: unknown subject " + std::to_string(subject));
  }
  return fit.beta0 + fit.beta1 * t + it->second;
}

double r2_frobenius(const std::vector<Eigen::VectorXd>& observed,
                    const std::vector<Eigen::VectorXd>& fitted) {
  if (observed.empty()) {
    throw ValidationError("r2_frobenius: no sessions");
  }
  if (observed.size() != fitted.size()) {
    throw ValidationError("r2_frobenius: observed and fitted session counts differ");
  }
  const Eigen::Index dim = observed.front().size();
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (observed[i].size() != dim || fitted[i].size() != dim) {
      throw ValidationError("r2_frobenius: inconsistent coefficient counts");
    }
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& c : observed) mean += c;
  mean /= static_cast<double>(observed.size());

  double num = 0, den = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    num += (observed[i] - fitted[i]).squaredNorm();
    den += (observed[i] - mean).squaredNorm();
  }
  if (den <= 0.0) return 0.0;
  return 1.0 - num / den;
}

}  // namespace odfatlas::lme
