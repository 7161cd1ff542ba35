#include "icjm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "icjm/rng.hpp"

namespace icjm {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kPilotStream = 0x70696c6f74ULL;  // calibration streams
constexpr int kPilotSize = 20000;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double lognormal_hazard(double t, double mu, double sigma) {
  if (t <= 0.0) return 0.0;
  const double z = (std::log(t) - mu) / sigma;
  const double f = std::exp(-0.5 * z * z) / (t * sigma * std::sqrt(2.0 * M_PI));
  const double surv = 1.0 - normal_cdf(z);
  return surv > 1e-300 ? f / surv : kInf;
}

struct DesignTruth {
  Vec beta, gamma;
  std::vector<Vec> kappa_sd;
  double horizon;  // event cap used by the inverse-transform bracket
};

// noise-free trajectory for one subject given design, covariates and effects
double truth_traj(StudyDesign d, double t, const Vec& w, const Vec& kap) {
  switch (d) {
    case StudyDesign::Study1:
      return 0.5 - 0.5 * t + t * t - 0.5 * t * t * t + kap[0] + kap[1] * t;
    case StudyDesign::Study2a:
      return 0.5 + 0.5 * w[0] + 0.5 * t + 0.5 * w[0] * t - 0.8 * t * t +
             0.2 * t * t * t + kap[0] + kap[1] * t;
    case StudyDesign::Study2b:
      return -0.1 - 0.1 * t - 0.3 * w[0] + kap[0] + kap[1] * t;
    case StudyDesign::Study2c:
      return 1.0 - 0.75 * std::exp(4.0 * t) / (1.0 + std::exp(4.0 * t)) + kap[0] +
             kap[1] * t;
  }
  return 0.0;
}

DesignTruth design_truth(const SimScenario& scn) {
  DesignTruth t;
  switch (scn.design) {
    case StudyDesign::Study1:
      t.beta = Vec::Constant(1, -0.5);
      t.gamma = Vec::Constant(1, 0.5);
      t.kappa_sd = {(Vec(2) << 0.5, 0.8).finished()};
      t.horizon = 4.0;
      break;
    case StudyDesign::Study2a:
      t.beta = (Vec(2) << -0.5, 0.5).finished();
      t.gamma = Vec::Constant(1, 0.25);
      t.kappa_sd = {(Vec(2) << 0.2, 0.3).finished()};
      t.horizon = 8.0;
      break;
    case StudyDesign::Study2b:
      t.beta = Vec::Constant(1, -1.0);
      t.gamma = Vec::Constant(1, -0.3);
      t.kappa_sd = {(Vec(2) << 0.2, 0.4).finished()};
      t.horizon = 6.0;
      break;
    case StudyDesign::Study2c:
      t.beta = (Vec(2) << 0.2, -0.5).finished();
      t.gamma = Vec::Constant(1, 1.0);
      t.kappa_sd = {(Vec(2) << 0.1, 0.05).finished()};
      t.horizon = 10.0;
      break;
  }
  if (scn.zero_covariate_effects) {
    t.beta.setZero();
    t.gamma.setZero();
  }
  return t;
}

// covariate draw order is fixed: x first, then w, then kappa
struct SubjectDraw {
  Vec x, w, kap;
};

SubjectDraw draw_covariates(const SimScenario& scn, const DesignTruth& tr, Rng& rng) {
  SubjectDraw d;
  switch (scn.design) {
    case StudyDesign::Study1:
      d.x = Vec::Constant(1, rng.bernoulli(0.5) ? 1.0 : 0.0);
      d.w = Vec();
      break;
    case StudyDesign::Study2a:
      d.x = (Vec(2) << rng.uniform(-1.0, 1.0), rng.bernoulli(0.5) ? 1.0 : 0.0).finished();
      d.w = Vec::Constant(1, rng.normal());
      break;
    case StudyDesign::Study2b:
      d.w = Vec::Constant(1, rng.bernoulli(0.5) ? 1.0 : 0.0);
      d.x = Vec::Constant(1, rng.normal());
      break;
    case StudyDesign::Study2c:
      d.x = (Vec(2) << rng.normal(), rng.bernoulli(0.5) ? 1.0 : 0.0).finished();
      d.w = Vec();
      break;
  }
  d.kap = Vec(2);
  d.kap[0] = rng.normal(0.0, tr.kappa_sd[0][0]);
  d.kap[1] = rng.normal(0.0, tr.kappa_sd[0][1]);
  return d;
}

// subject-specific cumulative hazard H_i(t) evaluated by composite quadrature
// with cached prefix integrals at a fixed step
class SubjectHazard {
 public:
  SubjectHazard(const SimScenario& scn, const DesignTruth& tr, const SubjectDraw& d)
      : design_(scn.design), gamma_(tr.gamma[0]),
        exb_(std::exp(tr.beta.dot(d.x))), w_(d.w), kap_(d.kap) {}

  double integrand(double s) const {
    return true_h0(design_, s) * std::exp(gamma_ * truth_traj(design_, s, w_, kap_));
  }

  double cum(double t) const {
    if (t <= 0.0) return 0.0;
    ensure(t);
    const int k = static_cast<int>(t / kStep);
    double acc = prefix_[k];
    acc += gl10(k * kStep, t);
    return exb_ * acc;
  }

  // inverse transform: smallest t with H(t) = target, bracketed bisection
  double invert(double target, double cap) const {
    if (cum(cap) < target) return cap * 4.0;  // beyond the horizon
    double lo = 0.0, hi = cap;
    while (hi - lo > 1e-10) {
      const double mid = 0.5 * (lo + hi);
      (cum(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

 private:
  static constexpr double kStep = 0.25;

  double gl10(double a, double b) const {
    if (b <= a) return 0.0;
    static const auto base = quadrature(0.0, 1.0, 10);
    double acc = 0.0;
    for (size_t j = 0; j < base.nodes.size(); ++j)
      acc += base.weights[j] * (b - a) * integrand(a + (b - a) * base.nodes[j]);
    return acc;
  }

  void ensure(double t) const {
    const int need = static_cast<int>(t / kStep) + 1;
    while (static_cast<int>(prefix_.size()) < need + 1) {
      const int k = static_cast<int>(prefix_.size()) - 1;
      prefix_.push_back(prefix_[k] + gl10(k * kStep, (k + 1) * kStep));
    }
  }

  StudyDesign design_;
  double gamma_, exb_;
  Vec w_, kap_;
  mutable std::vector<double> prefix_{0.0};
};

struct PilotDraw {
  double y;        // uncensored event time (capped at 4*horizon when beyond)
  double u_l, u_r; // study 2a/2c interval uniforms
  double t_check;  // study 1: uniform for the censoring draw
};

std::vector<PilotDraw> pilot_sample(const SimScenario& scn, const DesignTruth& tr) {
  std::vector<PilotDraw> out(kPilotSize);
  for (int k = 0; k < kPilotSize; ++k) {
    Rng rng = Rng::stream(scn.seed ^ kPilotStream, k + 1);
    const SubjectDraw d = draw_covariates(scn, tr, rng);
    const double u = rng.uniform();
    SubjectHazard sh(scn, tr, d);
    out[k].y = sh.invert(-std::log(1.0 - u), tr.horizon);
    out[k].t_check = rng.uniform();
    out[k].u_l = rng.uniform();
    out[k].u_r = out[k].u_l + (1.0 - out[k].u_l) * rng.uniform();
  }
  return out;
}

double bisect(double lo, double hi, const std::function<double(double)>& f, int iters = 60) {
  // f increasing through zero
  for (int it = 0; it < iters; ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// visit times: t = 0 plus Poisson-many uniform gap sums, truncated
std::vector<double> draw_visits(double mean_ni, double gap_max, double t_trunc, Rng& rng) {
  int n_draw = rng.poisson(mean_ni);
  if (n_draw == 0) n_draw = std::max(rng.poisson(mean_ni), 1);
  std::vector<double> times{0.0};
  double s = 0.0;
  for (int k = 0; k < n_draw; ++k) {
    s += rng.uniform(0.0, gap_max);
    if (s > t_trunc) break;
    times.push_back(s);
  }
  return times;
}

double mean_visit_count(const SimScenario& scn, const std::vector<double>& t_truncs,
                        double gap_max) {
  double total = 0.0;
  for (size_t k = 0; k < t_truncs.size(); ++k) {
    Rng rng = Rng::stream(scn.seed ^ (kPilotStream + 1), k + 1);
    total += static_cast<double>(
        draw_visits(scn.mean_ni, gap_max, t_truncs[k], rng).size());
  }
  return total / static_cast<double>(t_truncs.size());
}

}  // namespace

std::string to_string(StudyDesign d) {
  switch (d) {
    case StudyDesign::Study1: return "study1";
    case StudyDesign::Study2a: return "study2a";
    case StudyDesign::Study2b: return "study2b";
    case StudyDesign::Study2c: return "study2c";
  }
  return "?";
}

StudyDesign study_design_from_string(const std::string& s) {
  if (s == "study1") return StudyDesign::Study1;
  if (s == "study2a") return StudyDesign::Study2a;
  if (s == "study2b") return StudyDesign::Study2b;
  if (s == "study2c") return StudyDesign::Study2c;
  throw std::invalid_argument("unknown study design: " + s);
}

double true_h0(StudyDesign d, double t) {
  switch (d) {
    case StudyDesign::Study1: return 3.0 * t * t;
    case StudyDesign::Study2a: {
      const double t2 = t * t;
      return 4.0 * t * t2 / (1.0 + t2 * t2);
    }
    case StudyDesign::Study2b: return 0.5 * std::exp(2.0 * t);
    case StudyDesign::Study2c: return lognormal_hazard(t, 0.3, 0.5);
  }
  return 0.0;
}

SimScenario resolve_calibration(const SimScenario& scn_in) {
  SimScenario scn = scn_in;
  const DesignTruth tr = design_truth(scn);

  if (scn.design == StudyDesign::Study1 && scn.tau2 < 0.0) {
    const auto pilot = pilot_sample(scn, tr);
    // c ~ Unif[tau1, tau2] with tau1 = tau2/4; the event proportion is
    // averaged analytically over c given y
    const auto event_prop = [&](double tau2) {
      const double tau1 = 0.25 * tau2;
      double acc = 0.0;
      for (const auto& p : pilot)
        acc += 1.0 - std::clamp((p.y - tau1) / (tau2 - tau1), 0.0, 1.0);
      return acc / pilot.size();
    };
    scn.tau2 = bisect(1e-3, 60.0,
                      [&](double t2) { return event_prop(t2) - scn.event_prop; });
    scn.tau1 = 0.25 * scn.tau2;
  }

  if ((scn.design == StudyDesign::Study2a || scn.design == StudyDesign::Study2c) &&
      (scn.tau_l < 0.0 || scn.tau_r < 0.0)) {
    const auto pilot = pilot_sample(scn, tr);
    const double cens = 1.0 - scn.pi_e;
    if (cens <= 0.0) throw std::invalid_argument("calibration: pi_e must be < 1");
    scn.tau_l = bisect(1e-4, 40.0, [&](double tl) {
      double acc = 0.0;
      for (const auto& p : pilot) acc += (p.y < tl * p.u_l) ? 1.0 : 0.0;
      return acc / pilot.size() - scn.pi_l / cens;
    });
    scn.tau_r = bisect(scn.tau_l, 80.0, [&](double trr) {
      double acc = 0.0;
      for (const auto& p : pilot) acc += (p.y > trr * p.u_r) ? 1.0 : 0.0;
      return (scn.pi_r / cens) - acc / pilot.size();
    });
  }

  if (scn.design != StudyDesign::Study2b && scn.visit_gap_max < 0.0) {
    // truncation times implied by the calibrated censoring scheme
    const auto pilot = pilot_sample(scn, tr);
    std::vector<double> truncs;
    truncs.reserve(pilot.size());
    for (const auto& p : pilot) {
      double t;
      if (scn.design == StudyDesign::Study1) {
        const double c = scn.tau1 + (scn.tau2 - scn.tau1) * p.t_check;
        t = std::min(p.y, c);
      } else {
        if (p.t_check < scn.pi_e) t = p.y;                      // exact
        else if (p.y < scn.tau_l * p.u_l) t = scn.tau_l * p.u_l;  // left
        else if (p.y > scn.tau_r * p.u_r) t = scn.tau_r * p.u_r;  // right
        else t = scn.tau_r * p.u_r;                             // interval upper end
      }
      truncs.push_back(t);
    }
    scn.visit_gap_max = bisect(1e-4, 30.0, [&](double g) {
      return scn.mean_ni - mean_visit_count(scn, truncs, g);
    }, 40);
  }
  return scn;
}

std::pair<Dataset, TruthBundle> generate(const SimScenario& scn_in) {
  const SimScenario scn = resolve_calibration(scn_in);
  const DesignTruth tr = design_truth(scn);

  Dataset ds;
  TruthBundle truth;
  truth.beta = tr.beta;
  truth.gamma = tr.gamma;
  truth.kappa_sd = tr.kappa_sd;
  truth.sigma_eps = scn.sigma_eps;
  truth.h0 = [d = scn.design](double t) { return true_h0(d, t); };
  truth.mean_traj = [d = scn.design](double t) {
    return truth_traj(d, t, Vec::Zero(1), Vec::Zero(2));
  };
  // truth in the fitted design's column order (see default_spec_config)
  switch (scn.design) {
    case StudyDesign::Study1:
      truth.alpha = {(Vec(4) << 0.5, -0.5, 1.0, -0.5).finished()};
      break;
    case StudyDesign::Study2a:
      truth.alpha = {(Vec(6) << 0.5, 0.5, -0.8, 0.2, 0.5, 0.5).finished()};
      break;
    case StudyDesign::Study2b:
      truth.alpha = {(Vec(3) << -0.1, -0.1, -0.3).finished()};
      break;
    case StudyDesign::Study2c:
      truth.alpha = {};  // spline fit of a sigmoid truth; scored by MISE
      break;
  }
  if (scn.zero_covariate_effects) {
    truth.beta.setZero();
    truth.gamma.setZero();
  }

  ds.q = 1;
  ds.p = static_cast<int>(tr.beta.size());
  ds.pz = (scn.design == StudyDesign::Study2a || scn.design == StudyDesign::Study2b) ? 1 : 0;

  for (int i = 0; i < scn.n; ++i) {
    Rng rng = Rng::stream(scn.seed, i + 1);
    const SubjectDraw d = draw_covariates(scn, tr, rng);
    const double u = rng.uniform();
    SubjectHazard sh(scn, tr, d);
    const double y = sh.invert(-std::log(1.0 - u), tr.horizon);
    truth.event_times.push_back(y);

    Subject sub;
    sub.id = std::to_string(i + 1);
    sub.x = d.x;
    sub.long_fixed = d.w;

    switch (scn.design) {
      case StudyDesign::Study1: {
        const double c = rng.uniform(scn.tau1, scn.tau2);
        if (y <= c) {
          sub.t_left = sub.t_right = y;
        } else {
          sub.t_left = c;
          sub.t_right = kInf;
        }
        break;
      }
      case StudyDesign::Study2a:
      case StudyDesign::Study2c: {
        const double u_e = rng.uniform();
        const double u_l = rng.uniform();
        const double u_r = u_l + (1.0 - u_l) * rng.uniform();
        if (u_e < scn.pi_e) {
          sub.t_left = sub.t_right = y;
        } else if (y < scn.tau_l * u_l) {
          sub.t_left = 0.0;
          sub.t_right = scn.tau_l * u_l;
        } else if (y > scn.tau_r * u_r) {
          sub.t_left = scn.tau_r * u_r;
          sub.t_right = kInf;
        } else {
          sub.t_left = scn.tau_l * u_l;
          sub.t_right = scn.tau_r * u_r;
        }
        break;
      }
      case StudyDesign::Study2b: {
        const double c = rng.uniform(scn.dropout_lo, scn.dropout_hi);
        std::vector<double> grid;
        for (double g = scn.grid_step; g <= c + 1e-12; g += scn.grid_step)
          grid.push_back(g);
        if (grid.empty()) grid.push_back(scn.grid_step);
        if (y < grid.front()) {
          sub.t_left = 0.0;
          sub.t_right = grid.front();
        } else if (y > grid.back()) {
          sub.t_left = grid.back();
          sub.t_right = kInf;
        } else {
          size_t k = 0;
          while (k + 1 < grid.size() && grid[k + 1] < y) ++k;
          sub.t_left = grid[k];
          sub.t_right = (k + 1 < grid.size()) ? grid[k + 1] : grid.back();
          if (sub.t_right <= sub.t_left) sub.t_right = sub.t_left + scn.grid_step;
        }
        break;
      }
    }
    sub.status = classify_interval(sub.t_left, sub.t_right);

    // longitudinal observations
    const double t_trunc = sub.obs_time();
    std::vector<double> visit_times;
    if (scn.design == StudyDesign::Study2b) {
      for (double g = scn.grid_step; g <= t_trunc + 1e-12; g += scn.grid_step)
        visit_times.push_back(g);
      if (visit_times.empty()) visit_times.push_back(std::min(scn.grid_step, t_trunc));
    } else {
      visit_times = draw_visits(scn.mean_ni, scn.visit_gap_max, t_trunc, rng);
    }
    for (double ta : visit_times) {
      LongRecord rec;
      rec.time = std::min(ta, t_trunc);
      rec.values = Vec::Constant(
          1, truth_traj(scn.design, rec.time, d.w, d.kap) + rng.normal(0.0, scn.sigma_eps));
      if (!sub.longitudinal.empty() && rec.time <= sub.longitudinal.back().time) continue;
      sub.longitudinal.push_back(std::move(rec));
    }
    ds.subjects.push_back(std::move(sub));
  }
  return {std::move(ds), std::move(truth)};
}

ModelSpecConfig default_spec_config(StudyDesign d) {
  ModelSpecConfig cfg;
  cfg.baseline_family = "mspline";
  cfg.baseline_order = 4;
  // the peaked interval-censored hazards need more basis flexibility than the
  // cube-root default; the roughness penalty keeps the extra knots in check
  cfg.baseline_m = 0;
  TrajConfig tc;
  tc.family = "polynomial";
  tc.random_family = "polynomial";
  tc.random_degree = 1;
  switch (d) {
    case StudyDesign::Study1:
      tc.degree = 3;
      break;
    case StudyDesign::Study2a:
      tc.degree = 3;
      tc.interactions = {{0, 2}};  // w x {1, t}
      cfg.baseline_m = 8;
      break;
    case StudyDesign::Study2b:
      tc.degree = 1;
      tc.interactions = {{0, 1}};  // w x {1}
      break;
    case StudyDesign::Study2c:
      tc.family = "bspline";
      tc.size = 5;
      tc.interior_knots = {0.5};
      cfg.baseline_m = 8;
      break;
  }
  cfg.longitudinal = {tc};
  return cfg;
}

std::string scenario_to_json(const SimScenario& scn) {
  json j;
  j["schema_version"] = 1;
  j["design"] = to_string(scn.design);
  j["n"] = scn.n;
  j["mean_ni"] = scn.mean_ni;
  j["sigma_eps"] = scn.sigma_eps;
  j["event_prop"] = scn.event_prop;
  j["pi_e"] = scn.pi_e;
  j["pi_r"] = scn.pi_r;
  j["pi_l"] = scn.pi_l;
  j["dropout_lo"] = scn.dropout_lo;
  j["dropout_hi"] = scn.dropout_hi;
  j["grid_step"] = scn.grid_step;
  j["seed"] = scn.seed;
  j["tau1"] = scn.tau1;
  j["tau2"] = scn.tau2;
  j["tau_l"] = scn.tau_l;
  j["tau_r"] = scn.tau_r;
  j["visit_gap_max"] = scn.visit_gap_max;
  j["zero_covariate_effects"] = scn.zero_covariate_effects;
  return j.dump(2);
}

SimScenario scenario_from_json(const std::string& text) {
  const json j = json::parse(text);
  SimScenario scn;
  scn.design = study_design_from_string(j.value("design", "study1"));
  scn.n = j.value("n", scn.n);
  scn.mean_ni = j.value("mean_ni", scn.mean_ni);
  scn.sigma_eps = j.value("sigma_eps", scn.sigma_eps);
  scn.event_prop = j.value("event_prop", scn.event_prop);
  scn.pi_e = j.value("pi_e", scn.pi_e);
  scn.pi_r = j.value("pi_r", scn.pi_r);
  scn.pi_l = j.value("pi_l", scn.pi_l);
  scn.dropout_lo = j.value("dropout_lo", scn.dropout_lo);
  scn.dropout_hi = j.value("dropout_hi", scn.dropout_hi);
  scn.grid_step = j.value("grid_step", scn.grid_step);
  scn.seed = j.value("seed", scn.seed);
  scn.tau1 = j.value("tau1", scn.tau1);
  scn.tau2 = j.value("tau2", scn.tau2);
  scn.tau_l = j.value("tau_l", scn.tau_l);
  scn.tau_r = j.value("tau_r", scn.tau_r);
  scn.visit_gap_max = j.value("visit_gap_max", scn.visit_gap_max);
  scn.zero_covariate_effects = j.value("zero_covariate_effects", false);
  return scn;
}

}  // namespace icjm
