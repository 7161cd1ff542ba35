#include "icjm/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace icjm {

using nlohmann::json;

namespace {

constexpr double kZ95 = 1.959963984540054;

struct RepFit {
  bool ok = false;
  Vec est, se;
  double sigma_eps_sd = 0.0;
  Vec kappa_sd_est;
  Vec theta;
  Mat cov_theta;
  BasisSet baseline = BasisSet::polynomial(0, 0.0, 1.0);
  double q95 = 0.0;
};

struct TrackedParams {
  std::vector<std::string> names;
  Vec truth;
};

TrackedParams tracked_params(const ModelSpec& spec, const TruthBundle& truth) {
  TrackedParams tp;
  std::vector<double> tv;
  for (int j = 0; j < spec.p; ++j) {
    tp.names.push_back("beta" + std::to_string(j + 1));
    tv.push_back(truth.beta[j]);
  }
  for (int j = 0; j < spec.q; ++j) {
    tp.names.push_back("gamma" + std::to_string(j + 1));
    tv.push_back(truth.gamma[j]);
  }
  if (!truth.alpha.empty()) {
    for (int r = 0; r < spec.q; ++r)
      for (int j = 0; j < spec.b_r(r); ++j) {
        tp.names.push_back(spec.q == 1 ? "alpha" + std::to_string(j)
                                       : "alpha_r" + std::to_string(r + 1) + "_" +
                                             std::to_string(j));
        tv.push_back(truth.alpha[r][j]);
      }
  }
  tp.truth = Eigen::Map<Vec>(tv.data(), static_cast<int>(tv.size()));
  return tp;
}

RepFit fit_one(const Dataset& ds, const TruthBundle& truth, const ModelSpecConfig& cfg,
               const OuterLoopConfig& ocfg, std::uint64_t seed) {
  RepFit out;
  const ModelSpec spec = build_model_spec(cfg, ds);
  FitWorkspace ws(ds, spec);
  FitPrecursor pre = run_outer(ws, ocfg);
  if (!pre.converged) return out;
  FitResult fit = make_fit_result(ws, pre, seed, 0);

  const TrackedParams tp = tracked_params(spec, truth);
  const int n_track = static_cast<int>(tp.names.size());
  out.est.resize(n_track);
  out.se.resize(n_track);
  const Vec zeta = fit.zeta();
  int at = 0;
  auto pull = [&](int zeta_index) {
    out.est[at] = zeta[zeta_index];
    out.se[at] = std::sqrt(std::max(fit.covariance(zeta_index, zeta_index), 0.0));
    ++at;
  };
  for (int j = 0; j < spec.p; ++j) pull(j);
  for (int j = 0; j < spec.q; ++j) pull(spec.off_gamma() + j);
  if (!truth.alpha.empty())
    for (int r = 0; r < spec.q; ++r)
      for (int j = 0; j < spec.b_r(r); ++j) pull(spec.off_alpha(r) + j);

  out.sigma_eps_sd = std::sqrt(fit.var.sigma_eps2);
  std::vector<double> ks;
  for (int r = 0; r < spec.q; ++r)
    for (int l = 0; l < spec.c_r(r); ++l) ks.push_back(std::sqrt(fit.var.sigma_kappa2[r][l]));
  out.kappa_sd_est = Eigen::Map<Vec>(ks.data(), static_cast<int>(ks.size()));

  out.theta = fit.state.theta;
  out.cov_theta = fit.covariance.block(spec.off_theta(), spec.off_theta(), spec.m(), spec.m());
  out.baseline = spec.baseline;

  std::vector<double> ev(truth.event_times);
  std::sort(ev.begin(), ev.end());
  out.q95 = ev.empty() ? 1.0 : ev[static_cast<size_t>(0.95 * (ev.size() - 1))];
  out.ok = true;
  return out;
}

ParamSummary summarize(const std::string& name, double truth, const std::vector<double>& est,
                       const std::vector<double>& se) {
  ParamSummary s;
  s.name = name;
  s.truth = truth;
  const int n = static_cast<int>(est.size());
  double mean = 0.0;
  for (double e : est) mean += e;
  mean /= std::max(n, 1);
  s.bias = mean - truth;
  double ss = 0.0;
  for (double e : est) ss += (e - mean) * (e - mean);
  s.mc_se = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  double mse = 0.0;
  for (double v : se) mse += v;
  s.mean_asym_se = se.empty() ? 0.0 : mse / se.size();
  int cov_a = 0, cov_m = 0;
  for (int k = 0; k < n; ++k) {
    if (!se.empty() && std::abs(est[k] - truth) <= kZ95 * se[k]) ++cov_a;
    if (std::abs(est[k] - truth) <= kZ95 * s.mc_se) ++cov_m;
  }
  s.cp_asym = n > 0 ? static_cast<double>(cov_a) / n : 0.0;
  s.cp_mc = n > 0 ? static_cast<double>(cov_m) / n : 0.0;
  return s;
}

}  // namespace

double integrated_sq_error(const std::vector<double>& grid, const std::vector<double>& h_est,
                           const std::vector<double>& h_true) {
  double acc = 0.0;
  for (size_t j = 0; j + 1 < grid.size(); ++j) {
    const double d0 = h_est[j] - h_true[j];
    const double d1 = h_est[j + 1] - h_true[j + 1];
    acc += 0.5 * (d0 * d0 + d1 * d1) * (grid[j + 1] - grid[j]);
  }
  return acc;
}

BenchReport run_bench(const SimScenario& scn_in, int reps, const OuterLoopConfig& cfg,
                      const std::vector<std::string>& methods, int threads) {
  if (reps < 2) throw std::invalid_argument("run_bench: reps >= 2 required");
  BenchReport report;
  report.scenario = resolve_calibration(scn_in);
  report.reps = reps;
  for (int r = 0; r < reps; ++r)
    report.seeds.push_back(report.scenario.seed + 1000003ULL * static_cast<std::uint64_t>(r));

  const ModelSpecConfig spec_cfg = default_spec_config(report.scenario.design);
  const int n_methods = static_cast<int>(methods.size());
  std::vector<std::vector<RepFit>> fits(n_methods, std::vector<RepFit>(reps));

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= reps) return;
      SimScenario s = report.scenario;
      s.seed = report.seeds[r];
      auto [ds, truth] = generate(s);
      for (int mi = 0; mi < n_methods; ++mi) {
        try {
          if (methods[mi] == "midpoint") {
            const Dataset imp = midpoint_impute(ds);
            fits[mi][r] = fit_one(imp, truth, spec_cfg, cfg, s.seed);
          } else {
            fits[mi][r] = fit_one(ds, truth, spec_cfg, cfg, s.seed);
          }
        } catch (const std::exception&) {
          fits[mi][r].ok = false;
        }
      }
    }
  };
  const int nt = std::max(1, threads);
  std::vector<std::thread> pool;
  for (int t = 0; t < nt - 1; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // deterministic ordered aggregation
  SimScenario probe = report.scenario;
  auto [ds0, truth0] = generate(probe);
  const ModelSpec spec0 = build_model_spec(spec_cfg, ds0);
  const TrackedParams tp = tracked_params(spec0, truth0);

  for (int mi = 0; mi < n_methods; ++mi) {
    MethodReport mr;
    mr.method = methods[mi];
    std::vector<const RepFit*> ok;
    for (int r = 0; r < reps; ++r) {
      if (fits[mi][r].ok) {
        ok.push_back(&fits[mi][r]);
        ++mr.n_ok;
      } else {
        ++mr.n_fail;
      }
    }
    if (mr.n_fail > reps / 5) report.unreliable = true;

    for (int j = 0; j < tp.truth.size(); ++j) {
      std::vector<double> est, se;
      for (const RepFit* f : ok) {
        est.push_back(f->est[j]);
        se.push_back(f->se[j]);
      }
      mr.params.push_back(summarize(tp.names[j], tp.truth[j], est, se));
    }

    // variance components on the sd scale
    {
      std::vector<double> est;
      for (const RepFit* f : ok) est.push_back(f->sigma_eps_sd);
      ParamSummary s = summarize("sigma_eps", truth0.sigma_eps, est, {});
      s.cp_asym = s.cp_mc = std::numeric_limits<double>::quiet_NaN();
      mr.varcomps.push_back(s);
      const int nk = ok.empty() ? 0 : static_cast<int>(ok.front()->kappa_sd_est.size());
      for (int l = 0; l < nk; ++l) {
        std::vector<double> ke;
        for (const RepFit* f : ok) ke.push_back(f->kappa_sd_est[l]);
        ParamSummary sk =
            summarize("sigma_kappa" + std::to_string(l + 1), truth0.kappa_sd[0][l], ke, {});
        sk.cp_asym = sk.cp_mc = std::numeric_limits<double>::quiet_NaN();
        mr.varcomps.push_back(sk);
      }
    }

    // MISE on each replication's own grid, capped at the fitted support
    // (the spline carries no information beyond its boundary knot)
    double mise = 0.0;
    double q95_mean = 0.0;
    for (const RepFit* f : ok) q95_mean += std::min(f->q95, f->baseline.upper());
    q95_mean /= std::max<size_t>(ok.size(), 1);
    for (const RepFit* f : ok) {
      const double hi = std::min(f->q95, f->baseline.upper());
      std::vector<double> grid(200), he(200), ht(200);
      for (int j = 0; j < 200; ++j) {
        grid[j] = hi * j / 199.0;
        he[j] = f->baseline.eval(grid[j]).dot(f->theta);
        ht[j] = true_h0(report.scenario.design, grid[j]);
      }
      mise += integrated_sq_error(grid, he, ht);
    }
    mr.mise_h0 = ok.empty() ? 0.0 : mise / ok.size();

    // common-grid mean curve and mean asymptotic band
    mr.grid.resize(200);
    mr.h0_true.resize(200);
    mr.h0_mean.assign(200, 0.0);
    std::vector<double> mean_se(200, 0.0);
    for (int j = 0; j < 200; ++j) {
      mr.grid[j] = q95_mean * j / 199.0;
      mr.h0_true[j] = true_h0(report.scenario.design, mr.grid[j]);
    }
    for (const RepFit* f : ok) {
      for (int j = 0; j < 200; ++j) {
        const Vec psi = f->baseline.eval(mr.grid[j]);
        mr.h0_mean[j] += psi.dot(f->theta);
        mean_se[j] += std::sqrt(std::max(psi.dot(f->cov_theta * psi), 0.0));
      }
    }
    int inside = 0;
    for (int j = 0; j < 200; ++j) {
      if (!ok.empty()) {
        mr.h0_mean[j] /= ok.size();
        mean_se[j] /= ok.size();
      }
      mr.band_lo.push_back(std::max(mr.h0_mean[j] - kZ95 * mean_se[j], 0.0));
      mr.band_hi.push_back(mr.h0_mean[j] + kZ95 * mean_se[j]);
      if (mr.h0_true[j] >= mr.band_lo.back() && mr.h0_true[j] <= mr.band_hi.back()) ++inside;
    }
    mr.band_cover_frac = inside / 200.0;
    report.methods.push_back(std::move(mr));
  }
  return report;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

std::string bench_report_csv(const BenchReport& report) {
  std::string out = "method,parameter,truth,bias,mc_se,mean_asym_se,cp_asym,cp_mc\n";
  for (const auto& mr : report.methods) {
    auto row = [&](const ParamSummary& s) {
      out += mr.method + "," + s.name + "," + fmt(s.truth) + "," + fmt(s.bias) + "," +
             fmt(s.mc_se) + "," + fmt(s.mean_asym_se) + "," + fmt(s.cp_asym) + "," +
             fmt(s.cp_mc) + "\n";
    };
    for (const auto& s : mr.params) row(s);
    for (const auto& s : mr.varcomps) row(s);
    out += mr.method + ",mise_h0," + fmt(0.0) + "," + fmt(mr.mise_h0) + ",nan,nan,nan,nan\n";
  }
  return out;
}

std::string bench_report_json(const BenchReport& report) {
  json j;
  j["schema_version"] = 1;
  j["scenario"] = json::parse(scenario_to_json(report.scenario));
  j["reps"] = report.reps;
  j["seeds"] = report.seeds;
  j["unreliable"] = report.unreliable;
  j["methods"] = json::array();
  for (const auto& mr : report.methods) {
    json m;
    m["method"] = mr.method;
    m["n_ok"] = mr.n_ok;
    m["n_fail"] = mr.n_fail;
    m["mise_h0"] = mr.mise_h0;
    m["band_cover_frac"] = mr.band_cover_frac;
    m["params"] = json::array();
    auto push = [&](const ParamSummary& s, json& arr) {
      arr.push_back({{"name", s.name},
                     {"truth", s.truth},
                     {"bias", s.bias},
                     {"mc_se", s.mc_se},
                     {"mean_asym_se", s.mean_asym_se},
                     {"cp_asym", std::isnan(s.cp_asym) ? json() : json(s.cp_asym)},
                     {"cp_mc", std::isnan(s.cp_mc) ? json() : json(s.cp_mc)}});
    };
    for (const auto& s : mr.params) push(s, m["params"]);
    m["varcomps"] = json::array();
    for (const auto& s : mr.varcomps) push(s, m["varcomps"]);
    j["methods"].push_back(m);
  }
  return j.dump(1);
}

std::string bench_band_csv(const BenchReport& report) {
  std::string out = "method,t,h0_true,h0_mean,band_lo,band_hi\n";
  for (const auto& mr : report.methods)
    for (size_t k = 0; k < mr.grid.size(); ++k)
      out += mr.method + "," + fmt(mr.grid[k]) + "," + fmt(mr.h0_true[k]) + "," +
             fmt(mr.h0_mean[k]) + "," + fmt(mr.band_lo[k]) + "," + fmt(mr.band_hi[k]) + "\n";
  return out;
}

void emit(const BenchReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir + "/report.csv") << bench_report_csv(report);
  std::ofstream(dir + "/report.json") << bench_report_json(report);
  std::ofstream(dir + "/h0_band.csv") << bench_band_csv(report);
}

}  // namespace icjm
