// acceptance: one PASS/FAIL line per acceptance criterion.
//
//   acceptance              all criteria, including the desk-scale M1 and M4
//                           training runs (roughly 15-25 minutes on one core)
//   acceptance --fast       skips the two training criteria
//   acceptance --out DIR    also keeps the desk-scale runs under DIR/<study>/
//
// Exit code 0 when every executed criterion passes, 1 otherwise.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "elicit/diagnostics.hpp"
#include "elicit/errors.hpp"
#include "elicit/loss.hpp"
#include "elicit/run_io.hpp"
#include "elicit/study.hpp"

using namespace elicit;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void perturb(JointPriorFlow& flow, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (Tensor* p : flow.parameters())
    for (double& w : p->mutable_values()) w += scale * rng.normal();
}

Tensor random_points(std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::from({n, k}, rng.normals(n * k));
}

// Randomly perturbed weights so the couplings are far from the identity.
Outcome flow_invertibility() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (std::size_t k : {2u, 4u}) {
    FlowConfig c;
    c.dim_theta = k;
    JointPriorFlow flow(c, 100 + k);
    perturb(flow, 200 + k, 0.05);
    const Tensor theta = random_points(1000, k, 300 + k);
    const Tensor back = flow.generate(flow.forward_normalizing(theta).u);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      worst = std::max(worst, std::abs(back.values()[i] - theta.values()[i]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-8 && secs < 10.0,
          "max |inverse(forward(x)) - x| = " + fmt("%.2e", worst) + " (K=2,4; 1000 points), " +
              fmt("%.2f", secs) + " s"};
}

double numeric_log_det(const JointPriorFlow& flow, const std::vector<double>& pt, double h) {
  const std::size_t k = pt.size();
  Eigen::MatrixXd jac(k, k);
  for (std::size_t j = 0; j < k; ++j) {
    auto plus = pt, minus = pt;
    plus[j] += h;
    minus[j] -= h;
    const Tensor up = flow.forward_normalizing(Tensor::from({1, k}, plus)).u;
    const Tensor um = flow.forward_normalizing(Tensor::from({1, k}, minus)).u;
    for (std::size_t r = 0; r < k; ++r)
      jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = (up.values()[r] - um.values()[r]) / (2 * h);
  }
  return std::log(std::abs(jac.determinant()));
}

// Central differences with h = 1e-5. The coupling nets are piecewise linear;
// a stencil that straddles a ReLU kink measures a chord, not the Jacobian.
// Such points are detected by disagreement with h = 1e-6, reported and
// replaced by the next random point.
Outcome log_det_correctness() {
  FlowConfig c;
  c.dim_theta = 4;
  JointPriorFlow flow(c, 41);
  perturb(flow, 42, 0.05);
  const Tensor pts = random_points(500, 4, 43);
  std::size_t valid = 0, straddled = 0;
  double worst = 0;
  for (std::size_t n = 0; n < 500 && valid < 50; ++n) {
    std::vector<double> pt(4);
    for (std::size_t j = 0; j < 4; ++j) pt[j] = pts.at({n, j});
    const double numeric = numeric_log_det(flow, pt, 1e-5);
    const double fine = numeric_log_det(flow, pt, 1e-6);
    if (std::abs(numeric - fine) > 1e-6 * std::max(1.0, std::abs(fine))) {
      ++straddled;
      continue;
    }
    const double analytic = flow.forward_normalizing(Tensor::from({1, 4}, pt)).log_det.item();
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-12));
    ++valid;
  }
  return {valid == 50 && worst < 1e-4,
          "max relative error " + fmt("%.2e", worst) + " on " + std::to_string(valid) +
              " points at K=4 (" + std::to_string(straddled) + " kink-straddling stencils replaced)"};
}

// Reduced M2 pipeline, trained briefly so every layer carries gradient.
// Each loss evaluation re-seeds the training stream (common random numbers).
Outcome gradient_integrity() {
  StudyConfig cfg = StudyConfig::preset("M2").reduced();
  Rng orng(0, Stream::oracle);
  const auto problem = cfg.problem(simulate_expert(cfg.prior, cfg.model, cfg.plan, cfg.expert_samples, orng));
  auto flow = std::make_shared<JointPriorFlow>(problem.flow, 1);
  TrainConfig warm = cfg.train;
  warm.epochs = 20;
  warm.eval_samples = 100;
  warm.seed = 1;
  train(flow, problem, warm);

  auto loss = [&](bool with_grad) {
    Rng rng(77, Stream::training);
    const TotalLoss l = training_objective(*flow, problem, cfg.train.batch_size, cfg.train.samples_per_prior,
                                           cfg.train.temperature, rng);
    if (with_grad) l.total.backward();
    return l.report.total;
  };
  const auto params = flow->parameters();
  for (Tensor* p : params) p->zero_grad();
  loss(true);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  Rng pick(5);
  std::size_t total = 0;
  for (const Tensor* p : params) total += p->size();
  while (coords.size() < 20) {
    std::size_t flat = pick.index(total), which = 0;
    while (flat >= params[which]->size()) flat -= params[which++]->size();
    coords.emplace_back(which, flat);
  }
  const double h = 1e-6;
  double worst = 0;
  for (const auto& [which, i] : coords) {
    const double analytic = params[which]->has_grad() ? params[which]->grad()[i] : 0.0;
    double& w = params[which]->mutable_values()[i];
    const double w0 = w;
    w = w0 + h;
    const double up = loss(false);
    w = w0 - h;
    const double down = loss(false);
    w = w0;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    // gradients at the floating-point noise floor of the difference quotient
    const double err = scale < 1e-7 ? 0.0 : std::abs(analytic - numeric) / scale;
    worst = std::max(worst, err);
  }
  return {worst < 1e-3, "max relative error " + fmt("%.2e", worst) + " over 20 random coordinates (reduced M2)"};
}

Outcome mmd_suite() {
  Rng rng(9);
  const Tensor x = Tensor::from({50, 1}, rng.normals(50));
  const Tensor y = Tensor::from({40, 1}, rng.normals(40));
  const double self = mmd_energy_biased(x, x).item();
  const double xy = mmd_energy_biased(x, y).item(), yx = mmd_energy_biased(y, x).item();
  const double hand = mmd_energy_biased(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {2.0})).item();
  // brute force for the hand case: 2|0-2| - |0-0| - |2-2|
  const double brute = 2 * std::abs(0.0 - 2.0) - 0.0 - 0.0;
  bool increasing = true;
  double last = -1;
  const auto base = rng.normals(300);
  const auto other = rng.normals(300);
  for (double mu : {0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0}) {
    std::vector<double> shifted(other);
    for (double& v : shifted) v += mu;
    const double v = mmd_energy_biased(Tensor::from({300, 1}, base), Tensor::from({300, 1}, shifted)).item();
    increasing = increasing && v > last;
    last = v;
  }
  const bool pass = self == 0.0 && std::abs(xy - yx) < 1e-12 && hand == 4.0 && brute == 4.0 && increasing;
  return {pass, "self " + fmt("%.1e", self) + ", |xy - yx| " + fmt("%.1e", std::abs(xy - yx)) + ", hand case " +
                    fmt("%.6g", hand) + ", translation " + (increasing ? "strictly increasing" : "NOT monotone")};
}

Outcome averaging() {
  const std::vector<double> equal(30, 0.42);
  double uni = 0;
  for (double w : averaging_weights(equal).weights) uni = std::max(uni, std::abs(w - 1.0 / 30));
  const std::vector<double> pair{0.0, std::log(2.0)};
  const auto w = averaging_weights(pair, 1.0);
  const double two = std::max(std::abs(w.weights[0] - 2.0 / 3), std::abs(w.weights[1] - 1.0 / 3));
  const std::vector<double> spread{0.51, 0.5, 0.6, 1.2, 0.55};
  const auto sharp = averaging_weights(spread, 1000.0);
  const double top = *std::max_element(sharp.weights.begin(), sharp.weights.end());
  return {uni < 1e-12 && two < 1e-12 && top > 0.999,
          "uniform dev " + fmt("%.1e", uni) + ", (0, ln 2) dev " + fmt("%.1e", two) + ", gamma=1000 max weight " +
              fmt("%.6f", top)};
}

Outcome oracle_moments() {
  TruePrior gamma;
  gamma.components = {GammaMarginal{5.0, 2.0}};
  Rng rng(1, Stream::oracle);
  const Tensor g = sample_true_prior(gamma, 10000, rng);
  const double mean = std::accumulate(g.values().begin(), g.values().end(), 0.0) / 10000;

  const StudyConfig m4 = StudyConfig::preset("M4");
  const Tensor t = sample_true_prior(m4.prior, 10000, rng);
  const Tensor corr = compute_param_correlations(ad::reshape(t, {1, 10000, 4}), m4.model.parameter_names).values;
  // row-major pairs: (0,1), (0,2), (0,3), (1,2), (1,3), (2,3); sigma is independent
  const double want[] = {0.3, -0.3, 0.0, -0.2, 0.0, 0.0};
  double dev = 0;
  for (std::size_t i = 0; i < 6; ++i) dev = std::max(dev, std::abs(corr.values()[i] - want[i]));
  return {mean >= 2.4 && mean <= 2.6 && dev <= 0.03,
          "Gamma(5,2) mean " + fmt("%.4f", mean) + ", M4 max |corr - R| " + fmt("%.4f", dev)};
}

Outcome convergence_diagnostic() {
  const double tau = 50.0;
  Rng rng(2);
  std::vector<double> v;
  for (std::size_t e = 0; e < 1000; ++e) v.push_back(3.0 * std::exp(-static_cast<double>(e) / tau) + 0.01 * rng.normal());
  double worst = 0;
  for (std::size_t end = static_cast<std::size_t>(5 * tau) + 2; end <= v.size(); ++end) {
    worst = std::max(worst, std::abs(loss_slope(std::span<const double>(v.data(), end), 100)) * 100);
  }
  std::vector<double> lin;
  for (std::size_t e = 0; e < 500; ++e) lin.push_back(5.0 - 0.01 * static_cast<double>(e));
  const double slope = loss_slope(lin, 100);
  return {worst < 0.5 && std::abs(slope + 0.01) < 1e-12,
          "max |slope|*100 past 5 tau " + fmt("%.4f", worst) + ", linear slope " + fmt("%.12f", slope)};
}

struct SeedSummary {
  std::uint64_t seed;
  std::vector<double> mean, sd;
  std::vector<double> corr;  // row-major pairs
  double max_quantile_err = 0;
  double loss0 = 0, lossN = 0;
  bool trend_down = false;
};

std::vector<double> pair_correlations(const Tensor& theta, const std::vector<std::string>& names) {
  const std::size_t n = theta.shape()[0], k = theta.shape()[1];
  const Tensor c = compute_param_correlations(ad::reshape(theta, {1, n, k}), names).values;
  return {c.values().begin(), c.values().end()};
}

std::vector<SeedSummary> desk_runs(const std::string& id, const fs::path& out, double& secs) {
  StudyConfig cfg = StudyConfig::preset(id).reduced();
  cfg.seeds = {1, 2, 3, 4, 5};
  Rng orng(0, Stream::oracle);
  const ExpertData expert = simulate_expert(cfg.prior, cfg.model, cfg.plan, cfg.expert_samples, orng);
  const auto problem = cfg.problem(expert);
  const auto t0 = std::chrono::steady_clock::now();
  auto batch = run_replications(problem, cfg.seeds, cfg.train);
  secs = seconds_since(t0);
  for (const auto& f : batch.failures) std::cerr << id << " seed " << f.seed << " failed: " << f.message << '\n';

  if (!out.empty()) {
    save_expert(expert, out / id / "expert.json");
    for (auto& r : batch.results) {
      save_run(r, out / id / std::to_string(r.seed), {{"study", id}, {"config", cfg.to_json()}});
    }
  }

  const auto rows = comparison_table(batch.results, expert.statistics);
  std::vector<SeedSummary> out_rows;
  for (const auto& r : batch.results) {
    SeedSummary s;
    s.seed = r.seed;
    Rng erng(r.seed, Stream::evaluation);
    const Tensor theta = r.flow->sample(10000, erng).detach();
    const std::size_t k = theta.shape()[1];
    s.mean.assign(k, 0.0);
    s.sd.assign(k, 0.0);
    for (std::size_t i = 0; i < 10000; ++i)
      for (std::size_t j = 0; j < k; ++j) s.mean[j] += theta.at({i, j}) / 10000;
    for (std::size_t i = 0; i < 10000; ++i)
      for (std::size_t j = 0; j < k; ++j) s.sd[j] += std::pow(theta.at({i, j}) - s.mean[j], 2) / 10000;
    for (double& v : s.sd) v = std::sqrt(v);
    s.corr = pair_correlations(theta, cfg.model.parameter_names);
    s.max_quantile_err = max_relative_quantile_error(rows, r.seed, cfg.plan);
    const auto tot = r.trajectory.totals();
    s.loss0 = tot.front();
    s.lossN = tot.back();
    const std::size_t tenth = std::max<std::size_t>(1, tot.size() / 10);
    const double first = std::accumulate(tot.begin(), tot.begin() + static_cast<std::ptrdiff_t>(tenth), 0.0) / tenth;
    const double last = std::accumulate(tot.end() - static_cast<std::ptrdiff_t>(tenth), tot.end(), 0.0) / tenth;
    s.trend_down = last < first;
    out_rows.push_back(s);
  }
  return out_rows;
}

Outcome m1_recovery(const fs::path& out) {
  double secs = 0;
  const auto runs = desk_runs("M1", out, secs);
  std::size_t ok = 0;
  std::ostringstream os;
  for (const auto& s : runs) {
    const bool q = s.max_quantile_err <= 0.07;
    const bool c = std::abs(s.corr[0]) < 0.1;
    const bool m = std::abs(s.mean[0] - 0.1) <= 0.07 && std::abs(s.mean[1] + 0.1) <= 0.07;
    const bool d = std::abs(s.sd[0] - 0.1) <= 0.07 && std::abs(s.sd[1] - 0.3) <= 0.07;
    const bool seed_ok = q && c && m && d;
    ok += seed_ok;
    os << "\n    seed " << s.seed << (seed_ok ? " ok " : " bad") << ": max rel quantile err "
       << fmt("%.3f", s.max_quantile_err) << ", corr " << fmt("%+.3f", s.corr[0]) << ", mean ("
       << fmt("%+.3f", s.mean[0]) << ", " << fmt("%+.3f", s.mean[1]) << "), sd (" << fmt("%.3f", s.sd[0])
       << ", " << fmt("%.3f", s.sd[1]) << "), loss " << fmt("%.3f", s.loss0) << " -> " << fmt("%.3f", s.lossN)
       << " (" << fmt("%.1f", 100 * s.lossN / s.loss0) << "% of epoch 0, target < 10%)"
       << (s.trend_down ? "" : " (no downward trend)");
  }
  return {runs.size() == 5 && ok >= 4,
          std::to_string(ok) + "/5 seeds within tolerance, " + fmt("%.0f", secs) + " s" + os.str()};
}

Outcome m4_correlations(const fs::path& out) {
  double secs = 0;
  const auto runs = desk_runs("M4", out, secs);
  // row-major pairs: (0,1), (0,2), (0,3), (1,2), ...
  const double want[] = {0.3, -0.3, -0.2};
  const std::size_t idx[] = {0, 1, 3};
  std::size_t ok = 0;
  std::ostringstream os;
  for (const auto& s : runs) {
    bool seed_ok = true;
    os << "\n    seed " << s.seed << ":";
    for (std::size_t i = 0; i < 3; ++i) {
      seed_ok = seed_ok && std::abs(s.corr[idx[i]] - want[i]) <= 0.12;
      os << ' ' << fmt("%+.3f", s.corr[idx[i]]);
    }
    os << (seed_ok ? " ok" : " bad") << ", loss " << fmt("%.3f", s.loss0) << " -> " << fmt("%.3f", s.lossN)
       << (s.trend_down ? "" : " (no downward trend)");
    ok += seed_ok;
  }
  return {runs.size() == 5 && ok >= 4,
          std::to_string(ok) + "/5 seeds within 0.12 of (0.3, -0.3, -0.2), " + fmt("%.0f", secs) + " s" + os.str()};
}

// The 30-seed, 1500-epoch normal-model studies and the seed-to-seed
// variability patterns of the sigma priors are out of reach at desk scale.
// They are exercised here only as a smoke test of the full pipeline.
Outcome normal_smoke() {
  const fs::path dir = fs::temp_directory_path() / "elicit_acceptance_smoke";
  fs::remove_all(dir);
  std::ostringstream os;
  bool pass = true;
  for (const std::string id : {"M2", "M3", "M4"}) {
    StudyConfig cfg = StudyConfig::preset(id).reduced();
    cfg.train.epochs = 60;
    cfg.train.eval_samples = 2000;
    Rng orng(0, Stream::oracle);
    const auto problem = cfg.problem(simulate_expert(cfg.prior, cfg.model, cfg.plan, cfg.expert_samples, orng));
    auto batch = run_replications(problem, {1, 2}, cfg.train);
    pass = pass && batch.failures.empty();
    for (auto& r : batch.results) {
      const fs::path run = dir / id / std::to_string(r.seed);
      save_run(r, run);
      const ReplicationResult back = load_run(run);
      const auto tot = back.trajectory.totals();
      const double first = std::accumulate(tot.begin(), tot.begin() + 6, 0.0) / 6;
      const double last = std::accumulate(tot.end() - 6, tot.end(), 0.0) / 6;
      pass = pass && back.trajectory == r.trajectory && back.final_statistics.groups.size() == 5 && last < first;
      os << ' ' << id << '/' << r.seed << ' ' << fmt("%.3f", first) << "->" << fmt("%.3f", last);
    }
  }
  fs::remove_all(dir);
  return {pass, "not reproduced at desk scale: 30-seed 1500-epoch M2-M4 studies and sigma-prior variability;"
                " smoke (60 epochs, artifacts reloaded, loss trend):" + os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  bool fast = false;
  std::string out;
  app.add_flag("--fast", fast, "Skip the desk-scale M1 and M4 training criteria");
  app.add_option("--out", out, "Keep the desk-scale runs under this directory");
  CLI11_PARSE(app, argc, argv);

  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"flow invertibility", flow_invertibility},
      {"log-det correctness", log_det_correctness},
      {"gradient integrity", gradient_integrity},
      {"MMD suite", mmd_suite},
      {"model-averaging weights", averaging},
      {"oracle moments", oracle_moments},
  };
  if (!fast) {
    criteria.emplace_back("desk-scale M1 recovery", [&] { return m1_recovery(out); });
    criteria.emplace_back("desk-scale M4 correlation learning", [&] { return m4_correlations(out); });
  }
  criteria.emplace_back("convergence diagnostic", convergence_diagnostic);
  criteria.emplace_back("non-reproducible at desk scale (smoke)", normal_smoke);

  bool all = true;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  }
  if (fast) std::cout << "SKIP  desk-scale M1 recovery, desk-scale M4 correlation learning (--fast)" << std::endl;
  return all ? 0 : 1;
}
