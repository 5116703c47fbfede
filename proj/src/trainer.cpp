#include "elicit/trainer.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "elicit/errors.hpp"

namespace elicit {

using ad::Tensor;

namespace {

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    // from_chars rejects "nan"/"inf" spellings from other writers.
    if (s == "nan" || s == "-nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    throw std::runtime_error("bad number '" + s + "' in trajectory csv");
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

bool all_finite(const LossReport& r) {
  if (!std::isfinite(r.total)) return false;
  for (double c : r.components) {
    if (!std::isfinite(c)) return false;
  }
  return true;
}

void marginal_moments(const Tensor& theta, std::vector<double>& means, std::vector<double>& sds) {
  const std::size_t b = theta.shape()[0];
  const std::size_t s = theta.shape()[1];
  const std::size_t k = theta.shape()[2];
  const auto v = theta.values();
  means.assign(k, 0.0);
  sds.assign(k, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      double m = 0;
      for (std::size_t i = 0; i < s; ++i) m += v[(r * s + i) * k + j];
      m /= static_cast<double>(s);
      double var = 0;
      for (std::size_t i = 0; i < s; ++i) {
        const double d = v[(r * s + i) * k + j] - m;
        var += d * d;
      }
      means[j] += m / static_cast<double>(b);
      sds[j] += std::sqrt(var / static_cast<double>(s)) / static_cast<double>(b);
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (samples_per_prior < 2) throw ConfigError("samples_per_prior must be at least 2");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("Adam moment constants must lie in [0, 1)");
  }
  if (!(epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
  if (!(temperature > 0)) throw ConfigError("Gumbel-softmax temperature must be positive");
  if (eval_samples < 2) throw ConfigError("eval_samples must be at least 2");
}

// -------------------------------------------------------------------- Adam

Adam::Adam(std::vector<Tensor*> params, double learning_rate, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)), lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {
  for (const Tensor* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

double Adam::grad_norm() const {
  double s = 0;
  for (const Tensor* p : params_) {
    for (double g : p->grad()) s += g * g;
  }
  return std::sqrt(s);
}

void Adam::scale_grads(double factor) {
  for (Tensor* p : params_) {
    if (!p->has_grad()) continue;
    auto& g = p->node()->grad;
    for (double& x : g) x *= factor;
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor* p = params_[i];
    if (!p->has_grad()) continue;
    const auto g = p->grad();
    auto w = p->mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

// -------------------------------------------------------------- trajectory

std::vector<double> TrainingTrajectory::totals() const {
  std::vector<double> out;
  for (const EpochRecord& e : epochs) out.push_back(e.total);
  return out;
}

void TrainingTrajectory::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "epoch,loss_total";
  for (const auto& c : component_names) os << ",loss_" << c;
  for (const auto& p : parameter_names) os << ",mean_" << p;
  for (const auto& p : parameter_names) os << ",sd_" << p;
  os << '\n';
  for (const EpochRecord& e : epochs) {
    os << e.epoch << ',' << format_double(e.total);
    for (double c : e.components) os << ',' << format_double(c);
    for (double m : e.means) os << ',' << format_double(m);
    for (double s : e.sds) os << ',' << format_double(s);
    os << '\n';
  }
}

TrainingTrajectory TrainingTrajectory::read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty trajectory " + path.string());
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "epoch" || header[1] != "loss_total") {
    throw std::runtime_error("unexpected trajectory header in " + path.string());
  }
  TrainingTrajectory t;
  for (std::size_t i = 2; i < header.size(); ++i) {
    const std::string& h = header[i];
    if (h.starts_with("loss_")) {
      t.component_names.push_back(h.substr(5));
    } else if (h.starts_with("mean_")) {
      t.parameter_names.push_back(h.substr(5));
    }
  }
  const std::size_t nc = t.component_names.size();
  const std::size_t np = t.parameter_names.size();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2 + nc + 2 * np) {
      throw std::runtime_error("ragged trajectory row in " + path.string());
    }
    EpochRecord e;
    e.epoch = std::stoul(cells[0]);
    e.total = parse_double(cells[1]);
    for (std::size_t i = 0; i < nc; ++i) e.components.push_back(parse_double(cells[2 + i]));
    for (std::size_t i = 0; i < np; ++i) e.means.push_back(parse_double(cells[2 + nc + i]));
    for (std::size_t i = 0; i < np; ++i) e.sds.push_back(parse_double(cells[2 + nc + np + i]));
    t.epochs.push_back(std::move(e));
  }
  return t;
}

bool TrainingTrajectory::operator==(const TrainingTrajectory& o) const {
  if (component_names != o.component_names || parameter_names != o.parameter_names ||
      epochs.size() != o.epochs.size()) {
    return false;
  }
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = o.epochs[i];
    if (a.epoch != b.epoch || a.total != b.total || a.components != b.components ||
        a.means != b.means || a.sds != b.sds) {
      return false;
    }
  }
  return true;
}

// --------------------------------------------------------------- training

DivergenceError::DivergenceError(std::size_t epoch, std::optional<LossReport> last_finite)
    : std::runtime_error("loss became non-finite at epoch " + std::to_string(epoch) +
                         "; consider a smaller learning rate"),
      epoch_(epoch),
      last_(std::move(last_finite)) {}

TotalLoss training_objective(const JointPriorFlow& flow, const TrainProblem& problem,
                             std::size_t batch_size, std::size_t samples_per_prior,
                             double temperature, Rng& rng, Tensor* theta_out) {
  const std::size_t k = problem.model.dim();
  const Tensor draws = flow.sample(batch_size * samples_per_prior, rng);
  const Tensor theta = ad::reshape(draws, {batch_size, samples_per_prior, k});
  if (theta_out != nullptr) *theta_out = theta;
  const auto targets =
      simulate_targets(problem.model, theta, {SamplingMode::relaxed, temperature}, rng);
  const auto stats = build_statistics(targets, problem.plan, Side::model);
  return evaluate_loss(stats, problem.expert.statistics, problem.losses);
}

ReplicationResult train(std::shared_ptr<JointPriorFlow> flow, const TrainProblem& problem,
                        const TrainConfig& cfg) {
  cfg.validate();
  problem.model.validate();
  problem.plan.validate();
  check_expert_matches_plan(problem.expert.statistics, problem.plan);
  if (flow->config().dim_theta != problem.model.dim()) {
    throw ConfigError("flow dimension does not match the model");
  }

  Rng rng(cfg.seed, Stream::training);
  Adam adam(flow->parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

  ReplicationResult result;
  result.seed = cfg.seed;
  result.trajectory.parameter_names = problem.model.parameter_names;
  for (const PlanEntry& e : problem.plan.entries) result.trajectory.component_names.push_back(e.target);

  std::optional<LossReport> last_finite;
  const std::size_t steps = std::max<std::size_t>(cfg.epochs, 1);
  for (std::size_t epoch = 0; epoch < steps; ++epoch) {
    adam.zero_grad();
    Tensor theta;
    TotalLoss loss = training_objective(*flow, problem, cfg.batch_size, cfg.samples_per_prior,
                                        cfg.temperature, rng, &theta);
    if (!all_finite(loss.report)) throw DivergenceError(epoch, last_finite);
    last_finite = loss.report;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.total = loss.report.total;
    rec.components = loss.report.components;
    marginal_moments(theta, rec.means, rec.sds);
    result.trajectory.epochs.push_back(std::move(rec));

    if (cfg.epochs == 0) break;
    loss.total.backward();
    if (cfg.clip_gradients) {
      const double norm = adam.grad_norm();
      if (norm > cfg.clip_norm) adam.scale_grads(cfg.clip_norm / norm);
    }
    adam.step();
  }

  Rng eval_rng(cfg.seed, Stream::evaluation);
  const Tensor theta = flow->sample(cfg.eval_samples, eval_rng).detach();
  result.final_statistics = forward_statistics(theta, problem.model, problem.plan, eval_rng);
  result.final_statistics.side = Side::model;
  result.final_loss = result.trajectory.epochs.back().total;
  result.flow = std::move(flow);
  return result;
}

ReplicationBatch run_replications(const TrainProblem& problem,
                                  const std::vector<std::uint64_t>& seeds, const TrainConfig& cfg,
                                  std::size_t threads) {
  ReplicationBatch batch;
  std::set<std::uint64_t> seen;
  for (std::uint64_t s : seeds) {
    if (!seen.insert(s).second) {
      batch.warnings.push_back("seed " + std::to_string(s) +
                               " listed more than once; its runs are identical");
    }
  }

  std::vector<std::optional<ReplicationResult>> slots(seeds.size());
  std::vector<std::optional<std::string>> errors(seeds.size());
  std::vector<char> diverged(seeds.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = seeds[i];
        auto flow = std::make_shared<JointPriorFlow>(problem.flow, seeds[i]);
        slots[i] = train(std::move(flow), problem, run_cfg);
      } catch (const DivergenceError& e) {
        errors[i] = e.what();
        diverged[i] = 1;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(seeds.size(), 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (slots[i]) {
      batch.results.push_back(std::move(*slots[i]));
    } else {
      batch.failures.push_back({seeds[i], errors[i].value_or("unknown failure"), diverged[i] != 0});
      batch.warnings.push_back("seed " + std::to_string(seeds[i]) + " failed: " +
                               errors[i].value_or("unknown failure"));
    }
  }
  return batch;
}

}  // namespace elicit
