#include "elicit/flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "elicit/errors.hpp"
#include "json.hpp"

namespace elicit {

using ad::Tensor;

namespace {

constexpr char kMagic[4] = {'E', 'F', 'L', 'W'};
constexpr std::uint32_t kVersion = 1;

std::vector<std::size_t> iota_range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v(hi - lo);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

std::vector<std::size_t> make_permutation(std::size_t dim, Rng& rng) {
  std::vector<std::size_t> perm = iota_range(0, dim);
  if (dim == 2) {
    std::swap(perm[0], perm[1]);
  } else {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
  }
  return perm;
}

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("truncated flow checkpoint");
  return value;
}

nlohmann::json config_to_json(const FlowConfig& c) {
  return {{"dim_theta", c.dim_theta},       {"num_blocks", c.num_blocks},
          {"hidden_units", c.hidden_units}, {"hidden_layers", c.hidden_layers},
          {"scale_clamp", c.scale_clamp},   {"positivity_dims", c.positivity_dims}};
}

FlowConfig config_from_json(const nlohmann::json& j) {
  FlowConfig c;
  c.dim_theta = j.at("dim_theta").get<std::size_t>();
  c.num_blocks = j.at("num_blocks").get<std::size_t>();
  c.hidden_units = j.at("hidden_units").get<std::size_t>();
  c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  c.scale_clamp = j.at("scale_clamp").get<double>();
  c.positivity_dims = j.at("positivity_dims").get<std::vector<std::size_t>>();
  return c;
}

}  // namespace

void FlowConfig::validate() const {
  if (dim_theta < 2) throw ConfigError("flow needs dim_theta >= 2 for coupling");
  if (num_blocks < 1) throw ConfigError("flow needs at least one coupling block");
  if (hidden_units < 1) throw ConfigError("flow needs hidden_units >= 1");
  if (!(scale_clamp > 0)) throw ConfigError("scale_clamp must be positive");
  for (std::size_t d : positivity_dims) {
    if (d >= dim_theta) throw ConfigError("positivity dim " + std::to_string(d) + " out of range");
  }
}

// ----------------------------------------------------------------- DenseNet

DenseNet::DenseNet(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out,
                   Rng& rng) {
  std::size_t fan_in = in;
  for (std::size_t l = 0; l < layers; ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> w(fan_in * hidden);
    for (double& v : w) v = rng.uniform(-limit, limit);
    weights_.push_back(Tensor::from({fan_in, hidden}, std::move(w), true));
    biases_.push_back(Tensor::zeros({hidden}, true));
    fan_in = hidden;
  }
  // Zero output layer: the block starts as the identity map.
  weights_.push_back(Tensor::zeros({fan_in, out}, true));
  biases_.push_back(Tensor::zeros({out}, true));
}

Tensor DenseNet::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = ad::dense(h, weights_[l], biases_[l], l + 1 < weights_.size());
  }
  return h;
}

std::vector<Tensor*> DenseNet::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const Tensor*> DenseNet::parameters() const {
  std::vector<const Tensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

// ------------------------------------------------------------ CouplingBlock

CouplingBlock::CouplingBlock(std::size_t dim, const FlowConfig& cfg,
                             std::vector<std::size_t> permutation, Rng& rng)
    : clamp_(cfg.scale_clamp),
      first_(iota_range(0, dim / 2)),
      second_(iota_range(dim / 2, dim)),
      permutation_(std::move(permutation)),
      inverse_permutation_(dim),
      norm_log_scale_(Tensor::zeros({dim}, true)),
      norm_bias_(Tensor::zeros({dim}, true)) {
  for (std::size_t j = 0; j < dim; ++j) inverse_permutation_[permutation_[j]] = j;
  const std::size_t a = first_.size();
  const std::size_t p = second_.size();
  scale_first_ = DenseNet(p, cfg.hidden_units, cfg.hidden_layers, a, rng);
  shift_first_ = DenseNet(p, cfg.hidden_units, cfg.hidden_layers, a, rng);
  scale_second_ = DenseNet(a, cfg.hidden_units, cfg.hidden_layers, p, rng);
  shift_second_ = DenseNet(a, cfg.hidden_units, cfg.hidden_layers, p, rng);
}

Tensor CouplingBlock::clamp_scale(const Tensor& raw) const {
  return (2.0 * clamp_ / std::numbers::pi) * ad::atan(raw / clamp_);
}

Tensor CouplingBlock::forward(const Tensor& x, Tensor& log_det) const {
  Tensor h = x * ad::exp(norm_log_scale_) + norm_bias_;
  log_det = log_det + ad::sum_all(norm_log_scale_);

  Tensor a = ad::take(h, 1, first_);
  Tensor p = ad::take(h, 1, second_);

  const Tensor s1 = clamp_scale(scale_first_(p));
  a = a * ad::exp(s1) + shift_first_(p);
  log_det = log_det + ad::sum(s1, 1);

  const Tensor s2 = clamp_scale(scale_second_(a));
  p = p * ad::exp(s2) + shift_second_(a);
  log_det = log_det + ad::sum(s2, 1);

  return ad::take(ad::concat({a, p}, 1), 1, permutation_);
}

Tensor CouplingBlock::inverse(const Tensor& y) const {
  const Tensor z = ad::take(y, 1, inverse_permutation_);
  Tensor a = ad::take(z, 1, first_);
  Tensor p = ad::take(z, 1, second_);

  p = (p - shift_second_(a)) * ad::exp(-clamp_scale(scale_second_(a)));
  a = (a - shift_first_(p)) * ad::exp(-clamp_scale(scale_first_(p)));

  return (ad::concat({a, p}, 1) - norm_bias_) * ad::exp(-norm_log_scale_);
}

std::vector<Tensor*> CouplingBlock::parameters() {
  std::vector<Tensor*> out{&norm_log_scale_, &norm_bias_};
  for (DenseNet* net : {&scale_first_, &shift_first_, &scale_second_, &shift_second_}) {
    auto p = net->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const Tensor*> CouplingBlock::parameters() const {
  std::vector<const Tensor*> out{&norm_log_scale_, &norm_bias_};
  for (const DenseNet* net : {&scale_first_, &shift_first_, &scale_second_, &shift_second_}) {
    auto p = net->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// ----------------------------------------------------------- JointPriorFlow

JointPriorFlow::JointPriorFlow(FlowConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed, Stream::flow_init);
  blocks_.reserve(cfg_.num_blocks);
  for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
    auto perm = make_permutation(cfg_.dim_theta, rng);
    blocks_.emplace_back(cfg_.dim_theta, cfg_, std::move(perm), rng);
  }
}

Tensor JointPriorFlow::generate(const Tensor& u) const {
  if (u.dim() != 2 || u.shape()[1] != cfg_.dim_theta) {
    throw ShapeError("flow input must be [N, " + std::to_string(cfg_.dim_theta) + "], got " +
                     ad::to_string(u.shape()));
  }
  Tensor x = u;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) x = it->inverse(x);
  if (!cfg_.positivity_dims.empty()) {
    std::vector<double> mask(cfg_.dim_theta, 0.0);
    for (std::size_t d : cfg_.positivity_dims) mask[d] = 1.0;
    const Tensor m = Tensor::vector(std::move(mask));
    x = x + m * (ad::softplus(x) - x);
  }
  return x;
}

Tensor JointPriorFlow::sample(std::size_t count, Rng& rng) const {
  const Tensor u = Tensor::from({count, cfg_.dim_theta}, rng.normals(count * cfg_.dim_theta));
  return generate(u);
}

JointPriorFlow::Normalized JointPriorFlow::forward_normalizing(const Tensor& theta) const {
  if (theta.dim() != 2 || theta.shape()[1] != cfg_.dim_theta) {
    throw ShapeError("theta must be [N, " + std::to_string(cfg_.dim_theta) + "], got " +
                     ad::to_string(theta.shape()));
  }
  const std::size_t n = theta.shape()[0];
  const std::size_t k = cfg_.dim_theta;
  Tensor x = theta;
  Tensor log_det = Tensor::zeros({n});
  if (!cfg_.positivity_dims.empty()) {
    std::vector<double> z(theta.values().begin(), theta.values().end());
    std::vector<double> ld(n, 0.0);
    for (std::size_t d : cfg_.positivity_dims) {
      for (std::size_t i = 0; i < n; ++i) {
        const double t = z[i * k + d];
        if (!(t > 0)) {
          throw DomainError("non-positive value " + std::to_string(t) + " on positivity dim " +
                                std::to_string(d),
                            0);
        }
        z[i * k + d] = t + std::log(-std::expm1(-t));  // inverse softplus
        ld[i] -= std::log(-std::expm1(-t));
      }
    }
    x = Tensor::from({n, k}, std::move(z));
    log_det = Tensor::vector(std::move(ld));
  }
  for (const CouplingBlock& b : blocks_) x = b.forward(x, log_det);
  return {x, log_det};
}

Tensor JointPriorFlow::log_prob(const Tensor& theta) const {
  auto [u, log_det] = forward_normalizing(theta);
  const double norm = 0.5 * static_cast<double>(cfg_.dim_theta) * std::log(2.0 * std::numbers::pi);
  return log_det - 0.5 * ad::sum(ad::square(u), 1) - norm;
}

std::vector<Tensor*> JointPriorFlow::parameters() {
  std::vector<Tensor*> out;
  for (CouplingBlock& b : blocks_) {
    auto p = b.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const Tensor*> JointPriorFlow::parameters() const {
  std::vector<const Tensor*> out;
  for (const CouplingBlock& b : blocks_) {
    auto p = b.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t JointPriorFlow::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

void JointPriorFlow::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["config"] = config_to_json(cfg_);
  header["parameter_count"] = parameter_count();
  nlohmann::json perms = nlohmann::json::array();
  for (const CouplingBlock& b : blocks_) perms.push_back(b.permutation());
  header["permutations"] = perms;
  nlohmann::json shapes = nlohmann::json::array();
  for (const Tensor* t : parameters()) shapes.push_back(t->shape());
  header["shapes"] = shapes;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, 4);
  write_le<std::uint32_t>(os, kVersion);
  write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Tensor* t : parameters()) {
    for (double v : t->values()) write_le<double>(os, v);
  }
}

JointPriorFlow JointPriorFlow::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a flow checkpoint: " + path.string());
  }
  if (read_le<std::uint32_t>(is) != kVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  }
  const auto len = read_le<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);

  JointPriorFlow flow(config_from_json(header.at("config")), 0);
  const auto perms = header.at("permutations").get<std::vector<std::vector<std::size_t>>>();
  if (perms.size() != flow.blocks_.size()) throw std::runtime_error("block count mismatch");
  for (std::size_t b = 0; b < perms.size(); ++b) {
    CouplingBlock& block = flow.blocks_[b];
    block.permutation_ = perms[b];
    for (std::size_t j = 0; j < perms[b].size(); ++j) block.inverse_permutation_[perms[b][j]] = j;
  }
  for (Tensor* t : flow.parameters()) {
    for (double& v : t->mutable_values()) v = read_le<double>(is);
  }
  return flow;
}

}  // namespace elicit
