#include "elicit/study.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "elicit/errors.hpp"
#include "toml.hpp"

namespace elicit {

using json = nlohmann::ordered_json;

namespace {

std::string_view kind_name(ModelKind k) {
  return k == ModelKind::binomial_regression ? "binomial_regression" : "normal_regression";
}

ModelKind kind_from_name(std::string_view s) {
  if (s == "binomial_regression") return ModelKind::binomial_regression;
  if (s == "normal_regression") return ModelKind::normal_regression;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

// ---- JSON <-> TOML ----

toml::array to_toml_array(const json& j);

toml::table to_toml_table(const json& j) {
  toml::table t;
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) {
      t.insert(k, to_toml_table(v));
    } else if (v.is_array()) {
      t.insert(k, to_toml_array(v));
    } else if (v.is_boolean()) {
      t.insert(k, v.get<bool>());
    } else if (v.is_number_integer()) {
      t.insert(k, v.get<std::int64_t>());
    } else if (v.is_number()) {
      t.insert(k, v.get<double>());
    } else if (v.is_string()) {
      t.insert(k, v.get<std::string>());
    } else {
      throw ConfigError("config value '" + k + "' has no TOML representation");
    }
  }
  return t;
}

toml::array to_toml_array(const json& j) {
  toml::array a;
  for (const auto& v : j) {
    if (v.is_object()) {
      a.push_back(to_toml_table(v));
    } else if (v.is_array()) {
      a.push_back(to_toml_array(v));
    } else if (v.is_boolean()) {
      a.push_back(v.get<bool>());
    } else if (v.is_number_integer()) {
      a.push_back(v.get<std::int64_t>());
    } else if (v.is_number()) {
      a.push_back(v.get<double>());
    } else if (v.is_string()) {
      a.push_back(v.get<std::string>());
    } else {
      throw ConfigError("config array value has no TOML representation");
    }
  }
  return a;
}

json from_toml_node(const toml::node& n);

json from_toml_table(const toml::table& t) {
  json j = json::object();
  for (const auto& [k, v] : t) j[std::string(k.str())] = from_toml_node(v);
  return j;
}

json from_toml_node(const toml::node& n) {
  if (const auto* t = n.as_table()) return from_toml_table(*t);
  if (const auto* a = n.as_array()) {
    json arr = json::array();
    for (const auto& e : *a) arr.push_back(from_toml_node(e));
    return arr;
  }
  if (const auto* v = n.as_integer()) return v->get();
  if (const auto* v = n.as_floating_point()) return v->get();
  if (const auto* v = n.as_boolean()) return v->get();
  if (const auto* v = n.as_string()) return v->get();
  throw ConfigError("unsupported TOML value type in config");
}

// Reads a field that may be stored as an integer or a float.
double number(const json& j, const char* key) { return j.at(key).get<double>(); }

}  // namespace

// --------------------------------------------------------------- presets

StudyConfig StudyConfig::preset(std::string_view id) {
  StudyConfig c;
  c.study = std::string(id);
  for (std::uint64_t s = 1; s <= 30; ++s) c.seeds.push_back(s);
  if (id == "M1") {
    c.model = GenerativeModel::binomial();
    c.prior.components = {NormalMarginal{0.1, 0.1}, NormalMarginal{-0.1, 0.3}};
    c.train.epochs = 600;
    c.train.learning_rate = 1e-4;
  } else if (id == "M2" || id == "M3" || id == "M4") {
    c.model = GenerativeModel::normal();
    if (id == "M2") {
      c.prior.components = {NormalMarginal{10.0, 2.5}, NormalMarginal{7.0, 1.3},
                            NormalMarginal{2.5, 0.8}, GammaMarginal{5.0, 2.0}};
      c.train.learning_rate = 2.5e-4;
    } else if (id == "M3") {
      c.prior.components = {NormalMarginal{10.0, 2.5}, SkewNormalMarginal{7.0, 1.3, 4.0},
                            SkewNormalMarginal{2.5, 0.8, 4.0}, GammaMarginal{5.0, 2.0}};
      c.train.learning_rate = 2.5e-4;
    } else {
      c.prior.components = {
          MvNormalBlock{{10.0, 7.0, 2.5},
                        {{1.0, 0.3, -0.3}, {0.3, 1.0, -0.2}, {-0.3, -0.2, 1.0}},
                        {2.5, 1.3, 0.8}},
          GammaMarginal{5.0, 2.0}};
      c.train.learning_rate = 1e-4;
    }
    c.train.epochs = 1500;
  } else {
    throw ConfigError("unknown study preset '" + std::string(id) + "' (expected M1..M4)");
  }
  c.train.temperature = StudyConfig::default_temperature;
  c.flow.dim_theta = c.model.dim();
  c.flow.positivity_dims = c.model.positivity_dims;
  c.plan = ElicitationPlan::standard(c.model.target_names());
  c.losses = default_loss_components(c.plan);
  c.output = std::filesystem::path("runs");
  return c;
}

StudyConfig StudyConfig::reduced() const {
  StudyConfig c = *this;
  c.flow.num_blocks = 2;
  c.flow.hidden_units = 64;
  c.train.batch_size = 32;
  c.train.samples_per_prior = 100;
  c.train.epochs = model.kind == ModelKind::binomial_regression ? 400 : 800;
  c.train.learning_rate = 5e-4;
  return c;
}

void StudyConfig::validate() const {
  prior.validate();
  model.validate();
  plan.validate();
  flow.validate();
  train.validate();
  if (prior.dim() != model.dim()) throw ConfigError("prior and model dimensions differ");
  if (flow.dim_theta != model.dim()) throw ConfigError("flow and model dimensions differ");
  if (flow.positivity_dims != model.positivity_dims) {
    throw ConfigError("flow positivity dims must match the model's");
  }
  for (const PlanEntry& e : plan.entries) {
    bool has = false;
    for (const auto& l : losses) has = has || l.name == e.target;
    if (!has) throw ConfigError("no loss component for plan target '" + e.target + "'");
  }
  if (expert_samples < 1000) throw ConfigError("expert_samples must be >= 1000");
  if (!(averaging_gamma >= 0)) throw ConfigError("averaging_gamma must be non-negative");
  if (slope_window < 2) throw ConfigError("slope_window must be >= 2");
}

TrainProblem StudyConfig::problem(const ExpertData& expert) const {
  return {model, plan, expert, flow, losses};
}

// ------------------------------------------------------------------ JSON

json StudyConfig::to_json() const {
  json j;
  j["study"] = study;
  j["prior"] = prior_to_json(prior);

  json design;
  design["x"] = model.design.x;
  design["x0"] = model.design.x0;
  design["x1"] = model.design.x1;
  json groups = json::array();
  for (const auto& g : model.design.groups) groups.push_back({g[0], g[1]});
  design["groups"] = groups;
  j["model"] = {{"kind", kind_name(model.kind)},
                {"parameter_names", model.parameter_names},
                {"positivity_dims", model.positivity_dims},
                {"total_count", model.total_count},
                {"design", design}};

  json plan_j = json::array();
  for (const PlanEntry& e : plan.entries) {
    plan_j.push_back(
        {{"target", e.target}, {"technique", std::string(to_string(e.technique))}, {"levels", e.levels}});
  }
  j["plan"] = plan_j;

  j["flow"] = {{"dim_theta", flow.dim_theta},         {"num_blocks", flow.num_blocks},
               {"hidden_units", flow.hidden_units},   {"hidden_layers", flow.hidden_layers},
               {"scale_clamp", flow.scale_clamp},     {"positivity_dims", flow.positivity_dims}};
  j["train"] = {{"batch_size", train.batch_size},
                {"samples_per_prior", train.samples_per_prior},
                {"epochs", train.epochs},
                {"learning_rate", train.learning_rate},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"epsilon", train.epsilon},
                {"temperature", train.temperature},
                {"clip_gradients", train.clip_gradients},
                {"clip_norm", train.clip_norm},
                {"eval_samples", train.eval_samples}};
  json losses_j = json::array();
  for (const auto& l : losses) {
    losses_j.push_back({{"name", l.name}, {"kind", std::string(to_string(l.kind))}, {"weight", l.weight}});
  }
  j["losses"] = losses_j;
  j["seeds"] = seeds;
  j["expert_samples"] = expert_samples;
  j["averaging_gamma"] = averaging_gamma;
  j["slope_window"] = slope_window;
  j["output"] = output.string();
  return j;
}

StudyConfig StudyConfig::from_json(const json& j) {
  StudyConfig c;
  try {
    c.study = j.at("study").get<std::string>();
    c.prior = prior_from_json(j.at("prior"));

    const json& m = j.at("model");
    c.model.kind = kind_from_name(m.at("kind").get<std::string>());
    c.model.parameter_names = m.at("parameter_names").get<std::vector<std::string>>();
    c.model.positivity_dims = m.at("positivity_dims").get<std::vector<std::size_t>>();
    c.model.total_count = m.at("total_count").get<int>();
    const json& d = m.at("design");
    c.model.design.x = d.at("x").get<std::vector<double>>();
    c.model.design.x0 = number(d, "x0");
    c.model.design.x1 = number(d, "x1");
    for (const auto& g : d.at("groups")) c.model.design.groups.push_back({g.at(0).get<double>(), g.at(1).get<double>()});

    for (const auto& e : j.at("plan")) {
      c.plan.entries.push_back({e.at("target").get<std::string>(),
                                technique_from_string(e.at("technique").get<std::string>()),
                                e.at("levels").get<std::vector<double>>()});
    }

    const json& f = j.at("flow");
    c.flow.dim_theta = f.at("dim_theta").get<std::size_t>();
    c.flow.num_blocks = f.at("num_blocks").get<std::size_t>();
    c.flow.hidden_units = f.at("hidden_units").get<std::size_t>();
    c.flow.hidden_layers = f.at("hidden_layers").get<std::size_t>();
    c.flow.scale_clamp = number(f, "scale_clamp");
    c.flow.positivity_dims = f.at("positivity_dims").get<std::vector<std::size_t>>();

    const json& t = j.at("train");
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.samples_per_prior = t.at("samples_per_prior").get<std::size_t>();
    c.train.epochs = t.at("epochs").get<std::size_t>();
    c.train.learning_rate = number(t, "learning_rate");
    c.train.beta1 = number(t, "beta1");
    c.train.beta2 = number(t, "beta2");
    c.train.epsilon = number(t, "epsilon");
    c.train.temperature = number(t, "temperature");
    c.train.clip_gradients = t.at("clip_gradients").get<bool>();
    c.train.clip_norm = number(t, "clip_norm");
    c.train.eval_samples = t.at("eval_samples").get<std::size_t>();

    for (const auto& l : j.at("losses")) {
      c.losses.push_back({l.at("name").get<std::string>(),
                          loss_kind_from_string(l.at("kind").get<std::string>()), number(l, "weight")});
    }
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.expert_samples = j.at("expert_samples").get<std::size_t>();
    c.averaging_gamma = number(j, "averaging_gamma");
    c.slope_window = j.at("slope_window").get<std::size_t>();
    c.output = j.at("output").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed study config: ") + e.what());
  }
  return c;
}

std::string StudyConfig::to_toml() const {
  std::ostringstream os;
  os << to_toml_table(to_json()) << '\n';
  return os.str();
}

StudyConfig StudyConfig::from_toml(std::string_view text) {
  try {
    return from_json(from_toml_table(toml::parse(text)));
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("TOML parse error: ") + std::string(e.description()));
  }
}

StudyConfig StudyConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  if (path.extension() == ".json") return from_json(json::parse(buf.str()));
  if (path.extension() == ".toml") return from_toml(buf.str());
  throw ConfigError("config must be .toml or .json: " + path.string());
}

std::string config_hash(const StudyConfig& cfg) {
  const std::string text = cfg.to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  auto parse_one = [](std::string_view s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
      throw ConfigError("bad seed '" + std::string(s) + "'");
    }
    return v;
  };
  std::vector<std::uint64_t> out;
  if (const auto dots = text.find(".."); dots != std::string_view::npos) {
    const std::uint64_t lo = parse_one(text.substr(0, dots));
    const std::uint64_t hi = parse_one(text.substr(dots + 2));
    if (hi < lo) throw ConfigError("empty seed range '" + std::string(text) + "'");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::size_t end = comma == std::string_view::npos ? text.size() : comma;
    out.push_back(parse_one(text.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace elicit
